//! Parameter table of the network.
//!
//! Channel counts are the full-width values; [`ModelConfig::ch`] scales them.
//! The table must list exactly the parameters the forward pass reads, which
//! `tests::table_matches_forward` checks for every head combination.

use super::config::{ModelConfig, Module};

/// (output channels, conv count) of the five VGG-16 blocks.
pub const ENCODER_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
/// Output channels of decoder blocks d5, d4, d3, d2.
pub const DECODER_CHANNELS: [usize; 4] = [512, 256, 128, 128];
pub const DECODER_BLOCKS: [&str; 4] = ["d5", "d4", "d3", "d2"];
pub const TD_FEATURES: usize = 128;
pub const BU_FEATURES: usize = 256;
pub const AUX_BRANCH: usize = 64;
pub const AUX_FEATURES: usize = 128;
pub const RRM_BLOCKS: usize = 2;
/// Kernel (and stride) of the learned 2× upsampling after d2.
pub const DECONV_KERNEL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel with the given fan-in (kh·kw·in).
    Kernel { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are state, not trainable weights.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Classifies a parameter by its name suffix.
    pub fn of(name: &str) -> ParamKind {
        match name.rsplit('.').next() {
            Some("w") => ParamKind::Kernel { fan_in: 0 },
            Some("gamma") => ParamKind::Gamma,
            Some("beta") => ParamKind::Beta,
            Some("running_mean") => ParamKind::RunningMean,
            Some("running_var") => ParamKind::RunningVar,
            _ => ParamKind::Bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn module(&self) -> Module {
        Module::of(&self.name).expect("table names carry a module prefix")
    }
}

struct Table(Vec<ParamSpec>);

impl Table {
    fn kernel(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.w"),
            dims: vec![k, k, cin, cout],
            kind: ParamKind::Kernel { fan_in: k * k * cin },
        });
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        self.kernel(name, k, cin, cout);
        self.0.push(ParamSpec {
            name: format!("{name}.b"),
            dims: vec![cout],
            kind: ParamKind::Bias,
        });
    }

    fn batchnorm(&mut self, name: &str, c: usize) {
        for (suffix, kind) in [
            ("gamma", ParamKind::Gamma),
            ("beta", ParamKind::Beta),
            ("running_mean", ParamKind::RunningMean),
            ("running_var", ParamKind::RunningVar),
        ] {
            self.0.push(ParamSpec {
                name: format!("{name}.{suffix}"),
                dims: vec![c],
                kind,
            });
        }
    }
}

/// Every parameter of the enabled sub-networks, in forward order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut t = Table(Vec::new());
    let ch = |c| cfg.ch(c);

    let mut cin = 3;
    let mut block_out = [0; 5];
    for (b, &(c, convs)) in ENCODER_BLOCKS.iter().enumerate() {
        for i in 1..=convs {
            t.conv(&format!("e{}.conv{i}", b + 1), 3, cin, ch(c));
            cin = ch(c);
        }
        block_out[b] = ch(c);
    }

    if cfg.enable_td {
        let mut prev = block_out[4];
        for (i, blk) in DECODER_BLOCKS.iter().enumerate() {
            let skip = block_out[3 - i];
            let out = ch(DECODER_CHANNELS[i]);
            t.conv(&format!("{blk}.conv1"), 3, prev + skip, out);
            t.conv(&format!("{blk}.conv2"), 3, out, out);
            prev = out;
        }
        t.kernel("td.deconv", DECONV_KERNEL, prev, ch(TD_FEATURES));
        t.conv("td.conv", 3, ch(TD_FEATURES), ch(TD_FEATURES));
        t.conv("td.head", 1, ch(TD_FEATURES), 1);
    }

    if cfg.enable_rrm {
        let c = ch(TD_FEATURES);
        for i in 1..=RRM_BLOCKS {
            t.conv(&format!("rrm.block{i}.conv"), 3, c, c);
            t.batchnorm(&format!("rrm.block{i}.bn"), c);
        }
        t.conv("rrm.conv", 3, c, c);
    }

    if cfg.enable_bu {
        t.conv("bu.conv1", 3, block_out[3] + ch(512), ch(BU_FEATURES));
        t.conv("bu.conv2", 3, ch(BU_FEATURES), ch(BU_FEATURES));
        t.conv("bu.head", 1, ch(BU_FEATURES), 1);
    }

    if cfg.enable_aux {
        t.conv("aux.conv22", 3, ch(128), ch(AUX_BRANCH));
        t.conv("aux.conv33", 3, ch(256), ch(AUX_BRANCH));
        t.conv("aux.conv", 3, 2 * ch(AUX_BRANCH), ch(AUX_FEATURES));
        t.conv("aux.head", 1, ch(AUX_FEATURES), 1);
    }
    t.0
}
