//! The network, written once against [`Backend`].

use super::arch::{DECODER_BLOCKS, DECONV_KERNEL, RRM_BLOCKS};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Backend, ConvSpec};

/// Encoder block outputs plus the named intermediates the attention
/// modules read.
#[derive(Clone, Copy, Debug)]
pub struct EncoderTaps<V> {
    /// Pooled outputs of blocks e1..e5.
    pub blocks: [V; 5],
    pub conv22: V,
    pub conv33: V,
    pub pool4: V,
    pub conv53: V,
}

/// Outputs of the enabled heads. Disabled heads are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs<V> {
    pub y_aux: Option<V>,
    pub y_bu: Option<V>,
    pub y_td: Option<V>,
    pub y_tdr: Option<V>,
    /// Coarse top-down features ahead of the sigmoid head.
    pub s_td: Option<V>,
}

impl<V> HeadOutputs<V> {
    pub fn empty() -> Self {
        HeadOutputs {
            y_aux: None,
            y_bu: None,
            y_td: None,
            y_tdr: None,
            s_td: None,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(V) -> U) -> HeadOutputs<U> {
        HeadOutputs {
            y_aux: self.y_aux.map(&mut f),
            y_bu: self.y_bu.map(&mut f),
            y_td: self.y_td.map(&mut f),
            y_tdr: self.y_tdr.map(&mut f),
            s_td: self.s_td.map(&mut f),
        }
    }

    pub fn present_heads(&self) -> usize {
        [&self.y_aux, &self.y_bu, &self.y_td, &self.y_tdr].iter().filter(|h| h.is_some()).count()
    }
}

/// Convolution named `name` (`.w`, `.b`) with geometry read off the kernel:
/// stride 1, same padding.
fn conv<B: Backend>(b: &mut B, x: B::Value, name: &str) -> Result<B::Value> {
    let w = b.param(&format!("{name}.w"))?;
    let bias = b.param(&format!("{name}.b"))?;
    let dims = b.shape_of(w);
    let d = dims.dims();
    if d.len() != 4 || d[0] != d[1] {
        return Err(Error::InvalidShape {
            op: "conv2d",
            msg: format!("{name}.w must be a square kernel, got {dims}"),
        });
    }
    b.conv2d(x, w, Some(bias), &ConvSpec::same(d[0], d[2], d[3]))
}

fn conv_relu<B: Backend>(b: &mut B, x: B::Value, name: &str) -> Result<B::Value> {
    let y = conv(b, x, name)?;
    b.relu(y)
}

fn head<B: Backend>(b: &mut B, features: B::Value, name: &str) -> Result<B::Value> {
    let logits = conv(b, features, name)?;
    b.sigmoid(logits)
}

/// Five VGG-16 blocks of 3×3 conv + ReLU (2, 2, 3, 3, 3 convs), each
/// followed by a 2×2 max-pool.
pub fn encoder_forward<B: Backend>(b: &mut B, cfg: &ModelConfig, x: B::Value) -> Result<EncoderTaps<B::Value>> {
    let shape = b.shape_of(x);
    let (_, h, w, c) = shape.nhwc_dims("encoder")?;
    if h != cfg.input_size || w != cfg.input_size || c != 3 {
        return Err(Error::InvalidShape {
            op: "encoder",
            msg: format!(
                "expected N x {s} x {s} x 3 input, got {shape}",
                s = cfg.input_size
            ),
        });
    }
    let mut h = x;
    let mut blocks = Vec::with_capacity(5);
    let mut last_convs = Vec::with_capacity(5);
    for (i, &(_, convs)) in super::arch::ENCODER_BLOCKS.iter().enumerate() {
        let blk = format!("e{}", i + 1);
        for j in 1..=convs {
            h = conv_relu(b, h, &format!("{blk}.conv{j}"))?;
        }
        b.tap(&format!("{blk}.conv{convs}"), h);
        last_convs.push(h);
        h = b.maxpool2d(h, 2, 2)?;
        b.tap(&blk, h);
        blocks.push(h);
    }
    Ok(EncoderTaps {
        blocks: [blocks[0], blocks[1], blocks[2], blocks[3], blocks[4]],
        conv22: last_convs[1],
        conv33: last_convs[2],
        pool4: blocks[3],
        conv53: last_convs[4],
    })
}

/// Top-down decoder d5→d2 with skip concatenation from e4..e1, a learned
/// 2× transposed convolution and a final conv producing the coarse
/// features. Returns `(s_td, y_td)`.
pub fn sam_td_forward<B: Backend>(b: &mut B, taps: &EncoderTaps<B::Value>) -> Result<(B::Value, B::Value)> {
    let skips = [taps.blocks[3], taps.blocks[2], taps.blocks[1], taps.blocks[0]];
    let mut h = taps.blocks[4];
    for (blk, skip) in DECODER_BLOCKS.iter().zip(skips) {
        let up = b.upsample(h, 2)?;
        let cat = b.concat_channels(&[up, skip])?;
        b.tap(&format!("{blk}.in"), cat);
        h = conv_relu(b, cat, &format!("{blk}.conv1"))?;
        h = conv_relu(b, h, &format!("{blk}.conv2"))?;
        b.tap(blk, h);
    }
    let w = b.param("td.deconv.w")?;
    let dims = b.shape_of(w);
    let d = dims.dims();
    let up = b.deconv2d(h, w, &ConvSpec::strided(DECONV_KERNEL, DECONV_KERNEL, d[2], d[3]))?;
    let up = b.relu(up)?;
    b.tap("td.deconv", up);
    let s_td = conv(b, up, "td.conv")?;
    b.tap("s_td", s_td);
    let y_td = head(b, s_td, "td.head")?;
    b.tap("y_td", y_td);
    Ok((s_td, y_td))
}

/// Residual refinement: two conv→BN→ReLU blocks with identity skips, then
/// a conv whose output is added to `s_td`. The refined features share the
/// top-down sigmoid head.
pub fn rrm_forward<B: Backend>(b: &mut B, s_td: B::Value) -> Result<B::Value> {
    let mut h = s_td;
    for i in 1..=RRM_BLOCKS {
        let c = conv(b, h, &format!("rrm.block{i}.conv"))?;
        let n = b.batchnorm(c, &format!("rrm.block{i}.bn"))?;
        let r = b.relu(n)?;
        h = b.add(h, r)?;
    }
    let residual = conv(b, h, "rrm.conv")?;
    let s_tdr = b.add(s_td, residual)?;
    b.tap("s_tdr", s_tdr);
    let y = head(b, s_tdr, "td.head")?;
    b.tap("y_tdr", y);
    Ok(y)
}

/// Bottom-up head from the deepest encoder features: concat(Pool4, Conv53),
/// 4× bilinear, two conv+ReLU, 4× bilinear, 1×1 conv, sigmoid.
pub fn sam_bu_forward<B: Backend>(b: &mut B, taps: &EncoderTaps<B::Value>) -> Result<B::Value> {
    let cat = b.concat_channels(&[taps.pool4, taps.conv53])?;
    b.tap("bu.in", cat);
    let up = b.upsample(cat, 4)?;
    let h = conv_relu(b, up, "bu.conv1")?;
    let h = conv_relu(b, h, "bu.conv2")?;
    b.tap("bu.mid", h);
    let s_bu = b.upsample(h, 4)?;
    b.tap("s_bu", s_bu);
    let y = head(b, s_bu, "bu.head")?;
    b.tap("y_bu", y);
    Ok(y)
}

/// Auxiliary head over Conv22 and Conv33: conv+ReLU per branch, 2× / 4×
/// bilinear to full resolution, concat, conv, sigmoid head.
pub fn sam_aux_forward<B: Backend>(b: &mut B, taps: &EncoderTaps<B::Value>) -> Result<B::Value> {
    let a = conv_relu(b, taps.conv22, "aux.conv22")?;
    let a = b.upsample(a, 2)?;
    let c = conv_relu(b, taps.conv33, "aux.conv33")?;
    let c = b.upsample(c, 4)?;
    let cat = b.concat_channels(&[a, c])?;
    let s_aux = conv(b, cat, "aux.conv")?;
    b.tap("s_aux", s_aux);
    let y = head(b, s_aux, "aux.head")?;
    b.tap("y_aux", y);
    Ok(y)
}

/// Runs the encoder once and every enabled head on the shared taps.
pub fn forward_heads<B: Backend>(b: &mut B, cfg: &ModelConfig, x: B::Value) -> Result<HeadOutputs<B::Value>> {
    cfg.validate()?;
    let taps = encoder_forward(b, cfg, x)?;
    let mut out = HeadOutputs::empty();
    if cfg.enable_td {
        let (s_td, y_td) = sam_td_forward(b, &taps)?;
        out.s_td = Some(s_td);
        out.y_td = Some(y_td);
        if cfg.enable_rrm {
            out.y_tdr = Some(rrm_forward(b, s_td)?);
        }
    }
    if cfg.enable_bu {
        out.y_bu = Some(sam_bu_forward(b, &taps)?);
    }
    if cfg.enable_aux {
        out.y_aux = Some(sam_aux_forward(b, &taps)?);
    }
    Ok(out)
}
