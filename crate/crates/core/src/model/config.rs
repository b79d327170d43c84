use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channel multiplier in `(0, 1]`, kept as an exact fraction so scaled
/// channel counts do not depend on float rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WidthScale {
    num: u32,
    den: u32,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl WidthScale {
    pub const FULL: WidthScale = WidthScale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Config(format!("width scale {num}/{den} must lie in (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(WidthScale {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `max(1, ceil(channels · scale))`
    pub fn apply(&self, channels: usize) -> usize {
        let scaled = (channels * self.num as usize).div_ceil(self.den as usize);
        scaled.max(1)
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthScale {
    type Err = Error;

    /// Accepts `a/b` fractions or decimals such as `0.125`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse width scale `{s}`"));
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse().map_err(|_| bad())?;
            let b = b.trim().parse().map_err(|_| bad())?;
            return WidthScale::new(a, b);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 6 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u32.pow(frac.len() as u32);
        let int: u32 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u32 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        WidthScale::new(int * den + frac_v, den)
    }
}

/// Network geometry and the ablation switches for the four heads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Side of the square input in pixels.
    pub input_size: usize,
    pub width_scale: WidthScale,
    pub enable_aux: bool,
    pub enable_bu: bool,
    pub enable_td: bool,
    /// Requires `enable_td`: refinement consumes the top-down features.
    pub enable_rrm: bool,
    /// Whether the encoder and top-down weights came from a pre-training run.
    pub pretrained: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 256,
            width_scale: WidthScale::FULL,
            enable_aux: true,
            enable_bu: true,
            enable_td: true,
            enable_rrm: true,
            pretrained: false,
        }
    }
}

impl ModelConfig {
    /// 64-pixel input at 1/8 width: trains in seconds on a CPU.
    pub fn toy() -> Self {
        ModelConfig {
            input_size: 64,
            width_scale: WidthScale { num: 1, den: 8 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if !(self.enable_aux || self.enable_bu || self.enable_td) {
            return Err(Error::Config("at least one output head must be enabled".into()));
        }
        if self.enable_rrm && !self.enable_td {
            return Err(Error::Config("enable_rrm requires enable_td".into()));
        }
        Ok(())
    }

    /// Scaled channel count.
    pub fn ch(&self, full: usize) -> usize {
        self.width_scale.apply(full)
    }

    /// Configuration of the pre-training stage: encoder and top-down only.
    pub fn pretrain_view(&self) -> Self {
        ModelConfig {
            enable_aux: false,
            enable_bu: false,
            enable_td: true,
            enable_rrm: false,
            ..self.clone()
        }
    }

    pub fn module_enabled(&self, module: Module) -> bool {
        match module {
            Module::Encoder => true,
            Module::TopDown => self.enable_td,
            Module::Refinement => self.enable_rrm,
            Module::BottomUp => self.enable_bu,
            Module::Auxiliary => self.enable_aux,
        }
    }
}

/// Sub-network a parameter belongs to, derived from its name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Module {
    Encoder,
    TopDown,
    Refinement,
    BottomUp,
    Auxiliary,
}

impl Module {
    pub fn of(name: &str) -> Option<Module> {
        let head = name.split('.').next()?;
        match head {
            "e1" | "e2" | "e3" | "e4" | "e5" => Some(Module::Encoder),
            "d5" | "d4" | "d3" | "d2" | "td" => Some(Module::TopDown),
            "rrm" => Some(Module::Refinement),
            "bu" => Some(Module::BottomUp),
            "aux" => Some(Module::Auxiliary),
            _ => None,
        }
    }
}
