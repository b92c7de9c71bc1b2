use std::fmt;
use std::str::FromStr;

use lpca_tensor::layers::{PoolKind, UpsampleMode};

use crate::{Error, Result};

pub const STAGES: usize = 4;

/// Channel-width preset for the RGB backbone (and default depth widths).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Tiny,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Tiny => "tiny",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected paper or tiny)"))),
        }
    }
}

/// One inverted-residual group: expansion t, output channels c, repeats n,
/// stride of the first block s.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGroup {
    pub expand: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
}

const fn g(expand: usize, channels: usize, repeats: usize, stride: usize) -> BlockGroup {
    BlockGroup {
        expand,
        channels,
        repeats,
        stride,
    }
}

/// Backbone layout: stem width, block groups, and the index of the group
/// after which each of the four stage features is tapped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneLayout {
    pub stem: usize,
    pub groups: Vec<BlockGroup>,
    pub taps: [usize; STAGES],
}

impl BackboneLayout {
    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            // MobileNetV2 up to its last bottleneck (strides 4/8/16/32 at 24/32/96/320).
            Preset::Paper => BackboneLayout {
                stem: 32,
                groups: vec![
                    g(1, 16, 1, 1),
                    g(6, 24, 2, 2),
                    g(6, 32, 3, 2),
                    g(6, 64, 4, 2),
                    g(6, 96, 3, 1),
                    g(6, 160, 3, 2),
                    g(6, 320, 1, 1),
                ],
                taps: [1, 2, 4, 6],
            },
            Preset::Tiny => BackboneLayout {
                stem: 8,
                groups: vec![g(1, 8, 1, 1), g(4, 8, 1, 2), g(4, 16, 1, 2), g(4, 32, 1, 2), g(4, 64, 1, 2)],
                taps: [1, 2, 3, 4],
            },
        }
    }

    pub fn stage_channels(&self) -> [usize; STAGES] {
        self.taps.map(|t| self.groups[t].channels)
    }
}

/// Every architectural knob of the network. All ablations are expressed as
/// edits of this struct (see [`Ablation`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_hw: (usize, usize),
    pub preset: Preset,
    pub depth_channels: [usize; STAGES],
    pub num_heads: usize,
    pub use_cam: bool,
    pub sfe_stage_mask: [bool; STAGES],
    pub upsample_mode: UpsampleMode,
    pub pool_kind: PoolKind,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            input_hw: (320, 320),
            preset: Preset::Paper,
            depth_channels: [64, 128, 256, 512],
            num_heads: 4,
            use_cam: true,
            sfe_stage_mask: [true, true, true, false],
            upsample_mode: UpsampleMode::PixelShuffle,
            pool_kind: PoolKind::Max,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn tiny() -> Self {
        ModelConfig {
            input_hw: (64, 64),
            preset: Preset::Tiny,
            depth_channels: [16, 32, 64, 128],
            ..Self::paper()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Tiny => Self::tiny(),
        }
    }

    pub fn backbone(&self) -> BackboneLayout {
        BackboneLayout::for_preset(self.preset)
    }

    pub fn rgb_channels(&self) -> [usize; STAGES] {
        self.backbone().stage_channels()
    }

    /// Attention width per stage; tied to the depth widths.
    pub fn cam_channels(&self) -> [usize; STAGES] {
        self.depth_channels
    }

    pub fn head_dim(&self, stage: usize) -> usize {
        self.cam_channels()[stage] / self.num_heads
    }

    /// Spatial size of stage `i` (0-based): H/2^{i+2}.
    pub fn stage_hw(&self, stage: usize) -> (usize, usize) {
        let f = 1 << (stage + 2);
        (self.input_hw.0 / f, self.input_hw.1 / f)
    }

    /// Spatial size of the decoder input after the final stride-2 conv.
    pub fn down_hw(&self) -> (usize, usize) {
        let (h, w) = self.stage_hw(STAGES - 1);
        (h / 2, w / 2)
    }

    /// Upscale factor of the decoder, H / h(F_down).
    pub fn upscale(&self) -> usize {
        self.input_hw.0 / self.down_hw().0
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        let unit = 1 << (STAGES + 2);
        if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a positive multiple of {unit} in both dimensions"
            )));
        }
        if self.num_heads == 0 {
            return Err(Error::Config("num_heads must be positive".into()));
        }
        for (i, &c) in self.cam_channels().iter().enumerate() {
            if c == 0 || c % self.num_heads != 0 {
                return Err(Error::Config(format!(
                    "stage {} attention width {c} is not divisible by {} heads",
                    i + 1,
                    self.num_heads
                )));
            }
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!(
                "batch-norm eps {} / momentum {} out of range",
                self.bn_eps, self.bn_momentum
            )));
        }
        let r = self.upscale();
        if self.upsample_mode == UpsampleMode::StagedPixelShuffle && !is_power_of_four(r) {
            return Err(Error::Config(format!("staged pixel shuffle needs a power-of-4 factor, got {r}")));
        }
        Ok(())
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::NoCam => self.use_cam = false,
            Ablation::NoSfe => self.sfe_stage_mask = [false; STAGES],
            Ablation::SfeStages(mask) => self.sfe_stage_mask = mask,
            Ablation::LpmWidth(c1) => self.depth_channels = [c1, 2 * c1, 4 * c1, 8 * c1],
            Ablation::Upsample(mode) => self.upsample_mode = mode,
        }
        self
    }
}

pub(crate) fn is_power_of_four(r: usize) -> bool {
    r.is_power_of_two() && r.trailing_zeros() % 2 == 0 && r > 1
}

/// Single-factor edits used by the ablation studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ablation {
    NoCam,
    NoSfe,
    SfeStages([bool; STAGES]),
    /// Stage-1 depth width; later stages double.
    LpmWidth(usize),
    Upsample(UpsampleMode),
}

/// Parses a stage mask written as four 0/1 digits, e.g. `1110`.
pub fn parse_stage_mask(s: &str) -> Result<[bool; STAGES]> {
    let digits: Vec<char> = s.chars().filter(|c| *c != ',').collect();
    if digits.len() != STAGES {
        return Err(Error::Config(format!("stage mask {s:?} must have {STAGES} digits")));
    }
    let mut mask = [false; STAGES];
    for (m, d) in mask.iter_mut().zip(digits) {
        *m = match d {
            '1' => true,
            '0' => false,
            _ => return Err(Error::Config(format!("stage mask {s:?} must contain only 0 and 1"))),
        };
    }
    Ok(mask)
}

pub fn format_stage_mask(mask: [bool; STAGES]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}
