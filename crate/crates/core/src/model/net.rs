use lpca_tensor::layers::{Conv2d, Mode};
use lpca_tensor::{Element, Result, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::Backbone;
use super::blocks::{module_fields, pointwise};
use super::cam::StageFusion;
use super::config::{ModelConfig, STAGES};
use super::decoder::Decoder;
use super::lpm::Lpm;
use super::sfe::Sfe;

/// Intermediate tensors of one stage.
#[derive(Clone)]
pub struct StageFeatures<'t, T: Element> {
    pub rgb: Var<'t, T>,
    pub depth: Var<'t, T>,
    pub fused_ca: Var<'t, T>,
    /// Present only where the stage has an SFE.
    pub sfe_out: Option<Var<'t, T>>,
}

/// Everything a forward pass produces, for inspection.
pub struct ForwardTrace<'t, T: Element> {
    pub stages: Vec<StageFeatures<'t, T>>,
    pub f_down: Var<'t, T>,
    pub mask: Var<'t, T>,
}

/// The dual-stream network.
#[derive(Clone, Debug)]
pub struct LpcaNet<T> {
    config: ModelConfig,
    pub backbone: Backbone<T>,
    pub lpm: Lpm<T>,
    pub fusion: Vec<StageFusion<T>>,
    pub sfe: Vec<Option<Sfe<T>>>,
    /// 1×1 conv over concat(F_ca, f_out), per stage with an SFE.
    pub merge: Vec<Option<Conv2d<T>>>,
    /// Stride-2 4×4 convs; the last one produces F_down.
    pub down: Vec<Conv2d<T>>,
    /// 1×1 channel matching after each inter-stage downsampling.
    pub align: Vec<Conv2d<T>>,
    pub decoder: Decoder<T>,
}

module_fields!(LpcaNet {
    backbone, lpm, fusion, sfe, merge, down, align, decoder
});

impl<T: Element> LpcaNet<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> crate::Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config;
        let backbone = Backbone::new(cfg, &mut rng)?;
        let lpm = Lpm::new(cfg, &mut rng)?;
        let (cr, cd, cc) = (cfg.rgb_channels(), cfg.depth_channels, cfg.cam_channels());
        let mut fusion = Vec::with_capacity(STAGES);
        let mut sfe = Vec::with_capacity(STAGES);
        let mut merge = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            fusion.push(StageFusion::new(cfg.use_cam, cr[i], cd[i], cc[i], cfg.num_heads, &mut rng)?);
            if cfg.sfe_stage_mask[i] {
                sfe.push(Some(Sfe::new(cc[i], cfg, &mut rng)?));
                merge.push(Some(pointwise(2 * cc[i], cc[i], &mut rng)?));
            } else {
                sfe.push(None);
                merge.push(None);
            }
        }
        let mut down = Vec::with_capacity(STAGES);
        let mut align = Vec::with_capacity(STAGES - 1);
        for i in 0..STAGES {
            down.push(Conv2d::with_default_padding(cc[i], cc[i], (4, 4), 2, &mut rng)?);
            if i + 1 < STAGES {
                align.push(pointwise(cc[i], cc[i + 1], &mut rng)?);
            }
        }
        let decoder = Decoder::new(cc[STAGES - 1], cfg, &mut rng)?;
        Ok(LpcaNet {
            config: config.clone(),
            backbone,
            lpm,
            fusion,
            sfe,
            merge,
            down,
            align,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_inputs(&self, rgb: &Var<'_, T>, depth: &Var<'_, T>) -> Result<()> {
        let (a, b) = (rgb.shape(), depth.shape());
        let (h, w) = self.config.input_hw;
        if a.h != h || a.w != w || a.c != 3 || b.c != 1 || a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(TensorError::InvalidShape {
                op: "lpcanet",
                shape: a,
                reason: format!("expected rgb (N, 3, {h}, {w}) and depth (N, 1, {h}, {w}), got depth {b}"),
            });
        }
        Ok(())
    }

    /// Per-stage encoder outputs, cross-attention fusion and SFE refinement.
    pub fn encode<'t>(&self, rgb: &Var<'t, T>, depth: &Var<'t, T>, mode: Mode) -> Result<Vec<StageFeatures<'t, T>>> {
        self.check_inputs(rgb, depth)?;
        let f_rgb = self.backbone.forward(rgb, mode)?;
        let f_depth = self.lpm.forward(depth, mode)?;
        let mut stages = Vec::with_capacity(STAGES);
        for (i, (r, d)) in f_rgb.into_iter().zip(f_depth).enumerate() {
            let (sr, sd) = (r.shape(), d.shape());
            if (sr.h, sr.w) != (sd.h, sd.w) {
                return Err(TensorError::ShapeMismatch {
                    op: "stage alignment",
                    lhs: sr,
                    rhs: sd,
                });
            }
            let fused_ca = self.fusion[i].forward(&r, &d, mode)?;
            let sfe_out = match &self.sfe[i] {
                Some(sfe) => Some(sfe.forward(&fused_ca, mode)?),
                None => None,
            };
            stages.push(StageFeatures {
                rgb: r,
                depth: d,
                fused_ca,
                sfe_out,
            });
        }
        Ok(stages)
    }

    /// Progressive stride-2 fusion of the stage outputs into F_down.
    pub fn fuse<'t>(&self, stages: &[StageFeatures<'t, T>]) -> Result<Var<'t, T>> {
        let mut carry: Option<Var<'t, T>> = None;
        for (i, st) in stages.iter().enumerate() {
            let fused = match (&st.sfe_out, &self.merge[i]) {
                (Some(f_out), Some(merge)) => merge.forward(&st.fused_ca.concat_channels(f_out)?)?,
                _ => st.fused_ca.clone(),
            };
            carry = Some(match carry {
                None => fused,
                Some(prev) => {
                    let down = self.align[i - 1].forward(&self.down[i - 1].forward(&prev)?)?;
                    fused.add(&down)?
                }
            });
        }
        let carry = carry.ok_or(TensorError::Config("no stages to fuse".into()))?;
        self.down[STAGES - 1].forward(&carry)
    }

    pub fn trace<'t>(&self, rgb: &Var<'t, T>, depth: &Var<'t, T>, mode: Mode) -> Result<ForwardTrace<'t, T>> {
        let stages = self.encode(rgb, depth, mode)?;
        let f_down = self.fuse(&stages)?;
        let mask = self.decoder.forward(&f_down, mode)?;
        Ok(ForwardTrace { stages, f_down, mask })
    }

    /// Defect probabilities, (N, 1, H, W).
    pub fn forward<'t>(&self, rgb: &Var<'t, T>, depth: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        Ok(self.trace(rgb, depth, mode)?.mask)
    }
}
