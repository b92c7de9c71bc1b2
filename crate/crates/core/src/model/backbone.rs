use lpca_tensor::layers::Mode;
use lpca_tensor::{Element, Result, TensorError, Var};
use rand::Rng;

use super::blocks::{module_fields, ConvBn};
use super::config::{ModelConfig, STAGES};

/// Expand 1×1 → depthwise 3×3 → project 1×1, with a skip connection when
/// the block keeps both resolution and width.
#[derive(Clone, Debug)]
pub struct InvertedResidual<T> {
    pub expand: Option<ConvBn<T>>,
    pub depthwise: ConvBn<T>,
    pub project: ConvBn<T>,
    residual: bool,
}

module_fields!(InvertedResidual {
    expand,
    depthwise,
    project
});

impl<T: Element> InvertedResidual<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        stride: usize,
        expand: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = cin * expand;
        Ok(InvertedResidual {
            expand: if expand == 1 {
                None
            } else {
                Some(ConvBn::new(cin, hidden, 1, 1, 1, cfg, rng)?)
            },
            depthwise: ConvBn::new(hidden, hidden, 3, stride, hidden, cfg, rng)?,
            project: ConvBn::new(hidden, cout, 1, 1, 1, cfg, rng)?,
            residual: stride == 1 && cin == cout,
        })
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let h = match &self.expand {
            Some(e) => e.forward(x, mode)?.relu6(),
            None => x.clone(),
        };
        let h = self.depthwise.forward(&h, mode)?.relu6();
        let y = self.project.forward(&h, mode)?;
        if self.residual {
            y.add(x)
        } else {
            Ok(y)
        }
    }
}

/// Randomly initialised MobileNetV2-style pyramid emitting features at
/// strides 4, 8, 16 and 32.
#[derive(Clone, Debug)]
pub struct Backbone<T> {
    pub stem: ConvBn<T>,
    pub blocks: Vec<InvertedResidual<T>>,
    /// Index into `blocks` of the last block of each tapped group.
    taps: [usize; STAGES],
}

module_fields!(Backbone { stem, blocks });

impl<T: Element> Backbone<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let layout = cfg.backbone();
        let stem = ConvBn::new(3, layout.stem, 3, 2, 1, cfg, rng)?;
        let mut blocks = Vec::new();
        let mut ends = Vec::new();
        let mut cin = layout.stem;
        for group in &layout.groups {
            for i in 0..group.repeats {
                let stride = if i == 0 { group.stride } else { 1 };
                blocks.push(InvertedResidual::new(cin, group.channels, stride, group.expand, cfg, rng)?);
                cin = group.channels;
            }
            ends.push(blocks.len() - 1);
        }
        Ok(Backbone {
            stem,
            blocks,
            taps: layout.taps.map(|t| ends[t]),
        })
    }

    pub fn forward<'t>(&self, rgb: &Var<'t, T>, mode: Mode) -> Result<Vec<Var<'t, T>>> {
        if rgb.shape().c != 3 {
            return Err(TensorError::InvalidShape {
                op: "backbone",
                shape: rgb.shape(),
                reason: "expected 3 RGB channels".into(),
            });
        }
        let mut x = self.stem.forward(rgb, mode)?.relu6();
        let mut out = Vec::with_capacity(STAGES);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x, mode)?;
            if self.taps.contains(&i) {
                out.push(x.clone());
            }
        }
        Ok(out)
    }
}
