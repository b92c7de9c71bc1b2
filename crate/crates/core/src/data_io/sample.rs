use lpca_tensor::{Element, Shape, Tensor};

use super::image::Image;
use crate::{Error, Result};

/// One RGB / depth / mask triple sharing H×W; the mask holds only 0 and 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub rgb: Image,
    pub depth: Image,
    pub mask: Image,
}

impl Sample {
    pub fn new(id: impl Into<String>, rgb: Image, depth: Image, mask: Image) -> Result<Self> {
        let id = id.into();
        if rgb.channels != 3 || depth.channels != 1 || mask.channels != 1 {
            return Err(Error::Data(format!("{id}: expected RGB, gray depth and gray mask")));
        }
        if rgb.dims() != depth.dims() || rgb.dims() != mask.dims() {
            return Err(Error::Data(format!(
                "{id}: size mismatch rgb {:?}, depth {:?}, mask {:?}",
                rgb.dims(),
                depth.dims(),
                mask.dims()
            )));
        }
        if mask.data.iter().any(|&v| v != 0 && v != 255) {
            return Err(Error::Data(format!("{id}: mask is not bilevel")));
        }
        Ok(Sample { id, rgb, depth, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    pub fn to_float(&self) -> FloatSample {
        let (h, w) = self.dims();
        let n = h * w;
        let mut rgb = vec![0.0; 3 * n];
        for (i, px) in self.rgb.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                rgb[c * n + i] = px[c] as f32 / 255.0;
            }
        }
        FloatSample {
            height: h,
            width: w,
            rgb,
            depth: self.depth.data.iter().map(|&v| v as f32 / 255.0).collect(),
            mask: self.mask.data.iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Thresholds a gray mask at 128 in place; returns how many pixels were
/// neither 0 nor 255 beforehand.
pub fn binarize_mask(mask: &mut Image) -> usize {
    let mut changed = 0;
    for v in &mut mask.data {
        if *v != 0 && *v != 255 {
            changed += 1;
        }
        *v = if *v >= 128 { 255 } else { 0 };
    }
    changed
}

/// Unit-scaled planar sample used for augmentation and batching.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatSample {
    pub height: usize,
    pub width: usize,
    /// 3 planes of H×W.
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
    /// 0.0 or 1.0 per pixel.
    pub mask: Vec<f32>,
}

/// Stacked network inputs and targets.
pub struct Batch<T> {
    pub rgb: Tensor<T>,
    pub depth: Tensor<T>,
    pub mask: Tensor<T>,
}

/// Stacks samples of equal size into (N, 3|1|1, H, W) tensors.
pub fn make_batch<T: Element>(samples: &[&FloatSample]) -> Result<Batch<T>> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    if samples.iter().any(|s| (s.height, s.width) != (h, w)) {
        return Err(Error::Data("batch samples differ in size".into()));
    }
    let n = samples.len();
    let cat = |f: &dyn Fn(&FloatSample) -> &[f32]| -> Vec<T> {
        samples.iter().flat_map(|s| f(s).iter().map(|&v| T::from_f64(v as f64))).collect()
    };
    Ok(Batch {
        rgb: Tensor::new(Shape::new(n, 3, h, w)?, cat(&|s| &s.rgb))?,
        depth: Tensor::new(Shape::new(n, 1, h, w)?, cat(&|s| &s.depth))?,
        mask: Tensor::new(Shape::new(n, 1, h, w)?, cat(&|s| &s.mask))?,
    })
}
