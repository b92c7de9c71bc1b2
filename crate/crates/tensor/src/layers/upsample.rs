//! Fixed (parameter-free) upsamplers.

use std::fmt;
use std::str::FromStr;

use crate::{Element, Result, Shape, Tensor, TensorError, Var};

/// Decoder resolution-restoration method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpsampleMode {
    PixelShuffle,
    /// Pixel shuffle split into r=4 stages with 3×3 convolutions in between.
    StagedPixelShuffle,
    Nearest,
    Bilinear,
    TransposedConv,
    PatchExpand,
}

impl UpsampleMode {
    pub const ALL: [UpsampleMode; 6] = [
        UpsampleMode::PixelShuffle,
        UpsampleMode::StagedPixelShuffle,
        UpsampleMode::Nearest,
        UpsampleMode::Bilinear,
        UpsampleMode::TransposedConv,
        UpsampleMode::PatchExpand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UpsampleMode::PixelShuffle => "pixel_shuffle",
            UpsampleMode::StagedPixelShuffle => "staged_ps",
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
            UpsampleMode::TransposedConv => "transposed_conv",
            UpsampleMode::PatchExpand => "patch_expand",
        }
    }
}

impl fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpsampleMode {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        UpsampleMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| TensorError::Config(format!("unsupported upsample mode '{s}'")))
    }
}

fn check_factor(x: Shape, r: usize, op: &'static str) -> Result<Shape> {
    if r < 2 {
        return Err(TensorError::InvalidShape {
            op,
            shape: x,
            reason: format!("upscale factor must be >= 2, got {r}"),
        });
    }
    Shape::new(x.n, x.c, x.h * r, x.w * r)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<'t, T: Element>(x: &Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let os = check_factor(s, r, "upsample_nearest")?;
    let xd = x.value().data();
    let mut out = Vec::with_capacity(os.numel());
    for nc in 0..s.n * s.c {
        for y in 0..os.h {
            let row = nc * s.plane() + (y / r) * s.w;
            for xo in 0..os.w {
                out.push(xd[row + xo / r]);
            }
        }
    }
    let out = Tensor::new(os, out)?;
    Ok(x.tape().record(&[x], out, move |ctx| {
        let g = ctx.grad().data();
        let mut gx = vec![T::zero(); s.numel()];
        let mut o = 0;
        for nc in 0..s.n * s.c {
            for y in 0..os.h {
                let row = nc * s.plane() + (y / r) * s.w;
                for xo in 0..os.w {
                    gx[row + xo / r] += g[o];
                    o += 1;
                }
            }
        }
        ctx.accumulate(0, gx);
    }))
}

/// Source taps and weights along one axis, half-pixel centres
/// (`align_corners = false`), edge-clamped.
fn bilinear_taps(in_len: usize, r: usize) -> Vec<(usize, usize, f64)> {
    (0..in_len * r)
        .map(|o| {
            let src = ((o as f64 + 0.5) / r as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear<'t, T: Element>(x: &Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let os = check_factor(s, r, "upsample_bilinear")?;
    let ty = bilinear_taps(s.h, r);
    let tx = bilinear_taps(s.w, r);
    // (flat out, flat in, weight); built once and reused by backward.
    let mut taps: Vec<(usize, usize, T)> = Vec::with_capacity(os.numel() * 4);
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                for (yy, wy) in [(y0, 1.0 - ly), (y1, ly)] {
                    for (xx, wx) in [(x0, 1.0 - lx), (x1, lx)] {
                        let wgt = wy * wx;
                        if wgt != 0.0 {
                            taps.push((o, base + yy * s.w + xx, T::from_f64(wgt)));
                        }
                    }
                }
                o += 1;
            }
        }
    }
    let xd = x.value().data();
    let mut out = vec![T::zero(); os.numel()];
    for &(o, i, w) in &taps {
        out[o] += w * xd[i];
    }
    let out = Tensor::new(os, out)?;
    Ok(x.tape().record(&[x], out, move |ctx| {
        let g = ctx.grad().data();
        let mut gx = vec![T::zero(); s.numel()];
        for &(o, i, w) in &taps {
            gx[i] += w * g[o];
        }
        ctx.accumulate(0, gx);
    }))
}
