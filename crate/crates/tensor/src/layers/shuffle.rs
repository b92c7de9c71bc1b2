//! Sub-pixel rearrangements between channels and space.

use crate::{Element, Result, Shape, Tensor, TensorError, Var};

/// Index map of pixel shuffle: for every output element, the flat index of
/// its source in the input.
fn shuffle_sources(input: Shape, r: usize) -> Vec<usize> {
    let c_out = input.c / (r * r);
    let (oh, ow) = (input.h * r, input.w * r);
    let mut src = Vec::with_capacity(input.numel());
    for n in 0..input.n {
        for c in 0..c_out {
            for y in 0..oh {
                for x in 0..ow {
                    let (h, i) = (y / r, y % r);
                    let (w, j) = (x / r, x % r);
                    src.push(input.index(n, c * r * r + i * r + j, h, w));
                }
            }
        }
    }
    src
}

fn gather<'t, T: Element>(x: &Var<'t, T>, out_shape: Shape, src: Vec<usize>) -> Result<Var<'t, T>> {
    let xd = x.value().data();
    let data = src.iter().map(|&i| xd[i]).collect();
    let out = Tensor::new(out_shape, data)?;
    Ok(x.tape().record(&[x], out, move |ctx| {
        let g = ctx.grad().data();
        let mut gx = vec![T::zero(); g.len()];
        for (&i, &gv) in src.iter().zip(g) {
            gx[i] += gv;
        }
        ctx.accumulate(0, gx);
    }))
}

/// `(N, C·r², H, W) → (N, C, H·r, W·r)` with
/// `out[n, c, h·r + i, w·r + j] = x[n, c·r² + i·r + j, h, w]`.
pub fn pixel_shuffle<'t, T: Element>(x: &Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if r == 0 || s.c % (r * r) != 0 {
        return Err(TensorError::InvalidShape {
            op: "pixel_shuffle",
            shape: s,
            reason: format!("channels not divisible by r² = {}", r * r),
        });
    }
    let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r)?;
    gather(x, out_shape, shuffle_sources(s, r))
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<'t, T: Element>(x: &Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 {
        return Err(TensorError::InvalidShape {
            op: "pixel_unshuffle",
            shape: s,
            reason: format!("spatial dims not divisible by r = {r}"),
        });
    }
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r)?;
    // out[k] = x[src[k]] inverts shuffle's out[j] = x'[shuffle[j]].
    let fwd = shuffle_sources(out_shape, r);
    let mut src = vec![0; fwd.len()];
    for (j, &k) in fwd.iter().enumerate() {
        src[k] = j;
    }
    gather(x, out_shape, src)
}
