//! Direct (cross-correlation) 2-D convolution and its transpose.

use rand::Rng;

use super::init::kaiming_uniform;
use crate::module::join;
use crate::{Element, Module, Param, Result, Shape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn new(stride: usize, padding: (usize, usize)) -> Self {
        ConvSpec {
            stride: (stride, stride),
            padding,
            groups: 1,
        }
    }

    /// The padding that keeps the stage resolutions exact for the kernel
    /// sizes the network uses.
    pub fn default_padding(kernel: (usize, usize), stride: usize) -> (usize, usize) {
        match (kernel, stride) {
            ((4, 4), 2) => (1, 1),
            ((4, 4), 4) => (0, 0),
            ((kh, kw), _) => (kh / 2, kw / 2),
        }
    }
}

fn out_dim(input: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = input + 2 * p;
    if padded < k || s == 0 {
        None
    } else {
        Some((padded - k) / s + 1)
    }
}

pub fn conv_output_hw(h: usize, w: usize, kernel: (usize, usize), spec: ConvSpec) -> Option<(usize, usize)> {
    Some((
        out_dim(h, kernel.0, spec.stride.0, spec.padding.0)?,
        out_dim(w, kernel.1, spec.stride.1, spec.padding.1)?,
    ))
}

/// Range of output columns `o` for which `o·s + k − p` lands inside `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    // need o*s + k >= p  and  o*s + k - p <= len - 1
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    let hi = if len + p < k + 1 {
        0
    } else {
        ((len + p - k - 1) / s + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }

    /// Calls `f(in_row_offset, out_row_offset, weight_index, (ow_lo, ow_hi), kx)`
    /// for every (input row, output row, kernel tap) triple that touches.
    #[inline]
    fn for_each_tap(&self, n: usize, co: usize, mut f: impl FnMut(usize, usize, usize, (usize, usize), usize)) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let cin_g = self.cin_g();
        let g = co / self.cout_g();
        for ci in 0..cin_g {
            let cin_abs = g * cin_g + ci;
            let in_plane = (n * self.cin + cin_abs) * self.h * self.w;
            let out_plane = (n * self.cout + co) * self.oh * self.ow;
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = valid_range(self.oh, self.h, ky, sh, ph);
                for kx in 0..self.kw {
                    let widx = ((co * cin_g + ci) * self.kh + ky) * self.kw + kx;
                    let cols = valid_range(self.ow, self.w, kx, sw, pw);
                    if cols.0 >= cols.1 {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky - ph;
                        f(in_plane + iy * self.w, out_plane + oy * self.ow, widx, cols, kx);
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x (N, Cin, H, W)` with `weight (Cout, Cin/groups, kH, kW)`
/// and optional `bias (1, Cout, 1, 1)`, zero padding.
///
/// Ungrouped convolutions run as a matrix product over unfolded input
/// patches; grouped ones use [`conv2d_direct`].
pub fn conv2d<'t, T: Element>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    spec: ConvSpec,
) -> Result<Var<'t, T>> {
    let geo = geometry(x, weight, bias, spec)?;
    if spec.groups == 1 {
        conv2d_unfolded(x, weight, bias, geo)
    } else {
        conv2d_direct(x, weight, bias, spec)
    }
}

fn geometry<T: Element>(x: &Var<'_, T>, weight: &Var<'_, T>, bias: Option<&Var<'_, T>>, spec: ConvSpec) -> Result<Geometry> {
    let xs = x.shape();
    let ws = weight.shape();
    let groups = spec.groups;
    if groups == 0 || xs.c % groups != 0 || ws.n % groups != 0 || ws.c * groups != xs.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d (channels)",
            lhs: xs,
            rhs: ws,
        });
    }
    if let Some(b) = bias {
        if b.shape().numel() != ws.n {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d (bias)",
                lhs: ws,
                rhs: b.shape(),
            });
        }
    }
    let (oh, ow) = conv_output_hw(xs.h, xs.w, (ws.h, ws.w), spec).ok_or_else(|| TensorError::InvalidShape {
        op: "conv2d",
        shape: xs,
        reason: format!("kernel {}x{} with {:?} leaves no output", ws.h, ws.w, spec),
    })?;
    Ok(Geometry {
        n: xs.n,
        cin: xs.c,
        h: xs.h,
        w: xs.w,
        cout: ws.n,
        kh: ws.h,
        kw: ws.w,
        oh,
        ow,
        spec,
    })
}

impl Geometry {
    /// Length of one unfolded patch, Cin·kH·kW.
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Unfolds image `n` of `x` into `rows`, one patch per output pixel
    /// (OH·OW × Cin·kH·kW); padding taps are zero.
    fn im2row<T: Element>(&self, x: &[T], n: usize, rows: &mut [T]) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let k = self.patch();
        let img = &x[n * self.cin * self.h * self.w..(n + 1) * self.cin * self.h * self.w];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut rows[(oy * self.ow + ox) * k..(oy * self.ow + ox + 1) * k];
                let mut j = 0;
                for ci in 0..self.cin {
                    let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
                    for ky in 0..self.kh {
                        let iy = (oy * sh + ky).wrapping_sub(ph);
                        for kx in 0..self.kw {
                            let ix = (ox * sw + kx).wrapping_sub(pw);
                            row[j] = if iy < self.h && ix < self.w {
                                plane[iy * self.w + ix]
                            } else {
                                T::zero()
                            };
                            j += 1;
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2row`]: scatters patch gradients back onto
    /// image `n` of `gx`.
    fn row2im<T: Element>(&self, rows: &[T], n: usize, gx: &mut [T]) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let k = self.patch();
        let img = &mut gx[n * self.cin * self.h * self.w..(n + 1) * self.cin * self.h * self.w];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &rows[(oy * self.ow + ox) * k..(oy * self.ow + ox + 1) * k];
                let mut j = 0;
                for ci in 0..self.cin {
                    for ky in 0..self.kh {
                        let iy = (oy * sh + ky).wrapping_sub(ph);
                        for kx in 0..self.kw {
                            let ix = (ox * sw + kx).wrapping_sub(pw);
                            if iy < self.h && ix < self.w {
                                img[(ci * self.h + iy) * self.w + ix] += row[j];
                            }
                            j += 1;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_unfolded<'t, T: Element>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    geo: Geometry,
) -> Result<Var<'t, T>> {
    let (k, pix, cout) = (geo.patch(), geo.oh * geo.ow, geo.cout);
    let out_shape = Shape::new(geo.n, cout, geo.oh, geo.ow)?;
    let mut out = vec![T::zero(); out_shape.numel()];
    let (xd, wd) = (x.value().data(), weight.value().data());
    let mut rows = vec![T::zero(); pix * k];
    // Output is produced pixel-major (OH·OW × Cout), then transposed.
    let mut tmp = vec![T::zero(); pix * cout];
    for n in 0..geo.n {
        geo.im2row(xd, n, &mut rows);
        tmp.iter_mut().for_each(|v| *v = T::zero());
        crate::kernels::gemm_nt(&rows, wd, &mut tmp, pix, k, cout);
        let o = &mut out[n * cout * pix..(n + 1) * cout * pix];
        for p in 0..pix {
            for co in 0..cout {
                o[co * pix + p] = tmp[p * cout + co];
            }
        }
        if let Some(b) = bias {
            for (co, &bv) in b.value().data().iter().enumerate() {
                o[co * pix..(co + 1) * pix].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    x.tape().count_macs((geo.n * cout * k * pix) as u64);
    let out = Tensor::new(out_shape, out)?;
    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(x.tape().record(&inputs, out, move |ctx| {
        let g = ctx.grad().data();
        let (xd, wd) = (ctx.input(0).data(), ctx.input(1).data());
        let (want_x, want_w) = (ctx.wants(0), ctx.wants(1));
        let mut gx = vec![T::zero(); if want_x { xd.len() } else { 0 }];
        let mut gw = vec![T::zero(); if want_w { wd.len() } else { 0 }];
        let mut rows = vec![T::zero(); pix * k];
        for n in 0..geo.n {
            let gn = &g[n * cout * pix..(n + 1) * cout * pix];
            if want_w {
                geo.im2row(xd, n, &mut rows);
                crate::kernels::gemm_nn(gn, &rows, &mut gw, cout, pix, k);
            }
            if want_x {
                rows.iter_mut().for_each(|v| *v = T::zero());
                crate::kernels::gemm_tn(gn, wd, &mut rows, pix, cout, k);
                geo.row2im(&rows, n, &mut gx);
            }
        }
        if want_x {
            ctx.accumulate(0, gx);
        }
        if want_w {
            ctx.accumulate(1, gw);
        }
        if ctx.inputs_len() > 2 && ctx.wants(2) {
            let mut gb = vec![T::zero(); cout];
            for n in 0..geo.n {
                for (co, b) in gb.iter_mut().enumerate() {
                    let off = (n * cout + co) * pix;
                    *b += g[off..off + pix].iter().copied().sum();
                }
            }
            ctx.accumulate(2, gb);
        }
    }))
}

/// Direct (loop-nest) cross-correlation; supports groups. Reference for the
/// unfolded path.
pub fn conv2d_direct<'t, T: Element>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    spec: ConvSpec,
) -> Result<Var<'t, T>> {
    let geo = geometry(x, weight, bias, spec)?;
    let (oh, ow) = (geo.oh, geo.ow);
    let out_shape = Shape::new(geo.n, geo.cout, oh, ow)?;
    let mut out = vec![T::zero(); out_shape.numel()];
    let (xd, wd) = (x.value().data(), weight.value().data());
    let (sw, pw) = (spec.stride.1, spec.padding.1);
    for n in 0..geo.n {
        for co in 0..geo.cout {
            if let Some(b) = bias {
                let bv = b.value().data()[co];
                let off = (n * geo.cout + co) * oh * ow;
                out[off..off + oh * ow].iter_mut().for_each(|v| *v = bv);
            }
            geo.for_each_tap(n, co, |irow, orow, widx, (lo, hi), kx| {
                let wv = wd[widx];
                let o = &mut out[orow + lo..orow + hi];
                if sw == 1 {
                    let start = irow + lo + kx - pw;
                    for (ov, &iv) in o.iter_mut().zip(&xd[start..start + (hi - lo)]) {
                        *ov += wv * iv;
                    }
                } else {
                    for (j, ov) in o.iter_mut().enumerate() {
                        *ov += wv * xd[irow + (lo + j) * sw + kx - pw];
                    }
                }
            });
        }
    }
    x.tape()
        .count_macs((geo.n * geo.cout * geo.cin_g() * geo.kh * geo.kw * oh * ow) as u64);
    let out = Tensor::new(out_shape, out)?;
    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(x.tape().record(&inputs, out, move |ctx| {
        let g = ctx.grad().data();
        let (xd, wd) = (ctx.input(0).data(), ctx.input(1).data());
        let want_x = ctx.wants(0);
        let want_w = ctx.wants(1);
        let mut gx = vec![T::zero(); if want_x { xd.len() } else { 0 }];
        let mut gw = vec![T::zero(); if want_w { wd.len() } else { 0 }];
        for n in 0..geo.n {
            for co in 0..geo.cout {
                geo.for_each_tap(n, co, |irow, orow, widx, (lo, hi), kx| {
                    let grow = &g[orow + lo..orow + hi];
                    if sw == 1 {
                        let start = irow + lo + kx - pw;
                        if want_x {
                            let wv = wd[widx];
                            for (xv, &gv) in gx[start..start + (hi - lo)].iter_mut().zip(grow) {
                                *xv += wv * gv;
                            }
                        }
                        if want_w {
                            gw[widx] += crate::kernels::dot(grow, &xd[start..start + (hi - lo)]);
                        }
                    } else {
                        let wv = wd[widx];
                        let mut acc = T::zero();
                        for (j, &gv) in grow.iter().enumerate() {
                            let xi = irow + (lo + j) * sw + kx - pw;
                            if want_x {
                                gx[xi] += wv * gv;
                            }
                            acc += gv * xd[xi];
                        }
                        if want_w {
                            gw[widx] += acc;
                        }
                    }
                });
            }
        }
        if want_x {
            ctx.accumulate(0, gx);
        }
        if want_w {
            ctx.accumulate(1, gw);
        }
        if ctx.inputs_len() > 2 && ctx.wants(2) {
            let plane = geo.oh * geo.ow;
            let mut gb = vec![T::zero(); geo.cout];
            for n in 0..geo.n {
                for (co, b) in gb.iter_mut().enumerate() {
                    let off = (n * geo.cout + co) * plane;
                    *b += g[off..off + plane].iter().copied().sum();
                }
            }
            ctx.accumulate(2, gb);
        }
    }))
}

/// Transposed convolution: `x (N, Cin, H, W)`, `weight (Cin, Cout, kH, kW)`,
/// output `(N, Cout, (H−1)·s − 2p + kH, ...)`.
pub fn conv_transpose2d<'t, T: Element>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if ws.n != xs.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: xs,
            rhs: ws,
        });
    }
    let (kh, kw, cout, cin) = (ws.h, ws.w, ws.c, xs.c);
    let oh = ((xs.h - 1) * stride + kh)
        .checked_sub(2 * padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| TensorError::InvalidShape {
            op: "conv_transpose2d",
            shape: xs,
            reason: "padding larger than output".into(),
        })?;
    let ow = ((xs.w - 1) * stride + kw)
        .checked_sub(2 * padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| TensorError::InvalidShape {
            op: "conv_transpose2d",
            shape: xs,
            reason: "padding larger than output".into(),
        })?;
    let out_shape = Shape::new(xs.n, cout, oh, ow)?;
    let (h, w) = (xs.h, xs.w);
    // Visits (x index, out index, weight index) for every contributing pair.
    let visit = move |f: &mut dyn FnMut(usize, usize, usize)| {
        for n in 0..xs.n {
            for ci in 0..cin {
                for co in 0..cout {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = ((ci * cout + co) * kh + ky) * kw + kx;
                            for iy in 0..h {
                                let oy = (iy * stride + ky) as isize - padding as isize;
                                if oy < 0 || oy as usize >= oh {
                                    continue;
                                }
                                for ix in 0..w {
                                    let ox = (ix * stride + kx) as isize - padding as isize;
                                    if ox < 0 || ox as usize >= ow {
                                        continue;
                                    }
                                    let xi = ((n * cin + ci) * h + iy) * w + ix;
                                    let oi = ((n * cout + co) * oh + oy as usize) * ow + ox as usize;
                                    f(xi, oi, widx);
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    let mut out = vec![T::zero(); out_shape.numel()];
    if let Some(b) = bias {
        let bd = b.value().data();
        for (i, v) in out.iter_mut().enumerate() {
            *v = bd[(i / (oh * ow)) % cout];
        }
    }
    let (xd, wd) = (x.value().data(), weight.value().data());
    visit(&mut |xi, oi, widx| out[oi] += wd[widx] * xd[xi]);
    x.tape().count_macs((xs.n * cin * cout * kh * kw * h * w) as u64);
    let out = Tensor::new(out_shape, out)?;
    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(x.tape().record(&inputs, out, move |ctx| {
        let g = ctx.grad().data();
        let (xd, wd) = (ctx.input(0).data(), ctx.input(1).data());
        let mut gx = vec![T::zero(); xd.len()];
        let mut gw = vec![T::zero(); wd.len()];
        visit(&mut |xi, oi, widx| {
            gx[xi] += wd[widx] * g[oi];
            gw[widx] += xd[xi] * g[oi];
        });
        if ctx.wants(0) {
            ctx.accumulate(0, gx);
        }
        if ctx.wants(1) {
            ctx.accumulate(1, gw);
        }
        if ctx.inputs_len() > 2 && ctx.wants(2) {
            let mut gb = vec![T::zero(); cout];
            for (i, &gv) in g.iter().enumerate() {
                gb[(i / (oh * ow)) % cout] += gv;
            }
            ctx.accumulate(2, gb);
        }
    }))
}

/// 2-D convolution layer with Kaiming-uniform weights and zero bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
}

impl<T: Element> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(TensorError::Config(format!(
                "conv {cin}->{cout} not divisible into {} groups",
                spec.groups
            )));
        }
        let wshape = Shape::new(cout, cin / spec.groups, kernel.0, kernel.1)?;
        let mut layer = Conv2d {
            weight: Param::new(Tensor::zeros(wshape)),
            bias: if bias {
                Some(Param::new(Tensor::zeros(Shape::new(1, cout, 1, 1)?)))
            } else {
                None
            },
            spec,
        };
        layer.reset_parameters(rng);
        Ok(layer)
    }

    /// Kernel with the default padding for its size and stride.
    pub fn with_default_padding<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let padding = ConvSpec::default_padding(kernel, stride);
        Self::new(cin, cout, kernel, ConvSpec::new(stride, padding), true, rng)
    }

    pub fn reset_parameters<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let s = self.weight.shape();
        let fan_in = s.c * s.h * s.w;
        self.weight
            .set_value(kaiming_uniform(s, fan_in, rng))
            .expect("same shape");
        if let Some(b) = &mut self.bias {
            b.set_value(Tensor::zeros(b.shape())).expect("same shape");
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c * self.spec.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape().h, self.weight.shape().w)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        conv_output_hw(h, w, self.kernel(), self.spec)
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        conv2d(x, &w, b.as_ref(), self.spec)
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Learned transposed convolution (used as an alternative upsampler).
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s = Shape::new(cin, cout, kernel, kernel)?;
        Ok(ConvTranspose2d {
            weight: Param::new(kaiming_uniform(s, cout * kernel * kernel, rng)),
            bias: Param::new(Tensor::zeros(Shape::new(1, cout, 1, 1)?)),
            stride,
            padding,
        })
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        conv_transpose2d(x, &w, Some(&b), self.stride, self.padding)
    }
}

impl<T: Element> Module<T> for ConvTranspose2d<T> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
