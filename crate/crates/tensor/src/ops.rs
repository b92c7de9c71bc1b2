//! Differentiable tensor operations on [`Var`].

use crate::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use crate::{Element, Result, Shape, Tensor, TensorError, Var};

impl<'t, T: Element> Var<'t, T> {
    /// Elementwise sum. `b` may also be a per-channel bias of shape
    /// `(1, C, 1, 1)` or `(N, C, 1, 1)`.
    pub fn add(&self, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa == sb {
            let data = self
                .value()
                .data()
                .iter()
                .zip(b.value().data())
                .map(|(&x, &y)| x + y)
                .collect();
            let out = Tensor::new(sa, data)?;
            return Ok(self.tape().record(&[self, b], out, |ctx| {
                let g = ctx.grad().data();
                for i in 0..2 {
                    if ctx.wants(i) {
                        ctx.accumulate(i, g.to_vec());
                    }
                }
            }));
        }
        let per_channel = sb.h == 1 && sb.w == 1 && sb.c == sa.c && (sb.n == 1 || sb.n == sa.n);
        if !per_channel {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let plane = sa.plane();
        let bd = b.value().data();
        let mut data = self.value().data().to_vec();
        for n in 0..sa.n {
            for c in 0..sa.c {
                let bv = bd[if sb.n == 1 { c } else { n * sa.c + c }];
                let off = (n * sa.c + c) * plane;
                data[off..off + plane].iter_mut().for_each(|x| *x += bv);
            }
        }
        let out = Tensor::new(sa, data)?;
        Ok(self.tape().record(&[self, b], out, move |ctx| {
            let g = ctx.grad().data();
            if ctx.wants(0) {
                ctx.accumulate(0, g.to_vec());
            }
            if ctx.wants(1) {
                let mut gb = vec![T::zero(); sb.numel()];
                for n in 0..sa.n {
                    for c in 0..sa.c {
                        let off = (n * sa.c + c) * plane;
                        let s: T = g[off..off + plane].iter().copied().sum();
                        gb[if sb.n == 1 { c } else { n * sa.c + c }] += s;
                    }
                }
                ctx.accumulate(1, gb);
            }
        }))
    }

    pub fn sub(&self, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.add(&b.scale(-T::one()))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&self, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        if self.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(),
                rhs: b.shape(),
            });
        }
        let data = self
            .value()
            .data()
            .iter()
            .zip(b.value().data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(), data)?;
        Ok(self.tape().record(&[self, b], out, |ctx| {
            let g = ctx.grad().data();
            for (i, other) in [(0, 1), (1, 0)] {
                if ctx.wants(i) {
                    let o = ctx.input(other).data();
                    ctx.accumulate(i, g.iter().zip(o).map(|(&g, &o)| g * o).collect());
                }
            }
        }))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let out = self.value().map(|x| x * s);
        self.tape().record(&[self], out, move |ctx| {
            let g = ctx.grad().data().iter().map(|&g| g * s).collect();
            ctx.accumulate(0, g);
        })
    }

    /// `max(x, 0)`; the derivative at exactly 0 is 0.
    pub fn relu(&self) -> Var<'t, T> {
        let out = self.value().map(|x| if x > T::zero() { x } else { T::zero() });
        self.tape().record(&[self], out, |ctx| {
            let x = ctx.input(0).data();
            let g = ctx
                .grad()
                .data()
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect();
            ctx.accumulate(0, g);
        })
    }

    /// `min(max(x, 0), 6)`; derivative is 1 strictly inside (0, 6), else 0.
    pub fn relu6(&self) -> Var<'t, T> {
        let six = T::from_f64(6.0);
        let out = self.value().map(|x| x.max(T::zero()).min(six));
        self.tape().record(&[self], out, move |ctx| {
            let x = ctx.input(0).data();
            let g = ctx
                .grad()
                .data()
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x > T::zero() && x < six { g } else { T::zero() })
                .collect();
            ctx.accumulate(0, g);
        })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let out = self.value().map(|x| T::one() / (T::one() + (-x).exp()));
        self.tape().record(&[self], out, |ctx| {
            let y = ctx.output().data();
            let g = ctx
                .grad()
                .data()
                .iter()
                .zip(y)
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect();
            ctx.accumulate(0, g);
        })
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let n = self.value().numel();
        let out = Tensor::scalar(self.value().sum());
        self.tape().record(&[self], out, move |ctx| {
            let g = ctx.grad().item();
            ctx.accumulate(0, vec![g; n]);
        })
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum_all().scale(T::one() / T::from_usize(n))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&self, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w)?;
        let (ca, cb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&self.value().data()[n * ca..(n + 1) * ca]);
            data.extend_from_slice(&b.value().data()[n * cb..(n + 1) * cb]);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.tape().record(&[self, b], out, move |ctx| {
            let g = ctx.grad().data();
            let mut ga = Vec::with_capacity(sa.numel());
            let mut gb = Vec::with_capacity(sb.numel());
            for n in 0..sa.n {
                let off = n * (ca + cb);
                ga.extend_from_slice(&g[off..off + ca]);
                gb.extend_from_slice(&g[off + ca..off + ca + cb]);
            }
            if ctx.wants(0) {
                ctx.accumulate(0, ga);
            }
            if ctx.wants(1) {
                ctx.accumulate(1, gb);
            }
        }))
    }

    pub fn reshape(&self, shape: Shape) -> Result<Var<'t, T>> {
        let out = self.value().reshaped(shape)?;
        Ok(self.tape().record(&[self], out, |ctx| {
            ctx.accumulate(0, ctx.grad().data().to_vec());
        }))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: [usize; 4]) -> Result<Var<'t, T>> {
        let mut seen = [false; 4];
        for &a in &axes {
            if a > 3 || seen[a] {
                return Err(TensorError::Config(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        let out = permute_tensor(self.value(), axes);
        let mut inverse = [0; 4];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let in_shape = self.shape();
        Ok(self.tape().record(&[self], out, move |ctx| {
            let g = permute_tensor(ctx.grad(), inverse);
            debug_assert_eq!(g.shape(), in_shape);
            ctx.accumulate(0, g.into_data());
        }))
    }

    /// Batched matrix product over the trailing two axes:
    /// `(n, c, M, K) · (n, c, K, N) -> (n, c, M, N)`.
    pub fn matmul(&self, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa.n != sb.n || sa.c != sb.c || sa.w != sb.h {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa.h, sa.w, sb.w);
        let batches = sa.n * sa.c;
        let shape = Shape::new(sa.n, sa.c, m, n)?;
        let mut data = vec![T::zero(); shape.numel()];
        let (ad, bd) = (self.value().data(), b.value().data());
        for bi in 0..batches {
            gemm_nn(
                &ad[bi * m * k..(bi + 1) * m * k],
                &bd[bi * k * n..(bi + 1) * k * n],
                &mut data[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.tape().count_macs((batches * m * k * n) as u64);
        let out = Tensor::new(shape, data)?;
        Ok(self.tape().record(&[self, b], out, move |ctx| {
            let g = ctx.grad().data();
            if ctx.wants(0) {
                let bd = ctx.input(1).data();
                let mut ga = vec![T::zero(); batches * m * k];
                for bi in 0..batches {
                    gemm_nt(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bd[bi * k * n..(bi + 1) * k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                ctx.accumulate(0, ga);
            }
            if ctx.wants(1) {
                let ad = ctx.input(0).data();
                let mut gb = vec![T::zero(); batches * k * n];
                for bi in 0..batches {
                    gemm_tn(
                        &ad[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                }
                ctx.accumulate(1, gb);
            }
        }))
    }

    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax_last(&self) -> Result<Var<'t, T>> {
        if self.value().data().iter().any(|x| x.is_nan()) {
            return Err(TensorError::NonFinite {
                op: "softmax",
                what: "NaN".into(),
            });
        }
        let len = self.shape().w;
        let mut data = self.value().data().to_vec();
        data.chunks_mut(len).for_each(softmax_row);
        let out = Tensor::new(self.shape(), data)?;
        Ok(self.tape().record(&[self], out, move |ctx| {
            let y = ctx.output().data();
            let g = ctx.grad().data();
            let mut gx = vec![T::zero(); y.len()];
            for ((gx, y), g) in gx.chunks_mut(len).zip(y.chunks(len)).zip(g.chunks(len)) {
                let s = dot(y, g);
                for i in 0..len {
                    gx[i] = y[i] * (g[i] - s);
                }
            }
            ctx.accumulate(0, gx);
        }))
    }

    /// Fused scaled dot-product attention, `softmax(q·kᵀ·scale)·v`, batched
    /// over the leading two axes. `q: (n, c, Lq, d)`, `k: (n, c, Lk, d)`,
    /// `v: (n, c, Lk, dv)`. The probability matrix is only materialised when
    /// the result is recorded for differentiation.
    pub fn attention(&self, k: &Var<'t, T>, v: &Var<'t, T>, scale: T) -> Result<Var<'t, T>> {
        let (sq, sk, sv) = (self.shape(), k.shape(), v.shape());
        if sq.n != sk.n || sq.c != sk.c || sq.w != sk.w {
            return Err(TensorError::ShapeMismatch {
                op: "attention(q, k)",
                lhs: sq,
                rhs: sk,
            });
        }
        if sv.n != sk.n || sv.c != sk.c || sv.h != sk.h {
            return Err(TensorError::ShapeMismatch {
                op: "attention(k, v)",
                lhs: sk,
                rhs: sv,
            });
        }
        let (lq, lk, d, dv) = (sq.h, sk.h, sq.w, sv.w);
        let batches = sq.n * sq.c;
        let tracked = self.tape().grad_enabled()
            && (self.is_tracked() || k.is_tracked() || v.is_tracked());
        let shape = Shape::new(sq.n, sq.c, lq, dv)?;
        let mut out = vec![T::zero(); shape.numel()];
        let mut probs = if tracked {
            vec![T::zero(); batches * lq * lk]
        } else {
            Vec::new()
        };
        let (qd, kd, vd) = (self.value().data(), k.value().data(), v.value().data());
        // Per batch: S = Q·Kᵀ, P = softmax(S·scale), Oᵀ = Vᵀ·Pᵀ. Operands are
        // transposed so the inner loops run over the key length.
        let mut kt = vec![T::zero(); d * lk];
        let mut vt = vec![T::zero(); dv * lk];
        let mut p = vec![T::zero(); lq * lk];
        let mut ot = vec![T::zero(); dv * lq];
        for b in 0..batches {
            transpose(&kd[b * lk * d..(b + 1) * lk * d], lk, d, &mut kt);
            transpose(&vd[b * lk * dv..(b + 1) * lk * dv], lk, dv, &mut vt);
            p.iter_mut().for_each(|x| *x = T::zero());
            gemm_nn(&qd[b * lq * d..(b + 1) * lq * d], &kt, &mut p, lq, d, lk);
            for row in p.chunks_exact_mut(lk) {
                row.iter_mut().for_each(|x| *x *= scale);
                softmax_row(row);
            }
            ot.iter_mut().for_each(|x| *x = T::zero());
            gemm_nt(&vt, &p, &mut ot, dv, lk, lq);
            transpose(&ot, dv, lq, &mut out[b * lq * dv..(b + 1) * lq * dv]);
            if tracked {
                probs[b * lq * lk..(b + 1) * lq * lk].copy_from_slice(&p);
            }
        }
        self.tape().count_macs((batches * lq * lk * (d + dv)) as u64);
        let out = Tensor::new(shape, out)?;
        Ok(self.tape().record(&[self, k, v], out, move |ctx| {
            let g = ctx.grad().data();
            let (qd, kd, vd) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
            let mut gq = vec![T::zero(); qd.len()];
            let mut gk = vec![T::zero(); kd.len()];
            let mut gv = vec![T::zero(); vd.len()];
            let mut kt = vec![T::zero(); d * lk];
            let mut vt = vec![T::zero(); dv * lk];
            let mut qt = vec![T::zero(); d * lq];
            let mut gt = vec![T::zero(); dv * lq];
            let mut ds = vec![T::zero(); lq * lk];
            let mut tmp = vec![T::zero(); d.max(dv) * lk];
            for b in 0..batches {
                let p = &probs[b * lq * lk..(b + 1) * lq * lk];
                let gb = &g[b * lq * dv..(b + 1) * lq * dv];
                transpose(&kd[b * lk * d..(b + 1) * lk * d], lk, d, &mut kt);
                transpose(&vd[b * lk * dv..(b + 1) * lk * dv], lk, dv, &mut vt);
                transpose(&qd[b * lq * d..(b + 1) * lq * d], lq, d, &mut qt);
                transpose(gb, lq, dv, &mut gt);
                // dP = G·Vᵀ, dS = P ⊙ (dP − Σ_j P⊙dP)·scale
                ds.iter_mut().for_each(|x| *x = T::zero());
                gemm_nn(gb, &vt, &mut ds, lq, dv, lk);
                for (dsr, pr) in ds.chunks_exact_mut(lk).zip(p.chunks_exact(lk)) {
                    let s = dot(pr, dsr);
                    for (x, &pj) in dsr.iter_mut().zip(pr) {
                        *x = pj * (*x - s) * scale;
                    }
                }
                // dQ = dS·K
                gemm_nt(&ds, &kt, &mut gq[b * lq * d..(b + 1) * lq * d], lq, lk, d);
                // dKᵀ = Qᵀ·dS
                let t = &mut tmp[..d * lk];
                t.iter_mut().for_each(|x| *x = T::zero());
                gemm_nn(&qt, &ds, t, d, lq, lk);
                transpose(t, d, lk, &mut gk[b * lk * d..(b + 1) * lk * d]);
                // dVᵀ = Gᵀ·P
                let t = &mut tmp[..dv * lk];
                t.iter_mut().for_each(|x| *x = T::zero());
                gemm_nn(&gt, p, t, dv, lq, lk);
                transpose(t, dv, lk, &mut gv[b * lk * dv..(b + 1) * lk * dv]);
            }
            for (i, gi) in [gq, gk, gv].into_iter().enumerate() {
                if ctx.wants(i) {
                    ctx.accumulate(i, gi);
                }
            }
        }))
    }
}

/// Writes the transpose of row-major `a (rows × cols)` into `out (cols × rows)`.
fn transpose<T: Element>(a: &[T], rows: usize, cols: usize, out: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}

pub(crate) fn softmax_row<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Attention probabilities `softmax(q·kᵀ·scale)` as a plain tensor
/// `(n, c, Lq, Lk)`; used for inspection, not differentiated.
pub fn attention_probs<T: Element>(q: &Tensor<T>, k: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    let (sq, sk) = (q.shape(), k.shape());
    if sq.n != sk.n || sq.c != sk.c || sq.w != sk.w {
        return Err(TensorError::ShapeMismatch {
            op: "attention_probs",
            lhs: sq,
            rhs: sk,
        });
    }
    let (lq, lk, d) = (sq.h, sk.h, sq.w);
    let shape = Shape::new(sq.n, sq.c, lq, lk)?;
    let mut out = vec![T::zero(); shape.numel()];
    for b in 0..sq.n * sq.c {
        for i in 0..lq {
            let qi = &q.data()[(b * lq + i) * d..(b * lq + i + 1) * d];
            let row = &mut out[(b * lq + i) * lk..(b * lq + i + 1) * lk];
            for (j, r) in row.iter_mut().enumerate() {
                *r = dot(qi, &k.data()[(b * lk + j) * d..(b * lk + j + 1) * d]) * scale;
            }
            softmax_row(row);
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn permute_tensor<T: Element>(x: &Tensor<T>, axes: [usize; 4]) -> Tensor<T> {
    let d = x.shape().dims();
    let od = [d[axes[0]], d[axes[1]], d[axes[2]], d[axes[3]]];
    let in_strides = [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
    let s = [
        in_strides[axes[0]],
        in_strides[axes[1]],
        in_strides[axes[2]],
        in_strides[axes[3]],
    ];
    let src = x.data();
    let mut data = Vec::with_capacity(src.len());
    for a in 0..od[0] {
        for b in 0..od[1] {
            for c in 0..od[2] {
                let base = a * s[0] + b * s[1] + c * s[2];
                for e in 0..od[3] {
                    data.push(src[base + e * s[3]]);
                }
            }
        }
    }
    Tensor::from_dims(od, data).expect("permutation preserves element count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn t(dims: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::from_dims(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn add_small_matrices() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t([1, 1, 2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t([1, 1, 2, 2], &[1., 1., 1., 1.]));
        assert_eq!(a.add(&b).unwrap().value().data(), &[2., 3., 4., 5.]);
        let z = tape.constant(Tensor::zeros(a.shape()));
        assert_eq!(a.add(&z).unwrap().value(), a.value());
    }

    #[test]
    fn add_rejects_bad_broadcast_and_names_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(Shape::new(1, 3, 2, 2).unwrap()));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 2, 1, 1).unwrap()));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("(1, 3, 2, 2)") && err.contains("(1, 2, 1, 1)"), "{err}");
    }

    #[test]
    fn per_channel_bias_gradient_sums_over_broadcast() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::ones(Shape::new(2, 3, 2, 2).unwrap()));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 3, 1, 1).unwrap()));
        let y = a.add(&b).unwrap().sum_all();
        tape.backward(&y).unwrap();
        assert_eq!(tape.grad(&b).unwrap().data(), &[8., 8., 8.]);
        assert_eq!(tape.grad(&a).unwrap().data(), &[1.0; 24]);
    }

    #[test]
    fn matmul_by_hand() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t([1, 1, 2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t([1, 1, 2, 2], &[5., 6., 7., 8.]));
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[19., 22., 43., 50.]);
        let eye = tape.constant(t([1, 1, 3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let x = tape.constant(t([1, 1, 3, 2], &[1., 2., 3., 4., 5., 6.]));
        assert_eq!(eye.matmul(&x).unwrap().value(), x.value());
        assert!(x.matmul(&x).is_err());
    }

    #[test]
    fn softmax_rows() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 1, 1, 4], &[0.; 4]));
        assert_eq!(x.softmax_last().unwrap().value().data(), &[0.25; 4]);
        let big = tape.constant(t([1, 1, 1, 2], &[1000., 0.]));
        let y = big.softmax_last().unwrap();
        assert_eq!(y.value().data(), &[1.0, 0.0]);
        let nan = tape.constant(t([1, 1, 1, 2], &[f64::NAN, 0.]));
        assert!(nan.softmax_last().is_err());
    }

    #[test]
    fn relu_concat_scale_backward() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t([1, 1, 1, 3], &[-1., 0., 2.]));
        assert_eq!(x.relu().value().data(), &[0., 0., 2.]);
        let y = x.relu().sum_all();
        tape.backward(&y).unwrap();
        // subgradient at exactly 0 is 0
        assert_eq!(tape.grad(&x).unwrap().data(), &[0., 0., 1.]);

        let a = tape.constant(Tensor::zeros(Shape::new(1, 3, 8, 8).unwrap()));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 5, 8, 8).unwrap()));
        assert_eq!(a.concat_channels(&b).unwrap().shape(), Shape::new(1, 8, 8, 8).unwrap());
        let c = tape.constant(Tensor::zeros(Shape::new(1, 5, 4, 8).unwrap()));
        assert!(a.concat_channels(&c).is_err());
    }

    #[test]
    fn backward_contracts() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 1, 2, 2).unwrap(), 0.3));
        let loss = x.sum_all();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[1.0; 4]);
        // accumulation without reset
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[2.0; 4]);
        tape.zero_grad();
        let l3 = x.scale(3.0).sum_all();
        tape.backward(&l3).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[3.0; 4]);
        assert!(matches!(tape.backward(&x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t([1, 1, 1, 2], &[1.5, -2.0]));
        let y = x.mul(&x).unwrap().sum_all();
        tape.backward(&y).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let x = tape.leaf(t([1, 1, 1, 2], &[1., 2.]));
        let y = x.relu().sum_all();
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
        assert_eq!(y.value().item(), 3.0);
    }

    #[test]
    fn fused_attention_matches_composed_ops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut r = |d: [usize; 4]| {
            let s = Shape::from_dims(d).unwrap();
            Tensor::from_fn(s, |_, _, _, _| rng.gen_range(-1.0..1.0))
        };
        let (q, k, v) = (r([2, 3, 5, 4]), r([2, 3, 6, 4]), r([2, 3, 6, 2]));
        let tape = Tape::<f64>::new();
        let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
        let fused = qv.attention(&kv, &vv, 0.5).unwrap();
        let kt = kv.permute([0, 1, 3, 2]).unwrap();
        let composed = qv
            .matmul(&kt)
            .unwrap()
            .scale(0.5)
            .softmax_last()
            .unwrap()
            .matmul(&vv)
            .unwrap();
        assert!(fused.value().max_abs_diff(composed.value()) < 1e-12);
        let probs = attention_probs(&q, &k, 0.5).unwrap();
        for row in probs.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 5).unwrap(), |n, c, h, w| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        });
        let p = permute_tensor(&x, [0, 2, 3, 1]);
        assert_eq!(p.shape().dims(), [2, 4, 5, 3]);
        assert_eq!(p.at(1, 2, 3, 1), x.at(1, 1, 2, 3));
        assert_eq!(permute_tensor(&p, [0, 3, 1, 2]), x);
    }
}
