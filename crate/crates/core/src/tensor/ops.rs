//! Differentiable primitives on [`Var`].
//!
//! Broadcasting is limited to one operand being a suffix of the other's
//! shape (leading-dimension expansion) or holding a single element.

use super::{gemm, GradFn, Real, Tensor, Var};
use crate::error::{Error, Result};

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` (laid out as `shape`) into the axis order `axes`.
pub(crate) fn permute_data<F: Copy>(data: &[F], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<F>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    if n == 0 || rank == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let in_strides = strides(shape);
    let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let last = rank - 1;
    let (inner_n, inner_s) = (out_shape[last], src[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    'outer: loop {
        if inner_s == 1 {
            out.extend_from_slice(&data[base..base + inner_n]);
        } else {
            for j in 0..inner_n {
                out.push(data[base + j * inner_s]);
            }
        }
        let mut d = last;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            idx[d] += 1;
            base += src[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

#[derive(Clone, Copy)]
enum Side {
    Same,
    /// rhs repeats with the given period
    Rhs,
    /// lhs repeats
    Lhs,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Side)> {
    if a == b {
        Ok((a.to_vec(), Side::Same))
    } else if numel(b) == 1 || is_suffix(b, a) {
        Ok((a.to_vec(), Side::Rhs))
    } else if numel(a) == 1 || is_suffix(a, b) {
        Ok((b.to_vec(), Side::Lhs))
    } else {
        Err(Error::shape(op, a, b))
    }
}

/// Sums `g` over the repeats of a broadcast operand with `period` elements.
fn reduce_period<F: Real>(g: &[F], period: usize) -> Vec<F> {
    let mut out = vec![F::zero(); period];
    for chunk in g.chunks(period) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += *v;
        }
    }
    out
}

impl<'t, F: Real> Var<'t, F> {
    fn record(&self, parents: &[Var<'t, F>], value: Tensor<F>, make_grad: impl FnOnce() -> GradFn<F>) -> Var<'t, F> {
        self.tape().custom(parents, value, make_grad)
    }

    fn binary(
        &self,
        rhs: &Var<'t, F>,
        op: &'static str,
        f: fn(F, F) -> F,
        dfa: fn(F, F) -> F,
        dfb: fn(F, F) -> F,
    ) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = rhs.value();
        let (shape, side) = broadcast(op, a.shape(), b.shape())?;
        let n = numel(&shape);
        let (na, nb) = (a.numel(), b.numel());
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<F> = match side {
            Side::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Side::Rhs => (0..n).map(|i| f(ad[i], bd[i % nb])).collect(),
            Side::Lhs => (0..n).map(|i| f(ad[i % na], bd[i])).collect(),
        };
        let value = Tensor::from_parts(shape.clone(), data);
        Ok(self.record(&[*self, *rhs], value, move || {
            Box::new(move |g: &Tensor<F>| {
                let (ad, bd, gd) = (a.data(), b.data(), g.data());
                let ia = |i: usize| if matches!(side, Side::Lhs) { i % na } else { i };
                let ib = |i: usize| if matches!(side, Side::Rhs) { i % nb } else { i };
                let ga: Vec<F> = (0..n).map(|i| gd[i] * dfa(ad[ia(i)], bd[ib(i)])).collect();
                let gb: Vec<F> = (0..n).map(|i| gd[i] * dfb(ad[ia(i)], bd[ib(i)])).collect();
                let ga = match side {
                    Side::Lhs => reduce_period(&ga, na),
                    _ => ga,
                };
                let gb = match side {
                    Side::Rhs => reduce_period(&gb, nb),
                    _ => gb,
                };
                vec![
                    Some(Tensor::from_parts(a.shape().to_vec(), ga)),
                    Some(Tensor::from_parts(b.shape().to_vec(), gb)),
                ]
            })
        }))
    }

    pub fn add(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| F::one(), |_, _| F::one())
    }

    pub fn sub(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| F::one(), |_, _| -F::one())
    }

    pub fn mul(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "div", |a, b| a / b, |_, b| F::one() / b, |a, b| -a / (b * b))
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(&self, f: impl Fn(F) -> F, df: impl Fn(F, F) -> F + 'static) -> Var<'t, F> {
        let x = self.value();
        let y = x.map(f);
        let yc = y.clone();
        self.record(&[*self], y, move || {
            Box::new(move |g: &Tensor<F>| {
                let data = x
                    .data()
                    .iter()
                    .zip(yc.data())
                    .zip(g.data())
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
            })
        })
    }

    pub fn scale(&self, c: F) -> Var<'t, F> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: F) -> Var<'t, F> {
        self.unary(move |x| x + c, |_, _| F::one())
    }

    pub fn neg(&self) -> Var<'t, F> {
        self.scale(-F::one())
    }

    pub fn square(&self) -> Var<'t, F> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn exp(&self) -> Var<'t, F> {
        self.unary(F::exp, |_, y| y)
    }

    pub fn log(&self) -> Var<'t, F> {
        self.unary(F::ln, |x, _| F::one() / x)
    }

    pub fn sqrt(&self) -> Var<'t, F> {
        self.unary(F::sqrt, |_, y| F::lit(0.5) / y)
    }

    pub fn sigmoid(&self) -> Var<'t, F> {
        self.unary(sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn tanh(&self) -> Var<'t, F> {
        self.unary(F::tanh, |_, y| F::one() - y * y)
    }

    pub fn relu(&self) -> Var<'t, F> {
        self.unary(
            |x| x.max(F::zero()),
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn softplus(&self) -> Var<'t, F> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t, F> {
        self.unary(gelu, gelu_grad)
    }

    /// `A @ B` over matching leading dims; a rank-2 `rhs` is shared by every
    /// leading index of `self`.
    pub fn matmul(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.bmm(rhs, false)
    }

    /// `A @ B^T`, with `rhs` shaped `[..., n, k]`.
    pub fn matmul_t(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.bmm(rhs, true)
    }

    fn bmm(&self, rhs: &Var<'t, F>, trans_b: bool) -> Result<Var<'t, F>> {
        let op = if trans_b { "matmul_t" } else { "matmul" };
        let a = self.value();
        let b = rhs.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape(op, &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        let shared = sb.len() == 2;
        if k != kb || (!shared && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(Error::shape(op, &sa, &sb));
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut c = vec![F::zero(); batch * m * n];
        if shared {
            gemm(batch * m, k, n, a.data(), false, b.data(), trans_b, F::zero(), &mut c);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..],
                    false,
                    &b.data()[i * k * n..],
                    trans_b,
                    F::zero(),
                    &mut c[i * m * n..],
                );
            }
        }
        let value = Tensor::from_parts(out_shape, c);
        Ok(self.record(&[*self, *rhs], value, move || {
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let mut ga = vec![F::zero(); a.numel()];
                let mut gb = vec![F::zero(); b.numel()];
                if shared {
                    let rows = batch * m;
                    // dA = dC B^T
                    gemm(rows, n, k, gd, false, b.data(), !trans_b, F::zero(), &mut ga);
                    if trans_b {
                        // B stored [n,k]: dB = dC^T A
                        gemm(n, rows, k, gd, true, a.data(), false, F::zero(), &mut gb);
                    } else {
                        gemm(k, rows, n, a.data(), true, gd, false, F::zero(), &mut gb);
                    }
                } else {
                    for i in 0..batch {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let ai = &a.data()[i * m * k..(i + 1) * m * k];
                        let bi = &b.data()[i * k * n..(i + 1) * k * n];
                        gemm(m, n, k, gi, false, bi, !trans_b, F::zero(), &mut ga[i * m * k..]);
                        if trans_b {
                            gemm(n, m, k, gi, true, ai, false, F::zero(), &mut gb[i * k * n..]);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, F::zero(), &mut gb[i * k * n..]);
                        }
                    }
                }
                vec![
                    Some(Tensor::from_parts(a.shape().to_vec(), ga)),
                    Some(Tensor::from_parts(b.shape().to_vec(), gb)),
                ]
            })
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let value = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.record(&[*self], value, move || {
            Box::new(move |g: &Tensor<F>| vec![Some(g.reshape(&orig).expect("reshape grad"))])
        }))
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", x.shape(), axes));
        }
        let (shape, data) = permute_data(x.data(), x.shape(), axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.record(&[*self], Tensor::from_parts(shape, data), move || {
            Box::new(move |g: &Tensor<F>| {
                let (s, d) = permute_data(g.data(), g.shape(), &inverse);
                vec![Some(Tensor::from_parts(s, d))]
            })
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t, F>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(Error::shape("transpose", &self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    pub fn concat(parts: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let values: Vec<Tensor<F>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let chunks: Vec<usize> = values.iter().map(|v| v.shape()[axis] * inner).collect();
        let total: usize = chunks.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (v, &c) in values.iter().zip(&chunks) {
                data.extend_from_slice(&v.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.record(parts, Tensor::from_parts(shape, data), move || {
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let mut outs: Vec<Vec<F>> = chunks.iter().map(|c| Vec::with_capacity(c * outer)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (out, &c) in outs.iter_mut().zip(&chunks) {
                        out.extend_from_slice(&gd[off..off + c]);
                        off += c;
                    }
                }
                outs.into_iter()
                    .zip(shapes)
                    .map(|(d, s)| Some(Tensor::from_parts(s, d)))
                    .collect()
            })
        }))
    }

    /// `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("axis {axis} range {start}..{end} out of bounds for shape {shape:?}"),
            ));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let (len, width) = (shape[axis] * inner, (end - start) * inner);
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len + start * inner;
            data.extend_from_slice(&x.data()[base..base + width]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;
        Ok(self.record(&[*self], Tensor::from_parts(out_shape, data), move || {
            Box::new(move |g: &Tensor<F>| {
                let mut gx = vec![F::zero(); outer * len];
                for o in 0..outer {
                    let base = o * len + start * inner;
                    gx[base..base + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                vec![Some(Tensor::from_parts(shape, gx))]
            })
        }))
    }

    pub fn sum_all(&self) -> Var<'t, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let value = Tensor::scalar(x.sum());
        self.record(&[*self], value, move || {
            Box::new(move |g: &Tensor<F>| vec![Some(Tensor::full(&shape, g.item()))])
        })
    }

    pub fn mean_all(&self) -> Var<'t, F> {
        let n = F::lit(self.numel().max(1) as f64);
        self.sum_all().scale(F::one() / n)
    }

    /// Sums out `axis`.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", &shape, &[axis]));
        }
        let outer = numel(&shape[..axis]);
        let n = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut data = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.record(&[*self], Tensor::from_parts(out_shape, data), move || {
            Box::new(move |g: &Tensor<F>| {
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        gx.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::from_parts(shape, gx))]
            })
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, F>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", &self.shape(), &[axis]))?;
        Ok(self.sum_axis(axis)?.scale(F::one() / F::lit(n.max(1) as f64)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t, F>> {
        let x = self.value();
        let c = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax", x.shape(), &[]))?;
        let mut y = x.to_vec();
        for row in y.chunks_mut(c.max(1)) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            let inv = F::one() / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        let yc = y.clone();
        Ok(self.record(&[*self], y, move || {
            Box::new(move |g: &Tensor<F>| {
                let mut gx = vec![F::zero(); yc.numel()];
                for ((gr, yr), out) in g.data().chunks(c).zip(yc.data().chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: F = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(Tensor::from_parts(yc.shape().to_vec(), gx))]
            })
        }))
    }

    /// Layer normalization over the last axis with affine `gain`/`bias`
    /// of shape `[C]`.
    pub fn layer_norm(&self, gain: &Var<'t, F>, bias: &Var<'t, F>, eps: f64) -> Result<Var<'t, F>> {
        let x = self.value();
        let c = *x.shape().last().unwrap_or(&0);
        let (gv, bv) = (gain.value(), bias.value());
        if c == 0 || gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let rows = x.numel() / c;
        let eps = F::lit(eps);
        let inv_c = F::one() / F::lit(c as f64);
        let mut xhat = vec![F::zero(); x.numel()];
        let mut inv_std = vec![F::zero(); rows];
        let mut y = vec![F::zero(); x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<F>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                y[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = x.shape().to_vec();
        Ok(self.record(
            &[*self, *gain, *bias],
            Tensor::from_parts(shape.clone(), y),
            move || {
                Box::new(move |g: &Tensor<F>| {
                    let gd = g.data();
                    let gamma = gv.data();
                    let mut gx = vec![F::zero(); gd.len()];
                    let mut ggain = vec![F::zero(); c];
                    let mut gbias = vec![F::zero(); c];
                    for r in 0..rows {
                        let gr = &gd[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut mean_dh = F::zero();
                        let mut mean_dh_h = F::zero();
                        for j in 0..c {
                            let dh = gr[j] * gamma[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                            ggain[j] += gr[j] * hr[j];
                            gbias[j] += gr[j];
                        }
                        mean_dh *= inv_c;
                        mean_dh_h *= inv_c;
                        for j in 0..c {
                            let dh = gr[j] * gamma[j];
                            gx[r * c + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    vec![
                        Some(Tensor::from_parts(shape, gx)),
                        Some(Tensor::from_parts(vec![c], ggain)),
                        Some(Tensor::from_parts(vec![c], gbias)),
                    ]
                })
            },
        ))
    }

    /// Divides each last-axis row by `max(|row|, eps)`.
    pub fn l2_normalize(&self, eps: f64) -> Result<Var<'t, F>> {
        let x = self.value();
        let c = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("l2_normalize", x.shape(), &[]))?;
        let eps = F::lit(eps);
        let rows = x.numel() / c.max(1);
        let mut norms = vec![F::zero(); rows];
        let mut y = x.to_vec();
        for (r, row) in y.chunks_mut(c).enumerate() {
            let n = row.iter().map(|v| *v * *v).sum::<F>().sqrt().max(eps);
            norms[r] = n;
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        let yc = y.clone();
        Ok(self.record(&[*self], y, move || {
            Box::new(move |g: &Tensor<F>| {
                let mut gx = vec![F::zero(); g.numel()];
                for r in 0..rows {
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let yr = &yc.data()[r * c..(r + 1) * c];
                    let n = norms[r];
                    let clamped = n <= eps;
                    let dot: F = if clamped {
                        F::zero()
                    } else {
                        gr.iter().zip(yr).map(|(a, b)| *a * *b).sum()
                    };
                    for j in 0..c {
                        gx[r * c + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                vec![Some(Tensor::from_parts(yc.shape().to_vec(), gx))]
            })
        }))
    }

    /// Strided patch extraction on `[B, H, W, C]` with zero padding. Output
    /// is `[B, Ho, Wo, k*k*C]` with features ordered `(ky, kx, c)`.
    pub fn unfold(&self, kernel: usize, stride: usize, pad: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[1] + 2 * pad < kernel || s[2] + 2 * pad < kernel {
            return Err(Error::shape("unfold", &s, &[kernel, stride, pad]));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let ho = (h + 2 * pad - kernel) / stride + 1;
        let wo = (w + 2 * pad - kernel) / stride + 1;
        let feat = kernel * kernel * c;
        // source offset per output element, or usize::MAX for padding
        let mut index = Vec::with_capacity(b * ho * wo * feat);
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                            for ci in 0..c {
                                index.push(if inside {
                                    ((bi * h + iy as usize) * w + ix as usize) * c + ci
                                } else {
                                    usize::MAX
                                });
                            }
                        }
                    }
                }
            }
        }
        let xd = x.data();
        let data = index
            .iter()
            .map(|&i| if i == usize::MAX { F::zero() } else { xd[i] })
            .collect();
        let value = Tensor::from_parts(vec![b, ho, wo, feat], data);
        Ok(self.record(&[*self], value, move || {
            Box::new(move |g: &Tensor<F>| {
                let mut gx = vec![F::zero(); b * h * w * c];
                for (&i, &gv) in index.iter().zip(g.data()) {
                    if i != usize::MAX {
                        gx[i] += gv;
                    }
                }
                vec![Some(Tensor::from_parts(s, gx))]
            })
        }))
    }

    /// Selects rows (first-axis entries) by index; repeats allowed.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let s = x.shape().to_vec();
        let n = *s.first().ok_or_else(|| Error::shape("gather_rows", &s, &[]))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(
                "gather_rows",
                format!("index {bad} out of range for {n} rows"),
            ));
        }
        let row = numel(&s[1..]);
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let mut out_shape = s.clone();
        out_shape[0] = indices.len();
        let indices = indices.to_vec();
        Ok(self.record(&[*self], Tensor::from_parts(out_shape, data), move || {
            Box::new(move |g: &Tensor<F>| {
                let gx = scatter_add(g.data(), &indices, n, row);
                vec![Some(Tensor::from_parts(s, gx))]
            })
        }))
    }

    /// Adds row `i` of `self` into row `indices[i]` of a zero `[n, ...]` output.
    pub fn scatter_add_rows(&self, indices: &[usize], n: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.first() != Some(&indices.len()) || indices.iter().any(|&i| i >= n) {
            return Err(Error::shape("scatter_add_rows", &s, &[indices.len(), n]));
        }
        let row = numel(&s[1..]);
        let data = scatter_add(x.data(), indices, n, row);
        let mut out_shape = s.clone();
        out_shape[0] = n;
        let indices = indices.to_vec();
        Ok(self.record(&[*self], Tensor::from_parts(out_shape, data), move || {
            Box::new(move |g: &Tensor<F>| {
                let mut gx = Vec::with_capacity(indices.len() * row);
                for &i in &indices {
                    gx.extend_from_slice(&g.data()[i * row..(i + 1) * row]);
                }
                vec![Some(Tensor::from_parts(s, gx))]
            })
        }))
    }
}

fn scatter_add<F: Real>(src: &[F], indices: &[usize], n: usize, row: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * row];
    for (k, &i) in indices.iter().enumerate() {
        for (o, v) in out[i * row..(i + 1) * row].iter_mut().zip(&src[k * row..(k + 1) * row]) {
            *o += *v;
        }
    }
    out
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

#[inline]
fn gelu<F: Real>(x: F) -> F {
    let u = F::lit(GELU_K) * (x + F::lit(GELU_C) * x * x * x);
    F::lit(0.5) * x * (F::one() + u.tanh())
}

#[inline]
fn gelu_grad<F: Real>(x: F, _y: F) -> F {
    let u = F::lit(GELU_K) * (x + F::lit(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = F::lit(GELU_K) * (F::one() + F::lit(3.0 * GELU_C) * x * x);
    F::lit(0.5) * (F::one() + t) + F::lit(0.5) * x * (F::one() - t * t) * du
}
