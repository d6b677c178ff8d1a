//! Tape-recorded tensor operations.
//!
//! Every op computes its forward value eagerly and, when an input is tracked,
//! records a backward closure on the tape. Closures capture `Arc` clones of
//! whatever forward data they need, so tensors stay cheap to clone and the
//! recorded graph owns its inputs.

use std::sync::Arc;

use super::la;
use super::tape::{merged_tape, BackFn, Tape};
use super::{Element, Shape, Tensor};
use crate::error::{AruError, Result};

fn shape_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(AruError::ShapeMismatch { op, detail })
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape().dims() != b.shape().dims() {
        return shape_err(op, format!("{} vs {}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Wraps forward data as the op result, recording `backward` when a tape is
/// present.
fn finish<T: Element>(
    tape: Option<Tape<T>>,
    data: Arc<Vec<T>>,
    shape: Shape,
    backward: impl FnOnce() -> BackFn<T>,
) -> Tensor<T> {
    match tape {
        Some(tape) => tape.record(data, shape, backward()),
        None => Tensor::with_node(data, shape, None),
    }
}

impl<T: Element> Tensor<T> {
    /// Elementwise unary op whose derivative is a function of the *output*.
    fn map_from_output(
        &self,
        f: impl Fn(T) -> T,
        dfdy: impl Fn(T) -> T + 'static,
    ) -> Tensor<T> {
        let out: Arc<Vec<T>> = Arc::new(self.data().iter().map(|&v| f(v)).collect());
        let tape = self.tape().cloned();
        let id = self.node_id();
        let y = Arc::clone(&out);
        finish(tape, out, self.shape().clone(), move || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    let dx = store.accum(id, g.len());
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y.iter()) {
                        *d = *d + gv * dfdy(yv);
                    }
                }
            })
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let tape = merged_tape(&[self, other])?;
        let (ia, ib) = (self.node_id(), other.node_id());
        Ok(finish(tape, Arc::new(data), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = ia {
                    la::axpy(T::one(), g, store.accum(id, g.len()));
                }
                if let Some(id) = ib {
                    la::axpy(T::one(), g, store.accum(id, g.len()));
                }
            })
        }))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let tape = merged_tape(&[self, other])?;
        let (ia, ib) = (self.node_id(), other.node_id());
        Ok(finish(tape, Arc::new(data), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = ia {
                    la::axpy(T::one(), g, store.accum(id, g.len()));
                }
                if let Some(id) = ib {
                    la::axpy(T::zero() - T::one(), g, store.accum(id, g.len()));
                }
            })
        }))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let tape = merged_tape(&[self, other])?;
        let (ia, ib) = (self.node_id(), other.node_id());
        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(finish(tape, Arc::new(data), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = ia {
                    let dx = store.accum(id, g.len());
                    for ((d, &gv), &bv) in dx.iter_mut().zip(g).zip(b.iter()) {
                        *d = *d + gv * bv;
                    }
                }
                if let Some(id) = ib {
                    let dx = store.accum(id, g.len());
                    for ((d, &gv), &av) in dx.iter_mut().zip(g).zip(a.iter()) {
                        *d = *d + gv * av;
                    }
                }
            })
        }))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v * c).collect();
        let tape = self.tape().cloned();
        let id = self.node_id();
        finish(tape, Arc::new(data), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    la::axpy(c, g, store.accum(id, g.len()));
                }
            })
        })
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v + c).collect();
        let tape = self.tape().cloned();
        let id = self.node_id();
        finish(tape, Arc::new(data), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    la::axpy(T::one(), g, store.accum(id, g.len()));
                }
            })
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        // NaN must pass through rather than flush to zero: `NaN > 0` is false,
        // and silently zeroing would hide numerical corruption from the
        // stage-level finiteness checks.
        self.map_from_output(
            |v| {
                if v.as_f64().is_nan() {
                    v
                } else if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            },
            |y| if y > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map_from_output(
            |v| T::one() / (T::one() + (-v).exp()),
            |y| y * (T::one() - y),
        )
    }

    /// `1 / sqrt(x + eps)`, elementwise. Inputs must satisfy `x + eps > 0`.
    pub fn rsqrt_eps(&self, eps: T) -> Tensor<T> {
        let half = T::from_f64(0.5);
        self.map_from_output(
            move |v| T::one() / (v + eps).sqrt(),
            move |y| -half * y * y * y,
        )
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let tape = self.tape().cloned();
        let id = self.node_id();
        let n = self.numel();
        Ok(finish(tape, Arc::new(vec![total]), Shape::from([1]), || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    let g0 = g[0];
                    for d in store.accum(id, n) {
                        *d = *d + g0;
                    }
                }
            })
        }))
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        if self.numel() == 0 {
            return Err(AruError::InvalidArgument("mean_all of empty tensor".into()));
        }
        let inv = T::one() / T::from_f64(self.numel() as f64);
        Ok(self.sum_all()?.scale(inv))
    }

    /// Reduces `[n, c, h, w]` over batch and space, returning `[c]`.
    pub fn sum_channels(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().dims4("sum_channels")?;
        let hw = h * w;
        let x = self.data();
        let mut out = vec![T::zero(); c];
        for ni in 0..n {
            for (ci, o) in out.iter_mut().enumerate() {
                let base = (ni * c + ci) * hw;
                for &v in &x[base..base + hw] {
                    *o = *o + v;
                }
            }
        }
        let tape = self.tape().cloned();
        let id = self.node_id();
        let numel = self.numel();
        Ok(finish(tape, Arc::new(out), Shape::from([c]), || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    let dx = store.accum(id, numel);
                    for ni in 0..n {
                        for (ci, &gv) in g.iter().enumerate() {
                            let base = (ni * c + ci) * hw;
                            for d in &mut dx[base..base + hw] {
                                *d = *d + gv;
                            }
                        }
                    }
                }
            })
        }))
    }

    /// Multiplies `[n, c, h, w]` by a per-channel vector `[c]`.
    pub fn mul_channel(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().dims4("mul_channel")?;
        let vc = v.shape().dims1("mul_channel")?;
        if vc != c {
            return shape_err("mul_channel", format!("{} channels vs vector {}", c, vc));
        }
        let hw = h * w;
        let x = self.data();
        let vd = v.data();
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let s = vd[ci];
                for (o, &xv) in out[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
                    *o = xv * s;
                }
            }
        }
        let tape = merged_tape(&[self, v])?;
        let (ix, iv) = (self.node_id(), v.node_id());
        let (xa, va) = (self.data_arc(), v.data_arc());
        Ok(finish(tape, Arc::new(out), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = ix {
                    let dx = store.accum(id, xa.len());
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            la::axpy(va[ci], &g[base..base + hw], &mut dx[base..base + hw]);
                        }
                    }
                }
                if let Some(id) = iv {
                    let dv = store.accum(id, c);
                    for ni in 0..n {
                        for (ci, dvi) in dv.iter_mut().enumerate() {
                            let base = (ni * c + ci) * hw;
                            *dvi = *dvi + la::dot(&g[base..base + hw], &xa[base..base + hw]);
                        }
                    }
                }
            })
        }))
    }

    /// Adds a per-channel vector `[c]` to `[n, c, h, w]`.
    pub fn add_channel(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().dims4("add_channel")?;
        let vc = v.shape().dims1("add_channel")?;
        if vc != c {
            return shape_err("add_channel", format!("{} channels vs vector {}", c, vc));
        }
        let hw = h * w;
        let x = self.data();
        let vd = v.data();
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let s = vd[ci];
                for (o, &xv) in out[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
                    *o = xv + s;
                }
            }
        }
        let tape = merged_tape(&[self, v])?;
        let (ix, iv) = (self.node_id(), v.node_id());
        let numel = self.numel();
        Ok(finish(tape, Arc::new(out), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = ix {
                    la::axpy(T::one(), g, store.accum(id, numel));
                }
                if let Some(id) = iv {
                    let dv = store.accum(id, c);
                    for ni in 0..n {
                        for (ci, dvi) in dv.iter_mut().enumerate() {
                            let base = (ni * c + ci) * hw;
                            *dvi = *dvi
                                + g[base..base + hw].iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                }
            })
        }))
    }

    /// Multiplies `[n, c, h, w]` by a single-channel map `[n, 1, h, w]`,
    /// broadcasting over channels.
    pub fn mul_gate(&self, gate: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.shape().dims4("mul_gate")?;
        let (gn, gc, gh, gw) = gate.shape().dims4("mul_gate")?;
        if (gn, gc, gh, gw) != (n, 1, h, w) {
            return shape_err(
                "mul_gate",
                format!("input {} vs gate {}", self.shape(), gate.shape()),
            );
        }
        let hw = h * w;
        let x = self.data();
        let gd = gate.data();
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            let gplane = &gd[ni * hw..(ni + 1) * hw];
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for ((o, &xv), &gv) in out[base..base + hw]
                    .iter_mut()
                    .zip(&x[base..base + hw])
                    .zip(gplane)
                {
                    *o = xv * gv;
                }
            }
        }
        let tape = merged_tape(&[self, gate])?;
        let (ix, ig) = (self.node_id(), gate.node_id());
        let (xa, ga) = (self.data_arc(), gate.data_arc());
        Ok(finish(tape, Arc::new(out), self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = ix {
                    let dx = store.accum(id, xa.len());
                    for ni in 0..n {
                        let gplane = &ga[ni * hw..(ni + 1) * hw];
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            for ((d, &gv), &gatev) in dx[base..base + hw]
                                .iter_mut()
                                .zip(&g[base..base + hw])
                                .zip(gplane)
                            {
                                *d = *d + gv * gatev;
                            }
                        }
                    }
                }
                if let Some(id) = ig {
                    let dg = store.accum(id, ga.len());
                    for ni in 0..n {
                        let dplane = &mut dg[ni * hw..(ni + 1) * hw];
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            for ((d, &gv), &xv) in dplane
                                .iter_mut()
                                .zip(&g[base..base + hw])
                                .zip(&xa[base..base + hw])
                            {
                                *d = *d + gv * xv;
                            }
                        }
                    }
                }
            })
        }))
    }

    /// Concatenates two `[n, c, h, w]` tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, ca, h, w) = self.shape().dims4("concat_channels")?;
        let (nb, cb, hb, wb) = other.shape().dims4("concat_channels")?;
        if (nb, hb, wb) != (n, h, w) {
            return shape_err(
                "concat_channels",
                format!("{} vs {}", self.shape(), other.shape()),
            );
        }
        let hw = h * w;
        let (a, b) = (self.data(), other.data());
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for ni in 0..n {
            out.extend_from_slice(&a[ni * ca * hw..(ni + 1) * ca * hw]);
            out.extend_from_slice(&b[ni * cb * hw..(ni + 1) * cb * hw]);
        }
        let tape = merged_tape(&[self, other])?;
        let (ia, ib) = (self.node_id(), other.node_id());
        let (an, bn) = (self.numel(), other.numel());
        let shape = Shape::from([n, ca + cb, h, w]);
        Ok(finish(tape, Arc::new(out), shape, || {
            Box::new(move |g, store| {
                let row = (ca + cb) * hw;
                if let Some(id) = ia {
                    let da = store.accum(id, an);
                    for ni in 0..n {
                        la::axpy(
                            T::one(),
                            &g[ni * row..ni * row + ca * hw],
                            &mut da[ni * ca * hw..(ni + 1) * ca * hw],
                        );
                    }
                }
                if let Some(id) = ib {
                    let db = store.accum(id, bn);
                    for ni in 0..n {
                        la::axpy(
                            T::one(),
                            &g[ni * row + ca * hw..(ni + 1) * row],
                            &mut db[ni * cb * hw..(ni + 1) * cb * hw],
                        );
                    }
                }
            })
        }))
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.shape().dims2("matmul")?;
        let (kb, n) = other.shape().dims2("matmul")?;
        if k != kb {
            return shape_err("matmul", format!("{} vs {}", self.shape(), other.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        la::matmul_nn_acc(self.data(), other.data(), m, k, n, &mut out);
        let tape = merged_tape(&[self, other])?;
        let (ia, ib) = (self.node_id(), other.node_id());
        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(finish(tape, Arc::new(out), Shape::from([m, n]), || {
            Box::new(move |g, store| {
                if let Some(id) = ia {
                    la::matmul_nt_acc(g, &b, m, n, k, store.accum(id, m * k));
                }
                if let Some(id) = ib {
                    la::matmul_tn_acc(&a, g, m, k, n, store.accum(id, k * n));
                }
            })
        }))
    }

    /// Batched matmul: `[b, m, k] · [b, k, n] -> [b, m, n]`.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (bs, m, k) = self.shape().dims3("bmm")?;
        let (bsb, kb, n) = other.shape().dims3("bmm")?;
        if bs != bsb || k != kb {
            return shape_err("bmm", format!("{} vs {}", self.shape(), other.shape()));
        }
        let mut out = vec![T::zero(); bs * m * n];
        for bi in 0..bs {
            la::matmul_nn_acc(
                &self.data()[bi * m * k..(bi + 1) * m * k],
                &other.data()[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let tape = merged_tape(&[self, other])?;
        let (ia, ib) = (self.node_id(), other.node_id());
        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(finish(tape, Arc::new(out), Shape::from([bs, m, n]), || {
            Box::new(move |g, store| {
                if let Some(id) = ia {
                    let da = store.accum(id, bs * m * k);
                    for bi in 0..bs {
                        la::matmul_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &b[bi * k * n..(bi + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut da[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                }
                if let Some(id) = ib {
                    let db = store.accum(id, bs * k * n);
                    for bi in 0..bs {
                        la::matmul_tn_acc(
                            &a[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut db[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                }
            })
        }))
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor<T>> {
        let shape = shape.into();
        if shape.numel() != self.numel() {
            return shape_err("reshape", format!("{} -> {}", self.shape(), shape));
        }
        let tape = self.tape().cloned();
        let id = self.node_id();
        let n = self.numel();
        Ok(finish(tape, self.data_arc(), shape, || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    la::axpy(T::one(), g, store.accum(id, n));
                }
            })
        }))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let (bs, r, c) = match self.shape().dims() {
            &[r, c] => (1, r, c),
            &[b, r, c] => (b, r, c),
            _ => {
                return shape_err(
                    "transpose_last2",
                    format!("rank 2 or 3 required, got {}", self.shape()),
                )
            }
        };
        fn tr<T: Element>(src: &[T], bs: usize, r: usize, c: usize) -> Vec<T> {
            let mut out = vec![T::zero(); src.len()];
            for b in 0..bs {
                let s = &src[b * r * c..(b + 1) * r * c];
                let d = &mut out[b * r * c..(b + 1) * r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] = s[i * c + j];
                    }
                }
            }
            out
        }
        let out = tr(self.data(), bs, r, c);
        let mut dims = self.shape().dims().to_vec();
        let rank = dims.len();
        dims.swap(rank - 2, rank - 1);
        let tape = self.tape().cloned();
        let id = self.node_id();
        Ok(finish(tape, Arc::new(out), Shape::from(dims), || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    // transposing the gradient undoes the forward transpose
                    let gt = tr(g, bs, c, r);
                    la::axpy(T::one(), &gt, store.accum(id, bs * r * c));
                }
            })
        }))
    }

    /// Softmax over the last axis, with max subtraction for stability.
    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let dims = self.shape().dims();
        let last = *dims.last().ok_or_else(|| {
            AruError::InvalidArgument("softmax_lastdim on rank-0 tensor".into())
        })?;
        if last == 0 {
            return Err(AruError::InvalidArgument("softmax over empty axis".into()));
        }
        let rows = self.numel() / last;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for ri in 0..rows {
            let src = &x[ri * last..(ri + 1) * last];
            let dst = &mut out[ri * last..(ri + 1) * last];
            let mut m = src[0];
            for &v in &src[1..] {
                if v > m {
                    m = v;
                }
            }
            let mut z = T::zero();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - m).exp();
                z = z + *d;
            }
            let inv = T::one() / z;
            for d in dst.iter_mut() {
                *d = *d * inv;
            }
        }
        let out = Arc::new(out);
        let tape = self.tape().cloned();
        let id = self.node_id();
        let y = Arc::clone(&out);
        Ok(finish(tape, out, self.shape().clone(), || {
            Box::new(move |g, store| {
                if let Some(id) = id {
                    let dx = store.accum(id, y.len());
                    for ri in 0..rows {
                        let span = ri * last..(ri + 1) * last;
                        let yr = &y[span.clone()];
                        let gr = &g[span.clone()];
                        let s = la::dot(gr, yr);
                        for ((d, &gv), &yv) in dx[span].iter_mut().zip(gr).zip(yr) {
                            *d = *d + yv * (gv - s);
                        }
                    }
                }
            })
        }))
    }
}

/// Mean binary cross-entropy between predicted probabilities and targets in
/// `[0, 1]`. Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the logs;
/// gradients flow to `pred` only.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("bce_loss", pred, target)?;
    if pred.numel() == 0 {
        return Err(AruError::InvalidArgument("bce_loss of empty tensors".into()));
    }
    let eps = T::from_f64(1e-7);
    let hi = T::one() - eps;
    let clamp = move |p: T| {
        if p < eps {
            eps
        } else if p > hi {
            hi
        } else {
            p
        }
    };
    let n = T::from_f64(pred.numel() as f64);
    let mut total = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let pc = clamp(p);
        total = total - (t * pc.ln() + (T::one() - t) * (T::one() - pc).ln());
    }
    let loss = total / n;
    let tape = pred.tape().cloned();
    let id = pred.node_id();
    let (pa, ta) = (pred.data_arc(), target.data_arc());
    Ok(finish(tape, Arc::new(vec![loss]), Shape::from([1]), || {
        Box::new(move |g, store| {
            if let Some(id) = id {
                let g0 = g[0];
                let dx = store.accum(id, pa.len());
                for ((d, &p), &t) in dx.iter_mut().zip(pa.iter()).zip(ta.iter()) {
                    let pc = clamp(p);
                    *d = *d + g0 * (pc - t) / (pc * (T::one() - pc) * n);
                }
            }
        })
    }))
}
