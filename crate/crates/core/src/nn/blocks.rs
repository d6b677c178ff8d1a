//! Network building blocks: conv/batch-norm layers, the residual block, the
//! attention gate on skip connections, and the spatial self-attention block.
//!
//! Blocks hold `ParamId`s only; the values live in a [`ParamStore`] so the
//! optimizer and checkpoint code see every parameter in one flat, named list.

use rand::Rng;

use super::init;
use super::params::{BufferId, Fwd, ParamId, ParamStore};
use crate::error::{AruError, Result};
use crate::tensor::conv::{conv2d, conv_transpose2d};
use crate::tensor::{Element, Tensor};

pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = store.add_param(
            format!("{name}.weight"),
            [cout, cin, k, k],
            init::kaiming(rng, cout * cin * k * k, fan_in),
        );
        let b = bias.then(|| store.add_param(format!("{name}.bias"), [cout], init::zeros(cout)));
        Conv2dLayer {
            w,
            b,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn forward<T: Element>(&self, fwd: &Fwd<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            fwd.p(self.w),
            self.b.map(|b| fwd.p(b)),
            self.stride,
            self.pad,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    /// Forward FLOPs (2·MACs) at the given input spatial size.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let oh = (h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.k) / self.stride + 1;
        2 * (self.k * self.k * self.cin * self.cout * oh * ow) as u64
    }
}

/// Stride-2, 2x2-kernel transposed convolution: exact spatial doubling.
pub struct UpConv2x {
    pub w: ParamId,
    pub b: ParamId,
    cin: usize,
    cout: usize,
}

impl UpConv2x {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        let w = store.add_param(
            format!("{name}.weight"),
            [cin, cout, 2, 2],
            init::kaiming(rng, cin * cout * 4, cin * 4),
        );
        let b = store.add_param(format!("{name}.bias"), [cout], init::zeros(cout));
        UpConv2x { w, b, cin, cout }
    }

    pub fn forward<T: Element>(&self, fwd: &Fwd<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv_transpose2d(x, fwd.p(self.w), Some(fwd.p(self.b)))
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        2 * (4 * self.cin * self.cout * h * w) as u64
    }
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    features: usize,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        let gamma = store.add_param(format!("{name}.gamma"), [features], init::ones(features));
        let beta = store.add_param(format!("{name}.beta"), [features], init::zeros(features));
        let running_mean = store.add_buffer(
            format!("{name}.running_mean"),
            [features],
            init::zeros(features),
        );
        let running_var = store.add_buffer(
            format!("{name}.running_var"),
            [features],
            init::ones(features),
        );
        BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
            features,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<T: Element>(&self, fwd: &mut Fwd<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.shape().dims4("batchnorm2d")?;
        if c != self.features {
            return Err(AruError::ShapeMismatch {
                op: "batchnorm2d",
                detail: format!("{c} channels vs {} features", self.features),
            });
        }
        let eps = T::from_f64(self.eps);
        if fwd.training() {
            let count = (n * h * w) as f64;
            let inv_count = T::from_f64(1.0 / count);
            // batch statistics stay on the tape: gradients flow through the
            // normalization itself, not just the affine part
            let mean = x.sum_channels()?.scale(inv_count);
            let centered = x.add_channel(&mean.scale(T::from_f64(-1.0)))?;
            let var = centered.mul(&centered)?.sum_channels()?.scale(inv_count);
            let inv_std = var.rsqrt_eps(eps);
            let y = centered
                .mul_channel(&inv_std)?
                .mul_channel(fwd.p(self.gamma))?
                .add_channel(fwd.p(self.beta))?;

            // running stats use the unbiased variance, updated outside the tape
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            let mean_d = mean.data();
            let var_d = var.data();
            let rm = &mut fwd.store.buffer_mut(self.running_mean).value;
            for (r, &b) in rm.iter_mut().zip(mean_d) {
                *r = T::from_f64((1.0 - m) * r.as_f64() + m * b.as_f64());
            }
            let rv = &mut fwd.store.buffer_mut(self.running_var).value;
            for (r, &b) in rv.iter_mut().zip(var_d) {
                *r = T::from_f64((1.0 - m) * r.as_f64() + m * b.as_f64() * unbiased);
            }
            Ok(y)
        } else {
            // fold running stats and affine params into one scale/shift pair
            let gamma = &fwd.store.param(self.gamma).value;
            let beta = &fwd.store.param(self.beta).value;
            let rm = &fwd.store.buffer(self.running_mean).value;
            let rv = &fwd.store.buffer(self.running_var).value;
            let mut scale = Vec::with_capacity(c);
            let mut shift = Vec::with_capacity(c);
            for i in 0..c {
                let s = gamma[i] / (rv[i] + eps).sqrt();
                scale.push(s);
                shift.push(beta[i] - rm[i] * s);
            }
            let scale = Tensor::from_vec(scale, [c])?;
            let shift = Tensor::from_vec(shift, [c])?;
            x.mul_channel(&scale)?.add_channel(&shift)
        }
    }
}

/// Double 3x3 Conv-BN block; `residual` adds the Eq.-style shortcut (identity
/// when channel counts match, 1x1 conv + BN otherwise).
pub struct ConvBlock {
    pub conv1: Conv2dLayer,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2dLayer,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2dLayer, BatchNorm2d)>,
    residual: bool,
    cout: usize,
}

impl ConvBlock {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        residual: bool,
    ) -> Self {
        let conv1 = Conv2dLayer::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, 1, 1, true);
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), cout);
        let conv2 =
            Conv2dLayer::new(store, rng, &format!("{name}.conv2"), cout, cout, 3, 1, 1, true);
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout);
        let shortcut = (residual && cin != cout).then(|| {
            (
                Conv2dLayer::new(store, rng, &format!("{name}.sc"), cin, cout, 1, 1, 0, true),
                BatchNorm2d::new(store, &format!("{name}.sc_bn"), cout),
            )
        });
        ConvBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
            residual,
            cout,
        }
    }

    pub fn forward<T: Element>(&self, fwd: &mut Fwd<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h1 = self.bn1.forward(fwd, &self.conv1.forward(fwd, x)?)?.relu();
        let main = self.bn2.forward(fwd, &self.conv2.forward(fwd, &h1)?)?;
        if self.residual {
            let skip = match &self.shortcut {
                Some((conv, bn)) => bn.forward(fwd, &conv.forward(fwd, x)?)?,
                None => x.clone(),
            };
            Ok(main.add(&skip)?.relu())
        } else {
            Ok(main.relu())
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let mut total = self.conv1.flops(h, w) + self.conv2.flops(h, w);
        if let Some((conv, _)) = &self.shortcut {
            total += conv.flops(h, w);
        }
        total
    }
}

/// Gated skip connection: a single-channel sigmoid mask computed from the
/// skip feature `x` and the (already upsampled) decoder signal `g`, applied
/// multiplicatively to `x`.
pub struct AttentionGate {
    pub wx: Conv2dLayer,
    pub wg: Conv2dLayer,
    pub psi: Conv2dLayer,
}

impl AttentionGate {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cx: usize,
        cg: usize,
    ) -> Self {
        let cint = (cx / 2).max(1);
        // one bias on the joint space (carried by wg) plus the psi bias
        let wx = Conv2dLayer::new(store, rng, &format!("{name}.wx"), cx, cint, 1, 1, 0, false);
        let wg = Conv2dLayer::new(store, rng, &format!("{name}.wg"), cg, cint, 1, 1, 0, true);
        let psi = Conv2dLayer::new(store, rng, &format!("{name}.psi"), cint, 1, 1, 1, 0, true);
        AttentionGate { wx, wg, psi }
    }

    /// Returns `(alpha ⊙ x, alpha)`; `alpha` is `[n, 1, h, w]` in `[0, 1]`.
    pub fn forward<T: Element>(
        &self,
        fwd: &mut Fwd<T>,
        x: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, _, xh, xw) = x.shape().dims4("attention_gate")?;
        let (_, _, gh, gw) = g.shape().dims4("attention_gate")?;
        if (xh, xw) != (gh, gw) {
            return Err(AruError::ShapeMismatch {
                op: "attention_gate",
                detail: format!("x {} vs g {}", x.shape(), g.shape()),
            });
        }
        let joint = self
            .wx
            .forward(fwd, x)?
            .add(&self.wg.forward(fwd, g)?)?
            .relu();
        let alpha = self.psi.forward(fwd, &joint)?.sigmoid();
        Ok((x.mul_gate(&alpha)?, alpha))
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        self.wx.flops(h, w) + self.wg.flops(h, w) + self.psi.flops(h, w)
    }
}

pub struct AttentionBlockCfg {
    /// Key/query width; `None` picks `max(c/8, 8)`.
    pub dk: Option<usize>,
    pub fusion_kernel: usize,
    pub pre_project: bool,
    /// Largest H·W the quadratic attention matrix is allowed to reach.
    pub hw_cap: usize,
}

impl Default for AttentionBlockCfg {
    fn default() -> Self {
        AttentionBlockCfg {
            dk: None,
            fusion_kernel: 3,
            pre_project: true,
            hw_cap: 4096,
        }
    }
}

/// Spatial self-attention over flattened positions with a residual merge:
/// `y = fusion_conv(x + V·Aᵀ)`, `A = softmax(QᵀK / sqrt(d_k))` row-wise.
pub struct AttentionBlock {
    pub pre: Option<(Conv2dLayer, BatchNorm2d)>,
    pub wq: Conv2dLayer,
    pub wk: Conv2dLayer,
    pub wv: Conv2dLayer,
    pub fusion: Conv2dLayer,
    dk: usize,
    hw_cap: usize,
    c: usize,
}

impl AttentionBlock {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c: usize,
        cfg: AttentionBlockCfg,
    ) -> Self {
        let dk = cfg.dk.unwrap_or_else(|| (c / 8).max(8));
        let pre = cfg.pre_project.then(|| {
            (
                Conv2dLayer::new(store, rng, &format!("{name}.pre"), c, c, 1, 1, 0, true),
                BatchNorm2d::new(store, &format!("{name}.pre_bn"), c),
            )
        });
        let wq = Conv2dLayer::new(store, rng, &format!("{name}.wq"), c, dk, 1, 1, 0, true);
        let wk = Conv2dLayer::new(store, rng, &format!("{name}.wk"), c, dk, 1, 1, 0, true);
        // V projects back to C so the residual merge x + x' typechecks
        let wv = Conv2dLayer::new(store, rng, &format!("{name}.wv"), c, c, 1, 1, 0, true);
        let fk = cfg.fusion_kernel;
        let fusion = Conv2dLayer::new(
            store,
            rng,
            &format!("{name}.fusion"),
            c,
            c,
            fk,
            1,
            fk / 2,
            true,
        );
        AttentionBlock {
            pre,
            wq,
            wk,
            wv,
            fusion,
            dk,
            hw_cap: cfg.hw_cap,
            c,
        }
    }

    pub fn forward<T: Element>(&self, fwd: &mut Fwd<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_detailed(fwd, x)?.0)
    }

    /// Also returns the `[n, hw, hw]` attention matrix (row-stochastic).
    pub fn forward_detailed<T: Element>(
        &self,
        fwd: &mut Fwd<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, c, h, w) = x.shape().dims4("attention_block")?;
        if c != self.c {
            return Err(AruError::ShapeMismatch {
                op: "attention_block",
                detail: format!("{c} channels vs {} expected", self.c),
            });
        }
        let hw = h * w;
        if hw > self.hw_cap {
            return Err(AruError::Unsupported(format!(
                "attention_block spatial size {h}x{w} exceeds cap of {} positions",
                self.hw_cap
            )));
        }
        let z = match &self.pre {
            Some((conv, bn)) => bn.forward(fwd, &conv.forward(fwd, x)?.relu())?,
            None => x.clone(),
        };
        let q = self.wq.forward(fwd, &z)?.reshape([n, self.dk, hw])?;
        let k = self.wk.forward(fwd, &z)?.reshape([n, self.dk, hw])?;
        let v = self.wv.forward(fwd, &z)?.reshape([n, c, hw])?;
        let scores = q
            .transpose_last2()?
            .bmm(&k)?
            .scale(T::from_f64(1.0 / (self.dk as f64).sqrt()));
        let attn = scores.softmax_lastdim()?;
        let xp = v.bmm(&attn.transpose_last2()?)?.reshape([n, c, h, w])?;
        let y = self.fusion.forward(fwd, &x.add(&xp)?)?;
        Ok((y, attn))
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w) as u64;
        let mut total = self.wq.flops(h, w) + self.wk.flops(h, w) + self.wv.flops(h, w);
        if let Some((conv, _)) = &self.pre {
            total += conv.flops(h, w);
        }
        total += self.fusion.flops(h, w);
        // QᵀK and V·Aᵀ batched matmuls
        total += 2 * hw * hw * self.dk as u64;
        total += 2 * hw * hw * self.c as u64;
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check;
    use crate::tensor::tape::Tape;
    use crate::tensor::Mode;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn flat_params(store: &ParamStore<f64>) -> Vec<f64> {
        store.params().iter().flat_map(|p| p.value.clone()).collect()
    }

    fn set_params(store: &mut ParamStore<f64>, flat: &[f64]) {
        let mut at = 0;
        for p in store.params_mut() {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        assert_eq!(at, flat.len());
    }

    #[test]
    fn batchnorm_normalizes_batch_statistics() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let tape = Tape::new();
        let x = tape
            .leaf_from_vec(vec![1.0, 2.0, 3.0, 4.0], [1, 1, 2, 2])
            .unwrap();
        let attached = store.attach(Some(&tape));
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Train,
        };
        let y = bn.forward(&mut fwd, &x).unwrap();
        // mean 2.5, biased var 1.25
        let inv = 1.0 / (1.25f64 + 1e-5).sqrt();
        for (o, v) in y.data().iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert_relative_eq!(*o, (v - 2.5) * inv, max_relative = 1e-10);
        }
        // running stats: momentum 0.1, unbiased var 1.25 * 4/3
        assert_relative_eq!(store.buffers()[0].value[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(
            store.buffers()[1].value[0],
            0.9 + 0.1 * 1.25 * 4.0 / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        store.buffer_mut(bn.running_mean).value[0] = 2.0;
        store.buffer_mut(bn.running_var).value[0] = 4.0;
        let x = Tensor::from_vec(vec![6.0], [1, 1, 1, 1]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let y = bn.forward(&mut fwd, &x).unwrap();
        assert_relative_eq!(y.data()[0], 4.0 / (4.0f64 + 1e-5).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn zeroed_residual_block_is_relu_of_input() {
        let mut store = ParamStore::<f64>::new();
        let block = ConvBlock::new(&mut store, &mut rng(0), "blk", 4, 4, true);
        for p in store.params_mut() {
            p.value.fill(0.0);
        }
        let x = Tensor::from_f64_slice(
            &(0..4 * 9).map(|i| (i as f64 * 0.61).sin()).collect::<Vec<_>>(),
            [1, 4, 3, 3],
        )
        .unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Train,
        };
        let y = block.forward(&mut fwd, &x).unwrap();
        for (o, v) in y.data().iter().zip(x.data()) {
            assert_relative_eq!(*o, v.max(0.0), max_relative = 1e-12);
        }
    }

    #[test]
    fn block_changes_channel_count_only() {
        let mut store = ParamStore::<f32>::new();
        let block = ConvBlock::new(&mut store, &mut rng(1), "blk", 64, 128, true);
        assert!(block.shortcut.is_some());
        let x = Tensor::from_vec(vec![0.5f32; 64 * 16 * 16], [1, 64, 16, 16]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let y = block.forward(&mut fwd, &x).unwrap();
        assert_eq!(y.shape().dims(), &[1, 128, 16, 16]);
    }

    #[test]
    fn plain_block_has_no_shortcut() {
        let mut store = ParamStore::<f32>::new();
        let block = ConvBlock::new(&mut store, &mut rng(1), "blk", 3, 8, false);
        assert!(block.shortcut.is_none());
        assert!(store.params().iter().all(|p| !p.name.contains(".sc")));
    }

    #[test]
    fn residual_block_gradient_check() {
        let run = |flat: &[f64], xv: &[f64]| {
            let mut store = ParamStore::<f64>::new();
            let block = ConvBlock::new(&mut store, &mut rng(7), "blk", 3, 5, true);
            set_params(&mut store, flat);
            let tape = Tape::new();
            let x = tape.leaf_from_vec(xv.to_vec(), [2, 3, 4, 4]).unwrap();
            let attached = store.attach(Some(&tape));
            let mut fwd = Fwd {
                store: &mut store,
                attached: &attached,
                mode: Mode::Train,
            };
            let y = block.forward(&mut fwd, &x).unwrap();
            let loss = y.sigmoid().sum_all().unwrap();
            (tape, x, attached, loss)
        };
        let (flat0, x0) = {
            let mut store = ParamStore::<f64>::new();
            let _ = ConvBlock::new(&mut store, &mut rng(7), "blk", 3, 5, true);
            let x: Vec<f64> = (0..2 * 3 * 16).map(|i| (i as f64 * 0.37).sin()).collect();
            (flat_params(&store), x)
        };
        let (tape, x, attached, loss) = run(&flat0, &x0);
        let grads = tape.backward(&loss).unwrap();
        let gx = grads.get(x.node_id().unwrap()).unwrap().to_vec();
        let mut gp = Vec::new();
        for id in attached.node_ids().into_iter().flatten() {
            gp.extend_from_slice(grads.get(id).unwrap());
        }
        let nx = check::numeric_grad(
            |v| run(&flat0, v).3.scalar_value().unwrap(),
            &x0,
            1e-5,
        );
        let np = check::numeric_grad(
            |v| run(v, &x0).3.scalar_value().unwrap(),
            &flat0,
            1e-5,
        );
        assert!(check::max_rel_err(&gx, &nx) < 1e-5);
        assert!(check::max_rel_err(&gp, &np) < 1e-5);
    }

    #[test]
    fn gate_with_zero_psi_halves_input() {
        let mut store = ParamStore::<f64>::new();
        let gate = AttentionGate::new(&mut store, &mut rng(3), "gate", 4, 6);
        if let Some(b) = gate.psi.b {
            store.param_mut(b).value.fill(0.0);
        }
        store.param_mut(gate.psi.w).value.fill(0.0);
        let x = Tensor::from_f64_slice(
            &(0..4 * 4).map(|i| i as f64 * 0.25 - 1.0).collect::<Vec<_>>(),
            [1, 4, 2, 2],
        )
        .unwrap();
        let g = Tensor::from_vec(vec![0.3; 6 * 4], [1, 6, 2, 2]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let (gated, alpha) = gate.forward(&mut fwd, &x, &g).unwrap();
        assert!(alpha.data().iter().all(|&a| a == 0.5));
        for (o, v) in gated.data().iter().zip(x.data()) {
            assert_relative_eq!(*o, 0.5 * v, max_relative = 1e-12);
        }
    }

    #[test]
    fn gate_saturates_open_with_large_bias() {
        let mut store = ParamStore::<f64>::new();
        let gate = AttentionGate::new(&mut store, &mut rng(3), "gate", 4, 4);
        store.param_mut(gate.psi.w).value.fill(0.0);
        store.param_mut(gate.psi.b.unwrap()).value.fill(20.0);
        let x = Tensor::from_vec(vec![0.7; 16], [1, 4, 2, 2]).unwrap();
        let g = Tensor::from_vec(vec![-0.2; 16], [1, 4, 2, 2]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let (gated, alpha) = gate.forward(&mut fwd, &x, &g).unwrap();
        assert!(alpha.data().iter().all(|&a| (1.0 - a).abs() < 1e-6));
        for (o, v) in gated.data().iter().zip(x.data()) {
            assert!((o - v).abs() < 1e-6);
        }
    }

    #[test]
    fn gate_coefficients_stay_in_unit_interval() {
        let mut store = ParamStore::<f64>::new();
        let gate = AttentionGate::new(&mut store, &mut rng(11), "gate", 3, 5);
        let mut r = rng(12);
        for _ in 0..1000 {
            let xv: Vec<f64> = (0..3 * 4).map(|_| r.random_range(-10.0..10.0)).collect();
            let gv: Vec<f64> = (0..5 * 4).map(|_| r.random_range(-10.0..10.0)).collect();
            let x = Tensor::from_vec(xv, [1, 3, 2, 2]).unwrap();
            let g = Tensor::from_vec(gv, [1, 5, 2, 2]).unwrap();
            let attached = store.attach(None);
            let mut fwd = Fwd {
                store: &mut store,
                attached: &attached,
                mode: Mode::Eval,
            };
            let (_, alpha) = gate.forward(&mut fwd, &x, &g).unwrap();
            assert!(alpha.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn gate_gradient_check() {
        let run = |flat: &[f64], xv: &[f64], gv: &[f64]| {
            let mut store = ParamStore::<f64>::new();
            let gate = AttentionGate::new(&mut store, &mut rng(5), "gate", 4, 3);
            set_params(&mut store, flat);
            let tape = Tape::new();
            let x = tape.leaf_from_vec(xv.to_vec(), [1, 4, 3, 3]).unwrap();
            let g = tape.leaf_from_vec(gv.to_vec(), [1, 3, 3, 3]).unwrap();
            let attached = store.attach(Some(&tape));
            let mut fwd = Fwd {
                store: &mut store,
                attached: &attached,
                mode: Mode::Eval,
            };
            let (gated, _) = gate.forward(&mut fwd, &x, &g).unwrap();
            let loss = gated.sum_all().unwrap();
            (tape, x, g, attached, loss)
        };
        let (flat0, x0, g0) = {
            let mut store = ParamStore::<f64>::new();
            let _ = AttentionGate::new(&mut store, &mut rng(5), "gate", 4, 3);
            let x: Vec<f64> = (0..4 * 9).map(|i| (i as f64 * 0.29).sin()).collect();
            let g: Vec<f64> = (0..3 * 9).map(|i| (i as f64 * 0.41).cos()).collect();
            (flat_params(&store), x, g)
        };
        let (tape, x, g, attached, loss) = run(&flat0, &x0, &g0);
        let grads = tape.backward(&loss).unwrap();
        let gx = grads.get(x.node_id().unwrap()).unwrap().to_vec();
        let gg = grads.get(g.node_id().unwrap()).unwrap().to_vec();
        let mut gp = Vec::new();
        for id in attached.node_ids().into_iter().flatten() {
            gp.extend_from_slice(grads.get(id).unwrap());
        }
        let nx = check::numeric_grad(|v| run(&flat0, v, &g0).4.scalar_value().unwrap(), &x0, 1e-5);
        let ng = check::numeric_grad(|v| run(&flat0, &x0, v).4.scalar_value().unwrap(), &g0, 1e-5);
        let np = check::numeric_grad(|v| run(v, &x0, &g0).4.scalar_value().unwrap(), &flat0, 1e-5);
        assert!(check::max_rel_err(&gx, &nx) < 1e-6);
        assert!(check::max_rel_err(&gg, &ng) < 1e-6);
        assert!(check::max_rel_err(&gp, &np) < 1e-6);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut store = ParamStore::<f64>::new();
        let block = AttentionBlock::new(
            &mut store,
            &mut rng(21),
            "attn",
            8,
            AttentionBlockCfg::default(),
        );
        let x = Tensor::from_f64_slice(
            &(0..8 * 16).map(|i| (i as f64 * 0.13).sin() * 3.0).collect::<Vec<_>>(),
            [1, 8, 4, 4],
        )
        .unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let (y, attn) = block.forward_detailed(&mut fwd, &x).unwrap();
        assert_eq!(y.shape().dims(), &[1, 8, 4, 4]);
        assert_eq!(attn.shape().dims(), &[1, 16, 16]);
        for row in attn.data().chunks(16) {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn single_position_attention_is_identity_weighting() {
        let mut store = ParamStore::<f64>::new();
        let block = AttentionBlock::new(
            &mut store,
            &mut rng(22),
            "attn",
            4,
            AttentionBlockCfg {
                pre_project: false,
                ..Default::default()
            },
        );
        let x = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.25], [1, 4, 1, 1]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let (_, attn) = block.forward_detailed(&mut fwd, &x).unwrap();
        assert_eq!(attn.data(), &[1.0]);
        // with A = [[1]], x' = V(x): the fused input must equal x + V(x)
        let v = block.wv.forward(&fwd, &x).unwrap();
        let (y, _) = block.forward_detailed(&mut fwd, &x).unwrap();
        let fused_in = x.add(&v).unwrap();
        let expect = block.fusion.forward(&fwd, &fused_in).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant_with_pointwise_fusion() {
        let mut store = ParamStore::<f64>::new();
        let block = AttentionBlock::new(
            &mut store,
            &mut rng(23),
            "attn",
            4,
            AttentionBlockCfg {
                fusion_kernel: 1,
                ..Default::default()
            },
        );
        let hw = 9;
        let xv: Vec<f64> = (0..4 * hw).map(|i| (i as f64 * 0.71).sin()).collect();
        let x = Tensor::from_vec(xv.clone(), [1, 4, 3, 3]).unwrap();
        // reverse the spatial positions in every channel
        let perm: Vec<usize> = (0..hw).rev().collect();
        let mut xp = vec![0.0; 4 * hw];
        for c in 0..4 {
            for (to, &from) in perm.iter().enumerate() {
                xp[c * hw + to] = xv[c * hw + from];
            }
        }
        let xp = Tensor::from_vec(xp, [1, 4, 3, 3]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        let y = block.forward(&mut fwd, &x).unwrap();
        let yp = block.forward(&mut fwd, &xp).unwrap();
        for c in 0..4 {
            for (to, &from) in perm.iter().enumerate() {
                assert_relative_eq!(
                    yp.data()[c * hw + to],
                    y.data()[c * hw + from],
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn attention_block_gradient_check() {
        let cfg = || AttentionBlockCfg {
            dk: Some(2),
            fusion_kernel: 3,
            pre_project: true,
            hw_cap: 4096,
        };
        let run = |flat: &[f64], xv: &[f64]| {
            let mut store = ParamStore::<f64>::new();
            let block = AttentionBlock::new(&mut store, &mut rng(31), "attn", 4, cfg());
            set_params(&mut store, flat);
            let tape = Tape::new();
            let x = tape.leaf_from_vec(xv.to_vec(), [1, 4, 3, 3]).unwrap();
            let attached = store.attach(Some(&tape));
            let mut fwd = Fwd {
                store: &mut store,
                attached: &attached,
                mode: Mode::Train,
            };
            let y = block.forward(&mut fwd, &x).unwrap();
            let loss = y.sigmoid().sum_all().unwrap();
            (tape, x, attached, loss)
        };
        let (flat0, x0) = {
            let mut store = ParamStore::<f64>::new();
            let _ = AttentionBlock::new(&mut store, &mut rng(31), "attn", 4, cfg());
            let x: Vec<f64> = (0..4 * 9).map(|i| (i as f64 * 0.53).sin()).collect();
            (flat_params(&store), x)
        };
        let (tape, x, attached, loss) = run(&flat0, &x0);
        let grads = tape.backward(&loss).unwrap();
        let gx = grads.get(x.node_id().unwrap()).unwrap().to_vec();
        let mut gp = Vec::new();
        for id in attached.node_ids().into_iter().flatten() {
            gp.extend_from_slice(grads.get(id).unwrap());
        }
        let nx = check::numeric_grad(|v| run(&flat0, v).3.scalar_value().unwrap(), &x0, 1e-5);
        let np = check::numeric_grad(|v| run(v, &x0).3.scalar_value().unwrap(), &flat0, 1e-5);
        assert!(check::max_rel_err(&gx, &nx) < 1e-5);
        assert!(check::max_rel_err(&gp, &np) < 1e-5);
    }

    #[test]
    fn attention_block_rejects_oversized_inputs() {
        let mut store = ParamStore::<f32>::new();
        let block = AttentionBlock::new(
            &mut store,
            &mut rng(41),
            "attn",
            2,
            AttentionBlockCfg::default(),
        );
        let x = Tensor::from_vec(vec![0.0f32; 2 * 70 * 70], [1, 2, 70, 70]).unwrap();
        let attached = store.attach(None);
        let mut fwd = Fwd {
            store: &mut store,
            attached: &attached,
            mode: Mode::Eval,
        };
        assert!(block.forward(&mut fwd, &x).is_err());
    }
}
