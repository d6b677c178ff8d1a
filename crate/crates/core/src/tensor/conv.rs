//! Spatial ops: convolution, stride-2 transposed convolution, 2x2 max-pool.
//!
//! Convolution lowers each sample to patch rows (`im2col`) and multiplies by
//! the flattened kernel; the patch matrices are kept alive by the backward
//! closure so the weight gradient reuses them instead of re-unfolding.

use std::sync::Arc;

use super::la;
use super::tape::merged_tape;
use super::{Element, Shape, Tensor};
use crate::error::{AruError, Result};

/// 2-D convolution over `[n, c_in, h, w]` with kernel `[c_out, c_in, k, k]`
/// and optional per-channel bias `[c_out]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, wid) = x.shape().dims4("conv2d")?;
    let (cout, wcin, kh, kw) = w.shape().dims4("conv2d")?;
    if kh != kw {
        return Err(AruError::Unsupported(format!(
            "conv2d requires square kernels, got {kh}x{kw}"
        )));
    }
    if wcin != cin {
        return Err(AruError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {cin} channels, kernel expects {wcin}"),
        });
    }
    if let Some(b) = b {
        if b.shape().dims1("conv2d")? != cout {
            return Err(AruError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias {} vs {cout} output channels", b.shape()),
            });
        }
    }
    if stride == 0 {
        return Err(AruError::InvalidArgument("conv2d stride must be > 0".into()));
    }
    let k = kh;
    if h + 2 * pad < k || wid + 2 * pad < k {
        return Err(AruError::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel {k} larger than padded input {h}x{wid}+{pad}"),
        });
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wid + 2 * pad - k) / stride + 1;
    let kdim = cin * k * k;
    let p = oh * ow;

    let mut cols = vec![T::zero(); n * p * kdim];
    let mut out = vec![T::zero(); n * cout * p];
    for ni in 0..n {
        let img = &x.data()[ni * cin * h * wid..(ni + 1) * cin * h * wid];
        let c = &mut cols[ni * p * kdim..(ni + 1) * p * kdim];
        la::im2col(img, cin, h, wid, k, stride, pad, oh, ow, c);
        la::matmul_nt_acc(
            w.data(),
            c,
            cout,
            kdim,
            p,
            &mut out[ni * cout * p..(ni + 1) * cout * p],
        );
    }
    if let Some(b) = b {
        for ni in 0..n {
            for (co, &bv) in b.data().iter().enumerate() {
                let base = (ni * cout + co) * p;
                for o in &mut out[base..base + p] {
                    *o = *o + bv;
                }
            }
        }
    }

    let mut inputs = vec![x, w];
    if let Some(b) = b {
        inputs.push(b);
    }
    let tape = merged_tape(&inputs)?;
    let shape = Shape::from([n, cout, oh, ow]);
    let Some(tape) = tape else {
        return Ok(Tensor::with_node(Arc::new(out), shape, None));
    };
    let (ix, iw, ib) = (x.node_id(), w.node_id(), b.and_then(|b| b.node_id()));
    let wa = w.data_arc();
    let cols = Arc::new(cols);
    let (xlen, wlen) = (x.numel(), w.numel());
    Ok(tape.record(
        Arc::new(out),
        shape,
        Box::new(move |g, store| {
            if let Some(id) = ib {
                let db = store.accum(id, cout);
                for ni in 0..n {
                    for (co, d) in db.iter_mut().enumerate() {
                        let base = (ni * cout + co) * p;
                        *d = *d + g[base..base + p].iter().fold(T::zero(), |a, &v| a + v);
                    }
                }
            }
            if let Some(id) = iw {
                let dw = store.accum(id, wlen);
                for ni in 0..n {
                    la::matmul_nn_acc(
                        &g[ni * cout * p..(ni + 1) * cout * p],
                        &cols[ni * p * kdim..(ni + 1) * p * kdim],
                        cout,
                        p,
                        kdim,
                        dw,
                    );
                }
            }
            if let Some(id) = ix {
                let dx = store.accum(id, xlen);
                let mut dcols = vec![T::zero(); p * kdim];
                for ni in 0..n {
                    dcols.fill(T::zero());
                    la::matmul_tn_acc(
                        &g[ni * cout * p..(ni + 1) * cout * p],
                        &wa,
                        cout,
                        p,
                        kdim,
                        &mut dcols,
                    );
                    la::col2im_acc(
                        &dcols,
                        cin,
                        h,
                        wid,
                        k,
                        stride,
                        pad,
                        oh,
                        ow,
                        &mut dx[ni * cin * h * wid..(ni + 1) * cin * h * wid],
                    );
                }
            }
        }),
    ))
}

/// Transposed convolution with a 2x2 kernel and stride 2 (the exact doubling
/// used for decoder upsampling). Input `[n, c_in, h, w]`, kernel
/// `[c_in, c_out, 2, 2]`, bias `[c_out]`, output `[n, c_out, 2h, 2w]`. Each
/// input pixel paints one non-overlapping 2x2 output block.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, cin, h, wid) = x.shape().dims4("conv_transpose2d")?;
    let (wcin, cout, kh, kw) = w.shape().dims4("conv_transpose2d")?;
    if (kh, kw) != (2, 2) {
        return Err(AruError::Unsupported(format!(
            "conv_transpose2d supports 2x2 kernels only, got {kh}x{kw}"
        )));
    }
    if wcin != cin {
        return Err(AruError::ShapeMismatch {
            op: "conv_transpose2d",
            detail: format!("input has {cin} channels, kernel expects {wcin}"),
        });
    }
    if let Some(b) = b {
        if b.shape().dims1("conv_transpose2d")? != cout {
            return Err(AruError::ShapeMismatch {
                op: "conv_transpose2d",
                detail: format!("bias {} vs {cout} output channels", b.shape()),
            });
        }
    }
    let (oh, ow) = (2 * h, 2 * wid);
    let mut out = vec![T::zero(); n * cout * oh * ow];
    let xd = x.data();
    let wd = w.data();
    for ni in 0..n {
        for co in 0..cout {
            let oplane = &mut out[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
            if let Some(b) = b {
                oplane.fill(b.data()[co]);
            }
            for ci in 0..cin {
                let xplane = &xd[(ni * cin + ci) * h * wid..(ni * cin + ci + 1) * h * wid];
                let wblk = &wd[(ci * cout + co) * 4..(ci * cout + co) * 4 + 4];
                for i in 0..h {
                    for j in 0..wid {
                        let v = xplane[i * wid + j];
                        if v == T::zero() {
                            continue;
                        }
                        let o = 2 * i * ow + 2 * j;
                        oplane[o] = oplane[o] + v * wblk[0];
                        oplane[o + 1] = oplane[o + 1] + v * wblk[1];
                        oplane[o + ow] = oplane[o + ow] + v * wblk[2];
                        oplane[o + ow + 1] = oplane[o + ow + 1] + v * wblk[3];
                    }
                }
            }
        }
    }

    let mut inputs = vec![x, w];
    if let Some(b) = b {
        inputs.push(b);
    }
    let tape = merged_tape(&inputs)?;
    let shape = Shape::from([n, cout, oh, ow]);
    let Some(tape) = tape else {
        return Ok(Tensor::with_node(Arc::new(out), shape, None));
    };
    let (ix, iw, ib) = (x.node_id(), w.node_id(), b.and_then(|b| b.node_id()));
    let (xa, wa) = (x.data_arc(), w.data_arc());
    Ok(tape.record(
        Arc::new(out),
        shape,
        Box::new(move |g, store| {
            if let Some(id) = ib {
                let db = store.accum(id, cout);
                for ni in 0..n {
                    for (co, d) in db.iter_mut().enumerate() {
                        let base = (ni * cout + co) * oh * ow;
                        *d = *d
                            + g[base..base + oh * ow]
                                .iter()
                                .fold(T::zero(), |a, &v| a + v);
                    }
                }
            }
            if let Some(id) = ix {
                let dx = store.accum(id, xa.len());
                for ni in 0..n {
                    for ci in 0..cin {
                        let dplane =
                            &mut dx[(ni * cin + ci) * h * wid..(ni * cin + ci + 1) * h * wid];
                        for co in 0..cout {
                            let gplane =
                                &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                            let wblk = &wa[(ci * cout + co) * 4..(ci * cout + co) * 4 + 4];
                            for i in 0..h {
                                for j in 0..wid {
                                    let o = 2 * i * ow + 2 * j;
                                    dplane[i * wid + j] = dplane[i * wid + j]
                                        + gplane[o] * wblk[0]
                                        + gplane[o + 1] * wblk[1]
                                        + gplane[o + ow] * wblk[2]
                                        + gplane[o + ow + 1] * wblk[3];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(id) = iw {
                let dw = store.accum(id, wa.len());
                for ni in 0..n {
                    for ci in 0..cin {
                        let xplane =
                            &xa[(ni * cin + ci) * h * wid..(ni * cin + ci + 1) * h * wid];
                        for co in 0..cout {
                            let gplane =
                                &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                            let base = (ci * cout + co) * 4;
                            let mut acc = [T::zero(); 4];
                            for i in 0..h {
                                for j in 0..wid {
                                    let v = xplane[i * wid + j];
                                    let o = 2 * i * ow + 2 * j;
                                    acc[0] = acc[0] + v * gplane[o];
                                    acc[1] = acc[1] + v * gplane[o + 1];
                                    acc[2] = acc[2] + v * gplane[o + ow];
                                    acc[3] = acc[3] + v * gplane[o + ow + 1];
                                }
                            }
                            for (d, a) in dw[base..base + 4].iter_mut().zip(acc) {
                                *d = *d + a;
                            }
                        }
                    }
                }
            }
        }),
    ))
}

/// 2x2 max-pool with stride 2. Ties resolve to the first maximum in row-major
/// scan order, so gradients route deterministically.
pub fn maxpool2d<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.shape().dims4("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(AruError::ShapeMismatch {
            op: "maxpool2d",
            detail: format!("spatial dims must be even, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let planes = n * c;
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut argmax = vec![0u32; planes * oh * ow];
    let xd = x.data();
    for pl in 0..planes {
        let xplane = &xd[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                let mut bestv = xplane[cand[0]];
                for &idx in &cand[1..] {
                    if xplane[idx] > bestv {
                        bestv = xplane[idx];
                        best = idx;
                    }
                }
                out[pl * oh * ow + oy * ow + ox] = bestv;
                argmax[pl * oh * ow + oy * ow + ox] = best as u32;
            }
        }
    }
    let tape = x.tape().cloned();
    let id = x.node_id();
    let shape = Shape::from([n, c, oh, ow]);
    let Some(tape) = tape else {
        return Ok(Tensor::with_node(Arc::new(out), shape, None));
    };
    let xlen = x.numel();
    Ok(tape.record(
        Arc::new(out),
        shape,
        Box::new(move |g, store| {
            if let Some(id) = id {
                let dx = store.accum(id, xlen);
                for pl in 0..planes {
                    let dplane = &mut dx[pl * h * w..(pl + 1) * h * w];
                    for (o, &am) in argmax[pl * oh * ow..(pl + 1) * oh * ow].iter().enumerate() {
                        dplane[am as usize] =
                            dplane[am as usize] + g[pl * oh * ow + o];
                    }
                }
            }
        }),
    ))
}
