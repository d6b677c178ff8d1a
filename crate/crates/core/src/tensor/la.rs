//! Low-level dense kernels shared by forward ops and backward closures.
//!
//! All loops run over contiguous slices in a fixed order, so results are
//! bitwise reproducible run to run.

use super::Element;

#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc = acc + x * y;
    }
    acc
}

#[inline]
pub fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi = *yi + alpha * xi;
    }
}

/// `out += a · b` with `a: m x k`, `b: k x n`, `out: m x n` (row-major).
pub fn matmul_nn_acc<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != T::zero() {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m x k`, `b: n x k`, `out: m x n`.
pub fn matmul_nt_acc<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = *o + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += aᵀ · b` with `a: r x m`, `b: r x n`, `out: m x n`.
pub fn matmul_tn_acc<T: Element>(a: &[T], b: &[T], r: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), r * m);
    debug_assert_eq!(b.len(), r * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..r {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != T::zero() {
                axpy(av, brow, &mut out[i * n..(i + 1) * n]);
            }
        }
    }
}

/// Unfolds one image (`c x h x w`) into patch rows: row per output position,
/// `c*k*k` columns. Out-of-bounds taps read zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Element>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let kk = k * k;
    debug_assert_eq!(cols.len(), oh * ow * c * kk);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * c * kk..(oy * ow + ox + 1) * c * kk];
            let iy0 = (oy * stride) as isize - pad as isize;
            let ix0 = (ox * stride) as isize - pad as isize;
            for ci in 0..c {
                let plane = &img[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let iy = iy0 + ky as isize;
                    let dst = &mut row[ci * kk + ky * k..ci * kk + (ky + 1) * k];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (kx, d) in dst.iter_mut().enumerate() {
                        let ix = ix0 + kx as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into the image.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let kk = k * k;
    debug_assert_eq!(cols.len(), oh * ow * c * kk);
    debug_assert_eq!(img.len(), c * h * w);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * c * kk..(oy * ow + ox + 1) * c * kk];
            let iy0 = (oy * stride) as isize - pad as isize;
            let ix0 = (ox * stride) as isize - pad as isize;
            for ci in 0..c {
                let plane = &mut img[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[ci * kk + ky * k..ci * kk + (ky + 1) * k];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (kx, &v) in src.iter().enumerate() {
                        let ix = ix0 + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}
