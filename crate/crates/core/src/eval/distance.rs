//! Boundary distances: Hausdorff and average symmetric surface distance.
//!
//! Boundaries use 4-connectivity with the image border treated as
//! background. Distances come from an exact two-pass Euclidean distance
//! transform (Felzenszwalb-Huttenlocher lower envelopes), cross-checked in
//! tests against the all-pairs brute force.

/// Foreground pixels with at least one background 4-neighbor; pixels on the
/// image border count their out-of-frame neighbors as background.
pub fn boundary(mask: &[u8], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut pts = Vec::new();
    let at = |x: i64, y: i64| -> u8 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0
        } else {
            mask[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            if at(xi - 1, yi) == 0 || at(xi + 1, yi) == 0 || at(xi, yi - 1) == 0 || at(xi, yi + 1) == 0
            {
                pts.push((x, y));
            }
        }
    }
    pts
}

const INF: f64 = 1e20;

/// 1D squared-distance transform via the lower envelope of parabolas.
fn dt1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        if f[q] >= INF {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                // the parabola at q hides the one at p entirely; pop it
                if k == 0 {
                    v[0] = q;
                    z[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
        if k == 0 && v[0] == q {
            // fresh envelope rooted at q
            z[0] = -INF;
            z[1] = INF;
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        out[q] = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Exact squared Euclidean distance from every grid cell to the nearest site.
/// `sites` holds (x, y) coordinates; cells with no site anywhere return INF.
pub fn edt_sq(sites: &[(usize, usize)], h: usize, w: usize) -> Vec<f64> {
    let mut grid = vec![INF; h * w];
    for &(x, y) in sites {
        grid[y * w + x] = 0.0;
    }
    // columns first
    let mut col_in = vec![0.0f64; h];
    let mut col_out = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = grid[y * w + x];
        }
        dt1d(&col_in, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    // then rows
    let mut row_out = vec![0.0f64; w];
    let mut row_in = vec![0.0f64; w];
    for y in 0..h {
        row_in.copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt1d(&row_in, &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub hausdorff: f64,
    pub asd: f64,
}

/// Hausdorff (exact maximum, both directions) and average symmetric surface
/// distance over the two boundary point sets. `None` when either mask is
/// empty — the caller reports it as undefined rather than failing.
pub fn surface_distances(
    pred: &[u8],
    target: &[u8],
    h: usize,
    w: usize,
) -> Option<SurfaceDistances> {
    let bp = boundary(pred, h, w);
    let bg = boundary(target, h, w);
    if bp.is_empty() || bg.is_empty() {
        return None;
    }
    let dist_to_g = edt_sq(&bg, h, w);
    let dist_to_p = edt_sq(&bp, h, w);
    let mut hd: f64 = 0.0;
    let mut sum = 0.0;
    for &(x, y) in &bp {
        let d = dist_to_g[y * w + x].sqrt();
        hd = hd.max(d);
        sum += d;
    }
    for &(x, y) in &bg {
        let d = dist_to_p[y * w + x].sqrt();
        hd = hd.max(d);
        sum += d;
    }
    Some(SurfaceDistances {
        hausdorff: hd,
        asd: sum / (bp.len() + bg.len()) as f64,
    })
}
