//! Paired model comparison: t-test, effect size, and quantile summaries.
//!
//! The Student-t CDF is evaluated internally through the regularized
//! incomplete beta function (Lentz continued fraction), so the crate needs no
//! statistics dependency at runtime; tests cross-check against `statrs`.

use serde::Serialize;

use crate::error::{AruError, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Linear-interpolation quantile, the "type 7" convention: index h = (n-1)q.
pub fn quantile_type7(xs: &[f64], q: f64) -> f64 {
    debug_assert!(!xs.is_empty() && (0.0..=1.0).contains(&q));
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_type7(xs, 0.5)
}

pub fn iqr(xs: &[f64]) -> Result<f64> {
    if xs.len() < 4 {
        return Err(AruError::InvalidArgument(format!(
            "iqr needs at least 4 values, got {}",
            xs.len()
        )));
    }
    Ok(quantile_type7(xs, 0.75) - quantile_type7(xs, 0.25))
}

// ---------------------------------------------------------------- special fns

/// Lanczos approximation of ln Gamma(x), x > 0.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 7] = [
        1.000000000190015,
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut ser = G[0];
    for (i, g) in G.iter().enumerate().skip(1) {
        ser += g / (x + i as f64);
    }
    let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Continued-fraction core of the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Student-t cumulative distribution with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = betainc(df / 2.0, 0.5, x) / 2.0;
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability P(|T| >= |t|).
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    betainc(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Quantile of Student-t: smallest t with CDF(t) >= p, by bisection.
pub fn t_critical(p: f64, df: f64) -> f64 {
    debug_assert!((0.5..1.0).contains(&p));
    let (mut lo, mut hi) = (0.0f64, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ------------------------------------------------------------------ the tests

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TTestResult {
    pub n: usize,
    pub delta_mean: f64,
    pub sd_d: f64,
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub ci95: (f64, f64),
    pub zero_variance: bool,
}

/// Paired t-test on aligned score vectors: d_i = a_i - b_i.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(AruError::InvalidArgument(format!(
            "paired test needs equal lengths, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(AruError::InvalidArgument("paired test needs n >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let dm = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 {
        // all differences identical: t degenerates
        let t = if dm == 0.0 {
            0.0
        } else {
            dm.signum() * f64::INFINITY
        };
        return Ok(TTestResult {
            n,
            delta_mean: dm,
            sd_d: 0.0,
            t,
            p: if dm == 0.0 { 1.0 } else { 0.0 },
            ci95: (dm, dm),
            zero_variance: true,
        });
    }
    let se = sd / (n as f64).sqrt();
    let t = dm / se;
    let df = (n - 1) as f64;
    let p = t_two_sided_p(t, df);
    let tc = t_critical(0.975, df);
    Ok(TTestResult {
        n,
        delta_mean: dm,
        sd_d: sd,
        t,
        p,
        ci95: (dm - tc * se, dm + tc * se),
        zero_variance: false,
    })
}

/// Cohen's d with pooled SD of the two sets: (mean_a - mean_b) / sqrt((sd_a^2 + sd_b^2)/2).
/// Returns the zero-pooled-SD flag alongside the value.
pub fn cohens_d(a: &[f64], b: &[f64]) -> (f64, bool) {
    let pooled = ((sample_sd(a).powi(2) + sample_sd(b).powi(2)) / 2.0).sqrt();
    if pooled == 0.0 {
        let dm = mean(a) - mean(b);
        return (if dm == 0.0 { 0.0 } else { dm.signum() * f64::INFINITY }, true);
    }
    ((mean(a) - mean(b)) / pooled, false)
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonResult {
    pub model_a: String,
    pub model_b: String,
    pub n: usize,
    pub mean_a: f64,
    pub sd_a: f64,
    pub iqr_a: f64,
    pub mean_b: f64,
    pub sd_b: f64,
    pub iqr_b: f64,
    pub delta_mean: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub cohens_d: f64,
    pub ci95: (f64, f64),
    pub zero_variance: bool,
    pub zero_pooled_sd: bool,
}

/// Pairs the two score lists by sample id and assembles the comparison row.
pub fn compare_models(
    model_a: &str,
    scores_a: &[(String, f64)],
    model_b: &str,
    scores_b: &[(String, f64)],
) -> Result<ComparisonResult> {
    if scores_a.len() != scores_b.len() {
        return Err(AruError::Data(format!(
            "score sets differ in size: {} vs {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let mut b_sorted: Vec<&(String, f64)> = scores_b.iter().collect();
    b_sorted.sort_by(|x, y| x.0.cmp(&y.0));
    let mut a = Vec::with_capacity(scores_a.len());
    let mut b = Vec::with_capacity(scores_b.len());
    for (id, va) in scores_a {
        let vb = b_sorted
            .binary_search_by(|probe| probe.0.cmp(id))
            .map(|i| b_sorted[i].1)
            .map_err(|_| AruError::Data(format!("sample {id:?} missing from {model_b}")))?;
        a.push(*va);
        b.push(vb);
    }
    let tt = paired_ttest(&a, &b)?;
    let (d, zero_pooled) = cohens_d(&a, &b);
    Ok(ComparisonResult {
        model_a: model_a.to_string(),
        model_b: model_b.to_string(),
        n: tt.n,
        mean_a: mean(&a),
        sd_a: sample_sd(&a),
        iqr_a: iqr(&a).unwrap_or(0.0),
        mean_b: mean(&b),
        sd_b: sample_sd(&b),
        iqr_b: iqr(&b).unwrap_or(0.0),
        delta_mean: tt.delta_mean,
        t_stat: tt.t,
        p_value: tt.p,
        cohens_d: d,
        ci95: tt.ci95,
        zero_variance: tt.zero_variance,
        zero_pooled_sd: zero_pooled,
    })
}

/// Fixed-width text table, one comparison per row.
pub fn render_comparison_table(rows: &[ComparisonResult]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>18} {:>18} {:>10} {:>10} {:>10} {:>22}\n",
        "comparison", "n", "mean_a±sd", "mean_b±sd", "Δmean", "t", "Cohen d", "95% CI"
    ));
    for r in rows {
        let p_str = if r.p_value < 0.001 {
            "<0.001".to_string()
        } else {
            format!("{:.3}", r.p_value)
        };
        out.push_str(&format!(
            "{:<24} {:>8} {:>18} {:>18} {:>10.4} {:>10.3} {:>10.3} {:>22}  p={}\n",
            format!("{} vs {}", r.model_a, r.model_b),
            r.n,
            format!("{:.4}±{:.4}", r.mean_a, r.sd_a),
            format!("{:.4}±{:.4}", r.mean_b, r.sd_b),
            r.delta_mean,
            r.t_stat,
            r.cohens_d,
            format!("[{:.4}, {:.4}]", r.ci95.0, r.ci95.1),
            p_str,
        ));
    }
    out
}
