//! Finite-difference gradient checking.
//!
//! `numeric_grad` evaluates a scalar function with central differences; tests
//! compare the result against the tape's analytic gradients via
//! [`max_rel_err`]. Run these in `f64`: the truncation plus round-off error of
//! central differences is around `1e-10` there, versus ~`1e-3` in `f32`.

use super::Element;

/// Central-difference gradient of `f` at `x`: `(f(x+h) - f(x-h)) / 2h` per
/// coordinate. `f` must be deterministic.
pub fn numeric_grad<T: Element>(f: impl Fn(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let two = T::from_f64(2.0);
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (two * h));
    }
    grad
}

/// `|a - n| / max(|a|, |n|, 1)` — relative where the values are large,
/// absolute near zero.
pub fn rel_err<T: Element>(a: T, n: T) -> T {
    let denom = a.abs().max(n.abs()).max(T::one());
    (a - n).abs() / denom
}

pub fn max_rel_err<T: Element>(analytic: &[T], numeric: &[T]) -> T {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(T::zero(), |m, e| m.max(e))
}
