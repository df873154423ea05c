//! Small quadrature toolkit: adaptive Simpson for arbitrary integrands and
//! fixed-order Gauss–Legendre panels for smooth ones.

use crate::error::{CoreError, Result};

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. Errors with a precision failure if the recursion depth cap is hit
/// before the tolerance is met.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(CoreError::Parameter("adaptive_simpson needs finite bounds".into()));
    }
    if tol <= 0.0 {
        return Err(CoreError::Parameter("tolerance must be positive".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    let mut ok = true;
    let val = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 60, &mut ok);
    if !ok {
        return Err(CoreError::Precision(format!(
            "adaptive Simpson hit depth cap on [{a}, {b}] at tol {tol}"
        )));
    }
    Ok(val)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    ok: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *ok = false;
        return left + right;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, ok)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, ok)
}

/// Gauss–Legendre nodes/weights on `[-1, 1]`, computed by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss–Legendre rule, reusable across panels.
#[derive(Debug, Clone)]
pub struct GlRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GlRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        GlRule { nodes, weights }
    }

    /// Integrate `f` over `[a, b]` with this rule (exact for polynomials of
    /// degree `2·order - 1`; spectrally accurate for smooth integrands on
    /// narrow panels).
    pub fn integrate(&self, f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + h * x);
        }
        acc * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_gaussian_tail() {
        // ∫_{-∞}^{∞} e^{-x²} dx = √π, truncated at ±8 (tail < 1.3e-28).
        let f = |x: f64| (-x * x).exp();
        let v = adaptive_simpson(&f, -8.0, 8.0, 1e-12).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_degenerate_interval() {
        assert_eq!(adaptive_simpson(&|x| x, 2.0, 2.0, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn gauss_legendre_rule_is_exact_for_polynomials() {
        let rule = GlRule::new(8);
        // degree 15 polynomial over [0, 2]: x^15 integrates to 2^16/16 = 4096
        let v = rule.integrate(&mut |x: f64| x.powi(15), 0.0, 2.0);
        assert!((v - 4096.0).abs() < 1e-9 * 4096.0);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_interval_length() {
        for n in [2, 5, 12, 24] {
            let (_, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "order {n}: {s}");
        }
    }
}
