//! Paired two-sided t-test.
//!
//! The tail mass of Student's t with ν degrees of freedom is integrated
//! numerically after substituting `x = √ν·tan θ`, which turns the density into
//! `cos^(ν−1) θ` on the bounded interval `[0, π/2)`:
//!
//! ```text
//! p = ∫_{atan(|t|/√ν)}^{π/2} cos^(ν−1) θ dθ  /  ∫_0^{π/2} cos^(ν−1) θ dθ
//! ```

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

const QUAD_TOL: f64 = 1e-14;
const MAX_DEPTH: u32 = 60;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    adaptive(&f, a, fa, b, fb, m, fm, whole, tol, MAX_DEPTH)
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let theta = (t.abs() / dof.sqrt()).atan();
    let power = dof - 1.0;
    let density = |x: f64| x.cos().max(0.0).powf(power);
    let total = integrate(density, 0.0, FRAC_PI_2, QUAD_TOL);
    let tail = integrate(density, theta, FRAC_PI_2, QUAD_TOL);
    (tail / total).clamp(0.0, 1.0)
}

/// Summary of a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sided paired t-test of `a` against `b`.
///
/// All-zero differences give p = 1; identical non-zero differences (zero
/// variance) give p = 0.
pub fn paired_t_test_full(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let dof = diffs.len() - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(PairedTTest { mean_diff: 0.0, t: 0.0, dof, p_value: 1.0 });
    }
    if diffs.iter().all(|&d| d == diffs[0]) {
        let t = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(PairedTTest { mean_diff: mean, t, dof, p_value: 0.0 });
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var.sqrt() / n.sqrt());
    Ok(PairedTTest {
        mean_diff: mean,
        t,
        dof,
        p_value: student_t_two_sided(t, dof as f64),
    })
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    paired_t_test_full(a, b).map(|r| r.p_value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_case_is_closed_form() {
        // one degree of freedom: p = 1 - 2·atan(|t|)/π
        for t in [0.0, 0.3, 1.0, 4.0, 50.0] {
            let expected = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_two_sided(t, 1.0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dof_is_closed_form() {
        // ν = 2: p = 1 - |t| / sqrt(2 + t²)
        for t in [0.5f64, 2.0, 9.0] {
            let expected = 1.0 - t / (2.0 + t * t).sqrt();
            assert!((student_t_two_sided(t, 2.0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_conventions() {
        assert_eq!(paired_t_test(&[0.7, 0.8], &[0.7, 0.8]).unwrap(), 1.0);
        assert_eq!(paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn length_errors() {
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }
}
