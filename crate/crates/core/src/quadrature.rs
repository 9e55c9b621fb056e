//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

/// Maximum bisection depth.
pub const MAX_DEPTH: u32 = 40;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Returns a numerical error carrying the achieved error estimate when some
/// subinterval still misses its share of the tolerance at [`MAX_DEPTH`].
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut missed = 0.0;
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut missed);
    if missed > tol {
        return Err(Error::Numerical {
            what: "adaptive Simpson quadrature".into(),
            achieved: missed,
        });
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    missed: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *missed += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, missed)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, missed)
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid(samples: &[f64], h: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (samples[0] + samples[n - 1]) + samples[1..n - 1].iter().sum::<f64>()),
    }
}
