//! The one-dimensional transition layer `g'' = F'(g)`, `g(±∞) = ±1`,
//! `g(0) = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::potential::Potential;
use crate::quadrature::trapezoid;

const MAX_NEWTON: usize = 200;

/// Sampled layer on the uniform grid `s_k = -L + k h`, `k = 0..=n`.
#[derive(Clone, Debug, Serialize)]
pub struct Profile1D {
    pub half_length: f64,
    pub step: f64,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
    /// Exponential rates `√F''(-1)`, `√F''(1)` used beyond `±L`.
    pub tail_rates: (f64, f64),
}

impl Profile1D {
    /// Wraps raw samples on `[-L, L]`; derivatives by finite differences.
    pub fn from_samples(half_length: f64, g: Vec<f64>, tail_rates: (f64, f64)) -> Result<Self> {
        if g.len() < 3 || !(half_length > 0.0) {
            return Err(Error::InvalidInput("profile needs ≥ 3 samples and L > 0".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite profile sample".into()));
        }
        let step = 2.0 * half_length / (g.len() - 1) as f64;
        let dg = finite_difference(&g, step);
        Ok(Profile1D {
            half_length,
            step,
            g,
            dg,
            tail_rates,
        })
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn s(&self, k: usize) -> f64 {
        -self.half_length + k as f64 * self.step
    }

    /// `g(s)` by cubic Hermite interpolation, exponential tails outside `[-L, L]`.
    pub fn eval(&self, s: f64) -> f64 {
        let n = self.g.len() - 1;
        let l = self.half_length;
        if s >= l {
            let end = self.g[n];
            return 1.0 - (1.0 - end) * (-self.tail_rates.1 * (s - l)).exp();
        }
        if s <= -l {
            let end = self.g[0];
            return -1.0 + (1.0 + end) * (-self.tail_rates.0 * (-l - s)).exp();
        }
        let x = (s + l) / self.step;
        let k = (x.floor() as usize).min(n - 1);
        let t = x - k as f64;
        let h = self.step;
        let (p0, p1) = (self.g[k], self.g[k + 1]);
        let (m0, m1) = (self.dg[k] * h, self.dg[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }

    /// Derivative of [`Profile1D::eval`].
    pub fn eval_derivative(&self, s: f64) -> f64 {
        let n = self.g.len() - 1;
        let l = self.half_length;
        if s >= l {
            return self.tail_rates.1 * (1.0 - self.g[n]) * (-self.tail_rates.1 * (s - l)).exp();
        }
        if s <= -l {
            return self.tail_rates.0 * (1.0 + self.g[0]) * (-self.tail_rates.0 * (-l - s)).exp();
        }
        let x = (s + l) / self.step;
        let k = (x.floor() as usize).min(n - 1);
        let t = x - k as f64;
        let h = self.step;
        let (p0, p1) = (self.g[k], self.g[k + 1]);
        let (m0, m1) = (self.dg[k] * h, self.dg[k + 1] * h);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h
    }

    /// `max |½g'² - F(g)|` over the samples.
    pub fn equipartition_residual(&self, p: &Potential) -> f64 {
        self.g
            .iter()
            .zip(&self.dg)
            .map(|(&g, &d)| (0.5 * d * d - p.f(g)).abs())
            .fold(0.0, f64::max)
    }

    /// Max-norm of the discrete equation on interior samples.
    pub fn residual(&self, p: &Potential) -> f64 {
        interior_residual(&self.g, self.step, p)
            .iter()
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

fn finite_difference(g: &[f64], h: f64) -> Vec<f64> {
    let n = g.len();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        d[k] = (g[k + 1] - g[k - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h);
    d[n - 1] = (3.0 * g[n - 1] - 4.0 * g[n - 2] + g[n - 3]) / (2.0 * h);
    d
}

fn interior_residual(g: &[f64], h: f64, p: &Potential) -> Vec<f64> {
    let ih2 = 1.0 / (h * h);
    g.windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]) * ih2 - p.df(w[1]))
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, r| m.max(r.abs()))
}

/// Damped Newton solve of the centered finite-difference layer problem on
/// `[-L, L]` with step close to `h`, followed by a shift that puts the
/// interpolated zero at `s = 0`.
///
/// Dirichlet data are `±(1 - e^{-√F''(±1) L})`.
pub fn solve_profile(p: &Potential, half_length: f64, h: f64, tol: f64) -> Result<Profile1D> {
    if !(half_length >= 8.0) {
        return Err(Error::InvalidInput(format!(
            "profile half-length must be ≥ 8, got {half_length}"
        )));
    }
    if !(h > 0.0 && h <= 0.05) {
        return Err(Error::InvalidInput(format!(
            "profile step must be in (0, 0.05], got {h}"
        )));
    }
    if !(tol >= 1e-12) {
        return Err(Error::InvalidInput(format!(
            "profile tolerance must be ≥ 1e-12, got {tol}"
        )));
    }
    let (cm, cp) = p.well_curvatures();
    let rates = (cm.sqrt(), cp.sqrt());
    let n = (2.0 * half_length / h).round() as usize;
    let h = 2.0 * half_length / n as f64;
    let s = |k: usize| -half_length + k as f64 * h;

    let mut g: Vec<f64> = (0..=n).map(|k| (s(k) * rates.1 / 2.0).tanh()).collect();
    g[0] = -(1.0 - (-rates.0 * half_length).exp());
    g[n] = 1.0 - (-rates.1 * half_length).exp();

    let ih2 = 1.0 / (h * h);
    let mut history = Vec::new();
    let mut r = interior_residual(&g, h, p);
    let mut rnorm = max_abs(&r);
    history.push(rnorm);
    let mut iterations = 0;
    while rnorm > tol {
        if iterations == MAX_NEWTON {
            return Err(Error::Solver {
                reason: "1D Newton did not reach the residual tolerance".into(),
                iterations,
                residual_history: history,
            });
        }
        iterations += 1;
        let m = n - 1;
        let lower = vec![ih2; m];
        let upper = vec![ih2; m];
        let diag: Vec<f64> = (1..n).map(|k| -2.0 * ih2 - p.d2f(g[k])).collect();
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut delta).ok_or_else(|| Error::Solver {
            reason: "singular 1D Jacobian".into(),
            iterations,
            residual_history: history.clone(),
        })?;
        // The Jacobian is nearly singular along the translation mode, so
        // the raw step carries an arbitrary shift of size ~ ε/λ_min. Solve
        // also J w = g' and remove the multiple of w that makes the step
        // orthogonal to g'; the shared near-null parts cancel.
        let mode: Vec<f64> = (1..n).map(|k| g[k + 1] - g[k - 1]).collect();
        let mut w = mode.clone();
        if solve_tridiagonal(&lower, &diag, &upper, &mut w).is_some() {
            let vw: f64 = mode.iter().zip(&w).map(|(a, b)| a * b).sum();
            let vd: f64 = mode.iter().zip(&delta).map(|(a, b)| a * b).sum();
            if vw.abs() > 0.0 && vw.is_finite() {
                let mu = vd / vw;
                delta.iter_mut().zip(&w).for_each(|(d, x)| *d -= mu * x);
            }
        }
        let mut alpha = 1.0;
        loop {
            let mut trial = g.clone();
            for k in 1..n {
                trial[k] = (g[k] + alpha * delta[k - 1]).clamp(-1.0, 1.0);
            }
            let rt = interior_residual(&trial, h, p);
            let tn = max_abs(&rt);
            if tn < rnorm || alpha < 1e-3 {
                g = trial;
                r = rt;
                rnorm = tn;
                break;
            }
            alpha *= 0.5;
        }
        history.push(rnorm);
    }

    if g.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Qualitative("1D profile is not monotone".into()));
    }

    let raw = Profile1D::from_samples(half_length, g, rates)?;
    let shift = zero_crossing(&raw).ok_or_else(|| Error::Qualitative("1D profile has no zero crossing".into()))?;
    // Polish on the cubic interpolant used for resampling.
    let mut shift = shift;
    for _ in 0..20 {
        let (v, d) = (raw.eval(shift), raw.eval_derivative(shift));
        if v == 0.0 || d <= 0.0 {
            break;
        }
        let step = v / d;
        shift -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    if shift == 0.0 {
        return Ok(raw);
    }
    let g: Vec<f64> = (0..=n).map(|k| raw.eval(s(k) + shift)).collect();
    Profile1D::from_samples(half_length, g, rates)
}

/// Linear interpolation of the zero between bracketing samples.
fn zero_crossing(prof: &Profile1D) -> Option<f64> {
    let g = &prof.g;
    (0..g.len() - 1).find_map(|k| {
        if g[k] == 0.0 {
            Some(prof.s(k))
        } else if g[k] < 0.0 && g[k + 1] >= 0.0 {
            Some(prof.s(k) - g[k] * prof.step / (g[k + 1] - g[k]))
        } else {
            None
        }
    })
}

/// Trapezoid value of `∫ ½g'² + F(g)` over `[-L, L]`.
pub fn energy_1d(prof: &Profile1D, p: &Potential) -> Result<f64> {
    if prof.g.iter().chain(&prof.dg).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite profile sample".into()));
    }
    let density: Vec<f64> = prof
        .g
        .iter()
        .zip(&prof.dg)
        .map(|(&g, &d)| 0.5 * d * d + p.f(g))
        .collect();
    Ok(trapezoid(&density, prof.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn quartic_profile(h: f64) -> Profile1D {
        solve_profile(&Potential::quartic(), 12.0, h, 1e-10).unwrap()
    }

    fn max_err_vs_tanh(prof: &Profile1D) -> f64 {
        (0..prof.len())
            .map(|k| (prof.g[k] - (prof.s(k) / SQRT_2).tanh()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn matches_tanh() {
        let prof = quartic_profile(0.01);
        assert!(max_err_vs_tanh(&prof) <= 1e-4);
        assert!((prof.eval(0.0)).abs() < 1e-8);
        assert!((prof.eval(1.0) - 0.608_876_7).abs() < 1e-4);
        let mid = prof.len() / 2;
        assert!((prof.dg[mid] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
    }

    #[test]
    fn second_order_convergence() {
        let e1 = max_err_vs_tanh(&quartic_profile(0.04));
        let e2 = max_err_vs_tanh(&quartic_profile(0.02));
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn energy_and_equipartition() {
        let p = Potential::quartic();
        let prof = quartic_profile(0.01);
        let e = energy_1d(&prof, &p).unwrap();
        assert!((e - p.beta().unwrap()).abs() <= 5e-4);
        assert!(prof.equipartition_residual(&p) <= 5e-4);
        assert!(prof.residual(&p) <= 1e-10);
    }

    #[test]
    fn doubled_well_doubles_energy() {
        let p4 = Potential::scaled_quartic(4.0).unwrap();
        let prof = solve_profile(&p4, 12.0, 0.01, 1e-10).unwrap();
        let e = energy_1d(&prof, &p4).unwrap();
        assert!((e - 2.0 * 0.942_809_041_6).abs() < 1e-3);
    }

    #[test]
    fn constant_profile_has_no_energy() {
        let prof = Profile1D::from_samples(10.0, vec![1.0; 101], (1.0, 1.0)).unwrap();
        assert_eq!(energy_1d(&prof, &Potential::quartic()).unwrap(), 0.0);
    }

    #[test]
    fn endpoints_close_to_wells() {
        let prof = quartic_profile(0.01);
        let eps = (-SQRT_2 * 12.0).exp();
        assert!((prof.g[0] + 1.0).abs() <= 2.0 * eps);
        assert!((prof.g[prof.len() - 1] - 1.0).abs() <= 2.0 * eps);
        assert!(prof.g.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn tails_continue_monotonically() {
        let prof = quartic_profile(0.02);
        let a = prof.eval(11.99);
        let b = prof.eval(12.5);
        let c = prof.eval(20.0);
        assert!(a < b && b < c && c < 1.0);
        assert!(prof.eval(-30.0) > -1.0 - 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = Potential::quartic();
        assert!(solve_profile(&p, 4.0, 0.01, 1e-10).is_err());
        assert!(solve_profile(&p, 12.0, 0.1, 1e-10).is_err());
        assert!(solve_profile(&p, 12.0, 0.01, 1e-14).is_err());
    }

    #[test]
    fn asymmetric_well_is_normalized() {
        let a = 0.3;
        let base = [0.25, 0.0, -0.5, 0.0, 0.25];
        let mut c = vec![0.0; 6];
        for (k, &b) in base.iter().enumerate() {
            c[k] += b;
            c[k + 1] += a * b;
        }
        let p = Potential::polynomial(c, 0.074).unwrap();
        let prof = solve_profile(&p, 12.0, 0.02, 1e-10).unwrap();
        assert!(prof.eval(0.0).abs() < 1e-8);
        let (e, b) = (energy_1d(&prof, &p).unwrap(), p.beta().unwrap());
        assert!((e - b).abs() < 2e-3, "{e} vs {b}");
    }
}
