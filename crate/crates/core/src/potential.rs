//! Balanced double-well potentials.
//!
//! A potential `F` on `[-1, 1]` must satisfy `F(±1) = 0`, `F > 0` inside,
//! `F'(±1) = 0`, `F''(±1) > 0`, and have a single interior critical point
//! `t0` with `F' > 0` on `(-1, t0)` and `F' < 0` on `(t0, 1)`.

use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::quadrature::adaptive_simpson;

/// Absolute tolerance of the `G` and `β` quadratures.
pub const QUAD_TOL: f64 = 1e-10;

/// Inputs within this distance of `[-1, 1]` are clamped silently.
pub const CLAMP_TOL: f64 = 1e-12;

const SCAN_POINTS: usize = 10_000;

#[derive(Clone, Debug)]
pub enum PotentialKind {
    /// `scale · (1 - u²)² / 4`.
    Quartic { scale: f64 },
    /// `Σ coeffs[k] · u^k`; `d1`, `d2` hold the derivative coefficients.
    Polynomial {
        coeffs: Vec<f64>,
        d1: Vec<f64>,
        d2: Vec<f64>,
    },
    /// Clamped cubic spline through tabulated `(u, F)` pairs, with
    /// `F'(±1) = 0` imposed at the ends.
    Table(Spline),
}

#[derive(Clone, Debug)]
pub struct Potential {
    kind: PotentialKind,
    t0: f64,
    id: String,
    beta: OnceLock<f64>,
}

impl Potential {
    /// The standard well `(1 - u²)² / 4`.
    pub fn quartic() -> Self {
        Potential {
            kind: PotentialKind::Quartic { scale: 1.0 },
            t0: 0.0,
            id: "quartic".into(),
            beta: OnceLock::new(),
        }
    }

    pub fn scaled_quartic(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidPotential(format!(
                "quartic scale must be positive, got {scale}"
            )));
        }
        Ok(Potential {
            kind: PotentialKind::Quartic { scale },
            t0: 0.0,
            id: if scale == 1.0 {
                "quartic".into()
            } else {
                format!("quartic*{scale}")
            },
            beta: OnceLock::new(),
        })
    }

    /// A polynomial well. `t0` is the declared interior zero of `F'`; it is
    /// refined to machine precision during validation.
    pub fn polynomial(coeffs: Vec<f64>, t0: f64) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPotential(
                "polynomial coefficients must be finite and non-empty".into(),
            ));
        }
        let d1 = derivative(&coeffs);
        let d2 = derivative(&d1);
        Self::validated(PotentialKind::Polynomial { coeffs, d1, d2 }, t0, "polynomial".into())
    }

    pub fn from_table(u: Vec<f64>, f: Vec<f64>, t0: f64) -> Result<Self> {
        let spline = Spline::clamped(u, f, 0.0, 0.0)?;
        Self::validated(PotentialKind::Table(spline), t0, "table".into())
    }

    /// Reads a two-column `u,F` CSV (header line optional, `#` comments).
    pub fn load_table(path: &Path, t0: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut u = Vec::new();
        let mut f = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (a, b) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Config(format!(
                        "{}:{}: expected two columns `u,F`",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    u.push(a);
                    f.push(b);
                }
                _ if u.is_empty() => continue, // header
                _ => {
                    return Err(Error::Config(format!(
                        "{}:{}: cannot parse `{line}`",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        let mut p = Self::from_table(u, f, t0)?;
        p.id = format!("table:{}", path.display());
        Ok(p)
    }

    fn validated(kind: PotentialKind, t0: f64, id: String) -> Result<Self> {
        let mut p = Potential {
            kind,
            t0,
            id,
            beta: OnceLock::new(),
        };
        p.t0 = p.validate()?;
        Ok(p)
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Interior zero of `F'`.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// `F(u)`, with `u` clamped to `[-1, 1]`.
    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        match &self.kind {
            PotentialKind::Quartic { scale } => {
                let w = 1.0 - u * u;
                0.25 * scale * w * w
            }
            PotentialKind::Polynomial { coeffs, .. } => horner(coeffs, u),
            PotentialKind::Table(s) => s.eval(u).0,
        }
    }

    /// `F'(u)`, with `u` clamped to `[-1, 1]`.
    #[inline]
    pub fn df(&self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        match &self.kind {
            PotentialKind::Quartic { scale } => scale * (u * u * u - u),
            PotentialKind::Polynomial { d1, .. } => horner(d1, u),
            PotentialKind::Table(s) => s.eval(u).1,
        }
    }

    /// `F''(u)`, with `u` clamped to `[-1, 1]`.
    #[inline]
    pub fn d2f(&self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        match &self.kind {
            PotentialKind::Quartic { scale } => scale * (3.0 * u * u - 1.0),
            PotentialKind::Polynomial { d2, .. } => horner(d2, u),
            PotentialKind::Table(s) => s.eval(u).2,
        }
    }

    /// Checked evaluation of `F` (`order` 0), `F'` (1) or `F''` (2).
    ///
    /// Arguments outside `[-1, 1]` by more than [`CLAMP_TOL`] are clamped and
    /// logged.
    pub fn eval(&self, order: usize, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite argument {u}")));
        }
        if u.abs() > 1.0 + CLAMP_TOL {
            log::warn!("potential evaluated at u = {u}, clamped to [-1, 1]");
        }
        match order {
            0 => Ok(self.f(u)),
            1 => Ok(self.df(u)),
            2 => Ok(self.d2f(u)),
            _ => Err(Error::InvalidInput(format!(
                "derivative order must be 0, 1 or 2, got {order}"
            ))),
        }
    }

    /// `G(t) = ∫_{-1}^{t} √(2F(s)) ds`.
    pub fn g_antiderivative(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t.abs() > 1.0 + CLAMP_TOL {
            return Err(Error::InvalidInput(format!("G(t) needs t in [-1, 1], got {t}")));
        }
        let t = t.clamp(-1.0, 1.0);
        adaptive_simpson(|s| (2.0 * self.f(s)).max(0.0).sqrt(), -1.0, t, QUAD_TOL)
    }

    /// Interface energy `β = G(1)`.
    pub fn beta(&self) -> Result<f64> {
        if let Some(b) = self.beta.get() {
            return Ok(*b);
        }
        let b = self.g_antiderivative(1.0)?;
        Ok(*self.beta.get_or_init(|| b))
    }

    /// `(F''(-1), F''(1))`.
    pub fn well_curvatures(&self) -> (f64, f64) {
        (self.d2f(-1.0), self.d2f(1.0))
    }

    /// Length scale `1/√F''` of the slower of the two wells.
    pub fn interface_width(&self) -> f64 {
        let (a, b) = self.well_curvatures();
        1.0 / a.min(b).sqrt()
    }

    /// Largest value of `F''` on `[-1, 1]`.
    pub fn max_curvature(&self) -> f64 {
        (0..=1000)
            .map(|k| self.d2f(-1.0 + 2.0 * k as f64 / 1000.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact heteroclinic layer when one is known (scaled quartic only).
    pub fn closed_form_profile(&self, s: f64) -> Option<f64> {
        match self.kind {
            PotentialKind::Quartic { scale } => Some((scale.sqrt() * s / std::f64::consts::SQRT_2).tanh()),
            _ => None,
        }
    }

    /// Checks the double-well structure on a 10⁴-point scan and returns the
    /// refined interior zero of `F'`.
    pub fn validate(&self) -> Result<f64> {
        let bad = |msg: String| Err(Error::InvalidPotential(msg));
        let scan: Vec<f64> = (0..SCAN_POINTS)
            .map(|k| -1.0 + 2.0 * (k as f64 + 0.5) / SCAN_POINTS as f64)
            .collect();
        let fmax = scan.iter().map(|&u| self.f(u)).fold(0.0, f64::max);
        if !(fmax > 0.0) {
            return bad("F is not positive inside (-1, 1)".into());
        }
        let (fm, fp) = (self.f(-1.0), self.f(1.0));
        if fm.abs() > 1e-10 * fmax || fp.abs() > 1e-10 * fmax {
            return bad(format!("F(-1) = {fm:e}, F(1) = {fp:e}; both must vanish"));
        }
        let dmax = scan.iter().map(|&u| self.df(u).abs()).fold(0.0, f64::max);
        let (dm, dp) = (self.df(-1.0), self.df(1.0));
        if dm.abs() > 1e-8 * dmax || dp.abs() > 1e-8 * dmax {
            return bad(format!("F'(-1) = {dm:e}, F'(1) = {dp:e}; both must vanish"));
        }
        let (cm, cp) = self.well_curvatures();
        if !(cm > 0.0 && cp > 0.0) {
            return bad(format!("F''(-1) = {cm}, F''(1) = {cp}; both must be positive"));
        }
        if let Some(u) = scan.iter().find(|&&u| !(self.f(u) > 0.0)) {
            return bad(format!("F({u}) is not positive"));
        }
        let t0 = self.refine_t0()?;
        for &u in &scan {
            let d = self.df(u);
            if (u - t0).abs() < 1e-9 {
                continue;
            }
            if (u < t0 && !(d > 0.0)) || (u > t0 && !(d < 0.0)) {
                return bad(format!("F'({u}) = {d:e} breaks the sign pattern around t0 = {t0}"));
            }
        }
        Ok(t0)
    }

    fn refine_t0(&self) -> Result<f64> {
        let declared = self.t0;
        if !(declared > -1.0 && declared < 1.0) {
            return Err(Error::InvalidPotential(format!("t0 = {declared} must lie in (-1, 1)")));
        }
        if self.df(declared) == 0.0 {
            return Ok(declared);
        }
        let delta = 1e-3;
        let (mut a, mut b) = ((declared - delta).max(-1.0 + 1e-9), (declared + delta).min(1.0 - 1e-9));
        let (fa, fb) = (self.df(a), self.df(b));
        if !(fa > 0.0 && fb < 0.0) {
            return Err(Error::InvalidPotential(format!(
                "F' has no sign change within {delta} of the declared t0 = {declared}"
            )));
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if self.df(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(if self.df(a).abs() <= self.df(b).abs() { a } else { b })
    }
}

fn horner(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * u + ck)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &ck)| k as f64 * ck).collect()
}

/// Clamped cubic spline on a strictly increasing grid.
#[derive(Clone, Debug)]
pub struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    pub fn clamped(x: Vec<f64>, y: Vec<f64>, d_left: f64, d_right: f64) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::InvalidPotential("table needs at least 3 (u, F) rows".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential(
                "table u-values must be finite and strictly increasing".into(),
            ));
        }
        if (x[0] + 1.0).abs() > 1e-12 || (x[n - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPotential("table must span exactly [-1, 1]".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = 2.0 * h[0];
        upper[0] = h[0];
        rhs[0] = 6.0 * ((y[1] - y[0]) / h[0] - d_left);
        for i in 1..n - 1 {
            lower[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            upper[i] = h[i];
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        lower[n - 1] = h[n - 2];
        diag[n - 1] = 2.0 * h[n - 2];
        rhs[n - 1] = 6.0 * (d_right - (y[n - 1] - y[n - 2]) / h[n - 2]);
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs)
            .ok_or_else(|| Error::InvalidPotential("singular spline system".into()))?;
        Ok(Spline { x, y, m: rhs })
    }

    /// `(S, S', S'')` at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = (x1 - t, t - x0);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let c0 = self.y[i] / h - m0 * h / 6.0;
        let c1 = self.y[i + 1] / h - m1 * h / 6.0;
        let s = m0 * a * a * a / (6.0 * h) + m1 * b * b * b / (6.0 * h) + c0 * a + c1 * b;
        let ds = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - c0 + c1;
        let d2s = (m0 * a + m1 * b) / h;
        (s, ds, d2s)
    }
}
