//! Small dense and Krylov linear-algebra kernels.

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (so `lower[0]` is unused),
/// `upper[i]` multiplies `x[i+1]` (so `upper[n-1]` is unused). Returns `None`
/// on a zero pivot.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Option<()> {
    let n = diag.len();
    if n == 0 {
        return Some(());
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return None;
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i];
        if beta == 0.0 || !beta.is_finite() {
            return None;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i + 1] * rhs[i + 1];
    }
    Some(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of a MINRES solve.
#[derive(Clone, Debug)]
pub struct MinresOutcome {
    pub iterations: usize,
    /// Preconditioned residual norm relative to its initial value.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned MINRES for symmetric (possibly indefinite) `A` with a
/// symmetric positive definite preconditioner `M`.
///
/// `apply_a(v, out)` computes `out = A v`; `apply_m_inv(r, out)` computes
/// `out = M⁻¹ r`. Starts from `x = 0` and overwrites `x`.
pub fn minres<A, P>(apply_a: A, apply_m_inv: P, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> MinresOutcome
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    let mut r1 = b.to_vec();
    let mut y = vec![0.0; n];
    apply_m_inv(&r1, &mut y);
    let beta1_sq = dot(&r1, &y);
    if beta1_sq <= 0.0 || !beta1_sq.is_finite() {
        return MinresOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: beta1_sq == 0.0,
        };
    }
    let beta1 = beta1_sq.sqrt();
    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];

    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut itn = 0;
    let mut rel = 1.0;

    while itn < max_iter {
        itn += 1;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        apply_a(&v, &mut y);
        if itn >= 2 {
            let f = beta / oldb;
            for (yi, ri) in y.iter_mut().zip(&r1) {
                *yi -= f * ri;
            }
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        for (yi, ri) in y.iter_mut().zip(&r2) {
            *yi -= f * ri;
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        apply_m_inv(&r2, &mut y);
        oldb = beta;
        let bsq = dot(&r2, &y);
        if bsq < 0.0 || !bsq.is_finite() {
            break;
        }
        beta = bsq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        rel = phibar / beta1;
        if rel <= rtol || beta == 0.0 {
            return MinresOutcome {
                iterations: itn,
                relative_residual: rel,
                converged: true,
            };
        }
    }
    MinresOutcome {
        iterations: itn,
        relative_residual: rel,
        converged: rel <= rtol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        // [2 1 0; 1 3 1; 0 1 4] x = [3, 5, 5] -> x = [1, 1, 1]
        let mut rhs = vec![3.0, 5.0, 5.0];
        solve_tridiagonal(&[0.0, 1.0, 1.0], &[2.0, 3.0, 4.0], &[1.0, 1.0, 0.0], &mut rhs).unwrap();
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn minres_solves_indefinite_diagonal() {
        let d = [3.0, -2.0, 0.5, -1.5, 4.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut x = vec![0.0; 5];
        let out = minres(
            |v, o| {
                for i in 0..5 {
                    o[i] = d[i] * v[i];
                }
            },
            |r, o| o.copy_from_slice(r),
            &b,
            &mut x,
            1e-12,
            50,
        );
        assert!(out.converged);
        for i in 0..5 {
            assert!((x[i] - b[i] / d[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn minres_preconditioned_tridiagonal() {
        // Indefinite symmetric tridiagonal with Jacobi-like SPD preconditioner.
        let n = 40;
        let a = |v: &[f64], o: &mut [f64]| {
            for i in 0..n {
                let mut s = (2.0 - 0.3) * v[i];
                if i > 0 {
                    s -= v[i - 1];
                }
                if i + 1 < n {
                    s -= v[i + 1];
                }
                o[i] = s;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = vec![0.0; n];
        let out = minres(
            a,
            |r, o| o.iter_mut().zip(r).for_each(|(o, r)| *o = r / 2.0),
            &b,
            &mut x,
            1e-12,
            200,
        );
        assert!(out.converged);
        let mut ax = vec![0.0; n];
        a(&x, &mut ax);
        let err = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}
