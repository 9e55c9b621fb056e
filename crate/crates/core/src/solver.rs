//! Relaxation of `Δu = F'(u)` on a rectangle with fixed edge data.
//!
//! Unknowns are the interior nodes, plus the `x = x0` column when that edge
//! carries the mirror condition (ghost node `u[-1] = u[1]`). A stabilized
//! semi-implicit gradient flow brings the field close to a solution, then
//! damped Newton polishes it. Saddle-type solutions are unstable for the
//! flow, so the flow phase only has to get into Newton's basin.
//!
//! Both phases invert `c - Δ⁰` (homogeneous edge data) with sine/cosine
//! transforms: exactly in the flow, as a MINRES preconditioner in Newton.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustdct::{Dct2, Dct3, DctPlanner, Dst1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, max_range, sum_range, Exec};
use crate::field::{Field2D, Grid};
use crate::linalg::minres;
use crate::potential::Potential;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Target interior max-norm residual.
    pub tol: f64,
    /// Residual at which the flow hands over to Newton.
    pub switch_tol: f64,
    /// Cap on flow plus Newton steps.
    pub max_iter: usize,
    pub max_flow_steps: usize,
    /// Pseudo-time budget of the flow phase.
    pub max_flow_time: f64,
    pub dt_initial: f64,
    pub dt_max: f64,
    pub max_newton: usize,
    pub max_linear_iter: usize,
    /// Consecutive residual increases that count as divergence.
    pub divergence_window: usize,
    pub exec: Exec,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-8,
            switch_tol: 2e-2,
            max_iter: 2000,
            max_flow_steps: 1500,
            max_flow_time: 200.0,
            dt_initial: 0.1,
            dt_max: 5.0,
            max_newton: 60,
            max_linear_iter: 400,
            divergence_window: 50,
            exec: Exec::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad("solver tol must be positive");
        }
        if !(self.switch_tol >= self.tol) {
            return bad("switch_tol must be ≥ tol");
        }
        if !(self.dt_initial > 0.0 && self.dt_max >= self.dt_initial) {
            return bad("need 0 < dt_initial ≤ dt_max");
        }
        if self.max_iter == 0 || self.divergence_window == 0 || self.max_linear_iter == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub flow_steps: usize,
    pub flow_time: f64,
    pub newton_steps: usize,
    pub linear_iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Max-norm residual after every accepted step.
    pub residual_history: Vec<f64>,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub field: Field2D,
    pub stats: SolveStats,
}

/// Which nodes are unknowns.
#[derive(Clone, Copy, Debug)]
struct Layout {
    grid: Grid,
    neumann: bool,
    /// First unknown column.
    i0: usize,
    ux: usize,
    uy: usize,
}

impl Layout {
    fn new(grid: Grid, neumann: bool) -> Result<Self> {
        if grid.nx < 3 || grid.ny < 3 {
            return Err(Error::InvalidInput(format!(
                "grid {}×{} has no interior nodes",
                grid.nx, grid.ny
            )));
        }
        let i0 = if neumann { 0 } else { 1 };
        Ok(Layout {
            grid,
            neumann,
            i0,
            ux: grid.nx - 1 - i0,
            uy: grid.ny - 2,
        })
    }

    fn len(&self) -> usize {
        self.ux * self.uy
    }

    #[inline]
    fn node(&self, a: usize, b: usize) -> usize {
        self.grid.idx(self.i0 + a, 1 + b)
    }

    /// Symmetrizing weight of unknown column `a`.
    #[inline]
    fn weight(&self, a: usize) -> f64 {
        if self.neumann && a == 0 {
            0.5
        } else {
            1.0
        }
    }
}

/// `Δ_h u - F'(u)` on the unknowns, row-major over `(a, b)`.
fn residual_vec(lay: &Layout, u: &[f64], p: &Potential, exec: Exec, out: &mut [f64]) {
    let g = lay.grid;
    let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    let nx = g.nx;
    for_each_chunk(exec, out, lay.ux, |b, row| {
        for (a, r) in row.iter_mut().enumerate() {
            let k = lay.node(a, b);
            let i = lay.i0 + a;
            let c = u[k];
            let right = u[k + 1];
            let left = if i == 0 { right } else { u[k - 1] };
            let lap = (left - 2.0 * c + right) * cx + (u[k - nx] - 2.0 * c + u[k + nx]) * cy;
            *r = lap - p.df(c);
        }
    });
}

fn max_abs(exec: Exec, v: &[f64], chunk: usize) -> f64 {
    let rows = v.len() / chunk;
    max_range(exec, rows, |b| {
        v[b * chunk..(b + 1) * chunk]
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    })
    .max(0.0)
}

/// Interior max-norm residual `max |Δ_h u - F'(u)|`, including the mirror
/// column of a half-plane field. Zero for grids without interior nodes.
pub fn residual(f: &Field2D, p: &Potential) -> f64 {
    residual_with(f, p, Exec::default())
}

pub fn residual_with(f: &Field2D, p: &Potential, exec: Exec) -> f64 {
    let Ok(lay) = Layout::new(f.grid, f.neumann_left()) else {
        return 0.0;
    };
    let mut r = vec![0.0; lay.len()];
    residual_vec(&lay, &f.values, p, exec, &mut r);
    max_abs(exec, &r, lay.ux)
}

enum XTransform {
    Sine(Arc<dyn Dst1<f64>>),
    Cosine(Arc<dyn Dct3<f64>>, Arc<dyn Dct2<f64>>),
}

/// Diagonalizes `-Δ⁰` on the unknowns.
struct FastSolver {
    lay: Layout,
    x: XTransform,
    y: Arc<dyn Dst1<f64>>,
    lam_x: Vec<f64>,
    lam_y: Vec<f64>,
    exec: Exec,
}

impl FastSolver {
    fn new(lay: Layout, exec: Exec) -> Self {
        let mut planner = DctPlanner::new();
        let g = lay.grid;
        let (ux, uy) = (lay.ux, lay.uy);
        let pi = std::f64::consts::PI;
        let x = if lay.neumann {
            XTransform::Cosine(planner.plan_dct3(ux), planner.plan_dct2(ux))
        } else {
            XTransform::Sine(planner.plan_dst1(ux))
        };
        let lam_x = (0..ux)
            .map(|k| {
                let arg = if lay.neumann {
                    pi * (2 * k + 1) as f64 / (2 * ux) as f64
                } else {
                    pi * (k + 1) as f64 / (ux + 1) as f64
                };
                (2.0 - 2.0 * arg.cos()) / (g.hx * g.hx)
            })
            .collect();
        let lam_y = (0..uy)
            .map(|k| (2.0 - 2.0 * (pi * (k + 1) as f64 / (uy + 1) as f64).cos()) / (g.hy * g.hy))
            .collect();
        FastSolver {
            lay,
            x,
            y: planner.plan_dst1(uy),
            lam_x,
            lam_y,
            exec,
        }
    }

    /// `out = (c - Δ⁰)⁻¹ rhs`, with `c > 0`.
    fn solve(&self, c: f64, rhs: &[f64], out: &mut [f64]) {
        let (ux, uy) = (self.lay.ux, self.lay.uy);
        out.copy_from_slice(rhs);
        self.rows_x(out, true);
        let mut t = transpose(out, ux, uy);
        let ys = 2.0 / (uy + 1) as f64;
        let xs = match self.x {
            XTransform::Sine(_) => 2.0 / (ux + 1) as f64,
            XTransform::Cosine(..) => 2.0 / ux as f64,
        };
        let y = &self.y;
        let (lx, ly) = (&self.lam_x, &self.lam_y);
        for_each_chunk(self.exec, &mut t, uy, |a, col| {
            y.process_dst1(col);
            for (b, v) in col.iter_mut().enumerate() {
                *v *= xs * ys / (c + lx[a] + ly[b]);
            }
            y.process_dst1(col);
        });
        transpose_into(&t, uy, ux, out);
        self.rows_x(out, false);
    }

    fn rows_x(&self, data: &mut [f64], forward: bool) {
        let ux = self.lay.ux;
        match &self.x {
            XTransform::Sine(s) => for_each_chunk(self.exec, data, ux, |_, row| s.process_dst1(row)),
            XTransform::Cosine(c3, c2) => {
                if forward {
                    for_each_chunk(self.exec, data, ux, |_, row| c3.process_dct3(row))
                } else {
                    for_each_chunk(self.exec, data, ux, |_, row| c2.process_dct2(row))
                }
            }
        }
    }
}

fn transpose(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    transpose_into(src, w, h, &mut out);
    out
}

/// `src` is `h` rows of `w`; `out` becomes `w` rows of `h`.
fn transpose_into(src: &[f64], w: usize, h: usize, out: &mut [f64]) {
    const B: usize = 32;
    for rb in (0..h).step_by(B) {
        for cb in (0..w).step_by(B) {
            for r in rb..(rb + B).min(h) {
                for c in cb..(cb + B).min(w) {
                    out[c * h + r] = src[r * w + c];
                }
            }
        }
    }
}

struct Problem<'a> {
    lay: Layout,
    p: &'a Potential,
    fast: FastSolver,
    exec: Exec,
}

impl Problem<'_> {
    fn residual(&self, u: &[f64], r: &mut [f64]) -> f64 {
        residual_vec(&self.lay, u, self.p, self.exec, r);
        max_abs(self.exec, r, self.lay.ux)
    }

    fn l2(&self, r: &[f64]) -> f64 {
        let ux = self.lay.ux;
        sum_range(self.exec, self.lay.uy, |b| {
            r[b * ux..(b + 1) * ux].iter().map(|x| x * x).sum()
        })
        .sqrt()
    }

    /// `u[unknowns] += δ`, clamped to `[-1, 1]`.
    fn update(&self, u: &mut [f64], base: &[f64], delta: &[f64], step: f64) {
        let lay = self.lay;
        let nx = lay.grid.nx;
        for_each_chunk(self.exec, &mut u[nx..nx * (lay.grid.ny - 1)], nx, |b, row| {
            let k0 = (b + 1) * nx;
            for a in 0..lay.ux {
                let i = lay.i0 + a;
                row[i] = (base[k0 + i] + step * delta[b * lay.ux + a]).clamp(-1.0, 1.0);
            }
        });
    }

    /// Weighted Newton operator `W(-Δ⁰ + F''(u))`.
    fn apply_jac(&self, curv: &[f64], v: &[f64], out: &mut [f64]) {
        let lay = self.lay;
        let g = lay.grid;
        let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        let (ux, uy) = (lay.ux, lay.uy);
        for_each_chunk(self.exec, out, ux, |b, row| {
            for (a, o) in row.iter_mut().enumerate() {
                let k = b * ux + a;
                let c = v[k];
                let right = if a + 1 < ux { v[k + 1] } else { 0.0 };
                let left = if a > 0 {
                    v[k - 1]
                } else if lay.neumann {
                    right
                } else {
                    0.0
                };
                let down = if b > 0 { v[k - ux] } else { 0.0 };
                let up = if b + 1 < uy { v[k + ux] } else { 0.0 };
                let lap = (left - 2.0 * c + right) * cx + (down - 2.0 * c + up) * cy;
                *o = lay.weight(a) * (curv[k] * c - lap);
            }
        });
    }
}

/// Relaxes `init` to a discrete solution. Dirichlet nodes are left
/// untouched. On divergence or when the iteration cap is hit the error
/// carries the lowest-residual field seen.
pub fn relax(init: &Field2D, p: &Potential, cfg: &SolveConfig) -> Result<Solved> {
    cfg.validate()?;
    if init.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial field has non-finite values".into()));
    }
    if init.values.iter().any(|v| v.abs() > 1.0 + 1e-6) {
        return Err(Error::InvalidInput("initial field leaves [-1, 1]".into()));
    }
    let start = Instant::now();
    let lay = Layout::new(init.grid, init.neumann_left())?;
    let exec = cfg.exec;
    let prob = Problem {
        lay,
        p,
        fast: FastSolver::new(lay, exec),
        exec,
    };
    let n = lay.len();
    let mut u = init.values.clone();
    let mut r = vec![0.0; n];
    let mut res = prob.residual(&u, &mut r);
    let mut stats = SolveStats {
        initial_residual: res,
        ..Default::default()
    };
    let mut best = (res, u.clone());
    let finish = |u: Vec<f64>, res: f64, mut stats: SolveStats| {
        stats.final_residual = res;
        stats.elapsed_secs = start.elapsed().as_secs_f64();
        let mut field = init.clone();
        field.values = u;
        field.residual_max = res;
        Solved { field, stats }
    };
    if res <= cfg.tol {
        return Ok(finish(u, res, stats));
    }

    let stab = p.max_curvature().max(0.0);
    let mut dt = cfg.dt_initial;
    let mut delta = vec![0.0; n];
    let mut growth = 0usize;
    let mut iters = 0usize;
    let track =
        |res: f64, prev: f64, u: &[f64], stats: &mut SolveStats, best: &mut (f64, Vec<f64>), growth: &mut usize| {
            stats.residual_history.push(res);
            if res < best.0 {
                best.0 = res;
                best.1.copy_from_slice(u);
            }
            *growth = if res > prev { *growth + 1 } else { 0 };
            *growth
        };
    let diverged = |stats: &SolveStats, best: (f64, Vec<f64>)| {
        let mut f = init.clone();
        f.values = best.1;
        f.residual_max = best.0;
        Error::Divergence {
            steps: stats.residual_history.len(),
            best: Box::new(f),
        }
    };

    // Flow: (1/dt + S - Δ⁰) δ = R(u).
    let mut base = u.clone();
    while res > cfg.switch_tol
        && stats.flow_steps < cfg.max_flow_steps
        && stats.flow_time < cfg.max_flow_time
        && iters < cfg.max_iter
    {
        prob.fast.solve(1.0 / dt + stab, &r, &mut delta);
        base.copy_from_slice(&u);
        prob.update(&mut u, &base, &delta, 1.0);
        let prev = res;
        res = prob.residual(&u, &mut r);
        stats.flow_steps += 1;
        stats.flow_time += dt;
        iters += 1;
        dt = if res < prev {
            (dt * 1.5).min(cfg.dt_max)
        } else {
            (dt * 0.5).max(1e-6)
        };
        if track(res, prev, &u, &mut stats, &mut best, &mut growth) >= cfg.divergence_window {
            // Sustained growth under the flow means it is leaving a
            // saddle-type critical point; Newton takes over from the best
            // iterate instead.
            log::debug!("flow leaving a critical point after {} steps", stats.flow_steps);
            u.copy_from_slice(&best.1);
            res = prob.residual(&u, &mut r);
            break;
        }
    }
    growth = 0;
    log::debug!(
        "flow: {} steps, t = {:.2}, residual {:.3e}",
        stats.flow_steps,
        stats.flow_time,
        res
    );

    // Newton: W(-Δ⁰ + F''(u)) δ = W R(u), preconditioned by W(c - Δ⁰).
    let (c_lo, c_hi) = p.well_curvatures();
    let shift = c_lo.max(c_hi);
    let mut curv = vec![0.0; n];
    let mut wr = vec![0.0; n];
    let mut trial_r = vec![0.0; n];
    let mut norm = prob.l2(&r);
    while res > cfg.tol && stats.newton_steps < cfg.max_newton && iters < cfg.max_iter {
        for_each_chunk(exec, &mut curv, lay.ux, |b, row| {
            for (a, c) in row.iter_mut().enumerate() {
                *c = p.d2f(u[lay.node(a, b)]);
            }
        });
        for (k, w) in wr.iter_mut().enumerate() {
            *w = lay.weight(k % lay.ux) * r[k];
        }
        let rtol = (0.1 * res.sqrt()).clamp(1e-10, 1e-2);
        let out = minres(
            |v, o| prob.apply_jac(&curv, v, o),
            |v, o| {
                let mut tmp = v.to_vec();
                for (k, t) in tmp.iter_mut().enumerate() {
                    *t /= lay.weight(k % lay.ux);
                }
                prob.fast.solve(shift, &tmp, o)
            },
            &wr,
            &mut delta,
            rtol,
            cfg.max_linear_iter,
        );
        stats.linear_iterations += out.iterations;
        if !out.converged {
            log::debug!("MINRES stopped at relative residual {:.2e}", out.relative_residual);
        }
        // Backtracking on the L2 residual.
        base.copy_from_slice(&u);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            prob.update(&mut u, &base, &delta, step);
            let trial = prob.residual(&u, &mut trial_r);
            let trial_norm = prob.l2(&trial_r);
            if trial_norm <= (1.0 - 1e-4 * step) * norm || step < 1e-3 {
                accepted = true;
                let prev = res;
                res = trial;
                norm = trial_norm;
                std::mem::swap(&mut r, &mut trial_r);
                stats.newton_steps += 1;
                iters += 1;
                if track(res, prev, &u, &mut stats, &mut best, &mut growth) >= cfg.divergence_window {
                    return Err(diverged(&stats, best));
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            u.copy_from_slice(&base);
            break;
        }
        log::debug!("newton {}: step {step}, residual {res:.3e}", stats.newton_steps);
    }

    if res <= cfg.tol {
        return Ok(finish(u, res, stats));
    }
    let mut f = init.clone();
    f.values = best.1;
    f.residual_max = best.0;
    Err(Error::Timeout {
        max_iter: cfg.max_iter,
        residual: best.0,
        best: Box::new(f),
    })
}

/// Adds uniform noise in `[-amplitude, amplitude]` to the unknown nodes,
/// clamped to `[-1, 1]`. Deterministic in `seed`.
pub fn perturb_interior(field: &mut Field2D, amplitude: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = field.grid;
    let i0 = if field.neumann_left() { 0 } else { 1 };
    for j in 1..g.ny.saturating_sub(1) {
        for i in i0..g.nx.saturating_sub(1) {
            let k = g.idx(i, j);
            let v = field.values[k] + rng.gen_range(-amplitude..=amplitude);
            field.values[k] = v.clamp(-1.0, 1.0);
        }
    }
    field.residual_max = f64::NAN;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{build_boundary, BoundarySpec};
    use crate::profile::solve_profile;

    fn lay(nx: usize, ny: usize, neumann: bool) -> Layout {
        let g = Grid::covering(0.0, (nx - 1) as f64 * 0.1, 0.0, (ny - 1) as f64 * 0.13, 0.1, 0.13).unwrap();
        Layout::new(g, neumann).unwrap()
    }

    /// Dense `(c - Δ⁰) v` straight from the stencil.
    fn apply_shifted(lay: &Layout, c: f64, v: &[f64]) -> Vec<f64> {
        let g = lay.grid;
        let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        let (ux, uy) = (lay.ux, lay.uy);
        let at = |a: isize, b: isize| -> f64 {
            let a = if lay.neumann && a == -1 { 1 } else { a };
            if a < 0 || b < 0 || a >= ux as isize || b >= uy as isize {
                0.0
            } else {
                v[b as usize * ux + a as usize]
            }
        };
        let mut out = vec![0.0; v.len()];
        for b in 0..uy as isize {
            for a in 0..ux as isize {
                let m = at(a, b);
                let lap = (at(a - 1, b) - 2.0 * m + at(a + 1, b)) * cx + (at(a, b - 1) - 2.0 * m + at(a, b + 1)) * cy;
                out[b as usize * ux + a as usize] = c * m - lap;
            }
        }
        out
    }

    #[test]
    fn fast_solver_inverts_the_stencil() {
        for neumann in [false, true] {
            let lay = lay(13, 9, neumann);
            let fast = FastSolver::new(lay, Exec::Sequential);
            let x: Vec<f64> = (0..lay.len()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let b = apply_shifted(&lay, 2.0, &x);
            let mut y = vec![0.0; x.len()];
            fast.solve(2.0, &b, &mut y);
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-11, "neumann={neumann}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn residual_of_constants_vanishes() {
        let g = Grid::covering(-1.0, 1.0, -1.0, 1.0, 0.1, 0.1).unwrap();
        let p = Potential::quartic();
        for c in [1.0, -1.0, 0.0] {
            let f = Field2D::from_fn(g, BoundarySpec::Unspecified, "quartic", |_, _| c);
            assert_eq!(residual(&f, &p), 0.0);
        }
    }

    #[test]
    fn residual_of_sampled_layer_is_second_order() {
        let p = Potential::quartic();
        let res = |h: f64| {
            let g = Grid::covering(-3.0, 3.0, -3.0, 3.0, h, h).unwrap();
            let f = Field2D::from_fn(g, BoundarySpec::Unspecified, "quartic", |_, y| {
                (y / std::f64::consts::SQRT_2).tanh()
            });
            residual(&f, &p)
        };
        let (a, b) = (res(0.05), res(0.025));
        // Leading term h² g''''/12 with max |g''''| ≈ 0.5 for this layer.
        assert!(a > 1e-5 && a < 5e-3, "{a}");
        let ratio = a / b;
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn planar_field_reproduces_profile() {
        let p = Potential::quartic();
        let prof = solve_profile(&p, 12.0, 0.02, 1e-11).unwrap();
        let g = Grid::covering(-5.0, 5.0, -5.0, 5.0, 0.1, 0.1).unwrap();
        let spec = BoundarySpec::Planar {
            theta: std::f64::consts::FRAC_PI_2,
            offset: 0.0,
        };
        let mut init = build_boundary(&spec, g, &prof, p.interface_width(), p.id()).unwrap();
        // Start away from the answer.
        perturb_interior(&mut init, 0.2, 7);
        let out = relax(&init, &p, &SolveConfig::default()).unwrap();
        assert!(out.field.residual_max <= 1e-8);
        for j in 0..g.ny {
            let y = g.y(j);
            for i in 0..g.nx {
                let v = out.field.at(i, j);
                assert!((v - prof.eval(-y)).abs() < 1e-3, "({i},{j}) {v} vs {}", prof.eval(-y));
            }
        }
    }

    #[test]
    fn solved_input_is_returned_unchanged() {
        let p = Potential::quartic();
        let g = Grid::covering(-2.0, 2.0, -2.0, 2.0, 0.1, 0.1).unwrap();
        let f = Field2D::from_fn(g, BoundarySpec::Unspecified, "quartic", |_, _| 1.0);
        let out = relax(&f, &p, &SolveConfig::default()).unwrap();
        assert_eq!(out.stats.newton_steps, 0);
        assert_eq!(out.stats.flow_steps, 0);
        assert_eq!(out.field.values, f.values);
    }

    fn saddle(l: f64, h: f64, exec: Exec) -> (Field2D, Solved) {
        let p = Potential::quartic();
        let prof = solve_profile(&p, 14.0, 0.02, 1e-11).unwrap();
        let g = Grid::covering(-l, l, -l, l, h, h).unwrap();
        let init = build_boundary(
            &BoundarySpec::saddle(std::f64::consts::FRAC_PI_4),
            g,
            &prof,
            p.interface_width(),
            p.id(),
        )
        .unwrap();
        let cfg = SolveConfig {
            exec,
            ..Default::default()
        };
        let out = relax(&init, &p, &cfg).unwrap();
        (init, out)
    }

    #[test]
    fn saddle_keeps_symmetries() {
        let (init, out) = saddle(6.0, 0.1, Exec::default());
        let f = &out.field;
        let g = f.grid;
        let n = g.nx;
        let mut anti = 0.0_f64;
        let mut even = 0.0_f64;
        for j in 0..n {
            for i in 0..n {
                anti = anti.max((f.at(i, j) + f.at(j, i)).abs());
                even = even.max((f.at(i, j) - f.at(i, n - 1 - j)).abs());
            }
        }
        assert!(anti < 1e-6, "{anti}");
        assert!(even < 1e-6, "{even}");
        // Edges untouched.
        for i in 0..n {
            assert_eq!(f.at(i, 0), init.at(i, 0));
            assert_eq!(f.at(0, i), init.at(0, i));
        }
        // u_x > 0 for x > 0, y > 0 away from the edges.
        let (gx, _) = f.gradient(Exec::Sequential);
        let c = n / 2;
        for j in c + 1..n - 5 {
            for i in c + 1..n - 5 {
                assert!(gx[g.idx(i, j)] > 0.0, "u_x at ({i},{j})");
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (_, a) = saddle(5.0, 0.125, Exec::Sequential);
        let (_, b) = saddle(5.0, 0.125, Exec::Parallel);
        let d = a
            .field
            .values
            .iter()
            .zip(&b.field.values)
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn halfplane_mirror_edge_is_free() {
        let p = Potential::quartic();
        let prof = solve_profile(&p, 14.0, 0.02, 1e-11).unwrap();
        let g = Grid::covering(0.0, 6.0, -6.0, 6.0, 0.1, 0.1).unwrap();
        let spec = BoundarySpec::Halfplane {
            theta: std::f64::consts::FRAC_PI_4,
            offsets: [0.0; 4],
        };
        let init = build_boundary(&spec, g, &prof, p.interface_width(), p.id()).unwrap();
        let out = relax(&init, &p, &SolveConfig::default()).unwrap();
        let full = saddle(6.0, 0.1, Exec::default()).1.field;
        // Same as the right half of the full saddle.
        let off = full.grid.nx / 2;
        let mut d = 0.0_f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                d = d.max((out.field.at(i, j) - full.at(off + i, j)).abs());
            }
        }
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn timeout_carries_best_field() {
        let p = Potential::quartic();
        let prof = solve_profile(&p, 12.0, 0.02, 1e-11).unwrap();
        let g = Grid::covering(-5.0, 5.0, -5.0, 5.0, 0.1, 0.1).unwrap();
        let spec = BoundarySpec::saddle(std::f64::consts::FRAC_PI_4);
        let init = build_boundary(&spec, g, &prof, p.interface_width(), p.id()).unwrap();
        let cfg = SolveConfig {
            max_iter: 3,
            ..Default::default()
        };
        match relax(&init, &p, &cfg) {
            Err(Error::Timeout { residual, best, .. }) => {
                assert!(residual < residual_of(&init, &p));
                assert!((residual_of(&best, &p) - residual).abs() < 1e-12);
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    fn residual_of(f: &Field2D, p: &Potential) -> f64 {
        residual_with(f, p, Exec::Sequential)
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = SolveConfig {
            tol: -1.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
