//! Four-end solutions at a prescribed half angle `θ`.
//!
//! Away from `θ = π/4` the ends of a four-end solution are the lines
//! `y = ±(x tan θ + b)` (and their mirror images), with an intercept `b`
//! that the equation selects. Pinning rays through the origin instead bends
//! the nodal set between the junction and the box edge. Here `b` is found
//! self-consistently: the zero set is solved with ends pinned at intercept
//! `b`, its mean intercept over an annulus is measured, and a secant
//! iteration drives the two together. The half angle is reached by
//! continuation from the symmetric saddle, where `b = 0`.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::boundary::{build_boundary, BoundarySpec};
use crate::error::{Error, Result};
use crate::field::{Field2D, Grid};
use crate::levelset::extract_zero_set;
use crate::potential::Potential;
use crate::profile::Profile1D;
use crate::solver::{relax, SolveConfig, Solved};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourEndOptions {
    /// Largest change of `θ` per continuation step, in radians.
    pub step: f64,
    /// Stop when `|b_measured - b_pinned|` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Inner radius of the measuring annulus, in interface widths.
    pub r_min_widths: f64,
    /// Outer radius as a fraction of the distance to the nearest edge.
    pub r_max_fraction: f64,
}

impl Default for FourEndOptions {
    fn default() -> Self {
        FourEndOptions {
            step: 7.5f64.to_radians(),
            tol: 1e-3,
            max_iter: 12,
            r_min_widths: 8.0,
            r_max_fraction: 0.75,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FourEnd {
    pub solved: Solved,
    pub spec: BoundarySpec,
    /// Intercept `b` of the end in the first quadrant.
    pub intercept: f64,
    /// Relaxations performed over the whole continuation.
    pub solves: usize,
}

/// Normal-form offsets of the even configuration with intercept `b`.
pub fn fourend_offsets(theta: f64, b: f64) -> [f64; 4] {
    let c = b * theta.cos();
    [c, -c, c, -c]
}

/// Mean intercept `y - x tan θ` of the zero set in the open first quadrant
/// at radii `r_min ≤ r ≤ r_max`.
pub fn measure_intercept(f: &Field2D, theta: f64, r_min: f64, r_max: f64) -> Option<f64> {
    let z = extract_zero_set(f);
    let (s, c) = theta.sin_cos();
    let (mut sum, mut n) = (0.0, 0usize);
    for q in z.points() {
        let r = q[0].hypot(q[1]);
        if q[0] > 0.0 && q[1] > 0.0 && r >= r_min && r <= r_max {
            sum += -s * q[0] + c * q[1];
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64 / c)
}

/// Solves the four-end problem at half angle `theta` on a grid centered at
/// the origin, with self-consistent end intercepts.
pub fn solve_four_end(
    p: &Potential,
    prof: &Profile1D,
    grid: Grid,
    theta: f64,
    cfg: &SolveConfig,
    opts: &FourEndOptions,
) -> Result<FourEnd> {
    if !(theta > 0.0 && theta < 2.0 * FRAC_PI_4) {
        return Err(Error::Config(format!("half angle {theta} outside (0, π/2)")));
    }
    if !(opts.step > 0.0 && opts.tol > 0.0 && opts.max_iter > 0) {
        return Err(Error::Config(
            "four-end options need positive step, tol and max_iter".into(),
        ));
    }
    let width = p.interface_width();
    let r_min = opts.r_min_widths * width;
    let reach = [-grid.x0, grid.x_max(), -grid.y0, grid.y_max()]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let r_max = opts.r_max_fraction * reach;
    if r_max <= r_min {
        return Err(Error::Geometry(format!(
            "measuring annulus [{r_min:.3}, {r_max:.3}] is empty; enlarge the domain"
        )));
    }
    let mut solves = 0usize;
    let mut solve_at = |angle: f64, b: f64, warm: Option<&Field2D>| -> Result<(Solved, BoundarySpec)> {
        let spec = BoundarySpec::Fourend {
            theta: angle,
            offsets: fourend_offsets(angle, b),
        };
        let mut init = build_boundary(&spec, grid, prof, width, p.id())?;
        if let Some(w) = warm {
            for j in 1..grid.ny - 1 {
                for i in 1..grid.nx - 1 {
                    let k = grid.idx(i, j);
                    init.values[k] = w.values[k];
                }
            }
        }
        solves += 1;
        Ok((relax(&init, p, cfg)?, spec))
    };
    let measure = |f: &Field2D, angle: f64| {
        measure_intercept(f, angle, r_min, r_max)
            .ok_or_else(|| Error::Qualitative(format!("no nodal line in the measuring annulus at θ = {angle:.4}")))
    };

    let (mut solved, mut spec) = solve_at(FRAC_PI_4, 0.0, None)?;
    let mut b = 0.0;
    let mut b_prev = 0.0;
    let n_steps = ((theta - FRAC_PI_4).abs() / opts.step).ceil() as usize;
    for k in 1..=n_steps {
        let angle = FRAC_PI_4 + (theta - FRAC_PI_4) * k as f64 / n_steps as f64;
        let guess = if k > 1 { 2.0 * b - b_prev } else { b };
        // Secant on φ(b) = measured(b) - b, seeded by one fixed-point step.
        let (s0, spec0) = solve_at(angle, guess, Some(&solved.field))?;
        let mut x0 = guess;
        let mut f0 = measure(&s0.field, angle)? - x0;
        let (mut best, mut best_spec, mut x) = (s0, spec0, x0 + f0);
        let mut converged = f0.abs() < opts.tol;
        let mut iter = 0;
        while !converged && iter < opts.max_iter {
            iter += 1;
            let (s, sp) = solve_at(angle, x, Some(&best.field))?;
            let fx = measure(&s.field, angle)? - x;
            best = s;
            best_spec = sp;
            converged = fx.abs() < opts.tol;
            if converged {
                break;
            }
            let next = if (fx - f0).abs() > f64::EPSILON {
                x - fx * (x - x0) / (fx - f0)
            } else {
                x + fx
            };
            (x0, f0) = (x, fx);
            x = next;
        }
        if !converged {
            return Err(Error::Qualitative(format!(
                "end intercept did not settle at θ = {angle:.4} after {} relaxations",
                opts.max_iter + 1
            )));
        }
        b_prev = b;
        b = if iter == 0 { x0 } else { x };
        solved = best;
        spec = best_spec;
    }
    Ok(FourEnd {
        solved,
        spec,
        intercept: b,
        solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundarySpec;
    use crate::levelset::{angle_relations, fit_ends};
    use crate::profile::solve_profile;
    use std::f64::consts::SQRT_2;

    fn setup(l: f64, h: f64) -> (Potential, Profile1D, Grid) {
        let p = Potential::quartic();
        let prof = solve_profile(&p, 16.0, 0.01, 1e-11).unwrap();
        (p, prof, Grid::covering(-l, l, -l, l, h, h).unwrap())
    }

    #[test]
    fn offsets_put_the_upper_pair_through_the_intercept() {
        let (theta, b) = (0.4_f64, 0.7);
        let off = fourend_offsets(theta, b);
        let lines = BoundarySpec::Fourend { theta, offsets: off }.end_lines();
        for (k, e) in lines.iter().enumerate() {
            let on = if k < 2 { [0.0, b] } else { [0.0, -b] };
            let n = e.normal();
            assert!((n[0] * on[0] + n[1] * on[1] - e.offset).abs() < 1e-14, "ray {k}");
        }
    }

    #[test]
    fn intercept_of_a_straight_nodal_line() {
        let g = Grid::covering(-8.0, 8.0, -8.0, 8.0, 0.05, 0.05).unwrap();
        let (theta, b) = (0.5_f64, 0.8);
        let f = Field2D::from_fn(g, BoundarySpec::Unspecified, "quartic", |x, y| {
            ((y - x * theta.tan() - b) * theta.cos() / SQRT_2).tanh()
        });
        let m = measure_intercept(&f, theta, 2.0, 7.0).unwrap();
        assert!((m - b).abs() < 1e-3, "{m}");
        assert!(measure_intercept(&f, theta, 20.0, 30.0).is_none());
    }

    #[test]
    fn symmetric_angle_needs_no_continuation() {
        let (p, prof, g) = setup(8.0, 0.1);
        let r = solve_four_end(
            &p,
            &prof,
            g,
            FRAC_PI_4,
            &SolveConfig::default(),
            &FourEndOptions::default(),
        )
        .unwrap();
        assert_eq!(r.solves, 1);
        assert_eq!(r.intercept, 0.0);
    }

    #[test]
    fn reflected_angles_give_reflected_intercepts() {
        // Swapping x and y maps θ to π/2 - θ and y = x tan θ + b to
        // y = x cot θ - b cot θ.
        let (p, prof, g) = setup(10.0, 0.1);
        let cfg = SolveConfig::default();
        let opts = FourEndOptions::default();
        let lo = solve_four_end(&p, &prof, g, 30f64.to_radians(), &cfg, &opts).unwrap();
        let hi = solve_four_end(&p, &prof, g, 60f64.to_radians(), &cfg, &opts).unwrap();
        assert!(lo.intercept > 0.0);
        let want = -lo.intercept / 30f64.to_radians().tan();
        assert!((hi.intercept - want).abs() < 5e-3, "{} vs {want}", hi.intercept);
        // The nodal set follows the prescribed rays.
        let z = extract_zero_set(&lo.solved.field);
        let ends = fit_ends(
            &z,
            [0.0, 0.0],
            8.0 * p.interface_width(),
            0.98 * 10.0 / 30f64.to_radians().cos(),
        )
        .unwrap();
        let rel = angle_relations(&ends).unwrap();
        assert!((rel.contact_angle.unwrap().to_degrees() - 60.0).abs() < 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        let (p, prof, g) = setup(8.0, 0.1);
        let cfg = SolveConfig::default();
        assert!(matches!(
            solve_four_end(&p, &prof, g, 0.0, &cfg, &FourEndOptions::default()),
            Err(Error::Config(_))
        ));
        let tiny = Grid::covering(-3.0, 3.0, -3.0, 3.0, 0.1, 0.1).unwrap();
        assert!(solve_four_end(&p, &prof, tiny, 0.5, &cfg, &FourEndOptions::default()).is_err());
    }
}
