//! Far-field data selecting planar, multi-end and half-plane solutions.
//!
//! End lines are stored in normal form: an end with direction angle `θ`
//! lies on `{p : n·p = c}` with `n = (-sin θ, cos θ)`, so `c` is the signed
//! distance of the line from the origin. For a non-vertical end this is
//! `c = A cos θ` in terms of the intercept of `y = x tan θ + A`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field2D, Grid};
use crate::profile::Profile1D;

/// Default tolerance on `|Σ νᵢ|` for prescribed multi-end data.
pub const BALANCE_TOL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndLine {
    /// Outward direction angle.
    pub theta: f64,
    /// Signed distance of the end's line from the origin.
    pub offset: f64,
}

impl EndLine {
    pub fn direction(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }

    pub fn normal(&self) -> [f64; 2] {
        [-self.theta.sin(), self.theta.cos()]
    }

    /// Intercept `A` of `y = x tan θ + A`; infinite for vertical ends.
    pub fn intercept(&self) -> f64 {
        self.offset / self.theta.cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundarySpec {
    /// `u = g(x cos θ - y sin θ + offset)`.
    Planar { theta: f64, offset: f64 },
    /// Ends at `θ, π-θ, π+θ, 2π-θ` with normal offsets in that order.
    Fourend { theta: f64, offsets: [f64; 4] },
    /// Arbitrary even number of ends, angles increasing in `[0, 2π)`.
    Multiend { ends: Vec<EndLine> },
    /// Four-end data on `x ≥ 0` with a mirror condition on `x = 0`.
    Halfplane { theta: f64, offsets: [f64; 4] },
    /// Snapshot without boundary metadata, or hand-built test fields.
    Unspecified,
}

impl BoundarySpec {
    pub fn saddle(theta: f64) -> Self {
        BoundarySpec::Fourend {
            theta,
            offsets: [0.0; 4],
        }
    }

    pub fn neumann_left(&self) -> bool {
        matches!(self, BoundarySpec::Halfplane { .. })
    }

    /// The asymptotic end lines, sorted by angle.
    pub fn end_lines(&self) -> Vec<EndLine> {
        match self {
            BoundarySpec::Planar { theta, offset } => {
                let a = (PI / 2.0 - theta).rem_euclid(TAU);
                let mut v = vec![
                    EndLine {
                        theta: a,
                        offset: *offset,
                    },
                    EndLine {
                        theta: (a + PI).rem_euclid(TAU),
                        offset: -offset,
                    },
                ];
                v.sort_by(|p, q| p.theta.total_cmp(&q.theta));
                v
            }
            BoundarySpec::Fourend { theta, offsets } | BoundarySpec::Halfplane { theta, offsets } => {
                let angles = [*theta, PI - theta, PI + theta, TAU - theta];
                angles
                    .iter()
                    .zip(offsets)
                    .map(|(&t, &c)| EndLine { theta: t, offset: c })
                    .collect()
            }
            BoundarySpec::Multiend { ends } => ends.clone(),
            BoundarySpec::Unspecified => Vec::new(),
        }
    }

    /// Same configuration moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let shift = |e: &EndLine| {
            let n = e.normal();
            e.offset + n[0] * dx + n[1] * dy
        };
        match self {
            BoundarySpec::Planar { theta, offset } => BoundarySpec::Planar {
                theta: *theta,
                offset: offset - dx * theta.cos() + dy * theta.sin(),
            },
            BoundarySpec::Fourend { theta, .. } | BoundarySpec::Halfplane { theta, .. } => {
                let lines = self.end_lines();
                let offsets = [shift(&lines[0]), shift(&lines[1]), shift(&lines[2]), shift(&lines[3])];
                if matches!(self, BoundarySpec::Fourend { .. }) {
                    BoundarySpec::Fourend { theta: *theta, offsets }
                } else {
                    BoundarySpec::Halfplane { theta: *theta, offsets }
                }
            }
            BoundarySpec::Multiend { ends } => BoundarySpec::Multiend {
                ends: ends
                    .iter()
                    .map(|e| EndLine {
                        theta: e.theta,
                        offset: shift(e),
                    })
                    .collect(),
            },
            BoundarySpec::Unspecified => BoundarySpec::Unspecified,
        }
    }

    /// Structural checks on the prescribed ends.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            BoundarySpec::Planar { theta, offset } => {
                if !(theta.is_finite() && offset.is_finite()) {
                    return bad("planar angle and offset must be finite".into());
                }
            }
            BoundarySpec::Fourend { theta, offsets } | BoundarySpec::Halfplane { theta, offsets } => {
                if !(*theta > 0.0 && *theta < PI / 2.0) {
                    return bad(format!("half contact angle {theta} must lie in (0, π/2)"));
                }
                if offsets.iter().any(|c| !c.is_finite()) {
                    return bad("offsets must be finite".into());
                }
            }
            BoundarySpec::Multiend { ends } => {
                if ends.len() < 2 || ends.len() % 2 == 1 {
                    return bad(format!("need an even number ≥ 2 of ends, got {}", ends.len()));
                }
                if ends
                    .iter()
                    .any(|e| !(e.theta >= 0.0 && e.theta < TAU && e.offset.is_finite()))
                {
                    return bad("end angles must lie in [0, 2π) and offsets be finite".into());
                }
                if ends.windows(2).any(|w| !(w[1].theta > w[0].theta)) {
                    return bad("end angles must be strictly increasing".into());
                }
                let n = ends.len();
                for k in 0..n {
                    let next = if k + 1 == n {
                        ends[0].theta + TAU
                    } else {
                        ends[k + 1].theta
                    };
                    if next - ends[k].theta >= PI {
                        return bad(format!(
                            "sector between ends {k} and {} is not narrower than π",
                            (k + 1) % n
                        ));
                    }
                }
                let (sx, sy) = ends
                    .iter()
                    .fold((0.0, 0.0), |(a, b), e| (a + e.theta.cos(), b + e.theta.sin()));
                let defect = sx.hypot(sy);
                if defect > BALANCE_TOL {
                    return bad(format!("unbalanced ends: |Σν| = {defect:.4} > {BALANCE_TOL}"));
                }
            }
            BoundarySpec::Unspecified => return bad("no boundary specification".into()),
        }
        Ok(())
    }
}

/// Sector-signed product of layer profiles over distances to the end rays.
#[derive(Clone, Debug)]
pub struct Ansatz {
    rays: Vec<Ray>,
}

#[derive(Clone, Debug)]
struct Ray {
    dir: [f64; 2],
    normal: [f64; 2],
    offset: f64,
    anchor: [f64; 2],
    /// Sign of the sector counterclockwise of this ray.
    sign_after: f64,
}

impl Ansatz {
    pub fn new(ends: &[EndLine]) -> Self {
        let n = ends.len();
        let rays = ends
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let normal = e.normal();
                // The sector between the last ray and the first one (which
                // contains the positive x-axis) is +1; signs alternate.
                let sign_after = if (n - 1 - k).is_multiple_of(2) { 1.0 } else { -1.0 };
                Ray {
                    dir: e.direction(),
                    normal,
                    offset: e.offset,
                    anchor: [e.offset * normal[0], e.offset * normal[1]],
                    sign_after,
                }
            })
            .collect();
        Ansatz { rays }
    }

    pub fn eval(&self, prof: &Profile1D, x: f64, y: f64) -> f64 {
        let mut nearest = 0;
        let mut best = f64::INFINITY;
        let mut dist = Vec::with_capacity(self.rays.len());
        for (k, r) in self.rays.iter().enumerate() {
            let (px, py) = (x - r.anchor[0], y - r.anchor[1]);
            let t = px * r.dir[0] + py * r.dir[1];
            let d = if t >= 0.0 {
                (r.normal[0] * x + r.normal[1] * y - r.offset).abs()
            } else {
                px.hypot(py)
            };
            if d < best {
                best = d;
                nearest = k;
            }
            dist.push(d);
        }
        let r = &self.rays[nearest];
        let side = r.normal[0] * x + r.normal[1] * y - r.offset;
        let sign = if side > 0.0 { r.sign_after } else { -r.sign_after };
        let mut value = prof.eval(sign * best);
        for (k, &d) in dist.iter().enumerate() {
            if k != nearest {
                value *= prof.eval(d).min(-prof.eval(-d));
            }
        }
        value
    }
}

/// Evaluates the far-field data at `(x, y)`.
pub fn boundary_value(spec: &BoundarySpec, prof: &Profile1D, x: f64, y: f64) -> f64 {
    match spec {
        BoundarySpec::Planar { theta, offset } => prof.eval(x * theta.cos() - y * theta.sin() + offset),
        _ => Ansatz::new(&spec.end_lines()).eval(prof, x, y),
    }
}

/// Fills every node of `grid` with the far-field data: exact on Dirichlet
/// edges, the initial guess inside.
///
/// `width` is the interface width used by the margin rules: every Dirichlet
/// edge must be at least `6·width` beyond the largest end offset, and the
/// points where distinct ends leave the domain must be `5·width` apart.
pub fn build_boundary(
    spec: &BoundarySpec,
    grid: Grid,
    prof: &Profile1D,
    width: f64,
    potential_id: &str,
) -> Result<Field2D> {
    spec.validate()?;
    check_margins(spec, &grid, width)?;
    let value = |x: f64, y: f64| boundary_value(spec, prof, x, y).clamp(-1.0, 1.0);
    match spec {
        BoundarySpec::Planar { .. } => Ok(Field2D::from_fn(grid, spec.clone(), potential_id, value)),
        _ => {
            let ansatz = Ansatz::new(&spec.end_lines());
            Ok(Field2D::from_fn(grid, spec.clone(), potential_id, |x, y| {
                ansatz.eval(prof, x, y).clamp(-1.0, 1.0)
            }))
        }
    }
}

fn check_margins(spec: &BoundarySpec, grid: &Grid, width: f64) -> Result<()> {
    let ends = spec.end_lines();
    let max_offset = ends.iter().map(|e| e.offset.abs()).fold(0.0, f64::max);
    let need = 6.0 * width + max_offset;
    let mut edges = vec![("east", grid.x_max()), ("south", -grid.y0), ("north", grid.y_max())];
    if !spec.neumann_left() {
        edges.push(("west", -grid.x0));
    } else if grid.x0.abs() > 1e-9 * grid.hx {
        return Err(Error::Geometry(format!(
            "half-plane domain must start at x = 0, starts at {}",
            grid.x0
        )));
    }
    for (name, dist) in edges {
        if dist < need {
            return Err(Error::Geometry(format!(
                "{name} edge is {dist:.3} from the origin; the margin rule needs ≥ 6 interface widths \
                 beyond the largest offset = {need:.3}"
            )));
        }
    }
    if matches!(spec, BoundarySpec::Planar { .. }) {
        return Ok(());
    }
    let exits: Vec<[f64; 2]> = ends
        .iter()
        .filter_map(|e| ray_exit(e, grid, spec.neumann_left()))
        .collect();
    for a in 0..exits.len() {
        for b in a + 1..exits.len() {
            let d = (exits[a][0] - exits[b][0]).hypot(exits[a][1] - exits[b][1]);
            if d < 5.0 * width {
                return Err(Error::Geometry(format!(
                    "ends leave the domain only {d:.3} apart at ({:.2}, {:.2}) and ({:.2}, {:.2}); \
                     need ≥ 5 interface widths",
                    exits[a][0], exits[a][1], exits[b][0], exits[b][1]
                )));
            }
        }
    }
    Ok(())
}

/// Where the ray from the foot point leaves the rectangle, if it does so
/// through a Dirichlet edge.
fn ray_exit(e: &EndLine, grid: &Grid, neumann_left: bool) -> Option<[f64; 2]> {
    let n = e.normal();
    let d = e.direction();
    let o = [e.offset * n[0], e.offset * n[1]];
    let (xmin, xmax, ymin, ymax) = (grid.x0, grid.x_max(), grid.y0, grid.y_max());
    let mut t_exit = f64::INFINITY;
    for (dc, oc, lo, hi) in [(d[0], o[0], xmin, xmax), (d[1], o[1], ymin, ymax)] {
        if dc > 0.0 {
            t_exit = t_exit.min((hi - oc) / dc);
        } else if dc < 0.0 {
            t_exit = t_exit.min((lo - oc) / dc);
        }
    }
    if !t_exit.is_finite() || t_exit < 0.0 {
        return None;
    }
    let p = [o[0] + t_exit * d[0], o[1] + t_exit * d[1]];
    let on_left = (p[0] - xmin).abs() < 1e-9 * grid.hx;
    if !grid.contains(p[0], p[1]) || (neumann_left && on_left) {
        return None;
    }
    Some(p)
}
