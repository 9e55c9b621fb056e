//! Conserved quantities and inequalities evaluated on solved fields.
//!
//! Slice integrals use a rotated frame: for angle `θ` the integration
//! direction is `e₁ = (sin θ, cos θ)` and slices are indexed by the
//! coordinate along `e₂ = (cos θ, -sin θ)`. At `θ = 0` slices are vertical
//! lines `x = const` integrated in `y`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, Exec};
use crate::field::{Field2D, Grid};
use crate::levelset::ZeroSet;
use crate::potential::Potential;

/// Margin, in interface widths, excluded next to truncation edges.
pub const WINDOW_WIDTHS: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianReport {
    pub theta: f64,
    /// Slice positions along `e₂`.
    pub positions: Vec<f64>,
    pub rho: Vec<f64>,
    /// Value at the slice closest to position 0.
    pub reference: f64,
    pub max_abs_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub theta: f64,
    /// Coordinate along `e₁` that the moment arm is measured from.
    pub center: f64,
    pub positions: Vec<f64>,
    pub moments: Vec<f64>,
    pub reference: f64,
    pub max_abs_deviation: f64,
    pub max_abs: f64,
}

/// Node position where each axis of the moment identity is balanced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCenter {
    /// From slices `y = const`; `None` when their flux vanishes.
    pub x: Option<f64>,
    /// From slices `x = const`; `None` when their flux vanishes.
    pub y: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModicaReport {
    /// Positive part of `max (|∇u|² - 2F(u))`.
    pub max_violation: f64,
    /// Signed maximum of `|∇u|² - 2F(u)`.
    pub max_excess: f64,
    pub location: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    pub center: [f64; 2],
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    /// `E_R / R`.
    pub ratios: Vec<f64>,
    pub beta: f64,
    /// Mean of `E_R / R` over the last (up to) five radii.
    pub tail_mean: f64,
    /// Slope of `E_R / R` against `R` over the same radii.
    pub tail_slope: f64,
    /// Limit of `E_R / R`, from a straight-line fit of `E_R` on the tail.
    pub limit_estimate: f64,
    /// `round(limit / β)`, committed only when the tail has flattened.
    pub end_count: Option<usize>,
    /// Largest decrease between consecutive ratios (0 when nondecreasing).
    pub max_decrease: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayOptions {
    /// Distance band, in absolute units, of nodes used in the fit.
    pub d_min: f64,
    pub d_max: f64,
    pub min_points: usize,
    /// Nodes with `1 - |u|` below this are dropped (round-off floor).
    pub floor: f64,
    /// Nodes closer than this to the domain edge are dropped.
    pub edge_margin: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            d_min: 2.0,
            d_max: 5.0,
            min_points: 100,
            floor: 1e-10,
            edge_margin: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub nu: f64,
    pub prefactor: f64,
    pub r2: f64,
    pub points: usize,
}

struct Frame {
    e1: [f64; 2],
    e2: [f64; 2],
}

impl Frame {
    fn new(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Frame {
            e1: [s, c],
            e2: [c, -s],
        }
    }

    fn point(&self, z1: f64, z2: f64) -> [f64; 2] {
        [z2 * self.e2[0] + z1 * self.e1[0], z2 * self.e2[1] + z1 * self.e1[1]]
    }
}

/// Interval of `t` with `p + t d` inside the box.
fn chord(p: [f64; 2], d: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, f64)> {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..2 {
        if d[k].abs() < 1e-14 {
            // Slices along the mirror edge sit exactly on the unshrunk box.
            let tol = 1e-8 * (hi[k] - lo[k]);
            if p[k] < lo[k] - tol || p[k] > hi[k] + tol {
                return None;
            }
        } else {
            let t0 = (lo[k] - p[k]) / d[k];
            let t1 = (hi[k] - p[k]) / d[k];
            a = a.max(t0.min(t1));
            b = b.min(t0.max(t1));
        }
    }
    (b > a).then_some((a, b))
}

/// Slice positions along `e₂` covering the interior window.
fn slice_positions(f: &Field2D, p: &Potential, frame: &Frame, theta: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one slice".into()));
    }
    let g = f.grid;
    let m = WINDOW_WIDTHS * p.interface_width();
    let left = if f.neumann_left() { g.x0 } else { g.x0 + m };
    let (lo, hi) = ([left, g.y0 + m], [g.x_max() - m, g.y_max() - m]);
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return Err(Error::Geometry(format!(
            "domain leaves no interior window after a {m:.3} margin"
        )));
    }
    let proj: Vec<f64> = [[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]]
        .iter()
        .map(|c| c[0] * frame.e2[0] + c[1] * frame.e2[1])
        .collect();
    let (a, b) = proj
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut pos: Vec<f64> = if n == 1 {
        vec![0.0_f64.clamp(a, b)]
    } else {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    };
    // Axis-aligned slices go through grid lines so samples are nodes.
    let quarter = (theta / FRAC_PI_2).round();
    if (theta - quarter * FRAC_PI_2).abs() < 1e-12 {
        let (origin, h) = if frame.e2[0].abs() > 0.5 {
            (g.x0, g.hx)
        } else {
            (g.y0, g.hy)
        };
        let sign = frame.e2[0] + frame.e2[1];
        for z in &mut pos {
            let c = *z * sign;
            let snapped = origin + ((c - origin) / h).round() * h;
            *z = snapped * sign;
        }
        pos.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        pos.retain(|&z| {
            let c = z * sign;
            c >= (a * sign).min(b * sign) - 1e-9 && c <= (a * sign).max(b * sign) + 1e-9
        });
    }
    Ok(pos)
}

/// `∫ w(z₁) [F + ½u_{z₁}² - ½u_{z₂}²] dz₁` along each slice, for weights
/// `w = 1` and `w = z₁ - center`.
///
/// A slice is dropped when one of its interface crossings sits closer than
/// the window margin, measured along the layer normal, to a truncated end
/// of the chord: the layer's tail would be cut off there.
fn slice_integrals(
    f: &Field2D,
    p: &Potential,
    theta: f64,
    n_slices: usize,
    center: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let frame = Frame::new(theta);
    let pos = slice_positions(f, p, &frame, theta, n_slices)?;
    let g = f.grid;
    let margin = WINDOW_WIDTHS * p.interface_width();
    let (gx, gy) = f.gradient(Exec::default());
    let step = g.h_min();
    let shrink = 1e-9 * step;
    let (lo, hi) = ([g.x0 + shrink, g.y0 + shrink], [g.x_max() - shrink, g.y_max() - shrink]);
    let on_mirror = |q: [f64; 2]| f.neumann_left() && (q[0] - g.x0).abs() < 1e-6 * step;
    let out = map_range(Exec::default(), pos.len(), |k| -> Result<Option<(f64, f64)>> {
        let z2 = pos[k];
        let base = frame.point(0.0, z2);
        let (a, b) = chord(base, frame.e1, lo, hi)
            .ok_or_else(|| Error::Geometry(format!("slice at {z2:.3} misses the domain")))?;
        let open_a = !on_mirror(frame.point(a, z2));
        let open_b = !on_mirror(frame.point(b, z2));
        let n = ((b - a) / step).round().max(1.0) as usize;
        let dz = (b - a) / n as f64;
        let (mut flux, mut moment) = (0.0, 0.0);
        let mut prev_u = f64::NAN;
        let mut clearance = f64::INFINITY;
        for s in 0..=n {
            let z1 = a + s as f64 * dz;
            let q = frame.point(z1, z2);
            let u = f.interpolate(q[0], q[1]);
            let ux = g.bilinear(&gx, q[0], q[1]);
            let uy = g.bilinear(&gy, q[0], q[1]);
            let d1 = ux * frame.e1[0] + uy * frame.e1[1];
            let d2 = ux * frame.e2[0] + uy * frame.e2[1];
            let w = if s == 0 || s == n { 0.5 } else { 1.0 };
            let val = p.f(u) + 0.5 * d1 * d1 - 0.5 * d2 * d2;
            flux += w * val;
            moment += w * (z1 - center) * val;
            if s > 0 && (prev_u < 0.0) != (u < 0.0) {
                let zc = z1 - dz * u / (u - prev_u);
                let c = frame.point(zc, z2);
                let (cx, cy) = (g.bilinear(&gx, c[0], c[1]), g.bilinear(&gy, c[0], c[1]));
                let slope = (cx * frame.e1[0] + cy * frame.e1[1]).abs() / cx.hypot(cy).max(f64::MIN_POSITIVE);
                if open_a {
                    clearance = clearance.min((zc - a) * slope);
                }
                if open_b {
                    clearance = clearance.min((b - zc) * slope);
                }
            }
            prev_u = u;
        }
        Ok((clearance >= margin).then_some((flux * dz, moment * dz)))
    });
    let mut kept = Vec::with_capacity(out.len());
    let mut rho = Vec::with_capacity(out.len());
    let mut mom = Vec::with_capacity(out.len());
    for (z, r) in pos.iter().zip(out) {
        if let Some((a, b)) = r? {
            kept.push(*z);
            rho.push(a);
            mom.push(b);
        }
    }
    if kept.is_empty() {
        return Err(Error::Geometry(format!(
            "every slice has an interface within {margin:.3} of a truncated end"
        )));
    }
    Ok((kept, rho, mom))
}

fn reference_index(pos: &[f64]) -> usize {
    pos.iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// Flux `ρ` through slices at angle `θ` over the interior window.
pub fn hamiltonian_profile(f: &Field2D, p: &Potential, theta: f64, n_slices: usize) -> Result<HamiltonianReport> {
    let (positions, rho, _) = slice_integrals(f, p, theta, n_slices, 0.0)?;
    let reference = rho[reference_index(&positions)];
    let max_abs_deviation = rho.iter().map(|r| (r - reference).abs()).fold(0.0, f64::max);
    Ok(HamiltonianReport {
        theta,
        positions,
        rho,
        reference,
        max_abs_deviation,
    })
}

/// Moment `E(x) = ∫ y [F + ½u_y² - ½u_x²] dy` on slices `x = const`, with
/// `y` measured from the origin.
pub fn moment_profile(f: &Field2D, p: &Potential, n_slices: usize) -> Result<MomentReport> {
    moment_profile_about(f, p, 0.0, n_slices, 0.0)
}

/// Moment on slices at angle `θ` with arm `z₁ - center`.
pub fn moment_profile_about(
    f: &Field2D,
    p: &Potential,
    theta: f64,
    n_slices: usize,
    center: f64,
) -> Result<MomentReport> {
    let (positions, _, moments) = slice_integrals(f, p, theta, n_slices, center)?;
    let reference = moments[reference_index(&positions)];
    let max_abs_deviation = moments.iter().map(|m| (m - reference).abs()).fold(0.0, f64::max);
    let max_abs = moments.iter().map(|m| m.abs()).fold(0.0, f64::max);
    Ok(MomentReport {
        theta,
        center,
        positions,
        moments,
        reference,
        max_abs_deviation,
        max_abs,
    })
}

/// Translation that makes both moments vanish: `c_y = E/ρ` from slices
/// `x = const` and `c_x` likewise from slices `y = const`, averaged over
/// the window. An axis whose mean flux is below `10⁻³β` is left undefined.
pub fn canonical_center(f: &Field2D, p: &Potential, n_slices: usize) -> Result<CanonicalCenter> {
    let beta = p.beta()?;
    let axis = |theta: f64| -> Result<Option<f64>> {
        let (_, rho, mom) = slice_integrals(f, p, theta, n_slices, 0.0)?;
        let n = rho.len() as f64;
        let r = rho.iter().sum::<f64>() / n;
        let m = mom.iter().sum::<f64>() / n;
        Ok((r.abs() >= 1e-3 * beta).then(|| m / r))
    };
    Ok(CanonicalCenter {
        x: axis(FRAC_PI_2)?,
        y: axis(0.0)?,
    })
}

/// Largest `|∇_h u|² - 2F(u)` over interior nodes.
pub fn modica_check(f: &Field2D, p: &Potential) -> ModicaReport {
    let g = f.grid;
    let (gx, gy) = f.gradient(Exec::default());
    let i0 = if f.neumann_left() { 0 } else { 1 };
    let rows = map_range(Exec::default(), g.ny.saturating_sub(2), |b| {
        let j = b + 1;
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for i in i0..g.nx.saturating_sub(1) {
            let k = g.idx(i, j);
            let e = gx[k] * gx[k] + gy[k] * gy[k] - 2.0 * p.f(f.values[k]);
            if e > best.0 {
                best = (e, [g.x(i), g.y(j)]);
            }
        }
        best
    });
    let (max_excess, location) = rows
        .into_iter()
        .fold((f64::NEG_INFINITY, [0.0, 0.0]), |a, b| if b.0 > a.0 { b } else { a });
    let max_excess = if max_excess.is_finite() { max_excess } else { 0.0 };
    ModicaReport {
        max_violation: max_excess.max(0.0),
        max_excess,
        location,
    }
}

/// Area of `[x0, x1] × [y0, y1]` inside the disk of radius `r` at the origin.
pub fn rect_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let q = |x: f64, y: f64| quadrant_area(x, y, r);
    (q(x1, y1) - q(x0, y1) - q(x1, y0) + q(x0, y0)).max(0.0)
}

/// Area of the disk part with `X ≤ x` and `Y ≤ y`.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    let x = x.clamp(-r, r);
    if x <= -r || y <= -r {
        return 0.0;
    }
    // ∫ √(r² - X²) dX
    let prim = |t: f64| {
        let t = t.clamp(-r, r);
        0.5 * (t * (r * r - t * t).max(0.0).sqrt() + r * r * (t / r).asin())
    };
    // Column height at X is clip(min(y, s) + s) with s = √(r² - X²); it
    // changes form where s = |y|.
    let mut cuts = vec![-r];
    if y.abs() < r {
        let w = (r * r - y * y).sqrt();
        cuts.extend([-w, w]);
    }
    cuts.push(r);
    let mut area = 0.0;
    for k in 0..cuts.len() - 1 {
        let (a, b) = (cuts[k], cuts[k + 1].min(x));
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let s = (r * r - mid * mid).max(0.0).sqrt();
        area += if y >= s {
            2.0 * (prim(b) - prim(a))
        } else if y >= -s {
            y * (b - a) + prim(b) - prim(a)
        } else {
            0.0
        };
    }
    area
}

/// `E_R = ∫_{B_R} ½|∇u|² + F(u)` for each radius, cell-wise with exact
/// disk–cell overlap areas.
pub fn energy_curve(f: &Field2D, p: &Potential, radii: &[f64], center: [f64; 2]) -> Result<EnergyCurve> {
    let beta = p.beta()?;
    let g = f.grid;
    if radii.is_empty() {
        return Err(Error::InvalidInput("no radii".into()));
    }
    let reach = [
        center[0] - g.x0,
        g.x_max() - center[0],
        center[1] - g.y0,
        g.y_max() - center[1],
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    for &r in radii {
        if !(r > 0.0) || r > reach + 1e-9 {
            return Err(Error::Geometry(format!(
                "radius {r} does not fit: the disk must stay inside the domain (max {reach:.3})"
            )));
        }
    }
    let (cx, cy) = (g.nx - 1, g.ny - 1);
    let density: Vec<f64> = map_range(Exec::default(), cy, |j| {
        (0..cx)
            .map(|i| {
                let k = g.idx(i, j);
                let u = &f.values;
                let (a, b, c, d) = (u[k], u[k + 1], u[k + g.nx], u[k + g.nx + 1]);
                let ux = 0.5 * ((b - a) + (d - c)) / g.hx;
                let uy = 0.5 * ((c - a) + (d - b)) / g.hy;
                0.5 * (ux * ux + uy * uy) + 0.25 * (p.f(a) + p.f(b) + p.f(c) + p.f(d))
            })
            .collect::<Vec<_>>()
    })
    .concat();
    let energies: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let i_lo = (((center[0] - r - g.x0) / g.hx).floor().max(0.0)) as usize;
            let i_hi = (((center[0] + r - g.x0) / g.hx).ceil() as usize).min(cx);
            let j_lo = (((center[1] - r - g.y0) / g.hy).floor().max(0.0)) as usize;
            let j_hi = (((center[1] + r - g.y0) / g.hy).ceil() as usize).min(cy);
            map_range(Exec::default(), j_hi - j_lo, |b| {
                let j = j_lo + b;
                let y0 = g.y(j) - center[1];
                let mut s = 0.0;
                for i in i_lo..i_hi {
                    let x0 = g.x(i) - center[0];
                    let area = rect_disk_area(x0, x0 + g.hx, y0, y0 + g.hy, r);
                    if area > 0.0 {
                        s += area * density[j * cx + i];
                    }
                }
                s
            })
            .into_iter()
            .sum()
        })
        .collect();
    let ratios: Vec<f64> = energies.iter().zip(radii).map(|(e, r)| e / r).collect();
    let max_decrease = ratios.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let tail = radii.len().min(5);
    let t0 = radii.len() - tail;
    let tail_mean = ratios[t0..].iter().sum::<f64>() / tail as f64;
    let (tail_slope, _) = line_fit(&radii[t0..], &ratios[t0..]);
    let (limit_estimate, _) = line_fit(&radii[t0..], &energies[t0..]);
    let r_last = *radii.last().unwrap();
    // Commit only when the remaining drift in E_R/R is below half a β.
    let settled = tail >= 3 && tail_slope.abs() * r_last < 0.5 * beta;
    let estimate = limit_estimate / beta;
    let end_count = (settled && (estimate - estimate.round()).abs() < 0.25 && estimate.round() >= 1.0)
        .then(|| estimate.round() as usize);
    Ok(EnergyCurve {
        center,
        radii: radii.to_vec(),
        energies,
        ratios,
        beta,
        tail_mean,
        tail_slope,
        limit_estimate,
        end_count,
        max_decrease,
    })
}

/// Least-squares `y ≈ a x + b`, returns `(a, b)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (0.0, y.first().copied().unwrap_or(0.0));
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (a, my - a * mx)
}

/// Fits `1 - |u| ≈ C e^{-ν d}` over nodes at distance `d ∈ [d_min, d_max]`
/// from the zero set.
pub fn decay_fit(f: &Field2D, zero: &ZeroSet, opts: &DecayOptions) -> Result<DecayFit> {
    if !(opts.d_max > opts.d_min && opts.d_min >= 0.0) {
        return Err(Error::InvalidInput("need 0 ≤ d_min < d_max".into()));
    }
    let g = f.grid;
    let dist = zero.distance_field(&g, opts.d_max);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for j in 1..g.ny.saturating_sub(1) {
        for i in 1..g.nx.saturating_sub(1) {
            let (x, y) = (g.x(i), g.y(j));
            let edge = (x - g.x0).min(g.x_max() - x).min(y - g.y0).min(g.y_max() - y);
            if edge < opts.edge_margin {
                continue;
            }
            let k = g.idx(i, j);
            let d = dist[k];
            let gap = 1.0 - f.values[k].abs();
            if d >= opts.d_min && d <= opts.d_max && gap > opts.floor {
                xs.push(d);
                ys.push(gap.ln());
            }
        }
    }
    if xs.len() < opts.min_points {
        return Err(Error::InsufficientData(format!(
            "{} usable nodes in the distance band [{}, {}], need {}",
            xs.len(),
            opts.d_min,
            opts.d_max,
            opts.min_points
        )));
    }
    let (a, b) = line_fit(&xs, &ys);
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    Ok(DecayFit {
        nu: -a,
        prefactor: b.exp(),
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        points: xs.len(),
    })
}

/// Grid for quick tests and benches.
#[doc(hidden)]
pub fn square_grid(l: f64, h: f64) -> Grid {
    Grid::covering(-l, l, -l, l, h, h).expect("valid square grid")
}
