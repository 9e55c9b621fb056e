//! Zero level set extraction and the asymptotic geometry of its ends.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::{Field2D, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

/// Zero set of a sampled field as stitched polylines.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZeroSet {
    pub polylines: Vec<Polyline>,
    pub grid: Grid,
}

impl ZeroSet {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.polylines.iter().flat_map(|p| p.points.iter())
    }

    /// All segments, including the closing one of closed polylines.
    pub fn segments(&self) -> Vec<([f64; 2], [f64; 2])> {
        let mut out = Vec::new();
        for p in &self.polylines {
            out.extend(p.points.windows(2).map(|w| (w[0], w[1])));
            if p.closed && p.points.len() > 2 {
                out.push((*p.points.last().unwrap(), p.points[0]));
            }
        }
        out
    }

    /// Centroid of the convex hull of all vertices. Degenerate hulls fall
    /// back to the mean of the hull vertices.
    pub fn hull_centroid(&self) -> Option<[f64; 2]> {
        let pts: Vec<[f64; 2]> = self.points().copied().collect();
        let hull = convex_hull(pts);
        if hull.is_empty() {
            return None;
        }
        let mut a = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        for k in 0..hull.len() {
            let p = hull[k];
            let q = hull[(k + 1) % hull.len()];
            let cross = p[0] * q[1] - q[0] * p[1];
            a += cross;
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        if a.abs() < 1e-12 {
            let n = hull.len() as f64;
            let (sx, sy) = hull.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
            return Some([sx / n, sy / n]);
        }
        Some([cx / (3.0 * a), cy / (3.0 * a)])
    }

    /// CSV with columns `polyline,x,y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "polyline,x,y").expect("write to Vec");
        for (k, p) in self.polylines.iter().enumerate() {
            for q in &p.points {
                writeln!(buf, "{k},{},{}", q[0], q[1]).expect("write to Vec");
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Distance from every grid node to the zero set, or `INFINITY` beyond
    /// `cutoff`.
    pub fn distance_field(&self, grid: &Grid, cutoff: f64) -> Vec<f64> {
        let segs = self.segments();
        let mut out = vec![f64::INFINITY; grid.len()];
        if segs.is_empty() {
            return out;
        }
        // Buckets of side `cutoff` over the grid's bounding box.
        let side = cutoff.max(grid.h_max());
        let bx = ((grid.x_max() - grid.x0) / side).floor() as usize + 1;
        let by = ((grid.y_max() - grid.y0) / side).floor() as usize + 1;
        let cell = |x: f64, y: f64| -> (usize, usize) {
            let i = ((x - grid.x0) / side).floor().clamp(0.0, (bx - 1) as f64) as usize;
            let j = ((y - grid.y0) / side).floor().clamp(0.0, (by - 1) as f64) as usize;
            (i, j)
        };
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bx * by];
        for (k, (a, b)) in segs.iter().enumerate() {
            let (i0, j0) = cell(a[0].min(b[0]), a[1].min(b[1]));
            let (i1, j1) = cell(a[0].max(b[0]), a[1].max(b[1]));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * bx + i].push(k);
                }
            }
        }
        let rows = crate::exec::map_range(Exec::default(), grid.ny, |j| {
            let y = grid.y(j);
            (0..grid.nx)
                .map(|i| {
                    let x = grid.x(i);
                    let (ci, cj) = cell(x, y);
                    let mut best = f64::INFINITY;
                    for jj in cj.saturating_sub(1)..=(cj + 1).min(by - 1) {
                        for ii in ci.saturating_sub(1)..=(ci + 1).min(bx - 1) {
                            for &k in &buckets[jj * bx + ii] {
                                let (a, b) = segs[k];
                                best = best.min(point_segment_distance([x, y], a, b));
                            }
                        }
                    }
                    if best <= cutoff {
                        best
                    } else {
                        f64::INFINITY
                    }
                })
                .collect::<Vec<_>>()
        });
        for (j, row) in rows.into_iter().enumerate() {
            out[j * grid.nx..(j + 1) * grid.nx].copy_from_slice(&row);
        }
        out
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Andrew's monotone chain, counterclockwise without collinear points.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Marching squares on `u > 0`. Saddle cells are split by the sign of the
/// mean of their corners.
pub fn extract_zero_set(f: &Field2D) -> ZeroSet {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let u = &f.values;
    let pos = |k: usize| u[k] > 0.0;
    // Edge ids: horizontal (i,j)-(i+1,j) -> j*nx+i, vertical (i,j)-(i,j+1) -> nx*ny + j*nx+i.
    let h_id = |i: usize, j: usize| j * nx + i;
    let v_id = |i: usize, j: usize| nx * ny + j * nx + i;
    let crossing = |id: usize| -> [f64; 2] {
        let (k0, k1, horizontal) = if id < nx * ny {
            (id, id + 1, true)
        } else {
            let k = id - nx * ny;
            (k, k + nx, false)
        };
        let (a, b) = (u[k0], u[k1]);
        let t = if a == b { 0.5 } else { a / (a - b) };
        let (i, j) = (k0 % nx, k0 / nx);
        if horizontal {
            [g.x(i) + t * g.hx, g.y(j)]
        } else {
            [g.x(i), g.y(j) + t * g.hy]
        }
    };

    let mut links: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut link = |a: usize, b: usize| {
        links.entry(a).or_default().push(b);
        links.entry(b).or_default().push(a);
    };
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let k = g.idx(i, j);
            let c = [pos(k), pos(k + 1), pos(k + nx + 1), pos(k + nx)];
            // Edges in corner order: bottom, right, top, left.
            let edges = [h_id(i, j), v_id(i + 1, j), h_id(i, j + 1), v_id(i, j)];
            let cut: Vec<usize> = (0..4).filter(|&e| c[e] != c[(e + 1) % 4]).collect();
            match cut.len() {
                2 => link(edges[cut[0]], edges[cut[1]]),
                4 => {
                    let center = (u[k] + u[k + 1] + u[k + nx] + u[k + nx + 1]) > 0.0;
                    // Cut off the corners whose sign differs from the center.
                    for corner in 0..4 {
                        if c[corner] != center {
                            link(edges[(corner + 3) % 4], edges[corner]);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    let mut ids: Vec<usize> = links.keys().copied().collect();
    ids.sort_unstable();
    let mut visited: HashMap<usize, bool> = ids.iter().map(|&k| (k, false)).collect();
    let mut polylines = Vec::new();
    let walk = |start: usize, visited: &mut HashMap<usize, bool>| -> (Vec<usize>, bool) {
        let mut chain = vec![start];
        visited.insert(start, true);
        let mut prev = usize::MAX;
        let mut cur = start;
        loop {
            let next = links[&cur].iter().copied().find(|&n| n != prev && !visited[&n]);
            match next {
                Some(n) => {
                    visited.insert(n, true);
                    chain.push(n);
                    prev = cur;
                    cur = n;
                }
                None => {
                    let closed = chain.len() > 2 && links[&cur].contains(&start);
                    return (chain, closed);
                }
            }
        }
    };
    // Open chains start at endpoints; whatever remains is closed.
    for &id in &ids {
        if !visited[&id] && links[&id].len() == 1 {
            let (chain, _) = walk(id, &mut visited);
            polylines.push(Polyline {
                points: to_points(&chain, &crossing),
                closed: false,
            });
        }
    }
    for &id in &ids {
        if !visited[&id] {
            let (chain, closed) = walk(id, &mut visited);
            polylines.push(Polyline {
                points: to_points(&chain, &crossing),
                closed,
            });
        }
    }
    ZeroSet { polylines, grid: g }
}

fn to_points(chain: &[usize], crossing: &impl Fn(usize) -> [f64; 2]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = chain.iter().map(|&id| crossing(id)).collect();
    pts.dedup();
    pts
}

/// An asymptotic end fitted to the zero set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndRay {
    /// Outward direction angle in `[0, 2π)`.
    pub theta: f64,
    /// Signed distance of the fitted line from the origin, in the normal
    /// direction `(-sin θ, cos θ)`.
    pub offset: f64,
    pub direction: [f64; 2],
    pub rms: f64,
    /// Radial range of the supporting points, from the fit center.
    pub support: [f64; 2],
    pub points: usize,
}

impl EndRay {
    /// A bare direction, for checks that only use angles.
    pub fn from_angle(theta: f64) -> Self {
        let theta = theta.rem_euclid(TAU);
        EndRay {
            theta,
            offset: 0.0,
            direction: [theta.cos(), theta.sin()],
            rms: 0.0,
            support: [0.0, 0.0],
            points: 0,
        }
    }

    /// Intercept `A` of `y = x tan θ + A`; infinite for vertical ends.
    pub fn intercept(&self) -> f64 {
        self.offset / self.theta.cos()
    }

    /// Distance from `p` to the fitted line.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (-self.direction[1] * p[0] + self.direction[0] * p[1] - self.offset).abs()
    }
}

/// Fits one ray per end crossing the annulus `r_min ≤ |p - center| ≤ r_max`.
///
/// Runs of consecutive in-annulus vertices are grouped by angular
/// proximity: runs closer than `3h` along the inner circle belong to the
/// same end. Each group gets a total-least-squares line.
pub fn fit_ends(z: &ZeroSet, center: [f64; 2], r_min: f64, r_max: f64) -> Result<Vec<EndRay>> {
    if !(r_min >= 0.0 && r_max > r_min) {
        return Err(Error::InvalidInput(format!(
            "need 0 ≤ r_min < r_max, got {r_min}, {r_max}"
        )));
    }
    let inside = |p: &[f64; 2]| {
        let r = (p[0] - center[0]).hypot(p[1] - center[1]);
        r >= r_min && r <= r_max
    };
    let mut runs: Vec<Vec<[f64; 2]>> = Vec::new();
    for pl in &z.polylines {
        let first_run = runs.len();
        let mut cur: Vec<[f64; 2]> = Vec::new();
        for p in &pl.points {
            if inside(p) {
                cur.push(*p);
            } else if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            // A closed polyline that starts inside wraps into its first run.
            if pl.closed && runs.len() > first_run && inside(&pl.points[0]) {
                cur.append(&mut runs[first_run]);
                runs[first_run] = cur;
            } else {
                runs.push(cur);
            }
        }
    }
    if runs.is_empty() {
        return Ok(Vec::new());
    }
    let angle = |p: &[f64; 2]| (p[1] - center[1]).atan2(p[0] - center[0]);
    // Angular interval of each run, unwrapped around its first point.
    let mut spans: Vec<(f64, f64, usize)> = runs
        .iter()
        .enumerate()
        .map(|(k, run)| {
            let a0 = angle(&run[0]);
            let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
            for p in run {
                let d = (angle(p) - a0 + PI).rem_euclid(TAU) - PI;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            ((a0 + lo).rem_euclid(TAU), hi - lo, k)
        })
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let tol = 3.0 * z.grid.h_max() / r_min.max(z.grid.h_max());
    // Circular single-linkage on angular gaps.
    let n = spans.len();
    let gap_after = |k: usize| {
        let (start, width, _) = spans[k];
        let next = spans[(k + 1) % n].0 + if k + 1 == n { TAU } else { 0.0 };
        next - (start + width)
    };
    let breaks: Vec<usize> = (0..n).filter(|&k| gap_after(k) > tol).collect();
    if breaks.is_empty() {
        return Err(Error::Clustering(format!(
            "zero set closes around the annulus [{r_min:.2}, {r_max:.2}]; ends are not separated, increase r_min"
        )));
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (b, &k) in breaks.iter().enumerate() {
        let end = breaks[(b + 1) % breaks.len()];
        let mut members = Vec::new();
        let mut m = (k + 1) % n;
        loop {
            members.push(m);
            if m == end {
                break;
            }
            m = (m + 1) % n;
        }
        clusters.push(members);
    }
    let mut ends = Vec::with_capacity(clusters.len());
    for members in clusters {
        let first = spans[members[0]].0;
        let last = members.last().copied().unwrap();
        let stop = spans[last].0 + spans[last].1;
        let width = (stop - first).rem_euclid(TAU);
        if width > PI / 2.0 {
            return Err(Error::Clustering(format!(
                "zero set in the annulus [{r_min:.2}, {r_max:.2}] forms a group {:.1}° wide; \
                 ends are not separated, increase r_min",
                width.to_degrees()
            )));
        }
        let pts: Vec<[f64; 2]> = members.iter().flat_map(|&m| runs[spans[m].2].iter().copied()).collect();
        ends.push(tls_ray(&pts, center));
    }
    ends.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(ends)
}

fn tls_ray(pts: &[[f64; 2]], center: [f64; 2]) -> EndRay {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Principal axis of the scatter matrix.
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut d = [phi.cos(), phi.sin()];
    if d[0] * (mx - center[0]) + d[1] * (my - center[1]) < 0.0 {
        d = [-d[0], -d[1]];
    }
    let theta = d[1].atan2(d[0]).rem_euclid(TAU);
    let normal = [-d[1], d[0]];
    let offset = normal[0] * mx + normal[1] * my;
    let mut ss = 0.0;
    let (mut rlo, mut rhi) = (f64::INFINITY, 0.0_f64);
    for p in pts {
        let e = normal[0] * p[0] + normal[1] * p[1] - offset;
        ss += e * e;
        let r = (p[0] - center[0]).hypot(p[1] - center[1]);
        rlo = rlo.min(r);
        rhi = rhi.max(r);
    }
    EndRay {
        theta,
        offset,
        direction: d,
        rms: (ss / n).sqrt(),
        support: [rlo, rhi],
        points: pts.len(),
    }
}

/// `|Σ νᵢ|` over the end directions.
pub fn balance_defect(ends: &[EndRay]) -> Result<f64> {
    if ends.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "balance needs ≥ 2 ends, got {}",
            ends.len()
        )));
    }
    if ends.len() % 2 == 1 {
        log::warn!("odd number of ends ({}); a solution has an even count", ends.len());
    }
    let (sx, sy) = ends
        .iter()
        .fold((0.0, 0.0), |(x, y), e| (x + e.theta.cos(), y + e.theta.sin()));
    Ok(sx.hypot(sy))
}

/// `max_θ |Σ sin(θᵢ + θ)|` over 32 equally spaced `θ ∈ [0, 2π)`.
pub fn sine_identity_defect(ends: &[EndRay]) -> f64 {
    (0..32)
        .map(|k| {
            let t = TAU * k as f64 / 32.0;
            ends.iter().map(|e| (e.theta + t).sin()).sum::<f64>().abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRelations {
    /// Rotation applied to put the bisector of the ends around the
    /// positive x-axis onto it.
    pub rotation: f64,
    /// End angles after rotation, in `(-π, π]` for the first and `[0, 2π)` otherwise.
    pub rotated: Vec<f64>,
    /// `Θ = 2θ₁` (four ends).
    pub contact_angle: Option<f64>,
    /// `|θ₁ - (π - θ₂)|` (four ends).
    pub defect_12: Option<f64>,
    /// `|θ₁ - (θ₃ - π)|` (four ends).
    pub defect_13: Option<f64>,
    /// `|θ₂ - θ₁ - π|` (two ends).
    pub antipodal_defect: Option<f64>,
    /// `|θ₁ + (θ₂ - 2π)|`: mirror symmetry of two ends in the x-axis.
    pub reflection_defect: Option<f64>,
}

pub fn angle_relations(ends: &[EndRay]) -> Result<AngleRelations> {
    let mut a: Vec<f64> = ends.iter().map(|e| e.theta.rem_euclid(TAU)).collect();
    a.sort_by(f64::total_cmp);
    match a.len() {
        4 => {
            // The gap whose bisector is closest to the positive x-axis holds
            // the first end pair; `k` is the end just after it.
            let bisector = |k: usize| {
                let prev = if k == 0 { a[3] - TAU } else { a[k - 1] };
                let b = 0.5 * (prev + a[k]);
                (b + PI).rem_euclid(TAU) - PI
            };
            let k = (0..4)
                .min_by(|&i, &j| bisector(i).abs().total_cmp(&bisector(j).abs()))
                .expect("four gaps");
            let rotation = bisector(k);
            let r: Vec<f64> = (0..4)
                .map(|j| {
                    let t = a[(k + j) % 4] - rotation;
                    if j == 0 {
                        (t + PI).rem_euclid(TAU) - PI
                    } else {
                        t.rem_euclid(TAU)
                    }
                })
                .collect();
            Ok(AngleRelations {
                rotation,
                contact_angle: Some(2.0 * r[0]),
                defect_12: Some((r[0] - (PI - r[1])).abs()),
                defect_13: Some((r[0] - (r[2] - PI)).abs()),
                antipodal_defect: None,
                reflection_defect: None,
                rotated: r,
            })
        }
        2 => Ok(AngleRelations {
            rotation: 0.0,
            rotated: a.clone(),
            contact_angle: None,
            defect_12: None,
            defect_13: None,
            antipodal_defect: Some((a[1] - a[0] - PI).abs()),
            reflection_defect: Some((a[0] + a[1] - TAU).abs()),
        }),
        n => Err(Error::Structural(format!("angle relations need 2 or 4 ends, got {n}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub center: [f64; 2],
    /// `max |u(x, y) - u(x, 2c_y - y)|`.
    pub y_defect: f64,
    /// `max |u(x, y) - u(2c_x - x, y)|`.
    pub x_defect: f64,
    /// Most negative `u_x` on `x > c_x + δ` (0 if none is negative).
    pub ux_min: f64,
    /// Most positive `u_y` on `x > c_x + δ, y > c_y + δ` (0 if none is positive).
    pub uy_max: f64,
    pub delta: f64,
}

/// Reflection and monotonicity defects about `center`. Reflected points off
/// the grid use bilinear interpolation; points whose mirror image leaves the
/// domain are skipped.
pub fn symmetry_report(f: &Field2D, center: [f64; 2]) -> SymmetryReport {
    let g = f.grid;
    let delta = 2.0 * g.h_max();
    let (gx, gy) = f.gradient(Exec::default());
    let mut rep = SymmetryReport {
        center,
        y_defect: 0.0,
        x_defect: 0.0,
        ux_min: 0.0,
        uy_max: 0.0,
        delta,
    };
    let eps = 1e-9 * g.h_min();
    for j in 0..g.ny {
        let y = g.y(j);
        let ry = 2.0 * center[1] - y;
        for i in 0..g.nx {
            let x = g.x(i);
            let v = f.at(i, j);
            if ry >= g.y0 - eps && ry <= g.y_max() + eps {
                rep.y_defect = rep
                    .y_defect
                    .max((v - f.interpolate(x, ry.clamp(g.y0, g.y_max()))).abs());
            }
            let rx = 2.0 * center[0] - x;
            if rx >= g.x0 - eps && rx <= g.x_max() + eps {
                rep.x_defect = rep
                    .x_defect
                    .max((v - f.interpolate(rx.clamp(g.x0, g.x_max()), y)).abs());
            }
            let interior = i > 0 && j > 0 && i + 1 < g.nx && j + 1 < g.ny;
            if interior && x > center[0] + delta {
                let k = g.idx(i, j);
                rep.ux_min = rep.ux_min.min(gx[k]);
                if y > center[1] + delta {
                    rep.uy_max = rep.uy_max.max(gy[k]);
                }
            }
        }
    }
    rep
}
