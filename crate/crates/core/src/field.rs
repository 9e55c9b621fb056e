//! Uniform grids, sampled fields and the `AC2` snapshot format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, Exec};

/// Node `(i, j)` sits at `(x0 + i hx, y0 + j hy)`; storage is row-major with
/// rows along `x`, so the flat index is `j * nx + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Grid {
    /// Grid covering `[xmin, xmax] × [ymin, ymax]` with spacings close to
    /// `hx`, `hy` that fit the rectangle exactly.
    pub fn covering(xmin: f64, xmax: f64, ymin: f64, ymax: f64, hx: f64, hy: f64) -> Result<Self> {
        if !(xmax > xmin && ymax > ymin && hx > 0.0 && hy > 0.0) {
            return Err(Error::Geometry(format!(
                "degenerate rectangle [{xmin}, {xmax}] × [{ymin}, {ymax}] or spacing ({hx}, {hy})"
            )));
        }
        let cx = ((xmax - xmin) / hx).round().max(2.0) as usize;
        let cy = ((ymax - ymin) / hy).round().max(2.0) as usize;
        Ok(Grid {
            nx: cx + 1,
            ny: cy + 1,
            hx: (xmax - xmin) / cx as f64,
            hy: (ymax - ymin) / cy as f64,
            x0: xmin,
            y0: ymin,
        })
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn h_min(&self) -> f64 {
        self.hx.min(self.hy)
    }

    pub fn h_max(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let eps = 1e-9 * self.h_min();
        x >= self.x0 - eps && x <= self.x_max() + eps && y >= self.y0 - eps && y <= self.y_max() + eps
    }

    /// Bilinear interpolation of node data, clamped to the rectangle.
    pub fn bilinear(&self, data: &[f64], x: f64, y: f64) -> f64 {
        let fx = ((x - self.x0) / self.hx).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.y0) / self.hy).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let k = self.idx(i, j);
        let v00 = data[k];
        let v10 = data[k + 1];
        let v01 = data[k + self.nx];
        let v11 = data[k + self.nx + 1];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// A sampled solution together with the data that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Field2D {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub bc: BoundarySpec,
    pub potential_id: String,
    /// Interior max-norm residual after the last solve; NaN if never solved.
    pub residual_max: f64,
}

impl Field2D {
    pub fn new(grid: Grid, values: Vec<f64>, bc: BoundarySpec, potential_id: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a {}×{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Field2D {
            grid,
            values,
            bc,
            potential_id: potential_id.into(),
            residual_max: f64::NAN,
        })
    }

    /// Samples `f(x, y)` on `grid`.
    pub fn from_fn(grid: Grid, bc: BoundarySpec, potential_id: &str, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Field2D {
            grid,
            values,
            bc,
            potential_id: potential_id.into(),
            residual_max: f64::NAN,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// True when the `x = x0` edge carries a mirror (zero-flux) condition.
    pub fn neumann_left(&self) -> bool {
        self.bc.neumann_left()
    }

    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        self.grid.bilinear(&self.values, x, y)
    }

    /// Second-order node gradient: centered inside, one-sided on edges, zero
    /// normal derivative on a mirror edge.
    pub fn gradient(&self, exec: Exec) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let u = &self.values;
        let neumann = self.neumann_left();
        let mut gx = vec![0.0; g.len()];
        let mut gy = vec![0.0; g.len()];
        for_each_chunk(exec, &mut gx, nx, |j, row| {
            let base = j * nx;
            let d = 0.5 / g.hx;
            for i in 1..nx - 1 {
                row[i] = (u[base + i + 1] - u[base + i - 1]) * d;
            }
            row[0] = if neumann {
                0.0
            } else {
                (-3.0 * u[base] + 4.0 * u[base + 1] - u[base + 2]) * d
            };
            row[nx - 1] = (3.0 * u[base + nx - 1] - 4.0 * u[base + nx - 2] + u[base + nx - 3]) * d;
        });
        for_each_chunk(exec, &mut gy, nx, |j, row| {
            let d = 0.5 / g.hy;
            for (i, out) in row.iter_mut().enumerate() {
                let k = j * nx + i;
                *out = if j == 0 {
                    (-3.0 * u[k] + 4.0 * u[k + nx] - u[k + 2 * nx]) * d
                } else if j == ny - 1 {
                    (3.0 * u[k] - 4.0 * u[k - nx] + u[k - 2 * nx]) * d
                } else {
                    (u[k + nx] - u[k - nx]) * d
                };
            }
        });
        (gx, gy)
    }

    /// Writes the `AC2` snapshot and its JSON sidecar (`<path>.json`).
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.values.len());
        let g = self.grid;
        let id: String = self
            .potential_id
            .chars()
            .map(|c| if c.is_whitespace() { '_' } else { c })
            .collect();
        writeln!(buf, "AC2 {} {} {} {} {} {} {}", g.nx, g.ny, g.hx, g.hy, g.x0, g.y0, id).expect("write to Vec");
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta = Sidecar {
            format: "AC2".into(),
            grid: g,
            potential_id: self.potential_id.clone(),
            residual_max: self.residual_max.is_finite().then_some(self.residual_max),
            bc: self.bc.clone(),
            version: crate::VERSION.into(),
        };
        let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    /// Reads an `AC2` snapshot. Boundary data and residual come from the
    /// sidecar when present.
    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 8 || parts[0] != "AC2" {
            return Err(Error::Snapshot(format!("bad header `{}`", header.trim_end())));
        }
        let num = |k: usize| -> Result<f64> {
            parts[k]
                .parse::<f64>()
                .map_err(|_| Error::Snapshot(format!("bad header field `{}`", parts[k])))
        };
        let count = |k: usize| -> Result<usize> {
            parts[k]
                .parse::<usize>()
                .map_err(|_| Error::Snapshot(format!("bad header field `{}`", parts[k])))
        };
        let grid = Grid {
            nx: count(1)?,
            ny: count(2)?,
            hx: num(3)?,
            hy: num(4)?,
            x0: num(5)?,
            y0: num(6)?,
        };
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 8 * grid.len() {
            return Err(Error::Snapshot(format!(
                "expected {} payload bytes, found {}",
                8 * grid.len(),
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let side = sidecar_path(path);
        let (bc, residual_max) = match std::fs::read_to_string(&side) {
            Ok(text) => {
                let meta: Sidecar =
                    serde_json::from_str(&text).map_err(|e| Error::Snapshot(format!("{}: {e}", side.display())))?;
                (meta.bc, meta.residual_max.unwrap_or(f64::NAN))
            }
            Err(_) => (BoundarySpec::Unspecified, f64::NAN),
        };
        let mut f = Field2D::new(grid, values, bc, parts[7])?;
        f.residual_max = residual_max;
        Ok(f)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    grid: Grid,
    potential_id: String,
    /// Absent for fields that were never solved.
    residual_max: Option<f64>,
    bc: BoundarySpec,
    version: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Field2D {
        let g = Grid::covering(-1.0, 1.0, -0.5, 0.5, 0.25, 0.25).unwrap();
        Field2D::from_fn(g, BoundarySpec::Unspecified, "quartic", |x, y| x * x - 0.5 * y)
    }

    #[test]
    fn covering_hits_rectangle() {
        let g = Grid::covering(-10.0, 10.0, -3.0, 3.0, 0.05, 0.1).unwrap();
        assert_eq!((g.nx, g.ny), (401, 61));
        assert!((g.x_max() - 10.0).abs() < 1e-12);
        assert!((g.y_max() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_exact_for_bilinear_data() {
        let g = Grid::covering(0.0, 1.0, 0.0, 1.0, 0.1, 0.1).unwrap();
        let f = Field2D::from_fn(g, BoundarySpec::Unspecified, "q", |x, y| {
            1.0 + 2.0 * x - y + 3.0 * x * y
        });
        let v = f.interpolate(0.437, 0.812);
        assert!((v - (1.0 + 0.874 - 0.812 + 3.0 * 0.437 * 0.812)).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_quadratic() {
        let f = small();
        let (gx, gy) = f.gradient(Exec::Sequential);
        for j in 0..f.grid.ny {
            for i in 0..f.grid.nx {
                let k = f.grid.idx(i, j);
                assert!((gx[k] - 2.0 * f.grid.x(i)).abs() < 1e-12);
                assert!((gy[k] + 0.5).abs() < 1e-12);
            }
        }
        let (px, py) = f.gradient(Exec::Parallel);
        assert_eq!(px, gx);
        assert_eq!(py, gy);
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ac2");
        let mut f = small();
        f.values[3] = std::f64::consts::PI * 1e-7;
        f.residual_max = 1.5e-9;
        f.write_snapshot(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..header_end]).unwrap(),
            "AC2 9 5 0.25 0.25 -1 -0.5 quartic"
        );
        assert_eq!(bytes.len() - header_end - 1, 8 * 45);
        let g = Field2D::read_snapshot(&path).unwrap();
        assert_eq!(g.grid, f.grid);
        assert!(g.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(g.residual_max, 1.5e-9);
    }

    #[test]
    fn snapshot_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ac2");
        std::fs::write(&path, b"AC2 3 3 1 1 0 0 quartic\n\x00\x00").unwrap();
        assert!(matches!(Field2D::read_snapshot(&path), Err(Error::Snapshot(_))));
    }
}
