//! Config-driven pipelines: a TOML scenario in, a run directory out.
//!
//! Lengths in `[geometry]` and the boundary offsets are absolute, or in
//! interface widths when `units = "widths"`. Boundary angles and the
//! Hamiltonian slice angles follow `angle_unit`. Every run writes into a
//! fresh `run-NNN` directory under `<output>/<name>/`; earlier runs are
//! never touched.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml        effective config (overrides applied)
//! field.ac2(.json)   solved field, or field_best.ac2 after a solver failure
//! profile.csv        s, g, g' (profile stage)
//! zero_set.csv       nodal set polylines
//! reports/*.json     one report per stage or check
//! summary.json       status, per-check outcome, scalar diagnostics
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{build_boundary, BoundarySpec, EndLine};
use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::field::{Field2D, Grid};
use crate::fourend::{solve_four_end, FourEndOptions};
use crate::identities::{
    canonical_center, decay_fit, energy_curve, hamiltonian_profile, modica_check, moment_profile_about, DecayOptions,
};
use crate::levelset::{
    angle_relations, balance_defect, extract_zero_set, fit_ends, sine_identity_defect, symmetry_report, ZeroSet,
};
use crate::potential::Potential;
use crate::profile::{energy_1d, solve_profile, Profile1D};
use crate::solver::{perturb_interior, relax, SolveConfig, SolveStats};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

impl AngleUnit {
    fn to_radians(self, a: f64) -> f64 {
        match self {
            AngleUnit::Radians => a,
            AngleUnit::Degrees => a.to_radians(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Absolute,
    /// Multiples of the interface width `1/√min F''(±1)`.
    Widths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialConfig {
    Quartic {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Coefficients in increasing degree.
    Polynomial {
        coeffs: Vec<f64>,
        #[serde(default)]
        t0: f64,
    },
    /// Two-column `u,F` CSV; relative paths resolve against the config file.
    Table {
        path: PathBuf,
        #[serde(default)]
        t0: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default)]
    pub units: LengthUnit,
    /// Half extent in x; a half-plane domain is `[0, lx]`.
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    /// Defaults to `hx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub half_length: f64,
    pub h: f64,
    pub tol: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            half_length: 16.0,
            h: 0.01,
            tol: 1e-11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    /// Uniform noise in `[-amplitude, amplitude]` on interior nodes, seeded
    /// by the scenario seed.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Dotted config path, e.g. `boundary.theta` or `geometry.hx`.
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

/// Tolerances scaled by `β` are marked as such.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileCheck {
    /// On `|energy_1d - β|`.
    pub energy_tol: f64,
    pub equipartition_tol: f64,
    /// On `max |g - g_exact|` when a closed form exists.
    pub closed_form_tol: f64,
}

impl Default for ProfileCheck {
    fn default() -> Self {
        ProfileCheck {
            energy_tol: 5e-4,
            equipartition_tol: 5e-4,
            closed_form_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HamiltonianCheck {
    /// Slice angles, in `angle_unit`.
    pub angles: Vec<f64>,
    pub slices: usize,
    /// On the max deviation of `ρ`, times `β`.
    pub tol: f64,
    /// Planar data only: relative tolerance on `ρ = β|sin(θ - angle)|`,
    /// with an absolute floor of `0.1·flux_rel_tol·β`.
    pub flux_rel_tol: f64,
}

impl Default for HamiltonianCheck {
    fn default() -> Self {
        HamiltonianCheck {
            angles: vec![0.0],
            slices: 41,
            tol: 5e-3,
            flux_rel_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentCheck {
    pub slices: usize,
    /// On `max |E|`, times `β`.
    pub tol: f64,
    /// Measure arms from the canonical center instead of the origin.
    pub recenter: bool,
}

impl Default for MomentCheck {
    fn default() -> Self {
        MomentCheck {
            slices: 41,
            tol: 2e-3,
            recenter: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModicaCheck {
    pub tol: f64,
}

impl Default for ModicaCheck {
    fn default() -> Self {
        ModicaCheck { tol: 5e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyCheck {
    pub radii: usize,
    /// Largest radius as a fraction of the distance to the nearest edge.
    pub max_fraction: f64,
    /// Allowed decrease of `E_R/R`, times `β`.
    pub slack: f64,
    /// Relative tolerance of the tail mean against `(number of ends)·β`.
    pub quantization_tol: f64,
    pub center: [f64; 2],
}

impl Default for EnergyCheck {
    fn default() -> Self {
        EnergyCheck {
            radii: 20,
            max_fraction: 0.95,
            slack: 1e-6,
            quantization_tol: 0.1,
            center: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayCheck {
    pub d_min: f64,
    pub d_max: f64,
    pub min_points: usize,
    pub floor: f64,
    pub edge_margin: f64,
    /// Expected rate; defaults to `√min F''(±1)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    pub rel_tol: f64,
}

impl Default for DecayCheck {
    fn default() -> Self {
        let d = DecayOptions::default();
        DecayCheck {
            d_min: d.d_min,
            d_max: d.d_max,
            min_points: d.min_points,
            floor: d.floor,
            edge_margin: d.edge_margin,
            expected: None,
            rel_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelsetCheck {
    pub r_min_widths: f64,
    /// Outer radius as a fraction of the distance to the farthest corner.
    pub r_max_fraction: f64,
    pub angle_tol_deg: f64,
    pub balance_tol: f64,
    /// Defaults to twice the larger grid spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rms_tol: Option<f64>,
    /// Half-plane only: `|1 - u|` at the far edge on `y = 0`.
    pub far_field_tol: f64,
}

impl Default for LevelsetCheck {
    fn default() -> Self {
        LevelsetCheck {
            r_min_widths: 8.0,
            r_max_fraction: 0.98,
            angle_tol_deg: 2.0,
            balance_tol: 0.05,
            rms_tol: None,
            far_field_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymmetryCheck {
    pub tol: f64,
    pub recenter: bool,
    pub slices: usize,
}

impl Default for SymmetryCheck {
    fn default() -> Self {
        SymmetryCheck {
            tol: 1e-3,
            recenter: true,
            slices: 61,
        }
    }
}

/// A check runs iff its table is present.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment: Option<MomentCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modica: Option<ModicaCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levelset: Option<LevelsetCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<SymmetryCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub angle_unit: AngleUnit,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub potential: PotentialConfig,
    pub geometry: GeometryConfig,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub solver: SolveConfig,
    /// Four-end data only: solve by continuation with self-consistent end
    /// intercepts; the prescribed offsets are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<FourEndOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbConfig>,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Directory that relative table paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ScenarioConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ScenarioConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the potential or the profile.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return bad(format!("name `{}` must be a plain directory name", self.name));
        }
        let g = &self.geometry;
        for (key, v) in [
            ("geometry.lx", g.lx),
            ("geometry.ly", g.ly),
            ("geometry.hx", g.hx),
            ("geometry.hy", g.hy.unwrap_or(g.hx)),
            ("profile.half_length", self.profile.half_length),
            ("profile.h", self.profile.h),
            ("profile.tol", self.profile.tol),
        ] {
            positive(key, v)?;
        }
        if g.hx >= g.lx || g.hy.unwrap_or(g.hx) >= g.ly {
            return bad("grid spacing must be smaller than the domain".into());
        }
        self.solver.validate()?;
        if matches!(self.boundary, BoundarySpec::Unspecified) {
            return bad("boundary.kind must be planar, fourend, multiend or halfplane".into());
        }
        if self.continuation.is_some() {
            if !matches!(self.boundary, BoundarySpec::Fourend { .. }) {
                return bad("[continuation] applies to fourend data only".into());
            }
            if self.perturb.is_some() {
                return bad("[continuation] and [perturb] cannot be combined".into());
            }
        }
        if let Some(p) = &self.perturb {
            if !(p.amplitude >= 0.0 && p.amplitude.is_finite()) {
                return bad("perturb.amplitude must be nonnegative".into());
            }
        }
        let c = &self.checks;
        if let Some(k) = &c.profile {
            positive("checks.profile.energy_tol", k.energy_tol)?;
            positive("checks.profile.equipartition_tol", k.equipartition_tol)?;
            positive("checks.profile.closed_form_tol", k.closed_form_tol)?;
        }
        if let Some(k) = &c.hamiltonian {
            positive("checks.hamiltonian.tol", k.tol)?;
            positive("checks.hamiltonian.flux_rel_tol", k.flux_rel_tol)?;
            count("checks.hamiltonian.slices", k.slices)?;
            if k.angles.is_empty() || k.angles.iter().any(|a| !a.is_finite()) {
                return bad("checks.hamiltonian.angles must be finite and non-empty".into());
            }
        }
        if let Some(k) = &c.moment {
            positive("checks.moment.tol", k.tol)?;
            count("checks.moment.slices", k.slices)?;
        }
        if let Some(k) = &c.modica {
            positive("checks.modica.tol", k.tol)?;
        }
        if let Some(k) = &c.energy {
            positive("checks.energy.slack", k.slack)?;
            positive("checks.energy.quantization_tol", k.quantization_tol)?;
            count("checks.energy.radii", k.radii)?;
            if !(k.max_fraction > 0.0 && k.max_fraction <= 1.0) {
                return bad("checks.energy.max_fraction must be in (0, 1]".into());
            }
        }
        if let Some(k) = &c.decay {
            positive("checks.decay.rel_tol", k.rel_tol)?;
            if !(k.d_max > k.d_min && k.d_min >= 0.0) {
                return bad("checks.decay needs 0 ≤ d_min < d_max".into());
            }
            if let Some(e) = k.expected {
                positive("checks.decay.expected", e)?;
            }
        }
        if let Some(k) = &c.levelset {
            positive("checks.levelset.r_min_widths", k.r_min_widths)?;
            positive("checks.levelset.r_max_fraction", k.r_max_fraction)?;
            positive("checks.levelset.angle_tol_deg", k.angle_tol_deg)?;
            positive("checks.levelset.balance_tol", k.balance_tol)?;
            positive("checks.levelset.far_field_tol", k.far_field_tol)?;
            if let Some(r) = k.rms_tol {
                positive("checks.levelset.rms_tol", r)?;
            }
        }
        if let Some(k) = &c.symmetry {
            positive("checks.symmetry.tol", k.tol)?;
            count("checks.symmetry.slices", k.slices)?;
        }
        Ok(())
    }

    /// SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn potential(&self) -> Result<Potential> {
        match &self.potential {
            PotentialConfig::Quartic { scale } => Potential::scaled_quartic(*scale),
            PotentialConfig::Polynomial { coeffs, t0 } => Potential::polynomial(coeffs.clone(), *t0),
            PotentialConfig::Table { path, t0 } => {
                let path = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Potential::load_table(&path, *t0)
            }
        }
    }

    fn length_scale(&self, width: f64) -> f64 {
        match self.geometry.units {
            LengthUnit::Absolute => 1.0,
            LengthUnit::Widths => width,
        }
    }

    pub fn grid(&self, width: f64) -> Result<Grid> {
        let s = self.length_scale(width);
        let g = &self.geometry;
        let (lx, ly, hx) = (g.lx * s, g.ly * s, g.hx * s);
        let hy = g.hy.unwrap_or(g.hx) * s;
        let x_min = if self.boundary.neumann_left() { 0.0 } else { -lx };
        Grid::covering(x_min, lx, -ly, ly, hx, hy)
    }

    /// Boundary data in radians and absolute lengths.
    pub fn boundary_spec(&self, width: f64) -> BoundarySpec {
        let s = self.length_scale(width);
        let a = |t: f64| self.angle_unit.to_radians(t);
        let scale4 = |o: &[f64; 4]| o.map(|c| c * s);
        match &self.boundary {
            BoundarySpec::Planar { theta, offset } => BoundarySpec::Planar {
                theta: a(*theta),
                offset: offset * s,
            },
            BoundarySpec::Fourend { theta, offsets } => BoundarySpec::Fourend {
                theta: a(*theta),
                offsets: scale4(offsets),
            },
            BoundarySpec::Halfplane { theta, offsets } => BoundarySpec::Halfplane {
                theta: a(*theta),
                offsets: scale4(offsets),
            },
            BoundarySpec::Multiend { ends } => BoundarySpec::Multiend {
                ends: ends
                    .iter()
                    .map(|e| EndLine {
                        theta: a(e.theta),
                        offset: e.offset * s,
                    })
                    .collect(),
            },
            BoundarySpec::Unspecified => BoundarySpec::Unspecified,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be positive, got {v}")))
    }
}

fn count(key: &str, n: usize) -> Result<()> {
    if n >= 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be at least 2, got {n}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// 1D layer only.
    Profile,
    /// Relax and save the field.
    Solve,
    /// Solve, then every enabled check.
    Verify,
    /// Solve, then nodal-set extraction and end fitting.
    Levelset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    CheckFailure,
    ConfigError,
    SolverFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::CheckFailure => 1,
            Status::ConfigError => 2,
            Status::SolverFailure => 3,
        }
    }

    /// Exit status for an error raised before a run directory exists.
    pub fn of_error(e: &Error) -> Self {
        if e.is_solver_failure() {
            Status::SolverFailure
        } else {
            Status::ConfigError
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the config's `output`.
    pub out: Option<PathBuf>,
    /// Overrides the config's `seed`.
    pub seed: Option<u64>,
    /// Analyse this snapshot instead of solving.
    pub snapshot: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub stage: Stage,
    pub status: Status,
    pub exit_code: u8,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub grid: Option<Grid>,
    pub checks: Vec<CheckOutcome>,
    /// Finite scalar diagnostics, keyed `<stage or check>.<quantity>`.
    pub diagnostics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Envelope shared by every report file.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    report: &'a str,
    config_hash: &'a str,
    version: &'a str,
    seed: u64,
    grid: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<&'a str>,
    data: T,
}

/// Creates `<parent>/<prefix>-NNN` with the first free number.
fn allocate_dir(parent: &Path, prefix: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut next = 0usize;
    if let Ok(entries) = fs::read_dir(parent) {
        for entry in entries.flatten() {
            let name = entry.file_name();
            let n = name
                .to_str()
                .and_then(|s| s.strip_prefix(prefix))
                .and_then(|s| s.strip_prefix('-'))
                .and_then(|s| s.parse::<usize>().ok());
            if let Some(n) = n {
                next = next.max(n + 1);
            }
        }
    }
    loop {
        let dir = parent.join(format!("{prefix}-{next:03}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => next += 1,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Everything derived from the config before any output is written.
struct Prepared {
    cfg: ScenarioConfig,
    hash: String,
    p: Potential,
    beta: f64,
    width: f64,
    prof: Profile1D,
    grid: Grid,
    spec: BoundarySpec,
}

fn prepare(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Prepared> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(o) = &opts.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    let p = cfg.potential()?;
    let beta = p.beta()?;
    let width = p.interface_width();
    let grid = cfg.grid(width)?;
    let spec = cfg.boundary_spec(width);
    let prof = solve_profile(&p, cfg.profile.half_length, cfg.profile.h, cfg.profile.tol).map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(format!("[profile]: {m}")),
        e => e,
    })?;
    if opts.snapshot.is_none() {
        // Margin rules; the field itself is rebuilt by the solve.
        build_boundary(&spec, grid, &prof, width, p.id())?;
    }
    let hash = cfg.hash();
    Ok(Prepared {
        cfg,
        hash,
        p,
        beta,
        width,
        prof,
        grid,
        spec,
    })
}

/// Runs `stage` into a fresh `run-NNN` directory.
///
/// Config and geometry errors are returned before anything is written.
/// Later failures are recorded in the summary: a failed solve saves the best
/// iterate as `field_best.ac2` and ends with [`Status::SolverFailure`].
pub fn run_scenario(cfg: &ScenarioConfig, stage: Stage, opts: &RunOptions) -> Result<RunOutcome> {
    let prep = prepare(cfg, opts)?;
    let dir = allocate_dir(&prep.cfg.output.join(&prep.cfg.name), "run")?;
    run_prepared(&prep, stage, opts, dir)
}

struct Run<'a> {
    prep: &'a Prepared,
    dir: PathBuf,
    grid: Option<Grid>,
    checks: Vec<CheckOutcome>,
    diag: BTreeMap<String, f64>,
}

impl Run<'_> {
    fn put(&mut self, key: impl Into<String>, v: f64) {
        if v.is_finite() {
            self.diag.insert(key.into(), v);
        }
    }

    fn report<T: Serialize>(&self, name: &str, outcome: Option<&CheckOutcome>, data: T) -> Result<()> {
        let rep = Report {
            report: name,
            config_hash: &self.prep.hash,
            version: crate::VERSION,
            seed: self.prep.cfg.seed,
            grid: self.grid,
            passed: outcome.map(|o| o.passed),
            detail: outcome.map(|o| o.detail.as_str()),
            data,
        };
        write_json(&self.dir.join("reports").join(format!("{name}.json")), &rep)
    }

    fn finish(self, stage: Stage, status: Status, error: Option<String>) -> Result<RunOutcome> {
        let summary = Summary {
            name: self.prep.cfg.name.clone(),
            stage,
            status,
            exit_code: status.exit_code(),
            config_hash: self.prep.hash.clone(),
            version: crate::VERSION.into(),
            seed: self.prep.cfg.seed,
            grid: self.grid,
            checks: self.checks,
            diagnostics: self.diag,
            error,
        };
        write_json(&self.dir.join("summary.json"), &summary)?;
        Ok(RunOutcome { dir: self.dir, summary })
    }
}

fn run_prepared(prep: &Prepared, stage: Stage, opts: &RunOptions, dir: PathBuf) -> Result<RunOutcome> {
    let reports = dir.join("reports");
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    let text = toml::to_string(&prep.cfg).expect("config serializes");
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    let mut run = Run {
        prep,
        dir,
        grid: None,
        checks: Vec::new(),
        diag: BTreeMap::new(),
    };

    let profile_check = match (&prep.cfg.checks.profile, stage) {
        (Some(c), _) => Some(c.clone()),
        (None, Stage::Profile) => Some(ProfileCheck::default()),
        (None, _) => None,
    };
    profile_stage(&mut run, profile_check.as_ref())?;
    if stage == Stage::Profile {
        return finish_checks(run, stage);
    }

    run.grid = Some(prep.grid);
    let field = match &opts.snapshot {
        Some(path) => {
            let f = Field2D::read_snapshot(path)?;
            run.grid = Some(f.grid);
            run.put("solve.residual", f.residual_max);
            f
        }
        None => match solve_stage(&mut run) {
            Ok(f) => f,
            Err(e) => {
                let status = Status::of_error(&e);
                let best = match &e {
                    Error::Divergence { best, .. } | Error::Timeout { best, .. } => Some(best),
                    _ => None,
                };
                if let Some(best) = best {
                    best.write_snapshot(&run.dir.join("field_best.ac2"))?;
                }
                log::error!("solve failed: {e}");
                return run.finish(stage, status, Some(e.to_string()));
            }
        },
    };
    if stage == Stage::Solve {
        return finish_checks(run, stage);
    }

    let zero = extract_zero_set(&field);
    zero.write_csv(&run.dir.join("zero_set.csv"))?;
    run.put("levelset.zero_points", zero.points().count() as f64);
    let ctx = Ctx {
        p: &prep.p,
        beta: prep.beta,
        width: prep.width,
        f: &field,
        spec: &prep.spec,
        zero: &zero,
        unit: prep.cfg.angle_unit,
    };
    let checks = &prep.cfg.checks;
    if stage == Stage::Levelset {
        let c = checks.levelset.clone().unwrap_or_default();
        record(&mut run, "levelset", levelset_check(&ctx, &c))?;
        return finish_checks(run, stage);
    }
    if let Some(c) = &checks.hamiltonian {
        record(&mut run, "hamiltonian", hamiltonian_check(&ctx, c))?;
    }
    if let Some(c) = &checks.moment {
        record(&mut run, "moment", moment_check(&ctx, c))?;
    }
    if let Some(c) = &checks.modica {
        record(&mut run, "modica", modica(&ctx, c))?;
    }
    if let Some(c) = &checks.energy {
        record(&mut run, "energy", energy_check(&ctx, c))?;
    }
    if let Some(c) = &checks.decay {
        record(&mut run, "decay", decay_check(&ctx, c))?;
    }
    if let Some(c) = &checks.levelset {
        record(&mut run, "levelset", levelset_check(&ctx, c))?;
    }
    if let Some(c) = &checks.symmetry {
        record(&mut run, "symmetry", symmetry_check(&ctx, c))?;
    }
    finish_checks(run, stage)
}

fn finish_checks(run: Run<'_>, stage: Stage) -> Result<RunOutcome> {
    let status = if run.checks.iter().all(|c| c.passed) {
        Status::Pass
    } else {
        Status::CheckFailure
    };
    run.finish(stage, status, None)
}

fn profile_stage(run: &mut Run<'_>, check: Option<&ProfileCheck>) -> Result<()> {
    let prep = run.prep;
    let prof = &prep.prof;
    let energy = energy_1d(prof, &prep.p)?;
    let equipartition = prof.equipartition_residual(&prep.p);
    let closed = (0..prof.len())
        .map(|k| {
            prep.p
                .closed_form_profile(prof.s(k))
                .map(|exact| (prof.g[k] - exact).abs())
        })
        .try_fold(0.0, |m: f64, e| e.map(|e| m.max(e)));
    run.put("profile.beta", prep.beta);
    run.put("profile.energy", energy);
    run.put("profile.equipartition", equipartition);
    run.put("profile.width", prep.width);
    if let Some(c) = closed {
        run.put("profile.closed_form_error", c);
    }

    let csv_path = run.dir.join("profile.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    w.write_record(["s", "g", "dg"]).map_err(|e| csv_error(&csv_path, e))?;
    for k in 0..prof.len() {
        w.serialize((prof.s(k), prof.g[k], prof.dg[k]))
            .map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    #[derive(Serialize)]
    struct Data {
        potential: String,
        beta: f64,
        width: f64,
        half_length: f64,
        step: f64,
        energy: f64,
        equipartition: f64,
        closed_form_error: Option<f64>,
    }
    let data = Data {
        potential: prep.p.id().to_string(),
        beta: prep.beta,
        width: prep.width,
        half_length: prof.half_length,
        step: prof.step,
        energy,
        equipartition,
        closed_form_error: closed,
    };
    let outcome = check.map(|c| {
        let de = (energy - prep.beta).abs();
        let mut passed = de <= c.energy_tol && equipartition <= c.equipartition_tol;
        let mut detail = format!(
            "|E - β| = {de:.2e} (≤ {:.1e}), equipartition {equipartition:.2e} (≤ {:.1e})",
            c.energy_tol, c.equipartition_tol
        );
        if let Some(err) = closed {
            passed &= err <= c.closed_form_tol;
            detail += &format!(", closed-form error {err:.2e} (≤ {:.1e})", c.closed_form_tol);
        }
        CheckOutcome {
            name: "profile".into(),
            passed,
            detail,
        }
    });
    run.report("profile", outcome.as_ref(), data)?;
    run.checks.extend(outcome);
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        k => Error::io(path, io::Error::other(format!("{k:?}"))),
    }
}

fn solve_stage(run: &mut Run<'_>) -> Result<Field2D> {
    let prep = run.prep;
    let cfg = &prep.cfg;
    let mut intercept = None;
    let (solved, spec) = match (&cfg.continuation, &prep.spec) {
        (Some(opts), BoundarySpec::Fourend { theta, .. }) => {
            let r = solve_four_end(&prep.p, &prep.prof, prep.grid, *theta, &cfg.solver, opts)?;
            intercept = Some(r.intercept);
            run.put("fourend.intercept", r.intercept);
            run.put("fourend.solves", r.solves as f64);
            (r.solved, r.spec)
        }
        _ => {
            let mut init = build_boundary(&prep.spec, prep.grid, &prep.prof, prep.width, prep.p.id())?;
            if let Some(pert) = &cfg.perturb {
                perturb_interior(&mut init, pert.amplitude, cfg.seed);
            }
            (relax(&init, &prep.p, &cfg.solver)?, prep.spec.clone())
        }
    };
    let field = solved.field;
    let stats = solved.stats;
    field.write_snapshot(&run.dir.join("field.ac2"))?;
    run.put("solve.residual", stats.final_residual);
    run.put("solve.flow_steps", stats.flow_steps as f64);
    run.put("solve.newton_steps", stats.newton_steps as f64);
    run.put("solve.linear_iterations", stats.linear_iterations as f64);
    run.put("solve.elapsed_secs", stats.elapsed_secs);
    let planar_error = planar_error(&field, &prep.p, &spec);
    if let Some(e) = planar_error {
        run.put("solve.planar_error", e);
    }

    #[derive(Serialize)]
    struct Data<'a> {
        boundary: &'a BoundarySpec,
        stats: &'a SolveStats,
        fourend_intercept: Option<f64>,
        planar_error: Option<f64>,
    }
    run.report(
        "solve",
        None,
        Data {
            boundary: &spec,
            stats: &stats,
            fourend_intercept: intercept,
            planar_error,
        },
    )?;
    Ok(field)
}

/// `max |u - g(x cos θ - y sin θ + c)|` against the closed-form layer.
fn planar_error(f: &Field2D, p: &Potential, spec: &BoundarySpec) -> Option<f64> {
    let BoundarySpec::Planar { theta, offset } = *spec else {
        return None;
    };
    let (s, c) = theta.sin_cos();
    let g = f.grid;
    let mut worst = 0.0f64;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let exact = p.closed_form_profile(g.x(i) * c - g.y(j) * s + offset)?;
            worst = worst.max((f.at(i, j) - exact).abs());
        }
    }
    Some(worst)
}

struct Ctx<'a> {
    p: &'a Potential,
    beta: f64,
    width: f64,
    f: &'a Field2D,
    spec: &'a BoundarySpec,
    zero: &'a ZeroSet,
    unit: AngleUnit,
}

struct Checked {
    passed: bool,
    detail: String,
    data: serde_json::Value,
    diag: Vec<(String, f64)>,
}

fn json(v: impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

/// Stores the outcome; an error inside a check fails that check only.
fn record(run: &mut Run<'_>, name: &str, res: Result<Checked>) -> Result<()> {
    let (outcome, data) = match res {
        Ok(c) => {
            for (k, v) in c.diag {
                run.put(format!("{name}.{k}"), v);
            }
            let o = CheckOutcome {
                name: name.into(),
                passed: c.passed,
                detail: c.detail,
            };
            (o, c.data)
        }
        Err(e) => (
            CheckOutcome {
                name: name.into(),
                passed: false,
                detail: e.to_string(),
            },
            serde_json::Value::Null,
        ),
    };
    log::info!(
        "{} {name}: {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.detail
    );
    run.report(name, Some(&outcome), data)?;
    run.checks.push(outcome);
    Ok(())
}

fn hamiltonian_check(ctx: &Ctx<'_>, c: &HamiltonianCheck) -> Result<Checked> {
    let tol = c.tol * ctx.beta;
    let mut passed = true;
    let mut parts = Vec::new();
    let mut reports = Vec::new();
    let mut diag = Vec::new();
    for &a in &c.angles {
        let psi = ctx.unit.to_radians(a);
        let r = hamiltonian_profile(ctx.f, ctx.p, psi, c.slices)?;
        let mut part = format!(
            "angle {a}: ρ = {:.5}, deviation {:.2e}",
            r.reference, r.max_abs_deviation
        );
        passed &= r.max_abs_deviation <= tol;
        if let BoundarySpec::Planar { theta, .. } = *ctx.spec {
            let expected = ctx.beta * (theta - psi).sin().abs();
            let allowed = (c.flux_rel_tol * expected).max(0.1 * c.flux_rel_tol * ctx.beta);
            let err = (r.reference - expected).abs();
            passed &= err <= allowed;
            part += &format!(", expected {expected:.5} ± {allowed:.1e}");
            diag.push((format!("{a}.expected"), expected));
        }
        diag.push((format!("{a}.rho"), r.reference));
        diag.push((format!("{a}.deviation"), r.max_abs_deviation));
        parts.push(part);
        reports.push(r);
    }
    Ok(Checked {
        passed,
        detail: format!("{} (deviation ≤ {tol:.2e})", parts.join("; ")),
        data: json(reports),
        diag,
    })
}

fn moment_check(ctx: &Ctx<'_>, c: &MomentCheck) -> Result<Checked> {
    let center = if c.recenter {
        canonical_center(ctx.f, ctx.p, c.slices)?
    } else {
        crate::identities::CanonicalCenter { x: None, y: None }
    };
    // Slices x = const carry arms in y, slices y = const arms in x.
    let mut axes = vec![(0.0, center.y.unwrap_or(0.0))];
    if !ctx.f.neumann_left() {
        axes.push((FRAC_PI_2, center.x.unwrap_or(0.0)));
    }
    let tol = c.tol * ctx.beta;
    let mut worst = 0.0f64;
    let mut reports = Vec::new();
    for (theta, arm) in axes {
        let r = moment_profile_about(ctx.f, ctx.p, theta, c.slices, arm)?;
        worst = worst.max(r.max_abs);
        reports.push(r);
    }
    let mut diag = vec![("max_abs".to_string(), worst)];
    diag.extend(center.x.map(|x| ("center_x".to_string(), x)));
    diag.extend(center.y.map(|y| ("center_y".to_string(), y)));
    Ok(Checked {
        passed: worst <= tol,
        detail: format!(
            "max |E| = {worst:.2e} (≤ {tol:.2e}) about ({}, {})",
            fmt_opt(center.x),
            fmt_opt(center.y)
        ),
        data: json(serde_json::json!({ "center": center, "profiles": reports })),
        diag,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3e}"))
}

fn modica(ctx: &Ctx<'_>, c: &ModicaCheck) -> Result<Checked> {
    let r = modica_check(ctx.f, ctx.p);
    Ok(Checked {
        passed: r.max_violation <= c.tol,
        detail: format!(
            "max (|∇u|² - 2F)⁺ = {:.2e} (≤ {:.1e}) at ({:.2}, {:.2})",
            r.max_violation, c.tol, r.location[0], r.location[1]
        ),
        diag: vec![("violation".into(), r.max_violation), ("excess".into(), r.max_excess)],
        data: json(r),
    })
}

fn energy_check(ctx: &Ctx<'_>, c: &EnergyCheck) -> Result<Checked> {
    if ctx.f.neumann_left() {
        return Err(Error::Config("the energy curve needs a full-plane domain".into()));
    }
    let g = ctx.f.grid;
    let [cx, cy] = c.center;
    let reach = (cx - g.x0).min(g.x_max() - cx).min(cy - g.y0).min(g.y_max() - cy);
    if reach <= 0.0 {
        return Err(Error::Geometry(format!("center ({cx}, {cy}) is outside the domain")));
    }
    let radii: Vec<f64> = (1..=c.radii)
        .map(|k| c.max_fraction * reach * k as f64 / c.radii as f64)
        .collect();
    let curve = energy_curve(ctx.f, ctx.p, &radii, c.center)?;
    let slack = c.slack * ctx.beta;
    let ends = ctx.spec.end_lines().len();
    let target = ends as f64 * ctx.beta;
    let rel = (curve.tail_mean - target).abs() / target;
    let mut diag = vec![
        ("tail_mean".to_string(), curve.tail_mean),
        ("limit".to_string(), curve.limit_estimate),
        ("max_decrease".to_string(), curve.max_decrease),
        ("quantization_error".to_string(), rel),
    ];
    diag.extend(curve.end_count.map(|n| ("end_count".to_string(), n as f64)));
    Ok(Checked {
        passed: curve.max_decrease <= slack && rel <= c.quantization_tol,
        detail: format!(
            "largest decrease {:.2e} (≤ {slack:.1e}); tail mean {:.4} vs {ends}β = {target:.4} ({:.1}%, ≤ {:.0}%); end count {}",
            curve.max_decrease,
            curve.tail_mean,
            100.0 * rel,
            100.0 * c.quantization_tol,
            curve.end_count.map_or("-".into(), |n| n.to_string())
        ),
        data: json(curve),
        diag,
    })
}

fn decay_check(ctx: &Ctx<'_>, c: &DecayCheck) -> Result<Checked> {
    let opts = DecayOptions {
        d_min: c.d_min,
        d_max: c.d_max,
        min_points: c.min_points,
        floor: c.floor,
        edge_margin: c.edge_margin,
    };
    let fit = decay_fit(ctx.f, ctx.zero, &opts)?;
    let expected = c.expected.unwrap_or(1.0 / ctx.width);
    let rel = (fit.nu - expected).abs() / expected;
    Ok(Checked {
        passed: rel <= c.rel_tol,
        detail: format!(
            "ν = {:.4} vs {expected:.4} ({:.1}%, ≤ {:.0}%) from {} nodes",
            fit.nu,
            100.0 * rel,
            100.0 * c.rel_tol,
            fit.points
        ),
        diag: vec![
            ("nu".into(), fit.nu),
            ("prefactor".into(), fit.prefactor),
            ("r2".into(), fit.r2),
        ],
        data: json(fit),
    })
}

fn wrapped(a: f64) -> f64 {
    ((a + PI).rem_euclid(TAU) - PI).abs()
}

fn levelset_check(ctx: &Ctx<'_>, c: &LevelsetCheck) -> Result<Checked> {
    let g = ctx.f.grid;
    let half = ctx.f.neumann_left();
    let center = if half {
        [0.0, 0.0]
    } else {
        ctx.zero
            .hull_centroid()
            .ok_or_else(|| Error::Qualitative("empty zero set".into()))?
    };
    let far = [g.x0, g.x_max()]
        .iter()
        .flat_map(|&x| [g.y0, g.y_max()].map(|y| (x - center[0]).hypot(y - center[1])))
        .fold(0.0, f64::max);
    let (r_min, r_max) = (c.r_min_widths * ctx.width, c.r_max_fraction * far);
    let ends = fit_ends(ctx.zero, center, r_min, r_max)?;
    if ends.is_empty() {
        return Err(Error::Qualitative(format!(
            "no nodal line crosses the annulus {r_min:.3} ≤ r ≤ {r_max:.3} about ({:.3}, {:.3})",
            center[0], center[1]
        )));
    }
    let expected: Vec<f64> = ctx
        .spec
        .end_lines()
        .iter()
        .map(|e| e.theta)
        .filter(|t| !half || t.cos() > 0.0)
        .collect();
    let rms_tol = c.rms_tol.unwrap_or(2.0 * g.h_max());
    let angle_tol = c.angle_tol_deg.to_radians();

    let mut passed = ends.len() == expected.len();
    let angle_err = expected
        .iter()
        .map(|&t| ends.iter().map(|e| wrapped(e.theta - t)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    passed &= angle_err <= angle_tol;
    let rms = ends.iter().map(|e| e.rms).fold(0.0, f64::max);
    passed &= rms <= rms_tol;
    let fitted: Vec<String> = ends.iter().map(|e| format!("{:.2}°", e.theta.to_degrees())).collect();
    let mut detail = format!(
        "{} ends [{}] vs {} prescribed, angle error {:.3}° (≤ {}°), rms {rms:.1e} (≤ {rms_tol:.2})",
        ends.len(),
        fitted.join(", "),
        expected.len(),
        angle_err.to_degrees(),
        c.angle_tol_deg
    );
    let mut diag = vec![
        ("ends".to_string(), ends.len() as f64),
        ("angle_error_deg".to_string(), angle_err.to_degrees()),
        ("rms".to_string(), rms),
    ];
    for (k, e) in ends.iter().enumerate() {
        diag.push((format!("end{k}_deg"), e.theta.to_degrees()));
    }
    let relations = angle_relations(&ends).ok();
    if let Some(r) = &relations {
        if let Some(t) = r.contact_angle {
            diag.push(("contact_angle_deg".into(), t.to_degrees()));
            detail += &format!(", Θ = {:.2}°", t.to_degrees());
        }
        if let (Some(a), Some(b)) = (r.defect_12, r.defect_13) {
            let d = a.max(b);
            passed &= d <= angle_tol;
            diag.push(("relation_defect_deg".into(), d.to_degrees()));
            detail += &format!(", relation defect {:.3}°", d.to_degrees());
        }
    }
    let mut balance = None;
    let mut sine = None;
    if half {
        let mirror = relations.as_ref().and_then(|r| r.reflection_defect);
        if let Some(m) = mirror {
            passed &= m <= angle_tol;
            diag.push(("reflection_defect_deg".into(), m.to_degrees()));
            detail += &format!(", mirror defect {:.3}°", m.to_degrees());
        } else {
            passed = false;
        }
        let j0 = (-g.y0 / g.hy).round() as usize;
        let u_far = ctx.f.at(g.nx - 2, j0.min(g.ny - 1));
        passed &= (1.0 - u_far).abs() <= c.far_field_tol;
        diag.push(("far_field".into(), u_far));
        detail += &format!(", u(far, 0) = {u_far:.6}");
    } else {
        let b = balance_defect(&ends)?;
        let s = sine_identity_defect(&ends);
        passed &= b <= c.balance_tol && s <= c.balance_tol * ends.len() as f64;
        diag.push(("balance".into(), b));
        diag.push(("sine_identity".into(), s));
        detail += &format!(", balance {b:.2e} (≤ {}), sine identity {s:.2e}", c.balance_tol);
        balance = Some(b);
        sine = Some(s);
    }
    Ok(Checked {
        passed,
        detail,
        data: json(serde_json::json!({
            "center": center,
            "ends": ends,
            "expected": expected,
            "relations": relations,
            "balance": balance,
            "sine_identity": sine,
        })),
        diag,
    })
}

fn symmetry_check(ctx: &Ctx<'_>, c: &SymmetryCheck) -> Result<Checked> {
    let center = if c.recenter {
        let cc = canonical_center(ctx.f, ctx.p, c.slices)?;
        [cc.x.unwrap_or(0.0), cc.y.unwrap_or(0.0)]
    } else {
        [0.0, 0.0]
    };
    let half = ctx.f.neumann_left();
    let center = if half { [0.0, center[1]] } else { center };
    let r = symmetry_report(ctx.f, center);
    let worst = if half { r.y_defect } else { r.x_defect.max(r.y_defect) };
    Ok(Checked {
        passed: worst <= c.tol,
        detail: format!(
            "center ({:.2e}, {:.2e}); defects x {:.2e}, y {:.2e} (≤ {:.1e}); min u_x {:.1e}, max u_y {:.1e}",
            center[0], center[1], r.x_defect, r.y_defect, c.tol, r.ux_min, r.uy_max
        ),
        diag: vec![
            ("x_defect".into(), r.x_defect),
            ("y_defect".into(), r.y_defect),
            ("ux_min".into(), r.ux_min),
            ("uy_max".into(), r.uy_max),
        ],
        data: json(r),
    })
}

/// Reads a scenario file as a raw TOML document, for sweeps.
pub fn load_document(path: &Path) -> Result<toml::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses a comma-separated list of TOML values; anything that is not a
/// TOML literal is taken as a bare string.
pub fn parse_values(list: &str) -> Vec<toml::Value> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            toml::from_str::<toml::Table>(&format!("v = {s}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(s.to_string()))
        })
        .collect()
}

/// Replaces the value at a dotted path. Intermediate tables must exist.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad parameter path `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields a key");
    let mut node = root;
    for k in parents {
        node = node
            .get_mut(*k)
            .filter(|v| v.is_table())
            .ok_or_else(|| Error::Config(format!("parameter `{path}`: no table `{k}`")))?;
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("parameter `{path}`: parent is not a table")))?
        .insert(last.to_string(), value);
    Ok(())
}

fn has_path(root: &toml::Value, path: &str) -> bool {
    path.split('.').try_fold(root, |node, k| node.get(k)).is_some()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub status: Status,
    pub dir: Option<PathBuf>,
    pub diagnostics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub table: PathBuf,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    /// Worst row status; `Pass` for an empty sweep.
    pub fn status(&self) -> Status {
        self.rows
            .iter()
            .map(|r| r.status)
            .max_by_key(|s| s.exit_code())
            .unwrap_or(Status::Pass)
    }
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        v => v.to_string(),
    }
}

/// Runs `stage` once per value of `parameter` into `sweep-NNN/row-KKK`
/// directories and writes `table.csv` with every scalar diagnostic.
///
/// A row that fails (bad value, solver failure, failed check) is recorded
/// and the sweep goes on. Rows run concurrently when the base config's
/// solver uses the parallel executor.
pub fn sweep(
    base: &toml::Value,
    base_dir: Option<&Path>,
    parameter: &str,
    values: &[toml::Value],
    stage: Stage,
    opts: &RunOptions,
) -> Result<SweepOutcome> {
    let mut base_cfg = ScenarioConfig::from_value(base.clone())?;
    base_cfg.base_dir = base_dir.map(Path::to_path_buf);
    if let Some(first) = values.first() {
        if !has_path(base, parameter) {
            let mut probe = base.clone();
            set_path(&mut probe, parameter, first.clone())?;
            ScenarioConfig::from_value(probe)
                .map_err(|e| Error::Config(format!("parameter `{parameter}` is not a config path: {e}")))?;
        }
    } else {
        let mut probe = base.clone();
        set_path(&mut probe, parameter, toml::Value::Integer(0))?;
    }
    let out = opts.out.clone().unwrap_or_else(|| base_cfg.output.clone());
    let dir = allocate_dir(&out.join(&base_cfg.name), "sweep")?;
    write_json(
        &dir.join("sweep.json"),
        &serde_json::json!({
            "parameter": parameter,
            "values": values.iter().map(value_label).collect::<Vec<_>>(),
            "stage": stage,
            "config_hash": base_cfg.hash(),
            "version": crate::VERSION,
        }),
    )?;

    let row = |k: usize| -> SweepRow {
        let value = &values[k];
        let label = value_label(value);
        let fail = |status, e: Error| SweepRow {
            value: label.clone(),
            status,
            dir: None,
            diagnostics: BTreeMap::new(),
            error: Some(e.to_string()),
        };
        let mut doc = base.clone();
        if let Err(e) = set_path(&mut doc, parameter, value.clone()) {
            return fail(Status::ConfigError, e);
        }
        let prep = ScenarioConfig::from_value(doc).and_then(|mut cfg| {
            cfg.base_dir = base_dir.map(Path::to_path_buf);
            prepare(&cfg, opts)
        });
        let prep = match prep {
            Ok(p) => p,
            Err(e) => return fail(Status::of_error(&e), e),
        };
        let row_dir = dir.join(format!("row-{k:03}"));
        let res = fs::create_dir(&row_dir)
            .map_err(|e| Error::io(&row_dir, e))
            .and_then(|_| run_prepared(&prep, stage, opts, row_dir.clone()));
        match res {
            Ok(o) => SweepRow {
                value: label,
                status: o.summary.status,
                dir: Some(o.dir),
                diagnostics: o.summary.diagnostics,
                error: o.summary.error,
            },
            Err(e) => SweepRow {
                dir: Some(row_dir),
                ..fail(Status::of_error(&e), e)
            },
        }
    };
    let rows = map_range(base_cfg.solver.exec, values.len(), row);

    let table = dir.join("table.csv");
    write_table(&table, parameter, &rows)?;
    Ok(SweepOutcome { dir, table, rows })
}

fn write_table(path: &Path, parameter: &str, rows: &[SweepRow]) -> Result<()> {
    let keys: BTreeSet<&String> = rows.iter().flat_map(|r| r.diagnostics.keys()).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![parameter.to_string(), "status".into(), "exit_code".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(["dir".to_string(), "error".to_string()]);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.value.clone(),
            json(r.status).as_str().unwrap_or_default().to_string(),
            r.status.exit_code().to_string(),
        ];
        rec.extend(
            keys.iter()
                .map(|k| r.diagnostics.get(*k).map_or(String::new(), |v| v.to_string())),
        );
        rec.push(r.dir.as_ref().map_or(String::new(), |d| d.display().to_string()));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANAR: &str = r#"
name = "planar"
angle_unit = "degrees"

[potential]
kind = "quartic"

[geometry]
lx = 5.0
ly = 10.0
hx = 0.1

[boundary]
kind = "planar"
theta = 90.0
offset = 0.0

[checks.hamiltonian]
angles = [0.0]

[checks.modica]
"#;

    fn planar(out: &Path) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::from_toml_str(PLANAR).unwrap();
        cfg.output = out.to_path_buf();
        cfg
    }

    #[test]
    fn missing_key_is_named() {
        let text = PLANAR.replace("[potential]\nkind = \"quartic\"\n", "");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("potential"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = PLANAR.replace("hx = 0.1", "hx = 0.1\nhz = 0.1");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("hz"), "{err}");
    }

    #[test]
    fn nonpositive_tolerance_is_a_config_error() {
        let text = PLANAR.replace("[checks.modica]", "[checks.modica]\ntol = 0.0");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("checks.modica.tol"), "{err}");
    }

    #[test]
    fn widths_and_degrees_are_converted() {
        let text = PLANAR
            .replace("hx = 0.1", "hx = 0.1\nunits = \"widths\"")
            .replace("offset = 0.0", "offset = 1.0");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let w = 2.0f64.sqrt();
        let g = cfg.grid(w).unwrap();
        assert!((g.x_max() - 5.0 * w).abs() < 1e-12);
        match cfg.boundary_spec(w) {
            BoundarySpec::Planar { theta, offset } => {
                assert!((theta - FRAC_PI_2).abs() < 1e-15);
                assert!((offset - w).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::from_toml_str(PLANAR).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let a = ScenarioConfig::from_toml_str(PLANAR).unwrap();
        let b = ScenarioConfig::from_toml_str(&toml::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn set_path_edits_nested_values() {
        let mut v: toml::Value = toml::from_str(PLANAR).unwrap();
        set_path(&mut v, "boundary.theta", toml::Value::Float(30.0)).unwrap();
        assert_eq!(v["boundary"]["theta"].as_float(), Some(30.0));
        assert!(set_path(&mut v, "nowhere.theta", toml::Value::Float(1.0)).is_err());
        assert!(set_path(&mut v, "boundary..theta", toml::Value::Float(1.0)).is_err());
    }

    #[test]
    fn verify_writes_a_fresh_run_each_time() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = planar(tmp.path());
        let a = run_scenario(&cfg, Stage::Verify, &RunOptions::default()).unwrap();
        assert_eq!(a.summary.status, Status::Pass, "{:?}", a.summary.checks);
        assert_eq!(a.summary.checks.len(), 2);
        for f in [
            "config.toml",
            "field.ac2",
            "field.ac2.json",
            "zero_set.csv",
            "summary.json",
        ] {
            assert!(a.dir.join(f).exists(), "{f}");
        }
        let rep: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(a.dir.join("reports/hamiltonian.json")).unwrap()).unwrap();
        assert_eq!(rep["config_hash"].as_str(), Some(a.summary.config_hash.as_str()));
        assert_eq!(rep["version"].as_str(), Some(crate::VERSION));
        assert!(rep["grid"]["nx"].as_u64().is_some());
        let flux = a.summary.diagnostics["hamiltonian.0.rho"];
        assert!((flux - Potential::quartic().beta().unwrap()).abs() < 1e-2);

        let b = run_scenario(&cfg, Stage::Solve, &RunOptions::default()).unwrap();
        assert_ne!(a.dir, b.dir);
        assert!(a.dir.ends_with("planar/run-000") && b.dir.ends_with("planar/run-001"));
        // Sequential solves are bitwise reproducible.
        let mut seq = cfg.clone();
        seq.solver.exec = crate::Exec::Sequential;
        let c = run_scenario(&seq, Stage::Solve, &RunOptions::default()).unwrap();
        let d = run_scenario(&seq, Stage::Solve, &RunOptions::default()).unwrap();
        assert_eq!(
            fs::read(c.dir.join("field.ac2")).unwrap(),
            fs::read(d.dir.join("field.ac2")).unwrap()
        );
    }

    #[test]
    fn failed_check_sets_status() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = planar(tmp.path());
        cfg.checks.modica = Some(ModicaCheck { tol: 1e-30 });
        // A planar layer sits on the Modica bound up to round-off, so a
        // vanishing tolerance fails unless the excess is exactly zero.
        cfg.checks.hamiltonian.as_mut().unwrap().tol = 1e-14;
        let o = run_scenario(&cfg, Stage::Verify, &RunOptions::default()).unwrap();
        assert_eq!(o.summary.status, Status::CheckFailure);
        assert_eq!(o.summary.exit_code, 1);
    }

    #[test]
    fn solver_failure_keeps_the_best_iterate() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = planar(tmp.path());
        cfg.solver.max_iter = 2;
        cfg.solver.max_flow_steps = 2;
        cfg.perturb = Some(PerturbConfig { amplitude: 0.5 });
        let o = run_scenario(&cfg, Stage::Solve, &RunOptions::default()).unwrap();
        assert_eq!(o.summary.status, Status::SolverFailure);
        assert_eq!(o.summary.exit_code, 3);
        assert!(o.summary.error.is_some());
        assert!(o.dir.join("field_best.ac2").exists());
    }

    #[test]
    fn margin_violation_is_reported_before_writing() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = planar(tmp.path());
        cfg.boundary = BoundarySpec::Planar {
            theta: 90.0,
            offset: 8.0,
        };
        let err = run_scenario(&cfg, Stage::Solve, &RunOptions::default()).unwrap_err();
        assert_eq!(Status::of_error(&err), Status::ConfigError);
        assert!(!tmp.path().join("planar").exists());
    }

    #[test]
    fn profile_stage_checks_the_layer() {
        let tmp = tempfile::tempdir().unwrap();
        let o = run_scenario(&planar(tmp.path()), Stage::Profile, &RunOptions::default()).unwrap();
        assert_eq!(o.summary.status, Status::Pass, "{:?}", o.summary.checks);
        assert!(o.summary.diagnostics["profile.closed_form_error"] < 1e-4);
        let text = fs::read_to_string(o.dir.join("profile.csv")).unwrap();
        assert!(text.starts_with("s,g,dg\n"));
    }

    #[test]
    fn value_lists_parse_as_toml() {
        let v = parse_values("15, 0.5,true , wide,\"x\"");
        assert_eq!(v[0], toml::Value::Integer(15));
        assert_eq!(v[1], toml::Value::Float(0.5));
        assert_eq!(v[2], toml::Value::Boolean(true));
        assert_eq!(v[3], toml::Value::String("wide".into()));
        assert_eq!(v[4], toml::Value::String("x".into()));
        assert!(parse_values(" ").is_empty());
    }

    #[test]
    fn empty_sweep_gives_an_empty_table() {
        let tmp = tempfile::tempdir().unwrap();
        let base: toml::Value = toml::from_str(PLANAR).unwrap();
        let opts = RunOptions {
            out: Some(tmp.path().to_path_buf()),
            ..RunOptions::default()
        };
        let s = sweep(&base, None, "boundary.theta", &[], Stage::Verify, &opts).unwrap();
        assert!(s.rows.is_empty());
        assert_eq!(s.status(), Status::Pass);
        let text = fs::read_to_string(&s.table).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn sweep_records_bad_rows_and_continues() {
        let tmp = tempfile::tempdir().unwrap();
        let base: toml::Value = toml::from_str(PLANAR).unwrap();
        let opts = RunOptions {
            out: Some(tmp.path().to_path_buf()),
            ..RunOptions::default()
        };
        let values = [
            toml::Value::Float(0.2),
            toml::Value::String("wide".into()),
            toml::Value::Float(0.1),
        ];
        let s = sweep(&base, None, "geometry.hx", &values, Stage::Solve, &opts).unwrap();
        let status: Vec<Status> = s.rows.iter().map(|r| r.status).collect();
        assert_eq!(status, [Status::Pass, Status::ConfigError, Status::Pass]);
        assert_eq!(s.status(), Status::ConfigError);
        let mut rdr = csv::Reader::from_path(&s.table).unwrap();
        assert_eq!(rdr.records().count(), 3);
        assert!(matches!(
            sweep(&base, None, "geometry.nope", &values, Stage::Solve, &opts),
            Err(Error::Config(_))
        ));
    }
}
