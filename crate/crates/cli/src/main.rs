//! `aclab`: run Allen-Cahn scenarios from TOML files.
//!
//! Exit codes: 0 pass, 1 check failure, 2 config error, 3 solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aclab_core::scenario::{
    load_document, parse_values, run_scenario, sweep, RunOptions, RunOutcome, ScenarioConfig, Stage, Status,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aclab", version, about = "Entire solutions of the 2D Allen-Cahn equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the 1D layer and check its energy.
    Profile1d(Common),
    /// Relax the 2D problem and save the field.
    Solve(Common),
    /// Solve, then run every check enabled in the scenario.
    Verify(Analyse),
    /// Solve, then extract the nodal set and fit its ends.
    Levelset(Analyse),
    /// Run a stage once per value of one config parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output root; overrides `output` in the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the interior perturbation; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Debug)]
struct Analyse {
    #[command(flatten)]
    common: Common,
    /// Analyse this AC2 snapshot instead of solving.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Dotted config path; defaults to `[sweep] parameter`.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated TOML values; defaults to `[sweep] values`.
    #[arg(long, allow_hyphen_values = true)]
    values: Option<String>,
    #[arg(long, value_enum, default_value_t = SweepStage::Verify)]
    stage: SweepStage,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepStage {
    Profile1d,
    Solve,
    Verify,
    Levelset,
}

impl From<SweepStage> for Stage {
    fn from(s: SweepStage) -> Stage {
        match s {
            SweepStage::Profile1d => Stage::Profile,
            SweepStage::Solve => Stage::Solve,
            SweepStage::Verify => Stage::Verify,
            SweepStage::Levelset => Stage::Levelset,
        }
    }
}

fn init_threads(n: usize) {
    #[cfg(feature = "parallel")]
    if n > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already set: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the `parallel` feature; --threads {n} ignored");
    }
}

fn options(c: &Common, snapshot: Option<PathBuf>) -> RunOptions {
    RunOptions {
        out: c.out.clone(),
        seed: c.seed,
        snapshot,
    }
}

fn fail(e: aclab_core::Error) -> ExitCode {
    let status = Status::of_error(&e);
    eprintln!("error: {e}");
    ExitCode::from(status.exit_code())
}

fn report(o: &RunOutcome) -> ExitCode {
    let s = &o.summary;
    for c in &s.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(e) = &s.error {
        println!("ERROR {e}");
    }
    println!("{:?} -> {}", s.status, o.dir.display());
    ExitCode::from(s.exit_code)
}

fn run(c: &Common, stage: Stage, snapshot: Option<PathBuf>) -> ExitCode {
    init_threads(c.threads);
    let cfg = match ScenarioConfig::load(&c.scenario) {
        Ok(cfg) => cfg,
        Err(e) => return fail(e),
    };
    match run_scenario(&cfg, stage, &options(c, snapshot)) {
        Ok(o) => report(&o),
        Err(e) => fail(e),
    }
}

fn run_sweep(a: &SweepArgs) -> ExitCode {
    let c = &a.common;
    init_threads(c.threads);
    let doc = match load_document(&c.scenario) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let from_file = doc.get("sweep");
    let param = a
        .param
        .clone()
        .or_else(|| from_file?.get("parameter")?.as_str().map(str::to_string));
    let Some(param) = param else {
        eprintln!("error: configuration error: no --param and no `sweep.parameter`");
        return ExitCode::from(Status::ConfigError.exit_code());
    };
    let values = match (&a.values, from_file.and_then(|s| s.get("values"))) {
        (Some(list), _) => parse_values(list),
        (None, Some(v)) => v.as_array().cloned().unwrap_or_default(),
        (None, None) => Vec::new(),
    };
    let dir = c.scenario.parent().filter(|p| p != &Path::new(""));
    match sweep(&doc, dir, &param, &values, a.stage.into(), &options(c, None)) {
        Ok(s) => {
            for r in &s.rows {
                let note = r.error.as_deref().unwrap_or("");
                println!("{param} = {}: {:?} {note}", r.value, r.status);
            }
            println!("table: {}", s.table.display());
            ExitCode::from(s.status().exit_code())
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Profile1d(c) => run(c, Stage::Profile, None),
        Command::Solve(c) => run(c, Stage::Solve, None),
        Command::Verify(a) => run(&a.common, Stage::Verify, a.snapshot.clone()),
        Command::Levelset(a) => run(&a.common, Stage::Levelset, a.snapshot.clone()),
        Command::Sweep(a) => run_sweep(a),
    }
}
