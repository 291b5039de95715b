//! The `precompute`, `run` and `analyze` subcommands. Each returns `Ok` on
//! success; the binary maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use fpl_core::dynamics::{automatic_dt, run_with, LandauRhs, StepPlan};
use fpl_core::lattice::GridSpec;
use fpl_core::weights::{build_table, load_table, save_table, KernelParams, WeightTable};
use serde_json::json;

use crate::analyze::{read_rows, summarize, Summary};
use crate::artifacts::{
    append_manifest, unix_now, Artifact, CsvSink, ManifestEntry, Snapshot, DIAGNOSTICS_NAME,
};
use crate::config::RunConfig;
use crate::CliError;

/// Environment variable naming the weight-cache directory.
pub const CACHE_ENV: &str = "FPL_CACHE_DIR";

/// Largest relative moment drift a run may accumulate before its
/// conservation audit fails.
pub const DRIFT_LIMIT: f64 = 1e-10;

pub fn cache_dir(out: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("cache"))
}

/// File name keyed on the exact bits of every parameter the table depends on.
pub fn table_file_name(grid: &GridSpec<f64>, params: &KernelParams) -> String {
    format!(
        "weights-N{}-L{:016x}-lam{:016x}-R{:016x}-q{}.fplw",
        grid.n_modes(),
        grid.half_length().to_bits(),
        params.lambda.to_bits(),
        params.trunc_radius.to_bits(),
        params.quad_points
    )
}

/// A weight table together with where it lives and whether it was reused.
pub struct CachedTable {
    pub table: WeightTable,
    pub path: PathBuf,
    pub hit: bool,
}

/// Loads the table from `cache` if a valid one is there, otherwise builds
/// and stores it. A damaged cache file is rebuilt.
pub fn obtain_table(cache: &Path, grid: &GridSpec<f64>, params: &KernelParams) -> Result<CachedTable, CliError> {
    let path = cache.join(table_file_name(grid, params));
    if path.exists() {
        match load_table(&path, grid, params) {
            Ok(table) => return Ok(CachedTable { table, path, hit: true }),
            Err(e) => eprintln!("warning: rebuilding {}: {e}", path.display()),
        }
    }
    fs::create_dir_all(cache).map_err(|e| CliError::Io(format!("{}: {e}", cache.display())))?;
    let table = build_table(grid, params)?;
    save_table(&table, &path)?;
    Ok(CachedTable { table, path, hit: false })
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

/// Config with the box and kernel radius resolved, as echoed to manifests.
fn echo(cfg: &RunConfig) -> Result<RunConfig, CliError> {
    let mut resolved = cfg.clone();
    resolved.grid.half_length = Some(cfg.half_length()?);
    resolved.kernel.trunc_radius = Some(cfg.kernel()?.trunc_radius);
    Ok(resolved)
}

fn start(out: &Path, command: &str, config: serde_json::Value) -> Result<(), CliError> {
    append_manifest(
        out,
        &ManifestEntry::Start {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            config,
        },
    )
}

#[derive(Default)]
struct Outcome {
    table_checksum: Option<String>,
    max_drift: Option<f64>,
    artifacts: Vec<Artifact>,
}

fn finish(out: &Path, command: &str, outcome: Outcome, result: &Result<(), CliError>) -> Result<(), CliError> {
    let (exit_status, message, halt_time) = match result {
        Ok(()) => (crate::EXIT_OK, None, None),
        Err(e) => (e.exit_code(), Some(e.to_string()), e.halt_time()),
    };
    append_manifest(
        out,
        &ManifestEntry::End {
            command: command.into(),
            finished_unix: unix_now(),
            exit_status,
            message,
            table_checksum: outcome.table_checksum,
            halt_time,
            max_drift: outcome.max_drift,
            artifacts: outcome.artifacts,
        },
    )
}

/// Builds (or finds) the weight table for `config_path`.
pub fn precompute(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let grid = cfg.grid()?;
    let params = cfg.kernel()?;
    create_out(out)?;
    start(out, "precompute", json!({ "input": echo(&cfg)? }))?;
    let mut outcome = Outcome::default();
    let result = (|| {
        let cached = obtain_table(&cache_dir(out), &grid, &params)?;
        let checksum = format!("{:016x}", cached.table.checksum());
        println!(
            "{} {} (checksum {checksum})",
            if cached.hit { "cache hit:" } else { "built:" },
            cached.path.display()
        );
        outcome.table_checksum = Some(checksum);
        outcome.artifacts.push(Artifact::of_file(out, &cached.path)?);
        Ok(())
    })();
    finish(out, "precompute", outcome, &result)?;
    result
}

fn snapshot_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("snapshot-{step:08}.fpls"))
}

/// Runs the simulation described by `config_path` into `out`.
pub fn run(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?.with_seed(seed);
    let solver = cfg.solver()?;
    let grid = cfg.grid()?;
    let params = cfg.kernel()?;
    let g0 = cfg.initial_field(&grid)?;
    create_out(out)?;

    let cached = obtain_table(&cache_dir(out), &grid, &params)?;
    let mut rhs = LandauRhs::<f64>::new(&cached.table, solver.padding, solver.cutoff)?;
    let dt = match solver.dt {
        Some(dt) => dt,
        None => automatic_dt(rhs.workspace(), solver.lambda, &g0)?,
    };
    let plan = StepPlan::new(solver.t_final, dt);
    start(
        out,
        "run",
        json!({
            "input": echo(&cfg)?,
            "resolved": { "dt": plan.dt, "steps": plan.steps, "table": cached.path.display().to_string() },
        }),
    )?;

    let mut outcome = Outcome {
        table_checksum: Some(format!("{:016x}", cached.table.checksum())),
        ..Outcome::default()
    };
    let result = (|| {
        let first = snapshot_path(out, 0);
        Snapshot { t: 0.0, step: 0, field: g0.clone() }.save(&first)?;
        outcome.artifacts.push(Artifact::of_file(out, &first)?);
        let csv_path = out.join(DIAGNOSTICS_NAME);
        let mut sink = CsvSink::create(&csv_path)?;
        let ran = run_with(
            &mut rhs,
            plan,
            solver.epsilon_stability,
            solver.output_stride,
            &solver.diagnostics,
            g0,
            &mut sink,
        );
        drop(sink);
        outcome.artifacts.push(Artifact::of_file(out, &csv_path)?);
        let state = ran?;
        let last = snapshot_path(out, state.step_index);
        Snapshot {
            t: state.t,
            step: state.step_index,
            field: state.g,
        }
        .save(&last)?;
        outcome.artifacts.push(Artifact::of_file(out, &last)?);

        let summary = summarize(&read_rows(&csv_path)?)?;
        let drift = summary.drift.max();
        outcome.max_drift = Some(drift);
        println!(
            "{} steps to t = {}; max moment drift {drift:.3e} (mass {:.3e}, momentum {:.3e}, energy {:.3e})",
            plan.steps, state.t, summary.drift.mass, summary.drift.momentum, summary.drift.energy
        );
        if !(drift <= DRIFT_LIMIT) {
            return Err(CliError::Numerical(format!(
                "conservation audit failed: drift {drift:.3e} > {DRIFT_LIMIT:e}"
            )));
        }
        Ok(())
    })();
    finish(out, "run", outcome, &result)?;
    result
}

/// Accepts a run directory or a CSV file.
pub fn analyze(target: &Path) -> Result<Summary, CliError> {
    let csv_path = if target.is_dir() {
        target.join(DIAGNOSTICS_NAME)
    } else {
        target.to_path_buf()
    };
    let summary = summarize(&read_rows(&csv_path)?)?;
    println!("records            {}", summary.records);
    println!("time span          [{}, {}]", summary.t_first, summary.t_last);
    match summary.half_life {
        Some(h) => println!("half-life          {h:.6e}"),
        None => println!("half-life          none (distance to equilibrium does not decay)"),
    }
    println!("entropy violations {}", summary.entropy_violations);
    println!(
        "drift              mass {:.3e}, momentum {:.3e}, energy {:.3e}",
        summary.drift.mass, summary.drift.momentum, summary.drift.energy
    );
    Ok(summary)
}
