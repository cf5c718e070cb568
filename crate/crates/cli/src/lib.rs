//! Command-line front end: loads a configuration, runs single executions or
//! statistical batches and writes traces, summaries and tables.

pub mod config;
pub mod output;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use dampc::smc::{estimate, run_one, Estimate, ExperimentConfig};
use dampc::Controller;
use serde::Serialize;
use serde_json::json;

pub use config::{ConfigFile, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] dampc::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

/// Process exit status.
pub const EXIT_GOAL: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Smc,
    Compare,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

/// Executes `cmd` and returns the exit status. Nothing is written unless
/// the configuration is valid.
pub fn execute(cmd: Command, cfg: &ConfigFile) -> Result<i32, CliError> {
    cfg.validate()?;
    match cmd {
        Command::Run => cmd_run(cfg),
        Command::Smc => cmd_smc(cfg),
        Command::Compare => cmd_compare(cfg),
    }
}

fn cmd_run(cfg: &ConfigFile) -> Result<i32, CliError> {
    let exp = ExperimentConfig {
        after_goal_steps: 0,
        ..cfg.experiment.clone()
    };
    let params = exp.control_params(&cfg.model)?;
    let seed = exp.base_seed;
    let record = run_one(&exp, &params, seed)?;
    let run = &record.run;

    let out = &cfg.output;
    fs::create_dir_all(&out.dir)?;
    output::write_trace(create(&out.path(&out.trace))?, &output::trace_rows(seed, run))?;
    output::write_plot(create(&out.path(&out.plot))?, &[(seed, run)])?;
    let summary = json!({
        "controller": run.controller,
        "seed": seed,
        "birds": exp.birds,
        "success": record.z,
        "convergence_step": run.convergence_step,
        "steps": run.trace.len() - 1,
        "initial_cost": run.trace[0].cost.total,
        "final_cost": run.final_cost(),
        "final_breakdown": run.trace.last().map(|r| r.cost),
        "levels": run.ledger.levels(),
        "mean_horizon": record.mean_horizon(),
        "k_until_convergence": record.k_until_convergence(),
        "recovery": record.recovery.as_ref().map(|r| json!({
            "bird": r.bird,
            "disturbed_cost": r.disturbed_cost,
            "recovered": r.recovered,
            "steps": r.steps,
        })),
        "wall_seconds": run.wall_seconds,
    });
    write_json(&out.path(&out.summary), &summary)?;
    Ok(if record.z { EXIT_GOAL } else { EXIT_NO_CONVERGENCE })
}

fn batch_summary(exp: &ExperimentConfig, e: &Estimate) -> serde_json::Value {
    json!({
        "controller": exp.controller,
        "mu": e.mu,
        "runs": e.records.len(),
        "epsilon": exp.epsilon,
        "delta": exp.delta,
        "sample_size": exp.sample_size,
        "base_seed": exp.base_seed,
        "statistics": e.statistics,
    })
}

fn write_batch(cfg: &ConfigFile, prefix: &str, e: &Estimate) -> Result<(), CliError> {
    let out = &cfg.output;
    let rows: Vec<_> = e
        .records
        .iter()
        .flat_map(|r| output::trace_rows(r.seed, &r.run))
        .collect();
    output::write_trace(create(&out.path(&format!("{prefix}{}", out.trace)))?, &rows)?;
    let runs: Vec<_> = e.records.iter().map(|r| (r.seed, &r.run)).collect();
    output::write_plot(create(&out.path(&format!("{prefix}{}", out.plot)))?, &runs)?;
    Ok(())
}

fn cmd_smc(cfg: &ConfigFile) -> Result<i32, CliError> {
    let e = estimate(&cfg.experiment, &cfg.model)?;
    let out = &cfg.output;
    fs::create_dir_all(&out.dir)?;
    write_batch(cfg, "", &e)?;
    output::write_records(create(&out.path(&out.records))?, &e.records)?;
    write_json(&out.path(&out.summary), &batch_summary(&cfg.experiment, &e))?;
    fs::write(out.path(&out.table), output::render_table(&[e.statistics.clone()]))?;
    Ok(EXIT_GOAL)
}

fn cmd_compare(cfg: &ConfigFile) -> Result<i32, CliError> {
    let mut results = Vec::new();
    for controller in [Controller::Dampc, Controller::Ampc] {
        let exp = ExperimentConfig {
            controller,
            ..cfg.experiment.clone()
        };
        let e = estimate(&exp, &cfg.model)?;
        results.push((exp, e));
    }
    let out = &cfg.output;
    fs::create_dir_all(&out.dir)?;
    let mut records = Vec::new();
    let mut summary = serde_json::Map::new();
    for (exp, e) in &results {
        let name = match exp.controller {
            Controller::Dampc => "dampc",
            Controller::Ampc => "ampc",
        };
        write_batch(cfg, &format!("{name}_"), e)?;
        records.extend(e.records.iter().cloned());
        summary.insert(name.to_string(), batch_summary(exp, e));
    }
    output::write_records(create(&out.path(&out.records))?, &records)?;
    write_json(&out.path(&out.summary), &summary)?;
    let columns: Vec<_> = results.iter().map(|(_, e)| e.statistics.clone()).collect();
    fs::write(out.path(&out.table), output::render_table(&columns))?;
    Ok(EXIT_GOAL)
}
