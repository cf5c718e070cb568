//! File formats written by the command-line tool.

use std::io::{Read, Write};

use dampc::smc::{RunRecord, RunStatistics};
use dampc::{BirdState, RunResult, TraceStep, Vec2};

use crate::CliError;

/// One trace line: the flock at step `t` of run `run`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub run: u64,
    pub t: usize,
    pub birds: Vec<BirdState>,
    pub j: f64,
    pub cv: f64,
    pub vm: f64,
    pub ub: f64,
    pub level_index: usize,
    pub level: f64,
    pub k: usize,
    pub max_horizon: usize,
    pub rounds: usize,
}

const TAIL: [&str; 9] = ["J", "CV", "VM", "UB", "level_index", "level", "k", "max_horizon", "rounds"];

impl TraceRow {
    pub fn from_step(run: u64, step: &TraceStep) -> Self {
        Self {
            run,
            t: step.t,
            birds: step.state.birds.clone(),
            j: step.cost.total,
            cv: step.cost.cv,
            vm: step.cost.vm,
            ub: step.cost.ub,
            level_index: step.level_index,
            level: step.level,
            k: step.k,
            max_horizon: step.max_horizon(),
            rounds: step.rounds,
        }
    }
}

pub fn trace_rows(run: u64, result: &RunResult) -> Vec<TraceRow> {
    result.trace.iter().map(|s| TraceRow::from_step(run, s)).collect()
}

fn header(birds: usize) -> Vec<String> {
    let mut h = vec!["run".to_string(), "t".to_string()];
    for i in 0..birds {
        h.extend([format!("x{i}"), format!("y{i}"), format!("vx{i}"), format!("vy{i}")]);
    }
    h.extend(TAIL.iter().map(|s| s.to_string()));
    h
}

/// Writes rows with shortest round-trip float formatting. All rows must have
/// the same number of birds.
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), CliError> {
    let birds = rows.first().map_or(0, |r| r.birds.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(birds))?;
    for r in rows {
        if r.birds.len() != birds {
            return Err(CliError::Format(format!(
                "trace row has {} birds, expected {birds}",
                r.birds.len()
            )));
        }
        let mut rec = vec![r.run.to_string(), r.t.to_string()];
        for b in &r.birds {
            rec.extend([
                b.position.x.to_string(),
                b.position.y.to_string(),
                b.velocity.x.to_string(),
                b.velocity.y.to_string(),
            ]);
        }
        rec.extend([
            r.j.to_string(),
            r.cv.to_string(),
            r.vm.to_string(),
            r.ub.to_string(),
            r.level_index.to_string(),
            r.level.to_string(),
            r.k.to_string(),
            r.max_horizon.to_string(),
            r.rounds.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, CliError> {
    let s = rec.get(i).ok_or_else(|| CliError::Format(format!("missing column {i}")))?;
    s.parse()
        .map_err(|_| CliError::Format(format!("cannot parse {s:?} in column {i}")))
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, CliError> {
    let mut r = csv::Reader::from_reader(input);
    let cols = r.headers()?.len();
    if cols < 2 + TAIL.len() || (cols - 2 - TAIL.len()) % 4 != 0 {
        return Err(CliError::Format(format!("unexpected trace column count {cols}")));
    }
    let birds = (cols - 2 - TAIL.len()) / 4;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut birds_out = Vec::with_capacity(birds);
        for i in 0..birds {
            let c = 2 + 4 * i;
            birds_out.push(BirdState::new(
                Vec2::new(field(&rec, c)?, field(&rec, c + 1)?),
                Vec2::new(field(&rec, c + 2)?, field(&rec, c + 3)?),
            ));
        }
        let c = 2 + 4 * birds;
        rows.push(TraceRow {
            run: field(&rec, 0)?,
            t: field(&rec, 1)?,
            birds: birds_out,
            j: field(&rec, c)?,
            cv: field(&rec, c + 1)?,
            vm: field(&rec, c + 2)?,
            ub: field(&rec, c + 3)?,
            level_index: field(&rec, c + 4)?,
            level: field(&rec, c + 5)?,
            k: field(&rec, c + 6)?,
            max_horizon: field(&rec, c + 7)?,
            rounds: field(&rec, c + 8)?,
        });
    }
    Ok(rows)
}

/// Per-step cost, level and neighborhood size.
pub fn write_plot<W: Write>(out: W, runs: &[(u64, &RunResult)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "t", "J", "level", "k"])?;
    for (id, run) in runs {
        for s in &run.trace {
            w.write_record([
                id.to_string(),
                s.t.to_string(),
                s.cost.total.to_string(),
                s.level.to_string(),
                s.k_next.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per run.
pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "controller",
        "seed",
        "z",
        "convergence_step",
        "steps",
        "initial_J",
        "final_J",
        "final_level",
        "mean_horizon",
        "k_until_convergence",
        "k_after_convergence",
        "recovered",
        "recovery_steps",
        "wall_seconds",
    ])?;
    for r in records {
        let run = &r.run;
        w.write_record([
            run.controller.name().to_string(),
            r.seed.to_string(),
            u8::from(r.z).to_string(),
            run.convergence_step.map(|c| c.to_string()).unwrap_or_default(),
            (run.trace.len() - 1).to_string(),
            run.trace[0].cost.total.to_string(),
            run.final_cost().to_string(),
            run.ledger.current().to_string(),
            opt(r.mean_horizon()),
            opt(r.k_until_convergence()),
            opt(r.k_after_convergence()),
            r.recovery.as_ref().map(|x| u8::from(x.recovered).to_string()).unwrap_or_default(),
            r.recovery
                .as_ref()
                .and_then(|x| x.steps)
                .map(|s| s.to_string())
                .unwrap_or_default(),
            run.wall_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

/// Side-by-side statistics, one column per batch.
pub fn render_table(columns: &[RunStatistics]) -> String {
    let rows: Vec<(&str, Box<dyn Fn(&RunStatistics) -> String>)> = vec![
        ("Number of birds", Box::new(|s: &RunStatistics| s.birds.to_string())),
        ("Runs", Box::new(|s: &RunStatistics| s.runs.to_string())),
        ("Success rate", Box::new(|s: &RunStatistics| format!("{:.2}", s.success_rate))),
        ("Avg. convergence duration", Box::new(|s: &RunStatistics| cell(s.avg_convergence_steps, 2))),
        ("Avg. horizon", Box::new(|s: &RunStatistics| cell(s.avg_horizon, 2))),
        ("Avg. execution time in sec.", Box::new(|s: &RunStatistics| format!("{:.2}", s.avg_wall_seconds))),
        ("Avg. neighborhood size, k", Box::new(|_: &RunStatistics| String::new())),
        ("  for good runs until convergence", Box::new(|s: &RunStatistics| cell(s.k_until_convergence, 2))),
        ("  for good runs over m steps", Box::new(|s: &RunStatistics| cell(s.k_over_m, 2))),
        ("  for good runs after convergence", Box::new(|s: &RunStatistics| cell(s.k_after_convergence, 2))),
        ("  for bad runs", Box::new(|s: &RunStatistics| cell(s.k_bad_runs, 2))),
    ];
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let mut out = format!("{:label_width$}", "");
    for c in columns {
        out.push_str(&format!("  {:>10}", c.controller.name()));
    }
    out.push('\n');
    for (label, f) in &rows {
        out.push_str(&format!("{label:label_width$}"));
        for c in columns {
            out.push_str(&format!("  {:>10}", f(c)));
        }
        out.push('\n');
    }
    out
}
