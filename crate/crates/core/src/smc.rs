//! Statistical model checking: batches of independent seeded runs, the
//! additive-error Monte-Carlo estimate of the goal-reaching probability and
//! the aggregate statistics reported for each controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ampc::AmpcEngine;
use crate::cost::{CostModel, UpwashParams, WingConfig};
use crate::dampc::{DampcEngine, NeighborhoodPolicy};
use crate::dynamics::{sample_initial, ActionLimits, FlockState, InitBox};
use crate::error::{Error, Result};
use crate::pso::SwarmTuning;
use crate::run::{drive, ControlParams, Controller, RunResult};
use crate::seed::derive_seed;
use crate::vec2::Vec2;

/// How the number of runs is derived from `(epsilon, delta)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSizeMode {
    /// `ceil(4 ln(2/delta) / epsilon)`.
    #[default]
    Literal,
    /// `ceil(4 ln(2/delta) / epsilon^2)`.
    Squared,
}

/// Number of runs for an additive-error `(epsilon, delta)` estimate.
pub fn required_runs(epsilon: f64, delta: f64, mode: SampleSizeMode) -> u64 {
    let scale = match mode {
        SampleSizeMode::Literal => epsilon,
        SampleSizeMode::Squared => epsilon * epsilon,
    };
    let n = 4.0 * (2.0 / delta).ln() / scale;
    if n <= 0.0 {
        0
    } else {
        n.ceil() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceKind {
    /// Shift one bird's position by a random offset of the given length.
    Displacement,
    /// Stop one bird dead.
    Crash,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Once, as soon as the flock first reaches the goal; recovery is then a
    /// fresh run from the disturbed state.
    AfterGoal,
    /// Before each listed step of the run (1-based).
    AtSteps(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    Bird(usize),
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_target")]
    pub target: TargetRule,
}

fn default_magnitude() -> f64 {
    1.0
}

fn default_schedule() -> Schedule {
    Schedule::AfterGoal
}

fn default_target() -> TargetRule {
    TargetRule::Random
}

impl DisturbanceSpec {
    pub fn displacement(magnitude: f64) -> Self {
        Self {
            kind: DisturbanceKind::Displacement,
            magnitude,
            schedule: Schedule::AfterGoal,
            target: TargetRule::Random,
        }
    }

    pub fn validate(&self, birds: usize) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "disturbance magnitude must be finite and >= 0, got {}",
                self.magnitude
            )));
        }
        if let TargetRule::Bird(b) = self.target {
            if b >= birds {
                return Err(Error::IndexOutOfRange { index: b, birds });
            }
        }
        if let Schedule::AtSteps(steps) = &self.schedule {
            if steps.contains(&0) {
                return Err(Error::InvalidConfig("disturbance steps are 1-based".into()));
            }
        }
        Ok(())
    }
}

/// Moves bird `bird` by `offset`.
pub fn displace(state: &FlockState, bird: usize, offset: Vec2) -> Result<FlockState> {
    if bird >= state.len() {
        return Err(Error::IndexOutOfRange {
            index: bird,
            birds: state.len(),
        });
    }
    let mut out = state.clone();
    out.birds[bird].position += offset;
    Ok(out)
}

/// Applies `spec` to `state`; returns the disturbed state and the bird hit.
/// A crashed bird has zero velocity, so the action bound keeps its
/// acceleration at zero on the following step.
pub fn apply_disturbance<R: Rng + ?Sized>(
    state: &FlockState,
    spec: &DisturbanceSpec,
    rng: &mut R,
) -> Result<(FlockState, usize)> {
    spec.validate(state.len())?;
    if state.is_empty() {
        return Err(Error::EmptySubflock);
    }
    let bird = match spec.target {
        TargetRule::Bird(b) => b,
        TargetRule::Random => rng.gen_range(0..state.len()),
    };
    let out = match spec.kind {
        DisturbanceKind::Displacement => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let offset = Vec2::new(angle.cos(), angle.sin()) * spec.magnitude;
            displace(state, bird, offset)?
        }
        DisturbanceKind::Crash => {
            let mut out = state.clone();
            if spec.magnitude > 0.0 {
                out.birds[bird].velocity = Vec2::ZERO;
            }
            out
        }
    };
    Ok((out, bird))
}

/// Cost-metric, action and swarm constants shared by every run of an
/// experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub wing: WingConfig,
    /// Derived from the wing span when absent.
    pub upwash: Option<UpwashParams>,
    pub limits: ActionLimits,
    pub swarm: SwarmTuning,
}

impl ModelSettings {
    pub fn cost_model(&self) -> Result<CostModel> {
        let upwash = self.upwash.unwrap_or_else(|| UpwashParams::for_wing(self.wing.w));
        CostModel::new(self.wing, upwash)
    }
}

/// One batch of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub birds: usize,
    pub phi: f64,
    pub h_max: usize,
    pub m: usize,
    pub beta: f64,
    /// Defaults to `min(3, birds)`.
    pub k_min: Option<usize>,
    /// Defaults to `birds`.
    pub k_max: Option<usize>,
    pub init_box: InitBox,
    /// Explicit run count; derived from `epsilon` and `delta` when absent.
    pub runs: Option<u64>,
    pub epsilon: f64,
    pub delta: f64,
    pub sample_size: SampleSizeMode,
    pub base_seed: u64,
    pub controller: Controller,
    /// Steps of continued control after the goal is first reached.
    pub after_goal_steps: usize,
    pub disturbance: Option<DisturbanceSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            birds: 5,
            phi: 0.1,
            h_max: 3,
            m: 60,
            beta: 100.0,
            k_min: None,
            k_max: None,
            init_box: InitBox::default(),
            runs: None,
            epsilon: 0.01,
            delta: 0.05,
            sample_size: SampleSizeMode::Literal,
            base_seed: 0,
            controller: Controller::Dampc,
            after_goal_steps: 10,
            disturbance: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.birds == 0 {
            return Err(Error::InvalidConfig("birds must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.runs == Some(0) {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        self.init_box.validate()?;
        self.policy().validate(self.birds)?;
        if let Some(d) = &self.disturbance {
            d.validate(self.birds)?;
        }
        Ok(())
    }

    pub fn policy(&self) -> NeighborhoodPolicy {
        let default = NeighborhoodPolicy::for_flock(self.birds);
        NeighborhoodPolicy {
            k_min: self.k_min.unwrap_or(default.k_min),
            k_max: self.k_max.unwrap_or(default.k_max),
        }
    }

    pub fn run_count(&self) -> u64 {
        self.runs
            .unwrap_or_else(|| required_runs(self.epsilon, self.delta, self.sample_size))
    }

    pub fn control_params(&self, model: &ModelSettings) -> Result<ControlParams> {
        let params = ControlParams {
            phi: self.phi,
            h_max: self.h_max,
            m: self.m,
            beta: self.beta,
            limits: model.limits,
            model: model.cost_model()?,
            swarm: model.swarm,
        };
        params.validate()?;
        Ok(params)
    }

    /// Initial state of run `seed`.
    pub fn initial_state(&self, seed: u64) -> Result<FlockState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_initial(&mut rng, self.birds, &self.init_box)
    }
}

/// Outcome of disturbing a flock that had reached the goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub bird: usize,
    pub disturbed_cost: f64,
    pub recovered: bool,
    pub steps: Option<usize>,
    pub run: RunResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// The Bernoulli outcome: goal reached and, when a post-goal disturbance
    /// is configured, reached again afterwards.
    pub z: bool,
    pub run: RunResult,
    pub recovery: Option<Recovery>,
}

impl RunRecord {
    /// Mean per-bird horizon over the steps until convergence.
    pub fn mean_horizon(&self) -> Option<f64> {
        mean(self.run.steps_until_convergence().iter().filter_map(|r| r.mean_horizon()))
    }

    pub fn k_until_convergence(&self) -> Option<f64> {
        mean(self.run.steps_until_convergence().iter().map(|r| r.k as f64))
    }

    /// Neighborhood size averaged over `m` steps, holding the last chosen
    /// size once the goal is reached.
    pub fn k_over_m(&self, m: usize) -> Option<f64> {
        let rows = self.run.steps_until_convergence();
        let last = rows.last()?;
        let pad = m.saturating_sub(rows.len());
        let total: f64 = rows.iter().map(|r| r.k as f64).sum::<f64>() + pad as f64 * last.k_next as f64;
        Some(total / rows.len().max(m) as f64)
    }

    pub fn k_after_convergence(&self) -> Option<f64> {
        mean(self.run.steps_after_convergence().iter().map(|r| r.k as f64))
    }

    pub fn k_all_steps(&self) -> Option<f64> {
        mean(self.run.trace[1..].iter().map(|r| r.k as f64))
    }
}

/// Table-style aggregates over a batch. Averages are `None` when no run
/// contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub controller: Controller,
    pub birds: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_convergence_steps: Option<f64>,
    pub avg_horizon: Option<f64>,
    pub k_until_convergence: Option<f64>,
    pub k_over_m: Option<f64>,
    pub k_after_convergence: Option<f64>,
    pub k_bad_runs: Option<f64>,
    pub total_wall_seconds: f64,
    pub avg_wall_seconds: f64,
}

impl RunStatistics {
    pub fn from_records(controller: Controller, birds: usize, m: usize, records: &[RunRecord]) -> Self {
        let good: Vec<&RunRecord> = records.iter().filter(|r| r.z).collect();
        let bad: Vec<&RunRecord> = records.iter().filter(|r| !r.z).collect();
        let total_wall: f64 = records
            .iter()
            .map(|r| r.run.wall_seconds + r.recovery.as_ref().map_or(0.0, |x| x.run.wall_seconds))
            .sum();
        Self {
            controller,
            birds,
            runs: records.len(),
            successes: good.len(),
            success_rate: if records.is_empty() {
                0.0
            } else {
                good.len() as f64 / records.len() as f64
            },
            avg_convergence_steps: mean(good.iter().filter_map(|r| r.run.convergence_step.map(|c| c as f64))),
            avg_horizon: mean(good.iter().filter_map(|r| r.mean_horizon())),
            k_until_convergence: mean(good.iter().filter_map(|r| r.k_until_convergence())),
            k_over_m: mean(good.iter().filter_map(|r| r.k_over_m(m))),
            k_after_convergence: mean(good.iter().filter_map(|r| r.k_after_convergence())),
            k_bad_runs: mean(bad.iter().filter_map(|r| r.k_all_steps())),
            total_wall_seconds: total_wall,
            avg_wall_seconds: if records.is_empty() {
                0.0
            } else {
                total_wall / records.len() as f64
            },
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mu: f64,
    pub statistics: RunStatistics,
    pub records: Vec<RunRecord>,
}

/// Runs one controller from `s0`.
pub fn execute(
    controller: Controller,
    s0: FlockState,
    params: &ControlParams,
    policy: NeighborhoodPolicy,
    seed: u64,
    extra_after_goal: usize,
    disturb: &mut dyn FnMut(usize, &mut FlockState),
) -> Result<RunResult> {
    match controller {
        Controller::Dampc => {
            let mut engine = DampcEngine::new(s0, params, policy, seed)?;
            drive(&mut engine, params, seed, extra_after_goal, disturb)
        }
        Controller::Ampc => {
            let mut engine = AmpcEngine::new(s0, params, seed)?;
            drive(&mut engine, params, seed, extra_after_goal, disturb)
        }
    }
}

const DISTURBANCE_TAG: u64 = 0xd157;
const RECOVERY_TAG: u64 = 0x2ec0;

/// Disturbs `goal_state` and controls the flock afresh for up to `m` steps.
pub fn recover(
    controller: Controller,
    goal_state: &FlockState,
    spec: &DisturbanceSpec,
    params: &ControlParams,
    policy: NeighborhoodPolicy,
    seed: u64,
) -> Result<Recovery> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[DISTURBANCE_TAG]));
    let (disturbed, bird) = apply_disturbance(goal_state, spec, &mut rng)?;
    let disturbed_cost = params.model.total(&disturbed.birds);
    let run = execute(
        controller,
        disturbed,
        params,
        policy,
        derive_seed(seed, &[RECOVERY_TAG]),
        0,
        &mut |_, _| {},
    )?;
    Ok(Recovery {
        bird,
        disturbed_cost,
        recovered: run.success,
        steps: run.convergence_step,
        run,
    })
}

/// One complete seeded execution, including any configured disturbance.
pub fn run_one(cfg: &ExperimentConfig, params: &ControlParams, seed: u64) -> Result<RunRecord> {
    let s0 = cfg.initial_state(seed)?;
    let policy = cfg.policy();
    let mut scheduled_error = None;
    let run = match &cfg.disturbance {
        Some(spec @ DisturbanceSpec {
            schedule: Schedule::AtSteps(steps),
            ..
        }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[DISTURBANCE_TAG]));
            let mut hook = |step: usize, state: &mut FlockState| {
                if steps.contains(&step) {
                    match apply_disturbance(state, spec, &mut rng) {
                        Ok((next, _)) => *state = next,
                        Err(e) => scheduled_error = Some(e),
                    }
                }
            };
            execute(cfg.controller, s0, params, policy, seed, cfg.after_goal_steps, &mut hook)?
        }
        _ => execute(cfg.controller, s0, params, policy, seed, cfg.after_goal_steps, &mut |_, _| {})?,
    };
    if let Some(e) = scheduled_error {
        return Err(e);
    }

    let recovery = match (&cfg.disturbance, run.convergence_step) {
        (
            Some(
                spec @ DisturbanceSpec {
                    schedule: Schedule::AfterGoal,
                    ..
                },
            ),
            Some(c),
        ) => Some(recover(cfg.controller, &run.trace[c].state, spec, params, policy, seed)?),
        _ => None,
    };
    let z = match &recovery {
        Some(r) => run.success && r.recovered,
        None => run.success && !matches!(cfg.disturbance.as_ref().map(|d| &d.schedule), Some(Schedule::AfterGoal)),
    };
    Ok(RunRecord {
        seed,
        z,
        run,
        recovery,
    })
}

/// Runs seeds `base_seed, base_seed + 1, ...` in parallel and folds the
/// results in seed order.
pub fn estimate(cfg: &ExperimentConfig, model: &ModelSettings) -> Result<Estimate> {
    cfg.validate()?;
    let params = cfg.control_params(model)?;
    let runs = cfg.run_count();
    if runs == 0 {
        return Err(Error::InvalidConfig("experiment has no runs".into()));
    }
    let records: Vec<RunRecord> = (0..runs)
        .into_par_iter()
        .map(|l| run_one(cfg, &params, cfg.base_seed.wrapping_add(l)))
        .collect::<Result<_>>()?;
    let statistics = RunStatistics::from_records(cfg.controller, cfg.birds, cfg.m, &records);
    Ok(Estimate {
        mu: statistics.success_rate,
        statistics,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::BirdState;

    #[test]
    fn sample_sizes() {
        assert_eq!(required_runs(0.01, 0.05, SampleSizeMode::Literal), 1476);
        assert_eq!(required_runs(0.01, 0.05, SampleSizeMode::Squared), 147_556);
        assert_eq!(required_runs(0.01, 2.0, SampleSizeMode::Literal), 0);
    }

    fn flock() -> FlockState {
        FlockState::new(vec![
            BirdState::new(Vec2::new(0.0, 0.0), Vec2::new(0.5, 0.5)),
            BirdState::new(Vec2::new(1.0, 2.0), Vec2::new(0.3, 0.6)),
        ])
    }

    #[test]
    fn zero_magnitude_is_a_no_op() {
        let s = flock();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, _) = apply_disturbance(&s, &DisturbanceSpec::displacement(0.0), &mut rng).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn displacement_moves_one_bird() {
        let s = flock();
        let out = displace(&s, 0, Vec2::new(1.0, 0.0)).unwrap();
        assert_eq!(out.birds[0].position, Vec2::new(1.0, 0.0));
        assert_eq!(out.birds[0].velocity, s.birds[0].velocity);
        assert_eq!(out.birds[1], s.birds[1]);
    }

    #[test]
    fn random_displacement_has_requested_length() {
        let s = flock();
        let spec = DisturbanceSpec {
            target: TargetRule::Bird(1),
            ..DisturbanceSpec::displacement(1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (out, bird) = apply_disturbance(&s, &spec, &mut rng).unwrap();
        assert_eq!(bird, 1);
        let moved = out.birds[1].position - s.birds[1].position;
        assert!((moved.norm() - 1.0).abs() < 1e-12);
        assert_eq!(out.birds[0], s.birds[0]);
    }

    #[test]
    fn crash_stops_the_bird() {
        let s = flock();
        let spec = DisturbanceSpec {
            kind: DisturbanceKind::Crash,
            target: TargetRule::Bird(0),
            ..DisturbanceSpec::displacement(1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = apply_disturbance(&s, &spec, &mut rng).unwrap();
        assert_eq!(out.birds[0].velocity, Vec2::ZERO);
        let limits = ActionLimits::default();
        let a = crate::dynamics::clamp_action(out.birds[0].velocity, Vec2::new(1.0, 1.0), &limits);
        assert_eq!(a, Vec2::ZERO);
    }

    #[test]
    fn config_rejects_unknown_keys_and_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"birds": 7}"#).unwrap();
        assert_eq!(cfg.birds, 7);
        assert_eq!(cfg.m, 60);
        assert_eq!(cfg.policy(), NeighborhoodPolicy { k_min: 3, k_max: 7 });
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bird": 7}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.run_count(), 1476);
        cfg.delta = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            k_min: Some(6),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn records(outcomes: &[(bool, &[usize])]) -> Vec<RunRecord> {
        use crate::cost::CostBreakdown;
        use crate::run::{LevelLedger, TraceStep};
        outcomes
            .iter()
            .enumerate()
            .map(|(i, (ok, ks))| {
                let s = flock();
                let cost = CostBreakdown {
                    cv: 0.0,
                    vm: 0.0,
                    ub: 0.0,
                    total: 1.0,
                };
                let mut trace = vec![TraceStep::initial(s.clone(), cost, 5)];
                for (t, &k) in ks.iter().enumerate() {
                    let mut row = TraceStep::initial(s.clone(), cost, k);
                    row.t = t + 1;
                    row.k_next = 3;
                    row.horizons = vec![1, 2];
                    trace.push(row);
                }
                let n = ks.len();
                RunResult {
                    controller: Controller::Dampc,
                    seed: i as u64,
                    s0: s,
                    actions: vec![vec![Vec2::ZERO; 2]; n],
                    trace,
                    ledger: LevelLedger::new(1.0),
                    success: *ok,
                    convergence_step: ok.then_some(n.min(2)),
                    wall_seconds: 1.0,
                }
            })
            .map(|run| RunRecord {
                seed: run.seed,
                z: run.success,
                run,
                recovery: None,
            })
            .collect()
    }

    #[test]
    fn statistics_partition_runs() {
        let recs = records(&[(true, &[5, 4, 3, 3]), (false, &[5, 5]), (true, &[4, 4])]);
        let st = RunStatistics::from_records(Controller::Dampc, 5, 4, &recs);
        assert_eq!(st.runs, 3);
        assert_eq!(st.successes, 2);
        assert!((st.success_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(st.avg_convergence_steps, Some(2.0));
        assert_eq!(st.avg_horizon, Some(1.5));
        // Until convergence: (5+4)/2 and (4+4)/2.
        assert_eq!(st.k_until_convergence, Some((4.5 + 4.0) / 2.0));
        // Over m = 4: (5+4+3+3)/4 and (4+4+3+3)/4.
        assert_eq!(st.k_over_m, Some((3.75 + 3.5) / 2.0));
        // After convergence only the first run has rows: (3+3)/2.
        assert_eq!(st.k_after_convergence, Some(3.0));
        assert_eq!(st.k_bad_runs, Some(5.0));
        assert_eq!(st.total_wall_seconds, 3.0);
    }

    #[test]
    fn single_run_aggregate_is_that_run() {
        let recs = records(&[(true, &[5, 4])]);
        let st = RunStatistics::from_records(Controller::Dampc, 5, 60, &recs);
        assert_eq!(st.success_rate, 1.0);
        assert_eq!(st.avg_convergence_steps, Some(2.0));
        assert_eq!(st.k_until_convergence, recs[0].k_until_convergence());
        assert_eq!(st.k_bad_runs, None);
    }
}
