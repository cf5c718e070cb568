//! Types shared by both controllers: parameters, the level ledger, per-step
//! trace rows and the outer receding-horizon loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{CostBreakdown, CostModel};
use crate::dynamics::{ActionLimits, FlockState};
use crate::error::{Error, Result};
use crate::pso::SwarmTuning;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Dampc,
    Ampc,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Dampc => "DAMPC",
            Controller::Ampc => "AMPC",
        }
    }
}

impl std::str::FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dampc" => Ok(Controller::Dampc),
            "ampc" => Ok(Controller::Ampc),
            other => Err(Error::InvalidConfig(format!("unknown controller {other:?}"))),
        }
    }
}

/// Everything a controller needs besides the state and a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlParams {
    /// Goal threshold: a state is a V-formation when `J <= phi`.
    pub phi: f64,
    pub h_max: usize,
    /// Step budget.
    pub m: usize,
    /// Particle scaling: `p = 2 * beta * h * birds`.
    pub beta: f64,
    pub limits: ActionLimits,
    pub model: CostModel,
    pub swarm: SwarmTuning,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            phi: 0.1,
            h_max: 3,
            m: 60,
            beta: 100.0,
            limits: ActionLimits::default(),
            model: CostModel::default(),
            swarm: SwarmTuning::default(),
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0) {
            return Err(Error::InvalidConfig(format!("phi must be > 0, got {}", self.phi)));
        }
        if self.h_max == 0 {
            return Err(Error::ZeroHorizon);
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.swarm.iterations == 0 {
            return Err(Error::EmptySwarm);
        }
        self.limits.validate()
    }
}

/// The decreasing sequence of look-ahead costs `l_0 > l_1 > ...` together
/// with the threshold that was in force at each advance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelLedger {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
}

impl LevelLedger {
    pub fn new(initial: f64) -> Self {
        Self {
            levels: vec![initial],
            thresholds: Vec::new(),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Index of the current level (number of advances so far).
    pub fn index(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn current(&self) -> f64 {
        *self.levels.last().expect("ledger is never empty")
    }

    /// Threshold to reach the next level: `l_{i-1} / (m - i + 1)` where `i`
    /// is the level being sought, capped at `i = m`.
    pub fn next_threshold(&self, m: usize) -> f64 {
        let i = (self.index() + 1).min(m.max(1));
        crate::ampc::dynamic_threshold(self.current(), i, m.max(1)).expect("index clamped to range")
    }

    /// Records `candidate` as the next level if it undercuts the current one
    /// by more than `delta`.
    pub fn try_advance(&mut self, candidate: f64, delta: f64) -> bool {
        if self.current() - candidate > delta {
            self.levels.push(candidate);
            self.thresholds.push(delta);
            true
        } else {
            false
        }
    }

    /// Strictly decreasing with every gap larger than its threshold.
    pub fn is_consistent(&self) -> bool {
        self.levels
            .windows(2)
            .zip(&self.thresholds)
            .all(|(w, &d)| w[0] > w[1] && w[0] - w[1] > d)
            && self.thresholds.len() + 1 == self.levels.len()
    }
}

/// One row of a run trace: the state at time `t` and how it was reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub state: FlockState,
    pub cost: CostBreakdown,
    /// Ledger index and value after this step.
    pub level_index: usize,
    pub level: f64,
    /// Neighborhood size used to compute the step that produced this state.
    pub k: usize,
    /// Neighborhood size chosen for the next step.
    pub k_next: usize,
    /// Per-bird length of the fixed acceleration sequence.
    pub horizons: Vec<usize>,
    pub rounds: usize,
    /// Number of unfixed birds at the start of each consensus round.
    pub unfixed_per_round: Vec<usize>,
    pub level_advanced: bool,
    /// Cost of the look-ahead state compared against the level.
    pub lookahead_cost: Option<f64>,
    /// Threshold in force for the level test.
    pub threshold: Option<f64>,
}

impl TraceStep {
    pub fn initial(state: FlockState, cost: CostBreakdown, k: usize) -> Self {
        Self {
            t: 0,
            state,
            level_index: 0,
            level: cost.total,
            cost,
            k,
            k_next: k,
            horizons: Vec::new(),
            rounds: 0,
            unfixed_per_round: Vec::new(),
            level_advanced: false,
            lookahead_cost: None,
            threshold: None,
        }
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_horizon(&self) -> Option<f64> {
        (!self.horizons.is_empty())
            .then(|| self.horizons.iter().sum::<usize>() as f64 / self.horizons.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub controller: Controller,
    pub seed: u64,
    pub s0: FlockState,
    /// Applied accelerations, one vector per executed step.
    pub actions: Vec<Vec<Vec2>>,
    /// Row 0 is the initial state; row `t` follows the `t`-th action.
    pub trace: Vec<TraceStep>,
    pub ledger: LevelLedger,
    pub success: bool,
    /// First step at which `J <= phi`.
    pub convergence_step: Option<usize>,
    pub wall_seconds: f64,
}

impl RunResult {
    pub fn final_cost(&self) -> f64 {
        self.trace.last().map(|r| r.cost.total).unwrap_or(f64::NAN)
    }

    /// Executed steps up to and including convergence (all steps otherwise).
    pub fn steps_until_convergence(&self) -> &[TraceStep] {
        let end = self.convergence_step.unwrap_or(self.trace.len() - 1);
        &self.trace[1..=end]
    }

    /// Steps executed after convergence.
    pub fn steps_after_convergence(&self) -> &[TraceStep] {
        match self.convergence_step {
            Some(c) => &self.trace[c + 1..],
            None => &[],
        }
    }
}

/// A controller that advances a flock one step at a time.
pub trait Engine {
    fn controller(&self) -> Controller;
    fn state(&self) -> &FlockState;
    fn state_mut(&mut self) -> &mut FlockState;
    fn ledger(&self) -> &LevelLedger;
    fn initial_row(&self) -> TraceStep;
    /// Computes and applies one control action; returns the new trace row and
    /// the accelerations applied.
    fn advance(&mut self) -> Result<(TraceStep, Vec<Vec2>)>;
}

/// Runs `engine` until `J <= phi` or `m` steps have been executed, then
/// optionally keeps controlling for `extra_after_goal` more steps.
/// `disturb` is called with the upcoming step number before every step.
pub fn drive<E: Engine>(
    engine: &mut E,
    params: &ControlParams,
    seed: u64,
    extra_after_goal: usize,
    disturb: &mut dyn FnMut(usize, &mut FlockState),
) -> Result<RunResult> {
    let started = Instant::now();
    let s0 = engine.state().clone();
    let first = engine.initial_row();
    let mut convergence_step = (first.cost.total <= params.phi).then_some(0);
    let mut trace = vec![first];
    let mut actions = Vec::new();
    let mut remaining_extra = extra_after_goal;

    let mut step = 0usize;
    loop {
        match convergence_step {
            Some(_) if remaining_extra == 0 => break,
            Some(_) => remaining_extra -= 1,
            None if step >= params.m => break,
            None => {}
        }
        step += 1;
        disturb(step, engine.state_mut());
        let (row, applied) = engine.advance()?;
        if convergence_step.is_none() && row.cost.total <= params.phi {
            convergence_step = Some(step);
        }
        trace.push(row);
        actions.push(applied);
    }

    Ok(RunResult {
        controller: engine.controller(),
        seed,
        s0,
        actions,
        trace,
        ledger: engine.ledger().clone(),
        success: convergence_step.is_some(),
        convergence_step,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_only_accepts_large_enough_drops() {
        let mut l = LevelLedger::new(6.0);
        assert!(!l.try_advance(5.95, 0.1));
        assert!(l.try_advance(5.0, 0.1));
        assert!(!l.try_advance(4.9, 0.1));
        assert_eq!(l.levels(), &[6.0, 5.0]);
        assert_eq!(l.index(), 1);
        assert!(l.is_consistent());
    }

    #[test]
    fn ledger_threshold_schedule() {
        let l = LevelLedger::new(6.0);
        assert!((l.next_threshold(60) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn controller_names_parse() {
        assert_eq!("DAMPC".parse::<Controller>().unwrap(), Controller::Dampc);
        assert_eq!("ampc".parse::<Controller>().unwrap(), Controller::Ampc);
        assert!("mpc".parse::<Controller>().is_err());
    }
}
