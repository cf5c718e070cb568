//! The distributed controller. Every time step runs consensus rounds: each
//! bird without a fixed plan solves [`local_ampc`] for its `k` nearest
//! neighbors, the bird with the cheapest proposal wins, and the winner's
//! plan is fixed for its whole neighborhood. Once all birds are fixed the
//! first actions are applied, the level ledger is updated from the
//! look-ahead state, and `k` is resized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ampc::{local_ampc, LocalResult};
use crate::dynamics::{neighbors, step, FlockState};
use crate::error::{Error, Result};
use crate::pso::{AccelerationPlan, PlanEntry};
use crate::run::{drive, ControlParams, Controller, Engine, LevelLedger, RunResult, TraceStep};
use crate::seed::derive_seed;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborhoodPolicy {
    pub k_min: usize,
    pub k_max: usize,
}

impl NeighborhoodPolicy {
    /// `[min(3, birds), birds]`.
    pub fn for_flock(birds: usize) -> Self {
        Self {
            k_min: birds.min(3),
            k_max: birds,
        }
    }

    pub fn validate(&self, birds: usize) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max || self.k_max > birds {
            return Err(Error::InvalidConfig(format!(
                "neighborhood bounds must satisfy 1 <= k_min <= k_max <= {birds}, got [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }
}

/// Shrinks the neighborhood after a level advance, grows it otherwise.
pub fn neigh_size(cost: f64, k: usize, level_incremented: bool, policy: &NeighborhoodPolicy) -> usize {
    if level_incremented {
        let shrink = (1.0 - cost / k as f64).ceil();
        let next = (k as f64 - shrink).max(policy.k_min as f64) as usize;
        next.min(policy.k_max)
    } else {
        (k + 1).min(policy.k_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusOutcome {
    /// Every bird fully fixed.
    pub plan: AccelerationPlan,
    /// Winning bird of each round.
    pub winners: Vec<usize>,
    /// The winning proposal of each round.
    pub winning_results: Vec<LocalResult>,
    /// `|R|` at the start of each round.
    pub unfixed_per_round: Vec<usize>,
}

impl ConsensusOutcome {
    pub fn rounds(&self) -> usize {
        self.winners.len()
    }
}

/// Runs consensus rounds on `plan` until every bird's sequence is fixed.
/// `level` is the level counter (starting at 1) used for the local
/// decrement `J(s_N) / (m - level)`.
pub fn consensus_step(
    state: &FlockState,
    mut plan: AccelerationPlan,
    k: usize,
    level: usize,
    params: &ControlParams,
    seed: u64,
) -> Result<ConsensusOutcome> {
    let birds = state.len();
    if plan.birds() != birds {
        return Err(Error::DimensionMismatch {
            expected: birds,
            got: plan.birds(),
        });
    }
    if k == 0 || k > birds {
        return Err(Error::NeighborhoodOutOfRange { k, birds });
    }
    plan.validate()?;
    let denom = params.m.saturating_sub(level).max(1) as f64;

    let mut winners = Vec::new();
    let mut winning_results = Vec::new();
    let mut unfixed_per_round = Vec::new();
    loop {
        let unfixed: Vec<usize> = (0..birds).filter(|&b| !plan.is_fully_fixed(b)).collect();
        if unfixed.is_empty() {
            break;
        }
        unfixed_per_round.push(unfixed.len());
        let round = winners.len() as u64;

        let proposals: Vec<(Vec<usize>, LocalResult)> = unfixed
            .par_iter()
            .map(|&i| -> Result<_> {
                let hood = neighbors(state, i, k)?;
                let sub = state.subflock(&hood);
                let constraint = AccelerationPlan {
                    sequences: hood.iter().map(|&b| plan.sequences[b].clone()).collect(),
                };
                let delta = (params.model.total(&sub.birds) / denom).max(f64::MIN_POSITIVE);
                let r = local_ampc(&sub, &constraint, delta, params, derive_seed(seed, &[round, i as u64]))?;
                Ok((hood, r))
            })
            .collect::<Result<_>>()?;

        let mut best = 0;
        for (idx, (_, r)) in proposals.iter().enumerate().skip(1) {
            if r.cost_hat < proposals[best].1.cost_hat {
                best = idx;
            }
        }
        let (hood, result) = proposals.into_iter().nth(best).expect("non-empty");
        for (pos, &b) in hood.iter().enumerate() {
            if !plan.is_fully_fixed(b) {
                plan.sequences[b] = result.plan.sequences[pos].clone();
            }
        }
        winners.push(unfixed[best]);
        winning_results.push(result);
    }

    Ok(ConsensusOutcome {
        plan,
        winners,
        winning_results,
        unfixed_per_round,
    })
}

/// First action of every bird and the look-ahead state: every fixed sequence
/// executed to the longest fixed horizon, shorter ones padded with zero
/// accelerations.
pub fn compose_states(state: &FlockState, plan: &AccelerationPlan) -> Result<(Vec<Vec2>, FlockState, FlockState)> {
    let first = plan.actions_at(0).ok_or(Error::IncompletePlan)?;
    let horizon = (0..plan.birds()).map(|b| plan.fixed(b).len()).max().unwrap_or(0);
    let s_tilde = step(state, &first)?;
    let mut s_hat = s_tilde.clone();
    for tau in 1..horizon {
        let actions: Vec<Vec2> = plan
            .sequences
            .iter()
            .map(|seq| match seq.get(tau) {
                Some(PlanEntry::Fixed(a)) => *a,
                _ => Vec2::ZERO,
            })
            .collect();
        s_hat = step(&s_hat, &actions)?;
    }
    Ok((first, s_tilde, s_hat))
}

pub struct DampcEngine<'a> {
    params: &'a ControlParams,
    policy: NeighborhoodPolicy,
    state: FlockState,
    ledger: LevelLedger,
    k: usize,
    seed: u64,
    steps: usize,
}

impl<'a> DampcEngine<'a> {
    /// Starts with the full neighborhood `k = k_max`.
    pub fn new(s0: FlockState, params: &'a ControlParams, policy: NeighborhoodPolicy, seed: u64) -> Result<Self> {
        params.validate()?;
        if s0.is_empty() {
            return Err(Error::EmptySubflock);
        }
        policy.validate(s0.len())?;
        let l0 = params.model.total(&s0.birds);
        Ok(Self {
            params,
            policy,
            k: policy.k_max,
            state: s0,
            ledger: LevelLedger::new(l0),
            seed,
            steps: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Consensus for the current state without applying anything.
    pub fn consensus(&self) -> Result<ConsensusOutcome> {
        let step_seed = derive_seed(self.seed, &[self.steps as u64]);
        consensus_step(
            &self.state,
            AccelerationPlan::unfixed(self.state.len()),
            self.k,
            self.ledger.index() + 1,
            self.params,
            step_seed,
        )
    }
}

impl Engine for DampcEngine<'_> {
    fn controller(&self) -> Controller {
        Controller::Dampc
    }

    fn state(&self) -> &FlockState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut FlockState {
        &mut self.state
    }

    fn ledger(&self) -> &LevelLedger {
        &self.ledger
    }

    fn initial_row(&self) -> TraceStep {
        TraceStep::initial(self.state.clone(), self.params.model.breakdown(&self.state.birds), self.k)
    }

    fn advance(&mut self) -> Result<(TraceStep, Vec<Vec2>)> {
        let outcome = self.consensus()?;
        let (first, s_tilde, s_hat) = compose_states(&self.state, &outcome.plan)?;
        let lookahead = self.params.model.total(&s_hat.birds);
        let threshold = self.ledger.next_threshold(self.params.m);
        let advanced = self.ledger.try_advance(lookahead, threshold);
        let k_used = self.k;
        self.k = neigh_size(lookahead, self.k, advanced, &self.policy);
        self.state = s_tilde;
        self.steps += 1;

        let row = TraceStep {
            t: self.steps,
            state: self.state.clone(),
            cost: self.params.model.breakdown(&self.state.birds),
            level_index: self.ledger.index(),
            level: self.ledger.current(),
            k: k_used,
            k_next: self.k,
            horizons: (0..outcome.plan.birds()).map(|b| outcome.plan.fixed(b).len()).collect(),
            rounds: outcome.rounds(),
            unfixed_per_round: outcome.unfixed_per_round,
            level_advanced: advanced,
            lookahead_cost: Some(lookahead),
            threshold: Some(threshold),
        };
        Ok((row, first))
    }
}

/// Runs the distributed controller from `s0`, continuing for
/// `extra_after_goal` steps once the goal is reached.
pub fn dampc_run(
    s0: FlockState,
    params: &ControlParams,
    policy: NeighborhoodPolicy,
    seed: u64,
    extra_after_goal: usize,
) -> Result<RunResult> {
    let mut engine = DampcEngine::new(s0, params, policy, seed)?;
    drive(&mut engine, params, seed, extra_after_goal, &mut |_, _| {})
}
