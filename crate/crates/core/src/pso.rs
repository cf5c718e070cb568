//! Global-best particle swarm over horizon-`h` acceleration plans.
//!
//! A plan may carry a fixed prefix per bird (accelerations already agreed
//! on in an earlier consensus round). Only the entries after each prefix are
//! decision variables; fixed entries are replayed verbatim.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::StateCost;
use crate::dynamics::{advance_bird, clamp_action, step, ActionLimits, BirdState, FlockState};
use crate::error::{Error, Result};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanEntry {
    Fixed(Vec2),
    /// Not fixed yet.
    Nfy,
}

/// One acceleration sequence per bird. Within a sequence all fixed entries
/// precede all `Nfy` entries; sequence lengths may differ between birds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccelerationPlan {
    pub sequences: Vec<Vec<PlanEntry>>,
}

impl AccelerationPlan {
    /// Every bird marked not-fixed-yet.
    pub fn unfixed(birds: usize) -> Self {
        Self {
            sequences: vec![vec![PlanEntry::Nfy]; birds],
        }
    }

    pub fn from_concrete(sequences: Vec<Vec<Vec2>>) -> Self {
        Self {
            sequences: sequences
                .into_iter()
                .map(|s| s.into_iter().map(PlanEntry::Fixed).collect())
                .collect(),
        }
    }

    pub fn birds(&self) -> usize {
        self.sequences.len()
    }

    pub fn fixed_prefix_len(&self, bird: usize) -> usize {
        self.sequences[bird]
            .iter()
            .take_while(|e| matches!(e, PlanEntry::Fixed(_)))
            .count()
    }

    pub fn longest_prefix(&self) -> usize {
        (0..self.birds()).map(|b| self.fixed_prefix_len(b)).max().unwrap_or(0)
    }

    pub fn is_fully_fixed(&self, bird: usize) -> bool {
        let seq = &self.sequences[bird];
        !seq.is_empty() && seq.iter().all(|e| matches!(e, PlanEntry::Fixed(_)))
    }

    pub fn validate(&self) -> Result<()> {
        for (b, seq) in self.sequences.iter().enumerate() {
            let prefix = self.fixed_prefix_len(b);
            if seq[prefix..].iter().any(|e| matches!(e, PlanEntry::Fixed(_))) {
                return Err(Error::MalformedPlan(b));
            }
        }
        Ok(())
    }

    /// The fixed accelerations of one bird.
    pub fn fixed(&self, bird: usize) -> Vec<Vec2> {
        self.sequences[bird]
            .iter()
            .map_while(|e| match e {
                PlanEntry::Fixed(a) => Some(*a),
                PlanEntry::Nfy => None,
            })
            .collect()
    }

    /// The common length if every bird has exactly `h` fixed entries.
    pub fn concrete_horizon(&self) -> Option<usize> {
        let h = self.sequences.first()?.len();
        (0..self.birds())
            .all(|b| self.sequences[b].len() == h && self.is_fully_fixed(b))
            .then_some(h)
    }

    /// Accelerations of every bird at step `tau`, if all are fixed there.
    pub fn actions_at(&self, tau: usize) -> Option<Vec<Vec2>> {
        self.sequences
            .iter()
            .map(|s| match s.get(tau) {
                Some(PlanEntry::Fixed(a)) => Some(*a),
                _ => None,
            })
            .collect()
    }
}

/// Swarm dynamics constants, independent of problem size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmTuning {
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for SwarmTuning {
    fn default() -> Self {
        Self {
            iterations: 40,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl SwarmConfig {
    pub fn new(tuning: &SwarmTuning, particles: usize, seed: u64) -> Self {
        Self {
            particles,
            iterations: tuning.iterations,
            inertia: tuning.inertia,
            cognitive: tuning.cognitive,
            social: tuning.social,
            seed,
        }
    }
}

/// `p = 2 * beta * h * birds`, at least two.
pub fn particle_count(beta: f64, horizon: usize, birds: usize) -> usize {
    ((2.0 * beta * (horizon * birds) as f64).ceil() as usize).max(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    /// Fully fixed, `horizon` entries per bird, already feasible.
    pub best_plan: AccelerationPlan,
    pub state_after_first: FlockState,
    pub state_after_last: FlockState,
    pub achieved_cost: f64,
}

/// Lowest cost among the `h` states visited while executing `plan`.
pub fn horizon_cost<C: StateCost + ?Sized>(
    state: &FlockState,
    plan: &AccelerationPlan,
    cost: &C,
) -> Result<f64> {
    if plan.birds() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            got: plan.birds(),
        });
    }
    let h = plan.concrete_horizon().ok_or(Error::IncompletePlan)?;
    if h == 0 {
        return Err(Error::ZeroHorizon);
    }
    let mut s = state.clone();
    let mut best = f64::INFINITY;
    for tau in 0..h {
        s = step(&s, &plan.actions_at(tau).ok_or(Error::IncompletePlan)?)?;
        let c = cost.cost(&s.birds);
        if c < best {
            best = c;
        }
    }
    Ok(best)
}

/// Rolls plans forward from a fixed start, mapping decision vectors to
/// feasible accelerations.
struct Rollout<'a, C: ?Sized> {
    start: &'a [BirdState],
    horizon: usize,
    /// `slots[b][tau]` is either a frozen acceleration or an index into the
    /// decision vector.
    slots: Vec<Vec<Slot>>,
    limits: &'a ActionLimits,
    cost: &'a C,
}

#[derive(Clone, Copy)]
enum Slot {
    Frozen(Vec2),
    Free(usize),
}

impl<C: StateCost + ?Sized> Rollout<'_, C> {
    fn run(&self, x: &[f64], scratch: &mut Vec<BirdState>, mut record: Option<&mut Vec<Vec<Vec2>>>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(self.start);
        let mut best = f64::INFINITY;
        for tau in 0..self.horizon {
            for (b, bird) in scratch.iter_mut().enumerate() {
                let accel = match self.slots[b][tau] {
                    Slot::Frozen(a) => a,
                    Slot::Free(k) => {
                        clamp_action(bird.velocity, Vec2::new(x[2 * k], x[2 * k + 1]), self.limits)
                    }
                };
                if let Some(rec) = record.as_deref_mut() {
                    rec[b].push(accel);
                }
                *bird = advance_bird(*bird, accel);
            }
            let c = self.cost.cost(scratch);
            if c < best {
                best = c;
            }
        }
        best
    }
}

/// Extends `constraint` to a full `horizon`-step plan minimising
/// [`horizon_cost`]. Deterministic in `cfg.seed`.
pub fn optimize<C: StateCost + ?Sized>(
    state: &FlockState,
    constraint: &AccelerationPlan,
    horizon: usize,
    cfg: &SwarmConfig,
    limits: &ActionLimits,
    cost: &C,
) -> Result<OptimizeResult> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    if cfg.particles < 2 || cfg.iterations == 0 {
        return Err(Error::EmptySwarm);
    }
    if constraint.birds() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            got: constraint.birds(),
        });
    }
    if state.is_empty() {
        return Err(Error::EmptySubflock);
    }
    constraint.validate()?;

    let mut free = 0usize;
    let mut slots = Vec::with_capacity(state.len());
    for b in 0..state.len() {
        let fixed = constraint.fixed(b);
        if fixed.len() > horizon {
            return Err(Error::PrefixTooLong {
                prefix: fixed.len(),
                horizon,
            });
        }
        let row: Vec<Slot> = (0..horizon)
            .map(|tau| match fixed.get(tau) {
                Some(&a) => Slot::Frozen(a),
                None => {
                    free += 1;
                    Slot::Free(free - 1)
                }
            })
            .collect();
        slots.push(row);
    }
    let rollout = Rollout {
        start: &state.birds,
        horizon,
        slots,
        limits,
        cost,
    };
    let dim = 2 * free;
    let mut scratch = Vec::with_capacity(state.len());

    let best_x = if dim == 0 {
        Vec::new()
    } else {
        run_swarm(&rollout, dim, cfg, limits.acceleration_bound(), &mut scratch)
    };

    let mut plan = vec![Vec::with_capacity(horizon); state.len()];
    let achieved_cost = rollout.run(&best_x, &mut scratch, Some(&mut plan));
    let best_plan = AccelerationPlan::from_concrete(plan);
    let state_after_first = step(state, &best_plan.actions_at(0).expect("concrete plan"))?;
    let mut state_after_last = state_after_first.clone();
    for tau in 1..horizon {
        state_after_last = step(&state_after_last, &best_plan.actions_at(tau).expect("concrete plan"))?;
    }
    Ok(OptimizeResult {
        best_plan,
        state_after_first,
        state_after_last,
        achieved_cost,
    })
}

fn run_swarm<C: StateCost + ?Sized>(
    rollout: &Rollout<'_, C>,
    dim: usize,
    cfg: &SwarmConfig,
    bound: f64,
    scratch: &mut Vec<BirdState>,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.particles;
    let vclamp = bound;

    // Particle 0 is the all-zero completion.
    let mut pos = vec![0.0; n * dim];
    for x in &mut pos[dim..] {
        *x = rng.gen_range(-bound..=bound);
    }
    let mut vel: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-vclamp..=vclamp)).collect();
    let mut pbest = pos.clone();
    let mut pbest_cost: Vec<f64> = (0..n)
        .map(|i| nan_to_inf(rollout.run(&pos[i * dim..(i + 1) * dim], scratch, None)))
        .collect();
    let mut g = argmin(&pbest_cost);
    let mut gbest = pbest[g * dim..(g + 1) * dim].to_vec();

    for _ in 0..cfg.iterations {
        for i in 0..n {
            let range = i * dim..(i + 1) * dim;
            let (x, v, pb) = (&mut pos[range.clone()], &mut vel[range.clone()], &pbest[range]);
            for d in 0..dim {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let nv = cfg.inertia * v[d]
                    + cfg.cognitive * r1 * (pb[d] - x[d])
                    + cfg.social * r2 * (gbest[d] - x[d]);
                v[d] = nv.clamp(-vclamp, vclamp);
                x[d] = (x[d] + v[d]).clamp(-bound, bound);
            }
        }
        for i in 0..n {
            let range = i * dim..(i + 1) * dim;
            let c = nan_to_inf(rollout.run(&pos[range.clone()], scratch, None));
            if c < pbest_cost[i] {
                pbest_cost[i] = c;
                pbest[range.clone()].copy_from_slice(&pos[range]);
            }
        }
        let best = argmin(&pbest_cost);
        if pbest_cost[best] < pbest_cost[g] || best == g {
            g = best;
            gbest.copy_from_slice(&pbest[g * dim..(g + 1) * dim]);
        }
    }
    gbest
}

fn nan_to_inf(c: f64) -> f64 {
    if c.is_nan() {
        f64::INFINITY
    } else {
        c
    }
}

/// Index of the smallest value; the lowest index wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;

    fn bird(x: f64, y: f64, vx: f64, vy: f64) -> BirdState {
        BirdState::new(Vec2::new(x, y), Vec2::new(vx, vy))
    }

    fn two_birds() -> FlockState {
        FlockState::new(vec![bird(0.0, 0.0, 0.5, 0.5), bird(1.0, 0.5, 0.4, 0.6)])
    }

    #[test]
    fn particle_count_formula() {
        assert_eq!(particle_count(100.0, 1, 5), 1000);
        assert_eq!(particle_count(100.0, 3, 5), 3000);
        assert_eq!(particle_count(0.1, 1, 1), 2);
    }

    #[test]
    fn plan_prefix_bookkeeping() {
        let a = Vec2::new(0.1, 0.0);
        let plan = AccelerationPlan {
            sequences: vec![
                vec![PlanEntry::Fixed(a), PlanEntry::Fixed(a)],
                vec![PlanEntry::Nfy],
                vec![PlanEntry::Fixed(a), PlanEntry::Nfy],
            ],
        };
        plan.validate().unwrap();
        assert_eq!(plan.fixed_prefix_len(0), 2);
        assert_eq!(plan.fixed_prefix_len(1), 0);
        assert_eq!(plan.longest_prefix(), 2);
        assert!(plan.is_fully_fixed(0));
        assert!(!plan.is_fully_fixed(2));
        assert_eq!(plan.concrete_horizon(), None);

        let bad = AccelerationPlan {
            sequences: vec![vec![PlanEntry::Nfy, PlanEntry::Fixed(a)]],
        };
        assert_eq!(bad.validate(), Err(Error::MalformedPlan(0)));
    }

    #[test]
    fn horizon_one_is_cost_after_first_step() {
        let s = two_birds();
        let m = CostModel::default();
        let a = vec![vec![Vec2::new(0.1, 0.0)], vec![Vec2::new(0.0, -0.1)]];
        let plan = AccelerationPlan::from_concrete(a.clone());
        let next = step(&s, &[a[0][0], a[1][0]]).unwrap();
        assert_eq!(horizon_cost(&s, &plan, &m).unwrap(), m.total(&next.birds));
    }

    #[test]
    fn horizon_cost_takes_minimum() {
        // cost is the x-position of bird 0: it rises then falls
        let s = FlockState::new(vec![bird(0.0, 0.0, 1.0, 0.0)]);
        let cost = |b: &[BirdState]| b[0].position.x.abs() + 0.05;
        let plan = AccelerationPlan::from_concrete(vec![vec![Vec2::new(-0.9, 0.0), Vec2::new(-0.09, 0.0)]]);
        // x: 1.0 after step 1, 1.1 after step 2
        assert!((horizon_cost(&s, &plan, &cost).unwrap() - 1.05).abs() < 1e-12);
        let plan = AccelerationPlan::from_concrete(vec![vec![Vec2::new(-2.0, 0.0), Vec2::ZERO]]);
        // x: 1.0, then 0.0
        assert!((horizon_cost(&s, &plan, &cost).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn fully_fixed_constraint_is_returned_verbatim() {
        let s = two_birds();
        let m = CostModel::default();
        let plan = AccelerationPlan::from_concrete(vec![
            vec![Vec2::new(0.1, 0.0), Vec2::new(0.0, 0.1)],
            vec![Vec2::new(-0.1, 0.05), Vec2::ZERO],
        ]);
        let cfg = SwarmConfig::new(&SwarmTuning::default(), 10, 3);
        let r = optimize(&s, &plan, 2, &cfg, &ActionLimits::default(), &m).unwrap();
        assert_eq!(r.best_plan, plan);
        assert_eq!(r.achieved_cost, horizon_cost(&s, &plan, &m).unwrap());
    }

    #[test]
    fn frozen_prefix_is_untouched_and_result_consistent() {
        let s = two_birds();
        let m = CostModel::default();
        let frozen = Vec2::new(0.123456789, -0.0987654321);
        let constraint = AccelerationPlan {
            sequences: vec![vec![PlanEntry::Fixed(frozen)], vec![PlanEntry::Nfy]],
        };
        let cfg = SwarmConfig::new(&SwarmTuning::default(), 30, 11);
        let lim = ActionLimits::default();
        let r = optimize(&s, &constraint, 3, &cfg, &lim, &m).unwrap();
        assert_eq!(r.best_plan.sequences[0][0], PlanEntry::Fixed(frozen));
        assert_eq!(r.best_plan.concrete_horizon(), Some(3));
        assert_eq!(r.achieved_cost, horizon_cost(&s, &r.best_plan, &m).unwrap());
        let first = step(&s, &r.best_plan.actions_at(0).unwrap()).unwrap();
        assert_eq!(r.state_after_first, first);

        let again = optimize(&s, &constraint, 3, &cfg, &lim, &m).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn never_worse_than_zero_completion() {
        let s = two_birds();
        let m = CostModel::default();
        let lim = ActionLimits::default();
        let zero = AccelerationPlan::from_concrete(vec![vec![Vec2::ZERO; 2]; 2]);
        let zero_cost = horizon_cost(&s, &zero, &m).unwrap();
        for seed in 0..5 {
            let cfg = SwarmConfig::new(&SwarmTuning { iterations: 1, ..Default::default() }, 2, seed);
            let r = optimize(&s, &AccelerationPlan::unfixed(2), 2, &cfg, &lim, &m).unwrap();
            assert!(r.achieved_cost <= zero_cost);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = two_birds();
        let m = CostModel::default();
        let lim = ActionLimits::default();
        let cfg = SwarmConfig::new(&SwarmTuning::default(), 10, 0);
        let c = AccelerationPlan::unfixed(2);
        assert_eq!(optimize(&s, &c, 0, &cfg, &lim, &m), Err(Error::ZeroHorizon));
        let tiny = SwarmConfig { particles: 1, ..cfg };
        assert_eq!(optimize(&s, &c, 1, &tiny, &lim, &m), Err(Error::EmptySwarm));
        let long = AccelerationPlan::from_concrete(vec![vec![Vec2::ZERO; 3]; 2]);
        assert!(matches!(
            optimize(&s, &long, 2, &cfg, &lim, &m),
            Err(Error::PrefixTooLong { .. })
        ));
    }
}
