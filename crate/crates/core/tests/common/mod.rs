//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use dampc::cost::{clear_view_of, WingConfig};
use dampc::dynamics::{clamp_action, step, ActionLimits};
use dampc::interval::AngularInterval;
use dampc::pso::{optimize, AccelerationPlan, SwarmConfig, SwarmTuning};
use dampc::{BirdState, CostModel, FlockState, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of bird `i`'s view cone blocked, by casting `rays` evenly spaced
/// rays and testing each against every wing segment ahead of it. Angles are
/// measured from the observer's right-hand side towards its heading.
pub fn ray_cast_clear_view(birds: &[BirdState], i: usize, cfg: &WingConfig, rays: usize) -> f64 {
    let me = birds[i];
    let speed = me.velocity.norm();
    if speed == 0.0 {
        return 0.0;
    }
    let fwd = Vec2::new(me.velocity.x / speed, me.velocity.y / speed);
    let right = Vec2::new(fwd.y, -fwd.x);
    let segments: Vec<(f64, f64)> = birds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, b)| {
            let d = b.position - me.position;
            (d.dot(right), d.dot(fwd))
        })
        .filter(|&(_, ahead)| ahead > 0.0)
        .collect();
    let lo = (std::f64::consts::PI - cfg.theta) / 2.0;
    let mut hit = 0usize;
    for r in 0..rays {
        let a = lo + cfg.theta * (r as f64 + 0.5) / rays as f64;
        let (c, s) = (a.cos(), a.sin());
        let blocked = segments.iter().any(|&(x, y)| {
            // Ray reaches the line `ahead = y` at lateral offset `y * c / s`.
            let at = y * c / s;
            at >= x - cfg.w && at <= x + cfg.w
        });
        if blocked {
            hit += 1;
        }
    }
    hit as f64 / rays as f64
}

/// Birds with positions in `[0, 3]^2` and headings either clustered (as
/// in the initial box) or arbitrary.
pub fn random_flock(rng: &mut impl Rng, birds: usize, any_heading: bool) -> Vec<BirdState> {
    (0..birds)
        .map(|_| {
            let p = Vec2::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
            let v = if any_heading {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let s: f64 = rng.gen_range(0.2..1.0);
                Vec2::new(s * a.cos(), s * a.sin())
            } else {
                Vec2::new(rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75))
            };
            BirdState::new(p, v)
        })
        .collect()
}

/// Worst per-bird disagreement between the analytic clear view and the
/// ray-casting oracle over `configs` random flocks of 3 to 5 birds.
pub fn clear_view_max_error(configs: usize, rays: usize, seed: u64) -> f64 {
    let cfg = WingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let n = rng.gen_range(3..=5);
        let birds = random_flock(&mut rng, n, c % 2 == 1);
        for i in 0..n {
            let analytic = clear_view_of(&birds, i, &cfg);
            let oracle = ray_cast_clear_view(&birds, i, &cfg, rays);
            worst = worst.max((analytic - oracle).abs());
        }
    }
    worst
}

/// Measure of a union of intervals in `[0, 1]` by counting grid cells whose
/// centers are covered.
pub fn grid_union(intervals: &[AngularInterval], cells: usize) -> f64 {
    let covered = (0..cells)
        .filter(|&c| {
            let x = (c as f64 + 0.5) / cells as f64;
            intervals.iter().any(|iv| iv.lo <= x && x <= iv.hi)
        })
        .count();
    covered as f64 / cells as f64
}

/// Two birds flying side by side and a smooth bowl over their next
/// velocities, minimized at feasible targets.
pub struct QuadraticInstance {
    pub state: FlockState,
    pub targets: [Vec2; 2],
}

impl QuadraticInstance {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let v0 = Vec2::new(rng.gen_range(0.4..0.8), rng.gen_range(0.4..0.8));
        let v1 = Vec2::new(rng.gen_range(0.4..0.8), rng.gen_range(0.4..0.8));
        let state = FlockState::new(vec![
            BirdState::new(Vec2::new(0.0, 0.0), v0),
            BirdState::new(Vec2::new(2.0, 0.0), v1),
        ]);
        // Targets inside the reachable disc |a| <= 0.5 |v|, well clear of the
        // velocity cap.
        let mut target = |v: Vec2| {
            let r = 0.5 * v.norm() * rng.gen_range(0.0..1.0f64).sqrt();
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            v + Vec2::new(r * a.cos(), r * a.sin())
        };
        let targets = [target(v0), target(v1)];
        Self { state, targets }
    }

    pub fn cost(&self, birds: &[BirdState]) -> f64 {
        birds
            .iter()
            .zip(&self.targets)
            .map(|(b, t)| (b.velocity - *t).norm_sq())
            .sum()
    }

    /// Distance from the swarm's first action to the known optimum.
    pub fn solve_error(&self, swarm_seed: u64) -> f64 {
        let limits = ActionLimits::default();
        let cfg = SwarmConfig::new(&SwarmTuning::default(), 400, swarm_seed);
        let cost = |b: &[BirdState]| self.cost(b);
        let r = optimize(&self.state, &AccelerationPlan::unfixed(2), 1, &cfg, &limits, &cost).unwrap();
        let found = r.best_plan.actions_at(0).unwrap();
        found
            .iter()
            .zip(&self.state.birds)
            .zip(&self.targets)
            .map(|((a, b), t)| (*a - (*t - b.velocity)).norm())
            .fold(0.0, f64::max)
    }
}

/// Lowest flock cost after one step over a 5x5 grid of proposed
/// accelerations per bird (5^4 joint actions for two birds), each projected
/// onto the feasible set.
pub fn grid_best_one_step(state: &FlockState, model: &CostModel, limits: &ActionLimits) -> f64 {
    let bound = limits.rho * limits.v_max;
    let ticks: Vec<f64> = (0..5).map(|k| -bound + bound * k as f64 / 2.0).collect();
    let mut best = f64::INFINITY;
    for &ax in &ticks {
        for &ay in &ticks {
            for &bx in &ticks {
                for &by in &ticks {
                    let a0 = clamp_action(state.birds[0].velocity, Vec2::new(ax, ay), limits);
                    let a1 = clamp_action(state.birds[1].velocity, Vec2::new(bx, by), limits);
                    let next = step(state, &[a0, a1]).unwrap();
                    best = best.min(model.total(&next.birds));
                }
            }
        }
    }
    best
}
