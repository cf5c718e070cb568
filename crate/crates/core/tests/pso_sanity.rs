mod common;

use common::{grid_best_one_step, QuadraticInstance};
use dampc::dynamics::{sample_initial, ActionLimits};
use dampc::pso::{optimize, particle_count, AccelerationPlan, SwarmConfig, SwarmTuning};
use dampc::{CostModel, InitBox};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn finds_quadratic_optimum() {
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = QuadraticInstance::sample(&mut rng);
        if inst.solve_error(seed) <= 1e-2 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100 within tolerance");
}

#[test]
fn matches_or_beats_grid_search() {
    let model = CostModel::default();
    let limits = ActionLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let state = sample_initial(&mut rng, 2, &InitBox::default()).unwrap();
    let grid = grid_best_one_step(&state, &model, &limits);
    let p = particle_count(100.0, 1, 2);
    let mut wins = 0;
    for seed in 0..100u64 {
        let cfg = SwarmConfig::new(&SwarmTuning::default(), p, seed);
        let r = optimize(&state, &AccelerationPlan::unfixed(2), 1, &cfg, &limits, &model).unwrap();
        if r.achieved_cost <= grid + 1e-9 {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100 at least as good as the grid ({grid})");
}
