//! The flock as a Markov decision process: per-bird double-integrator
//! dynamics, the feasible acceleration set, initial-state sampling and
//! k-nearest neighborhoods.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BirdState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl BirdState {
    pub const fn new(position: Vec2, velocity: Vec2) -> Self {
        Self { position, velocity }
    }
}

/// Positions and velocities of every bird at one time step. Bird identity is
/// its index and never changes during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlockState {
    pub birds: Vec<BirdState>,
    pub time: u64,
}

impl FlockState {
    pub fn new(birds: Vec<BirdState>) -> Self {
        Self { birds, time: 0 }
    }

    pub fn len(&self) -> usize {
        self.birds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.birds.is_empty()
    }

    /// The state restricted to `indices`, in the order given.
    pub fn subflock(&self, indices: &[usize]) -> FlockState {
        FlockState {
            birds: indices.iter().map(|&i| self.birds[i]).collect(),
            time: self.time,
        }
    }
}

/// Bounds on the control: `|a| <= rho * |v|` and `|v| <= v_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionLimits {
    pub v_max: f64,
    pub rho: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            rho: 0.9,
        }
    }
}

impl ActionLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::InvalidConfig(format!("v_max must be > 0, got {}", self.v_max)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// Largest acceleration magnitude any bird can ever use.
    pub fn acceleration_bound(&self) -> f64 {
        self.rho * self.v_max
    }
}

/// Axis-aligned box the initial positions and velocities are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitBox {
    pub pos_lo: Vec2,
    pub pos_hi: Vec2,
    pub vel_lo: Vec2,
    pub vel_hi: Vec2,
}

impl Default for InitBox {
    fn default() -> Self {
        Self {
            pos_lo: Vec2::new(0.0, 0.0),
            pos_hi: Vec2::new(3.0, 3.0),
            vel_lo: Vec2::new(0.25, 0.25),
            vel_hi: Vec2::new(0.75, 0.75),
        }
    }
}

impl InitBox {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("pos", self.pos_lo, self.pos_hi),
            ("vel", self.vel_lo, self.vel_hi),
        ];
        for (name, lo, hi) in pairs {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBox(format!("{name} bounds must be finite")));
            }
            if lo.x > hi.x || lo.y > hi.y {
                return Err(Error::InvalidBox(format!("{name}_lo exceeds {name}_hi")));
            }
        }
        Ok(())
    }
}

/// One transition of the flock. The position advances by the velocity the
/// bird had *before* the acceleration is applied.
pub fn step(state: &FlockState, actions: &[Vec2]) -> Result<FlockState> {
    if actions.len() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            got: actions.len(),
        });
    }
    if actions.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("actions"));
    }
    if state
        .birds
        .iter()
        .any(|b| !b.position.is_finite() || !b.velocity.is_finite())
    {
        return Err(Error::NonFinite("state"));
    }
    let birds = state
        .birds
        .iter()
        .zip(actions)
        .map(|(b, &a)| advance_bird(*b, a))
        .collect();
    Ok(FlockState {
        birds,
        time: state.time + 1,
    })
}

#[inline]
pub(crate) fn advance_bird(bird: BirdState, accel: Vec2) -> BirdState {
    BirdState {
        position: bird.position + bird.velocity,
        velocity: bird.velocity + accel,
    }
}

/// Projects `proposal` onto the feasible acceleration set of a bird moving
/// with `velocity`. Feasible proposals are returned unchanged.
pub fn clamp_action(velocity: Vec2, proposal: Vec2, limits: &ActionLimits) -> Vec2 {
    let bound = limits.rho * velocity.norm();
    let mut accel = proposal;
    let magnitude = accel.norm();
    if magnitude > bound {
        accel = if bound > 0.0 && magnitude.is_finite() {
            accel * (bound / magnitude)
        } else {
            Vec2::ZERO
        };
        for _ in 0..8 {
            if accel.norm() <= bound {
                break;
            }
            accel = accel * (1.0 - f64::EPSILON);
        }
    }

    if (velocity + accel).norm() <= limits.v_max {
        return accel;
    }
    // Shrink along the ray so that |v + s a| = v_max.
    let aa = accel.norm_sq();
    let va = velocity.dot(accel);
    let c = velocity.norm_sq() - limits.v_max * limits.v_max;
    if c >= 0.0 || aa == 0.0 {
        return Vec2::ZERO;
    }
    let disc = (va * va - aa * c).sqrt();
    let root = if va > 0.0 { -c / (va + disc) } else { (disc - va) / aa };
    let s = root.clamp(0.0, 1.0);
    let fits = |s: f64| (velocity + accel * s).norm() <= limits.v_max;
    if fits(s) {
        return accel * s;
    }
    let (mut lo, mut hi) = (0.0, s);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    accel * lo
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, lo: Vec2, hi: Vec2) -> Vec2 {
    let x = uniform(rng, lo.x, hi.x);
    let y = uniform(rng, lo.y, hi.y);
    Vec2::new(x, y)
}

/// Draws `count` birds independently and uniformly from `init_box`.
pub fn sample_initial<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    init_box: &InitBox,
) -> Result<FlockState> {
    init_box.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("flock needs at least one bird".into()));
    }
    let birds = (0..count)
        .map(|_| {
            let position = uniform_vec(rng, init_box.pos_lo, init_box.pos_hi);
            let velocity = uniform_vec(rng, init_box.vel_lo, init_box.vel_hi);
            BirdState::new(position, velocity)
        })
        .collect();
    Ok(FlockState::new(birds))
}

/// The `k` birds nearest to bird `i` (including `i`), as ascending indices.
/// Distance ties go to the lower index.
pub fn neighbors(state: &FlockState, i: usize, k: usize) -> Result<Vec<usize>> {
    let birds = state.len();
    if i >= birds {
        return Err(Error::IndexOutOfRange { index: i, birds });
    }
    if k == 0 || k > birds {
        return Err(Error::NeighborhoodOutOfRange { k, birds });
    }
    let origin = state.birds[i].position;
    let mut others: Vec<(f64, usize)> = (0..birds)
        .filter(|&j| j != i)
        .map(|j| ((state.birds[j].position - origin).norm_sq(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut chosen: Vec<usize> = std::iter::once(i)
        .chain(others.into_iter().take(k - 1).map(|(_, j)| j))
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}
