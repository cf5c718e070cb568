//! The V-formation cost `J = CV^2 + VM^2 + (UB - 1)^2` and its three
//! components: clear view, velocity matching and upwash benefit.
//!
//! All pairwise geometry is expressed in the observer's frame: `lateral` is
//! the distance perpendicular to the observer's heading, `ahead` the signed
//! distance along it. Angles inside the view cone are measured from the
//! observer's right-hand lateral axis, so straight ahead is `pi/2` and the
//! cone spans `[(pi - theta)/2, (pi + theta)/2]`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dynamics::{BirdState, FlockState};
use crate::error::{Error, Result};
use crate::interval::{union_measure, AngularInterval};
use crate::vec2::Vec2;

/// Anything that scores a (sub)flock configuration. Lower is better.
pub trait StateCost: Sync {
    fn cost(&self, birds: &[BirdState]) -> f64;
}

impl<F> StateCost for F
where
    F: Fn(&[BirdState]) -> f64 + Sync,
{
    fn cost(&self, birds: &[BirdState]) -> f64 {
        self(birds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WingConfig {
    /// Wing span `w`, in position units.
    pub w: f64,
    /// Full opening angle of the view cone, radians.
    pub theta: f64,
}

impl Default for WingConfig {
    fn default() -> Self {
        Self {
            w: 1.0,
            theta: PI / 4.0,
        }
    }
}

impl WingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w > 0.0) {
            return Err(Error::InvalidConfig(format!("wing span must be > 0, got {}", self.w)));
        }
        if !(self.theta > 0.0 && self.theta < PI) {
            return Err(Error::InvalidConfig(format!(
                "view angle must lie in (0, pi), got {}",
                self.theta
            )));
        }
        Ok(())
    }

    fn cone(&self) -> (f64, f64) {
        ((PI - self.theta) / 2.0, (PI + self.theta) / 2.0)
    }

    /// Lateral offset separating the downwash region from the upwash region.
    pub fn downwash_edge(&self) -> f64 {
        (4.0 - PI) * self.w / 8.0
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.det().is_finite()
    }

    fn inverse(&self) -> Sym2 {
        let d = self.det();
        Sym2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        }
    }

    fn quadratic_form(&self, d: Vec2) -> f64 {
        self.xx * d.x * d.x + 2.0 * self.xy * d.x * d.y + self.yy * d.y * d.y
    }
}

/// Gaussian upwash model. Means are `(lateral, ahead)` points in the
/// observer's frame; `1` is the upwash peak, `2` the downwash trough.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpwashParams {
    pub mu1: Vec2,
    pub mu2: Vec2,
    pub sigma1: Sym2,
    pub sigma2: Sym2,
}

impl UpwashParams {
    /// Peak at `((12 + pi) w / 16, 1)`, trough at the origin, unit covariances.
    pub fn for_wing(w: f64) -> Self {
        Self {
            mu1: Vec2::new((12.0 + PI) * w / 16.0, 1.0),
            mu2: Vec2::ZERO,
            sigma1: Sym2::IDENTITY,
            sigma2: Sym2::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu1.is_finite() || !self.mu2.is_finite() {
            return Err(Error::InvalidConfig("upwash means must be finite".into()));
        }
        if !self.sigma1.is_positive_definite() || !self.sigma2.is_positive_definite() {
            return Err(Error::InvalidConfig(
                "upwash covariances must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

impl Default for UpwashParams {
    fn default() -> Self {
        Self::for_wing(WingConfig::default().w)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub cv: f64,
    pub vm: f64,
    pub ub: f64,
    pub total: f64,
}

/// Bird `j` seen from bird `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeFrame {
    /// Distance from `j` to `i`'s line of flight, `>= 0`.
    pub lateral: f64,
    /// Signed distance along `i`'s heading, positive in front.
    pub ahead: f64,
    /// `j` is in front of `i`.
    pub front: bool,
    /// `j` lies on `i`'s left-hand side.
    pub left: bool,
}

pub fn relative_frame(i: &BirdState, j: &BirdState) -> Result<RelativeFrame> {
    let speed = i.velocity.norm();
    if speed == 0.0 {
        return Err(Error::ZeroHeading);
    }
    let heading = i.velocity * (1.0 / speed);
    let d = j.position - i.position;
    let ahead = d.dot(heading);
    let side = heading.cross(d);
    Ok(RelativeFrame {
        lateral: side.abs(),
        ahead,
        front: ahead > 0.0,
        left: side > 0.0,
    })
}

/// The angles of `i`'s view cone hidden behind `j`'s wings, if any.
pub fn blocked_interval(i: &BirdState, j: &BirdState, cfg: &WingConfig) -> Option<AngularInterval> {
    let frame = relative_frame(i, j).ok()?;
    blocked_from_frame(&frame, cfg)
}

fn blocked_from_frame(frame: &RelativeFrame, cfg: &WingConfig) -> Option<AngularInterval> {
    if !frame.front {
        return None;
    }
    let (h, v, w) = (frame.lateral, frame.ahead, cfg.w);
    if !(h < w || (h - w) / v < cfg.theta.tan()) {
        return None;
    }
    let (cone_lo, cone_hi) = cfg.cone();
    let lo = cone_lo.max(v.atan2(h + w));
    let hi = cone_hi.min(v.atan2(h - w));
    if lo >= hi {
        return None;
    }
    // The formula is written for a blocker on the right; mirror across the
    // heading for one on the left.
    Some(if frame.left {
        AngularInterval::new(PI - hi, PI - lo)
    } else {
        AngularInterval::new(lo, hi)
    })
}

/// Fraction of bird `i`'s view cone that is blocked, in `[0, 1]`.
pub fn clear_view_of(birds: &[BirdState], i: usize, cfg: &WingConfig) -> f64 {
    let observer = &birds[i];
    if observer.velocity == Vec2::ZERO {
        return 0.0;
    }
    let mut blocked: SmallVec<[AngularInterval; 16]> = SmallVec::new();
    for (j, other) in birds.iter().enumerate() {
        if j != i {
            if let Some(iv) = blocked_interval(observer, other, cfg) {
                blocked.push(iv);
            }
        }
    }
    union_measure(&mut blocked) / cfg.theta
}

pub fn clear_view(birds: &[BirdState], cfg: &WingConfig) -> f64 {
    (0..birds.len()).map(|i| clear_view_of(birds, i, cfg)).sum()
}

pub fn velocity_matching(birds: &[BirdState]) -> f64 {
    let mut sum = 0.0;
    for (i, a) in birds.iter().enumerate() {
        for b in &birds[..i] {
            let denom = a.velocity.norm() + b.velocity.norm();
            if denom > 0.0 {
                let r = (a.velocity - b.velocity).norm() / denom;
                sum += r * r;
            }
        }
    }
    sum
}

fn smoothing(h: f64, cfg: &WingConfig) -> f64 {
    libm::erf(2.0 * SQRT_2 * (h - cfg.downwash_edge()))
}

fn gaussian(p: Vec2, mu: Vec2, sigma_inv: &Sym2) -> f64 {
    (-0.5 * sigma_inv.quadratic_form(p - mu)).exp()
}

/// Pairwise cost evaluator with the covariance inverses cached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub wing: WingConfig,
    pub upwash: UpwashParams,
    inv1: Sym2,
    inv2: Sym2,
}

impl Default for CostModel {
    fn default() -> Self {
        Self::new(WingConfig::default(), UpwashParams::default()).expect("default parameters are valid")
    }
}

impl CostModel {
    pub fn new(wing: WingConfig, upwash: UpwashParams) -> Result<Self> {
        wing.validate()?;
        upwash.validate()?;
        Ok(Self {
            wing,
            upwash,
            inv1: upwash.sigma1.inverse(),
            inv2: upwash.sigma2.inverse(),
        })
    }

    /// `UB_ij`: the upwash bird `i` receives from bird `j`.
    pub fn pair_upwash(&self, i: &BirdState, j: &BirdState) -> f64 {
        let (si, sj) = (i.velocity.norm(), j.velocity.norm());
        if si == 0.0 || sj == 0.0 {
            return 0.0;
        }
        let Ok(frame) = relative_frame(i, j) else {
            return 0.0;
        };
        if !frame.front {
            return 0.0;
        }
        let p = Vec2::new(frame.lateral, frame.ahead);
        let s = smoothing(frame.lateral, &self.wing);
        if frame.lateral >= self.wing.downwash_edge() {
            let alignment = i.velocity.dot(j.velocity) / (si * sj);
            alignment * s * gaussian(p, self.upwash.mu1, &self.inv1)
        } else {
            s * gaussian(p, self.upwash.mu2, &self.inv2)
        }
    }

    /// `um_i`, the total upwash of bird `i`, clamped to `[0, 1]`.
    pub fn upwash_of(&self, birds: &[BirdState], i: usize) -> f64 {
        let total: f64 = birds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, other)| self.pair_upwash(&birds[i], other))
            .sum();
        total.clamp(0.0, 1.0)
    }

    pub fn upwash_benefit(&self, birds: &[BirdState]) -> f64 {
        (0..birds.len()).map(|i| 1.0 - self.upwash_of(birds, i)).sum()
    }

    pub fn clear_view(&self, birds: &[BirdState]) -> f64 {
        clear_view(birds, &self.wing)
    }

    pub fn breakdown(&self, birds: &[BirdState]) -> CostBreakdown {
        let cv = self.clear_view(birds);
        let vm = velocity_matching(birds);
        let ub = self.upwash_benefit(birds);
        let total = cv * cv + vm * vm + (ub - 1.0) * (ub - 1.0);
        CostBreakdown { cv, vm, ub, total }
    }

    pub fn total(&self, birds: &[BirdState]) -> f64 {
        self.breakdown(birds).total
    }
}

impl StateCost for CostModel {
    fn cost(&self, birds: &[BirdState]) -> f64 {
        self.total(birds)
    }
}

pub fn upwash_benefit(state: &FlockState, wing: &WingConfig, upwash: &UpwashParams) -> Result<f64> {
    Ok(CostModel::new(*wing, *upwash)?.upwash_benefit(&state.birds))
}

pub fn total_cost(state: &FlockState, wing: &WingConfig, upwash: &UpwashParams) -> Result<CostBreakdown> {
    Ok(CostModel::new(*wing, *upwash)?.breakdown(&state.birds))
}
