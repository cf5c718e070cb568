//! Distributed adaptive-neighborhood, adaptive-horizon model-predictive
//! control (DAMPC) for bringing a stochastic flock into V-formation, plus
//! the centralized adaptive-horizon controller it generalizes and a
//! statistical model-checking harness for both.

pub mod ampc;
pub mod cost;
pub mod dampc;
pub mod dynamics;
pub mod error;
pub mod interval;
pub mod pso;
pub mod run;
pub mod seed;
pub mod smc;
pub mod vec2;

pub use cost::{CostBreakdown, CostModel, StateCost, UpwashParams, WingConfig};
pub use dynamics::{ActionLimits, BirdState, FlockState, InitBox};
pub use error::{Error, Result};
pub use pso::{AccelerationPlan, PlanEntry, SwarmTuning};
pub use run::{ControlParams, Controller, RunResult, TraceStep};
pub use vec2::Vec2;
