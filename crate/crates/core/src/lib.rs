pub mod analysis;
pub mod document;
pub mod error;
pub mod feasibility;
pub mod hardness;
pub mod kinetics;
pub mod model;
pub mod planner;
pub mod polish;
pub mod quad;
pub mod schedule;

pub use error::{Error, Result};
pub use model::{Compartment, Environment, Gas, Instance, PenaltyPL, TissueState};
pub use planner::{MenuRule, Objective, Plan, SolverStats, StopGrid};
pub use schedule::{Outcome, Profile, Segment};
