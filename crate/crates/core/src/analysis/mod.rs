//! Frontier sweeps, sensitivity checks, discretisation studies and value-function probes.

pub mod constants;
pub mod convergence;
pub mod example;
pub mod frontier;
pub mod monotone;
pub mod value;

pub use constants::{apriori_constants, AprioriConstants};
pub use convergence::{discretisation_convergence, ConvergenceRow, ConvergenceTable};
pub use example::{two_gas_example, ExampleSample, GasChoice, TwoGasExample};
pub use frontier::{
    check_envelope, convexity_probe, frontier_csv, pareto_filter, sweep_capped, sweep_frontier,
    CappedPoint, EnvelopeReport, FrontierPoint, NonconvexGap,
};
pub use monotone::{eta_w_monotonicity, MonotonicityReport, SweepValue};
pub use value::{receding_horizon, value_probe, ProbeConfig, RolloutReport, ValueProbe};
