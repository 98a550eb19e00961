//! Price-competition solver for wireless markets with a shared congestible
//! band.
//!
//! Incumbents hold exclusive licensed bands; a common unlicensed band of
//! capacity `C` is open to everyone, including entrants without spectrum.
//! Customers pick the option with the lowest delivered price (announced price
//! plus weighted congestion cost), providers set prices to maximize revenue.
//! The crate computes the induced demand allocations, best responses, and
//! pricing equilibria, sweeps the outcome over `C`, and cross-checks every
//! solver against brute-force oracles.

pub mod best_response;
pub mod equilibrium;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod presets;
pub mod sweep;
pub mod wardrop;

/// Equal-delivered-price tolerance for linear-system allocations.
pub const WARDROP_TOL: f64 = 1e-9;
/// Guaranteed tolerance of the bisection path used for convex latencies.
pub const BISECTION_TOL: f64 = 1e-7;
/// Masses below this are treated as zero.
pub const MASS_TOL: f64 = 1e-9;
/// A pattern solution is accepted immediately below this violation.
pub(crate) const FEASIBILITY_TOL: f64 = 1e-9;
/// Largest violation tolerated when no pattern is cleanly feasible.
pub(crate) const PATTERN_FALLBACK_TOL: f64 = 1e-6;
/// Golden-section tolerance on prices.
pub const GOLDEN_TOL: f64 = 1e-9;
/// Price points of the dense-grid fallback best response.
pub const FALLBACK_GRID_POINTS: usize = 2000;
/// Refinement passes of the dense-grid fallback.
pub const FALLBACK_GRID_PASSES: usize = 2;
/// Damping factor of simultaneous best-response iteration.
pub const BR_DAMPING: f64 = 0.5;
/// Convergence threshold on successive prices in best-response iteration.
pub const BR_CONVERGENCE_TOL: f64 = 1e-8;
/// Iteration cap for best-response iteration.
pub const BR_MAX_ITERATIONS: usize = 10_000;
/// Default price-jump threshold floor in sweeps.
pub const JUMP_TOL: f64 = 1e-2;
/// Discrete welfare slopes below this count as flat.
pub const SLOPE_TOL: f64 = 1e-6;
/// Acceptable revenue gain for a certified equilibrium.
pub const DEVIATION_GAIN_TOL: f64 = 1e-6;

pub use best_response::{
    best_response_generic, best_response_heterogeneous, best_response_homogeneous,
    revenue_at_price, BestResponse, Regime,
};
pub use equilibrium::{
    solve, solve_heterogeneous_single, solve_homogeneous_single, solve_symmetric_n,
    verify_equilibrium, DeviationReport, EquilibriumResult, SolveError,
};
pub use metrics::{consumer_surplus, revenues, social_welfare, WelfareReport};
pub use model::{
    inverse_demand, licensed_latency, unlicensed_latency, validate_market, CustomerClass,
    DemandSpec, LatencySpec, MarketConfig, ModelError, ProviderKind, ServiceProvider,
    UnlicensedBand, ValidationReport,
};
pub use oracle::{
    certify_equilibrium, discretized_wardrop, grid_best_response, Certificate, GridSpec,
};
pub use sweep::{
    closed_form_thresholds, detect_breakpoints, divided_capacity_sweep, sweep_capacity, Breakpoint,
    BreakpointKind, SweepResult, Thresholds,
};
pub use wardrop::{
    allocate, delivered_prices, wardrop_residual, Allocation, DeliveredPrices, PriceProfile,
    WardropError,
};
