//! Voltage-stability-constrained stochastic unit commitment (VSC-UC).
//!
//! The crate builds and solves a mixed-integer second-order cone program that
//! co-optimizes generator commitment, inverter dispatch, synthetic inertia,
//! and shunt reactive support under an impedance-based voltage-stability
//! boundary. The pipeline is:
//!
//! 1. [`case`]: parse and validate a grid case document, normalize to per-unit.
//! 2. [`admittance`]: assemble Y = Y0 + Yg, invert to Z, evaluate exact
//!    impedance ratios (the ground truth for everything downstream).
//! 3. [`surrogate`]: enumerate the offline configuration dataset and fit
//!    pruned linear-with-interactions models of the Z-ratios.
//! 4. [`scenario`]: quantile-based scenario trees for wind/load uncertainty.
//! 5. [`formulation`]: translate case + tree + surrogate into a solver-agnostic
//!    conic program ([`program::Program`]).
//! 6. [`solver`]: continuous conic subproblems (embedded interior-point
//!    backend) driven by a best-first branch-and-bound loop.
//! 7. [`evaluate`]: ex-post metrics with exact impedance ratios, SOC gap,
//!    frequency slacks, and the TCO calculator.
//! 8. [`experiments`]: rolling-horizon driver and sweep harness behind the CLI.

pub mod admittance;
pub mod case;
pub mod evaluate;
pub mod experiments;
pub mod formulation;
pub mod program;
pub mod scenario;
pub mod solver;
pub mod surrogate;

pub use case::{parse_case, validate_case, GridCase};
pub use experiments::{run_rolling, run_sweep, ExperimentSpec, SweepAxis};
pub use formulation::{build, BuildOptions, Mode};
pub use solver::{solve_misocp, SolverConfig};
