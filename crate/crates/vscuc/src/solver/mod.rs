//! Mixed-integer SOCP solver: continuous conic relaxations behind a backend
//! trait, plus a deterministic best-first branch-and-bound driver.
//!
//! Every incumbent is re-validated by the independent feasibility checker in
//! [`crate::program`] before it is accepted; the branch-and-bound never
//! trusts a backend status beyond what that check confirms.

mod backend;
mod bnb;

pub use backend::ClarabelSolver;
pub use bnb::{solve_misocp, BnbResult, BnbStatus, SolveError, SolverConfig};

use crate::program::{ConeKind, Program};

/// Numeric effort tier for a relaxation solve. A numeric failure at
/// [`Tier::Standard`] earns exactly one retry at [`Tier::Tightened`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Standard,
    Tightened,
}

/// Backend verdict on one continuous relaxation. `Optimal` is only reported
/// for a solver-certified solve; every ambiguous backend state maps to
/// `NumericFailure` rather than being passed off as solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericFailure,
}

#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub status: SubproblemStatus,
    pub x: Vec<f64>,
    /// Primal objective, program constant included.
    pub primal_obj: f64,
    /// Dual objective, program constant included.
    pub dual_obj: f64,
    pub iterations: u32,
}

impl SubproblemResult {
    /// Safe lower bound from an optimal relaxation: the smaller of the
    /// primal and dual objectives, guarding against interior-point
    /// solutions that sit marginally on the wrong side.
    pub fn safe_bound(&self) -> f64 {
        self.primal_obj.min(self.dual_obj)
    }
}

/// A continuous conic solver the branch-and-bound can drive.
pub trait SubproblemSolver {
    /// Solve the continuous relaxation of `prog` (binaries treated as boxed
    /// continuous variables) with per-variable bound overrides applied.
    fn solve(
        &self,
        prog: &Program,
        bounds_override: &[(usize, f64, f64)],
        tier: Tier,
    ) -> SubproblemResult;
}

/// Normalized positive-part residual of one cone at a solution.
#[derive(Debug, Clone)]
pub struct ConeResidual {
    pub name: String,
    pub kind: ConeKind,
    /// `max(0, ‖u‖ - t) / max(1, t)` for plain cones,
    /// `max(0, ‖u‖^2 - 2 t1 t2) / max(1, 2 t1 t2)` for rotated ones.
    pub violation: f64,
}

/// Residuals of every cone in the program at `x`.
pub fn soc_residuals(prog: &Program, x: &[f64]) -> Vec<ConeResidual> {
    let mut out = Vec::with_capacity(prog.socs.len() + prog.rsocs.len());
    for c in &prog.socs {
        let t = c.t.eval(x);
        out.push(ConeResidual {
            name: c.name.clone(),
            kind: c.kind,
            violation: crate::program::soc_violation(c, x).max(0.0) / 1.0f64.max(t),
        });
    }
    for c in &prog.rsocs {
        let prod2 = 2.0 * c.t1.eval(x) * c.t2.eval(x);
        let sq: f64 = c.u.iter().map(|e| e.eval(x).powi(2)).sum();
        out.push(ConeResidual {
            name: c.name.clone(),
            kind: c.kind,
            violation: (sq - prod2).max(0.0) / 1.0f64.max(prod2),
        });
    }
    out
}

/// Mean and max of a residual list.
pub fn residual_summary(res: &[ConeResidual]) -> (f64, f64) {
    if res.is_empty() {
        return (0.0, 0.0);
    }
    let sum: f64 = res.iter().map(|r| r.violation).sum();
    let max = res.iter().map(|r| r.violation).fold(0.0, f64::max);
    (sum / res.len() as f64, max)
}
