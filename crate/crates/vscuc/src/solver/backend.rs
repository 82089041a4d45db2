//! Conic backend: converts the program IR to the embedded interior-point
//! solver's `min 1/2 x'Px + q'x  s.t.  Ax + s = b, s in K` form.
//!
//! Constraint layout, in cone order: equality rows (zero cone), inequality
//! rows and variable bounds (nonnegative cone), then one second-order cone
//! per conic constraint. Rotated cones are rewritten as plain second-order
//! cones via `‖u‖^2 <= 2 t1 t2  <=>  ‖(t1 - t2, sqrt(2) u)‖ <= t1 + t2`,
//! which also implies `t1, t2 >= 0`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::program::{LinExpr, Program, Sense};

use super::{SubproblemResult, SubproblemSolver, SubproblemStatus, Tier};

/// Embedded interior-point backend.
#[derive(Debug, Clone, Default)]
pub struct ClarabelSolver;

struct TripletMatrix {
    m: usize,
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    fn new(n: usize) -> TripletMatrix {
        TripletMatrix { m: 0, n, entries: Vec::new() }
    }

    fn push_row(&mut self, terms: &[(usize, f64)]) -> usize {
        let r = self.m;
        for &(c, v) in terms {
            if v != 0.0 {
                self.entries.push((r, c, v));
            }
        }
        self.m += 1;
        r
    }

    fn into_csc(mut self) -> CscMatrix<f64> {
        // Column-major, rows ascending within a column; duplicates summed.
        self.entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut colptr = vec![0usize; self.n + 1];
        for &(_, c, _) in &merged {
            colptr[c + 1] += 1;
        }
        for c in 0..self.n {
            colptr[c + 1] += colptr[c];
        }
        let rowval = merged.iter().map(|&(r, _, _)| r).collect();
        let nzval = merged.iter().map(|&(_, _, v)| v).collect();
        CscMatrix::new(self.m, self.n, colptr, rowval, nzval)
    }
}

fn settings_for(tier: Tier) -> DefaultSettings<f64> {
    let mut s = DefaultSettings::default();
    s.verbose = false;
    match tier {
        Tier::Standard => {
            s.max_iter = 200;
        }
        Tier::Tightened => {
            s.max_iter = 500;
            s.tol_gap_abs = 1e-10;
            s.tol_gap_rel = 1e-10;
            s.tol_feas = 1e-10;
            s.static_regularization_constant = 1e-9;
            s.iterative_refinement_abstol = 1e-14;
        }
    }
    s
}

/// Negated expression terms: cone slacks satisfy `s = b - Ax`, so a slack
/// equal to `e(x)` needs `A` row `-e.terms` and `b` entry `e.constant`.
fn cone_row(a: &mut TripletMatrix, b: &mut Vec<f64>, e: &LinExpr, scale: f64) {
    let negated: Vec<(usize, f64)> =
        e.terms.iter().map(|&(v, c)| (v, -scale * c)).collect();
    a.push_row(&negated);
    b.push(scale * e.constant);
}

impl SubproblemSolver for ClarabelSolver {
    fn solve(
        &self,
        prog: &Program,
        bounds_override: &[(usize, f64, f64)],
        tier: Tier,
    ) -> SubproblemResult {
        let n = prog.vars.len();
        let fail = |_why: &str| SubproblemResult {
            status: SubproblemStatus::NumericFailure,
            x: vec![0.0; n],
            primal_obj: f64::INFINITY,
            dual_obj: f64::NEG_INFINITY,
            iterations: 0,
        };

        let mut bounds: Vec<(f64, f64)> = prog.vars.iter().map(|v| (v.lb, v.ub)).collect();
        for &(j, lb, ub) in bounds_override {
            bounds[j] = (lb, ub);
        }

        let mut a = TripletMatrix::new(n);
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

        // Zero cone: equality rows.
        let mut n_eq = 0usize;
        for r in prog.rows.iter().filter(|r| r.sense == Sense::Eq) {
            a.push_row(&r.terms);
            b.push(r.rhs);
            n_eq += 1;
        }
        if n_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_eq));
        }

        // Nonnegative cone: inequality rows as `ax <= b`, then bounds.
        let mut n_ineq = 0usize;
        for r in &prog.rows {
            match r.sense {
                Sense::Le => {
                    a.push_row(&r.terms);
                    b.push(r.rhs);
                    n_ineq += 1;
                }
                Sense::Ge => {
                    let neg: Vec<(usize, f64)> =
                        r.terms.iter().map(|&(v, c)| (v, -c)).collect();
                    a.push_row(&neg);
                    b.push(-r.rhs);
                    n_ineq += 1;
                }
                Sense::Eq => {}
            }
        }
        for (j, &(lb, ub)) in bounds.iter().enumerate() {
            if ub.is_finite() {
                a.push_row(&[(j, 1.0)]);
                b.push(ub);
                n_ineq += 1;
            }
            if lb.is_finite() {
                a.push_row(&[(j, -1.0)]);
                b.push(-lb);
                n_ineq += 1;
            }
        }
        if n_ineq > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
        }

        // Second-order cones.
        for c in &prog.socs {
            cone_row(&mut a, &mut b, &c.t, 1.0);
            for u in &c.u {
                cone_row(&mut a, &mut b, u, 1.0);
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + c.u.len()));
        }
        for c in &prog.rsocs {
            // t = t1 + t2; u = (t1 - t2, sqrt(2) u...).
            let mut t = c.t1.clone();
            t.add_scaled(&c.t2, 1.0);
            cone_row(&mut a, &mut b, &t, 1.0);
            let mut d = c.t1.clone();
            d.add_scaled(&c.t2, -1.0);
            cone_row(&mut a, &mut b, &d, 1.0);
            for u in &c.u {
                cone_row(&mut a, &mut b, u, std::f64::consts::SQRT_2);
            }
            cones.push(SupportedConeT::SecondOrderConeT(2 + c.u.len()));
        }

        // Diagonal quadratic objective: backend minimizes 1/2 x'Px + q'x.
        let mut p_trip = TripletMatrix::new(n);
        for j in 0..n {
            let q = prog.obj_quad[j];
            if q != 0.0 {
                p_trip.entries.push((j, j, 2.0 * q));
            }
        }
        p_trip.m = n;
        let p_csc = p_trip.into_csc();
        let a_csc = a.into_csc();
        let q = prog.obj_lin.clone();

        let mut solver = match DefaultSolver::new(&p_csc, &q, &a_csc, &b, &cones, settings_for(tier))
        {
            Ok(s) => s,
            Err(_) => return fail("setup"),
        };
        solver.solve();
        let sol = &solver.solution;

        let mut status = match sol.status {
            SolverStatus::Solved => SubproblemStatus::Optimal,
            SolverStatus::PrimalInfeasible => SubproblemStatus::Infeasible,
            SolverStatus::DualInfeasible => SubproblemStatus::Unbounded,
            _ => SubproblemStatus::NumericFailure,
        };
        let primal_obj = sol.obj_val + prog.obj_const;
        if status == SubproblemStatus::Optimal {
            // OPTIMAL is a promise: verify the point before passing it on.
            let viol = continuous_violation(prog, &bounds, &sol.x);
            let obj_at_x = prog.objective_value(&sol.x);
            let obj_err = (obj_at_x - primal_obj).abs() / 1.0f64.max(primal_obj.abs());
            if viol > 1e-7 || obj_err > 1e-7 {
                status = SubproblemStatus::NumericFailure;
            }
        }
        SubproblemResult {
            status,
            x: sol.x.clone(),
            primal_obj,
            dual_obj: sol.obj_val_dual + prog.obj_const,
            iterations: sol.iterations,
        }
    }
}

/// Worst violation of bounds, rows, and cones at `x`, integrality ignored
/// (this is the continuous relaxation's own contract check).
fn continuous_violation(prog: &Program, bounds: &[(f64, f64)], x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, &(lb, ub)) in bounds.iter().enumerate() {
        if lb.is_finite() {
            worst = worst.max(lb - x[j]);
        }
        if ub.is_finite() {
            worst = worst.max(x[j] - ub);
        }
    }
    for r in &prog.rows {
        let lhs: f64 = r.terms.iter().map(|&(v, c)| c * x[v]).sum();
        worst = worst.max(match r.sense {
            Sense::Le => lhs - r.rhs,
            Sense::Ge => r.rhs - lhs,
            Sense::Eq => (lhs - r.rhs).abs(),
        });
    }
    for c in &prog.socs {
        worst = worst.max(crate::program::soc_violation(c, x));
    }
    for c in &prog.rsocs {
        worst = worst.max(crate::program::rsoc_violation(c, x));
    }
    worst
}
