//! Conic program intermediate representation.
//!
//! The formulation emits this IR; the solver consumes it; the independent
//! feasibility checker re-evaluates it from scratch. Nothing here depends on
//! any solver backend, which is what makes the checker independent evidence.
//!
//! Shapes: linear rows `a'x {<=,>=,==} rhs` (expression constants are folded
//! into the rhs at insertion), second-order cones `‖u(x)‖_2 <= t(x)`,
//! rotated second-order cones `‖u(x)‖_2^2 <= 2 t1(x) t2(x)` with
//! `t1, t2 >= 0`, and a diagonal quadratic objective
//! `sum_j q_j x_j^2 + c'x + const`.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

/// Sparse affine expression over program variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> LinExpr {
        LinExpr::default()
    }

    pub fn of_var(v: usize) -> LinExpr {
        LinExpr { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn of_constant(c: f64) -> LinExpr {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn term(mut self, v: usize, coef: f64) -> LinExpr {
        self.add_term(v, coef);
        self
    }

    pub fn plus_constant(mut self, c: f64) -> LinExpr {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add_term(v, scale * c);
        }
        self.constant += scale * other.constant;
    }

    /// Merge duplicate variable terms and drop zeros; stable canonical form.
    pub fn compress(&mut self) {
        self.terms.sort_by_key(|&(v, _)| v);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LinRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub name: String,
}

/// Provenance tag on a cone; evaluation selects cones by this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    PowerFlow,
    Stability,
    StatcomCurrent,
    Capability,
    Nadir,
    LineRating,
    Other,
}

#[derive(Debug, Clone)]
pub struct SocCone {
    pub t: LinExpr,
    pub u: Vec<LinExpr>,
    pub kind: ConeKind,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct RotatedCone {
    pub t1: LinExpr,
    pub t2: LinExpr,
    pub u: Vec<LinExpr>,
    pub kind: ConeKind,
    pub name: String,
}

#[derive(Debug, Clone, Default)]
pub struct Program {
    pub vars: Vec<Variable>,
    pub rows: Vec<LinRow>,
    pub socs: Vec<SocCone>,
    pub rsocs: Vec<RotatedCone>,
    /// Per-variable linear objective coefficients (dense).
    pub obj_lin: Vec<f64>,
    /// Per-variable diagonal quadratic coefficients (dense, `q_j x_j^2`).
    pub obj_quad: Vec<f64>,
    pub obj_const: f64,
}

/// Size summary used by dry runs and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgramStats {
    pub n_vars: usize,
    pub n_binary: usize,
    pub n_rows: usize,
    pub n_soc: usize,
    pub n_rsoc: usize,
}

impl Program {
    pub fn new() -> Program {
        Program::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, kind: VarKind) -> usize {
        self.vars.push(Variable { name: name.into(), lb, ub, kind });
        self.obj_lin.push(0.0);
        self.obj_quad.push(0.0);
        self.vars.len() - 1
    }

    /// Add `expr sense rhs`, folding the expression constant into the rhs.
    pub fn add_row(&mut self, mut expr: LinExpr, sense: Sense, rhs: f64, name: impl Into<String>) {
        expr.compress();
        let rhs = rhs - expr.constant;
        self.rows.push(LinRow { terms: expr.terms, sense, rhs, name: name.into() });
    }

    pub fn add_soc(
        &mut self,
        mut t: LinExpr,
        mut u: Vec<LinExpr>,
        kind: ConeKind,
        name: impl Into<String>,
    ) {
        t.compress();
        for e in &mut u {
            e.compress();
        }
        assert!(!u.is_empty(), "SOC needs at least one vector entry");
        self.socs.push(SocCone { t, u, kind, name: name.into() });
    }

    pub fn add_rsoc(
        &mut self,
        mut t1: LinExpr,
        mut t2: LinExpr,
        mut u: Vec<LinExpr>,
        kind: ConeKind,
        name: impl Into<String>,
    ) {
        t1.compress();
        t2.compress();
        for e in &mut u {
            e.compress();
        }
        assert!(!u.is_empty(), "rotated cone needs at least one vector entry");
        self.rsocs.push(RotatedCone { t1, t2, u, kind, name: name.into() });
    }

    pub fn add_obj_lin(&mut self, v: usize, c: f64) {
        self.obj_lin[v] += c;
    }

    pub fn add_obj_quad(&mut self, v: usize, q: f64) {
        self.obj_quad[v] += q;
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut val = self.obj_const;
        for (j, &xv) in x.iter().enumerate() {
            val += self.obj_lin[j] * xv + self.obj_quad[j] * xv * xv;
        }
        val
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn stats(&self) -> ProgramStats {
        ProgramStats {
            n_vars: self.vars.len(),
            n_binary: self.vars.iter().filter(|v| v.kind == VarKind::Binary).count(),
            n_rows: self.rows.len(),
            n_soc: self.socs.len(),
            n_rsoc: self.rsocs.len(),
        }
    }

    /// Structural validation; empty result means well formed.
    pub fn validate(&self) -> Vec<String> {
        let n = self.vars.len();
        let mut errs = Vec::new();
        let check_expr = |errs: &mut Vec<String>, e: &LinExpr, what: &str| {
            for &(v, c) in &e.terms {
                if v >= n {
                    errs.push(format!("{what}: variable index {v} out of range"));
                }
                if !c.is_finite() {
                    errs.push(format!("{what}: non-finite coefficient"));
                }
            }
            if !e.constant.is_finite() {
                errs.push(format!("{what}: non-finite constant"));
            }
        };
        for (i, v) in self.vars.iter().enumerate() {
            if v.lb > v.ub {
                errs.push(format!("var {i} ({}): lb {} > ub {}", v.name, v.lb, v.ub));
            }
            if v.kind == VarKind::Binary && (v.lb < 0.0 || v.ub > 1.0) {
                errs.push(format!("var {i} ({}): binary bounds outside [0,1]", v.name));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            for &(v, c) in &r.terms {
                if v >= n {
                    errs.push(format!("row {i} ({}): variable index {v} out of range", r.name));
                }
                if !c.is_finite() {
                    errs.push(format!("row {i} ({}): non-finite coefficient", r.name));
                }
            }
            if !r.rhs.is_finite() {
                errs.push(format!("row {i} ({}): non-finite rhs", r.name));
            }
        }
        for (i, c) in self.socs.iter().enumerate() {
            check_expr(&mut errs, &c.t, &format!("soc {i} ({}) t", c.name));
            for (k, e) in c.u.iter().enumerate() {
                check_expr(&mut errs, e, &format!("soc {i} ({}) u[{k}]", c.name));
            }
        }
        for (i, c) in self.rsocs.iter().enumerate() {
            check_expr(&mut errs, &c.t1, &format!("rsoc {i} ({}) t1", c.name));
            check_expr(&mut errs, &c.t2, &format!("rsoc {i} ({}) t2", c.name));
            for (k, e) in c.u.iter().enumerate() {
                check_expr(&mut errs, e, &format!("rsoc {i} ({}) u[{k}]", c.name));
            }
        }
        if self.obj_lin.len() != n || self.obj_quad.len() != n {
            errs.push("objective arrays out of sync with variable count".into());
        }
        errs
    }

    /// Human-readable text dump.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let st = self.stats();
        let _ = writeln!(
            s,
            "program: {} vars ({} binary), {} rows, {} soc, {} rsoc",
            st.n_vars, st.n_binary, st.n_rows, st.n_soc, st.n_rsoc
        );
        let _ = writeln!(s, "VARS");
        for (i, v) in self.vars.iter().enumerate() {
            let k = match v.kind {
                VarKind::Continuous => "c",
                VarKind::Binary => "b",
            };
            let _ = writeln!(s, "  [{i}] {} {k} in [{}, {}]", v.name, v.lb, v.ub);
        }
        let fmt_terms = |terms: &[(usize, f64)]| {
            terms
                .iter()
                .map(|&(v, c)| format!("{c:+}*{}", self.vars[v].name))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let fmt_expr = |e: &LinExpr| {
            let mut t = fmt_terms(&e.terms);
            if e.constant != 0.0 || t.is_empty() {
                let _ = write!(t, " {:+}", e.constant);
            }
            t
        };
        let _ = writeln!(s, "ROWS");
        for r in &self.rows {
            let sense = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "==",
            };
            let _ = writeln!(s, "  {}: {} {sense} {}", r.name, fmt_terms(&r.terms), r.rhs);
        }
        let _ = writeln!(s, "SOC");
        for c in &self.socs {
            let u = c.u.iter().map(&fmt_expr).collect::<Vec<_>>().join("; ");
            let _ = writeln!(s, "  {} [{:?}]: ||{u}|| <= {}", c.name, c.kind, fmt_expr(&c.t));
        }
        let _ = writeln!(s, "RSOC");
        for c in &self.rsocs {
            let u = c.u.iter().map(&fmt_expr).collect::<Vec<_>>().join("; ");
            let _ = writeln!(
                s,
                "  {} [{:?}]: ||{u}||^2 <= 2*({})*({})",
                c.name,
                c.kind,
                fmt_expr(&c.t1),
                fmt_expr(&c.t2)
            );
        }
        let _ = writeln!(s, "OBJ");
        for (j, v) in self.vars.iter().enumerate() {
            if self.obj_lin[j] != 0.0 || self.obj_quad[j] != 0.0 {
                let _ = writeln!(
                    s,
                    "  {}: quad {} lin {}",
                    v.name, self.obj_quad[j], self.obj_lin[j]
                );
            }
        }
        let _ = writeln!(s, "  const {}", self.obj_const);
        s
    }
}

/// Worst-violation report from the independent feasibility checker.
#[derive(Debug, Clone, Copy)]
pub struct FeasReport {
    pub max_bound: f64,
    pub max_row: f64,
    pub max_soc: f64,
    pub max_rsoc: f64,
    pub max_integrality: f64,
    pub tol: f64,
}

impl FeasReport {
    pub fn worst(&self) -> f64 {
        self.max_bound
            .max(self.max_row)
            .max(self.max_soc)
            .max(self.max_rsoc)
            .max(self.max_integrality)
    }

    pub fn feasible(&self) -> bool {
        self.worst() <= self.tol
    }
}

/// Evaluate every constraint of `p` at `x` from scratch.
///
/// Violations: bounds `max(lb - x, x - ub)`; rows by sense; SOC
/// `‖u‖ - t`; rotated `‖u‖^2 - 2 t1 t2` plus negative-part of t1, t2;
/// integrality is distance to the nearest integer for binary variables.
pub fn check_feasibility(p: &Program, x: &[f64], tol: f64) -> FeasReport {
    assert_eq!(x.len(), p.vars.len(), "solution length mismatch");
    let mut rep = FeasReport {
        max_bound: 0.0,
        max_row: 0.0,
        max_soc: 0.0,
        max_rsoc: 0.0,
        max_integrality: 0.0,
        tol,
    };
    for (j, v) in p.vars.iter().enumerate() {
        rep.max_bound = rep.max_bound.max(v.lb - x[j]).max(x[j] - v.ub);
        if v.kind == VarKind::Binary {
            rep.max_integrality = rep.max_integrality.max((x[j] - x[j].round()).abs());
        }
    }
    for r in &p.rows {
        let lhs: f64 = r.terms.iter().map(|&(v, c)| c * x[v]).sum();
        let viol = match r.sense {
            Sense::Le => lhs - r.rhs,
            Sense::Ge => r.rhs - lhs,
            Sense::Eq => (lhs - r.rhs).abs(),
        };
        rep.max_row = rep.max_row.max(viol);
    }
    for c in &p.socs {
        rep.max_soc = rep.max_soc.max(soc_violation(c, x));
    }
    for c in &p.rsocs {
        rep.max_rsoc = rep.max_rsoc.max(rsoc_violation(c, x));
    }
    rep
}

/// `‖u(x)‖ - t(x)`, positive when violated.
pub fn soc_violation(c: &SocCone, x: &[f64]) -> f64 {
    let norm = c.u.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
    norm - c.t.eval(x)
}

/// `max(‖u‖^2 - 2 t1 t2, -t1, -t2)`, positive when violated.
pub fn rsoc_violation(c: &RotatedCone, x: &[f64]) -> f64 {
    let t1 = c.t1.eval(x);
    let t2 = c.t2.eval(x);
    let sq = c.u.iter().map(|e| e.eval(x).powi(2)).sum::<f64>();
    (sq - 2.0 * t1 * t2).max(-t1).max(-t2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linexpr_compress_merges_and_drops_zeros() {
        let mut e = LinExpr::new();
        e.add_term(2, 1.5);
        e.add_term(0, 2.0);
        e.add_term(2, -1.5);
        e.add_term(1, 3.0);
        e.compress();
        assert_eq!(e.terms, vec![(0, 2.0), (1, 3.0)]);
        assert_eq!(e.eval(&[1.0, 2.0, 99.0]), 8.0);
    }

    #[test]
    fn row_constants_fold_into_rhs() {
        let mut p = Program::new();
        let v = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        // x + 3 <= 5  ->  x <= 2.
        p.add_row(LinExpr::of_var(v).plus_constant(3.0), Sense::Le, 5.0, "r");
        assert_eq!(p.rows[0].rhs, 2.0);
        let rep = check_feasibility(&p, &[2.0], 1e-9);
        assert!(rep.feasible());
        let rep = check_feasibility(&p, &[2.1], 1e-9);
        assert!(!rep.feasible());
        assert!((rep.max_row - 0.1).abs() < 1e-12);
    }

    #[test]
    fn validate_catches_structural_problems() {
        let mut p = Program::new();
        let v = p.add_var("x", 1.0, 0.0, VarKind::Continuous);
        p.add_row(LinExpr::of_var(v + 7), Sense::Le, 1.0, "bad");
        let b = p.add_var("b", 0.0, 2.0, VarKind::Binary);
        let _ = b;
        let errs = p.validate();
        assert!(errs.iter().any(|e| e.contains("lb 1 > ub 0")));
        assert!(errs.iter().any(|e| e.contains("out of range")));
        assert!(errs.iter().any(|e| e.contains("binary bounds")));
    }

    #[test]
    fn checker_measures_each_violation_class() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, 1.0, VarKind::Continuous);
        let y = p.add_var("y", -5.0, 5.0, VarKind::Continuous);
        let _b = p.add_var("b", 0.0, 1.0, VarKind::Binary);
        p.add_row(LinExpr::of_var(x).term(y, 1.0), Sense::Eq, 1.0, "sum");
        p.add_soc(
            LinExpr::of_var(x),
            vec![LinExpr::of_var(y)],
            ConeKind::Other,
            "norm",
        );
        p.add_rsoc(
            LinExpr::of_var(x),
            LinExpr::of_constant(0.5),
            vec![LinExpr::of_var(y)],
            ConeKind::PowerFlow,
            "rot",
        );

        // Feasible point: x=1, y=0, b=1.
        assert!(check_feasibility(&p, &[1.0, 0.0, 1.0], 1e-9).feasible());

        // Bound violation.
        let rep = check_feasibility(&p, &[1.5, -0.5, 1.0], 1e-9);
        assert!((rep.max_bound - 0.5).abs() < 1e-12);

        // SOC violation: x=0.5, y=1.5 -> ||y|| - x = 1.0; row holds at 2.0? No:
        // 0.5 + 1.5 = 2 violates sum by 1; both recorded independently.
        let rep = check_feasibility(&p, &[0.5, 1.5, 0.0], 1e-9);
        assert!((rep.max_soc - 1.0).abs() < 1e-12);
        assert!((rep.max_row - 1.0).abs() < 1e-12);

        // Rotated violation: y^2 > 2 * x * 0.5 = x.
        let rep = check_feasibility(&p, &[0.25, 0.75, 0.0], 1e-9);
        assert!((rep.max_rsoc - (0.5625 - 0.25)).abs() < 1e-12);

        // Integrality violation.
        let rep = check_feasibility(&p, &[1.0, 0.0, 0.5], 1e-9);
        assert!((rep.max_integrality - 0.5).abs() < 1e-12);
        assert!(!rep.feasible());
    }

    #[test]
    fn rotated_cone_negative_t_is_a_violation() {
        let mut p = Program::new();
        let t = p.add_var("t", -10.0, 10.0, VarKind::Continuous);
        p.add_rsoc(
            LinExpr::of_var(t),
            LinExpr::of_constant(0.0),
            vec![LinExpr::of_constant(0.0)],
            ConeKind::Other,
            "r",
        );
        // With t2 = 0 and u = 0 the quadratic part vanishes; only the sign
        // condition on t1 is broken, by exactly 2.
        let rep = check_feasibility(&p, &[-2.0], 1e-9);
        assert!((rep.max_rsoc - 2.0).abs() < 1e-12);
    }

    #[test]
    fn objective_value_includes_quadratic_and_constant() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        let y = p.add_var("y", 0.0, 10.0, VarKind::Continuous);
        p.add_obj_quad(x, 2.0);
        p.add_obj_lin(x, 1.0);
        p.add_obj_lin(y, -1.0);
        p.obj_const = 5.0;
        // 2*9 + 3 - 4 + 5 = 22.
        assert_eq!(p.objective_value(&[3.0, 4.0]), 22.0);
    }

    #[test]
    fn dump_lists_variables_rows_and_cones() {
        let mut p = Program::new();
        let x = p.add_var("p_g1", 0.0, 1.0, VarKind::Continuous);
        let b = p.add_var("x_g1", 0.0, 1.0, VarKind::Binary);
        p.add_row(
            LinExpr::of_var(x).term(b, -0.8),
            Sense::Le,
            0.0,
            "cap_g1",
        );
        p.add_soc(
            LinExpr::of_constant(2.0),
            vec![LinExpr::of_var(x)],
            ConeKind::Stability,
            "stab",
        );
        let d = p.dump();
        assert!(d.contains("p_g1"));
        assert!(d.contains("cap_g1"));
        assert!(d.contains("<="));
        assert!(d.contains("stab [Stability]"));
        assert!(d.contains("2 vars (1 binary), 1 rows, 1 soc, 0 rsoc"));
    }
}
