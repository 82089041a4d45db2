//! Deterministic best-first branch-and-bound over the binary variables of a
//! conic program.
//!
//! Node order: smallest lower bound first, insertion id breaking ties, so
//! runs are reproducible independent of timing. Branching picks the most
//! fractional binary. A node whose relaxation hits a numeric failure gets
//! one tightened retry; if that also fails the node is branched without
//! pruning (or counted as abandoned when nothing is left to branch on), so
//! numeric trouble can never silently cut off the optimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::program::{check_feasibility, FeasReport, Program};

use super::{SubproblemResult, SubproblemSolver, SubproblemStatus, Tier};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Terminate when `(incumbent - bound) / max(1, |incumbent|)` reaches this.
    pub rel_gap: f64,
    /// A binary within this distance of an integer counts as integral.
    pub int_tol: f64,
    /// Residual tolerance for the independent incumbent check.
    pub feas_tol: f64,
    pub max_nodes: u64,
    pub time_limit: Option<Duration>,
    /// 0 silent, 1 node progress lines.
    pub verbosity: u8,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_gap: 0.02,
            int_tol: 1e-6,
            feas_tol: 1e-6,
            max_nodes: 200_000,
            time_limit: None,
            verbosity: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    /// Incumbent proven within the requested gap.
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub status: BnbStatus,
    pub incumbent: Option<Vec<f64>>,
    pub objective: Option<f64>,
    /// Best proven lower bound on the optimum.
    pub bound: f64,
    /// Achieved relative gap.
    pub rel_gap: f64,
    pub nodes: u64,
    /// Nodes dropped after repeated numeric failure with nothing to branch.
    pub abandoned: u64,
    /// Independent feasibility check of the incumbent.
    pub feas: Option<FeasReport>,
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("program failed validation:\n{}", .0.join("\n"))]
    InvalidProgram(Vec<String>),
    #[error("relaxation is unbounded below")]
    Unbounded,
}

struct Node {
    bound: f64,
    id: u64,
    /// (variable, fixed value) pairs accumulated along the branch path.
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap; invert so the smallest bound pops first,
    // then the oldest insertion id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.id.cmp(&self.id))
    }
}

fn overrides(fixings: &[(usize, f64)]) -> Vec<(usize, f64, f64)> {
    fixings.iter().map(|&(j, v)| (j, v, v)).collect()
}

fn rel_gap(incumbent: f64, bound: f64) -> f64 {
    (incumbent - bound) / 1.0f64.max(incumbent.abs())
}

/// Solve with one tightened retry on numeric failure.
fn solve_with_retry(
    backend: &dyn SubproblemSolver,
    prog: &Program,
    ov: &[(usize, f64, f64)],
) -> SubproblemResult {
    let r = backend.solve(prog, ov, Tier::Standard);
    if r.status == SubproblemStatus::NumericFailure {
        return backend.solve(prog, ov, Tier::Tightened);
    }
    r
}

/// Most fractional unfixed binary: largest distance to the nearest integer.
fn pick_branch_var(
    binaries: &[usize],
    fixings: &[(usize, f64)],
    x: &[f64],
    int_tol: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in binaries {
        if fixings.iter().any(|&(f, _)| f == j) {
            continue;
        }
        let frac = (x[j] - x[j].round()).abs();
        if frac > int_tol {
            match best {
                Some((_, bf)) if bf >= frac => {}
                _ => best = Some((j, frac)),
            }
        }
    }
    best.map(|(j, _)| j)
}

fn first_unfixed(binaries: &[usize], fixings: &[(usize, f64)]) -> Option<usize> {
    binaries
        .iter()
        .copied()
        .find(|j| !fixings.iter().any(|&(f, _)| f == *j))
}

/// Branch-and-bound MISOCP solve.
pub fn solve_misocp(
    prog: &Program,
    backend: &dyn SubproblemSolver,
    cfg: &SolverConfig,
) -> Result<BnbResult, SolveError> {
    let errs = prog.validate();
    if !errs.is_empty() {
        return Err(SolveError::InvalidProgram(errs));
    }
    let binaries = prog.binary_indices();
    let start = Instant::now();

    let mut incumbent: Option<Vec<f64>> = None;
    let mut incumbent_obj = f64::INFINITY;
    let mut nodes_done: u64 = 0;
    let mut abandoned: u64 = 0;
    let mut next_id: u64 = 0;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();

    // An accepted incumbent must clear the independent checker; binaries are
    // snapped exactly before checking so downstream consumers see clean 0/1.
    let try_accept = |x: &mut Vec<f64>,
                          obj: f64,
                          incumbent: &mut Option<Vec<f64>>,
                          incumbent_obj: &mut f64|
     -> bool {
        for &j in &binaries {
            x[j] = x[j].round();
        }
        let rep = check_feasibility(prog, x, cfg.feas_tol);
        if rep.feasible() && obj < *incumbent_obj {
            *incumbent = Some(x.clone());
            *incumbent_obj = obj;
            true
        } else {
            false
        }
    };

    // Root relaxation.
    let root = solve_with_retry(backend, prog, &[]);
    nodes_done += 1;
    match root.status {
        SubproblemStatus::Infeasible => {
            return Ok(BnbResult {
                status: BnbStatus::Infeasible,
                incumbent: None,
                objective: None,
                bound: f64::INFINITY,
                rel_gap: f64::INFINITY,
                nodes: nodes_done,
                abandoned,
                feas: None,
                wall_time: start.elapsed(),
            });
        }
        SubproblemStatus::Unbounded => return Err(SolveError::Unbounded),
        SubproblemStatus::NumericFailure => {
            // Cannot bound the root; explore from an uninformative bound.
            if let Some(j) = first_unfixed(&binaries, &[]) {
                for v in [0.0, 1.0] {
                    heap.push(Node {
                        bound: f64::NEG_INFINITY,
                        id: next_id,
                        fixings: vec![(j, v)],
                    });
                    next_id += 1;
                }
            } else {
                abandoned += 1;
            }
        }
        SubproblemStatus::Optimal => {
            let root_bound = root.safe_bound();
            match pick_branch_var(&binaries, &[], &root.x, cfg.int_tol) {
                None => {
                    // Integral root: polish with binaries pinned, accept.
                    let mut x = root.x.clone();
                    let fixings: Vec<(usize, f64)> =
                        binaries.iter().map(|&j| (j, x[j].round())).collect();
                    let polish = solve_with_retry(backend, prog, &overrides(&fixings));
                    let accepted = if polish.status == SubproblemStatus::Optimal {
                        let mut px = polish.x.clone();
                        try_accept(&mut px, polish.primal_obj, &mut incumbent, &mut incumbent_obj)
                    } else {
                        false
                    };
                    if !accepted {
                        try_accept(&mut x, root.primal_obj, &mut incumbent, &mut incumbent_obj);
                    }
                    let bound = root_bound.min(incumbent_obj);
                    let feas = incumbent
                        .as_ref()
                        .map(|x| check_feasibility(prog, x, cfg.feas_tol));
                    return Ok(BnbResult {
                        status: if incumbent.is_some() {
                            BnbStatus::Optimal
                        } else {
                            BnbStatus::Infeasible
                        },
                        objective: incumbent.as_ref().map(|_| incumbent_obj),
                        rel_gap: if incumbent.is_some() {
                            rel_gap(incumbent_obj, bound).max(0.0)
                        } else {
                            f64::INFINITY
                        },
                        incumbent,
                        bound,
                        nodes: nodes_done,
                        abandoned,
                        feas,
                        wall_time: start.elapsed(),
                    });
                }
                Some(j) => {
                    // Rounding heuristic at the root only: pin every binary to
                    // its nearest integer and solve the rest.
                    let fixings: Vec<(usize, f64)> =
                        binaries.iter().map(|&b| (b, root.x[b].round())).collect();
                    let h = solve_with_retry(backend, prog, &overrides(&fixings));
                    if h.status == SubproblemStatus::Optimal {
                        let mut hx = h.x.clone();
                        try_accept(&mut hx, h.primal_obj, &mut incumbent, &mut incumbent_obj);
                    }
                    for v in [0.0, 1.0] {
                        heap.push(Node {
                            bound: root_bound,
                            id: next_id,
                            fixings: vec![(j, v)],
                        });
                        next_id += 1;
                    }
                }
            }
        }
    }

    let mut status = BnbStatus::Optimal;
    let mut best_bound = f64::NEG_INFINITY;

    while let Some(node) = heap.pop() {
        best_bound = node.bound;
        if incumbent.is_some() && rel_gap(incumbent_obj, best_bound) <= cfg.rel_gap {
            // Best-first order: every open node is at least this bound.
            best_bound = best_bound.min(incumbent_obj);
            break;
        }
        if nodes_done >= cfg.max_nodes {
            status = BnbStatus::NodeLimit;
            break;
        }
        if let Some(limit) = cfg.time_limit {
            if start.elapsed() > limit {
                status = BnbStatus::TimeLimit;
                break;
            }
        }

        let r = solve_with_retry(backend, prog, &overrides(&node.fixings));
        nodes_done += 1;
        if cfg.verbosity >= 1 {
            println!(
                "node {nodes_done}: depth {} status {:?} incumbent {} open {}",
                node.fixings.len(),
                r.status,
                if incumbent.is_some() {
                    format!("{incumbent_obj:.6}")
                } else {
                    "-".into()
                },
                heap.len()
            );
        }

        match r.status {
            SubproblemStatus::Infeasible => continue,
            SubproblemStatus::Unbounded => return Err(SolveError::Unbounded),
            SubproblemStatus::NumericFailure => {
                // Never prune on failure: branch blind with an uninformative
                // bound, or abandon a fully fixed leaf.
                match first_unfixed(&binaries, &node.fixings) {
                    Some(j) => {
                        for v in [0.0, 1.0] {
                            let mut fixings = node.fixings.clone();
                            fixings.push((j, v));
                            heap.push(Node {
                                bound: f64::NEG_INFINITY,
                                id: next_id,
                                fixings,
                            });
                            next_id += 1;
                        }
                    }
                    None => abandoned += 1,
                }
            }
            SubproblemStatus::Optimal => {
                // Child bounds only tighten; inherit the parent's if sharper.
                let bound = r.safe_bound().max(node.bound);
                if incumbent.is_some() && rel_gap(incumbent_obj, bound) <= cfg.rel_gap {
                    continue;
                }
                match pick_branch_var(&binaries, &node.fixings, &r.x, cfg.int_tol) {
                    None => {
                        let fixings: Vec<(usize, f64)> = binaries
                            .iter()
                            .map(|&j| {
                                node.fixings
                                    .iter()
                                    .find(|&&(f, _)| f == j)
                                    .map(|&(_, v)| (j, v))
                                    .unwrap_or((j, r.x[j].round()))
                            })
                            .collect();
                        let polish = solve_with_retry(backend, prog, &overrides(&fixings));
                        let accepted = if polish.status == SubproblemStatus::Optimal {
                            let mut px = polish.x.clone();
                            try_accept(&mut px, polish.primal_obj, &mut incumbent, &mut incumbent_obj)
                        } else {
                            false
                        };
                        if !accepted {
                            let mut x = r.x.clone();
                            if !try_accept(&mut x, r.primal_obj, &mut incumbent, &mut incumbent_obj) {
                                abandoned += 1;
                            }
                        }
                    }
                    Some(j) => {
                        for v in [0.0, 1.0] {
                            let mut fixings = node.fixings.clone();
                            fixings.push((j, v));
                            heap.push(Node { bound, id: next_id, fixings });
                            next_id += 1;
                        }
                    }
                }
            }
        }
    }

    if heap.is_empty() && status == BnbStatus::Optimal {
        // Tree exhausted: the incumbent is exact (up to abandoned nodes).
        best_bound = incumbent_obj.min(best_bound.max(f64::NEG_INFINITY));
        if incumbent.is_some() {
            best_bound = incumbent_obj;
        }
    }

    let feas = incumbent
        .as_ref()
        .map(|x| check_feasibility(prog, x, cfg.feas_tol));
    if incumbent.is_none() {
        // Exhausted without an incumbent: infeasible unless we gave up early.
        if status == BnbStatus::Optimal && abandoned == 0 {
            status = BnbStatus::Infeasible;
        } else if status == BnbStatus::Optimal {
            status = BnbStatus::NodeLimit;
        }
    }
    Ok(BnbResult {
        status,
        objective: incumbent.as_ref().map(|_| incumbent_obj),
        rel_gap: if incumbent.is_some() {
            rel_gap(incumbent_obj, best_bound).max(0.0)
        } else {
            f64::INFINITY
        },
        bound: best_bound,
        incumbent,
        nodes: nodes_done,
        abandoned,
        feas,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{ConeKind, LinExpr, Program, Sense, VarKind};
    use crate::solver::ClarabelSolver;

    fn cfg_exact() -> SolverConfig {
        SolverConfig { rel_gap: 1e-6, ..SolverConfig::default() }
    }

    #[test]
    fn pure_continuous_program_returns_at_root() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        p.add_row(LinExpr::of_var(x), Sense::Ge, 3.0, "floor");
        p.add_obj_lin(x, 1.0);
        let r = solve_misocp(&p, &ClarabelSolver, &cfg_exact()).unwrap();
        assert_eq!(r.status, BnbStatus::Optimal);
        assert!((r.objective.unwrap() - 3.0).abs() < 1e-5);
        assert_eq!(r.nodes, 1);
        assert!(r.feas.is_none() || r.feas.unwrap().feasible());
    }

    #[test]
    fn binary_selection_minimizes_cost() {
        // min -x1 - 2 x2 s.t. x1 + x2 <= 1, binaries: optimum -2 at (0, 1).
        let mut p = Program::new();
        let x1 = p.add_var("x1", 0.0, 1.0, VarKind::Binary);
        let x2 = p.add_var("x2", 0.0, 1.0, VarKind::Binary);
        p.add_row(LinExpr::of_var(x1).term(x2, 1.0), Sense::Le, 1.0, "pick_one");
        p.add_obj_lin(x1, -1.0);
        p.add_obj_lin(x2, -2.0);
        let r = solve_misocp(&p, &ClarabelSolver, &cfg_exact()).unwrap();
        assert_eq!(r.status, BnbStatus::Optimal);
        assert!((r.objective.unwrap() + 2.0).abs() < 1e-5);
        let x = r.incumbent.unwrap();
        assert_eq!(x[x1], 0.0);
        assert_eq!(x[x2], 1.0);
        assert!(r.feas.unwrap().feasible());
    }

    #[test]
    fn infeasible_program_is_flagged() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, 1.0, VarKind::Binary);
        p.add_row(LinExpr::of_var(x), Sense::Ge, 2.0, "impossible");
        let r = solve_misocp(&p, &ClarabelSolver, &cfg_exact()).unwrap();
        assert_eq!(r.status, BnbStatus::Infeasible);
        assert!(r.incumbent.is_none());
    }

    #[test]
    fn misocp_with_fixed_cost_commitment() {
        // Two "units": pay 1.0 to open x, capacity cone then allows flow.
        // min 1*x1 + 1.5*x2 + t  s.t. ||(y,)|| <= t, y = 2 - x1 - x2... keep
        // it crisply verifiable: y >= 1.4 required, y <= x1 + x2 (so at
        // least 2 opens when y > 1): optimum opens only x1 at y <= 1.
        // Simpler exactly-checkable instance:
        //   min x1 + 1.5 x2 + 2 t
        //   s.t. t >= ||y||, y >= 0.6, y <= 0.5 x1 + 0.5 x2.
        // One unit gives y max 0.5 < 0.6 infeasible; both give y = 0.6,
        // t = 0.6: obj = 1 + 1.5 + 1.2 = 3.7.
        let mut p = Program::new();
        let x1 = p.add_var("x1", 0.0, 1.0, VarKind::Binary);
        let x2 = p.add_var("x2", 0.0, 1.0, VarKind::Binary);
        let y = p.add_var("y", 0.0, 2.0, VarKind::Continuous);
        let t = p.add_var("t", 0.0, 2.0, VarKind::Continuous);
        p.add_soc(LinExpr::of_var(t), vec![LinExpr::of_var(y)], ConeKind::Other, "norm");
        p.add_row(LinExpr::of_var(y), Sense::Ge, 0.6, "demand");
        p.add_row(
            LinExpr::of_var(y).term(x1, -0.5).term(x2, -0.5),
            Sense::Le,
            0.0,
            "cap",
        );
        p.add_obj_lin(x1, 1.0);
        p.add_obj_lin(x2, 1.5);
        p.add_obj_lin(t, 2.0);
        let r = solve_misocp(&p, &ClarabelSolver, &cfg_exact()).unwrap();
        assert_eq!(r.status, BnbStatus::Optimal);
        assert!((r.objective.unwrap() - 3.7).abs() < 1e-4, "obj {}", r.objective.unwrap());
        let x = r.incumbent.unwrap();
        assert_eq!((x[x1], x[x2]), (1.0, 1.0));
    }

    #[test]
    fn gap_limit_terminates_with_bound_report() {
        // Loose-gap run on a toy: any incumbent within 50% is acceptable.
        let mut p = Program::new();
        let x1 = p.add_var("x1", 0.0, 1.0, VarKind::Binary);
        let x2 = p.add_var("x2", 0.0, 1.0, VarKind::Binary);
        p.add_row(LinExpr::of_var(x1).term(x2, 1.0), Sense::Ge, 1.0, "cover");
        p.add_obj_lin(x1, 1.0);
        p.add_obj_lin(x2, 1.1);
        let cfg = SolverConfig { rel_gap: 0.5, ..SolverConfig::default() };
        let r = solve_misocp(&p, &ClarabelSolver, &cfg).unwrap();
        assert_eq!(r.status, BnbStatus::Optimal);
        assert!(r.rel_gap <= 0.5);
        assert!(r.objective.unwrap() <= 1.1 + 1e-6);
        assert!(r.bound <= r.objective.unwrap() + 1e-9);
    }

    #[test]
    fn node_limit_is_honored() {
        let mut p = Program::new();
        let vars: Vec<usize> = (0..6)
            .map(|i| p.add_var(format!("x{i}"), 0.0, 1.0, VarKind::Binary))
            .collect();
        let mut cover = LinExpr::new();
        for &v in &vars {
            cover.add_term(v, 1.0);
            p.add_obj_lin(v, 1.0 + 0.01 * v as f64);
        }
        p.add_row(cover, Sense::Ge, 2.5, "cover");
        let cfg = SolverConfig { rel_gap: 1e-9, max_nodes: 2, ..SolverConfig::default() };
        let r = solve_misocp(&p, &ClarabelSolver, &cfg).unwrap();
        assert!(r.nodes <= 3);
        assert!(matches!(r.status, BnbStatus::NodeLimit | BnbStatus::Optimal));
    }

    #[test]
    fn bound_never_exceeds_objective() {
        let mut p = Program::new();
        let b: Vec<usize> = (0..4)
            .map(|i| p.add_var(format!("b{i}"), 0.0, 1.0, VarKind::Binary))
            .collect();
        let y = p.add_var("y", 0.0, 4.0, VarKind::Continuous);
        let mut sum = LinExpr::of_var(y);
        for &v in &b {
            sum.add_term(v, -0.7);
        }
        p.add_row(sum, Sense::Le, 0.0, "cap");
        p.add_row(LinExpr::of_var(y), Sense::Ge, 1.0, "demand");
        for &v in &b {
            p.add_obj_lin(v, 2.0);
        }
        p.add_obj_quad(y, 0.5);
        let r = solve_misocp(&p, &ClarabelSolver, &cfg_exact()).unwrap();
        assert_eq!(r.status, BnbStatus::Optimal);
        // Optimum: two units on, y = 1: obj = 4 + 0.5.
        assert!((r.objective.unwrap() - 4.5).abs() < 1e-4);
        assert!(r.bound <= r.objective.unwrap() + 1e-9);
        assert!(r.rel_gap >= 0.0);
    }
}
