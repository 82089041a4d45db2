//! Assembly of the full scheduling MISOCP from a case, a scenario tree and,
//! in the stability-constrained modes, fitted impedance-ratio models.
//!
//! Commitment decisions (machine on/off, condenser on/off, admittance-share
//! level selection) are first stage: one copy per hour, shared by every tree
//! node of that hour. Dispatch, voltages and flows are second stage: one copy
//! per tree node. Three modes are built from the same pieces:
//!
//! * `BaseSi` - commitment, SOC network, capability and frequency rows only;
//!   IBG reactive power pinned to zero and no stability cones.
//! * `VscSi` - adds the learned voltage-stability cone at each IBG bus.
//! * `VscQSi` - additionally lets each IBG dispatch reactive power within
//!   its apparent-power rating.

mod frequency;
mod linearize;
mod network;
mod stability;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::admittance::DevicePoint;
use crate::case::GridCase;
use crate::program::{LinExpr, Program, Sense, VarKind};
use crate::scenario::{node_realization, Realization, ScenarioTree};
use crate::surrogate::{FeatureSpace, FeatureTerm, Surrogate};

/// Scheduling strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    BaseSi,
    VscSi,
    VscQSi,
}

impl Mode {
    /// Stability cones are built in this mode.
    pub fn uses_stability(self) -> bool {
        !matches!(self, Mode::BaseSi)
    }

    /// IBG reactive power is a free decision in this mode.
    pub fn ibg_q_free(self) -> bool {
        matches!(self, Mode::VscQSi)
    }

    pub const ALL: [Mode; 3] = [Mode::BaseSi, Mode::VscSi, Mode::VscQSi];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::BaseSi => "base_si",
            Mode::VscSi => "vsc_si",
            Mode::VscQSi => "vsc_q_si",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s.to_ascii_lowercase().as_str() {
            "base_si" => Ok(Mode::BaseSi),
            "vsc_si" => Ok(Mode::VscSi),
            "vsc_q_si" => Ok(Mode::VscQSi),
            other => Err(format!(
                "unknown mode `{other}`; expected base_si, vsc_si or vsc_q_si"
            )),
        }
    }
}

/// Build-time switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub mode: Mode,
    /// Model any STATCOM devices present in the case.
    pub statcom_enabled: bool,
    /// Add the inertia, nadir and RoCoF constraints.
    pub freq_enabled: bool,
}

impl Default for BuildOptions {
    fn default() -> BuildOptions {
        BuildOptions { mode: Mode::BaseSi, statcom_enabled: true, freq_enabled: true }
    }
}

impl BuildOptions {
    pub fn for_mode(mode: Mode) -> BuildOptions {
        BuildOptions { mode, ..BuildOptions::default() }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("mode {0} needs fitted impedance-ratio models")]
    SurrogateRequired(Mode),
    #[error("impedance-ratio models do not match the case fleet: {0}")]
    SurrogateMismatch(String),
    #[error("variable {0} is unbounded; its products cannot be linearized")]
    UnboundedFactor(String),
}

/// Handles of every registered decision variable, by symbol and index.
///
/// First-stage handles are indexed `[hour][device]`; second-stage handles
/// `[node][device]` (or `[node][bus]`, `[node][line]`). The build also
/// deposits the shared linearization registries here so tests and reports can
/// inspect the auxiliary variables.
#[derive(Debug, Clone, Default)]
pub struct VariableMap {
    pub horizon: usize,
    pub n_nodes: usize,

    /// Machine commitment binaries.
    pub x: Vec<Vec<usize>>,
    /// Startup indicators (continuous in [0,1]; integral at integral x).
    pub u: Vec<Vec<usize>>,
    /// Shutdown indicators.
    pub v: Vec<Vec<usize>>,
    /// Condenser commitment binaries, aligned with `sc_device_indices`.
    pub x_sc: Vec<Vec<usize>>,
    /// One-hot admittance-share selectors, `[hour][plant][level]`.
    pub lambda: Vec<Vec<Vec<usize>>>,

    pub p_sg: Vec<Vec<usize>>,
    pub q_sg: Vec<Vec<usize>>,
    pub p_gfm: Vec<Vec<usize>>,
    pub p_ibg: Vec<Vec<usize>>,
    pub q_ibg: Vec<Vec<usize>>,
    /// STATCOM reactive injections, aligned with `statcom_device_indices`;
    /// empty rows when the device model is disabled.
    pub q_stat: Vec<Vec<usize>>,
    pub q_sc: Vec<Vec<usize>>,
    /// Load shed per bus; `None` where the realized load is zero.
    pub shed: Vec<Vec<Option<usize>>>,

    /// Squared voltage magnitudes `[node][bus]`.
    pub c_ii: Vec<Vec<usize>>,
    /// Lifted cosine products `[node][line]`.
    pub c_ij: Vec<Vec<usize>>,
    /// Lifted sine products `[node][line]`.
    pub s_ij: Vec<Vec<usize>>,
    pub p_from: Vec<Vec<usize>>,
    pub q_from: Vec<Vec<usize>>,
    pub p_to: Vec<Vec<usize>>,
    pub q_to: Vec<Vec<usize>>,

    /// Aggregate synchronous inertia per hour (empty when frequency rows are
    /// disabled).
    pub h_total: Vec<usize>,
    /// Aggregate primary response per hour.
    pub r_total: Vec<usize>,
    /// Synthetic-inertia schedules `[hour][provider]`, aligned with
    /// `si_ibg_indices`.
    pub h_sj: Vec<Vec<usize>>,
    pub si_ibg_indices: Vec<usize>,

    /// AND auxiliaries keyed by the (lower, higher) factor variable pair.
    pub and_vars: BTreeMap<(usize, usize), usize>,
    /// McCormick product auxiliaries keyed by (unit-interval var, factor var).
    pub product_vars: BTreeMap<(usize, usize), usize>,

    /// Positions in `GridCase::shunt_devices` of the condensers / STATCOMs.
    pub sc_device_indices: Vec<usize>,
    pub statcom_device_indices: Vec<usize>,

    /// Non-fatal build diagnostics (window truncation and similar).
    pub notes: Vec<String>,
}

impl VariableMap {
    /// Admittance-share value of plant `m` at hour `t` in a solution.
    pub fn alpha_at(&self, case: &GridCase, sol: &[f64], t: usize, m: usize) -> f64 {
        let levels = case.gfm_units[m].alpha_levels as usize;
        (0..levels)
            .map(|l| sol[self.lambda[t][m][l]] * l as f64 / (levels - 1) as f64)
            .sum()
    }

    /// Device operating point at hour `t` of a solution, in the layout the
    /// impedance and surrogate layers expect.
    pub fn device_point(&self, case: &GridCase, sol: &[f64], t: usize) -> DevicePoint {
        DevicePoint {
            sg_on: self.x[t].iter().map(|&j| sol[j].round().clamp(0.0, 1.0)).collect(),
            gfm_alpha: (0..case.gfm_units.len())
                .map(|m| self.alpha_at(case, sol, t, m))
                .collect(),
            sc_on: self.x_sc[t].iter().map(|&j| sol[j].round().clamp(0.0, 1.0)).collect(),
        }
    }
}

pub(crate) struct Builder<'a> {
    case: &'a GridCase,
    tree: &'a ScenarioTree,
    surrogate: Option<&'a Surrogate>,
    opts: &'a BuildOptions,
    prog: Program,
    vars: VariableMap,
    realizations: Vec<Realization>,
    feature_terms: Vec<FeatureTerm>,
}

/// Assemble the full program for one mode.
///
/// The returned program satisfies the IR invariants; the map addresses every
/// variable the program contains.
pub fn build(
    case: &GridCase,
    tree: &ScenarioTree,
    surrogate: Option<&Surrogate>,
    opts: &BuildOptions,
) -> Result<(Program, VariableMap), BuildError> {
    if opts.mode.uses_stability() && surrogate.is_none() {
        return Err(BuildError::SurrogateRequired(opts.mode));
    }
    if let Some(sur) = surrogate {
        let want = FeatureSpace::from_case(case);
        if sur.space != want {
            return Err(BuildError::SurrogateMismatch(format!(
                "feature space mismatch: model has {} binaries / {} plants, case has {} / {}",
                sur.space.n_binary(),
                sur.space.n_gfm(),
                want.n_binary(),
                want.n_gfm()
            )));
        }
        let names: Vec<String> = case.gfl_ibgs.iter().map(|c| c.name.clone()).collect();
        if sur.ibg_names != names {
            return Err(BuildError::SurrogateMismatch(format!(
                "IBG fleet mismatch: model was fitted for {:?}, case has {:?}",
                sur.ibg_names, names
            )));
        }
    }

    let realizations: Vec<Realization> =
        (0..tree.n_nodes()).map(|n| node_realization(case, tree, n)).collect();
    let feature_terms = match surrogate {
        Some(s) => s.space.terms(),
        None => Vec::new(),
    };

    let mut b = Builder {
        case,
        tree,
        surrogate,
        opts,
        prog: Program::new(),
        vars: VariableMap {
            horizon: tree.horizon,
            n_nodes: tree.n_nodes(),
            sc_device_indices: case.sc_indices(),
            statcom_device_indices: case.statcom_indices(),
            ..VariableMap::default()
        },
        realizations,
        feature_terms,
    };

    b.add_first_stage();
    b.add_network();
    b.add_commitment();
    b.add_stability()?;
    b.add_frequency();
    b.add_objective();

    let issues = b.prog.validate();
    assert!(issues.is_empty(), "builder produced an invalid program: {issues:?}");
    Ok((b.prog, b.vars))
}

impl Builder<'_> {
    /// Register hourly commitment variables and the one-hot selector rows.
    fn add_first_stage(&mut self) {
        let case = self.case;
        for t in 0..self.tree.horizon {
            let mut x = Vec::with_capacity(case.sync_gens.len());
            let mut u = Vec::with_capacity(case.sync_gens.len());
            let mut v = Vec::with_capacity(case.sync_gens.len());
            for g in &case.sync_gens {
                x.push(self.prog.add_var(
                    format!("x[{},t{t}]", g.name),
                    0.0,
                    1.0,
                    VarKind::Binary,
                ));
                u.push(self.prog.add_var(
                    format!("u[{},t{t}]", g.name),
                    0.0,
                    1.0,
                    VarKind::Continuous,
                ));
                v.push(self.prog.add_var(
                    format!("v[{},t{t}]", g.name),
                    0.0,
                    1.0,
                    VarKind::Continuous,
                ));
            }
            self.vars.x.push(x);
            self.vars.u.push(u);
            self.vars.v.push(v);

            let mut x_sc = Vec::new();
            let devices = self.vars.sc_device_indices.clone();
            for &d in &devices {
                x_sc.push(self.prog.add_var(
                    format!("x[{},t{t}]", case.shunt_devices[d].name),
                    0.0,
                    1.0,
                    VarKind::Binary,
                ));
            }
            self.vars.x_sc.push(x_sc);

            let mut lambda = Vec::with_capacity(case.gfm_units.len());
            for g in &case.gfm_units {
                let mut levels = Vec::with_capacity(g.alpha_levels as usize);
                let mut onehot = LinExpr::new();
                for l in 0..g.alpha_levels {
                    let lv = self.prog.add_var(
                        format!("lam[{},l{l},t{t}]", g.name),
                        0.0,
                        1.0,
                        VarKind::Binary,
                    );
                    onehot.add_term(lv, 1.0);
                    levels.push(lv);
                }
                self.prog
                    .add_row(onehot, Sense::Eq, 1.0, format!("onehot[{},t{t}]", g.name));
                lambda.push(levels);
            }
            self.vars.lambda.push(lambda);
        }
    }

    /// Transition logic, minimum up/down windows, initial-state forcing,
    /// commitment-coupled dispatch bounds and ramps.
    fn add_commitment(&mut self) {
        let case = self.case;
        let horizon = self.tree.horizon;
        let dt = self.tree.dt;

        for (g, gen) in case.sync_gens.iter().enumerate() {
            let min_up = (gen.min_up.max(1)) as usize;
            let min_down = (gen.min_down.max(1)) as usize;
            if min_up > horizon || min_down > horizon {
                self.vars.notes.push(format!(
                    "{}: min up/down ({}/{}) exceeds the horizon ({}); windows truncated",
                    gen.name, gen.min_up, gen.min_down, horizon
                ));
            }
            let init_x = if gen.init_on { 1.0 } else { 0.0 };

            for t in 0..horizon {
                let mut trans = LinExpr::of_var(self.vars.x[t][g])
                    .term(self.vars.u[t][g], -1.0)
                    .term(self.vars.v[t][g], 1.0);
                let rhs = if t == 0 {
                    init_x
                } else {
                    trans.add_term(self.vars.x[t - 1][g], -1.0);
                    0.0
                };
                self.prog
                    .add_row(trans, Sense::Eq, rhs, format!("trans[{},t{t}]", gen.name));

                let mut up = LinExpr::new().term(self.vars.x[t][g], -1.0);
                for tau in t.saturating_sub(min_up - 1)..=t {
                    up.add_term(self.vars.u[tau][g], 1.0);
                }
                self.prog
                    .add_row(up, Sense::Le, 0.0, format!("minup[{},t{t}]", gen.name));

                let mut down = LinExpr::new().term(self.vars.x[t][g], 1.0);
                for tau in t.saturating_sub(min_down - 1)..=t {
                    down.add_term(self.vars.v[tau][g], 1.0);
                }
                self.prog
                    .add_row(down, Sense::Le, 1.0, format!("mindown[{},t{t}]", gen.name));
            }

            // Remaining obligation from the pre-horizon state.
            let held = gen.init_hours as usize;
            if gen.init_on && held < min_up {
                for t in 0..(min_up - held).min(horizon) {
                    self.prog.vars[self.vars.x[t][g]].lb = 1.0;
                }
            }
            if !gen.init_on && held < min_down {
                for t in 0..(min_down - held).min(horizon) {
                    self.prog.vars[self.vars.x[t][g]].ub = 0.0;
                }
            }
        }

        for n in 0..self.tree.n_nodes() {
            let t = self.tree.nodes[n].t;
            let parent = self.tree.nodes[n].parent;
            for (g, gen) in case.sync_gens.iter().enumerate() {
                let p = self.vars.p_sg[n][g];
                let q = self.vars.q_sg[n][g];
                let x = self.vars.x[t][g];
                let name = &gen.name;
                self.prog.add_row(
                    LinExpr::of_var(p).term(x, -gen.p_max),
                    Sense::Le,
                    0.0,
                    format!("sg_pmax[{name},n{n}]"),
                );
                self.prog.add_row(
                    LinExpr::of_var(p).term(x, -gen.p_min),
                    Sense::Ge,
                    0.0,
                    format!("sg_pmin[{name},n{n}]"),
                );
                self.prog.add_row(
                    LinExpr::of_var(q).term(x, -gen.q_max),
                    Sense::Le,
                    0.0,
                    format!("sg_qmax[{name},n{n}]"),
                );
                self.prog.add_row(
                    LinExpr::of_var(q).term(x, -gen.q_min),
                    Sense::Ge,
                    0.0,
                    format!("sg_qmin[{name},n{n}]"),
                );

                // Ramps against the parent node, with start/stop allowances
                // sized so a unit can enter or leave at minimum output.
                let limit = gen.ramp * dt;
                let mut up = LinExpr::of_var(p).term(self.vars.u[t][g], -gen.p_min);
                let mut down = LinExpr::new().term(p, -1.0).term(self.vars.v[t][g], -gen.p_min);
                let (up_rhs, down_rhs) = match parent {
                    Some(pa) => {
                        up.add_term(self.vars.p_sg[pa][g], -1.0);
                        down.add_term(self.vars.p_sg[pa][g], 1.0);
                        (limit, limit)
                    }
                    None => {
                        let p0 = if gen.init_on { gen.init_p } else { 0.0 };
                        (limit + p0, limit - p0)
                    }
                };
                self.prog
                    .add_row(up, Sense::Le, up_rhs, format!("ramp_up[{name},n{n}]"));
                self.prog
                    .add_row(down, Sense::Le, down_rhs, format!("ramp_dn[{name},n{n}]"));
            }
        }
    }

    /// Expected operating cost: dispatch, no-load and shed terms weighted by
    /// node probability and duration; startup terms weighted by probability
    /// alone (hourly stage masses sum to one, so each startup is counted
    /// exactly once).
    fn add_objective(&mut self) {
        let case = self.case;
        let base = case.base_mva;
        let dt = self.tree.dt;
        for n in 0..self.tree.n_nodes() {
            let t = self.tree.nodes[n].t;
            let pi = self.tree.nodes[n].prob;
            let w = pi * dt;
            for (g, gen) in case.sync_gens.iter().enumerate() {
                self.prog.add_obj_quad(self.vars.p_sg[n][g], w * gen.cost_quad * base * base);
                self.prog.add_obj_lin(self.vars.p_sg[n][g], w * gen.cost_lin * base);
                self.prog.add_obj_lin(self.vars.x[t][g], w * gen.cost_noload);
                self.prog.add_obj_lin(self.vars.u[t][g], pi * gen.cost_startup);
            }
            for b in 0..case.n_buses() {
                if let Some(sv) = self.vars.shed[n][b] {
                    self.prog.add_obj_lin(sv, w * case.shed_cost * base);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;
    use crate::program::ConeKind;
    use crate::scenario::{build_tree, Quantile};
    use crate::solver::{ClarabelSolver, SubproblemSolver, SubproblemStatus, Tier};
    use crate::surrogate::{train, FitMetrics, FittedModel};

    fn one_bus_case(p_load: f64, q_load: f64) -> GridCase {
        let text = format!(
            r#"
base_mva = 1.0
units = "pu"

[[buses]]
id = 1
is_reference = true
p_load = {p_load}
q_load = {q_load}

[[sync_gens]]
name = "G1"
bus = 1
p_min = 0.1
p_max = 1.0
q_min = -0.5
q_max = 0.8
ramp = 10.0
min_up = 2
min_down = 1
x_transient = 0.2
inertia_h = 5.0
pfr_gain = 40.0
cost_quad = 10.0
cost_lin = 20.0
cost_noload = 5.0
cost_startup = 0.0

[frequency]
dp_l = 0.3
df_lim = 0.008
t_d = 10.0
damping_d = 0.5
rocof_max = 0.1

[costs]
shed = 10000.0
"#
        );
        parse_case(&text).expect("fixture parses")
    }

    /// One machine, one grid-following plant behind a line; used for the
    /// hand-checked stability-cone arithmetic.
    fn sg_ibg_case() -> GridCase {
        let text = r#"
base_mva = 1.0
units = "pu"

[[buses]]
id = 1
is_reference = true

[[buses]]
id = 2
p_load = 0.3
q_load = 0.05

[[lines]]
from = 1
to = 2
r = 0.01
x = 0.1

[[sync_gens]]
name = "G1"
bus = 1
p_min = 0.0
p_max = 2.0
q_min = -1.0
q_max = 1.0
ramp = 10.0
min_up = 1
min_down = 1
x_transient = 0.3
inertia_h = 4.0
pfr_gain = 20.0
cost_quad = 1.0
cost_lin = 10.0
cost_noload = 2.0
cost_startup = 1.0

[[gfl_ibgs]]
name = "W1"
bus = 2
s_max = 1.0
available = [0.8]
si_capable = true
h_si_max = 2.0

[frequency]
dp_l = 0.3
df_lim = 0.008
t_d = 10.0
damping_d = 0.5
rocof_max = 0.1

[costs]
shed = 10000.0
"#;
        parse_case(text).expect("fixture parses")
    }

    /// Two machines, a three-level grid-forming plant, two grid-following
    /// plants, a STATCOM and a condenser: every device class at once.
    fn full_fleet_case() -> GridCase {
        let text = r#"
base_mva = 1.0
units = "pu"

[[buses]]
id = 1
is_reference = true

[[buses]]
id = 2
p_load = 0.4
q_load = 0.1

[[buses]]
id = 3
p_load = 0.2
q_load = 0.05

[[lines]]
from = 1
to = 2
r = 0.01
x = 0.08

[[lines]]
from = 2
to = 3
r = 0.02
x = 0.12

[[sync_gens]]
name = "G1"
bus = 1
p_min = 0.1
p_max = 1.5
q_min = -0.8
q_max = 1.0
ramp = 10.0
min_up = 1
min_down = 1
x_transient = 0.25
inertia_h = 5.0
pfr_gain = 30.0
cost_quad = 5.0
cost_lin = 15.0
cost_noload = 3.0
cost_startup = 10.0

[[gfm_units]]
name = "V1"
bus = 3
x_transient = 0.4
p_max = 0.5
alpha_levels = 3

[[gfl_ibgs]]
name = "W1"
bus = 2
s_max = 1.0
available = [0.6, 0.7]
si_capable = true
h_si_max = 2.0

[[gfl_ibgs]]
name = "W2"
bus = 3
s_max = 0.8
available = [0.5, 0.5]

[[shunt_devices]]
name = "ST1"
bus = 2
kind = "statcom"
q_rating = 0.3
i_max = 0.3

[[shunt_devices]]
name = "SC1"
bus = 3
kind = "sync_cond"
q_rating = 0.2
x_transient = 0.5

[frequency]
dp_l = 0.3
df_lim = 0.008
t_d = 10.0
damping_d = 0.5
rocof_max = 0.1

[costs]
shed = 10000.0
"#;
        parse_case(text).expect("fixture parses")
    }

    fn chain(horizon: usize) -> crate::scenario::ScenarioTree {
        build_tree(horizon, 1.0, &[], &[]).expect("chain tree")
    }

    fn no_freq(mode: Mode) -> BuildOptions {
        BuildOptions { mode, statcom_enabled: true, freq_enabled: false }
    }

    /// Solve the continuous relaxation with some variables pinned.
    fn relax(prog: &Program, pins: &[(usize, f64)]) -> (SubproblemStatus, Vec<f64>) {
        let overrides: Vec<(usize, f64, f64)> = pins.iter().map(|&(j, v)| (j, v, v)).collect();
        let solver = ClarabelSolver;
        let r = solver.solve(prog, &overrides, Tier::Standard);
        (r.status, r.x)
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("socp".parse::<Mode>().is_err());
    }

    #[test]
    fn vsc_mode_requires_surrogate() {
        let case = sg_ibg_case();
        let tree = chain(1);
        let err = build(&case, &tree, None, &no_freq(Mode::VscSi)).unwrap_err();
        assert!(matches!(err, BuildError::SurrogateRequired(Mode::VscSi)));
    }

    #[test]
    fn mismatched_surrogate_rejected() {
        let case = sg_ibg_case();
        let other = full_fleet_case();
        let sur = train(&other).expect("trainable");
        let tree = chain(1);
        let err = build(&case, &tree, Some(&sur), &no_freq(Mode::VscSi)).unwrap_err();
        assert!(matches!(err, BuildError::SurrogateMismatch(_)));
    }

    #[test]
    fn one_bus_balance_pins_dispatch() {
        let case = one_bus_case(0.5, 0.1);
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let (status, x) = relax(&prog, &[(vars.x[0][0], 1.0)]);
        assert_eq!(status, SubproblemStatus::Optimal);
        assert!((x[vars.p_sg[0][0]] - 0.5).abs() < 1e-6, "P pinned by balance");
        assert!((x[vars.q_sg[0][0]] - 0.1).abs() < 1e-6, "Q pinned by balance");
    }

    #[test]
    fn single_period_on_and_off_both_feasible_without_load() {
        let mut case = one_bus_case(0.0, 0.0);
        // A positive minimum output would contradict the zero-load balance
        // whenever the unit is pinned on; this test is about the coupling
        // rows themselves, not minimum-generation infeasibility.
        case.sync_gens[0].p_min = 0.0;
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        for pin in [0.0, 1.0] {
            let (status, x) = relax(&prog, &[(vars.x[0][0], pin)]);
            assert_eq!(status, SubproblemStatus::Optimal, "x = {pin}");
            assert!(x[vars.p_sg[0][0]].abs() < 1e-6, "zero load means zero output");
        }
        // Pinned off, the coupling rows force zero even if load appears: a
        // positive load with the unit off must be infeasible (no shed var
        // exists on an unloaded bus, so use the loaded fixture).
        let loaded = one_bus_case(0.4, 0.0);
        let (prog2, vars2) = build(&loaded, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let (status2, x2) = relax(&prog2, &[(vars2.x[0][0], 0.0)]);
        assert_eq!(status2, SubproblemStatus::Optimal, "shed bails out the off state");
        let sv = vars2.shed[0][0].expect("loaded bus carries shed");
        assert!((x2[sv] - 0.4).abs() < 1e-6, "all load shed when the only unit is off");
    }

    #[test]
    fn min_up_window_blocks_early_shutdown() {
        let case = one_bus_case(0.3, 0.0);
        let tree = chain(3);
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let pin = |pat: [f64; 3]| -> Vec<(usize, f64)> {
            (0..3).map(|t| (vars.x[t][0], pat[t])).collect()
        };
        let (ok, _) = relax(&prog, &pin([0.0, 1.0, 1.0]));
        assert_eq!(ok, SubproblemStatus::Optimal, "staying on for min_up is allowed");
        let (bad, _) = relax(&prog, &pin([0.0, 1.0, 0.0]));
        assert_eq!(bad, SubproblemStatus::Infeasible, "min_up = 2 forbids a one-hour run");
    }

    #[test]
    fn simultaneous_start_and_stop_excluded() {
        let case = one_bus_case(0.3, 0.0);
        let tree = chain(2);
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let (status, _) = relax(&prog, &[(vars.u[0][0], 1.0), (vars.v[0][0], 1.0)]);
        assert_eq!(status, SubproblemStatus::Infeasible);
    }

    #[test]
    fn objective_matches_hand_arithmetic() {
        // P = 1 with (quad, lin, noload) = (10, 20, 5): 10 + 20 + 5 = 35.
        let case = one_bus_case(1.0, 0.1);
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let solver = ClarabelSolver;
        let r = solver.solve(&prog, &[(vars.x[0][0], 1.0, 1.0)], Tier::Standard);
        assert_eq!(r.status, SubproblemStatus::Optimal);
        assert!((r.primal_obj - 35.0).abs() < 1e-4, "objective {}", r.primal_obj);
    }

    #[test]
    fn shed_cost_coefficient_is_expected_value_weighted() {
        // Two equiprobable branches at 10000 $/pu-h on a unit base: each
        // leaf shed coefficient is 0.5 * 10000, so 0.1 pu of shed in one
        // leaf prices at 500 $.
        let case = one_bus_case(0.5, 0.0);
        let half = Quantile { mass: 0.5, wind_dev: 0.0, load_dev: 0.0 };
        let tree = build_tree(2, 1.0, &[1], &[half, half]).unwrap();
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let leaves: Vec<usize> = tree.leaves().to_vec();
        assert_eq!(leaves.len(), 2);
        for &n in &leaves {
            let sv = vars.shed[n][0].expect("loaded bus has a shed handle");
            assert!((prog.obj_lin[sv] - 5000.0).abs() < 1e-9);
            assert!((0.1 * prog.obj_lin[sv] - 500.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nadir_cone_reduces_to_hr_without_synthetic_inertia() {
        let case = one_bus_case(0.5, 0.1);
        let tree = chain(1);
        let opts = BuildOptions::for_mode(Mode::BaseSi);
        let (prog, vars) = build(&case, &tree, None, &opts).unwrap();
        let nadir: Vec<_> = prog.rsocs.iter().filter(|c| c.kind == ConeKind::Nadir).collect();
        assert_eq!(nadir.len(), 1);
        let cone = nadir[0];
        assert_eq!(cone.u.len(), 1, "no synthetic-inertia members");
        assert!(cone.u[0].terms.is_empty());
        assert!((cone.u[0].constant.powi(2) - 27.75).abs() < 1e-12, "x1^2 = 27.75");
        assert_eq!(cone.t1.terms, vec![(vars.h_total[0], std::f64::consts::FRAC_1_SQRT_2)]);
        assert_eq!(cone.t2.terms, vec![(vars.r_total[0], std::f64::consts::FRAC_1_SQRT_2)]);
    }

    #[test]
    fn nadir_cone_carries_weighted_si_members() {
        let case = sg_ibg_case();
        let tree = chain(1);
        let opts = BuildOptions::for_mode(Mode::BaseSi);
        let (prog, vars) = build(&case, &tree, None, &opts).unwrap();
        let cone = prog
            .rsocs
            .iter()
            .find(|c| c.kind == ConeKind::Nadir)
            .expect("nadir cone present");
        assert_eq!(cone.u.len(), 2);
        let coeff = cone.u[1].terms[0].1;
        let k = case.freq_params.si_penalty_coeff();
        assert!((coeff * coeff - k).abs() < 1e-12, "member weight is sqrt(dP T/4)");
        assert_eq!(cone.u[1].terms[0].0, vars.h_sj[0][0]);
    }

    #[test]
    fn stability_cone_boundary_by_hand() {
        // One binary feature, coefficient 2: Gamma = (1/2) * 2 * x = 1 at
        // x = 1. With Phat = 3 and Qhat = 4 the cone is tight: 3^2 + 4^2 =
        // (4 + 1)^2.
        let case = sg_ibg_case();
        let space = FeatureSpace::from_case(&case);
        let dummy = FitMetrics { mse: 0.0, maep: 0.0, n_retained: 1, rank_deficient: false };
        let sur = Surrogate {
            space,
            ibg_names: vec!["W1".into()],
            pair_order: vec![],
            z1_models: vec![FittedModel {
                // Index 1 in the canonical basis: the first binary feature.
                retained: vec![1],
                coeffs: vec![2.0],
                rank_deficient: false,
            }],
            zm_models: vec![],
            z1_metrics: vec![dummy.clone()],
            zm_metrics: vec![],
            dataset_total: 2,
            dataset_excluded: 0,
        };
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, Some(&sur), &no_freq(Mode::VscQSi)).unwrap();
        let cone = prog
            .socs
            .iter()
            .find(|c| c.kind == ConeKind::Stability)
            .expect("stability cone present");

        let mut point = vec![0.0; prog.vars.len()];
        point[vars.x[0][0]] = 1.0;
        point[vars.p_ibg[0][0]] = 3.0;
        point[vars.q_ibg[0][0]] = 4.0;
        let t = cone.t.eval(&point);
        let norm = cone.u.iter().map(|e| e.eval(&point).powi(2)).sum::<f64>().sqrt();
        assert!((t - 5.0).abs() < 1e-12, "Qhat + Gamma = 5, got {t}");
        assert!((norm - 5.0).abs() < 1e-12, "|(Phat, Qhat)| = 5, got {norm}");
        assert!((norm - t).abs() < 1e-9, "boundary point sits on the cone");

        // Gamma alone: drop the Qhat part by zeroing the reactive pin.
        point[vars.q_ibg[0][0]] = 0.0;
        assert!((cone.t.eval(&point) - 1.0).abs() < 1e-12, "Gamma = 1 at x = 1");
        // Single IBG: the equivalent injection is the local one.
        assert!((cone.u[0].eval(&point) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn and_variables_exact_at_integral_commitments() {
        let case = full_fleet_case();
        let sur = train(&case).expect("exhaustive training on the toy fleet");
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, Some(&sur), &no_freq(Mode::VscSi)).unwrap();
        assert!(!vars.and_vars.is_empty(), "interaction features produce AND variables");

        // Pin the machine and condenser binaries; every AND of two pinned
        // factors must equal their product in any feasible point.
        for (xg, xc) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let mut pins = vec![(vars.x[0][0], xg), (vars.x_sc[0][0], xc)];
            // Pin the share selectors too so alpha = 1 (level 2 of 3).
            pins.push((vars.lambda[0][0][0], 0.0));
            pins.push((vars.lambda[0][0][1], 0.0));
            pins.push((vars.lambda[0][0][2], 1.0));
            let (status, sol) = relax(&prog, &pins);
            assert_eq!(status, SubproblemStatus::Optimal, "pins ({xg}, {xc})");
            for (&(a, b), &w) in &vars.and_vars {
                let expect = sol[a] * sol[b];
                assert!(
                    (sol[w] - expect).abs() < 1e-5,
                    "AND({a},{b}) = {} want {expect}",
                    sol[w]
                );
            }
        }
    }

    #[test]
    fn product_variables_exact_at_integral_commitments() {
        let case = full_fleet_case();
        let sur = train(&case).expect("exhaustive training on the toy fleet");
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, Some(&sur), &no_freq(Mode::VscQSi)).unwrap();
        assert!(!vars.product_vars.is_empty(), "mutual terms produce product variables");

        // Pins must leave the balance satisfiable: total load is 0.6, the
        // pinned wind (0.3 + 0.1) plus the machine's [0.1, 1.5] range covers
        // the remainder with the share level at zero.
        let pins = vec![
            (vars.x[0][0], 1.0),
            (vars.x_sc[0][0], 1.0),
            (vars.lambda[0][0][0], 1.0),
            (vars.lambda[0][0][1], 0.0),
            (vars.lambda[0][0][2], 0.0),
            (vars.p_ibg[0][0], 0.3),
            (vars.p_ibg[0][1], 0.1),
        ];
        let (status, sol) = relax(&prog, &pins);
        assert_eq!(status, SubproblemStatus::Optimal);
        for (&(phi, y), &w) in &vars.product_vars {
            let expect = sol[phi] * sol[y];
            assert!(
                (sol[w] - expect).abs() < 1e-5,
                "product({phi},{y}) = {} want {expect}",
                sol[w]
            );
        }
    }

    #[test]
    fn variable_count_formula() {
        let case = full_fleet_case();
        let sur = train(&case).expect("trainable");
        let tree = chain(2);
        let opts = BuildOptions::for_mode(Mode::VscQSi);
        let (prog, vars) = build(&case, &tree, Some(&sur), &opts).unwrap();

        let t = tree.horizon;
        let n = tree.n_nodes();
        let n_sg = case.sync_gens.len();
        let n_sc = vars.sc_device_indices.len();
        let n_stat = vars.statcom_device_indices.len();
        let n_gfm = case.gfm_units.len();
        let n_ibg = case.gfl_ibgs.len();
        let n_bus = case.n_buses();
        let n_line = case.lines.len();
        let levels: usize = case.gfm_units.iter().map(|g| g.alpha_levels as usize).sum();
        let n_shed: usize =
            vars.shed.iter().map(|row| row.iter().filter(|s| s.is_some()).count()).sum();
        let n_si = vars.si_ibg_indices.len();

        let first_stage = t * (3 * n_sg + n_sc + levels);
        let per_node = n * (n_bus + 6 * n_line + 2 * n_sg + n_gfm + 2 * n_ibg + n_stat + n_sc);
        let freq = t * (2 + n_si);
        let aux = vars.and_vars.len() + vars.product_vars.len();
        assert_eq!(
            prog.vars.len(),
            first_stage + per_node + n_shed + freq + aux,
            "documented count formula"
        );
        assert_eq!(prog.stats().n_vars, prog.vars.len());
    }

    #[test]
    fn statcom_disable_removes_device() {
        let case = full_fleet_case();
        let tree = chain(1);
        let mut opts = no_freq(Mode::BaseSi);
        opts.statcom_enabled = false;
        let (prog, vars) = build(&case, &tree, None, &opts).unwrap();
        assert!(vars.q_stat[0].is_empty());
        assert!(prog.rsocs.iter().all(|c| c.kind != ConeKind::StatcomCurrent));

        opts.statcom_enabled = true;
        let (prog2, vars2) = build(&case, &tree, None, &opts).unwrap();
        assert_eq!(vars2.q_stat[0].len(), 1);
        assert_eq!(
            prog2.rsocs.iter().filter(|c| c.kind == ConeKind::StatcomCurrent).count(),
            1
        );
    }

    #[test]
    fn window_truncation_noted() {
        let mut case = one_bus_case(0.2, 0.0);
        case.sync_gens[0].min_up = 6;
        let tree = chain(2);
        let (_, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        assert!(vars.notes.iter().any(|n| n.contains("truncated")));
    }

    #[test]
    fn device_point_reads_solution() {
        let case = full_fleet_case();
        let tree = chain(1);
        let (prog, vars) = build(&case, &tree, None, &no_freq(Mode::BaseSi)).unwrap();
        let mut sol = vec![0.0; prog.vars.len()];
        sol[vars.x[0][0]] = 1.0;
        sol[vars.x_sc[0][0]] = 0.0;
        sol[vars.lambda[0][0][1]] = 1.0;
        let pt = vars.device_point(&case, &sol, 0);
        assert_eq!(pt.sg_on, vec![1.0]);
        assert_eq!(pt.sc_on, vec![0.0]);
        assert!((pt.gfm_alpha[0] - 0.5).abs() < 1e-12, "level 1 of 3 is alpha = 0.5");
    }
}
