//! Ex-post schedule evaluation.
//!
//! Every metric here is recomputed from first principles against the exact
//! impedance model, never from the surrogate or from solver internals: the
//! stability violation rate re-derives Z-ratios through a fresh admittance
//! inversion per configuration, and the frequency slacks re-derive H and R
//! from the commitment pattern. The surrogate only appears in the companion
//! consistency rate, which exists precisely to expose its approximation
//! error next to the exact figure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admittance::{impedance_metrics, strength_indicator};
use crate::case::GridCase;
use crate::formulation::VariableMap;
use crate::program::{ConeKind, Program};
use crate::scenario::{node_realization, ScenarioTree};
use crate::solver::soc_residuals;
use crate::surrogate::Surrogate;

/// Relative slack beyond which a stability cone counts as violated. Chosen
/// above interior-point feasibility noise and far below any physical margin.
const VIOLATION_MARGIN: f64 = 1e-6;

/// A solved schedule: the solution vector plus the variable map that gives
/// it meaning. Everything evaluation needs (commitment, share levels,
/// dispatches, voltage products, synthetic inertia) is recoverable from the
/// pair.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub x: Vec<f64>,
    pub vars: VariableMap,
}

/// Stability-cone audit over every (node, IBG) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Percentage of pairs violated under exact Z-ratios.
    pub exact_pct: f64,
    /// Same count under the learned ratios; absent without a surrogate.
    pub surrogate_pct: Option<f64>,
    pub pairs: usize,
    pub violated: usize,
    /// Pairs counted as violated because the configuration's admittance
    /// matrix was singular or ill conditioned.
    pub flagged_singular: usize,
}

/// Headline metrics of one evaluated schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Scenario-weighted objective spread over the horizon, $/h.
    pub cost_expected: f64,
    /// Scenario-weighted objective over the whole horizon, $.
    pub cost_total: f64,
    pub violation_rate_pct: f64,
    pub surrogate_rate_pct: Option<f64>,
    pub flagged_singular: usize,
    /// Expected wind spilled, MW (time average).
    pub curtailment_mw: f64,
    /// Expected load shed, MW (time average).
    pub shed_mw: f64,
    /// Worst-hour nadir margin `HR - [x1^2 + k sum Hsj^2]`; negative means
    /// violated.
    pub nadir_slack_min: f64,
    /// Worst-hour RoCoF margin `2 H rocof_max - dP_L`.
    pub rocof_slack_min: f64,
    /// Positive-part residual of the voltage-product cones (0 when feasible).
    pub soc_gap_mean: f64,
    pub soc_gap_max: f64,
    /// Mean normalized `c_ii c_jj - c^2 - s^2`: distance from exact-AC
    /// rank-1 structure, the quantity that stays positive on feasible solves.
    pub rank1_dev_mean: f64,
    /// Mean over hours of the weakest-bus strength at the scheduled
    /// configuration; `None` without IBGs.
    pub strength_mean: Option<f64>,
    /// Strength at the all-on reference configuration, independent of the
    /// schedule; the comparable figure across sweeps.
    pub strength_ref: Option<f64>,
    /// Per-IBG probability-weighted mean bus voltage, p.u.
    pub ibg_voltage_mean: Vec<f64>,
    /// Per-IBG probability-weighted mean exact stability margin, MW.
    pub ibg_gamma_mw: Vec<f64>,
}

impl MetricsReport {
    /// Stable CSV column names, in `csv_fields` order.
    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "cost_expected_per_h",
            "cost_total",
            "violation_rate_pct",
            "surrogate_rate_pct",
            "flagged_singular",
            "curtailment_mw",
            "shed_mw",
            "nadir_slack_min",
            "rocof_slack_min",
            "soc_gap_mean",
            "soc_gap_max",
            "rank1_dev_mean",
            "strength_mean",
            "strength_ref",
        ]
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        vec![
            format!("{}", self.cost_expected),
            format!("{}", self.cost_total),
            format!("{}", self.violation_rate_pct),
            opt(self.surrogate_rate_pct),
            format!("{}", self.flagged_singular),
            format!("{}", self.curtailment_mw),
            format!("{}", self.shed_mw),
            format!("{}", self.nadir_slack_min),
            format!("{}", self.rocof_slack_min),
            format!("{}", self.soc_gap_mean),
            format!("{}", self.soc_gap_max),
            format!("{}", self.rank1_dev_mean),
            opt(self.strength_mean),
            opt(self.strength_ref),
        ]
    }
}

/// STATCOM total-cost-of-ownership figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcoReport {
    /// Standing loss, MW.
    pub p_loss: f64,
    /// Annual loss energy, MWh/yr (8760 hours).
    pub e_loss: f64,
    /// Annual loss cost, $/yr.
    pub c_loss: f64,
    /// Annual operations and maintenance, $/yr (1% of CAPEX).
    pub c_oandm: f64,
}

/// Loss-and-O&M model: `p_loss = loss_fraction * rating`, annualized at
/// 8760 h/yr, O&M at 1% of CAPEX per year.
pub fn tco(rating_mvar: f64, loss_fraction: f64, energy_price: f64, capex: f64) -> TcoReport {
    assert!(rating_mvar >= 0.0 && loss_fraction >= 0.0 && energy_price >= 0.0 && capex >= 0.0);
    let p_loss = loss_fraction * rating_mvar;
    let e_loss = 8760.0 * p_loss;
    TcoReport { p_loss, e_loss, c_loss: energy_price * e_loss, c_oandm: 0.01 * capex }
}

/// Stability audit of one schedule with exact Z-ratios, pair-counted: each
/// (tree node, IBG) pair is one trial. Pass the surrogate to also get the
/// learned-ratio consistency rate.
pub fn violation_rate(
    sched: &Schedule,
    case: &GridCase,
    tree: &ScenarioTree,
    surrogate: Option<&Surrogate>,
) -> ViolationReport {
    violation_rate_scaled(sched, case, tree, surrogate, 1.0)
}

/// `violation_rate` with every margin scaled by `gamma_scale`; the scale=1
/// entry point is the public metric, other scales exist for the tightening
/// monotonicity property.
pub(crate) fn violation_rate_scaled(
    sched: &Schedule,
    case: &GridCase,
    tree: &ScenarioTree,
    surrogate: Option<&Surrogate>,
    gamma_scale: f64,
) -> ViolationReport {
    let n_ibg = case.gfl_ibgs.len();
    let node_ids: Vec<usize> = (0..tree.nodes.len()).collect();
    // (violated_exact, violated_sur, flagged) per node.
    let per_node: Vec<(usize, usize, usize)> = node_ids
        .par_iter()
        .map(|&n| {
            let t = tree.nodes[n].t;
            let point = sched.vars.device_point(case, &sched.x, t);
            let metrics = match impedance_metrics(case, &point) {
                Ok(m) => m,
                Err(_) => return (n_ibg, n_ibg, n_ibg),
            };
            let p: Vec<f64> =
                (0..n_ibg).map(|c| sched.x[sched.vars.p_ibg[n][c]]).collect();
            let q: Vec<f64> =
                (0..n_ibg).map(|c| sched.x[sched.vars.q_ibg[n][c]]).collect();
            let mut exact = 0;
            let mut sur = 0;
            for c in 0..n_ibg {
                let mut p_hat = p[c];
                let mut q_hat = q[c];
                for cp in 0..n_ibg {
                    if cp != c {
                        p_hat += metrics.zm[c][cp] * p[cp];
                        q_hat += metrics.zm[c][cp] * q[cp];
                    }
                }
                let gamma = 0.5 * metrics.z1[c] * gamma_scale;
                if cone_violated(p_hat, q_hat, gamma) {
                    exact += 1;
                }
                if let Some(s) = surrogate {
                    let mut ph = p[c];
                    let mut qh = q[c];
                    for cp in 0..n_ibg {
                        if cp != c {
                            let w = s.predict_zm(c, cp, &point);
                            ph += w * p[cp];
                            qh += w * q[cp];
                        }
                    }
                    let g = 0.5 * s.predict_z1(c, &point) * gamma_scale;
                    if cone_violated(ph, qh, g) {
                        sur += 1;
                    }
                }
            }
            (exact, sur, 0)
        })
        .collect();

    let pairs = tree.nodes.len() * n_ibg;
    let violated: usize = per_node.iter().map(|v| v.0).sum();
    let sur_violated: usize = per_node.iter().map(|v| v.1).sum();
    let flagged: usize = per_node.iter().map(|v| v.2).sum();
    let pct = |v: usize| if pairs == 0 { 0.0 } else { 100.0 * v as f64 / pairs as f64 };
    ViolationReport {
        exact_pct: pct(violated),
        surrogate_pct: surrogate.map(|_| pct(sur_violated)),
        pairs,
        violated,
        flagged_singular: flagged,
    }
}

/// Cone membership test: `(P, Q)` inside the disc of radius `Q + gamma`,
/// which must itself be nonnegative.
fn cone_violated(p_hat: f64, q_hat: f64, gamma: f64) -> bool {
    let t = q_hat + gamma;
    t < 0.0 || p_hat * p_hat + q_hat * q_hat > t * t * (1.0 + VIOLATION_MARGIN)
}

/// Expected wind curtailment and load shedding in MW, averaged over the
/// horizon: `sum_n prob dt (spill_n) * base / total_hours`.
pub fn curtailment_and_shed(
    sched: &Schedule,
    tree: &ScenarioTree,
    case: &GridCase,
) -> (f64, f64) {
    let total_h = tree.horizon as f64 * tree.dt;
    let mut spill = 0.0;
    let mut shed = 0.0;
    for (n, node) in tree.nodes.iter().enumerate() {
        let w = node.prob * tree.dt;
        let real = node_realization(case, tree, n);
        for c in 0..case.gfl_ibgs.len() {
            let avail = real.wind_avail[c].max(0.0);
            spill += w * (avail - sched.x[sched.vars.p_ibg[n][c]]).max(0.0);
        }
        for b in 0..case.n_buses() {
            if let Some(sv) = sched.vars.shed[n][b] {
                shed += w * sched.x[sv].max(0.0);
            }
        }
    }
    let scale = case.base_mva / total_h;
    (spill * scale, shed * scale)
}

/// Worst-hour frequency-security margins, recomputed from the commitment
/// pattern and the case parameters rather than read back from constraint
/// rows. Synthetic-inertia decisions are read from the schedule when
/// present and taken as zero otherwise.
pub fn frequency_slacks(sched: &Schedule, case: &GridCase) -> (f64, f64) {
    let fp = &case.freq_params;
    let x1_sq = fp.x1_squared().max(0.0);
    let k = fp.si_penalty_coeff();
    let mut nadir_min = f64::INFINITY;
    let mut rocof_min = f64::INFINITY;
    for t in 0..sched.vars.horizon {
        let mut h = 0.0;
        let mut r = 0.0;
        for (g, unit) in case.sync_gens.iter().enumerate() {
            let on = sched.x[sched.vars.x[t][g]].round();
            h += unit.inertia_h * unit.p_max * on;
            r += unit.pfr_gain * on;
        }
        let si_sq: f64 = sched
            .vars
            .h_sj
            .get(t)
            .map(|row| row.iter().map(|&v| sched.x[v] * sched.x[v]).sum())
            .unwrap_or(0.0);
        nadir_min = nadir_min.min(h * r - (x1_sq + k * si_sq));
        rocof_min = rocof_min.min(2.0 * h * fp.rocof_max - fp.dp_l);
    }
    (nadir_min, rocof_min)
}

/// Positive-part residual of the voltage-product cones only: (mean, max).
/// Zero within solver tolerance at any feasible point.
pub fn soc_gap(prog: &Program, x: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = soc_residuals(prog, x)
        .into_iter()
        .filter(|c| c.kind == ConeKind::PowerFlow)
        .map(|c| c.violation)
        .collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, v.iter().fold(0.0f64, |a, &b| a.max(b)))
}

/// Mean normalized distance from rank-1 voltage structure over every
/// (node, line): `(c_ii c_jj - c^2 - s^2) / max(1, c_ii c_jj)`. This is the
/// relaxation's real slack against exact AC, small-positive on feasible
/// solves.
pub fn rank1_deviation(sched: &Schedule, case: &GridCase, tree: &ScenarioTree) -> f64 {
    let n_line = case.lines.len();
    if n_line == 0 || tree.nodes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for n in 0..tree.nodes.len() {
        for (l, line) in case.lines.iter().enumerate() {
            let cii = sched.x[sched.vars.c_ii[n][line.from]];
            let cjj = sched.x[sched.vars.c_ii[n][line.to]];
            let c = sched.x[sched.vars.c_ij[n][l]];
            let s = sched.x[sched.vars.s_ij[n][l]];
            let prod = cii * cjj;
            sum += (prod - c * c - s * s) / prod.max(1.0);
        }
    }
    sum / (tree.nodes.len() * n_line) as f64
}

/// Assemble the full report for one solved schedule.
pub fn evaluate_schedule(
    case: &GridCase,
    tree: &ScenarioTree,
    prog: &Program,
    sched: &Schedule,
    surrogate: Option<&Surrogate>,
) -> MetricsReport {
    let viol = violation_rate(sched, case, tree, surrogate);
    let (curtailment_mw, shed_mw) = curtailment_and_shed(sched, tree, case);
    let (nadir_slack_min, rocof_slack_min) = frequency_slacks(sched, case);
    let (soc_gap_mean, soc_gap_max) = soc_gap(prog, &sched.x);
    let rank1_dev_mean = rank1_deviation(sched, case, tree);

    let cost_total = prog.objective_value(&sched.x);
    let cost_expected = cost_total / (tree.horizon as f64 * tree.dt);

    // Configuration-dependent strength per hour; hours whose inversion fails
    // are already visible through the flagged violation count.
    let hour_strength: Vec<f64> = (0..sched.vars.horizon)
        .filter_map(|t| {
            let point = sched.vars.device_point(case, &sched.x, t);
            strength_indicator(case, &point).ok().flatten()
        })
        .collect();
    let strength_mean = if hour_strength.is_empty() {
        None
    } else {
        Some(hour_strength.iter().sum::<f64>() / hour_strength.len() as f64)
    };
    let strength_ref = strength_indicator(
        case,
        &crate::admittance::DevicePoint::all_on(case),
    )
    .ok()
    .flatten();

    // Probability-weighted per-IBG summaries; each stage carries mass 1, so
    // the weights over all nodes sum to the horizon length.
    let n_ibg = case.gfl_ibgs.len();
    let mut volt = vec![0.0; n_ibg];
    let mut gamma = vec![0.0; n_ibg];
    let mut weight = 0.0;
    for (n, node) in tree.nodes.iter().enumerate() {
        let point = sched.vars.device_point(case, &sched.x, node.t);
        let metrics = impedance_metrics(case, &point).ok();
        weight += node.prob;
        for (c, g) in case.gfl_ibgs.iter().enumerate() {
            volt[c] += node.prob * sched.x[sched.vars.c_ii[n][g.bus]].max(0.0).sqrt();
            if let Some(m) = &metrics {
                gamma[c] += node.prob * 0.5 * m.z1[c] * case.base_mva;
            }
        }
    }
    if weight > 0.0 {
        for c in 0..n_ibg {
            volt[c] /= weight;
            gamma[c] /= weight;
        }
    }

    MetricsReport {
        cost_expected,
        cost_total,
        violation_rate_pct: viol.exact_pct,
        surrogate_rate_pct: viol.surrogate_pct,
        flagged_singular: viol.flagged_singular,
        curtailment_mw,
        shed_mw,
        nadir_slack_min,
        rocof_slack_min,
        soc_gap_mean,
        soc_gap_max,
        rank1_dev_mean,
        strength_mean,
        strength_ref,
        ibg_voltage_mean: volt,
        ibg_gamma_mw: gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;
    use crate::formulation::{build, BuildOptions, Mode};
    use crate::scenario::build_tree;

    fn no_freq(mode: Mode) -> BuildOptions {
        BuildOptions { mode, statcom_enabled: true, freq_enabled: false }
    }

    fn wind_case(base_mva: f64, s_max: f64, avail: f64) -> GridCase {
        let text = format!(
            r#"
base_mva = {base_mva}
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
inertia_h = 5.0
pfr_gain = 3.0
cost_quad = 1.0
cost_lin = 10.0
cost_noload = 2.0
cost_startup = 1.0

[[gfl_ibgs]]
name = "W1"
bus = 2
s_max = {s_max}
available = [{avail}]

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

    fn schedule_for(case: &GridCase, tree: &ScenarioTree, opts: &BuildOptions) -> (Program, Schedule) {
        let (prog, vars) = build(case, tree, None, opts).unwrap();
        let x = vec![0.0; prog.vars.len()];
        (prog, Schedule { x, vars })
    }

    #[test]
    fn tco_reproduces_stated_arithmetic() {
        let r = tco(30.0, 0.008, 60.0, 210_240.0);
        assert!((r.p_loss - 0.24).abs() < 1e-12);
        assert!((r.e_loss - 2102.4).abs() < 1e-9);
        assert!((r.c_loss - 126_144.0).abs() < 1e-6);
        assert!((r.c_oandm - 2102.4).abs() < 1e-9);

        let r = tco(30.0, 0.015, 60.0, 0.0);
        assert!((r.p_loss - 0.45).abs() < 1e-12);
        assert!((r.e_loss - 3942.0).abs() < 1e-9);

        let z = tco(0.0, 0.008, 60.0, 0.0);
        assert_eq!(z, TcoReport { p_loss: 0.0, e_loss: 0.0, c_loss: 0.0, c_oandm: 0.0 });
    }

    #[test]
    fn tco_is_separately_linear_and_annualizes_exactly() {
        let a = tco(10.0, 0.01, 50.0, 100.0);
        let b = tco(20.0, 0.01, 50.0, 100.0);
        let c = tco(10.0, 0.02, 50.0, 100.0);
        assert!((b.p_loss - 2.0 * a.p_loss).abs() < 1e-12, "linear in rating");
        assert!((c.p_loss - 2.0 * a.p_loss).abs() < 1e-12, "linear in loss fraction");
        assert_eq!(a.e_loss / a.p_loss, 8760.0);
    }

    #[test]
    fn frequency_slack_arithmetic() {
        // H = 5 * 2.0 = 10 and R = 3 when on: HR = 30 against x1^2 = 27.75
        // leaves 2.25.
        let case = wind_case(1.0, 1.0, 0.8);
        let tree = build_tree(1, 1.0, &[], &[]).unwrap();
        let (_, mut sched) = schedule_for(&case, &tree, &BuildOptions::for_mode(Mode::BaseSi));
        sched.x[sched.vars.x[0][0]] = 1.0;
        let (nadir, rocof) = frequency_slacks(&sched, &case);
        assert!((nadir - 2.25).abs() < 1e-9, "nadir slack {nadir}");
        // 2 * 10 * 0.1 - 0.3 = 1.7.
        assert!((rocof - 1.7).abs() < 1e-12, "rocof slack {rocof}");

        // All off: HR = 0, slack is exactly -x1^2 and -dP_L.
        sched.x[sched.vars.x[0][0]] = 0.0;
        let (nadir, rocof) = frequency_slacks(&sched, &case);
        assert!((nadir + 27.75).abs() < 1e-9);
        assert!((rocof + 0.3).abs() < 1e-12);
    }

    #[test]
    fn absurd_dispatch_is_flagged_and_zero_dispatch_is_clean() {
        let case = wind_case(1.0, 1.0, 0.8);
        let tree = build_tree(1, 1.0, &[], &[]).unwrap();
        let (_, mut sched) = schedule_for(&case, &tree, &no_freq(Mode::BaseSi));
        sched.x[sched.vars.x[0][0]] = 1.0;

        sched.x[sched.vars.p_ibg[0][0]] = 10.0;
        let r = violation_rate(&sched, &case, &tree, None);
        assert_eq!((r.violated, r.pairs), (1, 1), "P >> gamma violates");
        assert!((r.exact_pct - 100.0).abs() < 1e-12);

        sched.x[sched.vars.p_ibg[0][0]] = 0.0;
        let r = violation_rate(&sched, &case, &tree, None);
        assert_eq!(r.violated, 0, "the origin is inside every cone");
        assert_eq!(r.flagged_singular, 0);
    }

    #[test]
    fn shrinking_gamma_never_reduces_the_rate() {
        let case = wind_case(1.0, 1.0, 0.8);
        let tree = build_tree(2, 1.0, &[], &[]).unwrap();
        let (_, mut sched) = schedule_for(&case, &tree, &no_freq(Mode::BaseSi));
        sched.x[sched.vars.x[0][0]] = 1.0;
        // A mid-scale dispatch that flips from clean to violated as the
        // margin shrinks.
        for n in 0..tree.nodes.len() {
            sched.x[sched.vars.p_ibg[n][0]] = 0.5;
        }
        let mut last = -1.0;
        for scale in [1.0, 0.5, 0.2, 0.05, 1e-6] {
            let r = violation_rate_scaled(&sched, &case, &tree, None, scale);
            assert!(r.exact_pct >= last, "rate fell from {last} at scale {scale}");
            last = r.exact_pct;
        }
        let tightest = violation_rate_scaled(&sched, &case, &tree, None, 1e-6);
        assert!((tightest.exact_pct - 100.0).abs() < 1e-12, "vanishing margin flags all");
    }

    #[test]
    fn curtailment_and_shed_arithmetic() {
        // 100 MVA base, availability 3.0, dispatch 2.7: 0.3 p.u. = 30 MW.
        let case = wind_case(100.0, 3.0, 3.0);
        let tree = build_tree(1, 1.0, &[], &[]).unwrap();
        let (_, mut sched) = schedule_for(&case, &tree, &no_freq(Mode::BaseSi));
        sched.x[sched.vars.p_ibg[0][0]] = 2.7;
        let (curt, shed) = curtailment_and_shed(&sched, &tree, &case);
        assert!((curt - 30.0).abs() < 1e-9, "curtailment {curt}");
        assert_eq!(shed, 0.0);

        sched.x[sched.vars.p_ibg[0][0]] = 3.0;
        let sv = sched.vars.shed[0][1].expect("loaded bus");
        sched.x[sv] = 0.05;
        let (curt, shed) = curtailment_and_shed(&sched, &tree, &case);
        assert_eq!(curt, 0.0, "dispatch at availability spills nothing");
        assert!((shed - 5.0).abs() < 1e-9, "shed {shed}");
    }

    #[test]
    fn soc_gap_restricted_to_power_flow_cones() {
        let case = wind_case(1.0, 1.0, 0.8);
        let tree = build_tree(1, 1.0, &[], &[]).unwrap();
        let (prog, mut sched) = schedule_for(&case, &tree, &no_freq(Mode::BaseSi));

        // Tight point: c^2 + s^2 = c_ii c_jj exactly.
        sched.x[sched.vars.c_ii[0][0]] = 5.0;
        sched.x[sched.vars.c_ii[0][1]] = 5.0;
        sched.x[sched.vars.c_ij[0][0]] = 3.0;
        sched.x[sched.vars.s_ij[0][0]] = 4.0;
        let (mean, max) = soc_gap(&prog, &sched.x);
        assert_eq!((mean, max), (0.0, 0.0));

        // Violated point: 25 > 1, normalized by max(1, 1).
        sched.x[sched.vars.c_ii[0][0]] = 1.0;
        sched.x[sched.vars.c_ii[0][1]] = 1.0;
        let (mean, max) = soc_gap(&prog, &sched.x);
        assert!((max - 24.0).abs() < 1e-12, "max {max}");
        assert!(mean > 0.0);
    }

    #[test]
    fn rank1_deviation_arithmetic() {
        let case = wind_case(1.0, 1.0, 0.8);
        let tree = build_tree(1, 1.0, &[], &[]).unwrap();
        let (_, mut sched) = schedule_for(&case, &tree, &no_freq(Mode::BaseSi));
        sched.x[sched.vars.c_ii[0][0]] = 1.0;
        sched.x[sched.vars.c_ii[0][1]] = 1.0;
        sched.x[sched.vars.c_ij[0][0]] = 0.0;
        sched.x[sched.vars.s_ij[0][0]] = 0.0;
        // (1*1 - 0) / max(1, 1) = 1 on the single line.
        assert!((rank1_deviation(&sched, &case, &tree) - 1.0).abs() < 1e-12);

        sched.x[sched.vars.c_ij[0][0]] = 1.0;
        assert!(rank1_deviation(&sched, &case, &tree).abs() < 1e-12, "rank-1 point");
    }

    #[test]
    fn full_report_is_consistent_on_a_crafted_schedule() {
        let case = wind_case(1.0, 1.0, 0.8);
        let tree = build_tree(1, 1.0, &[], &[]).unwrap();
        let opts = no_freq(Mode::BaseSi);
        let (prog, vars) = build(&case, &tree, None, &opts).unwrap();
        let mut x = vec![0.0; prog.vars.len()];
        x[vars.x[0][0]] = 1.0;
        x[vars.c_ii[0][0]] = 1.0;
        x[vars.c_ii[0][1]] = 1.0;
        let sched = Schedule { x, vars };
        let rep = evaluate_schedule(&case, &tree, &prog, &sched, None);
        assert!(rep.violation_rate_pct >= 0.0 && rep.violation_rate_pct <= 100.0);
        assert!(rep.surrogate_rate_pct.is_none());
        assert!((rep.curtailment_mw - 0.8).abs() < 1e-9, "all wind spilled");
        assert!(rep.strength_ref.is_some());
        assert_eq!(rep.ibg_voltage_mean.len(), 1);
        assert!((rep.ibg_voltage_mean[0] - 1.0).abs() < 1e-12);
        assert_eq!(MetricsReport::csv_header().len(), rep.csv_fields().len());
    }
}
