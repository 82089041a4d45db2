//! Scenario trees for the stochastic schedule: quantile branchings over the
//! horizon with multiplicative wind/load deviation composition.
//!
//! A tree starts from a single here-and-now node at hour 0. At each
//! configured branching hour every node of the previous stage spawns one
//! child per quantile; elsewhere nodes continue on a single path. Deviations
//! compose multiplicatively along the path, so two successive -10% wind
//! quantiles give a 0.81 wind multiplier. Stage probabilities always sum to
//! one (enforced at build time on the quantile masses).

use thiserror::Error;

use crate::case::GridCase;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("quantile masses must sum to 1 within 1e-9 (got {0})")]
    MassSum(f64),
    #[error("quantile mass must be >= 0 (got {0})")]
    NegativeMass(f64),
    #[error("deviation must be > -1 (got {0})")]
    DeviationRange(f64),
    #[error("branching hour {0} is outside horizon of {1} hours")]
    BranchHour(usize, usize),
    #[error("branching requested with an empty quantile list")]
    EmptyQuantiles,
    #[error("horizon must be >= 1")]
    EmptyHorizon,
}

/// One forecast-error bin: probability mass plus relative deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile {
    pub mass: f64,
    pub wind_dev: f64,
    pub load_dev: f64,
}

/// Default branching bins: a symmetric 15% wind band.
pub fn default_quantiles() -> Vec<Quantile> {
    vec![
        Quantile { mass: 0.25, wind_dev: -0.15, load_dev: 0.0 },
        Quantile { mass: 0.50, wind_dev: 0.0, load_dev: 0.0 },
        Quantile { mass: 0.25, wind_dev: 0.15, load_dev: 0.0 },
    ]
}

/// Default branching hours for a horizon: a single branch entering hour 1
/// (the first hour stays deterministic). Degenerates to no branching on a
/// one-hour horizon.
pub fn default_branch_hours(horizon: usize) -> Vec<usize> {
    if horizon >= 2 { vec![1] } else { Vec::new() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioNode {
    pub id: usize,
    /// Hour index, 0-based.
    pub t: usize,
    pub parent: Option<usize>,
    /// Absolute probability of reaching this node.
    pub prob: f64,
    /// Cumulative multiplier on wind availability along the path.
    pub wind_mult: f64,
    /// Cumulative multiplier on load along the path.
    pub load_mult: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    /// Number of hourly steps.
    pub horizon: usize,
    /// Step length in hours.
    pub dt: f64,
    pub nodes: Vec<ScenarioNode>,
    /// Node ids per stage; `stages[t]` partitions probability mass 1.
    pub stages: Vec<Vec<usize>>,
}

impl ScenarioTree {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Ids of the final-stage nodes (the scenarios).
    pub fn leaves(&self) -> &[usize] {
        &self.stages[self.horizon - 1]
    }
}

/// Build a tree with the same quantile set applied at every branching hour.
pub fn build_tree(
    horizon: usize,
    dt: f64,
    branch_hours: &[usize],
    quantiles: &[Quantile],
) -> Result<ScenarioTree, ScenarioError> {
    if horizon == 0 {
        return Err(ScenarioError::EmptyHorizon);
    }
    for q in quantiles {
        if q.mass < 0.0 {
            return Err(ScenarioError::NegativeMass(q.mass));
        }
        if q.wind_dev <= -1.0 {
            return Err(ScenarioError::DeviationRange(q.wind_dev));
        }
        if q.load_dev <= -1.0 {
            return Err(ScenarioError::DeviationRange(q.load_dev));
        }
    }
    let branching_active = !branch_hours.is_empty();
    if branching_active {
        if quantiles.is_empty() {
            return Err(ScenarioError::EmptyQuantiles);
        }
        let mass: f64 = quantiles.iter().map(|q| q.mass).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::MassSum(mass));
        }
    }
    for &h in branch_hours {
        if h >= horizon {
            return Err(ScenarioError::BranchHour(h, horizon));
        }
    }

    let mut nodes: Vec<ScenarioNode> = Vec::new();
    let mut stages: Vec<Vec<usize>> = Vec::with_capacity(horizon);

    let branches_at = |t: usize| branching_active && branch_hours.contains(&t);

    // Stage 0: either the quantile fan (branch at hour 0) or one root node.
    let mut stage0 = Vec::new();
    if branches_at(0) {
        for q in quantiles {
            let id = nodes.len();
            nodes.push(ScenarioNode {
                id,
                t: 0,
                parent: None,
                prob: q.mass,
                wind_mult: 1.0 + q.wind_dev,
                load_mult: 1.0 + q.load_dev,
            });
            stage0.push(id);
        }
    } else {
        nodes.push(ScenarioNode {
            id: 0,
            t: 0,
            parent: None,
            prob: 1.0,
            wind_mult: 1.0,
            load_mult: 1.0,
        });
        stage0.push(0);
    }
    stages.push(stage0);

    for t in 1..horizon {
        let mut stage = Vec::new();
        for &pid in &stages[t - 1].clone() {
            let (p_prob, p_wind, p_load) = {
                let p = &nodes[pid];
                (p.prob, p.wind_mult, p.load_mult)
            };
            if branches_at(t) {
                for q in quantiles {
                    let id = nodes.len();
                    nodes.push(ScenarioNode {
                        id,
                        t,
                        parent: Some(pid),
                        prob: p_prob * q.mass,
                        wind_mult: p_wind * (1.0 + q.wind_dev),
                        load_mult: p_load * (1.0 + q.load_dev),
                    });
                    stage.push(id);
                }
            } else {
                let id = nodes.len();
                nodes.push(ScenarioNode {
                    id,
                    t,
                    parent: Some(pid),
                    prob: p_prob,
                    wind_mult: p_wind,
                    load_mult: p_load,
                });
                stage.push(id);
            }
        }
        stages.push(stage);
    }

    // Renormalize each stage; a no-op when quantile masses are exact.
    for stage in &stages {
        let mass: f64 = stage.iter().map(|&id| nodes[id].prob).sum();
        if mass > 0.0 && mass != 1.0 {
            for &id in stage {
                nodes[id].prob /= mass;
            }
        }
    }

    Ok(ScenarioTree { horizon, dt, nodes, stages })
}

/// Build the tree a case asks for: quantiles from the case forecast section
/// (or the defaults) broadcast to the default branching hours.
pub fn tree_for_case(
    case: &GridCase,
    horizon: usize,
    dt: f64,
) -> Result<ScenarioTree, ScenarioError> {
    let quantiles = case
        .forecast
        .as_ref()
        .filter(|f| !f.quantiles.is_empty())
        .map(|f| {
            f.quantiles
                .iter()
                .map(|&(mass, wind_dev, load_dev)| Quantile { mass, wind_dev, load_dev })
                .collect::<Vec<_>>()
        })
        .unwrap_or_else(default_quantiles);
    build_tree(horizon, dt, &default_branch_hours(horizon), &quantiles)
}

/// Realized exogenous data at one tree node.
#[derive(Debug, Clone)]
pub struct Realization {
    /// Available power per grid-following IBG, p.u.
    pub wind_avail: Vec<f64>,
    /// Per-bus active load, p.u.
    pub p_load: Vec<f64>,
    /// Per-bus reactive load, p.u.
    pub q_load: Vec<f64>,
}

/// Hour profile lookup clamping to the last entry.
fn profile_at(profile: &[f64], t: usize) -> f64 {
    if profile.is_empty() {
        1.0
    } else {
        profile[t.min(profile.len() - 1)]
    }
}

/// Evaluate availability and load at a node: base profiles scaled by the
/// node's cumulative multipliers and the hourly load factor.
pub fn node_realization(case: &GridCase, tree: &ScenarioTree, node_id: usize) -> Realization {
    let node = &tree.nodes[node_id];
    let lf = case
        .forecast
        .as_ref()
        .map(|f| profile_at(&f.load_factor, node.t))
        .unwrap_or(1.0);
    Realization {
        wind_avail: case
            .gfl_ibgs
            .iter()
            .map(|g| profile_at(&g.available_profile, node.t) * node.wind_mult)
            .collect(),
        p_load: case
            .buses
            .iter()
            .map(|b| b.p_load * lf * node.load_mult)
            .collect(),
        q_load: case
            .buses
            .iter()
            .map(|b| b.q_load * lf * node.load_mult)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage_mass(tree: &ScenarioTree, t: usize) -> f64 {
        tree.stages[t].iter().map(|&id| tree.nodes[id].prob).sum()
    }

    #[test]
    fn single_quantile_gives_a_path() {
        let q = [Quantile { mass: 1.0, wind_dev: 0.0, load_dev: 0.0 }];
        let tree = build_tree(4, 1.0, &[1], &q).unwrap();
        assert_eq!(tree.n_nodes(), 4);
        assert_eq!(tree.leaves().len(), 1);
        for t in 0..4 {
            assert!((stage_mass(&tree, t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_branch_two_quantiles_gives_two_leaves() {
        let q = [
            Quantile { mass: 0.4, wind_dev: -0.2, load_dev: 0.0 },
            Quantile { mass: 0.6, wind_dev: 0.1, load_dev: 0.05 },
        ];
        let tree = build_tree(3, 1.0, &[1], &q).unwrap();
        assert_eq!(tree.stages.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 2]);
        assert_eq!(tree.leaves().len(), 2);
        let low = &tree.nodes[tree.stages[1][0]];
        assert!((low.prob - 0.4).abs() < 1e-15);
        assert!((low.wind_mult - 0.8).abs() < 1e-15);
        assert!((low.load_mult - 1.0).abs() < 1e-15);
        // Non-branching hour inherits the multipliers unchanged.
        let leaf = &tree.nodes[tree.stages[2][0]];
        assert_eq!(leaf.parent, Some(low.id));
        assert!((leaf.wind_mult - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_branch_hours_of_three_quantiles_give_nine_leaves() {
        let tree = build_tree(4, 1.0, &[1, 2], &default_quantiles()).unwrap();
        assert_eq!(tree.stages.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 3, 9, 9]);
        for t in 0..4 {
            assert!((stage_mass(&tree, t) - 1.0).abs() < 1e-12, "stage {t}");
        }
    }

    #[test]
    fn deviations_compose_multiplicatively() {
        let q = [
            Quantile { mass: 0.5, wind_dev: -0.1, load_dev: 0.0 },
            Quantile { mass: 0.5, wind_dev: 0.1, load_dev: 0.0 },
        ];
        let tree = build_tree(3, 1.0, &[1, 2], &q).unwrap();
        let down_down = tree
            .nodes
            .iter()
            .find(|n| n.t == 2 && (n.wind_mult - 0.81).abs() < 1e-15)
            .expect("0.9 * 0.9 path exists");
        assert!((down_down.prob - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stage_probabilities_sum_to_one_across_shapes() {
        for (horizon, hours, nq) in [
            (1usize, vec![], 3usize),
            (6, vec![1], 3),
            (6, vec![0, 3], 4),
            (8, vec![1, 2, 5], 2),
            (5, vec![4], 5),
        ] {
            let q: Vec<Quantile> = (0..nq)
                .map(|i| Quantile {
                    mass: 1.0 / nq as f64,
                    wind_dev: 0.05 * i as f64 - 0.1,
                    load_dev: 0.02 * i as f64,
                })
                .collect();
            let tree = build_tree(horizon, 1.0, &hours, &q).unwrap();
            for t in 0..horizon {
                assert!(
                    (stage_mass(&tree, t) - 1.0).abs() < 1e-12,
                    "horizon {horizon} hours {hours:?} nq {nq} stage {t}"
                );
            }
        }
    }

    #[test]
    fn bad_masses_are_rejected() {
        let q = [
            Quantile { mass: 0.5, wind_dev: 0.0, load_dev: 0.0 },
            Quantile { mass: 0.4, wind_dev: 0.0, load_dev: 0.0 },
        ];
        assert!(matches!(
            build_tree(3, 1.0, &[1], &q),
            Err(ScenarioError::MassSum(_))
        ));
        let q = [Quantile { mass: 1.0, wind_dev: -1.5, load_dev: 0.0 }];
        assert!(matches!(
            build_tree(3, 1.0, &[1], &q),
            Err(ScenarioError::DeviationRange(_))
        ));
        assert!(matches!(
            build_tree(3, 1.0, &[7], &default_quantiles()),
            Err(ScenarioError::BranchHour(7, 3))
        ));
    }

    #[test]
    fn branch_at_hour_zero_fans_the_root() {
        let tree = build_tree(2, 1.0, &[0], &default_quantiles()).unwrap();
        assert_eq!(tree.stages[0].len(), 3);
        assert!((stage_mass(&tree, 0) - 1.0).abs() < 1e-15);
        assert!(tree.nodes[tree.stages[0][0]].parent.is_none());
    }

    #[test]
    fn realization_scales_by_multiplier_and_load_factor() {
        let case = crate::case::parse_case(
            r#"
base_mva = 100.0
units = "pu"

[[buses]]
id = 1

[[buses]]
id = 2
p_load = 0.5
q_load = 0.1

[[lines]]
from = 1
to = 2
x = 0.1

[[sync_gens]]
name = "G1"
bus = 1
p_min = 0.0
p_max = 1.0
q_min = -1.0
q_max = 1.0
ramp = 1.0
min_up = 1
min_down = 1
x_transient = 0.2
inertia_h = 4.0
pfr_gain = 10.0
cost_quad = 0.0
cost_lin = 10.0
cost_noload = 0.0
cost_startup = 0.0

[[gfl_ibgs]]
name = "W1"
bus = 2
s_max = 1.0
available = [0.8, 0.6]
si_capable = false
h_si_max = 0.0

[frequency]
dp_l = 0.1
df_lim = 0.01
t_d = 10.0
damping_d = 0.5
rocof_max = 0.05

[costs]
shed = 5000.0

[forecast]
load_factor = [1.0, 1.2]

[[forecast.quantiles]]
mass = 0.5
wind_dev = -0.1

[[forecast.quantiles]]
mass = 0.5
wind_dev = 0.1
"#,
        )
        .unwrap();
        let tree = tree_for_case(&case, 2, 1.0).unwrap();
        assert_eq!(tree.leaves().len(), 2);
        let low = tree
            .stages[1]
            .iter()
            .map(|&id| &tree.nodes[id])
            .find(|n| n.wind_mult < 1.0)
            .unwrap();
        let r = node_realization(&case, &tree, low.id);
        assert!((r.wind_avail[0] - 0.6 * 0.9).abs() < 1e-15);
        assert!((r.p_load[1] - 0.5 * 1.2).abs() < 1e-15);
        assert!((r.q_load[1] - 0.1 * 1.2).abs() < 1e-15);
        // Hour beyond the profile clamps to the last entry.
        let r0 = node_realization(&case, &tree, tree.stages[0][0]);
        assert!((r0.wind_avail[0] - 0.8).abs() < 1e-15);
        assert!((r0.p_load[1] - 0.5).abs() < 1e-15);
    }
}
