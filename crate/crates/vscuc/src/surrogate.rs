//! Data-driven impedance surrogate: exhaustive commitment enumeration and
//! sparse polynomial regression for the self/mutual impedance quantities.
//!
//! The feature vector at a device operating point is
//! `[1 | x_1..x_nB | alpha_1..alpha_nV | eta_1..eta_nI]`: a leading
//! intercept, then the device terms. The intercept is load-bearing: the
//! mutual-ratio targets approach a nonzero weak-network limit as devices
//! drop out, and a homogeneous basis (zero at the all-off origin) cannot
//! carry that baseline no matter how the coefficients are chosen.
//! Binaries are synchronous machines followed by synchronous condensers;
//! interaction terms are ordered binary-pair (lexicographic), then
//! binary-times-alpha (binary-major), then alpha-pair (lexicographic).
//! Training enumerates every binary commitment against every discrete
//! admittance-share level, evaluates the exact impedance metrics, and fits
//! each target by least squares in two passes: fit, prune coefficients with
//! magnitude below [`PRUNE_TOL`], refit the survivors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admittance::{impedance_metrics, DevicePoint};
use crate::case::GridCase;

/// Coefficients with magnitude below this are pruned between passes.
pub const PRUNE_TOL: f64 = 1e-4;
/// Singular values below `eps * sigma_max` count as zero in the solves.
pub const SVD_EPS: f64 = 1e-10;
/// Denominators below this are excluded from the percentage error metric.
pub const MAEP_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("dataset is empty: all {0} enumerated points were excluded")]
    EmptyDataset(u64),
    #[error("dataset too large to enumerate: {0} points")]
    DatasetTooLarge(u128),
    #[error("least-squares solve failed: {0}")]
    Solve(String),
}

/// One monomial of the feature basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTerm {
    /// The intercept; always 1.
    Constant,
    /// x_b (synchronous machine or condenser commitment).
    Binary(usize),
    /// alpha_v (grid-forming admittance share).
    Alpha(usize),
    /// x_b * x_b'.
    BinaryPair(usize, usize),
    /// x_b * alpha_v.
    BinaryAlpha(usize, usize),
    /// alpha_v * alpha_v'.
    AlphaPair(usize, usize),
}

/// Shape of the feature basis for a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    /// Names of the binary devices: sync machines first, then condensers.
    pub binary_names: Vec<String>,
    pub gfm_names: Vec<String>,
    /// Discrete admittance-share level count per grid-forming plant.
    pub alpha_levels: Vec<u32>,
}

impl FeatureSpace {
    pub fn from_case(case: &GridCase) -> FeatureSpace {
        let mut binary_names: Vec<String> =
            case.sync_gens.iter().map(|g| g.name.clone()).collect();
        for &i in &case.sc_indices() {
            binary_names.push(case.shunt_devices[i].name.clone());
        }
        FeatureSpace {
            binary_names,
            gfm_names: case.gfm_units.iter().map(|g| g.name.clone()).collect(),
            alpha_levels: case.gfm_units.iter().map(|g| g.alpha_levels).collect(),
        }
    }

    pub fn n_binary(&self) -> usize {
        self.binary_names.len()
    }

    pub fn n_gfm(&self) -> usize {
        self.gfm_names.len()
    }

    /// Interaction-term count: C(nB,2) + nB*nV + C(nV,2).
    pub fn n_interactions(&self) -> usize {
        let nb = self.n_binary();
        let nv = self.n_gfm();
        nb * nb.saturating_sub(1) / 2 + nb * nv + nv * nv.saturating_sub(1) / 2
    }

    pub fn n_features(&self) -> usize {
        1 + self.n_binary() + self.n_gfm() + self.n_interactions()
    }

    /// The canonical ordered feature basis: intercept first.
    pub fn terms(&self) -> Vec<FeatureTerm> {
        let nb = self.n_binary();
        let nv = self.n_gfm();
        let mut t = Vec::with_capacity(self.n_features());
        t.push(FeatureTerm::Constant);
        t.extend((0..nb).map(FeatureTerm::Binary));
        t.extend((0..nv).map(FeatureTerm::Alpha));
        for b in 0..nb {
            for b2 in b + 1..nb {
                t.push(FeatureTerm::BinaryPair(b, b2));
            }
        }
        for b in 0..nb {
            for v in 0..nv {
                t.push(FeatureTerm::BinaryAlpha(b, v));
            }
        }
        for v in 0..nv {
            for v2 in v + 1..nv {
                t.push(FeatureTerm::AlphaPair(v, v2));
            }
        }
        t
    }

    pub fn term_name(&self, term: &FeatureTerm) -> String {
        match *term {
            FeatureTerm::Constant => "1".to_string(),
            FeatureTerm::Binary(b) => format!("x_{}", self.binary_names[b]),
            FeatureTerm::Alpha(v) => format!("a_{}", self.gfm_names[v]),
            FeatureTerm::BinaryPair(b, b2) => {
                format!("x_{}*x_{}", self.binary_names[b], self.binary_names[b2])
            }
            FeatureTerm::BinaryAlpha(b, v) => {
                format!("x_{}*a_{}", self.binary_names[b], self.gfm_names[v])
            }
            FeatureTerm::AlphaPair(v, v2) => {
                format!("a_{}*a_{}", self.gfm_names[v], self.gfm_names[v2])
            }
        }
    }

    /// Evaluate the full feature vector at one operating point. The binary
    /// slots concatenate machine and condenser commitments in that order.
    pub fn feature_vector(&self, point: &DevicePoint) -> Vec<f64> {
        let nb = self.n_binary();
        let mut x = Vec::with_capacity(nb);
        x.extend_from_slice(&point.sg_on);
        x.extend_from_slice(&point.sc_on);
        assert_eq!(x.len(), nb, "binary slot count mismatch");
        let a = &point.gfm_alpha;
        assert_eq!(a.len(), self.n_gfm(), "alpha slot count mismatch");

        self.terms()
            .iter()
            .map(|t| match *t {
                FeatureTerm::Constant => 1.0,
                FeatureTerm::Binary(b) => x[b],
                FeatureTerm::Alpha(v) => a[v],
                FeatureTerm::BinaryPair(b, b2) => x[b] * x[b2],
                FeatureTerm::BinaryAlpha(b, v) => x[b] * a[v],
                FeatureTerm::AlphaPair(v, v2) => a[v] * a[v2],
            })
            .collect()
    }

    /// Number of enumerated operating points: 2^nB * prod(levels).
    pub fn dataset_size(&self) -> u128 {
        let mut n: u128 = 1u128 << self.n_binary();
        for &lv in &self.alpha_levels {
            n = n.saturating_mul(lv as u128);
        }
        n
    }

    /// Decode enumeration index -> operating point. Binary b is bit b of the
    /// commitment counter; alpha v is a mixed-radix digit of the level
    /// counter, mapped uniformly onto [0, 1] inclusive.
    pub fn decode(&self, bin_idx: u64, lvl_idx: u64, n_sg: usize) -> DevicePoint {
        let nb = self.n_binary();
        let bits: Vec<f64> = (0..nb).map(|b| ((bin_idx >> b) & 1) as f64).collect();
        let mut alphas = Vec::with_capacity(self.n_gfm());
        let mut rem = lvl_idx;
        for &lv in &self.alpha_levels {
            let digit = rem % lv as u64;
            rem /= lv as u64;
            alphas.push(if lv > 1 {
                digit as f64 / (lv - 1) as f64
            } else {
                1.0
            });
        }
        DevicePoint {
            sg_on: bits[..n_sg].to_vec(),
            sc_on: bits[n_sg..].to_vec(),
            gfm_alpha: alphas,
        }
    }
}

/// Ordered IBG pairs (i, j), i != j, lexicographic: the target order of the
/// mutual-ratio models.
pub fn ibg_pair_order(n_ibg: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_ibg.saturating_sub(1) * n_ibg);
    for i in 0..n_ibg {
        for j in 0..n_ibg {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

/// Exhaustive training data: feature rows plus exact impedance targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub space: FeatureSpace,
    /// Row-major feature matrix, n_rows x n_features.
    pub features: Vec<Vec<f64>>,
    pub points: Vec<DevicePoint>,
    /// z1 targets per row, one column per IBG.
    pub z1: Vec<Vec<f64>>,
    /// Mutual-ratio targets per row, columns in `ibg_pair_order`.
    pub zm: Vec<Vec<f64>>,
    /// Enumerated points whose impedance evaluation failed (singular or
    /// ill-conditioned admittance) and were left out.
    pub excluded: u64,
    pub total: u64,
}

/// Enumerate every operating point and evaluate the exact metrics.
///
/// Deterministic: rows appear in enumeration order (level counter outer,
/// binary counter inner) regardless of thread count.
pub fn enumerate_dataset(case: &GridCase) -> Result<Dataset, SurrogateError> {
    let space = FeatureSpace::from_case(case);
    let size = space.dataset_size();
    if size > 1 << 22 {
        return Err(SurrogateError::DatasetTooLarge(size));
    }
    let total = size as u64;
    let n_sg = case.sync_gens.len();
    let n_bin_states: u64 = 1 << space.n_binary();
    let n_lvl_states: u64 = (total / n_bin_states).max(1);

    let rows: Vec<Option<(DevicePoint, Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let lvl_idx = idx / n_bin_states;
            let bin_idx = idx % n_bin_states;
            debug_assert!(lvl_idx < n_lvl_states);
            let point = space.decode(bin_idx, lvl_idx, n_sg);
            match impedance_metrics(case, &point) {
                Ok(m) => {
                    let phi = space.feature_vector(&point);
                    let zm_row: Vec<f64> = ibg_pair_order(case.gfl_ibgs.len())
                        .iter()
                        .map(|&(i, j)| m.zm[i][j])
                        .collect();
                    Some((point, phi, m.z1, zm_row))
                }
                Err(_) => None,
            }
        })
        .collect();

    let mut ds = Dataset {
        space,
        features: Vec::new(),
        points: Vec::new(),
        z1: Vec::new(),
        zm: Vec::new(),
        excluded: 0,
        total,
    };
    for row in rows {
        match row {
            Some((point, phi, z1, zm)) => {
                ds.points.push(point);
                ds.features.push(phi);
                ds.z1.push(z1);
                ds.zm.push(zm);
            }
            None => ds.excluded += 1,
        }
    }
    if ds.features.is_empty() {
        return Err(SurrogateError::EmptyDataset(total));
    }
    Ok(ds)
}

/// A fitted sparse linear model over the feature basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Indices into the canonical feature basis that survived pruning.
    pub retained: Vec<usize>,
    pub coeffs: Vec<f64>,
    /// Design matrix of the refit pass was rank deficient; the reported
    /// coefficients are the minimum-norm solution.
    pub rank_deficient: bool,
}

impl FittedModel {
    pub fn predict_from_full(&self, full_features: &[f64]) -> f64 {
        self.retained
            .iter()
            .zip(&self.coeffs)
            .map(|(&j, &k)| k * full_features[j])
            .sum()
    }
}

/// Training-set fit quality for one target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mse: f64,
    /// Mean absolute error percentage, rows with |actual| < 1e-9 excluded.
    pub maep: f64,
    pub n_retained: usize,
    pub rank_deficient: bool,
}

fn solve_ls(phi: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, bool), SurrogateError> {
    let svd = phi.clone().svd(true, true);
    let rank = svd.rank(SVD_EPS * svd.singular_values.max());
    let sol = svd
        .solve(y, SVD_EPS * svd.singular_values.max())
        .map_err(|e| SurrogateError::Solve(e.to_string()))?;
    Ok((sol, rank < phi.ncols()))
}

/// Two-pass least squares: full fit, prune |k| < PRUNE_TOL, refit survivors.
pub fn fit_target(features: &[Vec<f64>], y: &[f64]) -> Result<FittedModel, SurrogateError> {
    assert_eq!(features.len(), y.len());
    let n = features.len();
    let p = features[0].len();
    let phi = DMatrix::from_fn(n, p, |i, j| features[i][j]);
    let yv = DVector::from_column_slice(y);

    let (k1, _) = solve_ls(&phi, &yv)?;
    let retained: Vec<usize> = (0..p).filter(|&j| k1[j].abs() >= PRUNE_TOL).collect();
    if retained.is_empty() {
        // Target is indistinguishable from zero over the dataset.
        return Ok(FittedModel {
            retained: Vec::new(),
            coeffs: Vec::new(),
            rank_deficient: false,
        });
    }
    let phi2 = DMatrix::from_fn(n, retained.len(), |i, j| features[i][retained[j]]);
    let (k2, rank_deficient) = solve_ls(&phi2, &yv)?;
    Ok(FittedModel {
        coeffs: k2.iter().copied().collect(),
        retained,
        rank_deficient,
    })
}

/// Fit quality of `model` against the rows it was trained on.
pub fn evaluate_fit(model: &FittedModel, features: &[Vec<f64>], y: &[f64]) -> FitMetrics {
    let mut se = 0.0;
    let mut pe = 0.0;
    let mut n_pe = 0usize;
    for (phi, &actual) in features.iter().zip(y) {
        let pred = model.predict_from_full(phi);
        se += (pred - actual) * (pred - actual);
        if actual.abs() >= MAEP_FLOOR {
            pe += ((pred - actual) / actual).abs();
            n_pe += 1;
        }
    }
    FitMetrics {
        mse: se / features.len() as f64,
        maep: if n_pe > 0 {
            100.0 * pe / n_pe as f64
        } else {
            0.0
        },
        n_retained: model.retained.len(),
        rank_deficient: model.rank_deficient,
    }
}

/// The complete trained surrogate: one model per IBG self term, one per
/// ordered IBG pair mutual ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Surrogate {
    pub space: FeatureSpace,
    pub ibg_names: Vec<String>,
    pub pair_order: Vec<(usize, usize)>,
    pub z1_models: Vec<FittedModel>,
    pub zm_models: Vec<FittedModel>,
    pub z1_metrics: Vec<FitMetrics>,
    pub zm_metrics: Vec<FitMetrics>,
    pub dataset_total: u64,
    pub dataset_excluded: u64,
}

impl Surrogate {
    pub fn predict_z1(&self, ibg: usize, point: &DevicePoint) -> f64 {
        let phi = self.space.feature_vector(point);
        self.z1_models[ibg].predict_from_full(&phi)
    }

    pub fn predict_zm(&self, from: usize, toward: usize, point: &DevicePoint) -> f64 {
        let phi = self.space.feature_vector(point);
        let k = self
            .pair_order
            .iter()
            .position(|&p| p == (from, toward))
            .expect("pair not in surrogate");
        self.zm_models[k].predict_from_full(&phi)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surrogate serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Surrogate, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Metrics table as CSV: target,mse,maep,n_retained,rank_deficient.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("target,mse,maep,n_retained,rank_deficient\n");
        for (i, m) in self.z1_metrics.iter().enumerate() {
            out.push_str(&format!(
                "z1_{},{:.6e},{:.4},{},{}\n",
                self.ibg_names[i], m.mse, m.maep, m.n_retained, m.rank_deficient
            ));
        }
        for (k, m) in self.zm_metrics.iter().enumerate() {
            let (i, j) = self.pair_order[k];
            out.push_str(&format!(
                "zm_{}_{},{:.6e},{:.4},{},{}\n",
                self.ibg_names[i], self.ibg_names[j], m.mse, m.maep, m.n_retained, m.rank_deficient
            ));
        }
        out
    }
}

/// Enumerate, fit every target, and package the surrogate.
pub fn train(case: &GridCase) -> Result<Surrogate, SurrogateError> {
    let ds = enumerate_dataset(case)?;
    train_on(case, &ds)
}

/// Fit every target on an existing dataset.
pub fn train_on(case: &GridCase, ds: &Dataset) -> Result<Surrogate, SurrogateError> {
    let n_ibg = case.gfl_ibgs.len();
    let pair_order = ibg_pair_order(n_ibg);

    let mut z1_models = Vec::with_capacity(n_ibg);
    let mut z1_metrics = Vec::with_capacity(n_ibg);
    for i in 0..n_ibg {
        let y: Vec<f64> = ds.z1.iter().map(|r| r[i]).collect();
        let m = fit_target(&ds.features, &y)?;
        z1_metrics.push(evaluate_fit(&m, &ds.features, &y));
        z1_models.push(m);
    }
    let mut zm_models = Vec::with_capacity(pair_order.len());
    let mut zm_metrics = Vec::with_capacity(pair_order.len());
    for k in 0..pair_order.len() {
        let y: Vec<f64> = ds.zm.iter().map(|r| r[k]).collect();
        let m = fit_target(&ds.features, &y)?;
        zm_metrics.push(evaluate_fit(&m, &ds.features, &y));
        zm_models.push(m);
    }

    Ok(Surrogate {
        space: ds.space.clone(),
        ibg_names: case.gfl_ibgs.iter().map(|g| g.name.clone()).collect(),
        pair_order,
        z1_models,
        zm_models,
        z1_metrics,
        zm_metrics,
        dataset_total: ds.total,
        dataset_excluded: ds.excluded,
    })
}
