//! Impedance-side model: admittance assembly, dense inversion, and the
//! self/mutual impedance ratios consumed by the stability surrogate.
//!
//! The bus admittance matrix splits as `Y = Y0 + Yg`: `Y0` couples buses
//! through the series reactance of each line, `Yg` is the diagonal grounding
//! contribution of committed devices through their transient reactances.
//! Line resistance and charging are deliberately left out of `Y0`: the
//! stability quantities are short-circuit-strength ratios built under the
//! small-R/X approximation, and shunt charging would otherwise ground an
//! all-off network that is physically sourceless. Grid-following IBGs and
//! STATCOMs contribute nothing to `Yg`; they are current sources behind the
//! boundary. The reference bus row is kept (grounding comes from devices,
//! not from removing a row), so an all-off network is singular and reported
//! as such.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::case::{GridCase, ShuntKind};

/// Ill-conditioning threshold on the infinity-norm condition estimate.
pub const COND_LIMIT: f64 = 1e12;
/// Inversion residual bound: `‖Y Z − I‖_inf` must stay below this.
pub const RESIDUAL_LIMIT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AdmittanceError {
    #[error("admittance matrix is singular (no grounding path)")]
    Singular,
    #[error("admittance matrix is ill-conditioned: cond_est = {cond_est:.3e}, residual = {residual:.3e}")]
    IllConditioned { cond_est: f64, residual: f64 },
}

/// Device operating point the grounding matrix is evaluated at.
///
/// Entries follow case ordering: `sg_on[i]` for `case.sync_gens[i]`,
/// `gfm_alpha[i]` for `case.gfm_units[i]`, and `sc_on[i]` for the i-th
/// synchronous condenser in `case.sc_indices()` order. Commitment values are
/// binary in scheduling but carried as `f64` so relaxed points can be probed.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePoint {
    pub sg_on: Vec<f64>,
    pub gfm_alpha: Vec<f64>,
    pub sc_on: Vec<f64>,
}

impl DevicePoint {
    /// Reference configuration: everything on, grid-forming plants at full
    /// admittance share.
    pub fn all_on(case: &GridCase) -> Self {
        DevicePoint {
            sg_on: vec![1.0; case.sync_gens.len()],
            gfm_alpha: vec![1.0; case.gfm_units.len()],
            sc_on: vec![1.0; case.sc_indices().len()],
        }
    }
}

/// Passive network coupling: series reactance only, per the small-R/X
/// stability approximation. Resistance and line charging are excluded, so
/// `Y0` has zero row sums and grounding must come from `Yg`.
pub fn build_y0(case: &GridCase) -> DMatrix<Complex64> {
    let n = case.n_buses();
    let mut y = DMatrix::zeros(n, n);
    for line in &case.lines {
        let ys = Complex64::new(0.0, line.x).inv();
        y[(line.from, line.from)] += ys;
        y[(line.to, line.to)] += ys;
        y[(line.from, line.to)] -= ys;
        y[(line.to, line.from)] -= ys;
    }
    y
}

/// Diagonal grounding admittance of the commitment-dependent devices.
///
/// Each committed synchronous machine grounds its bus through `1/(j x')`,
/// each grid-forming plant through `alpha/(j x')`, each on synchronous
/// condenser through `1/(j x')`.
pub fn build_yg(case: &GridCase, point: &DevicePoint) -> DMatrix<Complex64> {
    assert_eq!(point.sg_on.len(), case.sync_gens.len(), "sg_on length");
    assert_eq!(point.gfm_alpha.len(), case.gfm_units.len(), "gfm_alpha length");
    let sc_idx = case.sc_indices();
    assert_eq!(point.sc_on.len(), sc_idx.len(), "sc_on length");

    let n = case.n_buses();
    let mut y = DMatrix::zeros(n, n);
    for (g, on) in case.sync_gens.iter().zip(&point.sg_on) {
        y[(g.bus, g.bus)] += on * Complex64::new(0.0, g.x_transient).inv();
    }
    for (g, alpha) in case.gfm_units.iter().zip(&point.gfm_alpha) {
        y[(g.bus, g.bus)] += alpha * Complex64::new(0.0, g.x_transient).inv();
    }
    for (&di, on) in sc_idx.iter().zip(&point.sc_on) {
        let d = &case.shunt_devices[di];
        debug_assert_eq!(d.kind, ShuntKind::SyncCond);
        let x = d.x_transient.expect("validated SC has x_transient");
        y[(d.bus, d.bus)] += on * Complex64::new(0.0, x).inv();
    }
    y
}

/// Inversion result with its conditioning evidence.
#[derive(Debug, Clone)]
pub struct ZResult {
    pub z: DMatrix<Complex64>,
    /// `‖Y‖_inf · ‖Z‖_inf` condition estimate.
    pub cond_est: f64,
    /// `‖Y Z − I‖_inf` inversion residual.
    pub residual: f64,
}

fn inf_norm(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense LU inversion of the full admittance matrix with conditioning checks.
pub fn compute_z(y: &DMatrix<Complex64>) -> Result<ZResult, AdmittanceError> {
    let n = y.nrows();
    assert_eq!(n, y.ncols(), "admittance matrix must be square");
    let z = y.clone().lu().try_inverse().ok_or(AdmittanceError::Singular)?;
    if !z.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(AdmittanceError::Singular);
    }
    let residual = inf_norm(&(y * &z - DMatrix::<Complex64>::identity(n, n)));
    let cond_est = inf_norm(y) * inf_norm(&z);
    if cond_est > COND_LIMIT || !(residual < RESIDUAL_LIMIT) {
        return Err(AdmittanceError::IllConditioned { cond_est, residual });
    }
    Ok(ZResult { z, cond_est, residual })
}

/// Self term of the strength pair: `z1 = 1 / |Z_cc|`.
pub fn z_self_strength(z: &DMatrix<Complex64>, bus: usize) -> f64 {
    1.0 / z[(bus, bus)].norm()
}

/// Mutual coupling ratio `|Z_cc'| / |Z_cc|` seen from `bus` toward `other`.
pub fn z_mutual_ratio(z: &DMatrix<Complex64>, bus: usize, other: usize) -> f64 {
    z[(bus, other)].norm() / z[(bus, bus)].norm()
}

/// Impedance-derived quantities at every grid-following IBG bus.
#[derive(Debug, Clone)]
pub struct ImpedanceMetrics {
    /// `z1[i]`: self strength at the bus of `case.gfl_ibgs[i]`.
    pub z1: Vec<f64>,
    /// `zm[i][j]`: coupling ratio from IBG i's bus toward IBG j's bus
    /// (diagonal unused, set to 0).
    pub zm: Vec<Vec<f64>>,
}

/// Evaluate the impedance metrics for one device operating point.
pub fn impedance_metrics(
    case: &GridCase,
    point: &DevicePoint,
) -> Result<ImpedanceMetrics, AdmittanceError> {
    let y = build_y0(case) + build_yg(case, point);
    let zr = compute_z(&y)?;
    let m = case.gfl_ibgs.len();
    let mut z1 = Vec::with_capacity(m);
    let mut zm = vec![vec![0.0; m]; m];
    for (i, g) in case.gfl_ibgs.iter().enumerate() {
        z1.push(z_self_strength(&zr.z, g.bus));
        for (j, h) in case.gfl_ibgs.iter().enumerate() {
            if i != j {
                zm[i][j] = z_mutual_ratio(&zr.z, g.bus, h.bus);
            }
        }
    }
    Ok(ImpedanceMetrics { z1, zm })
}

/// Scalar system-strength indicator: the weakest (minimum) `z1` over IBG
/// buses at the given operating point. Cases without IBGs have no weak bus
/// to report and return `None`.
pub fn strength_indicator(
    case: &GridCase,
    point: &DevicePoint,
) -> Result<Option<f64>, AdmittanceError> {
    let metrics = impedance_metrics(case, point)?;
    Ok(metrics.z1.into_iter().fold(None, |acc, v| {
        Some(match acc {
            None => v,
            Some(a) => a.min(v),
        })
    }))
}
