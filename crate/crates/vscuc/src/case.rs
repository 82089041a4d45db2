//! Grid case data model: parse, validate, and normalize case documents.
//!
//! A case is a UTF-8 TOML document with typed sections (`buses`, `lines`,
//! `sync_gens`, `gfm_units`, `gfl_ibgs`, `shunt_devices`, `frequency`,
//! `costs`, optional `forecast`). Power-like fields are written either in
//! physical units (MW / MVAr / MVA, `units = "physical"`) or directly in
//! per-unit (`units = "pu"`); impedances, voltages, and current limits are
//! per-unit in both conventions. See `docs/case_format.md` for the full
//! field-by-field reference.
//!
//! Internally everything is per-unit on `base_mva`; MW appears only at I/O
//! boundaries. Cost coefficients stay in physical $ terms ($/MWh against MW)
//! and are converted where the objective is assembled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Units convention for power-like fields of a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Physical,
    Pu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuntKind {
    Statcom,
    SyncCond,
}

/// Severity of a validation diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding, with the field path it refers to.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{sev} at {}: {}", self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("dangling bus reference at {path}: bus {bus} does not exist")]
    DanglingBus { path: String, bus: i64 },
    #[error("network graph is disconnected: bus {bus} unreachable from bus {root}")]
    Disconnected { bus: i64, root: i64 },
    #[error("duplicate reference bus: buses {first} and {second} are both marked is_reference")]
    DuplicateReference { first: i64, second: i64 },
    #[error("case invalid:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// Document layer (serde mirror of the TOML schema)
// ---------------------------------------------------------------------------

fn default_units() -> Units {
    Units::Physical
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub base_mva: f64,
    #[serde(default = "default_units")]
    pub units: Units,
    pub buses: Vec<BusDoc>,
    #[serde(default)]
    pub lines: Vec<LineDoc>,
    #[serde(default)]
    pub sync_gens: Vec<SyncGenDoc>,
    #[serde(default)]
    pub gfm_units: Vec<GfmDoc>,
    #[serde(default)]
    pub gfl_ibgs: Vec<GflDoc>,
    #[serde(default)]
    pub shunt_devices: Vec<ShuntDoc>,
    pub frequency: FrequencyDoc,
    pub costs: CostsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDoc {
    pub id: i64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default = "default_vmin")]
    pub v_min: f64,
    #[serde(default = "default_vmax")]
    pub v_max: f64,
    #[serde(default)]
    pub is_reference: bool,
}

fn default_vmin() -> f64 {
    0.95
}

fn default_vmax() -> f64 {
    1.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub from: i64,
    pub to: i64,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_sh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncGenDoc {
    pub name: String,
    pub bus: i64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp: f64,
    pub min_up: u32,
    pub min_down: u32,
    pub x_transient: f64,
    pub inertia_h: f64,
    pub pfr_gain: f64,
    pub cost_quad: f64,
    pub cost_lin: f64,
    pub cost_noload: f64,
    pub cost_startup: f64,
    #[serde(default)]
    pub init_on: bool,
    #[serde(default = "default_init_hours")]
    pub init_hours: u32,
    #[serde(default)]
    pub init_p: f64,
}

fn default_init_hours() -> u32 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfmDoc {
    pub name: String,
    pub bus: i64,
    pub x_transient: f64,
    pub p_max: f64,
    pub alpha_levels: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GflDoc {
    pub name: String,
    pub bus: i64,
    #[serde(default = "default_one")]
    pub s_max: f64,
    pub available: Vec<f64>,
    #[serde(default)]
    pub si_capable: bool,
    #[serde(default)]
    pub h_si_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntDoc {
    pub name: String,
    pub bus: i64,
    pub kind: ShuntKind,
    pub q_rating: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_transient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyDoc {
    pub dp_l: f64,
    pub df_lim: f64,
    pub t_d: f64,
    pub damping_d: f64,
    pub rocof_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsDoc {
    pub shed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastDoc {
    /// Per-hour multiplier applied to every bus (p_load, q_load).
    #[serde(default)]
    pub load_factor: Vec<f64>,
    /// Quantile bins used at scenario-tree branching hours.
    #[serde(default)]
    pub quantiles: Vec<QuantileDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileDoc {
    pub mass: f64,
    #[serde(default)]
    pub wind_dev: f64,
    #[serde(default)]
    pub load_dev: f64,
}

impl CaseDocument {
    /// Convert all power-like fields from physical units to per-unit.
    ///
    /// Idempotent: a document already in per-unit is returned unchanged.
    /// Impedances, voltage bounds, current limits, and cost coefficients are
    /// not touched (the first three are per-unit in both conventions, the
    /// last stays in physical $ terms by design).
    pub fn normalized(mut self) -> CaseDocument {
        if self.units == Units::Pu {
            return self;
        }
        let b = self.base_mva;
        for bus in &mut self.buses {
            bus.p_load /= b;
            bus.q_load /= b;
        }
        for line in &mut self.lines {
            if let Some(r) = line.rating.as_mut() {
                *r /= b;
            }
        }
        for g in &mut self.sync_gens {
            g.p_min /= b;
            g.p_max /= b;
            g.q_min /= b;
            g.q_max /= b;
            g.ramp /= b;
            g.init_p /= b;
        }
        for g in &mut self.gfm_units {
            g.p_max /= b;
        }
        for g in &mut self.gfl_ibgs {
            g.s_max /= b;
            for a in &mut g.available {
                *a /= b;
            }
        }
        for d in &mut self.shunt_devices {
            d.q_rating /= b;
        }
        self.frequency.dp_l /= b;
        self.units = Units::Pu;
        self
    }
}

// ---------------------------------------------------------------------------
// Validated per-unit model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: i64,
    pub p_load: f64,
    pub q_load: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Internal bus indices, not external ids.
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_sh: f64,
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncGen {
    pub name: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp: f64,
    pub min_up: u32,
    pub min_down: u32,
    pub x_transient: f64,
    pub inertia_h: f64,
    pub pfr_gain: f64,
    pub cost_quad: f64,
    pub cost_lin: f64,
    pub cost_noload: f64,
    pub cost_startup: f64,
    pub init_on: bool,
    pub init_hours: u32,
    pub init_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFormingUnit {
    pub name: String,
    pub bus: usize,
    pub x_transient: f64,
    pub p_max: f64,
    pub alpha_levels: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFollowingIbg {
    pub name: String,
    pub bus: usize,
    pub s_max: f64,
    pub available_profile: Vec<f64>,
    pub si_capable: bool,
    pub h_si_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuntReactiveDevice {
    pub name: String,
    pub bus: usize,
    pub kind: ShuntKind,
    pub q_rating: f64,
    pub i_max: Option<f64>,
    pub x_transient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyParams {
    /// Largest power disturbance, p.u.
    pub dp_l: f64,
    /// Nadir limit, p.u. of nominal frequency.
    pub df_lim: f64,
    /// Primary-response delivery time, s.
    pub t_d: f64,
    /// Load damping, p.u. power per p.u. frequency.
    pub damping_d: f64,
    /// RoCoF limit, p.u./s.
    pub rocof_max: f64,
}

impl FrequencyParams {
    /// Constant term of the nadir constraint:
    /// x1^2 = dP^2 T / (4 df) - dP T D / 4.
    pub fn x1_squared(&self) -> f64 {
        self.dp_l * self.dp_l * self.t_d / (4.0 * self.df_lim)
            - self.dp_l * self.t_d * self.damping_d / 4.0
    }

    /// Coefficient of each gamma_j * H_sj^2 term in the nadir constraint.
    pub fn si_penalty_coeff(&self) -> f64 {
        self.dp_l * self.t_d / 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastProfileData {
    pub load_factor: Vec<f64>,
    pub quantiles: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub sync_gens: Vec<SyncGen>,
    pub gfm_units: Vec<GridFormingUnit>,
    pub gfl_ibgs: Vec<GridFollowingIbg>,
    pub shunt_devices: Vec<ShuntReactiveDevice>,
    pub freq_params: FrequencyParams,
    /// Value of lost load, $/MWh.
    pub shed_cost: f64,
    pub forecast: Option<ForecastProfileData>,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of an external bus id.
    pub fn bus_index(&self, id: i64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Indices into `shunt_devices` of the synchronous condensers.
    pub fn sc_indices(&self) -> Vec<usize> {
        self.shunt_devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == ShuntKind::SyncCond)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices into `shunt_devices` of the STATCOMs.
    pub fn statcom_indices(&self) -> Vec<usize> {
        self.shunt_devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == ShuntKind::Statcom)
            .map(|(i, _)| i)
            .collect()
    }

    /// Lines incident to each bus, as (line index, is_from_side).
    pub fn incidence(&self) -> Vec<Vec<(usize, bool)>> {
        let mut inc = vec![Vec::new(); self.buses.len()];
        for (l, line) in self.lines.iter().enumerate() {
            inc[line.from].push((l, true));
            inc[line.to].push((l, false));
        }
        inc
    }

    /// Rebuild the document form (per-unit convention).
    pub fn to_document(&self) -> CaseDocument {
        CaseDocument {
            base_mva: self.base_mva,
            units: Units::Pu,
            buses: self
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id,
                    p_load: b.p_load,
                    q_load: b.q_load,
                    v_min: b.v_min,
                    v_max: b.v_max,
                    is_reference: b.is_reference,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineDoc {
                    from: self.buses[l.from].id,
                    to: self.buses[l.to].id,
                    r: l.r,
                    x: l.x,
                    b_sh: l.b_sh,
                    rating: l.rating,
                })
                .collect(),
            sync_gens: self
                .sync_gens
                .iter()
                .map(|g| SyncGenDoc {
                    name: g.name.clone(),
                    bus: self.buses[g.bus].id,
                    p_min: g.p_min,
                    p_max: g.p_max,
                    q_min: g.q_min,
                    q_max: g.q_max,
                    ramp: g.ramp,
                    min_up: g.min_up,
                    min_down: g.min_down,
                    x_transient: g.x_transient,
                    inertia_h: g.inertia_h,
                    pfr_gain: g.pfr_gain,
                    cost_quad: g.cost_quad,
                    cost_lin: g.cost_lin,
                    cost_noload: g.cost_noload,
                    cost_startup: g.cost_startup,
                    init_on: g.init_on,
                    init_hours: g.init_hours,
                    init_p: g.init_p,
                })
                .collect(),
            gfm_units: self
                .gfm_units
                .iter()
                .map(|g| GfmDoc {
                    name: g.name.clone(),
                    bus: self.buses[g.bus].id,
                    x_transient: g.x_transient,
                    p_max: g.p_max,
                    alpha_levels: g.alpha_levels,
                })
                .collect(),
            gfl_ibgs: self
                .gfl_ibgs
                .iter()
                .map(|g| GflDoc {
                    name: g.name.clone(),
                    bus: self.buses[g.bus].id,
                    s_max: g.s_max,
                    available: g.available_profile.clone(),
                    si_capable: g.si_capable,
                    h_si_max: g.h_si_max,
                })
                .collect(),
            shunt_devices: self
                .shunt_devices
                .iter()
                .map(|d| ShuntDoc {
                    name: d.name.clone(),
                    bus: self.buses[d.bus].id,
                    kind: d.kind,
                    q_rating: d.q_rating,
                    i_max: d.i_max,
                    x_transient: d.x_transient,
                })
                .collect(),
            frequency: FrequencyDoc {
                dp_l: self.freq_params.dp_l,
                df_lim: self.freq_params.df_lim,
                t_d: self.freq_params.t_d,
                damping_d: self.freq_params.damping_d,
                rocof_max: self.freq_params.rocof_max,
            },
            costs: CostsDoc {
                shed: self.shed_cost,
            },
            forecast: self.forecast.as_ref().map(|f| ForecastDoc {
                load_factor: f.load_factor.clone(),
                quantiles: f
                    .quantiles
                    .iter()
                    .map(|&(mass, wind_dev, load_dev)| QuantileDoc {
                        mass,
                        wind_dev,
                        load_dev,
                    })
                    .collect(),
            }),
        }
    }

    /// Serialize to the TOML document text (per-unit convention).
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_document()).expect("case serialization cannot fail")
    }
}

// ---------------------------------------------------------------------------
// Parse and validate
// ---------------------------------------------------------------------------

/// Parse a case document, normalize to per-unit, and validate.
///
/// Structural problems (schema, dangling references, disconnected graph,
/// duplicate reference bus) and any ERROR-severity diagnostic reject the case.
pub fn parse_case(text: &str) -> Result<GridCase, CaseError> {
    let doc: CaseDocument = toml::from_str(text).map_err(|e| CaseError::Schema(e.to_string()))?;
    build_case(doc)
}

/// Build a validated [`GridCase`] from an in-memory document.
pub fn build_case(doc: CaseDocument) -> Result<GridCase, CaseError> {
    let doc = doc.normalized();

    let mut seen_ref: Option<i64> = None;
    for bus in &doc.buses {
        if bus.is_reference {
            if let Some(first) = seen_ref {
                return Err(CaseError::DuplicateReference {
                    first,
                    second: bus.id,
                });
            }
            seen_ref = Some(bus.id);
        }
    }
    {
        let mut ids: Vec<i64> = doc.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != doc.buses.len() {
            return Err(CaseError::Schema("duplicate bus id".into()));
        }
    }

    let resolve = |path: String, id: i64| -> Result<usize, CaseError> {
        doc.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(CaseError::DanglingBus { path, bus: id })
    };

    let buses: Vec<Bus> = doc
        .buses
        .iter()
        .map(|b| Bus {
            id: b.id,
            p_load: b.p_load,
            q_load: b.q_load,
            v_min: b.v_min,
            v_max: b.v_max,
            is_reference: b.is_reference,
        })
        .collect();

    let mut lines = Vec::with_capacity(doc.lines.len());
    for (i, l) in doc.lines.iter().enumerate() {
        lines.push(Line {
            from: resolve(format!("lines[{i}].from"), l.from)?,
            to: resolve(format!("lines[{i}].to"), l.to)?,
            r: l.r,
            x: l.x,
            b_sh: l.b_sh,
            rating: l.rating,
        });
    }

    let mut sync_gens = Vec::with_capacity(doc.sync_gens.len());
    for (i, g) in doc.sync_gens.iter().enumerate() {
        sync_gens.push(SyncGen {
            name: g.name.clone(),
            bus: resolve(format!("sync_gens[{i}].bus"), g.bus)?,
            p_min: g.p_min,
            p_max: g.p_max,
            q_min: g.q_min,
            q_max: g.q_max,
            ramp: g.ramp,
            min_up: g.min_up,
            min_down: g.min_down,
            x_transient: g.x_transient,
            inertia_h: g.inertia_h,
            pfr_gain: g.pfr_gain,
            cost_quad: g.cost_quad,
            cost_lin: g.cost_lin,
            cost_noload: g.cost_noload,
            cost_startup: g.cost_startup,
            init_on: g.init_on,
            init_hours: g.init_hours,
            init_p: g.init_p,
        });
    }

    let mut gfm_units = Vec::with_capacity(doc.gfm_units.len());
    for (i, g) in doc.gfm_units.iter().enumerate() {
        gfm_units.push(GridFormingUnit {
            name: g.name.clone(),
            bus: resolve(format!("gfm_units[{i}].bus"), g.bus)?,
            x_transient: g.x_transient,
            p_max: g.p_max,
            alpha_levels: g.alpha_levels,
        });
    }

    let mut gfl_ibgs = Vec::with_capacity(doc.gfl_ibgs.len());
    for (i, g) in doc.gfl_ibgs.iter().enumerate() {
        gfl_ibgs.push(GridFollowingIbg {
            name: g.name.clone(),
            bus: resolve(format!("gfl_ibgs[{i}].bus"), g.bus)?,
            s_max: g.s_max,
            available_profile: g.available.clone(),
            si_capable: g.si_capable,
            h_si_max: g.h_si_max,
        });
    }

    let mut shunt_devices = Vec::with_capacity(doc.shunt_devices.len());
    for (i, d) in doc.shunt_devices.iter().enumerate() {
        shunt_devices.push(ShuntReactiveDevice {
            name: d.name.clone(),
            bus: resolve(format!("shunt_devices[{i}].bus"), d.bus)?,
            kind: d.kind,
            q_rating: d.q_rating,
            i_max: d.i_max,
            x_transient: d.x_transient,
        });
    }

    check_connected(&buses, &lines)?;

    let case = GridCase {
        base_mva: doc.base_mva,
        buses,
        lines,
        sync_gens,
        gfm_units,
        gfl_ibgs,
        shunt_devices,
        freq_params: FrequencyParams {
            dp_l: doc.frequency.dp_l,
            df_lim: doc.frequency.df_lim,
            t_d: doc.frequency.t_d,
            damping_d: doc.frequency.damping_d,
            rocof_max: doc.frequency.rocof_max,
        },
        shed_cost: doc.costs.shed,
        forecast: doc.forecast.map(|f| ForecastProfileData {
            load_factor: f.load_factor,
            quantiles: f
                .quantiles
                .iter()
                .map(|q| (q.mass, q.wind_dev, q.load_dev))
                .collect(),
        }),
    };

    let diags = validate_case(&case);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(CaseError::Invalid(diags));
    }
    Ok(case)
}

fn check_connected(buses: &[Bus], lines: &[Line]) -> Result<(), CaseError> {
    if buses.len() <= 1 {
        return Ok(());
    }
    let mut adj = vec![Vec::new(); buses.len()];
    for l in lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut seen = vec![false; buses.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CaseError::Disconnected {
            bus: buses[i].id,
            root: buses[0].id,
        });
    }
    Ok(())
}

/// Re-check every type invariant of a built case; empty result means valid.
pub fn validate_case(case: &GridCase) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |location: String, message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            location,
            message,
        });
    };

    if !(case.base_mva > 0.0) {
        err("base_mva".into(), format!("must be > 0, got {}", case.base_mva));
    }
    for (i, b) in case.buses.iter().enumerate() {
        if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
            err(
                format!("buses[{i}]"),
                format!("requires 0 < v_min <= v_max, got [{}, {}]", b.v_min, b.v_max),
            );
        }
    }
    let n_ref = case.buses.iter().filter(|b| b.is_reference).count();
    if n_ref > 1 {
        err("buses".into(), format!("{n_ref} reference buses, at most one allowed"));
    }
    for (i, l) in case.lines.iter().enumerate() {
        if !(l.x > 0.0) {
            err(format!("lines[{i}].x"), format!("must be > 0, got {}", l.x));
        }
        if l.from == l.to {
            err(format!("lines[{i}]"), "from and to must differ".into());
        }
    }
    for (i, g) in case.sync_gens.iter().enumerate() {
        if g.p_min > g.p_max {
            err(
                format!("sync_gens[{i}]"),
                format!("p_min {} > p_max {}", g.p_min, g.p_max),
            );
        }
        if !(g.x_transient > 0.0) {
            err(format!("sync_gens[{i}].x_transient"), "must be > 0".into());
        }
        if g.inertia_h < 0.0 {
            err(format!("sync_gens[{i}].inertia_h"), "must be >= 0".into());
        }
        if g.min_up < 1 || g.min_down < 1 {
            err(
                format!("sync_gens[{i}]"),
                "min_up and min_down must be >= 1".into(),
            );
        }
    }
    for (i, g) in case.gfm_units.iter().enumerate() {
        if !(g.x_transient > 0.0) {
            err(format!("gfm_units[{i}].x_transient"), "must be > 0".into());
        }
        if g.alpha_levels < 2 {
            err(
                format!("gfm_units[{i}].alpha_levels"),
                format!("must be >= 2, got {}", g.alpha_levels),
            );
        }
    }
    for (i, g) in case.gfl_ibgs.iter().enumerate() {
        if !(g.s_max > 0.0) {
            err(format!("gfl_ibgs[{i}].s_max"), "must be > 0".into());
        }
        if g.available_profile.iter().any(|&a| a < 0.0) {
            err(
                format!("gfl_ibgs[{i}].available"),
                "profile values must be >= 0".into(),
            );
        }
        if g.available_profile.is_empty() {
            err(format!("gfl_ibgs[{i}].available"), "profile is empty".into());
        }
    }
    for (i, d) in case.shunt_devices.iter().enumerate() {
        if d.q_rating < 0.0 {
            err(format!("shunt_devices[{i}].q_rating"), "must be >= 0".into());
        }
        match d.kind {
            ShuntKind::Statcom => {
                if d.i_max.map_or(true, |v| v <= 0.0) {
                    err(
                        format!("shunt_devices[{i}].i_max"),
                        "STATCOM requires i_max > 0".into(),
                    );
                }
                if d.x_transient.is_some() {
                    err(
                        format!("shunt_devices[{i}].x_transient"),
                        "STATCOM must not set x_transient (no admittance contribution)".into(),
                    );
                }
            }
            ShuntKind::SyncCond => {
                if d.x_transient.map_or(true, |v| v <= 0.0) {
                    err(
                        format!("shunt_devices[{i}].x_transient"),
                        "synchronous condenser requires x_transient > 0".into(),
                    );
                }
            }
        }
    }
    {
        let f = &case.freq_params;
        for (name, v) in [
            ("dp_l", f.dp_l),
            ("df_lim", f.df_lim),
            ("t_d", f.t_d),
            ("damping_d", f.damping_d),
            ("rocof_max", f.rocof_max),
        ] {
            if !(v > 0.0) {
                err(format!("frequency.{name}"), format!("must be > 0, got {v}"));
            }
        }
        if f.df_lim > 0.0 && f.dp_l / f.df_lim <= f.damping_d {
            err(
                "frequency".into(),
                format!(
                    "realness condition violated: dp_l/df_lim = {} must exceed damping_d = {}",
                    f.dp_l / f.df_lim,
                    f.damping_d
                ),
            );
        }
    }
    if case.shed_cost < 0.0 {
        err("costs.shed".into(), "must be >= 0".into());
    }
    if let Some(fc) = &case.forecast {
        if fc.load_factor.iter().any(|&v| v < 0.0) {
            err("forecast.load_factor".into(), "factors must be >= 0".into());
        }
        for (i, &(mass, wd, ld)) in fc.quantiles.iter().enumerate() {
            if mass < 0.0 {
                err(format!("forecast.quantiles[{i}].mass"), "must be >= 0".into());
            }
            if wd <= -1.0 || ld <= -1.0 {
                err(
                    format!("forecast.quantiles[{i}]"),
                    "deviations must keep realizations >= 0 (dev > -1)".into(),
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_text() -> String {
        r#"
base_mva = 100.0
units = "physical"

[[buses]]
id = 1
is_reference = true

[[buses]]
id = 2
p_load = 50.0
q_load = 10.0

[[lines]]
from = 1
to = 2
x = 0.1

[[sync_gens]]
name = "G1"
bus = 1
p_min = 10.0
p_max = 80.0
q_min = -40.0
q_max = 60.0
ramp = 60.0
min_up = 1
min_down = 1
x_transient = 0.2
inertia_h = 5.0
pfr_gain = 16.0
cost_quad = 0.02
cost_lin = 25.0
cost_noload = 100.0
cost_startup = 300.0

[frequency]
dp_l = 30.0
df_lim = 0.01
t_d = 10.0
damping_d = 0.5
rocof_max = 0.05

[costs]
shed = 10000.0
"#
        .to_string()
    }

    #[test]
    fn parses_minimal_two_bus_case() {
        let case = parse_case(&two_bus_text()).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.lines.len(), 1);
        assert_eq!(case.sync_gens.len(), 1);
        // 50 MW on a 100 MVA base.
        assert_eq!(case.buses[1].p_load, 0.5);
        assert_eq!(case.sync_gens[0].p_max, 0.8);
        assert_eq!(case.freq_params.dp_l, 0.3);
    }

    #[test]
    fn dangling_bus_reference_is_reported_with_path() {
        let text = two_bus_text().replace("to = 2", "to = 99");
        match parse_case(&text) {
            Err(CaseError::DanglingBus { path, bus }) => {
                assert_eq!(path, "lines[0].to");
                assert_eq!(bus, 99);
            }
            other => panic!("expected dangling-bus error, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let text = two_bus_text().replace(
            "[[lines]]",
            "[[buses]]\nid = 3\n\n[[lines]]",
        );
        match parse_case(&text) {
            Err(CaseError::Disconnected { bus, .. }) => assert_eq!(bus, 3),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_reference_bus_is_rejected() {
        let text = two_bus_text().replace("p_load = 50.0", "p_load = 50.0\nis_reference = true");
        assert!(matches!(
            parse_case(&text),
            Err(CaseError::DuplicateReference { .. })
        ));
    }

    #[test]
    fn vmin_above_vmax_yields_error_diagnostic() {
        let mut case = parse_case(&two_bus_text()).unwrap();
        case.buses[0].v_min = 1.2;
        case.buses[0].v_max = 1.0;
        let diags = validate_case(&case);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Error);
        assert!(diags[0].location.contains("buses[0]"));
    }

    #[test]
    fn realness_condition_violation_is_diagnosed() {
        let mut case = parse_case(&two_bus_text()).unwrap();
        // dp_l/df_lim = 30 <= damping.
        case.freq_params.dp_l = 0.3;
        case.freq_params.df_lim = 0.01;
        case.freq_params.damping_d = 30.0;
        let diags = validate_case(&case);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Error && d.message.contains("realness")));
    }

    #[test]
    fn normalization_is_idempotent() {
        let doc: CaseDocument = toml::from_str(&two_bus_text()).unwrap();
        let once = doc.clone().normalized();
        let twice = once.clone().normalized();
        assert_eq!(once, twice);
        assert_eq!(once.units, Units::Pu);
    }

    #[test]
    fn roundtrip_through_document_is_structurally_equal() {
        let case = parse_case(&two_bus_text()).unwrap();
        let text = case.to_toml();
        let reparsed = parse_case(&text).unwrap();
        assert_eq!(case, reparsed);
    }

    #[test]
    fn diagnostic_free_case_passes_independent_invariant_recheck() {
        let case = parse_case(&two_bus_text()).unwrap();
        assert!(validate_case(&case).is_empty());
        // Spot-check invariants directly, independent of validate_case.
        for b in &case.buses {
            assert!(b.v_min > 0.0 && b.v_min <= b.v_max);
        }
        for g in &case.sync_gens {
            assert!(g.p_min <= g.p_max && g.x_transient > 0.0);
        }
        let f = &case.freq_params;
        assert!(f.dp_l / f.df_lim > f.damping_d);
    }

    #[test]
    fn x1_squared_matches_worked_constant() {
        let f = FrequencyParams {
            dp_l: 0.3,
            df_lim: 0.008,
            t_d: 10.0,
            damping_d: 0.5,
            rocof_max: 0.05,
        };
        assert!((f.x1_squared() - 27.75).abs() < 1e-12);
    }
}
