//! `vscuc`: command-line front end for the VSC-UC toolkit.
//!
//! Exit codes: 0 full success, 2 partial sweep failure (some points errored
//! but the table was produced), 1 hard error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vscuc::case::{validate_case, GridCase, Severity};
use vscuc::evaluate::{evaluate_schedule, tco, Schedule};
use vscuc::experiments::{
    emit_plotdata, run_rolling, run_sweep, validate_rolling, write_outputs, ExperimentSpec,
    SweepAxis,
};
use vscuc::formulation::{build, BuildOptions, Mode};
use vscuc::scenario::tree_for_case;
use vscuc::solver::{solve_misocp, ClarabelSolver, SolverConfig};
use vscuc::surrogate::train;

#[derive(Parser)]
#[command(
    name = "vscuc",
    version,
    about = "Voltage-stability-constrained stochastic unit commitment",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scheduling problem and report the evaluated metrics.
    Solve(SolveArgs),
    /// Train the impedance surrogate and report its fit quality.
    Surrogate(SurrogateArgs),
    /// Sweep a parameter axis over one or more modes.
    Sweep(SweepArgs),
    /// Rolling-horizon study: re-solve each step, implement the first hour.
    Rolling(RollingArgs),
    /// STATCOM total-cost-of-ownership arithmetic.
    Tco(TcoArgs),
}

#[derive(Args)]
struct CommonSolve {
    /// Grid case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Scheduling horizon, hours.
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    /// Hours per period.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Relative MIP gap at which the branch-and-bound stops.
    #[arg(long, default_value_t = 0.02)]
    gap: f64,
    /// Worker threads for parallel work (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Force fully serial execution (deterministic output ordering).
    #[arg(long)]
    single_thread: bool,
    /// Output directory; results are printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop any STATCOM devices from the model.
    #[arg(long)]
    no_statcom: bool,
    /// Drop the inertia, nadir and RoCoF constraints.
    #[arg(long)]
    no_freq: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonSolve,
    /// Commitment mode: base_si, vsc_si or vsc_q_si.
    #[arg(long, default_value = "vsc_si")]
    mode: String,
    /// Build the program, print its size, and skip the solve.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SurrogateArgs {
    /// Grid case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Output directory for the trained model (surrogate.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonSolve,
    /// Comma-separated mode list, e.g. base_si,vsc_si,vsc_q_si.
    #[arg(long, default_value = "vsc_si")]
    mode: String,
    /// Sweep axis: wind_capacity, statcom_rating, statcom_site, sc_rating
    /// or none.
    #[arg(long)]
    sweep: String,
    /// Comma-separated sweep values, sorted ascending.
    #[arg(long, default_value = "")]
    values: String,
    /// Validate the spec and patch every point without solving.
    #[arg(long)]
    dry_run: bool,
    /// Also emit the named figure projection (fig4, fig5, fig11, fig12,
    /// table3) next to the sweep CSV.
    #[arg(long)]
    figure: Option<String>,
}

#[derive(Args)]
struct RollingArgs {
    #[command(flatten)]
    common: CommonSolve,
    /// Commitment mode: base_si, vsc_si or vsc_q_si.
    #[arg(long, default_value = "vsc_si")]
    mode: String,
    /// Number of receding-horizon steps to implement.
    #[arg(long, default_value_t = 4)]
    steps: usize,
}

#[derive(Args)]
struct TcoArgs {
    /// Device rating, MVAr.
    #[arg(long)]
    rating: f64,
    /// Standing-loss fraction of rating, e.g. 0.008.
    #[arg(long)]
    loss: f64,
    /// Energy price, $/MWh.
    #[arg(long, default_value_t = 60.0)]
    price: f64,
    /// Installed capital cost, $.
    #[arg(long, default_value_t = 2.0e6)]
    capex: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Surrogate(a) => cmd_surrogate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Rolling(a) => cmd_rolling(a),
        Command::Tco(a) => cmd_tco(a),
    }
}

/// Configure the global rayon pool once, before any parallel work runs.
fn init_threads(c: &CommonSolve) -> Result<(), String> {
    let threads = if c.single_thread { 1 } else { c.threads };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    Ok(())
}

fn load_case(path: &Path) -> Result<GridCase, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let case = vscuc::parse_case(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let diags = validate_case(&case);
    let mut fatal = false;
    for d in &diags {
        eprintln!("{d}");
        fatal |= d.severity == Severity::Error;
    }
    if fatal {
        return Err(format!("{} failed validation", path.display()));
    }
    Ok(case)
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>()
}

fn parse_modes(s: &str) -> Result<Vec<Mode>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(parse_mode)
        .collect()
}

fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|e| format!("value `{v}`: {e}")))
        .collect()
}

fn spec_from(c: &CommonSolve, modes: Vec<Mode>, axis: SweepAxis, values: Vec<f64>) -> ExperimentSpec {
    ExperimentSpec {
        modes,
        axis,
        values,
        horizon: c.horizon,
        dt: c.dt,
        solver: SolverConfig { rel_gap: c.gap, ..SolverConfig::default() },
        statcom_enabled: !c.no_statcom,
        freq_enabled: !c.no_freq,
        parallel: !c.single_thread,
    }
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<PathBuf, String> {
    fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(path)
}

fn cmd_solve(a: SolveArgs) -> Result<ExitCode, String> {
    init_threads(&a.common)?;
    let case = load_case(&a.common.case)?;
    let mode = parse_mode(&a.mode)?;
    let surrogate = if mode.uses_stability() {
        println!("training surrogate...");
        Some(train(&case).map_err(|e| format!("surrogate training: {e}"))?)
    } else {
        None
    };
    let tree = tree_for_case(&case, a.common.horizon, a.common.dt)
        .map_err(|e| format!("scenario tree: {e}"))?;
    let opts = BuildOptions {
        mode,
        statcom_enabled: !a.common.no_statcom,
        freq_enabled: !a.common.no_freq,
    };
    let (prog, vars) =
        build(&case, &tree, surrogate.as_ref(), &opts).map_err(|e| format!("build: {e}"))?;
    let st = prog.stats();
    println!(
        "program: {} vars ({} binary), {} rows, {} soc, {} rsoc across {} nodes",
        st.n_vars,
        st.n_binary,
        st.n_rows,
        st.n_soc,
        st.n_rsoc,
        tree.n_nodes()
    );
    if a.dry_run {
        if let Some(dir) = &a.common.out {
            let p = write_out(dir, "program.ir", &prog.dump())?;
            println!("wrote {}", p.display());
        }
        return Ok(ExitCode::SUCCESS);
    }

    let cfg = SolverConfig { rel_gap: a.common.gap, ..SolverConfig::default() };
    let res = solve_misocp(&prog, &ClarabelSolver::default(), &cfg)
        .map_err(|e| format!("solve: {e}"))?;
    println!(
        "status {:?}  nodes {}  gap {:.4}  wall {:.1}s",
        res.status,
        res.nodes,
        res.rel_gap,
        res.wall_time.as_secs_f64()
    );
    let x = match res.incumbent {
        Some(x) => x,
        None => return Err(format!("no feasible schedule (status {:?})", res.status)),
    };
    let sched = Schedule { x, vars };
    let metrics = evaluate_schedule(&case, &tree, &prog, &sched, surrogate.as_ref());
    println!("cost {:.2}/h  (total {:.2})", metrics.cost_expected, metrics.cost_total);
    println!(
        "violations {:.2}%  curtailment {:.2} MW  shed {:.2} MW",
        metrics.violation_rate_pct, metrics.curtailment_mw, metrics.shed_mw
    );
    println!(
        "nadir slack {:.4}  rocof slack {:.4}  soc gap max {:.2e}",
        metrics.nadir_slack_min, metrics.rocof_slack_min, metrics.soc_gap_max
    );
    if let Some(s) = metrics.strength_ref {
        println!("strength indicator (all devices on) {s:.4}");
    }
    if let Some(dir) = &a.common.out {
        let json = serde_json::to_string_pretty(&metrics).map_err(|e| e.to_string())?;
        let p = write_out(dir, "metrics.json", &json)?;
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_surrogate(a: SurrogateArgs) -> Result<ExitCode, String> {
    let case = load_case(&a.case)?;
    let sur = train(&case).map_err(|e| format!("surrogate training: {e}"))?;
    println!(
        "dataset: {} samples ({} singular excluded)",
        sur.dataset_total, sur.dataset_excluded
    );
    for (i, name) in sur.ibg_names.iter().enumerate() {
        let m = &sur.z1_metrics[i];
        println!(
            "z1[{name}]: maep {:.4}%  mse {:.3e}  {} terms{}",
            m.maep,
            m.mse,
            m.n_retained,
            if m.rank_deficient { "  (rank-deficient)" } else { "" }
        );
    }
    for (k, &(i, j)) in sur.pair_order.iter().enumerate() {
        let m = &sur.zm_metrics[k];
        println!(
            "zm[{} -> {}]: maep {:.4}%  mse {:.3e}  {} terms{}",
            sur.ibg_names[i],
            sur.ibg_names[j],
            m.maep,
            m.mse,
            m.n_retained,
            if m.rank_deficient { "  (rank-deficient)" } else { "" }
        );
    }
    if let Some(dir) = &a.out {
        let json = serde_json::to_string_pretty(&sur).map_err(|e| e.to_string())?;
        let p = write_out(dir, "surrogate.json", &json)?;
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode, String> {
    init_threads(&a.common)?;
    let case = load_case(&a.common.case)?;
    let modes = parse_modes(&a.mode)?;
    let axis = a.sweep.parse::<SweepAxis>()?;
    let values = parse_values(&a.values)?;
    let spec = spec_from(&a.common, modes, axis, values);
    spec.validate().map_err(|e| e.to_string())?;

    if a.dry_run {
        let vals: &[f64] = if spec.axis == SweepAxis::None { &[0.0] } else { &spec.values };
        for &v in vals {
            vscuc::experiments::patch_case(&case, spec.axis, v)
                .map_err(|e| format!("value {v}: {e}"))?;
        }
        println!(
            "sweep ok: {} values x {} modes = {} solves",
            vals.len(),
            spec.modes.len(),
            vals.len() * spec.modes.len()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let table = run_sweep(&case, &spec).map_err(|e| e.to_string())?;
    for r in &table.rows {
        match &r.error {
            None => println!(
                "{} {}  mode {}  status {:?}  cost {:.2}/h  viol {:.2}%  ({:.1}s)",
                spec.axis,
                r.value,
                r.mode,
                r.status.unwrap(),
                r.metrics.as_ref().map(|m| m.cost_expected).unwrap_or(f64::NAN),
                r.metrics.as_ref().map(|m| m.violation_rate_pct).unwrap_or(f64::NAN),
                r.wall_s
            ),
            Some(e) => println!("{} {}  mode {}  FAILED: {e}", spec.axis, r.value, r.mode),
        }
    }
    match &a.common.out {
        Some(dir) => {
            let label = a
                .common
                .case
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "case".into());
            let (csv_path, man_path) =
                write_outputs(&table, &spec, &label, dir).map_err(|e| e.to_string())?;
            println!("wrote {}", csv_path.display());
            println!("wrote {}", man_path.display());
            if let Some(fig) = &a.figure {
                let data = emit_plotdata(&table, fig).map_err(|e| e.to_string())?;
                let p = write_out(dir, &format!("{fig}.csv"), &data)?;
                println!("wrote {}", p.display());
            }
        }
        None => {
            print!("{}", table.to_csv().map_err(|e| e.to_string())?);
            if let Some(fig) = &a.figure {
                print!("{}", emit_plotdata(&table, fig).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(if table.all_ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_rolling(a: RollingArgs) -> Result<ExitCode, String> {
    init_threads(&a.common)?;
    let case = load_case(&a.common.case)?;
    let mode = parse_mode(&a.mode)?;
    let spec = spec_from(&a.common, vec![mode], SweepAxis::None, Vec::new());
    let run = run_rolling(&case, mode, a.steps, &spec).map_err(|e| e.to_string())?;
    for s in &run.steps {
        let on: Vec<&str> = s
            .sg_on
            .iter()
            .enumerate()
            .filter(|&(_, &o)| o)
            .map(|(g, _)| case.sync_gens[g].name.as_str())
            .collect();
        println!(
            "step {}: on [{}]  shed {:.4} pu  hour cost {:.2}  lookahead {:.2}",
            s.step,
            on.join(", "),
            s.shed,
            s.implemented_cost,
            s.horizon_objective
        );
    }
    println!("implemented cost over {} steps: {:.2}", run.steps.len(), run.implemented_cost_total);
    let diags = validate_rolling(&case, &run, spec.dt);
    for d in &diags {
        eprintln!("rolling check: {d}");
    }
    if let Some(dir) = &a.common.out {
        let json = serde_json::to_string_pretty(&run.steps).map_err(|e| e.to_string())?;
        let p = write_out(dir, "rolling.json", &json)?;
        println!("wrote {}", p.display());
    }
    if diags.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err("implemented sequence violates inter-temporal constraints".into())
    }
}

fn cmd_tco(a: TcoArgs) -> Result<ExitCode, String> {
    if a.rating < 0.0 || a.loss < 0.0 || a.price < 0.0 || a.capex < 0.0 {
        return Err("tco inputs must be non-negative".into());
    }
    let r = tco(a.rating, a.loss, a.price, a.capex);
    println!("standing loss: {:.4} MW", r.p_loss);
    println!("annual loss energy: {:.1} MWh/yr", r.e_loss);
    println!("annual loss cost: {:.2} $/yr", r.c_loss);
    println!("annual O&M: {:.2} $/yr", r.c_oandm);
    println!("annual total: {:.2} $/yr", r.c_loss + r.c_oandm);
    Ok(ExitCode::SUCCESS)
}
