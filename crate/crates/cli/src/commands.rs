//! Subcommand implementations. Each returns the process exit code,
//! printing diagnostics to stderr and a short summary to stdout.
//!
//! Data files and the manifest are only written once a run has finished
//! cleanly (horizon, impact cap, or Zeno stop); runs that fail numerically
//! or reject their inputs leave the output directory untouched. Every file
//! goes through an atomic temp-and-rename write.

use std::path::{Path, PathBuf};

use routhsim_core::hybrid::{self, Termination};
use routhsim_core::io::{self, CsvKind};
use routhsim_core::mechanics::ForcedLagrangianSystem;
use routhsim_core::scenarios::load_scenario;
use routhsim_core::{hamiltonian, routh};
use routhsim_core::{CyclicSpec, ImpactRecord, ScenarioConfig, ScenarioKind, ScenarioSystem};

use crate::manifest::RunManifest;
use crate::{
    plot as render, CompareArgs, CompareSide, PlotArgs, RunArgs, EXIT_BAD_INPUT, EXIT_NUMERICAL,
    EXIT_OK, EXIT_STRUCTURAL, EXIT_TOLERANCE, EXIT_ZENO,
};

fn input_error(msg: &str) -> u8 {
    eprintln!("error: {msg}");
    EXIT_BAD_INPUT
}

fn termination_label(t: &Termination) -> String {
    match t {
        Termination::HorizonReached => "horizon_reached".into(),
        Termination::MaxImpacts => "max_impacts".into(),
        Termination::ZenoSuspected => "zeno_suspected".into(),
        Termination::Failed(f) => format!("failed: {f}"),
    }
}

fn exit_for(t: &Termination) -> u8 {
    match t {
        // Hitting the configured impact cap is a complete run, not an error.
        Termination::HorizonReached | Termination::MaxImpacts => EXIT_OK,
        Termination::ZenoSuspected => EXIT_ZENO,
        Termination::Failed(_) => EXIT_NUMERICAL,
    }
}

fn argv_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

struct Prepared {
    cfg: ScenarioConfig,
    sys: ScenarioSystem,
    dir: PathBuf,
}

/// Loads the scenario, applies flag overrides, and resolves the output
/// directory into the echoed config.
fn prepare(args: &RunArgs) -> Result<Prepared, String> {
    let mut cfg =
        load_scenario(&args.scenario).map_err(|e| format!("{}: {e}", args.scenario.display()))?;
    if let Some(dt) = args.dt {
        cfg.integrator.dt = dt;
    }
    if let Some(tmax) = args.tmax {
        cfg.integrator.t_max = tmax;
    }
    let dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.outputs.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    cfg.outputs.dir = Some(dir.display().to_string());
    // build() re-validates, so bad flag overrides are caught here too.
    let sys = cfg
        .build()
        .map_err(|e| format!("{}: {e}", args.scenario.display()))?;
    Ok(Prepared { cfg, sys, dir })
}

/// Picks the configured file name or the default, writing the choice back
/// so the manifest echoes it.
fn resolve_name(slot: &mut Option<String>, default: &str) -> String {
    let name = slot.clone().unwrap_or_else(|| default.to_string());
    *slot = Some(name.clone());
    name
}

fn write_all(files: &[(PathBuf, String)]) -> Result<Vec<String>, String> {
    let mut outputs = Vec::with_capacity(files.len());
    for (path, content) in files {
        io::write_atomic(path, content).map_err(|e| format!("{}: {e}", path.display()))?;
        outputs.push(path.display().to_string());
    }
    Ok(outputs)
}

fn with_momenta(
    sys: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    impacts: &[ImpactRecord],
) -> Vec<ImpactRecord> {
    impacts
        .iter()
        .map(|rec| {
            let mut rec = rec.clone();
            rec.momentum_pre = routh::momentum(sys, cyc, &rec.state_pre).ok();
            rec.momentum_post = routh::momentum(sys, cyc, &rec.state_post).ok();
            rec
        })
        .collect()
}

pub fn simulate(args: &RunArgs) -> u8 {
    let Prepared { mut cfg, sys, dir } = match prepare(args) {
        Ok(p) => p,
        Err(msg) => return input_error(&msg),
    };
    let traj = hybrid::execute(&sys.def, &sys.initial, &sys.integrator);
    if let Termination::Failed(f) = &traj.termination {
        eprintln!(
            "error: integration failed at t = {:.6}: {f}",
            traj.final_time()
        );
        return EXIT_NUMERICAL;
    }
    let dim = sys.def.system.dim();
    let impacts = match &sys.cyclic {
        Some(cyc) => with_momenta(&sys.def.system, cyc, &traj.impacts),
        None => traj.impacts.clone(),
    };
    let drift = sys
        .cyclic
        .as_ref()
        .and_then(|cyc| routh::arc_momentum_drift(&sys.def.system, cyc, &traj).ok());

    let traj_name = resolve_name(&mut cfg.outputs.trajectory, "trajectory.csv");
    let impacts_name = resolve_name(&mut cfg.outputs.impacts, "impacts.csv");
    let files = [
        (dir.join(&traj_name), io::trajectory_csv(&traj, dim)),
        (dir.join(&impacts_name), io::impacts_csv(&impacts, dim)),
    ];
    let outputs = match write_all(&files) {
        Ok(o) => o,
        Err(msg) => return input_error(&msg),
    };
    let manifest = RunManifest {
        command: argv_line(),
        scenario: args.scenario.display().to_string(),
        config: cfg,
        outputs,
        termination: termination_label(&traj.termination),
        impact_count: traj.impacts.len(),
        final_time: traj.final_time(),
        max_momentum_drift: drift,
        mu_sequence: None,
    };
    let manifest_path = dir.join("manifest.json");
    if let Err(e) = manifest.write(&manifest_path) {
        return input_error(&format!("{}: {e}", manifest_path.display()));
    }
    println!(
        "{}: {} impacts, final time {:.6}",
        manifest.termination, manifest.impact_count, manifest.final_time
    );
    for f in &manifest.outputs {
        println!("wrote {f}");
    }
    println!("wrote {}", manifest_path.display());
    exit_for(&traj.termination)
}

pub fn reduce(args: &RunArgs) -> u8 {
    let Prepared { mut cfg, sys, dir } = match prepare(args) {
        Ok(p) => p,
        Err(msg) => return input_error(&msg),
    };
    let Some(cyc) = sys.cyclic.clone() else {
        return input_error(&format!(
            "scenario kind '{}' has no cyclic coordinate to reduce",
            cfg.kind.name()
        ));
    };
    let rt = match routh::execute_reduced(&sys.def, &cyc, &sys.initial, &sys.integrator) {
        Ok(rt) => rt,
        Err(e) => return input_error(&format!("reduction rejected: {e}")),
    };
    if let Termination::Failed(f) = &rt.termination {
        eprintln!(
            "error: reduced integration failed at t = {:.6}: {f}",
            rt.final_time()
        );
        return EXIT_NUMERICAL;
    }
    let theta0 = sys.initial.q[cyc.cyclic_index];
    let rec = match routh::reconstruct(&sys.def.system, &rt, theta0) {
        Ok(rec) => rec,
        Err(e) => {
            eprintln!("error: reconstruction failed: {e}");
            return EXIT_NUMERICAL;
        }
    };
    let dim = sys.def.system.dim();
    let drift = routh::arc_momentum_drift(&sys.def.system, &cyc, &rec).ok();

    let reduced_name = resolve_name(&mut cfg.outputs.reduced, "reduced.csv");
    let rec_name = resolve_name(&mut cfg.outputs.reconstructed, "reconstructed.csv");
    let impacts_name = resolve_name(&mut cfg.outputs.impacts, "impacts.csv");
    let files = [
        (dir.join(&reduced_name), io::reduced_csv(&rt, dim - 1)),
        (dir.join(&rec_name), io::trajectory_csv(&rec, dim)),
        (dir.join(&impacts_name), io::impacts_csv(&rt.impacts, dim)),
    ];
    let outputs = match write_all(&files) {
        Ok(o) => o,
        Err(msg) => return input_error(&msg),
    };
    let manifest = RunManifest {
        command: argv_line(),
        scenario: args.scenario.display().to_string(),
        config: cfg,
        outputs,
        termination: termination_label(&rt.termination),
        impact_count: rt.impacts.len(),
        final_time: rt.final_time(),
        max_momentum_drift: drift,
        mu_sequence: Some(rt.mu_sequence()),
    };
    let manifest_path = dir.join("manifest.json");
    if let Err(e) = manifest.write(&manifest_path) {
        return input_error(&format!("{}: {e}", manifest_path.display()));
    }
    println!(
        "{}: {} impacts, final time {:.6}",
        manifest.termination, manifest.impact_count, manifest.final_time
    );
    let mus: Vec<String> = rt.mu_sequence().iter().map(|m| format!("{m:.6}")).collect();
    println!("momentum per segment: [{}]", mus.join(", "));
    for f in &manifest.outputs {
        println!("wrote {f}");
    }
    println!("wrote {}", manifest_path.display());
    exit_for(&rt.termination)
}

#[derive(serde::Serialize)]
struct CompareOutput<'a> {
    side: &'a str,
    tol: f64,
    passed: bool,
    report: &'a routhsim_core::ComparisonReport,
}

pub fn compare(args: &CompareArgs) -> u8 {
    if !(args.tol.is_finite() && args.tol > 0.0) {
        return input_error("tolerance must be positive and finite");
    }
    let Prepared { mut cfg, sys, dir } = match prepare(&args.run) {
        Ok(p) => p,
        Err(msg) => return input_error(&msg),
    };
    let full = hybrid::execute(&sys.def, &sys.initial, &sys.integrator);
    if let Termination::Failed(f) = &full.termination {
        eprintln!(
            "error: integration failed at t = {:.6}: {f}",
            full.final_time()
        );
        return EXIT_NUMERICAL;
    }
    let (side_name, other) = match args.side {
        CompareSide::Reduced => {
            let Some(cyc) = sys.cyclic.clone() else {
                return input_error(&format!(
                    "scenario kind '{}' has no cyclic coordinate to reduce",
                    cfg.kind.name()
                ));
            };
            let rt = match routh::execute_reduced(&sys.def, &cyc, &sys.initial, &sys.integrator) {
                Ok(rt) => rt,
                Err(e) => return input_error(&format!("reduction rejected: {e}")),
            };
            if let Termination::Failed(f) = &rt.termination {
                eprintln!("error: reduced integration failed: {f}");
                return EXIT_NUMERICAL;
            }
            let theta0 = sys.initial.q[cyc.cyclic_index];
            match routh::reconstruct(&sys.def.system, &rt, theta0) {
                Ok(rec) => ("reduced", rec),
                Err(e) => {
                    eprintln!("error: reconstruction failed: {e}");
                    return EXIT_NUMERICAL;
                }
            }
        }
        CompareSide::Hamiltonian => {
            match hamiltonian::execute_mapped_to_tangent(&sys.def, &sys.initial, &sys.integrator) {
                Ok(t) => {
                    if let Termination::Failed(f) = &t.termination {
                        eprintln!("error: hamiltonian-side integration failed: {f}");
                        return EXIT_NUMERICAL;
                    }
                    ("hamiltonian", t)
                }
                Err(e) => {
                    eprintln!("error: hamiltonian-side integration failed: {e}");
                    return EXIT_NUMERICAL;
                }
            }
        }
    };
    let report = routh::compare_full_reduced(&full, &other);
    let within_tol = report.max_deviation() <= args.tol && report.max_impact_time_dev <= args.tol;
    let passed = report.structural_match && within_tol;
    let code = if !report.structural_match {
        EXIT_STRUCTURAL
    } else if within_tol {
        EXIT_OK
    } else {
        EXIT_TOLERANCE
    };

    let report_name = resolve_name(&mut cfg.outputs.report, "report.json");
    let report_path = dir.join(&report_name);
    let out = CompareOutput {
        side: side_name,
        tol: args.tol,
        passed,
        report: &report,
    };
    let text = match serde_json::to_string_pretty(&out) {
        Ok(t) => t,
        Err(e) => return input_error(&e.to_string()),
    };
    if let Err(e) = io::write_atomic(&report_path, &format!("{text}\n")) {
        return input_error(&format!("{}: {e}", report_path.display()));
    }
    let manifest = RunManifest {
        command: argv_line(),
        scenario: args.run.scenario.display().to_string(),
        config: cfg,
        outputs: vec![report_path.display().to_string()],
        termination: termination_label(&full.termination),
        impact_count: full.impacts.len(),
        final_time: full.final_time(),
        max_momentum_drift: None,
        mu_sequence: None,
    };
    let manifest_path = dir.join("manifest.json");
    if let Err(e) = manifest.write(&manifest_path) {
        return input_error(&format!("{}: {e}", manifest_path.display()));
    }
    let sup_v = report.sup_v.iter().cloned().fold(0.0, f64::max);
    println!(
        "full vs {side_name}: impacts {} vs {}, sup |dq| = {:.3e}, sup |dv| = {:.3e}, impact time dev = {:.3e}, tol = {:.1e}: {}",
        report.impact_count_a,
        report.impact_count_b,
        report.max_q_deviation(),
        sup_v,
        report.max_impact_time_dev,
        args.tol,
        if passed { "PASS" } else { "FAIL" }
    );
    println!("wrote {}", report_path.display());
    println!("wrote {}", manifest_path.display());
    code
}

pub fn plot(args: &PlotArgs) -> u8 {
    if !args.guard_level.is_finite() {
        return input_error("guard level must be finite");
    }
    if let Some(dir) = &args.out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return input_error(&format!("{}: {e}", dir.display()));
        }
    }
    for path in &args.csv {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return input_error(&format!("{}: {e}", path.display())),
        };
        let svg = match io::sniff_csv(&text) {
            Some(CsvKind::Trajectory) => match io::parse_trajectory_csv(&text) {
                Ok(table) if table.rows.is_empty() || table.dim == 0 => {
                    return input_error(&format!("{}: no data rows", path.display()));
                }
                Ok(table) => render::trajectory_svg(&table, args.chart, args.guard_level),
                Err(e) => return input_error(&format!("{}: {e}", path.display())),
            },
            Some(CsvKind::Reduced) => match io::parse_reduced_csv(&text) {
                Ok(table) if table.rows.is_empty() || table.dim == 0 => {
                    return input_error(&format!("{}: no data rows", path.display()));
                }
                Ok(table) => render::reduced_svg(&table, args.guard_level),
                Err(e) => return input_error(&format!("{}: {e}", path.display())),
            },
            None => {
                return input_error(&format!(
                    "{}: header is neither a trajectory nor a reduced table",
                    path.display()
                ));
            }
        };
        let out_path = svg_path(path, args.out.as_deref());
        if let Err(e) = io::write_atomic(&out_path, &svg) {
            return input_error(&format!("{}: {e}", out_path.display()));
        }
        println!("wrote {}", out_path.display());
    }
    EXIT_OK
}

fn svg_path(input: &Path, out: Option<&Path>) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".to_string());
    let name = format!("{stem}.svg");
    match out {
        Some(dir) => dir.join(name),
        None => input.with_file_name(name),
    }
}

pub fn list_scenarios() -> u8 {
    for kind in ScenarioKind::ALL {
        println!(
            "{:<18} {} dof  {}",
            kind.name(),
            kind.dim(),
            kind.describe()
        );
    }
    EXIT_OK
}
