//! Command-line driver: run a case file, inspect mesh quality, or sweep the
//! filter-parameter grid of the cylinder benchmark.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leray_fv::bench::{
    cfl_dt_from_flux, drag_lift, error_metrics, run_case, CoefficientSeries, CylinderCase,
    RunControls,
};
use leray_fv::config::{parse_config, CaseConfig, MeshKind};
use leray_fv::coupling::{FlowSolver, MomentumState};
use leray_fv::efr::{AlphaPolicy, ChiPolicy, EfrConfig, EfrEngine, EfrMode};
use leray_fv::io::{write_csv, write_vtk};
use leray_fv::mesh::Mesh;
use leray_fv::Vec2;

#[derive(Parser)]
#[command(
    name = "lerayfv",
    about = "2D finite-volume incompressible flow solver with EFR filtering",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case file and write its outputs.
    Run(RunArgs),
    /// Print mesh counts and quality metrics.
    MeshQuality(MeshQualityArgs),
    /// Run the benchmark filter-parameter grid and summarize the peaks.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Case file (TOML).
    config: PathBuf,
}

#[derive(Args)]
struct MeshQualityArgs {
    /// Either a Gmsh MSH v2 file or a built-in level
    /// (smoke/16k/25k/63k/120k) of the cylinder-channel generator.
    mesh: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Case file providing the mesh, physics, time and solver settings.
    config: PathBuf,
    /// Algorithms of the grid.
    #[arg(long, value_delimiter = ',', default_values = ["ef-l", "ef-nl", "efr"])]
    modes: Vec<String>,
    /// Filter radius policies of the grid.
    #[arg(long, value_delimiter = ',', default_values = ["h-min", "eta"])]
    alphas: Vec<String>,
    /// Output directory for the per-run CSV files and the summary table.
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    /// Worker cap for concurrent cases.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Reference lift peak for the error columns.
    #[arg(long, default_value_t = 0.495)]
    cl_true: f64,
    /// Reference drag peak for the error columns.
    #[arg(long, default_value_t = 2.986)]
    cd_true: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::MeshQuality(args) => cmd_mesh_quality(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<CaseConfig, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_mesh_quality(args: &MeshQualityArgs) -> Result<(), String> {
    let mesh = if let Some(level) = leray_fv::bench::CylinderMeshLevel::parse(&args.mesh) {
        leray_fv::bench::cylinder_mesh(level).map_err(|e| e.to_string())?
    } else {
        let file = std::fs::File::open(&args.mesh).map_err(|e| format!("{}: {e}", args.mesh))?;
        Mesh::load_msh(std::io::BufReader::new(file)).map_err(|e| format!("{}: {e}", args.mesh))?
    };
    print!("{}", mesh.summary());
    Ok(())
}

/// Generic case driver: advances the configured case with CFL-driven steps,
/// streaming coefficients to CSV and fields to VTK as configured.
fn cmd_run(args: &RunArgs) -> Result<(), String> {
    let cfg = load_config(&args.config)?;
    let mesh = cfg.build_mesh().map_err(|e| e.to_string())?;
    cfg.check_patches(&mesh).map_err(|e| e.to_string())?;
    let verbose = cfg.output.log != "quiet";

    let height = mesh.points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let (mut u, p) =
        cfg.initial_fields(&mesh, height, cfg.time.t_start).map_err(|e| e.to_string())?;
    cfg.update_bcs(&mesh, height, cfg.time.t_start, &mut u);

    let coupling = {
        let mut c = cfg.coupling_config().map_err(|e| e.to_string())?;
        c.velocity_scale = 1.5;
        c
    };
    let solver = FlowSolver::new(&mesh, cfg.physics.rho, cfg.physics.mu, coupling);
    let efr_cfg = cfg.efr_config().map_err(|e| e.to_string())?;
    let eta = leray_fv::efr::kolmogorov_scale(cfg.efr.re_max, cfg.efr.l_ref)
        .map_err(|e| e.to_string())?;
    let mut engine = EfrEngine::new(solver, efr_cfg, eta).map_err(|e| e.to_string())?;

    let mut state = MomentumState::at_rest(u, p, &mesh);
    let controls = cfg.run_controls();
    let has_cylinder = mesh.patch("cylinder").is_some();
    let case = CylinderCase {
        rho: cfg.physics.rho,
        mu: cfg.physics.mu,
        channel_height: height,
        t_end: cfg.time.t_end.max(1e-300),
        ..CylinderCase::default()
    };
    let force =
        vec![Vec2::new(cfg.physics.body_force[0], cfg.physics.body_force[1]); mesh.n_cells()];

    if let Some(dir) = &cfg.output.vtk_dir {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }

    let mut series = CoefficientSeries::default();
    let mut t = cfg.time.t_start;
    let mut step = 0usize;
    let mut dt_prev: Option<f64> = None;
    let started = std::time::Instant::now();
    let mut last_log = std::time::Instant::now();
    while t < cfg.time.t_end - 1e-12 {
        let mut dt = cfl_dt_from_flux(&mesh, &state.phi, controls.cfl_max, controls.dt_max);
        if let Some(prev) = dt_prev {
            dt = dt.min(prev * controls.dt_growth);
        }
        // Equalize the remaining steps so the run lands on t_end without a
        // degenerate final step.
        let remaining = cfg.time.t_end - t;
        dt = remaining / (remaining / dt).ceil().max(1.0);
        let t_new = t + dt;
        cfg.update_bcs(&mesh, height, t_new, &mut state.u);
        engine
            .step_forced(&mut state, dt, &force)
            .map_err(|e| format!("at t = {t_new:.4}: {e}"))?;
        t = t_new;
        step += 1;
        dt_prev = Some(dt);

        let (cl, cd) = if has_cylinder {
            let (cd, cl) = drag_lift(&mesh, &state.u, &state.p, cfg.physics.mu, &case)
                .map_err(|e| e.to_string())?;
            (cl, cd)
        } else {
            (0.0, 0.0)
        };
        series.push(t, cl, cd);

        if cfg.output.vtk_every > 0 && step % cfg.output.vtk_every == 0 {
            if let Some(dir) = &cfg.output.vtk_dir {
                write_fields_vtk(&mesh, &state, engine.filter.as_ref(), dir, step)?;
            }
        }
        if verbose && last_log.elapsed().as_secs_f64() > 5.0 {
            eprintln!(
                "t = {t:.4}  dt = {dt:.3e}  step {step}  cl = {cl:+.4}  cd = {cd:.4}  [{:.0?}]",
                started.elapsed()
            );
            last_log = std::time::Instant::now();
        }
    }

    if let Some(path) = &cfg.output.csv {
        write_csv(&series, path).map_err(|e| e.to_string())?;
        if verbose {
            eprintln!("wrote {}", path.display());
        }
    }
    if cfg.output.vtk_every == 0 {
        if let Some(dir) = &cfg.output.vtk_dir {
            write_fields_vtk(&mesh, &state, engine.filter.as_ref(), dir, step)?;
        }
    }
    if let Some(peaks) = series.peaks() {
        println!(
            "steps = {step}  cl_max = {:.4} at t = {:.3}  cd_max = {:.4} at t = {:.3}",
            peaks.cl_max, peaks.t_cl_max, peaks.cd_max, peaks.t_cd_max
        );
    } else {
        println!("steps = 0 (t_end <= t_start)");
    }
    Ok(())
}

fn write_fields_vtk(
    mesh: &Mesh,
    state: &MomentumState,
    filter: Option<&leray_fv::efr::FilterState>,
    dir: &Path,
    step: usize,
) -> Result<(), String> {
    let path = dir.join(format!("fields_{step:07}.vtk"));
    let zeros = vec![0.0; mesh.n_cells()];
    let zero_v = vec![Vec2::ZERO; mesh.n_cells()];
    let (qbar, a, vbar) = match filter {
        Some(f) => (&f.qbar.cells, &f.a.cells, &f.vbar.cells),
        None => (&zeros, &zeros, &zero_v),
    };
    write_vtk(
        mesh,
        &[("p", &state.p.cells), ("qbar", qbar), ("a", a)],
        &[("u", &state.u.cells), ("vbar", vbar)],
        &path,
    )
    .map_err(|e| e.to_string())
}

struct SweepRow {
    label: String,
    cl_max: f64,
    t_cl: f64,
    cd_max: f64,
    t_cd: f64,
    e_cl: f64,
    e_cd: f64,
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), String> {
    let cfg = load_config(&args.config)?;
    if cfg.mesh.kind != MeshKind::CylinderChannel {
        return Err("sweep needs a cylinder-channel mesh".into());
    }
    let mesh = cfg.build_mesh().map_err(|e| e.to_string())?;
    let case = CylinderCase {
        rho: cfg.physics.rho,
        mu: cfg.physics.mu,
        t_end: cfg.time.t_end,
        ..CylinderCase::default()
    };
    let controls = RunControls {
        t_start: cfg.time.t_start,
        t_end: cfg.time.t_end,
        cfl_max: cfg.time.cfl_max,
        dt_max: cfg.time.dt_max,
        ..RunControls::default()
    };
    let coupling = cfg.coupling_config().map_err(|e| e.to_string())?;

    std::fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;

    let mut grid = Vec::new();
    for mode_name in &args.modes {
        let mode = match mode_name.as_str() {
            "ef-l" => EfrMode::EfL,
            "ef-nl" => EfrMode::EfNl,
            "efr" => EfrMode::Efr,
            "nse" => EfrMode::Nse,
            other => return Err(format!("unknown mode '{other}'")),
        };
        for alpha_name in &args.alphas {
            let alpha = match alpha_name.as_str() {
                "h-min" => AlphaPolicy::HMin,
                "eta" | "kolmogorov" => AlphaPolicy::Kolmogorov,
                other => return Err(format!("unknown alpha policy '{other}'")),
            };
            grid.push((mode_name.clone(), mode, alpha_name.clone(), alpha));
        }
    }

    let jobs = args.jobs.max(1);
    let results: Vec<Result<SweepRow, String>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in grid.chunks(grid.len().div_ceil(jobs)) {
            let mesh = &mesh;
            let cfg = &cfg;
            let out = &args.out;
            let case = &case;
            let controls = &controls;
            let (cl_true, cd_true) = (args.cl_true, args.cd_true);
            handles.push(scope.spawn(move || {
                let mut rows = Vec::new();
                for (mode_name, mode, alpha_name, alpha) in chunk {
                    let efr = EfrConfig {
                        mode: *mode,
                        alpha: *alpha,
                        deconv_order: cfg.efr.n_deconv,
                        chi: ChiPolicy::Dt,
                        inherit_filter_bcs: true,
                    };
                    let label = format!("{mode_name}_{alpha_name}");
                    eprintln!("sweep: running {label}");
                    let run = run_case(mesh, case, efr, coupling, controls, |_| {})
                        .map_err(|e| format!("{label}: {e}"));
                    rows.push(run.and_then(|r| {
                        let csv_path = out.join(format!("sweep_{label}.csv"));
                        write_csv(&r.series, &csv_path).map_err(|e| e.to_string())?;
                        let peaks =
                            r.series.peaks().ok_or_else(|| format!("{label}: empty series"))?;
                        let (e_cl, e_cd) =
                            error_metrics(&peaks, cl_true, cd_true).map_err(|e| e.to_string())?;
                        Ok(SweepRow {
                            label,
                            cl_max: peaks.cl_max,
                            t_cl: peaks.t_cl_max,
                            cd_max: peaks.cd_max,
                            t_cd: peaks.t_cd_max,
                            e_cl,
                            e_cd,
                        })
                    }));
                }
                rows
            }));
        }
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });

    let mut summary = String::new();
    summary.push_str(&format!(
        "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "algorithm", "t(cl_max)", "cl_max", "t(cd_max)", "cd_max", "E_cl %", "E_cd %"
    ));
    let mut failures = Vec::new();
    for row in results {
        match row {
            Ok(r) => summary.push_str(&format!(
                "{:<16} {:>9.3} {:>9.4} {:>9.3} {:>9.4} {:>9.2} {:>9.2}\n",
                r.label, r.t_cl, r.cl_max, r.t_cd, r.cd_max, r.e_cl, r.e_cd
            )),
            Err(e) => failures.push(e),
        }
    }
    print!("{summary}");
    let summary_path = args.out.join("summary.txt");
    let mut f = std::fs::File::create(&summary_path)
        .map_err(|e| format!("{}: {e}", summary_path.display()))?;
    f.write_all(summary.as_bytes()).map_err(|e| e.to_string())?;
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    Ok(())
}
