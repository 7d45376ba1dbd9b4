//! Command-line driver for the space-time solver.
//!
//! Five subcommands cover the experiment kinds the library supports:
//!
//! * `solve`      - one uniform-mesh solve, VTK output plus an error CSV
//! * `converge`   - uniform refinement study with fitted convergence rates
//! * `adapt`      - residual-driven adaptive refinement, trace + mesh output
//! * `compare-cn` - space-time solve vs. Crank-Nicolson time stepping,
//!                  compared through line profiles of the solution
//! * `condition`  - condition numbers with and without stabilization
//!
//! Options can also be supplied through `--config FILE` holding flat
//! `key=value` lines (keys spelled like the long flags); explicit flags
//! win over the file, and unknown keys are rejected. Every output is
//! deterministic: rerunning a command reproduces its files byte for byte.
//!
//! Exit codes: 0 on success, 1 when a run fails (solver breakdown, I/O),
//! 2 for usage errors.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use stfem::adapt::{adapt, AdaptConfig, MarkingStrategy, StopReason};
use stfem::assembly::{assemble, AssemblyOptions, DiscreteSystem, FieldFunction, GlsParams};
use stfem::basis::BasisSpec;
use stfem::estimate::{error_norms, estimate, EstimateOptions, NormOptions};
use stfem::linsolve::{estimate_condition, solve, PrecondSpec, SolveConfig, SolveMethod};
use stfem::mesh::{NodeSet, SpaceTimeMesh};
use stfem::problem::{by_name, ProblemParams, ProblemSpec};
use stfem::report::{
    log_log_slope, write_convergence_csv, write_profile_csv, write_trace_csv, ConvergenceRow,
};
use stfem::seqref::CnSystem;
use stfem::vtk::{write_field_vtk, write_mesh_vtk};

// ---------------------------------------------------------------- errors

/// Errors split by exit code: usage mistakes exit 2, failed runs exit 1.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<stfem::Error> for CliError {
    fn from(e: stfem::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Domain errors coming out of the library are configuration mistakes and
/// exit as usage errors (with the generic prefix peeled off); anything else
/// is a failed run.
fn usage_from(e: stfem::Error) -> CliError {
    match e {
        stfem::Error::Domain(m) => CliError::Usage(m),
        other => CliError::Runtime(other.to_string()),
    }
}

// ------------------------------------------------------------- arguments

#[derive(Parser)]
#[command(
    name = "stfem",
    version,
    about = "Space-time finite element solver for transient advection-diffusion"
)]
struct Cli {
    /// Flat key=value settings file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once on a uniform mesh; write solution VTK and an error CSV.
    Solve(SolveArgs),
    /// Uniform refinement study; write a CSV table and print fitted rates.
    Converge(ConvergeArgs),
    /// Adaptive refinement loop; write the round trace and the final mesh.
    Adapt(AdaptArgs),
    /// Space-time solve vs. Crank-Nicolson stepping via line profiles.
    CompareCn(CompareCnArgs),
    /// Condition numbers of the system with and without stabilization.
    Condition(ConditionArgs),
}

/// Options shared by every subcommand. All optional so that a config file
/// can supply them; effective defaults are documented per field.
#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// Problem name: heat_mms, advdiff_mms, rotating_gaussian,
    /// rotating_disc or gaussian_source.
    #[arg(long)]
    problem: Option<String>,

    /// Spatial dimension, 1 or 2 [default: 1].
    #[arg(long)]
    dim: Option<usize>,

    /// Polynomial degree, 1 to 3 [default: 1].
    #[arg(long)]
    degree: Option<usize>,

    /// Diffusion coefficient [default: per problem].
    #[arg(long)]
    nu: Option<f64>,

    /// Pulse width of the Gaussian cases [default: per problem].
    #[arg(long)]
    width: Option<f64>,

    /// Mollifier radius of rotating_disc [default: per problem].
    #[arg(long)]
    sigma: Option<f64>,

    /// Forcing sharpness of gaussian_source [default: per problem].
    #[arg(long)]
    theta: Option<f64>,

    /// Pulse center "x,y" of the rotating cases [default: per problem].
    #[arg(long)]
    center: Option<String>,

    /// Enable the least-squares stabilization [default: true].
    #[arg(long)]
    gls: Option<bool>,

    /// Stabilization constant on the diffusive part [default: 4].
    #[arg(long)]
    c1: Option<f64>,

    /// Stabilization constant on the advective part [default: 2].
    #[arg(long)]
    c2: Option<f64>,

    /// Krylov method: bicgstab or gmres [default: bicgstab].
    #[arg(long)]
    method: Option<String>,

    /// GMRES restart length [default: 50].
    #[arg(long)]
    restart: Option<usize>,

    /// Preconditioner: none, jacobi or block-jacobi [default: jacobi].
    #[arg(long)]
    precond: Option<String>,

    /// Relative residual tolerance [default: 1e-10].
    #[arg(long)]
    rel_tol: Option<f64>,

    /// Iteration cap [default: 10x the system size].
    #[arg(long)]
    max_iters: Option<usize>,

    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonOpts,

    /// Uniform refinement level [default: 4].
    #[arg(long)]
    level: Option<u8>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: CommonOpts,

    /// Coarsest level of the study [default: 3].
    #[arg(long)]
    min_level: Option<u8>,

    /// Finest level of the study [default: 6].
    #[arg(long)]
    max_level: Option<u8>,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    common: CommonOpts,

    /// Level of the initial uniform mesh [default: 2].
    #[arg(long)]
    level: Option<u8>,

    /// Stop once every element indicator is at or below this [default: 1e-3].
    #[arg(long)]
    eta_tol: Option<f64>,

    /// Marking strategy: threshold or dorfler [default: threshold].
    #[arg(long)]
    marking: Option<String>,

    /// Squared-indicator fraction for dorfler marking [default: 0.5].
    #[arg(long)]
    fraction: Option<f64>,

    /// Refinement round budget [default: 10].
    #[arg(long)]
    max_rounds: Option<usize>,

    /// Finest admissible element level [default: 12].
    #[arg(long)]
    max_level: Option<u8>,
}

#[derive(Args)]
struct CompareCnArgs {
    #[command(flatten)]
    common: CommonOpts,

    /// Uniform refinement level for both discretizations [default: 5].
    #[arg(long)]
    level: Option<u8>,

    /// Crank-Nicolson step count [default: 2^level, matching the slabs].
    #[arg(long)]
    steps: Option<usize>,

    /// Sample count along the profile segment [default: 201].
    #[arg(long)]
    samples: Option<usize>,

    /// Comma-separated snapshot times [default: start and end of the run].
    #[arg(long)]
    times: Option<String>,

    /// Profile segment start "x,y" [default: 0,2/3 -- the diagonal through
    /// the default pulse center].
    #[arg(long)]
    seg_a: Option<String>,

    /// Profile segment end "x,y" [default: 2/3,0].
    #[arg(long)]
    seg_b: Option<String>,
}

#[derive(Args)]
struct ConditionArgs {
    #[command(flatten)]
    common: CommonOpts,

    /// Uniform refinement level [default: 3, i.e. h = 1/8].
    #[arg(long)]
    level: Option<u8>,

    /// Power/inverse iterations per singular value [default: 100]. The
    /// inverse iterations solve with unrestarted GMRES regardless of
    /// --method: the smallest singular value of the unstabilized system
    /// is exactly where restarted methods stagnate.
    #[arg(long)]
    iters: Option<usize>,
}

// ------------------------------------------------------------- settings

/// The parsed `--config` file. Commands consume the keys they understand;
/// whatever remains at the end is an unknown key and rejected.
struct Settings {
    values: BTreeMap<String, String>,
    origin: String,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Settings> {
        let Some(path) = path else {
            return Ok(Settings { values: BTreeMap::new(), origin: String::new() });
        };
        let origin = path.display().to_string();
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {origin}: {e}")))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!(
                    "{origin}:{}: expected key=value, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(usage(format!("{origin}: duplicate key `{key}`")));
            }
        }
        Ok(Settings { values, origin })
    }

    /// Remove and parse one key. Returns None when the file does not set it.
    fn take<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                usage(format!("{}: key `{key}`: cannot parse `{raw}`: {e}", self.origin))
            }),
        }
    }

    /// Reject any keys no command consumed.
    fn finish(self) -> CliResult<()> {
        match self.values.into_keys().next() {
            Some(key) => Err(usage(format!("{}: unknown key `{key}`", self.origin))),
            None => Ok(()),
        }
    }
}

/// Effective value of one option: flag beats config file beats default.
fn pick<T: FromStr>(flag: Option<T>, cfg: &mut Settings, key: &str) -> CliResult<Option<T>>
where
    T::Err: fmt::Display,
{
    let from_cfg = cfg.take(key)?;
    Ok(flag.or(from_cfg))
}

fn pick_or<T: FromStr>(flag: Option<T>, cfg: &mut Settings, key: &str, default: T) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    Ok(pick(flag, cfg, key)?.unwrap_or(default))
}

fn parse_pair(s: &str, what: &str) -> CliResult<[f64; 2]> {
    let parts = parse_f64_list(s, what)?;
    match parts[..] {
        [x, y] => Ok([x, y]),
        _ => Err(usage(format!("{what}: expected two comma-separated numbers, got `{s}`"))),
    }
}

fn parse_f64_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| usage(format!("{what}: cannot parse `{p}`: {e}")))
        })
        .collect()
}

// --------------------------------------------------- resolved run setup

/// Common options with defaults applied and the problem constructed.
struct Run {
    problem: ProblemSpec,
    dim: usize,
    degree: usize,
    gls: GlsParams,
    solver: SolveConfig,
    out: PathBuf,
}

/// Per-command defaults that differ from the global ones.
struct Defaults {
    problem: Option<&'static str>,
    dim: usize,
    nu: Option<f64>,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults { problem: None, dim: 1, nu: None }
    }
}

fn resolve_common(args: &CommonOpts, cfg: &mut Settings, defaults: Defaults) -> CliResult<Run> {
    let name = pick(args.problem.clone(), cfg, "problem")?
        .or_else(|| defaults.problem.map(String::from))
        .ok_or_else(|| usage("missing --problem"))?;
    let dim = pick_or(args.dim, cfg, "dim", defaults.dim)?;
    let degree = pick_or(args.degree, cfg, "degree", 1)?;

    let params = ProblemParams {
        nu: pick(args.nu, cfg, "nu")?.or(defaults.nu),
        width: pick(args.width, cfg, "width")?,
        sigma: pick(args.sigma, cfg, "sigma")?,
        theta: pick(args.theta, cfg, "theta")?,
        center: match pick(args.center.clone(), cfg, "center")? {
            Some(s) => Some(parse_pair(&s, "center")?),
            None => None,
        },
    };
    let problem = by_name(&name, dim, &params).map_err(usage_from)?;

    let gls = GlsParams {
        c1: pick_or(args.c1, cfg, "c1", 4.0)?,
        c2: pick_or(args.c2, cfg, "c2", 2.0)?,
        enabled: pick_or(args.gls, cfg, "gls", true)?,
    };

    let restart = pick_or(args.restart, cfg, "restart", 50)?;
    let method = match pick(args.method.clone(), cfg, "method")?.as_deref() {
        None | Some("bicgstab") => SolveMethod::BiCgStab,
        Some("gmres") => SolveMethod::Gmres { restart },
        Some(other) => {
            return Err(usage(format!("unknown method `{other}` (expected bicgstab or gmres)")))
        }
    };
    let precond = match pick(args.precond.clone(), cfg, "precond")?.as_deref() {
        None | Some("jacobi") => PrecondSpec::Jacobi,
        Some("none") => PrecondSpec::None,
        Some("block-jacobi") => PrecondSpec::BlockJacobi,
        Some(other) => {
            return Err(usage(format!(
                "unknown preconditioner `{other}` (expected none, jacobi or block-jacobi)"
            )))
        }
    };
    let solver = SolveConfig {
        method,
        precond,
        rel_tol: pick_or(args.rel_tol, cfg, "rel-tol", 1e-10)?,
        max_iters: pick(args.max_iters, cfg, "max-iters")?,
    };

    let out = pick(args.out.clone(), cfg, "out")?.unwrap_or_else(|| PathBuf::from("out"));

    Ok(Run { problem, dim, degree, gls, solver, out })
}

// ------------------------------------------------------------ utilities

fn write_out(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Assemble and solve one uniform-mesh problem; errors carry the level.
fn solve_uniform<'a>(
    run: &Run,
    mesh: &'a SpaceTimeMesh,
    nodes: &'a NodeSet,
    level: u8,
) -> CliResult<(FieldFunction<'a>, DiscreteSystem, usize)> {
    let basis = BasisSpec::new(run.degree, mesh.dim())?;
    let opts = AssemblyOptions { gls: run.gls, quad_order: None };
    let system = assemble(mesh, nodes, &run.problem, &basis, &opts)?;
    let (x, report) = solve(&system.matrix, &system.rhs, &run.solver, Some(&system.dof_groups))?;
    if !report.converged {
        return Err(CliError::Runtime(format!(
            "linear solve at level {level} did not converge: {} iterations, relative residual {:e}",
            report.iterations, report.residual
        )));
    }
    let field = FieldFunction::from_free(mesh, nodes, &system.dof_map, &x)?;
    Ok((field, system, report.iterations))
}

/// Largest sample of a profile; ties go to the smaller arc length.
fn peak(samples: &[(f64, f64)]) -> (f64, f64) {
    let mut best = samples[0];
    for &s in &samples[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    best
}

// ------------------------------------------------------------- commands

fn run_solve(args: SolveArgs, mut cfg: Settings) -> CliResult<()> {
    let run = resolve_common(&args.common, &mut cfg, Defaults::default())?;
    let level = pick_or(args.level, &mut cfg, "level", 4)?;
    cfg.finish()?;

    let mesh = SpaceTimeMesh::uniform(run.problem.domain.clone(), level)?;
    let nodes = mesh.nodes(run.degree)?;
    let (field, system, iterations) = solve_uniform(&run, &mesh, &nodes, level)?;
    let report = estimate(&run.problem, &field, &EstimateOptions::default())?;

    let mut vtk = Vec::new();
    write_field_vtk(&mut vtk, &field, &run.problem.name)?;
    let vtk_path = run.out.join("solution.vtk");
    write_out(&vtk_path, &vtk)?;

    println!(
        "solved {}: d={} k={} level={}, {} nodes ({} free), {} iterations",
        run.problem.name,
        run.dim,
        run.degree,
        level,
        nodes.len(),
        system.dof_map.n_free(),
        iterations
    );
    println!("eta = {}", report.global);

    if run.problem.exact.is_some() {
        let norms = error_norms(
            &run.problem,
            &field,
            &NormOptions { gls: run.gls, quad_order: None },
        )?;
        let row = ConvergenceRow {
            h: mesh.element_size(mesh.leaves()[0]),
            eta: report.global,
            err_h: norms.err_h,
            err_l2: norms.err_l2,
        };
        let mut csv = Vec::new();
        write_convergence_csv(&mut csv, &[row])?;
        let csv_path = run.out.join("error.csv");
        write_out(&csv_path, &csv)?;
        println!("err_l2 = {}  err_h = {}", norms.err_l2, norms.err_h);
        println!("wrote {} and {}", vtk_path.display(), csv_path.display());
    } else {
        println!("wrote {}", vtk_path.display());
    }
    Ok(())
}

fn run_converge(args: ConvergeArgs, mut cfg: Settings) -> CliResult<()> {
    let run = resolve_common(&args.common, &mut cfg, Defaults::default())?;
    let min_level = pick_or(args.min_level, &mut cfg, "min-level", 3)?;
    let max_level = pick_or(args.max_level, &mut cfg, "max-level", 6)?;
    cfg.finish()?;

    if run.problem.exact.is_none() {
        return Err(usage(format!(
            "problem `{}` has no exact solution to converge against",
            run.problem.name
        )));
    }
    if max_level < min_level || (max_level - min_level) < 2 {
        return Err(usage("a convergence study needs at least three levels"));
    }

    let mut rows = Vec::new();
    for level in min_level..=max_level {
        let mesh = SpaceTimeMesh::uniform(run.problem.domain.clone(), level)?;
        let nodes = mesh.nodes(run.degree)?;
        let (field, _, _) = solve_uniform(&run, &mesh, &nodes, level)?;
        let report = estimate(&run.problem, &field, &EstimateOptions::default())?;
        let norms = error_norms(
            &run.problem,
            &field,
            &NormOptions { gls: run.gls, quad_order: None },
        )?;
        let row = ConvergenceRow {
            h: mesh.element_size(mesh.leaves()[0]),
            eta: report.global,
            err_h: norms.err_h,
            err_l2: norms.err_l2,
        };
        println!(
            "level {level}: h={} eta={} err_h={} err_l2={}",
            row.h, row.eta, row.err_h, row.err_l2
        );
        rows.push(row);
    }

    let mut csv = Vec::new();
    write_convergence_csv(&mut csv, &rows)?;
    let csv_path = run.out.join("converge.csv");
    write_out(&csv_path, &csv)?;

    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    for (label, column) in [
        ("eta   ", rows.iter().map(|r| r.eta).collect::<Vec<_>>()),
        ("err_h ", rows.iter().map(|r| r.err_h).collect()),
        ("err_l2", rows.iter().map(|r| r.err_l2).collect()),
    ] {
        println!("slope {label} = {:.3}", log_log_slope(&hs, &column)?);
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn run_adapt(args: AdaptArgs, mut cfg: Settings) -> CliResult<()> {
    let run = resolve_common(&args.common, &mut cfg, Defaults::default())?;
    let level = pick_or(args.level, &mut cfg, "level", 2)?;
    let eta_tol = pick_or(args.eta_tol, &mut cfg, "eta-tol", 1e-3)?;
    let fraction = pick_or(args.fraction, &mut cfg, "fraction", 0.5)?;
    let marking = match pick(args.marking.clone(), &mut cfg, "marking")?.as_deref() {
        None | Some("threshold") => MarkingStrategy::Threshold,
        Some("dorfler") => MarkingStrategy::Dorfler { fraction },
        Some(other) => {
            return Err(usage(format!(
                "unknown marking `{other}` (expected threshold or dorfler)"
            )))
        }
    };
    let max_rounds = pick_or(args.max_rounds, &mut cfg, "max-rounds", 10)?;
    let max_level = pick_or(args.max_level, &mut cfg, "max-level", 12)?;
    cfg.finish()?;

    let start = SpaceTimeMesh::uniform(run.problem.domain.clone(), level)?;
    let adapt_cfg = AdaptConfig {
        degree: run.degree,
        eta_tol,
        marking,
        max_rounds,
        max_level,
        assembly: AssemblyOptions { gls: run.gls, quad_order: None },
        solver: run.solver.clone(),
    };
    let result = adapt(&run.problem, start, &adapt_cfg).map_err(usage_from)?;

    for r in &result.trace {
        print!(
            "round {}: dofs={} elements={} eta={} max_eta={}",
            r.round, r.dofs, r.elements, r.eta, r.max_eta
        );
        match r.err_l2 {
            Some(e) => println!(" err_l2={e}"),
            None => println!(),
        }
    }

    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &result.trace)?;
    write_out(&run.out.join("trace.csv"), &csv)?;

    let mut mesh_vtk = Vec::new();
    write_mesh_vtk(&mut mesh_vtk, &result.mesh, &run.problem.name)?;
    write_out(&run.out.join("mesh.vtk"), &mesh_vtk)?;
    let mut wrote = format!(
        "wrote {} and {}",
        run.out.join("trace.csv").display(),
        run.out.join("mesh.vtk").display()
    );

    if let Some(values) = result.nodal_values {
        let nodes = result.mesh.nodes(run.degree)?;
        let field = FieldFunction::new(&result.mesh, &nodes, values)?;
        let mut vtk = Vec::new();
        write_field_vtk(&mut vtk, &field, &run.problem.name)?;
        write_out(&run.out.join("solution.vtk"), &vtk)?;
        wrote.push_str(&format!(" and {}", run.out.join("solution.vtk").display()));
    }

    match result.stop {
        StopReason::Converged => println!("stopped: every indicator at or below {eta_tol}"),
        StopReason::MaxRounds => println!("stopped: round budget {max_rounds} exhausted"),
        StopReason::MaxLevel => println!("stopped: marked elements already at level {max_level}"),
        StopReason::SolveFailed { iterations, residual } => {
            println!("{wrote}");
            return Err(CliError::Runtime(format!(
                "linear solve failed during adaptation ({iterations} iterations, \
                 relative residual {residual:e}); partial trace written"
            )));
        }
    }
    println!("{wrote}");
    Ok(())
}

fn run_compare_cn(args: CompareCnArgs, mut cfg: Settings) -> CliResult<()> {
    let defaults = Defaults { problem: Some("rotating_gaussian"), dim: 2, nu: None };
    let run = resolve_common(&args.common, &mut cfg, defaults)?;
    let level = pick_or(args.level, &mut cfg, "level", 5)?;
    let steps = pick_or(args.steps, &mut cfg, "steps", 1usize << level)?;
    let samples = pick_or(args.samples, &mut cfg, "samples", 201)?;
    let domain = run.problem.domain.clone();
    let times = match pick(args.times.clone(), &mut cfg, "times")? {
        Some(s) => parse_f64_list(&s, "times")?,
        None => vec![domain.time_origin(), domain.final_time()],
    };
    let seg_a = pick(args.seg_a.clone(), &mut cfg, "seg-a")?;
    let seg_b = pick(args.seg_b.clone(), &mut cfg, "seg-b")?;
    let (a, b): (Vec<f64>, Vec<f64>) = match (seg_a, seg_b) {
        (Some(a), Some(b)) if run.dim == 2 => {
            (parse_pair(&a, "seg-a")?.to_vec(), parse_pair(&b, "seg-b")?.to_vec())
        }
        (Some(a), Some(b)) => (
            vec![a.parse().map_err(|e| usage(format!("seg-a: {e}")))?],
            vec![b.parse().map_err(|e| usage(format!("seg-b: {e}")))?],
        ),
        (None, None) if run.dim == 2 => {
            (vec![0.0, 2.0 / 3.0], vec![2.0 / 3.0, 0.0])
        }
        (None, None) => {
            (vec![domain.extent(0)[0]], vec![domain.extent(0)[1]])
        }
        _ => return Err(usage("--seg-a and --seg-b must be given together")),
    };
    if times.is_empty() {
        return Err(usage("--times must name at least one time"));
    }
    cfg.finish()?;

    // Space-time solve, profiled at each requested time.
    let mesh = SpaceTimeMesh::uniform(domain, level)?;
    let nodes = mesh.nodes(run.degree)?;
    let (field, _, st_iters) = solve_uniform(&run, &mesh, &nodes, level)?;

    let h = mesh.element_size(mesh.leaves()[0]);
    println!("h = {h}");
    println!("space-time: {} nodes, {} iterations", nodes.len(), st_iters);

    let mut st_profiles = Vec::new();
    for &t in &times {
        let prof = field.profile(&a, &b, t, samples)?;
        let mut csv = Vec::new();
        write_profile_csv(&mut csv, &prof)?;
        write_out(&run.out.join("st").join(format!("profile_t_{t}.csv")), &csv)?;
        st_profiles.push(prof);
    }

    // Crank-Nicolson reference on the matching spatial grid.
    let cn = CnSystem::build(&run.problem, level, run.degree, None)?;
    let cn_run = cn.march(&run.problem, steps, &run.solver, &times)?;
    println!(
        "crank-nicolson: {} steps of dt={}, {} total iterations",
        cn_run.steps, cn_run.dt, cn_run.iterations
    );

    let mut cn_profiles = Vec::new();
    for (&t, (_, state)) in times.iter().zip(&cn_run.snapshots) {
        let prof = cn.grid.profile(state, &a, &b, samples)?;
        let mut csv = Vec::new();
        write_profile_csv(&mut csv, &prof)?;
        write_out(&run.out.join("cn").join(format!("profile_t_{t}.csv")), &csv)?;
        cn_profiles.push(prof);
    }

    for (label, profiles) in [("st", &st_profiles), ("cn", &cn_profiles)] {
        let (arc0, _) = peak(&profiles[0]);
        for (t, prof) in times.iter().zip(profiles) {
            let (arc, height) = peak(prof);
            let shift = (arc - arc0).abs();
            println!(
                "{label} t={t}: peak {height} at arc {arc}  (moved {shift} = {:.2} h)",
                shift / h
            );
        }
    }
    println!("wrote profiles under {} and {}", run.out.join("st").display(), run.out.join("cn").display());
    Ok(())
}

fn run_condition(args: ConditionArgs, mut cfg: Settings) -> CliResult<()> {
    let defaults = Defaults { problem: Some("advdiff_mms"), dim: 1, nu: Some(1e-6) };
    let run = resolve_common(&args.common, &mut cfg, defaults)?;
    let level = pick_or(args.level, &mut cfg, "level", 3)?;
    let iters = pick_or(args.iters, &mut cfg, "iters", 100)?;
    cfg.finish()?;

    let mesh = SpaceTimeMesh::uniform(run.problem.domain.clone(), level)?;
    let nodes = mesh.nodes(run.degree)?;
    let basis = BasisSpec::new(run.degree, mesh.dim())?;

    let mut kappas = Vec::new();
    let mut n_free = 0;
    for enabled in [true, false] {
        let opts = AssemblyOptions {
            gls: GlsParams { enabled, ..run.gls },
            quad_order: None,
        };
        let system = assemble(&mesh, &nodes, &run.problem, &basis, &opts)?;
        n_free = system.dof_map.n_free();
        let inner = SolveConfig {
            method: SolveMethod::Gmres { restart: n_free.clamp(1, 1000) },
            precond: PrecondSpec::Jacobi,
            rel_tol: run.solver.rel_tol,
            max_iters: None,
        };
        let cond = estimate_condition(&system.matrix, &inner, iters)?;
        kappas.push((enabled, cond));
    }

    println!(
        "{} d={} k={} level={} nu={}: {} free dofs",
        run.problem.name, run.dim, run.degree, level, run.problem.nu, n_free
    );
    for (enabled, est) in &kappas {
        let label = if *enabled { "stabilized  " } else { "unstabilized" };
        let partial = if est.complete { "" } else { "  (partial: inner solve struggled)" };
        println!("kappa {label} = {}{partial}", est.kappa);
    }
    let ratio = kappas[0].1.kappa / kappas[1].1.kappa;
    println!("ratio stabilized/unstabilized = {ratio}");
    Ok(())
}

// ----------------------------------------------------------------- main

fn run(cli: Cli) -> CliResult<()> {
    let cfg = Settings::load(cli.config.as_deref())?;
    match cli.cmd {
        Command::Solve(a) => run_solve(a, cfg),
        Command::Converge(a) => run_converge(a, cfg),
        Command::Adapt(a) => run_adapt(a, cfg),
        Command::CompareCn(a) => run_compare_cn(a, cfg),
        Command::Condition(a) => run_condition(a, cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
