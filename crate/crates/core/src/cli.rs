//! Command-line front end: one subcommand per pipeline over a TOML config.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::chaos::{estimate_mle, mle_re_sweep, MleEstimate, MleOptions};
use crate::config::{write_values, AnySystem, Case, Config, SystemKind};
use crate::cost::{csv_err, write_cost_series, Objective};
use crate::error::{Error, Result};
use crate::grid_field::write_snapshot;
use crate::optimize::{optimize_control, write_history_csv, ControlProblem, LbfgsOptions, Termination};
use crate::sensitivity_loop::{integrate_adjoint, integrate_tangent, Direction};
use crate::timeloop::{rk_step, DynamicalSystem, StoreMode, TrajectoryStore};
use crate::verify::{
    blowup_study, complex_step_direction, dot_product_test, gaussian_perturbation, gradient_identity_test,
    tangent_growth_rate, BlowupCase, Check, Relation, Report,
};

#[derive(Parser, Debug)]
#[command(name = "flowadj", version, about = "Adjoint and tangent sensitivities for unsteady flow control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for independent jobs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Forward run with snapshots, cost series and mass log.
    Simulate,
    /// Transpose, complex-step, gradient-identity and duality checks.
    Verify,
    /// Adjoint gradient of the cost with respect to the control.
    Gradient,
    /// Tangent-linear directional derivative along a Gaussian perturbation.
    Tangent,
    /// L-BFGS control optimization.
    Optimize,
    /// Maximal Lyapunov exponent (and Reynolds sweep for flows).
    Lyapunov,
    /// Tangent against finite differences over increasing horizons.
    Blowup,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Gradient => "gradient",
            Command::Tangent => "tangent",
            Command::Optimize => "optimize",
            Command::Lyapunov => "lyapunov",
            Command::Blowup => "blowup",
        }
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Done,
    VerificationFailed,
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 1 on runtime errors, 2 when verification fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::VerificationFailed) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<(Config, Option<String>)> {
    let (mut cfg, header) = match &cli.config {
        Some(path) => {
            let mut cfg = Config::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut cfg.control.values_file, &mut cfg.numerics.drp_file].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            (cfg, Some(path.display().to_string()))
        }
        None => (Config::default(), None),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    Ok((cfg, header))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    source_config: Option<String>,
    provenance: Option<&'a str>,
    seed: u64,
    outputs: Vec<String>,
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let (cfg, source) = load_config(cli)?;
    let mut resolved = String::new();
    if let Some(p) = &cfg.run.provenance {
        resolved.push_str(&format!("# {p}\n"));
    }
    resolved.push_str(&cfg.to_toml()?);
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("resolved.toml"), resolved)?;
    let mut outputs = vec!["resolved.toml".to_string()];
    let outcome = match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cli.out, &mut outputs)?,
        Command::Verify => cmd_verify(&cfg, &cli.out, &mut outputs)?,
        Command::Gradient => cmd_gradient(&cfg, &cli.out, &mut outputs)?,
        Command::Tangent => cmd_tangent(&cfg, &cli.out, &mut outputs)?,
        Command::Optimize => cmd_optimize(&cfg, &cli.out, &mut outputs)?,
        Command::Lyapunov => cmd_lyapunov(&cfg, &cli.out, &mut outputs)?,
        Command::Blowup => cmd_blowup(&cfg, &cli.out, &mut outputs)?,
    };
    let manifest = Manifest {
        command: cli.command.name(),
        source_config: source,
        provenance: cfg.run.provenance.as_deref(),
        seed: cfg.run.seed,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Storage(e.to_string()))?;
    fs::write(cli.out.join("run.json"), text)?;
    Ok(outcome)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn row<W: std::io::Write>(w: &mut csv::Writer<W>, fields: &[String]) -> Result<()> {
    w.write_record(fields).map_err(csv_err)
}

fn e17(v: f64) -> String {
    format!("{v:.17e}")
}

fn total_mass(case: &Case, u: &[f64]) -> Option<f64> {
    match &case.system {
        AnySystem::Ns(s) => {
            let n = s.ops.npts();
            Some(u[..n].iter().sum::<f64>() * s.grid().cell_volume())
        }
        AnySystem::Lorenz(_) => None,
    }
}

fn cmd_simulate(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    let case = cfg.build()?;
    let sys = case.system.as_dyn();
    let clock = &case.clock;
    let header = sys.snapshot_header();
    let snap_dir = out.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    let write_snap = |n: usize, u: &[f64], outputs: &mut Vec<String>| -> Result<()> {
        let name = format!("snapshots/snap_{n:06}.afl");
        let mut w = BufWriter::new(File::create(out.join(&name))?);
        write_snapshot(&mut w, &header, u)?;
        outputs.push(name);
        Ok(())
    };
    let mut u = case.u0.clone();
    let mut k = vec![0.0; u.len()];
    let mut scratch = vec![0.0; u.len()];
    let mass0 = total_mass(&case, &u);
    let mut mass = mass0.map(|_| csv_writer(&out.join("mass.csv"))).transpose()?;
    if let (Some(w), Some(m0)) = (mass.as_mut(), mass0) {
        row(w, &["step".into(), "time".into(), "total_mass".into(), "relative_drift".into()])?;
        row(w, &["0".into(), e17(clock.t0), e17(m0), e17(0.0)])?;
        outputs.push("mass.csv".into());
    }
    write_snap(0, &u, outputs)?;
    let mut obs = Vec::new();
    let mut observed = Vec::new();
    if case.objective.observes(0) {
        obs.push(case.objective.observe(&u));
        observed.push(0);
    }
    let st = clock.stages();
    for s in 1..=clock.total_substeps() {
        let g = case.controls.as_ref().and_then(|c| c.fine_at(clock.eval_tau(s - 1)));
        rk_step(sys, clock, s, &mut u, &mut k, g.as_deref(), &mut scratch);
        if s % st != 0 {
            continue;
        }
        let n = s / st;
        sys.check_state(&u).map_err(|e| Error::IntegrationFailure {
            step: n,
            source: Box::new(e),
        })?;
        if case.objective.observes(n) {
            obs.push(case.objective.observe(&u));
            observed.push(n);
        }
        if let (Some(w), Some(m0)) = (mass.as_mut(), mass0) {
            let m = total_mass(&case, &u).unwrap_or(m0);
            row(w, &[n.to_string(), e17(clock.iteration_time(n)), e17(m), e17((m - m0) / m0)])?;
        }
        let every = cfg.run.snapshot_every;
        if (every > 0 && n % every == 0) || n == clock.n_steps {
            write_snap(n, &u, outputs)?;
        }
    }
    if let Some(w) = mass.as_mut() {
        w.flush()?;
    }
    let contributions = case.objective.contributions(&obs);
    write_cost_series(File::create(out.join("cost.csv"))?, &observed, clock.dt, &contributions)?;
    outputs.push("cost.csv".into());
    println!("cost {:.17e}", case.objective.value(&obs));
    Ok(Outcome::Done)
}

fn make_store(cfg: &Config, sys: &dyn DynamicalSystem, out: &Path, outputs: &mut Vec<String>) -> Result<TrajectoryStore> {
    let mode = cfg.store_mode();
    if cfg.storage.to_file {
        outputs.push("trajectory.afl".into());
        TrajectoryStore::in_file(mode, &out.join("trajectory.afl"), sys.snapshot_header())
    } else {
        Ok(TrajectoryStore::in_memory(mode))
    }
}

fn require_controls(case: &Case) -> Result<&crate::control_space::ControlHistory> {
    case.controls
        .as_ref()
        .ok_or_else(|| Error::Validation("this command needs [control] enabled = true".into()))
}

fn cmd_gradient(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    let case = cfg.build()?;
    let sys = case.system.as_dyn();
    let controls = require_controls(&case)?;
    let mut store = make_store(cfg, sys, out, outputs)?;
    let adj = integrate_adjoint(sys, &case.clock, &case.u0, Some(controls), &mut store, &case.objective)?;
    write_values(&out.join("gradient.txt"), &adj.gradient)?;
    let mut w = csv_writer(&out.join("gradient_energy.csv"))?;
    row(&mut w, &["step".into(), "time".into(), "energy".into()])?;
    for (n, e) in adj.gradient_energy.iter().enumerate() {
        row(&mut w, &[(n + 1).to_string(), e17(case.clock.iteration_time(n + 1)), e17(*e)])?;
    }
    w.flush()?;
    let contributions = case.objective.contributions(&adj.forward.observations);
    write_cost_series(
        File::create(out.join("cost.csv"))?,
        &adj.forward.observed_iterations,
        case.clock.dt,
        &contributions,
    )?;
    outputs.extend(["gradient.txt", "gradient_energy.csv", "cost.csv"].map(String::from));
    let gn = adj.gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("cost {:.17e}", adj.forward.cost);
    println!("gradient_norm {gn:.17e}");
    Ok(Outcome::Done)
}

fn cmd_tangent(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    let case = cfg.build()?;
    let sys = case.system.as_dyn();
    let controls = require_controls(&case)?;
    let xdot = gaussian_perturbation(&controls.param, cfg.verify.perturbation);
    let tan = integrate_tangent(
        sys,
        &case.clock,
        &case.u0,
        Some(controls),
        Direction {
            state: None,
            control: Some(&xdot),
        },
        &case.objective,
    )?;
    write_norms(&out.join("tangent_norm.csv"), &tan.norms, case.clock.dt)?;
    outputs.push("tangent_norm.csv".into());
    println!("cost {:.17e}", tan.cost);
    println!("jdot {:.17e}", tan.jdot);
    if let Some(n) = tan.blowup {
        println!("blowup_step {n}");
    }
    Ok(Outcome::Done)
}

fn write_norms(path: &Path, norms: &[f64], dt: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    row(&mut w, &["step".into(), "time".into(), "norm".into()])?;
    for (n, v) in norms.iter().enumerate() {
        row(&mut w, &[n.to_string(), e17(n as f64 * dt), e17(*v)])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_optimize(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    let case = cfg.build()?;
    let sys = case.system.as_dyn();
    let controls = require_controls(&case)?;
    let store = make_store(cfg, sys, out, outputs)?;
    let o = &cfg.optimize;
    let opts = LbfgsOptions {
        memory: o.memory,
        c1: o.c1,
        c2: o.c2,
        initial_step: o.initial_step,
        max_iters: o.max_iters,
        grad_tol: o.grad_tol,
        ..Default::default()
    };
    let mut problem = ControlProblem::new(
        sys,
        case.clock.clone(),
        case.u0.clone(),
        controls.param.clone(),
        case.objective.clone(),
        store,
    );
    let res = optimize_control(&mut problem, &controls.values, &opts)?;
    write_history_csv(File::create(out.join("history.csv"))?, &res.history)?;
    write_values(&out.join("control.txt"), &res.x)?;
    outputs.extend(["history.csv", "control.txt"].map(String::from));
    if let Termination::LineSearchFailed(msg) = &res.termination {
        eprintln!("warning: stopped early: {msg}");
    }
    if res.skipped_pairs > 0 {
        eprintln!("note: {} curvature pairs skipped", res.skipped_pairs);
    }
    let first = res.history[0].cost;
    println!("initial_cost {first:.17e}");
    println!("final_cost {:.17e}", res.cost);
    println!("iterations {}", res.history.len() - 1);
    Ok(Outcome::Done)
}

fn mle_options(cfg: &Config) -> MleOptions {
    MleOptions {
        t_transient: cfg.lyapunov.t_transient,
        t_fit: cfg.lyapunov.t_fit,
        renormalize_every: cfg.lyapunov.renormalize_every,
        seed: cfg.run.seed,
    }
}

fn single_mle(cfg: &Config) -> Result<MleEstimate> {
    let mut c = cfg.clone();
    c.control.enabled = false;
    let case = c.build()?;
    estimate_mle(case.system.as_dyn(), &case.clock, &case.u0, &mle_options(cfg))
}

fn cmd_lyapunov(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    if !cfg.lyapunov.reynolds.is_empty() {
        if cfg.run.system == SystemKind::Lorenz {
            return Err(Error::Validation("a Reynolds sweep needs a flow system".into()));
        }
        let sweep = mle_re_sweep(&cfg.lyapunov.reynolds, cfg.run.threads, |re| {
            let mut c = cfg.clone();
            c.fluid.reynolds = re;
            single_mle(&c)
        })?;
        let mut w = csv_writer(&out.join("sweep.csv"))?;
        row(&mut w, &["reynolds".into(), "lambda".into(), "r_squared".into()])?;
        for r in &sweep.rows {
            row(&mut w, &[e17(r.reynolds), e17(r.lambda), e17(r.r_squared)])?;
            println!("Re {} lambda {:.6e} r2 {:.4}", r.reynolds, r.lambda, r.r_squared);
        }
        w.flush()?;
        outputs.push("sweep.csv".into());
        println!("exponent {:.4}", sweep.exponent);
        println!("non_decreasing {}", sweep.is_non_decreasing());
        return Ok(Outcome::Done);
    }
    let m = single_mle(cfg)?;
    let mut w = csv_writer(&out.join("lyapunov.csv"))?;
    row(&mut w, &["t".into(), "log_growth".into()])?;
    for (t, l) in &m.series {
        row(&mut w, &[e17(*t), e17(*l)])?;
    }
    w.flush()?;
    outputs.push("lyapunov.csv".into());
    if m.r_squared < 0.98 {
        eprintln!("warning: fit quality R^2 = {:.4} below 0.98", m.r_squared);
    }
    println!("lambda {:.6e}", m.lambda);
    println!("r_squared {:.6}", m.r_squared);
    Ok(Outcome::Done)
}

fn cmd_blowup(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    let case = cfg.build()?;
    let sys = case.system.as_dyn();
    let horizons = &cfg.blowup.horizons;
    let rows = blowup_study(sys, &case.clock, &case.u0, horizons, cfg.blowup.epsilon, |n| {
        let mut c = cfg.clone();
        c.numerics.steps = n;
        c.control.last_step = n;
        c.cost.last = n;
        c.control.enabled = true;
        let case = c.build()?;
        let controls = require_controls(&case)?.clone();
        let dir = gaussian_perturbation(&controls.param, 1.0);
        Ok(BlowupCase {
            controls: Some(controls),
            state_dir: None,
            control_dir: Some(dir),
            objective: case.objective,
        })
    })?;
    let mut w = csv_writer(&out.join("blowup.csv"))?;
    row(&mut w, &["horizon", "steps", "tangent", "fd", "rel_gap", "blowup_step"].map(String::from))?;
    let mut norms = csv_writer(&out.join("blowup_norms.csv"))?;
    row(&mut norms, &["horizon", "step", "time", "norm"].map(String::from))?;
    for r in &rows {
        let b = r.blowup.map(|b| b.to_string()).unwrap_or_default();
        row(&mut w, &[e17(r.horizon), r.n_steps.to_string(), e17(r.tangent), e17(r.fd), e17(r.rel_gap), b])?;
        for (n, v) in r.norms.iter().enumerate() {
            row(&mut norms, &[e17(r.horizon), n.to_string(), e17(n as f64 * case.clock.dt), e17(*v)])?;
        }
        println!("horizon {} tangent {:.6e} fd {:.6e} rel_gap {:.3e}", r.horizon, r.tangent, r.fd, r.rel_gap);
    }
    w.flush()?;
    norms.flush()?;
    outputs.extend(["blowup.csv", "blowup_norms.csv"].map(String::from));
    if let Some(last) = rows.last() {
        let rate = tangent_growth_rate(&last.norms, case.clock.dt, 0.2 * last.horizon)?;
        println!("tangent_growth_rate {rate:.6e}");
    }
    Ok(Outcome::Done)
}

/// Default pass/fail gates of the verification battery.
pub fn verification_report(cfg: &Config) -> Result<Report> {
    let case = cfg.build()?;
    let mut report = Report::default();
    let seed = cfg.run.seed;
    let trials = cfg.verify.trials;
    let g0 = case.controls.as_ref().map(|c| vec![0.1; c.param.fine_len()]);
    let t_mid = case.clock.iteration_time(case.clock.n_steps / 2);
    let (dp, cs) = match &case.system {
        AnySystem::Ns(s) => {
            let dp = dot_product_test(s.as_ref(), &case.u0, g0.as_deref(), t_mid, trials, seed)?;
            let v = probe_direction(s.state_len(), seed);
            let cs = complex_step_direction(s.as_ref(), &case.u0, g0.as_deref(), t_mid, &v, cfg.verify.complex_step)?;
            (dp, cs)
        }
        AnySystem::Lorenz(s) => {
            let dp = dot_product_test(s, &case.u0, g0.as_deref(), t_mid, trials, seed)?;
            let v = probe_direction(3, seed);
            let cs = complex_step_direction(s, &case.u0, g0.as_deref(), t_mid, &v, cfg.verify.complex_step)?;
            (dp, cs)
        }
    };
    report.push(Check::new("transpose_identity", dp, Relation::Below, 1e-13));
    report.push(Check::new("complex_step", cs, Relation::Below, 1e-12));
    if let Some(controls) = &case.controls {
        let sys = case.system.as_dyn();
        let xdot = gaussian_perturbation(&controls.param, cfg.verify.perturbation);
        let mut store = TrajectoryStore::in_memory(StoreMode::StoreAll);
        let gi = gradient_identity_test(
            sys,
            &case.clock,
            &case.u0,
            Some(controls),
            Direction {
                state: None,
                control: Some(&xdot),
            },
            &case.objective,
            &mut store,
        )?;
        let floor = if cfg.run.system == SystemKind::Lorenz { 12.0 } else { 10.0 };
        report.push(Check::new("gradient_identity_digits", gi.digits, Relation::AtLeast, floor));
        // duality along a random direction
        let xr = probe_direction(controls.values.len(), seed ^ 0x5eed);
        let mut store = TrajectoryStore::in_memory(StoreMode::StoreAll);
        let gi = gradient_identity_test(
            sys,
            &case.clock,
            &case.u0,
            Some(controls),
            Direction {
                state: None,
                control: Some(&xr),
            },
            &case.objective,
            &mut store,
        )?;
        let defect = (gi.lhs - gi.rhs).abs() / gi.lhs.abs().max(gi.rhs.abs()).max(f64::MIN_POSITIVE);
        report.push(Check::new("adjoint_tangent_duality", defect, Relation::Below, 1e-10));
    }
    Ok(report)
}

fn probe_direction(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn cmd_verify(cfg: &Config, out: &Path, outputs: &mut Vec<String>) -> Result<Outcome> {
    let report = verification_report(cfg)?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    fs::write(out.join("report.json"), report.to_json())?;
    outputs.push("report.json".into());
    Ok(if report.all_passed() {
        Outcome::Done
    } else {
        Outcome::VerificationFailed
    })
}
