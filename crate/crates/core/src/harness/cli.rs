//! The `sdelab` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use super::checks::{bound_check, bound_curve, stationary_check};
use super::ensemble::{run_ensemble, weak_error};
use super::output::{emit_csv, write_summary};
use super::presets;
use super::scaling::scaling_report;
use super::spec::{ExperimentSpec, Observable};
use crate::analysis::{dcsgd_asymptote, dsgd_asymptote, BoundParams, Factors, ScalingRule};
use crate::optimizers::OptimizerKind;
use crate::specfun::{phase_constants, Dof, DEFAULT_EPSILON};

/// Print to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "sdelab", version, about = "Monte-Carlo ensembles of distributed optimizers and their SDE models")]
struct Cli {
    /// Override the seed of every spec.
    #[arg(long, global = true, env = "SDELAB_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for CSV and summary files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Multiply every spec's path count (rounded up, at least 1).
    #[arg(long, global = true)]
    paths_scale: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the ensembles of a spec and write CSV tables.
    Run(SpecArg),
    /// Weak error of the SDE against the optimizer over step sizes.
    ValidateSde {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025])]
        etas: Vec<f64>,
        #[arg(long, default_value = "loss_gap")]
        observable: String,
        /// Smallest accepted log-log slope.
        #[arg(long, default_value_t = 0.7)]
        min_slope: f64,
    },
    /// Compare the mean loss gap with the spec's analytic bound.
    Bounds(SpecArg),
    /// Check a scaling rule analytically, optionally by simulation.
    Scaling {
        #[command(flatten)]
        spec: SpecArg,
        /// Rule id; defaults to the spec's comparison block.
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Also run the reference and rescaled ensembles.
        #[arg(long)]
        verify: bool,
    },
    /// Compare tail coordinate variances with the stationary prediction.
    Stationary {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long)]
        rel_tol: Option<f64>,
    },
    /// Print the SignSGD phase constants for a tail index.
    Phases {
        #[arg(long, default_value = "inf")]
        nu: String,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        eps: f64,
    },
    /// List the built-in specs.
    ListPresets,
}

#[derive(Args, Debug)]
struct SpecArg {
    /// Spec file, or the name of a built-in preset.
    spec: String,
}

enum Outcome {
    Ok,
    CheckFailed,
}

/// Run the CLI on `argv` (program name first) and return the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed) => EXIT_CHECK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// A file path, the same path with `.json` appended, or a preset name.
fn read_spec(arg: &str) -> anyhow::Result<ExperimentSpec> {
    let path = Path::new(arg);
    let with_ext = PathBuf::from(format!("{arg}.json"));
    for p in [path, with_ext.as_path()] {
        if p.is_file() {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            return Ok(ExperimentSpec::from_json(&text, &p.display().to_string())?);
        }
    }
    match presets::text(arg) {
        Some(_) => Ok(presets::get(arg)?),
        None => bail!("no spec file or preset named `{arg}`"),
    }
}

fn load(cli: &Cli, arg: &str) -> anyhow::Result<Vec<ExperimentSpec>> {
    Ok(load_named(cli, arg)?.1)
}

/// The spec's own name and its validated sweep variants.
fn load_named(cli: &Cli, arg: &str) -> anyhow::Result<(String, Vec<ExperimentSpec>)> {
    let mut spec = read_spec(arg)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(c) = cli.paths_scale {
        if !(c > 0.0 && c.is_finite()) {
            bail!("--paths-scale must be positive, got {c}");
        }
        spec.paths = ((spec.paths as f64 * c).ceil() as usize).max(1);
    }
    let variants = spec.expand()?;
    for v in &variants {
        v.resolve().with_context(|| format!("spec `{}`", v.name))?;
    }
    Ok((spec.name, variants))
}

fn ensure(v: &mut Vec<Observable>, o: Observable) {
    if !v.contains(&o) {
        v.push(o);
    }
}

fn out_path(cli: &Cli, name: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    Ok(cli.out_dir.join(name))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dispatch(cli: &Cli) -> anyhow::Result<Outcome> {
    match &cli.cmd {
        Cmd::Run(a) => run(cli, &a.spec),
        Cmd::ValidateSde { spec, etas, observable, min_slope } => validate_sde(cli, &spec.spec, etas, observable, *min_slope),
        Cmd::Bounds(a) => bounds(cli, &a.spec),
        Cmd::Scaling { spec, rule, kappa, delta, alpha, beta, verify } => {
            let over = Factors {
                kappa: kappa.unwrap_or(f64::NAN),
                delta: delta.unwrap_or(f64::NAN),
                alpha: alpha.unwrap_or(f64::NAN),
                beta: beta.unwrap_or(f64::NAN),
            };
            scaling(cli, &spec.spec, rule.as_deref(), over, *verify)
        }
        Cmd::Stationary { spec, rel_tol } => stationary(cli, &spec.spec, *rel_tol),
        Cmd::Phases { nu, eps } => {
            let nu: Dof = nu.parse()?;
            let pc = phase_constants(nu, *eps)?;
            say!("nu = {}", pc.nu);
            say!("epsilon = {}", pc.epsilon);
            say!("psi = {}", pc.psi);
            say!("ell = {}", pc.ell);
            say!("m = {}", pc.m);
            say!("q1 = {}", pc.q1);
            say!("q2 = {}", pc.q2);
            say!("q_hat = {}", pc.q_hat);
            Ok(Outcome::Ok)
        }
        Cmd::ListPresets => {
            for n in presets::names() {
                let s = presets::get(n)?;
                say!("{n:<28} {}", s.description);
            }
            Ok(Outcome::Ok)
        }
    }
}

fn run(cli: &Cli, arg: &str) -> anyhow::Result<Outcome> {
    let (base, variants) = load_named(cli, arg)?;
    let single = variants.len() == 1;
    let mut index = String::from("name,paths,diverged,max_increment_inf,csv\n");
    for v in variants {
        let exp = v.resolve()?;
        let stats = run_ensemble(&exp)?;
        let file = match (&v.output, single) {
            (Some(o), true) => o.clone(),
            _ => format!("{}.csv", v.name),
        };
        let csv = out_path(cli, &file)?;
        emit_csv(&stats, &csv)?;
        write_summary(&stats, &v, &csv, &csv.with_extension("summary.json"))?;
        say!("{}: paths={} diverged={} csv={}", v.name, stats.paths, stats.diverged, csv.display());
        writeln!(index, "{},{},{},{:?},{file}", v.name, stats.paths, stats.diverged, stats.max_increment_inf).unwrap();
    }
    if !single {
        write_text(&out_path(cli, &format!("{base}.runs.csv"))?, &index)?;
    }
    Ok(Outcome::Ok)
}

fn validate_sde(cli: &Cli, arg: &str, etas: &[f64], observable: &str, min_slope: f64) -> anyhow::Result<Outcome> {
    let g: Observable =
        serde_json::from_value(serde_json::Value::String(observable.to_string())).with_context(|| format!("unknown observable `{observable}`"))?;
    let mut outcome = Outcome::Ok;
    for v in load(cli, arg)? {
        let r = weak_error(&v, g, etas)?;
        let mut table = String::from("eta,error,noise_floor\n");
        for i in 0..r.etas.len() {
            writeln!(table, "{:?},{:?},{:?}", r.etas[i], r.errors[i], r.noise_floor[i]).unwrap();
        }
        let path = out_path(cli, &format!("{}.weak.csv", v.name))?;
        write_text(&path, &table)?;
        say_raw!("{table}");
        let ok = r.slope >= min_slope;
        say!("{}: slope={:.4} stderr={:.4} min={} {}", v.name, r.slope, r.slope_stderr, min_slope, verdict(ok));
        if !ok {
            outcome = Outcome::CheckFailed;
        }
    }
    Ok(outcome)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn bounds(cli: &Cli, arg: &str) -> anyhow::Result<Outcome> {
    let mut outcome = Outcome::Ok;
    for mut v in load(cli, arg)? {
        let Some(cmp) = v.comparison.clone() else {
            bail!("spec `{}` has no comparison block", v.name);
        };
        ensure(&mut v.observables, Observable::LossGap);
        ensure(&mut v.observables, Observable::CoordMean);
        let exp = v.resolve()?;
        let stats = run_ensemble(&exp)?;
        let (bound, phases) = bound_curve(&stats, &exp)?;
        let report = bound_check(&stats, "loss_gap", &bound, cmp.slack)?;
        let c = stats.column("loss_gap")?;
        let mut table = String::from("step,time,loss_gap_mean,loss_gap_stderr,bound");
        table.push_str(if phases.is_some() { ",phase\n" } else { "\n" });
        for (r, &step) in stats.steps.iter().enumerate() {
            write!(table, "{step},{:?},{:?},{:?},{:?}", step as f64 * stats.eta, stats.mean[c][r], stats.stderr[c][r], bound[r]).unwrap();
            if let Some(p) = &phases {
                write!(table, ",{}", p.phase[r]).unwrap();
            }
            table.push('\n');
        }
        write_text(&out_path(cli, &format!("{}.bounds.csv", v.name))?, &table)?;
        say!(
            "{}: rows={} violations={} max_ratio={:.4} slack={} diverged={} {}",
            v.name,
            report.rows_checked,
            report.violations.len(),
            report.max_ratio,
            cmp.slack,
            stats.diverged,
            verdict(report.pass())
        );
        let p = BoundParams::from_cluster(exp.kind, &exp.landscape, &exp.cluster)?;
        let asym = match exp.kind {
            OptimizerKind::Dsgd => Some(dsgd_asymptote(&p)),
            OptimizerKind::Dcsgd => dcsgd_asymptote(&p).ok(),
            _ => None,
        };
        if let Some(a) = asym {
            say!("  asymptote={a:e} tail_mean={:e}", stats.tail_mean(c, cmp.window));
        }
        if let Some(pc) = phases {
            let exit = pc.exit_time.map_or("none".to_string(), |t| format!("{t}"));
            say!("  phase-1 exit={exit} t*={} negative_additive={}", pc.t_star, pc.negative_additive);
        }
        if !report.pass() {
            outcome = Outcome::CheckFailed;
        }
    }
    Ok(outcome)
}

fn scaling(cli: &Cli, arg: &str, rule: Option<&str>, over: Factors, verify: bool) -> anyhow::Result<Outcome> {
    let mut outcome = Outcome::Ok;
    for v in load(cli, arg)? {
        let sc = v.comparison.as_ref().and_then(|c| c.scaling.clone());
        let rule: ScalingRule = match (rule, &sc) {
            (Some(r), _) => r.parse()?,
            (None, Some(s)) => s.rule.parse()?,
            (None, None) => bail!("spec `{}` names no scaling rule; pass --rule", v.name),
        };
        let mut f = sc.as_ref().map_or_else(Factors::default, |s| s.factors);
        for (dst, src) in [(&mut f.kappa, over.kappa), (&mut f.delta, over.delta), (&mut f.alpha, over.alpha), (&mut f.beta, over.beta)] {
            if !src.is_nan() {
                *dst = src;
            }
        }
        let tol = sc.as_ref().map_or(1e-9, |s| s.tolerance);
        let match_tol = sc.as_ref().map_or(0.1, |s| s.match_tol);
        let r = scaling_report(&v, rule, &f, tol, match_tol, verify)?;
        say!(
            "{}: rule={} kappa={} delta={} alpha={} beta={} residual={:e} tolerance={:e}",
            v.name, r.rule, f.kappa, f.delta, f.alpha, f.beta, r.residual, r.tolerance
        );
        let scaled = r.scaled_asymptote.map_or("divergent".to_string(), |a| format!("{a:e}"));
        say!("  predicted reference={:e} scaled={scaled}", r.reference_asymptote);
        if let Some(e) = &r.empirical {
            say!(
                "  empirical reference={:e} scaled={:e} rel_diff={:.4} match_tol={} diverged={}/{}",
                e.reference_tail, e.scaled_tail, e.rel_diff, e.match_tol, e.reference_diverged, e.scaled_diverged
            );
        }
        say!("  {}", verdict(r.pass()));
        let json = serde_json::to_string_pretty(&r)?;
        write_text(&out_path(cli, &format!("{}.scaling.json", v.name))?, &json)?;
        if !r.pass() {
            outcome = Outcome::CheckFailed;
        }
    }
    Ok(outcome)
}

fn stationary(cli: &Cli, arg: &str, rel_tol: Option<f64>) -> anyhow::Result<Outcome> {
    let mut outcome = Outcome::Ok;
    for mut v in load(cli, arg)? {
        let tol = rel_tol
            .or_else(|| v.comparison.as_ref().and_then(|c| c.stationary).map(|s| s.rel_tol))
            .context("no tolerance: pass --rel-tol or set comparison.stationary")?;
        ensure(&mut v.observables, Observable::CoordVar);
        let exp = v.resolve()?;
        let stats = run_ensemble(&exp)?;
        let r = stationary_check(&stats, &exp, tol, exp.window())?;
        let mut table = String::from("coord,empirical,predicted,rel_err\n");
        for j in 0..r.empirical.len() {
            writeln!(table, "{j},{:?},{:?},{:?}", r.empirical[j], r.predicted[j], r.rel_err[j]).unwrap();
        }
        write_text(&out_path(cli, &format!("{}.stationary.csv", v.name))?, &table)?;
        say_raw!("{table}");
        say!("{}: max_rel_err={:.4} rel_tol={} diverged={} {}", v.name, r.max_rel_err, tol, stats.diverged, verdict(r.pass()));
        if !r.pass() {
            outcome = Outcome::CheckFailed;
        }
    }
    Ok(outcome)
}
