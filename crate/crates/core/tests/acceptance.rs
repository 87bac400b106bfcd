//! End-to-end acceptance criteria. Every criterion is evaluated, one
//! PASS/FAIL line is printed for each, and the test fails if any failed.

use std::f64::consts::PI;
use std::io::Write;

use sdelab::analysis::{dcsgd_asymptote, BoundParams, Factors, ScalingRule};
use sdelab::harness::checks::{bound_check, bound_curve, stationary_check};
use sdelab::harness::output::format_csv;
use sdelab::harness::scaling::scaling_report;
use sdelab::harness::spec::{ExperimentSpec, Observable};
use sdelab::harness::{presets, run_ensemble, weak_error, EnsembleStats};
use sdelab::specfun::{ell_nu, xi_nu, Dof};

type Verdict = Result<String, String>;

fn variants(name: &str) -> Vec<ExperimentSpec> {
    presets::get(name).unwrap().expand().unwrap()
}

fn variant(name: &str, suffix: &str) -> ExperimentSpec {
    variants(name).into_iter().find(|v| v.name.ends_with(suffix)).unwrap()
}

fn run(spec: &ExperimentSpec) -> EnsembleStats {
    run_ensemble(&spec.resolve().unwrap()).unwrap()
}

fn tail_loss(st: &EnsembleStats) -> f64 {
    st.tail_mean(st.column("loss_gap").unwrap(), 0.1)
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `Ξ_ν` by quadrature. With `t = √ν tan θ` the t-density becomes
/// `∝ cos^{ν−1} θ`, a smooth integrand on `[0, π/2]`.
fn xi_oracle(x: f64, nu: Option<f64>) -> f64 {
    match nu {
        None => simpson(|t| (-0.5 * t * t).exp(), 0.0, x, 4000) / (2.0 * PI).sqrt(),
        Some(nu) => {
            let g = |th: f64| th.cos().powf(nu - 1.0);
            let theta = (x / nu.sqrt()).atan();
            simpson(g, 0.0, theta, 4000) / (2.0 * simpson(g, 0.0, PI / 2.0, 4000))
        }
    }
}

fn ac1_special_functions() -> Verdict {
    let start = std::time::Instant::now();
    let ells = [
        (ell_nu(Dof::new(1.0).unwrap()).unwrap(), 2.0 / PI),
        (ell_nu(Dof::new(2.0).unwrap()).unwrap(), 1.0 / 2f64.sqrt()),
        (ell_nu(Dof::Infinite).unwrap(), (2.0 / PI).sqrt()),
    ];
    let ell_err = ells.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut xi_err = 0.0f64;
    for nu in [Some(1.0), Some(2.0), Some(3.0), Some(8.0), Some(64.0), None] {
        let dof = nu.map_or(Dof::Infinite, |v| Dof::new(v).unwrap());
        for i in -40..=40 {
            let x = i as f64 * 0.25;
            xi_err = xi_err.max((xi_nu(x, dof).unwrap() - xi_oracle(x, nu)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        ell_err <= 1e-12 && xi_err <= 1e-6 && secs < 1.0,
        format!("max |ℓ − exact| = {ell_err:e}, max |Ξ − quadrature| = {xi_err:e}, {secs:.3}s"),
    )
}

fn ac2_weak_order() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for opt in ["dsgd", "dcsgd", "dsignsgd"] {
        let spec = presets::get(&format!("fig-weak-{opt}")).unwrap();
        let r = weak_error(&spec, Observable::LossGap, &[0.1, 0.05, 0.025]).unwrap();
        ok &= r.slope >= 0.7;
        parts.push(format!("{opt} slope {:.3}", r.slope));
    }
    verdict(ok, parts.join(", "))
}

fn ac3_dcsgd_domination() -> Verdict {
    let spec = presets::get("fig-dcsgd-bounds").unwrap();
    let exp = spec.resolve().unwrap();
    let st = run_ensemble(&exp).unwrap();
    let (bound, _) = bound_curve(&st, &exp).unwrap();
    let report = bound_check(&st, "loss_gap", &bound, 1.05).unwrap();
    let p = BoundParams::from_cluster(exp.kind, &exp.landscape, &exp.cluster).unwrap();
    let asym = dcsgd_asymptote(&p).unwrap();
    let tail = tail_loss(&st);
    let rel = (tail - asym).abs() / asym;
    verdict(
        report.pass() && rel <= 0.25,
        format!("{} violations, max ratio {:.4}; tail {tail:e} vs asymptote {asym:e} ({:.1}%)", report.violations.len(), report.max_ratio, 100.0 * rel),
    )
}

fn ac4_divergence_threshold() -> Verdict {
    let dense = run(&variant("fig-divergence", "-k-128"));
    let sparse = run(&variant("fig-divergence", "-k-1"));
    verdict(
        dense.diverged == 0 && sparse.diverged as f64 > 0.9 * sparse.paths as f64,
        format!("k=128 diverged {}/{}, k=1 diverged {}/{}", dense.diverged, dense.paths, sparse.diverged, sparse.paths),
    )
}

fn ac5_sign_phases() -> Verdict {
    let spec = presets::get("fig-dsignsgd-phases").unwrap();
    let exp = spec.resolve().unwrap();
    let st = run_ensemble(&exp).unwrap();
    let (bound, curve) = bound_curve(&st, &exp).unwrap();
    let curve = curve.unwrap();
    let report = bound_check(&st, "loss_gap", &bound, 1.05).unwrap();
    let seen: Vec<u8> = (1..=3).filter(|p| curve.phase.contains(p)).collect();
    let exit = curve.exit_time.unwrap_or(f64::NAN);
    let rel = (exit - curve.t_star).abs() / curve.t_star;
    verdict(
        report.pass() && seen == [1, 2, 3] && rel <= 0.2,
        format!(
            "phases {seen:?}, {} violations (max ratio {:.4}); phase-1 exit {exit} vs t* {:.4} ({:.0}% off)",
            report.violations.len(),
            report.max_ratio,
            curve.t_star,
            100.0 * rel
        ),
    )
}

fn ac6_linear_speedup() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for opt in ["dsgd", "dcsgd", "dsignsgd"] {
        let (mut ns, mut losses) = (Vec::new(), Vec::new());
        for v in variants(&format!("fig-speedup-{opt}")) {
            ns.push(v.cluster.agents as f64);
            losses.push(tail_loss(&run(&v)));
        }
        let s = loglog_slope(&ns, &losses);
        ok &= (s + 1.0).abs() <= 0.15;
        parts.push(format!("{opt} slope {s:.3}"));
    }
    verdict(ok, parts.join(", "))
}

fn ac7_heavy_tails() -> Verdict {
    let cauchy = run(&variant("fig-heavy-tails-dcsgd", "-nu-1"));
    let nu2 = run(&variant("fig-heavy-tails-dcsgd", "-nu-2"));
    let gauss = run(&variant("fig-heavy-tails-dcsgd", "-nu-inf"));
    let var = |st: &EnsembleStats| st.tail_var(st.column("loss_gap").unwrap(), 0.1);
    let ratio = var(&nu2) / var(&gauss);
    let dcsgd_ok = cauchy.diverged as f64 > 0.9 * cauchy.paths as f64 && ratio > 10.0;

    let sign: Vec<(ExperimentSpec, EnsembleStats)> = variants("fig-heavy-tails-dsignsgd")
        .into_iter()
        .map(|v| {
            let st = run(&v);
            (v, st)
        })
        .collect();
    let (v1, s1) = &sign[0];
    let eta = v1.cluster.eta;
    // increments are η·(mean of signs); allow for rounding in x_{k+1} − x_k
    let bounded = s1.diverged == 0 && s1.max_increment_inf <= eta * (1.0 + 1e-9);
    let tails: Vec<f64> = sign.iter().map(|(_, st)| tail_loss(st)).collect();
    let monotone = tails.windows(2).all(|w| w[0] >= w[1]) && tails.iter().all(|t| t.is_finite());
    verdict(
        dcsgd_ok && bounded && monotone,
        format!(
            "DCSGD ν=1 diverged {}/{}, ν=2 tail variance {ratio:.3e}× Gaussian; DSignSGD ν=1 diverged {}, max step {:e} (η = {eta}); tails over ν∈{{1,2,3,8,∞}} {:?}",
            cauchy.diverged,
            cauchy.paths,
            s1.diverged,
            s1.max_increment_inf,
            tails.iter().map(|t| format!("{t:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn ac8_noise_level() -> Verdict {
    let slope = |name: &str| {
        let (mut cs, mut losses) = (Vec::new(), Vec::new());
        let base = presets::get(name).unwrap();
        let scales = base.sweep.as_ref().unwrap().noise_scale.clone().unwrap();
        for (c, v) in scales.iter().zip(base.expand().unwrap()) {
            cs.push(*c);
            losses.push(tail_loss(&run(&v)));
        }
        loglog_slope(&cs, &losses)
    };
    let a = slope("fig-noise-level-dcsgd");
    let b = slope("fig-noise-level-dsignsgd");
    verdict((a - 2.0).abs() <= 0.3 && (b - 1.0).abs() <= 0.3, format!("DCSGD slope {a:.3}, DSignSGD slope {b:.3}"))
}

fn ac9_scaling_rules() -> Verdict {
    let dc = presets::get("fig-scaling-dcsgd").unwrap();
    let follow = Factors { alpha: 2.0, ..Factors::default() };
    let a = scaling_report(&dc, ScalingRule::DcsgdAgentsCompression { exact: false }, &follow, 1e-9, 0.1, true).unwrap();
    let violate = Factors { kappa: 3.0, alpha: 2.0, ..Factors::default() };
    let b = scaling_report(&dc, ScalingRule::DcsgdAgentsLr { exact: false }, &violate, 1e-9, 0.1, true).unwrap();
    let sg = presets::get("fig-scaling-dsignsgd").unwrap();
    let follow = Factors { kappa: 2.0, delta: 4.0, ..Factors::default() };
    let c = scaling_report(&sg, ScalingRule::DSignSgd, &follow, 1e-9, 0.1, true).unwrap();
    let violate = Factors { kappa: 2.0, delta: 4.0, alpha: 0.5, ..Factors::default() };
    let d = scaling_report(&sg, ScalingRule::DSignSgd, &violate, 1e-9, 0.1, true).unwrap();
    let rd = |r: &sdelab::harness::scaling::ScalingReport| r.empirical.as_ref().unwrap().rel_diff;
    verdict(
        a.rule_holds() && rd(&a) <= 0.1 && rd(&b) > 0.3 && c.rule_holds() && rd(&c) <= 0.1 && rd(&d) > 0.3,
        format!(
            "DCSGD(η,B,ω,2N) {:.1}%, DCSGD(3η,B,ω,2N) {:.1}%; DSignSGD(2η,4B,N) {:.1}%, DSignSGD(2η,4B,N/2) {:.1}%",
            100.0 * rd(&a),
            100.0 * rd(&b),
            100.0 * rd(&c),
            100.0 * rd(&d)
        ),
    )
}

fn ac10_stationary() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, tol) in [("fig-stationary-dcsgd", 0.05), ("fig-stationary-dsignsgd", 0.1)] {
        let exp = presets::get(name).unwrap().resolve().unwrap();
        let st = run_ensemble(&exp).unwrap();
        let r = stationary_check(&st, &exp, tol, 0.1).unwrap();
        ok &= r.pass();
        parts.push(format!("{name} max rel err {:.2}% (tol {:.0}%)", 100.0 * r.max_rel_err, 100.0 * tol));
    }
    verdict(ok, parts.join(", "))
}

fn ac11_determinism() -> Verdict {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let (one, four) = (pool(1), pool(4));
    let mut checked = 0;
    let mut differing = Vec::new();
    for name in presets::names() {
        let mut v = presets::get(name).unwrap().expand().unwrap().remove(0);
        // more than one reduction round, shortened horizon
        v.paths = v.paths.min(1100);
        v.cluster.steps = v.cluster.steps.min(100);
        let exp = v.resolve().unwrap();
        let a = one.install(|| format_csv(&run_ensemble(&exp).unwrap()));
        let b = four.install(|| format_csv(&run_ensemble(&exp).unwrap()));
        checked += 1;
        if a != b {
            differing.push(name.to_string());
        }
    }
    verdict(differing.is_empty(), format!("{checked} presets, 1 vs 4 workers; differing: {differing:?}"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("special-function exactness", ac1_special_functions),
        ("weak approximation order", ac2_weak_order),
        ("DCSGD bound domination and asymptote", ac3_dcsgd_domination),
        ("DCSGD divergence threshold", ac4_divergence_threshold),
        ("DSignSGD three phases", ac5_sign_phases),
        ("linear speedup", ac6_linear_speedup),
        ("heavy-tail contrast", ac7_heavy_tails),
        ("noise-level scaling", ac8_noise_level),
        ("scaling rules", ac9_scaling_rules),
        ("stationary distributions", ac10_stationary),
        ("worker-count determinism", ac11_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        // written past the test harness's capture so every line is shown
        let _ = writeln!(std::io::stderr(), "AC{:<2} {tag} {name}: {detail}", i + 1);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
