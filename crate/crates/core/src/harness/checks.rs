//! Empirical statistics against analytic predictions.

use serde::Serialize;

use super::ensemble::EnsembleStats;
use super::spec::{BoundKind, Experiment};
use crate::analysis::{dcsgd_pl_bound, dcsgd_stationary_cov, dsgd_pl_bound, dsignsgd_phase_bound, dsignsgd_stationary_cov, phase1_exit_time, BoundParams, Moments};
use crate::compressors::Compressor;
use crate::error::{config_err, Error, Result};
use crate::landscapes::{Hessian, LandscapeKind};
use crate::optimizers::OptimizerKind;
use crate::specfun::{phase_constants, PhaseConstants};

/// Rows where `mean + 2·stderr` exceeds `slack · bound`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub slack: f64,
    pub rows_checked: usize,
    pub violations: Vec<usize>,
    /// Largest `(mean + 2·stderr) / bound` over checked rows.
    pub max_ratio: f64,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn bound_check(stats: &EnsembleStats, column: &str, bound: &[f64], slack: f64) -> Result<BoundReport> {
    let c = stats.column(column)?;
    if bound.len() != stats.steps.len() {
        return Err(Error::Dimension { expected: stats.steps.len(), got: bound.len() });
    }
    let mut report = BoundReport { slack, rows_checked: 0, violations: Vec::new(), max_ratio: 0.0 };
    for (r, &b) in bound.iter().enumerate() {
        let m = stats.mean[c][r];
        if m.is_nan() {
            continue;
        }
        report.rows_checked += 1;
        let upper = m + 2.0 * stats.stderr[c][r];
        if b.is_finite() {
            report.max_ratio = report.max_ratio.max(upper / b);
        }
        if !(upper <= slack * b) {
            report.violations.push(r);
        }
    }
    Ok(report)
}

/// Chained sign-phase bounds along the recorded steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseCurve {
    pub bound: Vec<f64>,
    /// Phase of each row, from the signal-to-noise ratio of the mean iterate.
    pub phase: Vec<u8>,
    /// First time the mean iterate left the saturated phase.
    pub exit_time: Option<f64>,
    /// Longest stay in the saturated phase allowed by the bound.
    pub t_star: f64,
    pub constants: PhaseConstants,
    /// Some phase-2 segment used a negative additive constant.
    pub negative_additive: bool,
}

/// Classify each row by `Y = √B ∂f(x̄)/σ` and chain the phase bounds: each
/// segment starts from the previous segment's bound at the switch time.
/// Phases never move backwards.
pub fn phase_bound_curve(stats: &EnsembleStats, exp: &Experiment, pc: &PhaseConstants) -> Result<PhaseCurve> {
    let d = exp.landscape.dim;
    let coords: Vec<usize> = (0..d).map(|j| stats.column(&format!("x{j}"))).collect::<Result<_>>()?;
    let p0 = BoundParams::from_cluster(exp.kind, &exp.landscape, &exp.cluster)?;
    let rb = (exp.cluster.batch as f64).sqrt();
    let times = stats.times();
    let mut curve = PhaseCurve {
        bound: Vec::with_capacity(times.len()),
        phase: Vec::with_capacity(times.len()),
        exit_time: None,
        t_star: phase1_exit_time(&p0),
        constants: *pc,
        negative_additive: false,
    };
    let (mut phase, mut t0, mut p) = (1u8, 0.0, p0.clone());
    for (r, &t) in times.iter().enumerate() {
        let x: Vec<f64> = coords.iter().map(|&c| stats.mean[c][r]).collect();
        let g = exp.landscape.gradient(&x)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for m in &exp.cluster.noise {
            for j in 0..d {
                let y = rb * g[j].abs() / m.scale[j];
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        let now = if lo > pc.psi { 1 } else if hi < 1.0 { 3 } else { 2 };
        if now > phase {
            let carried = dsignsgd_phase_bound(t - t0, phase, &p, pc)?.value;
            if phase == 1 {
                curve.exit_time = Some(t);
            }
            phase = now;
            t0 = t;
            p.s0 = carried;
        }
        let b = dsignsgd_phase_bound(t - t0, phase, &p, pc)?;
        curve.negative_additive |= b.negative_additive;
        curve.bound.push(b.value);
        curve.phase.push(phase);
    }
    Ok(curve)
}

/// The analytic bound selected by the spec's comparison block.
pub fn bound_curve(stats: &EnsembleStats, exp: &Experiment) -> Result<(Vec<f64>, Option<PhaseCurve>)> {
    let cmp = exp.spec.comparison.as_ref().ok_or_else(|| config_err("comparison", "spec has no comparison block"))?;
    let kind = cmp.bound.ok_or_else(|| config_err("comparison.bound", "no bound selected"))?;
    let p = BoundParams::from_cluster(exp.kind, &exp.landscape, &exp.cluster)?;
    let times = stats.times();
    match kind {
        BoundKind::DsgdPl => Ok((times.iter().map(|&t| dsgd_pl_bound(t, &p)).collect(), None)),
        BoundKind::DcsgdPl => Ok((times.iter().map(|&t| dcsgd_pl_bound(t, &p)).collect::<Result<_>>()?, None)),
        BoundKind::DsignsgdPhases => {
            let nu = exp.cluster.noise[0].dof().ok_or_else(|| config_err("noise", "sign phases need a noise law"))?;
            let pc = phase_constants(nu, cmp.epsilon)?;
            let curve = phase_bound_curve(stats, exp, &pc)?;
            Ok((curve.bound.clone(), Some(curve)))
        }
    }
}

/// Moments predicted for `exp` at time `t` on a diagonal quadratic.
pub fn predicted_moments(exp: &Experiment, t: f64) -> Result<Moments> {
    let h = match &exp.landscape.kind {
        LandscapeKind::Quadratic { h: Hessian::Diagonal(h) } => h.clone(),
        _ => return Err(Error::Unsupported("stationary moments need a diagonal quadratic".into())),
    };
    let c = &exp.cluster;
    let d = h.len();
    match exp.kind {
        OptimizerKind::Dsgd | OptimizerKind::Dcsgd => {
            let ks: Vec<usize> = match exp.kind {
                OptimizerKind::Dsgd => vec![d],
                _ => c
                    .compressors
                    .iter()
                    .map(|comp| match comp {
                        Compressor::Identity => Ok(d),
                        Compressor::RandK { k } => Ok(*k),
                        other => Err(Error::Unsupported(format!("no stationary moments for {other:?}"))),
                    })
                    .collect::<Result<_>>()?,
            };
            let cov: Vec<Vec<f64>> = c
                .noise
                .iter()
                .map(|m| m.covariance_diag().ok_or_else(|| Error::ModelUnavailable("infinite variance".into())))
                .collect::<Result<_>>()?;
            let first = cov[0][0];
            if ks.iter().any(|&k| k != ks[0]) || cov.iter().flatten().any(|&v| (v - first).abs() > 1e-15 * first.abs()) {
                return Err(Error::Unsupported("stationary moments need homogeneous isotropic noise and compression".into()));
            }
            dcsgd_stationary_cov(t, &h, ks[0], d, first / c.batch as f64, c.eta, c.agents, &c.x0)
        }
        OptimizerKind::DSignSgd => {
            let nu = c.noise[0].dof().ok_or_else(|| config_err("noise", "sign dynamics need a noise law"))?;
            if c.noise.iter().any(|m| m.dof() != Some(nu)) {
                return Err(Error::Unsupported("agents must share the degrees of freedom".into()));
            }
            let sigma: Vec<Vec<f64>> = c.noise.iter().map(|m| m.scale.clone()).collect();
            dsignsgd_stationary_cov(t, &h, &sigma, nu, c.eta, c.agents, c.batch, &c.x0)
        }
        other => Err(Error::Unsupported(format!("no stationary moments for {}", other.label()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryReport {
    pub empirical: Vec<f64>,
    pub predicted: Vec<f64>,
    pub rel_err: Vec<f64>,
    pub max_rel_err: f64,
    pub rel_tol: f64,
}

impl StationaryReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.rel_tol
    }
}

/// Tail-window coordinate variances against the predicted variances
/// averaged over the same window.
pub fn stationary_check(stats: &EnsembleStats, exp: &Experiment, rel_tol: f64, window: f64) -> Result<StationaryReport> {
    let d = exp.landscape.dim;
    let rows = stats.tail_rows(window);
    let times = stats.times();
    let mut predicted = vec![0.0; d];
    for r in rows.clone() {
        let m = predicted_moments(exp, times[r])?;
        for j in 0..d {
            predicted[j] += m.var[j] / rows.len() as f64;
        }
    }
    let mut empirical = Vec::with_capacity(d);
    let mut rel_err = Vec::with_capacity(d);
    for (j, &want) in predicted.iter().enumerate() {
        let got = stats.tail_var(stats.column(&format!("x{j}"))?, window);
        empirical.push(got);
        rel_err.push(if want > 0.0 { (got - want).abs() / want } else { (got - want).abs() });
    }
    let max_rel_err = rel_err.iter().copied().fold(0.0, f64::max);
    Ok(StationaryReport { empirical, predicted, rel_err, max_rel_err, rel_tol })
}

#[cfg(test)]
mod tests {
    use super::super::ensemble::run_ensemble;
    use super::super::spec::ExperimentSpec;
    use super::*;

    fn exp(noise: &str) -> Experiment {
        let text = format!(
            r#"{{"schema": 1, "name": "t",
            "landscape": {{"kind": "quadratic", "hessian": {{"isotropic": {{"dim": 2, "scale": 1.0}}}}}},
            "optimizer": "dsgd",
            "cluster": {{"agents": 2, "eta": 0.1, "steps": 40, "x0": 0.0}},
            "noise": {noise}, "paths": 64,
            "observables": ["loss_gap", "coord_var"],
            "comparison": {{"bound": "dsgd-pl"}}}}"#
        );
        ExperimentSpec::from_json(&text, "t").unwrap().resolve().unwrap()
    }

    #[test]
    fn infinite_bound_never_violated() {
        let e = exp(r#"{"kind": "gaussian", "sigma": 1.0}"#);
        let st = run_ensemble(&e).unwrap();
        let r = bound_check(&st, "loss_gap", &vec![f64::INFINITY; st.steps.len()], 1.0).unwrap();
        assert!(r.pass());
    }

    #[test]
    fn halved_bound_is_violated() {
        let mut e = exp(r#"{"kind": "gaussian", "sigma": 1.0}"#);
        e.cluster.x0 = vec![1.0, 1.0];
        e.spec.paths = 500;
        let st = run_ensemble(&e).unwrap();
        let (b, _) = bound_curve(&st, &e).unwrap();
        let half: Vec<f64> = b.iter().map(|v| 0.5 * v).collect();
        assert!(!bound_check(&st, "loss_gap", &half, 1.0).unwrap().pass());
    }

    #[test]
    fn zero_noise_stationary() {
        let e = exp(r#"{"kind": "none"}"#);
        let st = run_ensemble(&e).unwrap();
        let r = stationary_check(&st, &e, 1e-12, 0.1).unwrap();
        assert!(r.pass(), "{r:?}");
        assert_eq!(r.predicted, vec![0.0, 0.0]);
    }
}
