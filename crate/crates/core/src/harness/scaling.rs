//! Scaling-rule checks: the analytic residual, the predicted asymptotes, and
//! optionally the tail losses of a reference and a rescaled ensemble.

use serde::Serialize;

use super::ensemble::run_ensemble;
use super::spec::{CompressorSpec, ExperimentSpec};
use crate::analysis::{predicted_asymptote, scaling_check, BoundParams, Factors, ScalingRule};
use crate::error::{config_err, Result};
use crate::optimizers::OptimizerKind;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub rule: String,
    pub factors: Factors,
    pub residual: f64,
    pub tolerance: f64,
    pub reference_asymptote: f64,
    /// `None` when the rescaled run sits in a divergent regime.
    pub scaled_asymptote: Option<f64>,
    pub empirical: Option<EmpiricalMatch>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMatch {
    pub reference_tail: f64,
    pub scaled_tail: f64,
    /// `|scaled − reference| / reference`.
    pub rel_diff: f64,
    pub match_tol: f64,
    pub reference_diverged: usize,
    pub scaled_diverged: usize,
}

impl ScalingReport {
    pub fn rule_holds(&self) -> bool {
        self.residual <= self.tolerance
    }

    /// Rule satisfied and, when measured, the tail losses agree.
    pub fn pass(&self) -> bool {
        self.rule_holds() && self.empirical.as_ref().is_none_or(|e| e.rel_diff <= e.match_tol)
    }
}

fn integral(v: f64, field: &str) -> Result<usize> {
    let r = v.round();
    if r < 1.0 || (v - r).abs() > 1e-9 * v.abs().max(1.0) {
        return Err(config_err(field, format!("scaled value {v} is not a positive integer")));
    }
    Ok(r as usize)
}

/// The run every rule is measured against: DSGD at the base `(η, B, N)` for
/// DCSGD rules, the base run itself otherwise.
pub fn reference_spec(spec: &ExperimentSpec, rule: ScalingRule) -> ExperimentSpec {
    let mut s = spec.clone();
    s.sweep = None;
    s.comparison = None;
    s.name = format!("{}-reference", spec.name);
    if rule.optimizer() == OptimizerKind::Dcsgd {
        s.optimizer = OptimizerKind::Dsgd;
        s.compressor = CompressorSpec::Identity;
    }
    s
}

/// The base spec at `(κη, δB, βω, αN)`, run for `steps/κ` (rounded) so the
/// time horizon is kept. Compression is rescaled through Rand-k's `k = d/(1+ω)`.
pub fn scaled_spec(spec: &ExperimentSpec, rule: ScalingRule, f: &Factors) -> Result<ExperimentSpec> {
    let mut s = spec.clone();
    s.sweep = None;
    s.comparison = None;
    s.name = format!("{}-scaled", spec.name);
    s.optimizer = rule.optimizer();
    let c = &mut s.cluster;
    c.eta *= f.kappa;
    c.batch = integral(c.batch as f64 * f.delta, "factors.delta")?;
    c.agents = integral(c.agents as f64 * f.alpha, "factors.alpha")?;
    c.steps = ((c.steps as f64 / f.kappa).round() as usize).max(1);
    if s.noise.per_agent.is_some() && f.alpha != 1.0 {
        return Err(config_err("noise.per_agent", "agent scaling needs homogeneous noise"));
    }
    if s.optimizer == OptimizerKind::Dcsgd && f.beta != 1.0 {
        let d = spec.landscape.build()?.dim as f64;
        let CompressorSpec::RandK { k } = spec.compressor else {
            return Err(config_err("compressor", "compression scaling needs rand-k"));
        };
        let omega = d / k as f64 - 1.0;
        s.compressor = CompressorSpec::RandK { k: integral(d / (1.0 + f.beta * omega), "factors.beta")? };
    }
    Ok(s)
}

/// Analytic residual of `rule` at `f` on the base spec, plus both predicted
/// asymptotes; with `verify`, also run both ensembles and compare tail losses.
pub fn scaling_report(spec: &ExperimentSpec, rule: ScalingRule, f: &Factors, tolerance: f64, match_tol: f64, verify: bool) -> Result<ScalingReport> {
    let mut base = spec.clone();
    base.sweep = None;
    base.optimizer = rule.optimizer();
    let exp = base.resolve()?;
    let p = BoundParams::from_cluster(exp.kind, &exp.landscape, &exp.cluster)?;
    let nu = exp.cluster.noise[0].dof();
    let residual = scaling_check(rule, f, &p, nu)?;
    let reference = reference_spec(&base, rule);
    let ref_exp = reference.resolve()?;
    let p_ref = BoundParams::from_cluster(ref_exp.kind, &ref_exp.landscape, &ref_exp.cluster)?;
    let reference_asymptote = predicted_asymptote(ref_exp.kind, &Factors::default(), &p_ref, nu)?;
    let scaled_asymptote = predicted_asymptote(exp.kind, f, &p, nu).ok();
    let scaled = scaled_spec(&base, rule, f)?;
    let scaled_exp = scaled.resolve()?;
    let empirical = if verify {
        let window = spec.comparison.as_ref().map_or(0.1, |c| c.window);
        let a = run_ensemble(&ref_exp)?;
        let b = run_ensemble(&scaled_exp)?;
        let reference_tail = a.tail_mean(a.column("loss_gap")?, window);
        let scaled_tail = b.tail_mean(b.column("loss_gap")?, window);
        Some(EmpiricalMatch {
            reference_tail,
            scaled_tail,
            rel_diff: (scaled_tail - reference_tail).abs() / reference_tail,
            match_tol,
            reference_diverged: a.diverged,
            scaled_diverged: b.diverged,
        })
    } else {
        None
    };
    Ok(ScalingReport {
        rule: rule.to_string(),
        factors: *f,
        residual,
        tolerance,
        reference_asymptote,
        scaled_asymptote,
        empirical,
    })
}
