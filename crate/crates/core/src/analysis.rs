//! Closed-form evaluators: PL bounds, non-convex certificates, learning-rate
//! thresholds, scaling rules and stationary moments.
//!
//! Trace bounds `𝓛_σᵢ` are stored per sample (`B = 1`); every formula divides
//! by the batch size itself.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{config_err, Error, Result};
use crate::landscapes::Landscape;
use crate::noise::trace_bound;
use crate::optimizers::{ClusterConfig, OptimizerKind};
use crate::specfun::{ell_nu, Dof, PhaseConstants};

/// Landscape constants and run hyperparameters feeding the bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub mu: f64,
    pub l: f64,
    pub l_tau: f64,
    /// Per-agent noise trace bounds at `B = 1`.
    pub l_sigma: Vec<f64>,
    /// Per-agent compression constants.
    pub omega: Vec<f64>,
    /// Per-agent largest noise scale.
    pub sigma_max: Vec<f64>,
    pub eta: f64,
    pub batch: usize,
    pub agents: usize,
    pub dim: usize,
    pub s0: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl BoundParams {
    /// Constants of `landscape` and the hyperparameters of `cfg`.
    pub fn from_cluster(kind: OptimizerKind, landscape: &Landscape, cfg: &ClusterConfig) -> Result<BoundParams> {
        cfg.validate(kind, landscape.dim)?;
        let missing = |what: &str| Error::Unsupported(format!("landscape has no known {what}"));
        let omega = match kind {
            OptimizerKind::Dcsgd => cfg
                .compressors
                .iter()
                .map(|c| c.omega(landscape.dim).ok_or_else(|| Error::Contract(format!("{c:?} has no ω"))))
                .collect::<Result<Vec<_>>>()?,
            _ => vec![0.0; cfg.agents],
        };
        Ok(BoundParams {
            mu: landscape.mu.ok_or_else(|| missing("μ"))?,
            l: landscape.l_smooth.ok_or_else(|| missing("L"))?,
            l_tau: landscape.l_tau.ok_or_else(|| missing("Hessian trace bound"))?,
            l_sigma: cfg.noise.iter().map(|m| trace_bound(m, 1)).collect::<Result<_>>()?,
            omega,
            sigma_max: cfg.noise.iter().map(|m| m.sigma_max()).collect(),
            eta: cfg.eta,
            batch: cfg.batch,
            agents: cfg.agents,
            dim: landscape.dim,
            s0: landscape.loss_gap(&cfg.x0)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.agents;
        if n == 0 || self.l_sigma.len() != n || self.omega.len() != n || self.sigma_max.len() != n {
            return Err(config_err("agents", "per-agent lists must have one entry per agent"));
        }
        if !(self.mu > 0.0 && self.l > 0.0 && self.eta > 0.0 && self.batch > 0) {
            return Err(config_err("bound", "μ, L, η and B must be positive"));
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.agents as f64
    }

    fn b(&self) -> f64 {
        self.batch as f64
    }

    /// `ω̄`.
    pub fn omega_bar(&self) -> f64 {
        mean(&self.omega)
    }

    /// `𝓛̄_σ`.
    pub fn l_sigma_bar(&self) -> f64 {
        mean(&self.l_sigma)
    }

    /// Mean of `ωᵢ 𝓛_σᵢ`.
    pub fn omega_l_bar(&self) -> f64 {
        self.omega.iter().zip(&self.l_sigma).map(|(w, l)| if *w == 0.0 { 0.0 } else { w * l }).sum::<f64>() / self.n()
    }

    /// Harmonic mean of `σ_max,i^j`.
    pub fn sigma_h(&self, j: i32) -> f64 {
        self.n() / self.sigma_max.iter().map(|s| s.powi(-j)).sum::<f64>()
    }
}

/// DSGD loss-gap bound under PL at time `t`.
pub fn dsgd_pl_bound(t: f64, p: &BoundParams) -> f64 {
    let e = (-2.0 * p.mu * t).exp();
    p.s0 * e + (1.0 - e) * dsgd_asymptote(p)
}

pub fn dsgd_asymptote(p: &BoundParams) -> f64 {
    p.eta * p.l * p.l_sigma_bar() / (4.0 * p.mu * p.b() * p.n())
}

/// `Δ = 1 − ηL²ω̄/(2μN)`.
pub fn dcsgd_delta(p: &BoundParams) -> f64 {
    1.0 - p.eta * p.l * p.l * p.omega_bar() / (2.0 * p.mu * p.n())
}

pub fn dcsgd_asymptote(p: &BoundParams) -> Result<f64> {
    let delta = dcsgd_delta(p);
    if delta <= 0.0 {
        return Err(Error::DivergentRegime { delta });
    }
    Ok(p.eta * p.l * (p.l_sigma_bar() + p.omega_l_bar()) / (4.0 * p.mu * p.b() * p.n() * delta))
}

/// DCSGD loss-gap bound under PL; errors when `Δ ≤ 0`.
pub fn dcsgd_pl_bound(t: f64, p: &BoundParams) -> Result<f64> {
    let a = dcsgd_asymptote(p)?;
    let e = (-2.0 * p.mu * dcsgd_delta(p) * t).exp();
    Ok(p.s0 * e + (1.0 - e) * a)
}

/// Largest stable DCSGD learning rate, `2μN/(L²ω̄)`; `∞` without compression.
pub fn lr_threshold_dcsgd(p: &BoundParams) -> f64 {
    let w = p.omega_bar();
    if w == 0.0 {
        f64::INFINITY
    } else {
        2.0 * p.mu * p.n() / (p.l * p.l * w)
    }
}

/// Value of a DSignSGD phase bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseBound {
    pub value: f64,
    /// Exponential rate multiplier; `None` in phase 1.
    pub delta: Option<f64>,
    pub asymptote: f64,
    /// Phase 2 only: the additive constant `𝓛_τ − μdq̂²` is negative.
    pub negative_additive: bool,
}

/// Longest possible stay in the saturated phase, `2√(S₀/μ)`.
pub fn phase1_exit_time(p: &BoundParams) -> f64 {
    2.0 * (p.s0 / p.mu).sqrt()
}

/// Rate multiplier `Δ` of phase 2 (slope `m`) or phase 3 (slope `ℓ`).
pub fn phase_delta(phase: u8, p: &BoundParams, pc: &PhaseConstants) -> Result<f64> {
    let slope = match phase {
        2 => pc.m,
        3 => pc.ell,
        _ => return Err(config_err("phase", format!("Δ is defined for phases 2 and 3, got {phase}"))),
    };
    Ok(slope * p.b().sqrt() / p.sigma_h(1) + p.eta * p.b() * p.mu * slope * slope / (2.0 * p.n() * p.sigma_h(2)))
}

/// DSignSGD loss-gap bound in `phase` for strongly convex losses.
pub fn dsignsgd_phase_bound(t: f64, phase: u8, p: &BoundParams, pc: &PhaseConstants) -> Result<PhaseBound> {
    if phase == 1 {
        let t_star = phase1_exit_time(p);
        let value = if t >= t_star { 0.0 } else { 0.25 * (p.mu.sqrt() * t - 2.0 * p.s0.sqrt()).powi(2) };
        return Ok(PhaseBound { value, delta: None, asymptote: 0.0, negative_additive: false });
    }
    let delta = phase_delta(phase, p, pc)?;
    let additive = match phase {
        2 => p.l_tau - p.mu * p.dim as f64 * pc.q_hat * pc.q_hat,
        _ => p.l_tau,
    };
    let rate = 2.0 * p.mu * delta;
    let asymptote = p.eta * additive / (2.0 * p.n()) / rate;
    let e = (-rate * t).exp();
    if additive < 0.0 {
        log::warn!("phase 2 additive constant is negative ({additive:e})");
    }
    Ok(PhaseBound { value: p.s0 * e + asymptote * (1.0 - e), delta: Some(delta), asymptote, negative_additive: additive < 0.0 })
}

/// Learning-rate schedule `η_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Schedule {
    Constant { value: f64 },
    /// `c/(1 + t)^p`, `½ < p < 1`.
    PowerDecay { c: f64, p: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scheduler {
    pub kind: Schedule,
    pub horizon: f64,
}

impl Scheduler {
    pub fn new(kind: Schedule, horizon: f64) -> Result<Scheduler> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(config_err("scheduler.horizon", "horizon must be positive"));
        }
        match kind {
            Schedule::Constant { value } if !(value > 0.0) => Err(config_err("scheduler.value", "rate must be positive")),
            Schedule::PowerDecay { c, p } if !(c > 0.0 && p > 0.5 && p < 1.0) => {
                Err(config_err("scheduler.p", format!("need c > 0 and ½ < p < 1, got c={c}, p={p}")))
            }
            _ => Ok(Scheduler { kind, horizon }),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self.kind {
            Schedule::Constant { value } => value,
            Schedule::PowerDecay { c, p } => c / (1.0 + t).powf(p),
        }
    }

    /// Largest rate over the horizon.
    pub fn max_rate(&self) -> f64 {
        self.rate(0.0)
    }

    /// `φⁱ_T = ∫₀ᵀ η_sⁱ ds` in closed form.
    pub fn phi(&self, i: i32) -> f64 {
        let t = self.horizon;
        match self.kind {
            Schedule::Constant { value } => value.powi(i) * t,
            Schedule::PowerDecay { c, p } => {
                let e = 1.0 - p * i as f64;
                if e.abs() < 1e-12 {
                    c.powi(i) * (1.0 + t).ln()
                } else {
                    c.powi(i) * ((1.0 + t).powf(e) - 1.0) / e
                }
            }
        }
    }

    /// `φⁱ_T` by adaptive Simpson quadrature.
    pub fn phi_quadrature(&self, i: i32) -> f64 {
        adaptive_simpson(&|s| self.rate(s).powi(i), 0.0, self.horizon, 1e-9)
    }
}

/// Adaptive Simpson with relative tolerance `rel`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    let tol = rel * whole.abs().max(f64::MIN_POSITIVE);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    Dsgd,
    Dcsgd,
    DSignSgdPhase1,
    DSignSgdPhase2,
    DSignSgdPhase3,
}

/// Bound on a weighted time average of gradient norms for smooth,
/// possibly non-convex losses.
///
/// The certified quantity is `l2_coeff · 𝔼_w‖∇f‖₂² + l1_coeff · 𝔼_w‖∇f‖₁`,
/// averages taken over times drawn with density [`Certificate::weight`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub rhs: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub l2_coeff: f64,
    pub l1_coeff: f64,
    /// Weight tilt `c`: density `(η_s − c η_s²)/(φ¹ − c φ²)`.
    pub tilt: f64,
    pub scheduler: Scheduler,
}

impl Certificate {
    /// Sampling density of the random time at `s`.
    pub fn weight(&self, s: f64) -> f64 {
        let r = self.scheduler.rate(s);
        (r - self.tilt * r * r) / (self.phi1 - self.tilt * self.phi2)
    }

    /// `φ²/φ¹`, the non-vanishing floor under a constant schedule.
    pub fn floor_ratio(&self) -> f64 {
        self.phi2 / self.phi1
    }
}

pub fn nonconvex_certificate(kind: CertificateKind, sched: &Scheduler, p: &BoundParams, pc: Option<&PhaseConstants>) -> Result<Certificate> {
    let (phi1, phi2) = (sched.phi(1), sched.phi(2));
    let (n, b) = (p.n(), p.b());
    let cert = |rhs, l2_coeff, l1_coeff, tilt| Certificate { kind, rhs, phi1, phi2, l2_coeff, l1_coeff, tilt, scheduler: *sched };
    let need_pc = || pc.ok_or_else(|| config_err("nu", "phase constants required for DSignSGD certificates"));
    let sign_tail = |slope: f64| p.sigma_h(1) / (phi1 * slope * b.sqrt()) * (p.s0 + p.eta * p.l * p.dim as f64 * phi2 / (2.0 * n));
    Ok(match kind {
        CertificateKind::Dsgd => cert(p.s0 / phi1 + p.eta * p.l * p.l_sigma_bar() / (2.0 * b * n) * phi2 / phi1, 1.0, 0.0, 0.0),
        CertificateKind::Dcsgd => {
            let c = p.eta * p.l * p.omega_bar() / (2.0 * n);
            if c > 0.0 && sched.max_rate() >= 1.0 / c {
                return Err(config_err(
                    "scheduler",
                    format!("schedule must stay below 2N/(ηLω̄) = {:e}, starts at {:e}", 1.0 / c, sched.max_rate()),
                ));
            }
            let pre = 1.0 / (1.0 - c * phi2 / phi1);
            let rhs = pre * (p.s0 / phi1 + phi2 / phi1 * p.eta * p.l * (p.l_sigma_bar() + p.omega_l_bar()) / (2.0 * b * n));
            cert(rhs, 1.0, 0.0, c)
        }
        CertificateKind::DSignSgdPhase1 => cert(p.s0 / phi1, 0.0, 1.0, 0.0),
        CertificateKind::DSignSgdPhase2 => {
            let pc = need_pc()?;
            cert(sign_tail(pc.m), 1.0, pc.q_hat * p.sigma_h(1) / (pc.m * b.sqrt()), 0.0)
        }
        CertificateKind::DSignSgdPhase3 => cert(sign_tail(need_pc()?.ell), 1.0, 0.0, 0.0),
    })
}

/// Multipliers applied to `(η, B, ω, N)`: `(κη, δB, βω, αN)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Factors {
    pub kappa: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Factors {
    fn default() -> Factors {
        Factors { kappa: 1.0, delta: 1.0, alpha: 1.0, beta: 1.0 }
    }
}

/// Scaling rules that keep the asymptotic loss of a reference run.
///
/// DCSGD rules compare a compressed run against uncompressed DSGD at the
/// reference `(η, B, N)`. The `*Exact` forms keep the `ηL²ω̄/(2μN)` and
/// heterogeneity corrections; the plain forms drop them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalingRule {
    /// `κ/(αδ) = 1`.
    Dsgd,
    /// `α = 1 + βω` (`κ = δ = 1`).
    DcsgdAgentsCompression { exact: bool },
    /// `α = κ(1 + ω)` (`δ = β = 1`).
    DcsgdAgentsLr { exact: bool },
    /// `α = (1 + ω)/δ` (`κ = β = 1`).
    DcsgdAgentsBatch { exact: bool },
    /// `κ = 1/(1 + βω)` (`α = δ = 1`).
    DcsgdLrCompression { exact: bool },
    /// `δ = 1 + βω` (`κ = α = 1`).
    DcsgdBatchCompression { exact: bool },
    /// `κ = δ/(1 + ω)` (`α = β = 1`).
    DcsgdLrBatch { exact: bool },
    /// `κ/(α√δ) = 1`.
    DSignSgd,
    /// `α = (1/√δ)(1 + (K₂/K₁)(1 − δ))` (`κ = 1`).
    DSignSgdAgentsBatch,
    /// `α = κ` (`δ = 1`).
    DSignSgdAgentsLr,
    /// `κ = √δ/(1 + (K₂/K₁)(1 − δ))` (`α = 1`).
    DSignSgdLrBatch,
}

const RULE_NAMES: &[(&str, ScalingRule)] = &[
    ("dsgd", ScalingRule::Dsgd),
    ("dcsgd-agents-compression", ScalingRule::DcsgdAgentsCompression { exact: false }),
    ("dcsgd-agents-lr", ScalingRule::DcsgdAgentsLr { exact: false }),
    ("dcsgd-agents-batch", ScalingRule::DcsgdAgentsBatch { exact: false }),
    ("dcsgd-lr-compression", ScalingRule::DcsgdLrCompression { exact: false }),
    ("dcsgd-batch-compression", ScalingRule::DcsgdBatchCompression { exact: false }),
    ("dcsgd-lr-batch", ScalingRule::DcsgdLrBatch { exact: false }),
    ("dcsgd-agents-compression-exact", ScalingRule::DcsgdAgentsCompression { exact: true }),
    ("dcsgd-agents-lr-exact", ScalingRule::DcsgdAgentsLr { exact: true }),
    ("dcsgd-agents-batch-exact", ScalingRule::DcsgdAgentsBatch { exact: true }),
    ("dcsgd-lr-compression-exact", ScalingRule::DcsgdLrCompression { exact: true }),
    ("dcsgd-batch-compression-exact", ScalingRule::DcsgdBatchCompression { exact: true }),
    ("dcsgd-lr-batch-exact", ScalingRule::DcsgdLrBatch { exact: true }),
    ("dsignsgd", ScalingRule::DSignSgd),
    ("dsignsgd-agents-batch", ScalingRule::DSignSgdAgentsBatch),
    ("dsignsgd-agents-lr", ScalingRule::DSignSgdAgentsLr),
    ("dsignsgd-lr-batch", ScalingRule::DSignSgdLrBatch),
];

impl ScalingRule {
    pub fn all() -> impl Iterator<Item = ScalingRule> {
        RULE_NAMES.iter().map(|(_, r)| *r)
    }

    pub fn name(self) -> &'static str {
        RULE_NAMES.iter().find(|(_, r)| *r == self).map(|(n, _)| *n).expect("every rule is named")
    }

    /// Optimizer whose asymptote the rule preserves.
    pub fn optimizer(self) -> OptimizerKind {
        match self {
            ScalingRule::Dsgd => OptimizerKind::Dsgd,
            ScalingRule::DSignSgd | ScalingRule::DSignSgdAgentsBatch | ScalingRule::DSignSgdAgentsLr | ScalingRule::DSignSgdLrBatch => {
                OptimizerKind::DSignSgd
            }
            _ => OptimizerKind::Dcsgd,
        }
    }

    /// Factors the rule pins to 1.
    fn fixed(self) -> &'static [&'static str] {
        use ScalingRule::*;
        match self {
            Dsgd | DSignSgd => &["beta"],
            DcsgdAgentsCompression { .. } => &["kappa", "delta"],
            DcsgdAgentsLr { .. } => &["delta", "beta"],
            DcsgdAgentsBatch { .. } => &["kappa", "beta"],
            DcsgdLrCompression { .. } => &["alpha", "delta"],
            DcsgdBatchCompression { .. } => &["kappa", "alpha"],
            DcsgdLrBatch { .. } => &["alpha", "beta"],
            DSignSgdAgentsBatch => &["kappa", "beta"],
            DSignSgdAgentsLr => &["delta", "beta"],
            DSignSgdLrBatch => &["alpha", "beta"],
        }
    }
}

impl fmt::Display for ScalingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<ScalingRule> {
        RULE_NAMES.iter().find(|(n, _)| *n == s).map(|(_, r)| *r).ok_or_else(|| {
            let names: Vec<&str> = RULE_NAMES.iter().map(|(n, _)| *n).collect();
            config_err("rule", format!("unknown rule `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// `(K₁, K₂)` with `K₁ = ℓ√B/σ_H,1` and `K₂ = ηℓ²Bμ/(2Nσ_H,2)`.
pub fn sign_rate_constants(p: &BoundParams, nu: Dof) -> Result<(f64, f64)> {
    let ell = ell_nu(nu)?;
    Ok((ell * p.b().sqrt() / p.sigma_h(1), p.eta * ell * ell * p.b() * p.mu / (2.0 * p.n() * p.sigma_h(2))))
}

/// `|LHS − RHS|` of `rule` at `factors`; zero when the scaled run keeps the
/// reference asymptote.
pub fn scaling_check(rule: ScalingRule, f: &Factors, p: &BoundParams, nu: Option<Dof>) -> Result<f64> {
    for name in rule.fixed() {
        let v = match *name {
            "kappa" => f.kappa,
            "delta" => f.delta,
            "alpha" => f.alpha,
            _ => f.beta,
        };
        if v != 1.0 {
            return Err(config_err(*name, format!("rule `{rule}` fixes {name} = 1, got {v}")));
        }
    }
    if !(f.kappa > 0.0 && f.delta > 0.0 && f.alpha > 0.0 && f.beta >= 0.0) {
        return Err(config_err("factors", "scaling factors must be positive"));
    }
    let Factors { kappa: k, delta: d, alpha: a, beta: b } = *f;
    use ScalingRule::*;
    let residual = match rule {
        Dsgd => (k / (a * d) - 1.0).abs(),
        DSignSgd => (k / (a * d.sqrt()) - 1.0).abs(),
        DSignSgdAgentsLr => (a - k).abs(),
        DSignSgdAgentsBatch | DSignSgdLrBatch => {
            let nu = nu.ok_or_else(|| config_err("nu", "DSignSGD rules need the degrees of freedom"))?;
            let (k1, k2) = sign_rate_constants(p, nu)?;
            let r = 1.0 + k2 / k1 * (1.0 - d);
            if rule == DSignSgdAgentsBatch {
                (a - r / d.sqrt()).abs()
            } else {
                (k - d.sqrt() / r).abs()
            }
        }
        _ => {
            let exact = matches!(
                rule,
                DcsgdAgentsCompression { exact: true }
                    | DcsgdAgentsLr { exact: true }
                    | DcsgdAgentsBatch { exact: true }
                    | DcsgdLrCompression { exact: true }
                    | DcsgdBatchCompression { exact: true }
                    | DcsgdLrBatch { exact: true }
            );
            // ω-to-noise ratio and the stability correction
            let (ratio, c) = if exact {
                (p.omega_l_bar() / p.l_sigma_bar(), p.eta * p.l * p.l * p.omega_bar() / (2.0 * p.mu * p.n()))
            } else {
                (p.omega_bar(), 0.0)
            };
            let g = 1.0 + b * ratio;
            match rule {
                DcsgdAgentsCompression { .. } | DcsgdAgentsLr { .. } | DcsgdAgentsBatch { .. } => (a - (k * g / d + k * b * c)).abs(),
                DcsgdLrCompression { .. } | DcsgdLrBatch { .. } => (k - a * d / (g + d * b * c)).abs(),
                _ => (d - k * g / (a - k * b * c)).abs(),
            }
        }
    };
    Ok(residual)
}

/// Asymptotic loss gap of `kind` run at `(κη, δB, βω, αN)`.
pub fn predicted_asymptote(kind: OptimizerKind, f: &Factors, p: &BoundParams, nu: Option<Dof>) -> Result<f64> {
    let Factors { kappa: k, delta: d, alpha: a, beta: b } = *f;
    let (eta, batch, n) = (k * p.eta, d * p.b(), a * p.n());
    match kind {
        OptimizerKind::Dsgd => Ok(eta * p.l * p.l_sigma_bar() / (4.0 * p.mu * batch * n)),
        OptimizerKind::Dcsgd => {
            let delta = 1.0 - eta * p.l * p.l * b * p.omega_bar() / (2.0 * p.mu * n);
            if delta <= 0.0 {
                return Err(Error::DivergentRegime { delta });
            }
            Ok(eta * p.l * (p.l_sigma_bar() + b * p.omega_l_bar()) / (4.0 * p.mu * batch * n * delta))
        }
        OptimizerKind::DSignSgd => {
            let ell = ell_nu(nu.ok_or_else(|| config_err("nu", "DSignSGD asymptotes need the degrees of freedom"))?)?;
            let delta = ell * batch.sqrt() / p.sigma_h(1) + eta * batch * p.mu * ell * ell / (2.0 * n * p.sigma_h(2));
            Ok(eta * p.l_tau / (4.0 * p.mu * n * delta))
        }
        other => Err(Error::Unsupported(format!("no asymptote for {}", other.label()))),
    }
}

/// Mean and per-coordinate variance at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Moments of the DCSGD SDE with Rand-k on `½ xᵀ diag(h) x`.
///
/// `sigma_bar_sq` is the per-coordinate noise variance of one agent's
/// minibatch gradient.
#[allow(clippy::too_many_arguments)]
pub fn dcsgd_stationary_cov(t: f64, h: &[f64], k: usize, d: usize, sigma_bar_sq: f64, eta: f64, n: usize, x0: &[f64]) -> Result<Moments> {
    if h.len() != d || x0.len() != d {
        return Err(Error::Dimension { expected: d, got: h.len().min(x0.len()) });
    }
    if k == 0 || k > d {
        return Err(config_err("k", format!("k must lie in 1..={d}")));
    }
    let r = d as f64 / k as f64;
    let nf = n as f64;
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for j in 0..d {
        let m = 2.0 * h[j] * (1.0 - eta * h[j] * (r - 1.0) / (2.0 * nf));
        if !(m > 0.0) {
            return Err(Error::Stability(format!("M = {m:e} ≤ 0 in coordinate {j}; step above the stationary threshold")));
        }
        let em = (-m * t).exp();
        let mu_t = (-h[j] * t).exp() * x0[j];
        let second = em * x0[j] * x0[j] + eta / nf * r * sigma_bar_sq / m * (1.0 - em);
        mean.push(mu_t);
        var.push((second - mu_t * mu_t).max(0.0));
    }
    Ok(Moments { mean, var })
}

/// Moments of the linearized DSignSGD SDE on `½ xᵀ diag(h) x`.
///
/// `sigma[i][j]` is agent `i`'s noise scale in coordinate `j`.
#[allow(clippy::too_many_arguments)]
pub fn dsignsgd_stationary_cov(t: f64, h: &[f64], sigma: &[Vec<f64>], nu: Dof, eta: f64, n: usize, batch: usize, x0: &[f64]) -> Result<Moments> {
    let d = h.len();
    if x0.len() != d || sigma.len() != n || sigma.iter().any(|s| s.len() != d) {
        return Err(Error::Dimension { expected: d, got: x0.len() });
    }
    if sigma.iter().flatten().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain { func: "dsignsgd_stationary_cov", msg: "noise scales must be positive".into() });
    }
    let ell = ell_nu(nu)?;
    let (nf, bf) = (n as f64, batch as f64);
    let half = eta / (2.0 * nf);
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for j in 0..d {
        let s1 = bf.sqrt() * sigma.iter().map(|s| 1.0 / s[j]).sum::<f64>() / nf;
        let s2 = bf * sigma.iter().map(|s| 1.0 / (s[j] * s[j])).sum::<f64>() / nf;
        let lin = ell * s1 * h[j];
        let mt = (-2.0 * (lin + half * ell * ell * s2 * h[j] * h[j]) * t).exp();
        let e2 = (-2.0 * lin * t).exp();
        let limit = half / (ell + half * ell * ell * s2 * h[j] / s1) / (h[j] * s1);
        mean.push((-lin * t).exp() * x0[j]);
        var.push(((mt - e2) * x0[j] * x0[j] + limit * (1.0 - mt)).max(0.0));
    }
    Ok(Moments { mean, var })
}
