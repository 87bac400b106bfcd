//! JSON experiment specs and their resolution into runnable objects.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::Factors;
use crate::compressors::Compressor;
use crate::error::{config_err, Error, Result};
use crate::landscapes::{Hessian, Landscape};
use crate::noise::{NoiseKind, NoiseModel};
use crate::optimizers::{ClusterConfig, Divergence, OptimizerKind};
use crate::sde::{dcsgd_sde, dsgd_sde, dsignsgd_sde, phase_sde, RandKCovariance, SdeModel};
use crate::specfun::{Dof, DEFAULT_EPSILON};

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment, as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub landscape: LandscapeSpec,
    pub optimizer: OptimizerKind,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub compressor: CompressorSpec,
    #[serde(default)]
    pub sde: SdeSpec,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub divergence: DivergenceSpec,
    /// CSV file name, relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

fn default_paths() -> usize {
    100
}

fn one() -> usize {
    1
}

fn default_observables() -> Vec<Observable> {
    vec![Observable::LossGap]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum HessianSpec {
    Diag(Vec<f64>),
    Dense(Vec<Vec<f64>>),
    Isotropic { dim: usize, scale: f64 },
}

impl HessianSpec {
    fn build(&self) -> Result<Hessian> {
        Ok(match self {
            HessianSpec::Diag(d) => Hessian::Diagonal(d.clone()),
            HessianSpec::Dense(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(config_err("landscape.hessian.dense", "matrix must be square"));
                }
                Hessian::Dense(nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            HessianSpec::Isotropic { dim, scale } => Hessian::Diagonal(vec![*scale; *dim]),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LandscapeSpec {
    Quadratic { hessian: HessianSpec },
    Rosenbrock {
        #[serde(default = "one_f")]
        a: f64,
        #[serde(default = "hundred")]
        b: f64,
    },
    Saddle { hessian: HessianSpec, lambda: f64, xi: f64 },
}

fn one_f() -> f64 {
    1.0
}

fn hundred() -> f64 {
    100.0
}

impl LandscapeSpec {
    pub fn build(&self) -> Result<Landscape> {
        match self {
            LandscapeSpec::Quadratic { hessian } => Landscape::quadratic(hessian.build()?),
            LandscapeSpec::Rosenbrock { a, b } => Landscape::rosenbrock(*a, *b),
            LandscapeSpec::Saddle { hessian, lambda, xi } => Landscape::embedded_saddle(hessian.build()?, *lambda, *xi),
        }
    }
}

/// A scalar broadcast to every coordinate, or an explicit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fill {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Fill {
    pub fn expand(&self, d: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            Fill::Scalar(v) => Ok(vec![*v; d]),
            Fill::Vector(v) if v.len() == d => Ok(v.clone()),
            Fill::Vector(v) => Err(config_err(field, format!("expected {d} entries, got {}", v.len()))),
        }
    }
}

impl Default for Fill {
    fn default() -> Fill {
        Fill::Scalar(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub agents: usize,
    pub eta: f64,
    #[serde(default = "one")]
    pub batch: usize,
    pub steps: usize,
    pub x0: Fill,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKindSpec {
    #[default]
    None,
    Gaussian,
    StudentT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKindSpec,
    #[serde(default)]
    pub sigma: Fill,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Dof>,
    /// Share one chi-square divisor across coordinates.
    #[serde(default = "yes")]
    pub spherical: bool,
    /// Per-agent scales, overriding `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_agent: Option<Vec<Fill>>,
}

fn yes() -> bool {
    true
}

impl Default for NoiseSpec {
    fn default() -> NoiseSpec {
        NoiseSpec { kind: NoiseKindSpec::None, sigma: Fill::default(), nu: None, spherical: true, per_agent: None }
    }
}

impl NoiseSpec {
    pub fn build(&self, d: usize, agents: usize) -> Result<Vec<NoiseModel>> {
        let kind = match self.kind {
            NoiseKindSpec::None => NoiseKind::None,
            NoiseKindSpec::Gaussian => NoiseKind::Gaussian,
            NoiseKindSpec::StudentT => NoiseKind::StudentT {
                nu: self.nu.ok_or_else(|| config_err("noise.nu", "Student-t noise needs `nu`"))?,
                spherical: self.spherical,
            },
        };
        if self.nu.is_some() && self.kind != NoiseKindSpec::StudentT {
            return Err(config_err("noise.nu", "`nu` only applies to student-t noise"));
        }
        let scales = match &self.per_agent {
            Some(list) if list.len() != agents => {
                return Err(config_err("noise.per_agent", format!("expected {agents} entries, got {}", list.len())))
            }
            Some(list) => list.iter().map(|f| f.expand(d, "noise.per_agent")).collect::<Result<Vec<_>>>()?,
            None => vec![self.sigma.expand(d, "noise.sigma")?; agents],
        };
        scales
            .into_iter()
            .map(|scale| match kind {
                NoiseKind::None => Ok(NoiseModel::none(d)),
                _ => NoiseModel { kind, scale }.validated(),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompressorSpec {
    #[default]
    Identity,
    RandK { k: usize },
    TopK { k: usize },
    Sign,
    NormalizedTopK { k: usize },
}

impl CompressorSpec {
    pub fn build(self) -> Compressor {
        match self {
            CompressorSpec::Identity => Compressor::Identity,
            CompressorSpec::RandK { k } => Compressor::RandK { k },
            CompressorSpec::TopK { k } => Compressor::TopK { k },
            CompressorSpec::Sign => Compressor::Sign,
            CompressorSpec::NormalizedTopK { k } => Compressor::NormalizedTopK { k },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandKCovSpec {
    #[default]
    ClosedForm,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    /// Integrate the SDE instead of running the discrete optimizer.
    #[serde(default)]
    pub enabled: bool,
    /// Integrator step; defaults to `η / substeps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Integrator steps per optimizer step.
    #[serde(default = "one")]
    pub substeps: usize,
    /// Use the saturated (1) or linearized (3) sign dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<u8>,
    #[serde(default)]
    pub randk_covariance: RandKCovSpec,
}

impl Default for SdeSpec {
    fn default() -> SdeSpec {
        SdeSpec { enabled: false, dt: None, substeps: 1, phase: None, randk_covariance: RandKCovSpec::ClosedForm }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    LossGap,
    GradL1,
    GradL2sq,
    /// Per-coordinate columns `x{j}`; the CSV carries mean and variance.
    CoordMean,
    CoordVar,
    /// Constant zero, a null test function.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSpec {
    #[serde(default = "ceiling")]
    pub ceiling: f64,
    /// Ceiling is a multiple of the initial loss gap.
    #[serde(default)]
    pub relative: bool,
    #[serde(default = "yes")]
    pub halt: bool,
    /// Leave diverged paths out of the means.
    #[serde(default = "yes")]
    pub exclude: bool,
}

fn ceiling() -> f64 {
    1e12
}

impl Default for DivergenceSpec {
    fn default() -> DivergenceSpec {
        DivergenceSpec { ceiling: ceiling(), relative: false, halt: true, exclude: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    DsgdPl,
    DcsgdPl,
    DsignsgdPhases,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundKind>,
    #[serde(default = "slack")]
    pub slack: f64,
    /// Saturation tolerance for the sign-phase constants.
    #[serde(default = "epsilon")]
    pub epsilon: f64,
    /// Fraction of recorded steps forming the tail window.
    #[serde(default = "window")]
    pub window: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationarySpec>,
}

fn slack() -> f64 {
    1.05
}

fn epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn window() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub rule: String,
    #[serde(default)]
    pub factors: Factors,
    /// Largest accepted rule residual.
    #[serde(default = "tolerance")]
    pub tolerance: f64,
    /// Relative tail-loss gap accepted when verifying empirically.
    #[serde(default = "match_tol")]
    pub match_tol: f64,
}

fn tolerance() -> f64 {
    1e-9
}

fn match_tol() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySpec {
    pub rel_tol: f64,
}

/// One-parameter sweep; exactly one field may be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<Dof>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<Vec<usize>>,
}

fn scale_fill(f: &Fill, c: f64) -> Fill {
    match f {
        Fill::Scalar(v) => Fill::Scalar(c * v),
        Fill::Vector(v) => Fill::Vector(v.iter().map(|x| c * x).collect()),
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str, origin: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse { path: origin.to_string(), msg: e.to_string() })?;
        if spec.schema != SCHEMA_VERSION {
            return Err(config_err("schema", format!("unsupported schema version {}, expected {SCHEMA_VERSION}", spec.schema)));
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs serialize")
    }

    /// Expand the sweep into labelled single experiments.
    pub fn expand(&self) -> Result<Vec<ExperimentSpec>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![self.clone()]);
        };
        let mut base = self.clone();
        base.sweep = None;
        let set = [
            sweep.agents.is_some(),
            sweep.noise_scale.is_some(),
            sweep.nu.is_some(),
            sweep.k.is_some(),
            sweep.eta.is_some(),
            sweep.batch.is_some(),
        ];
        if set.iter().filter(|s| **s).count() != 1 {
            return Err(config_err("sweep", "set exactly one sweep parameter"));
        }
        let variant = |label: String, edit: &dyn Fn(&mut ExperimentSpec)| {
            let mut s = base.clone();
            s.name = format!("{}-{label}", base.name);
            s.output = None;
            edit(&mut s);
            s
        };
        let mut out = Vec::new();
        if let Some(v) = &sweep.agents {
            for &n in v {
                out.push(variant(format!("agents-{n}"), &|s| s.cluster.agents = n));
            }
        } else if let Some(v) = &sweep.noise_scale {
            for &c in v {
                out.push(variant(format!("noise-{c}"), &|s| {
                    s.noise.sigma = scale_fill(&s.noise.sigma, c);
                    if let Some(p) = &mut s.noise.per_agent {
                        p.iter_mut().for_each(|f| *f = scale_fill(f, c));
                    }
                }));
            }
        } else if let Some(v) = &sweep.nu {
            for &nu in v {
                out.push(variant(format!("nu-{nu}"), &|s| match nu {
                    Dof::Infinite => {
                        s.noise.kind = NoiseKindSpec::Gaussian;
                        s.noise.nu = None;
                    }
                    _ => {
                        s.noise.kind = NoiseKindSpec::StudentT;
                        s.noise.nu = Some(nu);
                    }
                }));
            }
        } else if let Some(v) = &sweep.k {
            for &k in v {
                let c = match base.compressor {
                    CompressorSpec::TopK { .. } => CompressorSpec::TopK { k },
                    CompressorSpec::NormalizedTopK { .. } => CompressorSpec::NormalizedTopK { k },
                    _ => CompressorSpec::RandK { k },
                };
                out.push(variant(format!("k-{k}"), &|s| s.compressor = c));
            }
        } else if let Some(v) = &sweep.eta {
            for &eta in v {
                out.push(variant(format!("eta-{eta}"), &|s| s.cluster.eta = eta));
            }
        } else if let Some(v) = &sweep.batch {
            for &b in v {
                out.push(variant(format!("batch-{b}"), &|s| s.cluster.batch = b));
            }
        }
        Ok(out)
    }

    /// Validate every block and build the run objects; the sweep is ignored.
    pub fn resolve(&self) -> Result<Experiment> {
        let landscape = self.landscape.build()?;
        let d = landscape.dim;
        let c = &self.cluster;
        let noise = self.noise.build(d, c.agents)?;
        let compressor = self.compressor.build();
        if self.paths == 0 {
            return Err(config_err("paths", "need at least one path"));
        }
        let dv = self.divergence;
        let cluster = ClusterConfig {
            agents: c.agents,
            eta: c.eta,
            batch: c.batch,
            steps: c.steps,
            noise,
            compressors: vec![compressor; c.agents],
            x0: c.x0.expand(d, "cluster.x0")?,
            stride: self.stride,
            divergence: Divergence { ceiling: dv.ceiling, relative: dv.relative, halt: dv.halt },
        };
        cluster.validate(self.optimizer, d)?;
        if let Some(cmp) = &self.comparison {
            if !(cmp.window > 0.0 && cmp.window <= 1.0) {
                return Err(config_err("comparison.window", "window must lie in (0, 1]"));
            }
            if let Some(sc) = &cmp.scaling {
                sc.rule.parse::<crate::analysis::ScalingRule>()?;
            }
        }
        let (sde, substeps) = if self.sde.enabled {
            let substeps = self.substeps()?;
            (Some(self.build_sde(&landscape, &cluster, compressor)?), substeps)
        } else {
            (None, 1)
        };
        Ok(Experiment { spec: self.clone(), landscape, kind: self.optimizer, cluster, sde, substeps })
    }

    fn substeps(&self) -> Result<usize> {
        let m = self.sde.substeps;
        if m == 0 {
            return Err(config_err("sde.substeps", "must be at least 1"));
        }
        if let Some(dt) = self.sde.dt {
            let want = self.cluster.eta / m as f64;
            if !((dt - want).abs() <= 1e-9 * want) {
                return Err(config_err("sde.dt", format!("dt must equal η/substeps = {want:e}, got {dt:e}")));
            }
        }
        Ok(m)
    }

    fn build_sde(&self, landscape: &Landscape, cluster: &ClusterConfig, compressor: Compressor) -> Result<SdeModel> {
        let (eta, n, b) = (cluster.eta, cluster.agents, cluster.batch);
        let noise = &cluster.noise;
        if let Some(phase) = self.sde.phase {
            if self.optimizer != OptimizerKind::DSignSgd {
                return Err(config_err("sde.phase", "phase dynamics exist for dsignsgd only"));
            }
            let nu = noise[0].dof().ok_or_else(|| config_err("noise", "sign dynamics need a noise law"))?;
            return phase_sde(landscape, noise, eta, n, b, phase, nu);
        }
        match self.optimizer {
            OptimizerKind::Dsgd => dsgd_sde(landscape, noise, eta, n, b),
            OptimizerKind::Dcsgd => {
                let variant = match self.sde.randk_covariance {
                    RandKCovSpec::ClosedForm => RandKCovariance::ClosedForm,
                    RandKCovSpec::Exact => RandKCovariance::Exact,
                };
                dcsgd_sde(landscape, noise, &vec![compressor; n], eta, n, b, variant)
            }
            OptimizerKind::DSignSgd => dsignsgd_sde(landscape, noise, eta, n, b),
            other => Err(Error::Unsupported(format!("no SDE model for {}", other.label()))),
        }
    }
}

/// A validated, runnable experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub landscape: Landscape,
    pub kind: OptimizerKind,
    pub cluster: ClusterConfig,
    pub sde: Option<SdeModel>,
    pub substeps: usize,
}

impl Experiment {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn exclude_diverged(&self) -> bool {
        self.spec.divergence.exclude
    }

    pub fn window(&self) -> f64 {
        self.spec.comparison.as_ref().map_or(0.1, |c| c.window)
    }
}

/// Read and validate a spec file, including every sweep variant.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: shown.clone(), source })?;
    let spec = ExperimentSpec::from_json(&text, &shown)?;
    for s in spec.expand()? {
        s.resolve()?;
    }
    Ok(spec)
}
