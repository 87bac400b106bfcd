//! Discrete multi-agent update rules: the ground truth the SDEs approximate.

use serde::{Deserialize, Serialize};

use crate::compressors::{compress_into, rand_k_subset, sign, Compressor};
use crate::error::{config_err, Error, Result};
use crate::landscapes::Landscape;
use crate::noise::{fill_noise_at, NoiseModel};
use crate::rng::{rng_from_key, Lane, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Dsgd,
    Dcsgd,
    #[serde(rename = "dsignsgd")]
    DSignSgd,
    #[serde(rename = "topk-sgd")]
    TopKSgd,
    #[serde(rename = "normtopk-sgd")]
    NormTopKSgd,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Dsgd => "dsgd",
            OptimizerKind::Dcsgd => "dcsgd",
            OptimizerKind::DSignSgd => "dsignsgd",
            OptimizerKind::TopKSgd => "topk-sgd",
            OptimizerKind::NormTopKSgd => "normtopk-sgd",
        }
    }
}

/// When a path counts as diverged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergence {
    /// Loss-gap ceiling; multiplied by the initial gap when `relative`.
    pub ceiling: f64,
    pub relative: bool,
    /// Stop stepping once diverged.
    pub halt: bool,
}

impl Default for Divergence {
    fn default() -> Divergence {
        Divergence { ceiling: 1e12, relative: false, halt: true }
    }
}

/// Hyperparameters of one simulated cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub agents: usize,
    pub eta: f64,
    pub batch: usize,
    pub steps: usize,
    /// One noise law per agent.
    pub noise: Vec<NoiseModel>,
    /// One compressor per agent; ignored by DSGD and DSignSGD.
    pub compressors: Vec<Compressor>,
    pub x0: Vec<f64>,
    /// Record observables every `stride` steps.
    pub stride: usize,
    pub divergence: Divergence,
}

impl ClusterConfig {
    /// Homogeneous cluster: every agent shares `noise` and `compressor`.
    pub fn homogeneous(
        agents: usize,
        eta: f64,
        batch: usize,
        steps: usize,
        noise: NoiseModel,
        compressor: Compressor,
        x0: Vec<f64>,
    ) -> ClusterConfig {
        ClusterConfig {
            agents,
            eta,
            batch,
            steps,
            noise: vec![noise; agents],
            compressors: vec![compressor; agents],
            x0,
            stride: 1,
            divergence: Divergence::default(),
        }
    }

    pub fn validate(&self, kind: OptimizerKind, d: usize) -> Result<()> {
        if self.agents == 0 {
            return Err(config_err("agents", "need at least one agent"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(config_err("eta", format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.batch == 0 {
            return Err(config_err("batch", "batch size must be at least 1"));
        }
        if self.stride == 0 {
            return Err(config_err("stride", "stride must be at least 1"));
        }
        if self.x0.len() != d {
            return Err(Error::Dimension { expected: d, got: self.x0.len() });
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(config_err("x0", "initial point must be finite"));
        }
        if self.noise.len() != self.agents {
            return Err(config_err("noise", format!("expected {} noise models, got {}", self.agents, self.noise.len())));
        }
        for m in &self.noise {
            if m.dim() != d {
                return Err(config_err("noise.sigma", format!("scale has length {}, dimension is {d}", m.dim())));
            }
        }
        let needs_comp = matches!(kind, OptimizerKind::Dcsgd | OptimizerKind::TopKSgd | OptimizerKind::NormTopKSgd);
        if needs_comp {
            if self.compressors.len() != self.agents {
                return Err(config_err(
                    "compressor",
                    format!("expected {} compressors, got {}", self.agents, self.compressors.len()),
                ));
            }
            for c in &self.compressors {
                c.validate(d)?;
                let ok = match kind {
                    OptimizerKind::TopKSgd => matches!(c, Compressor::TopK { .. }),
                    OptimizerKind::NormTopKSgd => matches!(c, Compressor::NormalizedTopK { .. }),
                    _ => true,
                };
                if !ok {
                    return Err(config_err("compressor", format!("{c:?} does not match optimizer {}", kind.label())));
                }
            }
        }
        if !(self.divergence.ceiling > 0.0) {
            return Err(config_err("divergence.ceiling", "ceiling must be positive"));
        }
        Ok(())
    }
}

/// Recorded observables of one path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// Step index of every record.
    pub steps: Vec<usize>,
    /// Iterates at the recorded steps.
    pub points: Vec<Vec<f64>>,
    /// `f(x) − f*`, or `f(x)` when the optimum is unknown.
    pub loss_gap: Vec<f64>,
    pub grad_l1: Vec<f64>,
    pub grad_l2sq: Vec<f64>,
    /// First step at which the path crossed the divergence ceiling.
    pub diverged_at: Option<usize>,
    /// Largest `‖x_{k+1} − x_k‖_∞` over the run.
    pub max_increment_inf: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Observable bookkeeping shared by the discrete and SDE runners.
pub(crate) struct Recorder<'a> {
    landscape: &'a Landscape,
    stride: usize,
    ceiling: f64,
    grad: Vec<f64>,
    pub traj: Trajectory,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(landscape: &'a Landscape, x0: &[f64], stride: usize, div: Divergence) -> Recorder<'a> {
        let s0 = value(landscape, x0);
        let ceiling = if div.relative { div.ceiling * s0 } else { div.ceiling };
        Recorder { landscape, stride, ceiling, grad: vec![0.0; landscape.dim], traj: Trajectory::default() }
    }

    /// Records `x` if `step` is on the stride; returns true when `x` diverged.
    pub(crate) fn observe(&mut self, step: usize, x: &[f64]) -> bool {
        let f = value(self.landscape, x);
        let bad = !(f <= self.ceiling) || x.iter().any(|v| !v.is_finite());
        if bad && self.traj.diverged_at.is_none() {
            self.traj.diverged_at = Some(step);
        }
        if step.is_multiple_of(self.stride) {
            self.landscape.gradient_into(x, &mut self.grad);
            self.traj.steps.push(step);
            self.traj.points.push(x.to_vec());
            self.traj.loss_gap.push(f);
            self.traj.grad_l1.push(self.grad.iter().map(|g| g.abs()).sum());
            self.traj.grad_l2sq.push(self.grad.iter().map(|g| g * g).sum());
        }
        bad
    }

    pub(crate) fn increment(&mut self, before: &[f64], after: &[f64]) {
        let inc = before.iter().zip(after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if inc > self.traj.max_increment_inf || inc.is_nan() {
            self.traj.max_increment_inf = inc;
        }
    }
}

fn value(landscape: &Landscape, x: &[f64]) -> f64 {
    let f = landscape.loss_unchecked(x);
    match landscape.f_star {
        Some(fs) => (f - fs).max(0.0),
        None => f,
    }
}

/// Reusable per-path state for the discrete updates.
pub(crate) struct Stepper<'a> {
    kind: OptimizerKind,
    landscape: &'a Landscape,
    cfg: &'a ClusterConfig,
    noise_keys: Vec<[u8; 32]>,
    comp_keys: Vec<[u8; 32]>,
    grad: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    acc: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(kind: OptimizerKind, landscape: &'a Landscape, cfg: &'a ClusterConfig, seed: u64, path: u64) -> Stepper<'a> {
        let d = landscape.dim;
        let streams: Vec<RngStream> = (0..cfg.agents as u64).map(|i| RngStream::new(seed, path, i)).collect();
        Stepper {
            kind,
            landscape,
            cfg,
            noise_keys: streams.iter().map(|s| s.key(Lane::Noise)).collect(),
            comp_keys: streams.iter().map(|s| s.key(Lane::Compressor)).collect(),
            grad: vec![0.0; d],
            g: vec![0.0; d],
            c: vec![0.0; d],
            acc: vec![0.0; d],
        }
    }

    /// Advance `x` in place by iteration `step`.
    pub(crate) fn step(&mut self, x: &mut [f64], step: u64) {
        let d = x.len();
        let cfg = self.cfg;
        self.landscape.gradient_into(x, &mut self.grad);
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        for i in 0..cfg.agents {
            let noise = &cfg.noise[i];
            let mut nrng = rng_from_key(&self.noise_keys[i], step);
            let comp = match self.kind {
                OptimizerKind::Dsgd | OptimizerKind::DSignSgd => Compressor::Identity,
                _ => cfg.compressors[i],
            };
            match (self.kind, comp) {
                (OptimizerKind::DSignSgd, _) => {
                    fill_noise_at(noise, 0..d, cfg.batch, &mut nrng, &mut self.g);
                    for j in 0..d {
                        self.acc[j] += sign(self.grad[j] + self.g[j]);
                    }
                }
                (_, Compressor::Identity) => {
                    fill_noise_at(noise, 0..d, cfg.batch, &mut nrng, &mut self.g);
                    for j in 0..d {
                        self.acc[j] += self.grad[j] + self.g[j];
                    }
                }
                (_, Compressor::RandK { k }) => {
                    // only kept coordinates need noise
                    let mut crng = rng_from_key(&self.comp_keys[i], step);
                    let idx = rand_k_subset(d, k, &mut crng);
                    let scale = d as f64 / k as f64;
                    fill_noise_at(noise, idx.iter().copied(), cfg.batch, &mut nrng, &mut self.g);
                    for &j in &idx {
                        self.acc[j] += scale * (self.grad[j] + self.g[j]);
                    }
                }
                (_, c) => {
                    fill_noise_at(noise, 0..d, cfg.batch, &mut nrng, &mut self.g);
                    for j in 0..d {
                        self.g[j] += self.grad[j];
                    }
                    let mut crng = rng_from_key(&self.comp_keys[i], step);
                    compress_into(&c, &self.g, &mut crng, &mut self.c);
                    for j in 0..d {
                        self.acc[j] += self.c[j];
                    }
                }
            }
        }
        let h = cfg.eta / cfg.agents as f64;
        for j in 0..d {
            x[j] -= h * self.acc[j];
        }
    }
}

fn one_step(kind: OptimizerKind, x: &[f64], landscape: &Landscape, cfg: &ClusterConfig, seed: u64, path: u64, step: u64) -> Result<Vec<f64>> {
    cfg.validate(kind, landscape.dim)?;
    if x.len() != landscape.dim {
        return Err(Error::Dimension { expected: landscape.dim, got: x.len() });
    }
    let mut out = x.to_vec();
    Stepper::new(kind, landscape, cfg, seed, path).step(&mut out, step);
    Ok(out)
}

/// `x − (η/N) Σᵢ gᵢ`, with `gᵢ` agent `i`'s stochastic gradient.
pub fn dsgd_step(x: &[f64], landscape: &Landscape, cfg: &ClusterConfig, seed: u64, path: u64, step: u64) -> Result<Vec<f64>> {
    one_step(OptimizerKind::Dsgd, x, landscape, cfg, seed, path, step)
}

/// `x − (η/N) Σᵢ Cᵢ(gᵢ)`.
pub fn dcsgd_step(x: &[f64], landscape: &Landscape, cfg: &ClusterConfig, seed: u64, path: u64, step: u64) -> Result<Vec<f64>> {
    one_step(OptimizerKind::Dcsgd, x, landscape, cfg, seed, path, step)
}

/// `x − (η/N) Σᵢ sign(gᵢ)`.
pub fn dsignsgd_step(x: &[f64], landscape: &Landscape, cfg: &ClusterConfig, seed: u64, path: u64, step: u64) -> Result<Vec<f64>> {
    one_step(OptimizerKind::DSignSgd, x, landscape, cfg, seed, path, step)
}

/// Run `cfg.steps` iterations on ensemble path `path`.
pub fn run_trajectory(kind: OptimizerKind, landscape: &Landscape, cfg: &ClusterConfig, seed: u64, path: u64) -> Result<Trajectory> {
    cfg.validate(kind, landscape.dim)?;
    Ok(run_validated(kind, landscape, cfg, seed, path))
}

pub(crate) fn run_validated(kind: OptimizerKind, landscape: &Landscape, cfg: &ClusterConfig, seed: u64, path: u64) -> Trajectory {
    let mut rec = Recorder::new(landscape, &cfg.x0, cfg.stride, cfg.divergence);
    let mut stepper = Stepper::new(kind, landscape, cfg, seed, path);
    let mut x = cfg.x0.clone();
    let mut prev = x.clone();
    rec.observe(0, &x);
    for k in 0..cfg.steps {
        prev.copy_from_slice(&x);
        stepper.step(&mut x, k as u64);
        rec.increment(&prev, &x);
        if rec.observe(k + 1, &x) && cfg.divergence.halt {
            break;
        }
    }
    rec.traj
}
