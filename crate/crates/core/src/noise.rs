//! Per-agent stochastic gradients: `∇f(x) + σ/√B · Z` with Gaussian or
//! Student-t `Z`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::landscapes::Landscape;
use crate::rng::{Lane, RngStream};
use crate::specfun::Dof;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    None,
    Gaussian,
    /// Student-t with `nu` degrees of freedom. `spherical` shares one
    /// chi-square divisor across coordinates; otherwise each coordinate is an
    /// independent univariate t.
    StudentT { nu: Dof, spherical: bool },
}

/// How heavy the tails are, for divergence monitors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailClass {
    FiniteVariance,
    InfiniteVariance,
    InfiniteMean,
}

/// Noise law of one agent: per-coordinate scales and a kind.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub scale: Vec<f64>,
}

impl NoiseModel {
    pub fn none(d: usize) -> NoiseModel {
        NoiseModel { kind: NoiseKind::None, scale: vec![0.0; d] }
    }

    pub fn gaussian(scale: Vec<f64>) -> Result<NoiseModel> {
        NoiseModel { kind: NoiseKind::Gaussian, scale }.validated()
    }

    pub fn student_t(scale: Vec<f64>, nu: Dof) -> Result<NoiseModel> {
        NoiseModel { kind: NoiseKind::StudentT { nu, spherical: true }, scale }.validated()
    }

    pub fn validated(self) -> Result<NoiseModel> {
        if self.scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config {
                field: "noise.sigma".into(),
                msg: "scales must be finite and non-negative".into(),
            });
        }
        if let NoiseKind::StudentT { nu: Dof::Finite(nu), .. } = self.kind {
            Dof::new(nu)?;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Degrees of freedom; Gaussian is `∞`, `None` has no law.
    pub fn dof(&self) -> Option<Dof> {
        match self.kind {
            NoiseKind::None => None,
            NoiseKind::Gaussian => Some(Dof::Infinite),
            NoiseKind::StudentT { nu, .. } => Some(nu),
        }
    }

    pub fn tail_class(&self) -> TailClass {
        match self.kind {
            NoiseKind::StudentT { nu: Dof::Finite(nu), .. } if nu <= 1.0 => TailClass::InfiniteMean,
            NoiseKind::StudentT { nu: Dof::Finite(nu), .. } if nu <= 2.0 => TailClass::InfiniteVariance,
            _ => TailClass::FiniteVariance,
        }
    }

    /// Diagonal covariance of the unbatched noise (`B = 1`), if finite.
    pub fn covariance_diag(&self) -> Option<Vec<f64>> {
        let factor = match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian => 1.0,
            NoiseKind::StudentT { nu, .. } => nu.variance_factor()?,
        };
        Some(self.scale.iter().map(|s| factor * s * s).collect())
    }

    /// Largest per-coordinate scale.
    pub fn sigma_max(&self) -> f64 {
        self.scale.iter().copied().fold(0.0, f64::max)
    }

    /// Scale a copy by a global multiplier.
    pub fn scaled(&self, c: f64) -> NoiseModel {
        NoiseModel { kind: self.kind, scale: self.scale.iter().map(|s| c * s).collect() }
    }
}

fn check_batch(batch: usize) -> Result<()> {
    if batch < 1 {
        return Err(Error::Config { field: "batch".into(), msg: "batch size must be at least 1".into() });
    }
    Ok(())
}

/// Draw noise for the coordinates in `idx` (increasing) into `out[j]` for
/// each `j ∈ idx`. Drawing for all coordinates consumes the generator in the
/// same order as drawing for `0..d`.
pub(crate) fn fill_noise_at<R: Rng + ?Sized>(
    model: &NoiseModel,
    idx: impl Iterator<Item = usize> + Clone,
    batch: usize,
    rng: &mut R,
    out: &mut [f64],
) {
    let root_b = (batch as f64).sqrt();
    match model.kind {
        NoiseKind::None => {
            for j in idx {
                out[j] = 0.0;
            }
        }
        NoiseKind::Gaussian | NoiseKind::StudentT { nu: Dof::Infinite, .. } => {
            for j in idx {
                let z: f64 = StandardNormal.sample(rng);
                out[j] = model.scale[j] / root_b * z;
            }
        }
        NoiseKind::StudentT { nu: Dof::Finite(nu), spherical } => {
            let chi = ChiSquared::new(nu).expect("validated degrees of freedom");
            if spherical {
                for j in idx.clone() {
                    out[j] = StandardNormal.sample(rng);
                }
                let w = (chi.sample(rng) / nu).sqrt();
                for j in idx {
                    out[j] *= model.scale[j] / root_b / w;
                }
            } else {
                for j in idx {
                    let z: f64 = StandardNormal.sample(rng);
                    let w = (chi.sample(rng) / nu).sqrt();
                    out[j] = model.scale[j] / root_b * z / w;
                }
            }
        }
    }
}

/// One noise vector for agent `stream` at iteration `step`.
pub fn sample_noise(model: &NoiseModel, d: usize, batch: usize, stream: &RngStream, step: u64) -> Result<Vec<f64>> {
    check_batch(batch)?;
    if model.dim() != d {
        return Err(Error::Dimension { expected: d, got: model.dim() });
    }
    let mut out = vec![0.0; d];
    let mut rng = stream.rng(Lane::Noise, step);
    fill_noise_at(model, 0..d, batch, &mut rng, &mut out);
    Ok(out)
}

/// `∇f(x)` plus one noise draw.
pub fn stochastic_gradient(
    landscape: &Landscape,
    model: &NoiseModel,
    x: &[f64],
    batch: usize,
    stream: &RngStream,
    step: u64,
) -> Result<Vec<f64>> {
    let mut g = landscape.gradient(x)?;
    let z = sample_noise(model, landscape.dim, batch, stream, step)?;
    for (gj, zj) in g.iter_mut().zip(z) {
        *gj += zj;
    }
    Ok(g)
}

/// Bound on the trace of the batched noise covariance; `∞` when the
/// variance does not exist.
pub fn trace_bound(model: &NoiseModel, batch: usize) -> Result<f64> {
    check_batch(batch)?;
    Ok(match model.covariance_diag() {
        Some(c) => c.iter().sum::<f64>() / batch as f64,
        None => f64::INFINITY,
    })
}
