//! Weak-approximation SDE models and their Euler–Maruyama integration.
//!
//! Each model is `dX = b(X) dt + A(X) dW` with `A Aᵀ` equal to the model
//! covariance. Any factor works: Brownian increments only see `A Aᵀ`, so the
//! DCSGD covariance (diagonal plus rank one) is factored in `O(d)` rather
//! than through a symmetric square root.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::compressors::{sign, Compressor};
use crate::error::{Error, Result};
use crate::landscapes::Landscape;
use crate::noise::{NoiseKind, NoiseModel};
use crate::optimizers::{Divergence, Recorder, Trajectory};
use crate::rng::{rng_from_key, Lane, RngStream};
use crate::specfun::{ell_nu, xi, Dof};
use rand_distr::{Distribution, StandardNormal};

/// A diffusion factor `A` with `A Aᵀ = Σ`.
#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Zero,
    /// `A = diag(a)`.
    Diagonal(Vec<f64>),
    /// `A = diag(√D) (I + γ v vᵀ)` with `‖v‖ = 1`.
    RankOneDiag { sqrt_d: Vec<f64>, v: Vec<f64>, gamma: f64 },
    Dense(DMatrix<f64>),
}

impl Factor {
    /// `out = A z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Factor::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Factor::Diagonal(a) => {
                for ((o, ai), zi) in out.iter_mut().zip(a).zip(z) {
                    *o = ai * zi;
                }
            }
            Factor::RankOneDiag { sqrt_d, v, gamma } => {
                let proj: f64 = v.iter().zip(z).map(|(vi, zi)| vi * zi).sum();
                for i in 0..z.len() {
                    out[i] = sqrt_d[i] * (z[i] + gamma * proj * v[i]);
                }
            }
            Factor::Dense(a) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|j| a[(i, j)] * z[j]).sum();
                }
            }
        }
    }

    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        let mut col = vec![0.0; d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..d {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    /// `A Aᵀ`.
    pub fn covariance(&self, d: usize) -> DMatrix<f64> {
        let a = self.to_matrix(d);
        &a * a.transpose()
    }
}

/// Factor a symmetric PSD matrix. Diagonal input takes square roots;
/// otherwise a symmetric eigendecomposition with eigenvalues down to
/// `−1e-8` clamped to zero.
pub fn diffusion_factorize(cov: &DMatrix<f64>) -> Result<Factor> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::Dimension { expected: d, got: cov.ncols() });
    }
    let off_diag_zero = (0..d).all(|i| (0..d).all(|j| i == j || cov[(i, j)] == 0.0));
    if off_diag_zero {
        let mut a = Vec::with_capacity(d);
        for i in 0..d {
            a.push(clamped_sqrt(cov[(i, i)])?);
        }
        return Ok(Factor::Diagonal(a));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut q = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = clamped_sqrt(lam)?;
        q.column_mut(j).scale_mut(s);
    }
    Ok(Factor::Dense(q))
}

fn clamped_sqrt(lam: f64) -> Result<f64> {
    if lam < -1e-8 || lam.is_nan() {
        return Err(Error::NotPsd { min_eig: lam });
    }
    if lam < -1e-12 {
        log::warn!("eigenvalue {lam:e} clamped to zero");
    }
    Ok(lam.max(0.0).sqrt())
}

/// Factor `diag(D) + c g gᵀ` in `O(d)` when every `D` entry is positive.
pub fn factor_rank_one_diag(diag: &[f64], c: f64, g: &[f64]) -> Result<Factor> {
    let d = diag.len();
    if diag.iter().all(|&x| x > 0.0) {
        let sqrt_d: Vec<f64> = diag.iter().map(|x| x.sqrt()).collect();
        let u: Vec<f64> = g.iter().zip(&sqrt_d).map(|(gi, si)| gi / si).collect();
        let s: f64 = u.iter().map(|x| x * x).sum();
        if s == 0.0 || c == 0.0 {
            return Ok(Factor::Diagonal(sqrt_d));
        }
        let disc = 1.0 + c * s;
        if disc < -1e-8 {
            return Err(Error::NotPsd { min_eig: disc });
        }
        let norm = s.sqrt();
        return Ok(Factor::RankOneDiag {
            sqrt_d,
            v: u.iter().map(|x| x / norm).collect(),
            gamma: -1.0 + disc.max(0.0).sqrt(),
        });
    }
    let mut cov = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] += c * g[i] * g[j];
        }
    }
    diffusion_factorize(&cov)
}

/// How the DCSGD Rand-k covariance treats off-diagonal entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RandKCovariance {
    /// `(d/k − 1)(∇f∇fᵀ + Σ/B) + Σ/B`, exact on the diagonal.
    #[default]
    ClosedForm,
    /// Exact second moment of Rand-k, including the negative correlation
    /// between kept coordinates.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
enum ModelKind {
    Dsgd { sqrt_cov: Vec<f64> },
    /// Covariance `diag(base + e ∇f²) + c ∇f∇fᵀ`.
    Dcsgd { base: Vec<f64>, e: f64, c: f64 },
    /// Per agent: `√B/σ_{j,i}` and ν.
    DSign { inv_sigma: Vec<Vec<f64>>, nus: Vec<Dof>, scale: f64 },
    Phase1,
    Phase3 { inv_sigma: Vec<Vec<f64>>, ell: f64, scale: f64 },
}

/// Drift and diffusion of one optimizer on one landscape.
#[derive(Clone, Debug, PartialEq)]
pub struct SdeModel {
    pub dim: usize,
    pub label: String,
    landscape: Landscape,
    kind: ModelKind,
}

fn check_cluster(landscape: &Landscape, noises: &[NoiseModel], eta: f64, n: usize, batch: usize) -> Result<()> {
    if n == 0 || noises.len() != n {
        return Err(Error::Config { field: "noise".into(), msg: format!("expected {n} noise models, got {}", noises.len()) });
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config { field: "eta".into(), msg: "learning rate must be positive".into() });
    }
    if batch == 0 {
        return Err(Error::Config { field: "batch".into(), msg: "batch size must be at least 1".into() });
    }
    for m in noises {
        if m.dim() != landscape.dim {
            return Err(Error::Dimension { expected: landscape.dim, got: m.dim() });
        }
    }
    Ok(())
}

fn raw_covariances(noises: &[NoiseModel]) -> Result<Vec<Vec<f64>>> {
    noises
        .iter()
        .map(|m| {
            m.covariance_diag()
                .ok_or_else(|| Error::ModelUnavailable("infinite variance (Student-t with ν ≤ 2)".into()))
        })
        .collect()
}

/// `dX = −∇f dt + √(η/(NB)) √Σ̂ dW`, `Σ̂` the mean per-agent covariance.
pub fn dsgd_sde(landscape: &Landscape, noises: &[NoiseModel], eta: f64, n: usize, batch: usize) -> Result<SdeModel> {
    check_cluster(landscape, noises, eta, n, batch)?;
    let covs = raw_covariances(noises)?;
    let pref = eta / (n as f64 * batch as f64);
    let sqrt_cov = (0..landscape.dim)
        .map(|j| (pref * covs.iter().map(|c| c[j]).sum::<f64>() / n as f64).sqrt())
        .collect();
    Ok(SdeModel { dim: landscape.dim, label: "dsgd".into(), landscape: landscape.clone(), kind: ModelKind::Dsgd { sqrt_cov } })
}

/// `dX = −∇f dt + √(η/N) √Σ̃ dW` for unbiased compressors.
pub fn dcsgd_sde(
    landscape: &Landscape,
    noises: &[NoiseModel],
    compressors: &[Compressor],
    eta: f64,
    n: usize,
    batch: usize,
    variant: RandKCovariance,
) -> Result<SdeModel> {
    check_cluster(landscape, noises, eta, n, batch)?;
    if compressors.len() != n {
        return Err(Error::Config { field: "compressor".into(), msg: format!("expected {n} compressors, got {}", compressors.len()) });
    }
    let d = landscape.dim;
    for c in compressors {
        c.validate(d)?;
        if !c.is_unbiased() {
            return Err(Error::Contract(format!("{c:?} is biased; the DCSGD SDE needs an unbiased compressor")));
        }
    }
    let covs = raw_covariances(noises)?;
    let pref = eta / n as f64;
    let nf = n as f64;
    let mut base = vec![0.0; d];
    let (mut e, mut c) = (0.0, 0.0);
    for (cov, comp) in covs.iter().zip(compressors) {
        let r = 1.0 + comp.omega(d).expect("unbiased");
        for j in 0..d {
            base[j] += pref * r * cov[j] / batch as f64 / nf;
        }
        match variant {
            RandKCovariance::ClosedForm => c += pref * (r - 1.0) / nf,
            RandKCovariance::Exact => {
                let k = d as f64 / r;
                let rho = if d > 1 { r * (k - 1.0) / (d as f64 - 1.0) } else { 1.0 };
                e += pref * (r - rho) / nf;
                c += pref * (rho - 1.0) / nf;
            }
        }
    }
    Ok(SdeModel { dim: d, label: "dcsgd".into(), landscape: landscape.clone(), kind: ModelKind::Dcsgd { base, e, c } })
}

fn inverse_scales(landscape: &Landscape, noises: &[NoiseModel], batch: usize) -> Result<Vec<Vec<f64>>> {
    let rb = (batch as f64).sqrt();
    noises
        .iter()
        .map(|m| {
            if matches!(m.kind, NoiseKind::None) || m.scale.iter().any(|&s| s <= 0.0) {
                return Err(Error::Domain {
                    func: "dsignsgd_sde",
                    msg: format!("signal-to-noise ratio undefined: zero noise scale in dimension {}", landscape.dim),
                });
            }
            Ok(m.scale.iter().map(|s| rb / s).collect())
        })
        .collect()
}

/// `dX = −(2/N) Σᵢ Ξ_ν(√B ∇f/σᵢ) dt + √(η/N) √Σ̄ dW`, diagonal `Σ̄`.
pub fn dsignsgd_sde(landscape: &Landscape, noises: &[NoiseModel], eta: f64, n: usize, batch: usize) -> Result<SdeModel> {
    check_cluster(landscape, noises, eta, n, batch)?;
    let inv_sigma = inverse_scales(landscape, noises, batch)?;
    let nus = noises.iter().map(|m| m.dof().expect("non-degenerate noise")).collect();
    Ok(SdeModel {
        dim: landscape.dim,
        label: "dsignsgd".into(),
        landscape: landscape.clone(),
        kind: ModelKind::DSign { inv_sigma, nus, scale: eta / n as f64 },
    })
}

/// Saturated (phase 1) or linearized (phase 3) SignSGD dynamics.
pub fn phase_sde(landscape: &Landscape, noises: &[NoiseModel], eta: f64, n: usize, batch: usize, phase: u8, nu: Dof) -> Result<SdeModel> {
    check_cluster(landscape, noises, eta, n, batch)?;
    match phase {
        1 => Ok(SdeModel { dim: landscape.dim, label: "dsignsgd-phase1".into(), landscape: landscape.clone(), kind: ModelKind::Phase1 }),
        3 => Ok(SdeModel {
            dim: landscape.dim,
            label: "dsignsgd-phase3".into(),
            landscape: landscape.clone(),
            kind: ModelKind::Phase3 { inv_sigma: inverse_scales(landscape, noises, batch)?, ell: ell_nu(nu)?, scale: eta / n as f64 },
        }),
        p => Err(Error::Config { field: "phase".into(), msg: format!("phase must be 1 or 3, got {p}") }),
    }
}

impl SdeModel {
    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    fn check(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.landscape.gradient(x)
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.check(x)?;
        let mut b = vec![0.0; self.dim];
        self.drift_from_grad(&g, &mut b);
        Ok(b)
    }

    pub fn diffusion_factor(&self, x: &[f64]) -> Result<Factor> {
        let g = self.check(x)?;
        self.factor_from_grad(&g)
    }

    /// `A(x) A(x)ᵀ`.
    pub fn covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.diffusion_factor(x)?.covariance(self.dim))
    }

    fn drift_from_grad(&self, g: &[f64], b: &mut [f64]) {
        match &self.kind {
            ModelKind::Dsgd { .. } | ModelKind::Dcsgd { .. } => {
                for (bj, gj) in b.iter_mut().zip(g) {
                    *bj = -gj;
                }
            }
            ModelKind::DSign { inv_sigma, nus, .. } => {
                let nf = inv_sigma.len() as f64;
                for j in 0..g.len() {
                    let s: f64 = inv_sigma.iter().zip(nus).map(|(inv, &nu)| xi(g[j] * inv[j], nu)).sum();
                    b[j] = -2.0 * s / nf;
                }
            }
            ModelKind::Phase1 => {
                for (bj, gj) in b.iter_mut().zip(g) {
                    *bj = -sign(*gj);
                }
            }
            ModelKind::Phase3 { inv_sigma, ell, .. } => {
                let nf = inv_sigma.len() as f64;
                for j in 0..g.len() {
                    let s: f64 = inv_sigma.iter().map(|inv| inv[j]).sum();
                    b[j] = -ell * s / nf * g[j];
                }
            }
        }
    }

    fn factor_from_grad(&self, g: &[f64]) -> Result<Factor> {
        Ok(match &self.kind {
            ModelKind::Dsgd { sqrt_cov } => Factor::Diagonal(sqrt_cov.clone()),
            ModelKind::Dcsgd { base, e, c } => {
                let diag: Vec<f64> = base.iter().zip(g).map(|(b, gj)| b + e * gj * gj).collect();
                factor_rank_one_diag(&diag, *c, g)?
            }
            ModelKind::DSign { inv_sigma, nus, scale } => {
                let nf = inv_sigma.len() as f64;
                Factor::Diagonal(
                    (0..g.len())
                        .map(|j| {
                            let s: f64 = inv_sigma.iter().zip(nus).map(|(inv, &nu)| xi(g[j] * inv[j], nu).powi(2)).sum();
                            (scale * (1.0 - 4.0 * s / nf)).max(0.0).sqrt()
                        })
                        .collect(),
                )
            }
            ModelKind::Phase1 => Factor::Zero,
            ModelKind::Phase3 { inv_sigma, ell, scale } => {
                let nf = inv_sigma.len() as f64;
                Factor::Diagonal(
                    (0..g.len())
                        .map(|j| {
                            let s: f64 = inv_sigma.iter().map(|inv| (g[j] * inv[j]).powi(2)).sum();
                            (scale * (1.0 - ell * ell * s / nf)).max(0.0).sqrt()
                        })
                        .collect(),
                )
            }
        })
    }
}

/// Integrate `model` from `x0` with step `dt`, recording every `stride`
/// steps. Brownian increments come from the Brownian lane of `stream`.
pub fn euler_maruyama(model: &SdeModel, x0: &[f64], dt: f64, steps: usize, stream: &RngStream, stride: usize) -> Result<Trajectory> {
    euler_maruyama_with(model, x0, dt, steps, stream, stride, Divergence::default())
}

pub fn euler_maruyama_with(
    model: &SdeModel,
    x0: &[f64],
    dt: f64,
    steps: usize,
    stream: &RngStream,
    stride: usize,
    divergence: Divergence,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config { field: "dt".into(), msg: format!("step must be positive, got {dt}") });
    }
    if stride == 0 {
        return Err(Error::Config { field: "stride".into(), msg: "stride must be at least 1".into() });
    }
    if x0.len() != model.dim {
        return Err(Error::Dimension { expected: model.dim, got: x0.len() });
    }
    let d = model.dim;
    let key = stream.key(Lane::Brownian);
    let sqrt_dt = dt.sqrt();
    let mut rec = Recorder::new(&model.landscape, x0, stride, divergence);
    let mut x = x0.to_vec();
    let mut prev = x.clone();
    let (mut g, mut b, mut z, mut w) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    rec.observe(0, &x);
    for k in 0..steps {
        model.landscape.gradient_into(&x, &mut g);
        model.drift_from_grad(&g, &mut b);
        let factor = match model.factor_from_grad(&g) {
            Ok(f) => f,
            Err(_) if g.iter().any(|v| !v.is_finite()) => Factor::Zero,
            Err(e) => return Err(e),
        };
        let mut rng = rng_from_key(&key, k as u64);
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        factor.apply(&z, &mut w);
        prev.copy_from_slice(&x);
        for j in 0..d {
            x[j] += dt * b[j] + sqrt_dt * w[j];
        }
        rec.increment(&prev, &x);
        if rec.observe(k + 1, &x) && divergence.halt {
            break;
        }
    }
    Ok(rec.traj)
}
