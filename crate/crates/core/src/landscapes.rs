//! Analytic test losses with gradients, optima and regularity constants.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Curvature matrix of a quadratic term, diagonal whenever possible.
#[derive(Clone, Debug, PartialEq)]
pub enum Hessian {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Diagonal(h) => h.len(),
            Hessian::Dense(m) => m.nrows(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Hessian::Diagonal(h) => h.clone(),
            Hessian::Dense(m) => m.diagonal().iter().copied().collect(),
        }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Diagonal(h) => {
                for ((o, &hj), &xj) in out.iter_mut().zip(h).zip(x) {
                    *o = hj * xj;
                }
            }
            Hessian::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| m[(i, j)] * x[j]).sum();
                }
            }
        }
    }

    fn quad_form(&self, x: &[f64]) -> f64 {
        match self {
            Hessian::Diagonal(h) => h.iter().zip(x).map(|(hj, xj)| hj * xj * xj).sum(),
            Hessian::Dense(m) => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    for j in 0..x.len() {
                        acc += x[i] * m[(i, j)] * x[j];
                    }
                }
                acc
            }
        }
    }

    fn eigenvalues(&self) -> Vec<f64> {
        let mut eig = match self {
            Hessian::Diagonal(h) => h.clone(),
            Hessian::Dense(m) => SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect(),
        };
        eig.sort_by(f64::total_cmp);
        eig
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LandscapeKind {
    /// `f(x) = ½ xᵀHx`.
    Quadratic { h: Hessian },
    /// `f(x, y) = (a − x)² + b(y − x²)²`.
    Rosenbrock { a: f64, b: f64 },
    /// `f(x) = ½ xᵀHx + ¼λ Σ xᵢ⁴ − (ξ/3) Σ xᵢ³`.
    EmbeddedSaddle { h: Hessian, lambda: f64, xi: f64 },
}

/// A differentiable loss with known constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Landscape {
    pub kind: LandscapeKind,
    pub dim: usize,
    /// Optimal value, when known.
    pub f_star: Option<f64>,
    /// PL / strong-convexity constant.
    pub mu: Option<f64>,
    /// Smoothness constant.
    pub l_smooth: Option<f64>,
    /// Bound on the Hessian trace.
    pub l_tau: Option<f64>,
}

fn check_hessian(h: &Hessian) -> Result<()> {
    let bad = |msg: &str| Err(Error::Config { field: "landscape.h".into(), msg: msg.into() });
    match h {
        Hessian::Diagonal(d) => {
            if d.is_empty() {
                return bad("empty diagonal");
            }
            if d.iter().any(|v| !v.is_finite()) {
                return bad("non-finite entry");
            }
        }
        Hessian::Dense(m) => {
            if m.nrows() == 0 || m.nrows() != m.ncols() {
                return bad("matrix must be square and non-empty");
            }
            if m.iter().any(|v| !v.is_finite()) {
                return bad("non-finite entry");
            }
            let scale = m.amax().max(1.0);
            for i in 0..m.nrows() {
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                        return bad("matrix must be symmetric");
                    }
                }
            }
        }
    }
    Ok(())
}

impl Landscape {
    pub fn quadratic(h: Hessian) -> Result<Landscape> {
        check_hessian(&h)?;
        let eig = h.eigenvalues();
        let dim = h.dim();
        let lmin = eig[0];
        let lmax = eig[dim - 1];
        let trace: f64 = h.diagonal().iter().sum();
        let psd = lmin >= 0.0;
        Ok(Landscape {
            kind: LandscapeKind::Quadratic { h },
            dim,
            f_star: psd.then_some(0.0),
            mu: psd.then_some(lmin),
            l_smooth: Some(lmax.max(-lmin)),
            l_tau: psd.then_some(trace),
        })
    }

    pub fn quadratic_diag(diag: Vec<f64>) -> Result<Landscape> {
        Landscape::quadratic(Hessian::Diagonal(diag))
    }

    /// `f = ½ s‖x‖²` in dimension `d`.
    pub fn isotropic(d: usize, s: f64) -> Result<Landscape> {
        Landscape::quadratic_diag(vec![s; d])
    }

    pub fn rosenbrock(a: f64, b: f64) -> Result<Landscape> {
        if !(a.is_finite() && b.is_finite() && b > 0.0) {
            return Err(Error::Config {
                field: "landscape.b".into(),
                msg: format!("need finite a and b > 0, got a={a}, b={b}"),
            });
        }
        Ok(Landscape {
            kind: LandscapeKind::Rosenbrock { a, b },
            dim: 2,
            f_star: Some(0.0),
            mu: None,
            l_smooth: None,
            l_tau: None,
        })
    }

    pub fn embedded_saddle(h: Hessian, lambda: f64, xi: f64) -> Result<Landscape> {
        check_hessian(&h)?;
        if !(lambda.is_finite() && xi.is_finite()) {
            return Err(Error::Config {
                field: "landscape.lambda".into(),
                msg: "lambda and xi must be finite".into(),
            });
        }
        let dim = h.dim();
        Ok(Landscape {
            kind: LandscapeKind::EmbeddedSaddle { h, lambda, xi },
            dim,
            f_star: None,
            mu: None,
            l_smooth: None,
            l_tau: None,
        })
    }

    /// Diagonal of `H` for quadratic landscapes.
    pub fn hessian_diagonal(&self) -> Option<Vec<f64>> {
        match &self.kind {
            LandscapeKind::Quadratic { h: Hessian::Diagonal(d) } => Some(d.clone()),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.loss_unchecked(x))
    }

    pub(crate) fn loss_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            LandscapeKind::Quadratic { h } => 0.5 * h.quad_form(x),
            LandscapeKind::Rosenbrock { a, b } => {
                let (u, v) = (x[0], x[1]);
                (a - u).powi(2) + b * (v - u * u).powi(2)
            }
            LandscapeKind::EmbeddedSaddle { h, lambda, xi } => {
                let quartic: f64 = x.iter().map(|v| v.powi(4)).sum();
                let cubic: f64 = x.iter().map(|v| v.powi(3)).sum();
                0.5 * h.quad_form(x) + 0.25 * lambda * quartic - xi / 3.0 * cubic
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    /// Gradient written into `out`; lengths must already match.
    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            LandscapeKind::Quadratic { h } => h.apply_into(x, out),
            LandscapeKind::Rosenbrock { a, b } => {
                let (u, v) = (x[0], x[1]);
                let r = v - u * u;
                out[0] = -2.0 * (a - u) - 4.0 * b * u * r;
                out[1] = 2.0 * b * r;
            }
            LandscapeKind::EmbeddedSaddle { h, lambda, xi } => {
                h.apply_into(x, out);
                for (o, &v) in out.iter_mut().zip(x) {
                    *o += lambda * v * v * v - xi * v * v;
                }
            }
        }
    }

    /// `f(x) − f*`, clamped at zero.
    pub fn loss_gap(&self, x: &[f64]) -> Result<f64> {
        let f_star = self.f_star.ok_or_else(|| {
            Error::Unsupported("loss_gap needs a known optimal value for this landscape".into())
        })?;
        let gap = self.loss(x)? - f_star;
        if gap < -1e-12 {
            log::warn!("loss gap {gap:e} below zero, clamped");
        }
        Ok(gap.max(0.0))
    }

    /// Exact Hessian trace at `x`.
    pub fn hessian_diag_trace(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            LandscapeKind::Quadratic { h } => h.diagonal().iter().sum(),
            LandscapeKind::Rosenbrock { b, .. } => {
                let (u, v) = (x[0], x[1]);
                2.0 - 4.0 * b * v + 12.0 * b * u * u + 2.0 * b
            }
            LandscapeKind::EmbeddedSaddle { h, lambda, xi } => h
                .diagonal()
                .iter()
                .zip(x)
                .map(|(hj, v)| hj + 3.0 * lambda * v * v - 2.0 * xi * v)
                .sum(),
        })
    }

    /// A point where the optimum is attained, when known.
    pub fn minimizer(&self) -> Option<Vec<f64>> {
        match &self.kind {
            LandscapeKind::Quadratic { .. } if self.f_star.is_some() => Some(vec![0.0; self.dim]),
            LandscapeKind::Rosenbrock { a, .. } => Some(vec![*a, a * a]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn saddle() -> Landscape {
        Landscape::embedded_saddle(Hessian::Diagonal(vec![1.0, -2.0]), 1.0, 1.0).unwrap()
    }

    #[test]
    fn loss_examples() {
        let q = Landscape::isotropic(2, 1.0).unwrap();
        assert_eq!(q.loss(&[1.0, 0.0]).unwrap(), 0.5);
        let r = Landscape::rosenbrock(1.0, 100.0).unwrap();
        assert_eq!(r.loss(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(saddle().loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(q.loss(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn gradient_examples() {
        let q = Landscape::quadratic_diag(vec![2.0, 1.0]).unwrap();
        assert_eq!(q.gradient(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
        let r = Landscape::rosenbrock(1.0, 100.0).unwrap();
        assert_eq!(r.gradient(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(saddle().gradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn loss_gap_examples() {
        let q = Landscape::isotropic(1, 1.0).unwrap();
        assert_eq!(q.loss_gap(&[0.0]).unwrap(), 0.0);
        assert_eq!(q.loss_gap(&[2.0]).unwrap(), 2.0);
        let r = Landscape::rosenbrock(1.0, 100.0).unwrap();
        assert_eq!(r.loss_gap(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(saddle().loss_gap(&[0.0, 0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn trace_examples() {
        let mut diag = vec![1.0; 10];
        diag[0] = 2.0;
        let q = Landscape::quadratic_diag(diag).unwrap();
        assert_eq!(q.hessian_diag_trace(&[0.0; 10]).unwrap(), 11.0);
        assert_eq!(q.l_tau, Some(11.0));
        assert_eq!(q.mu, Some(1.0));
        assert_eq!(q.l_smooth, Some(2.0));
        let i100 = Landscape::isotropic(100, 1.0).unwrap();
        assert_eq!(i100.hessian_diag_trace(&[0.5; 100]).unwrap(), 100.0);
        assert_eq!(saddle().hessian_diag_trace(&[0.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn dense_matches_diagonal() {
        let dense = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = Landscape::quadratic(Hessian::Dense(dense)).unwrap();
        let x = [0.3, -1.2];
        let g = q.gradient(&x).unwrap();
        assert!((g[0] - (2.0 * 0.3 - 0.5 * 1.2)).abs() < 1e-15);
        assert!((g[1] - (0.5 * 0.3 - 1.2)).abs() < 1e-15);
        // eigenvalues of [[2, .5], [.5, 1]]
        let disc = (0.25f64 + 0.25).sqrt();
        assert!((q.mu.unwrap() - (1.5 - disc)).abs() < 1e-12);
        assert!((q.l_smooth.unwrap() - (1.5 + disc)).abs() < 1e-12);
        assert!(Landscape::quadratic(Hessian::Dense(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 2.0, 0.0, 1.0]
        )))
        .is_err());
    }

    #[test]
    fn indefinite_quadratic_has_no_optimum() {
        let q = Landscape::quadratic_diag(vec![1.0, -1.0]).unwrap();
        assert_eq!(q.f_star, None);
        assert_eq!(q.mu, None);
        assert!(q.loss_gap(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        for l in [Landscape::rosenbrock(1.0, 100.0).unwrap(), Landscape::rosenbrock(0.5, 3.0).unwrap()] {
            let g = l.gradient(&l.minimizer().unwrap()).unwrap();
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-9);
        }
    }
}
