//! Special functions behind the Student-t noise analysis.
//!
//! The shifted Student-t CDF `Ξ_ν(x) = F_ν(x) − ½` drives the drift of the
//! SignSGD diffusion, `ℓ_ν = 2Ξ'_ν(0)` is its small-signal slope, and
//! [`PhaseConstants`] hold the saturation threshold and the secant/tangent
//! lines that sandwich `2Ξ_ν` between `x = 1` and `x = ψ_ν`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Degrees of freedom of a Student-t law; `Infinite` is the Gaussian limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dof {
    Finite(f64),
    Infinite,
}

impl Dof {
    pub fn new(nu: f64) -> Result<Dof> {
        if nu == f64::INFINITY {
            Ok(Dof::Infinite)
        } else if nu.is_finite() && nu > 0.0 {
            Ok(Dof::Finite(nu))
        } else {
            Err(Error::Domain {
                func: "Dof::new",
                msg: format!("degrees of freedom must be positive, got {nu}"),
            })
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Dof::Finite(nu) => nu,
            Dof::Infinite => f64::INFINITY,
        }
    }

    /// Variance multiplier `ν/(ν−2)`; `None` when the variance is infinite.
    pub fn variance_factor(self) -> Option<f64> {
        match self {
            Dof::Infinite => Some(1.0),
            Dof::Finite(nu) if nu > 2.0 => Some(nu / (nu - 2.0)),
            Dof::Finite(_) => None,
        }
    }

    fn check(self, func: &'static str) -> Result<()> {
        match self {
            Dof::Finite(nu) if !(nu.is_finite() && nu > 0.0) => Err(Error::Domain {
                func,
                msg: format!("degrees of freedom must be positive, got {nu}"),
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dof::Finite(nu) => write!(f, "{nu}"),
            Dof::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Dof {
    type Err = Error;

    fn from_str(s: &str) -> Result<Dof> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Dof::Infinite),
            other => {
                let nu: f64 = other.parse().map_err(|_| Error::Domain {
                    func: "Dof::from_str",
                    msg: format!("cannot parse degrees of freedom from `{s}`"),
                })?;
                Dof::new(nu)
            }
        }
    }
}

impl Serialize for Dof {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Dof::Finite(nu) => s.serialize_f64(*nu),
            Dof::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Dof {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Dof, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(nu) => Dof::new(nu),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::Domain {
            func: "log_gamma",
            msg: format!("argument must be positive and finite, got {x}"),
        });
    }
    Ok(libm::lgamma(x))
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
        return Err(Error::Domain {
            func: "regularized_incomplete_beta",
            msg: format!("shape parameters must be positive, got a={a}, b={b}"),
        });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain {
            func: "regularized_incomplete_beta",
            msg: format!("x must lie in [0, 1], got {x}"),
        });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    Ok(inc_beta(a, b, x))
}

fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    statrs::function::beta::beta_reg(a, b, x).clamp(0.0, 1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn check_x(func: &'static str, x: f64) -> Result<()> {
    if x.is_nan() {
        return Err(Error::Domain {
            func,
            msg: "argument is NaN".into(),
        });
    }
    Ok(())
}

/// Student-t CDF `F_ν(x)`; `ν = ∞` is the standard normal CDF.
pub fn student_t_cdf(x: f64, nu: Dof) -> Result<f64> {
    check_x("student_t_cdf", x)?;
    nu.check("student_t_cdf")?;
    Ok(match nu {
        Dof::Infinite => normal_cdf(x),
        Dof::Finite(nu) => {
            let x2 = x * x;
            if x < 0.0 && x2 >= nu {
                // lower tail directly, no cancellation
                0.5 * inc_beta(0.5 * nu, 0.5, 1.0 / (1.0 + x2 / nu))
            } else {
                0.5 + xi_finite(x, nu)
            }
        }
    })
}

/// Student-t density; `ν = ∞` is the standard normal density.
pub fn student_t_pdf(x: f64, nu: Dof) -> Result<f64> {
    check_x("student_t_pdf", x)?;
    nu.check("student_t_pdf")?;
    Ok(t_pdf(x, nu))
}

fn t_pdf(x: f64, nu: Dof) -> f64 {
    match nu {
        Dof::Infinite => normal_pdf(x),
        Dof::Finite(nu) => {
            let half = 0.5 * ell_finite(nu);
            half * (-(nu + 1.0) / 2.0 * (x * x / nu).ln_1p()).exp()
        }
    }
}

/// `Ξ_ν(x) = F_ν(x) − ½`, odd and strictly increasing, valued in `(−½, ½)`.
pub fn xi_nu(x: f64, nu: Dof) -> Result<f64> {
    check_x("xi_nu", x)?;
    nu.check("xi_nu")?;
    Ok(xi(x, nu))
}

/// Unchecked `Ξ_ν`, for hot loops whose arguments were validated upstream.
pub(crate) fn xi(x: f64, nu: Dof) -> f64 {
    match nu {
        Dof::Infinite => 0.5 * libm::erf(x * FRAC_1_SQRT_2),
        Dof::Finite(nu) => xi_finite(x, nu),
    }
}

fn xi_finite(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    // P(|T| ≤ |x|) = I_{x²/(ν+x²)}(½, ν/2); use the complement where it is the small side
    let half_mass = if x2 < nu {
        0.5 * inc_beta(0.5, 0.5 * nu, x2 / (nu + x2))
    } else {
        0.5 - 0.5 * inc_beta(0.5 * nu, 0.5, 1.0 / (1.0 + x2 / nu))
    };
    half_mass.copysign(x)
}

/// `ℓ_ν = 2Γ((ν+1)/2) / (√(πν) Γ(ν/2))`, twice the t-density at the origin.
pub fn ell_nu(nu: Dof) -> Result<f64> {
    nu.check("ell_nu")?;
    Ok(match nu {
        Dof::Infinite => (2.0 / PI).sqrt(),
        Dof::Finite(nu) => ell_finite(nu),
    })
}

fn ell_finite(nu: f64) -> f64 {
    use libm::lgamma as ln_gamma;
    2.0 * (ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)).exp() / (PI * nu).sqrt()
}

/// Cap on the saturation threshold ψ_ν.
pub const PSI_CAP: f64 = 1e6;

/// Default saturation tolerance ε in `2Ξ_ν(ψ) = 1 − ε`.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Thresholds and line parameters of the three SignSGD phases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseConstants {
    pub nu: Dof,
    pub epsilon: f64,
    /// Saturation threshold: `2Ξ_ν(ψ) = 1 − ε`.
    pub psi: f64,
    /// Slope of the secant through `(1, 2Ξ_ν(1))` and `(ψ, 2Ξ_ν(ψ))`.
    pub m: f64,
    /// Secant intercept.
    pub q1: f64,
    /// Intercept of the tangent to `2Ξ_ν` with slope `m`.
    pub q2: f64,
    pub q_hat: f64,
    pub ell: f64,
}

impl PhaseConstants {
    /// Point `x* ∈ [1, ψ]` where the tangent slope equals `m`.
    pub fn tangent_point(&self) -> f64 {
        tangent_point(self.nu, self.m, self.psi)
    }
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, mut below: impl FnMut(f64) -> bool) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn tangent_point(nu: Dof, m: f64, psi: f64) -> f64 {
    bisect(1.0, psi, 1e-12, |x| 2.0 * t_pdf(x, nu) > m)
}

/// Phase constants for degrees of freedom `nu` and saturation tolerance `epsilon`.
pub fn phase_constants(nu: Dof, epsilon: f64) -> Result<PhaseConstants> {
    nu.check("phase_constants")?;
    if !(epsilon > 0.0 && epsilon <= 0.1) {
        return Err(Error::Domain {
            func: "phase_constants",
            msg: format!("epsilon must lie in (0, 0.1], got {epsilon}"),
        });
    }
    let target = 1.0 - epsilon;
    let g = |x: f64| 2.0 * xi(x, nu);
    let mut hi = 2.0;
    while g(hi) < target {
        if hi >= PSI_CAP {
            return Err(Error::Threshold(format!(
                "saturation level 1 − {epsilon} needs ψ > {PSI_CAP:e} for ν = {nu}"
            )));
        }
        hi = (2.0 * hi).min(PSI_CAP);
    }
    let psi = bisect(1.0, hi, 1e-10, |x| g(x) < target);
    let g1 = g(1.0);
    let gpsi = g(psi);
    let m = (gpsi - g1) / (psi - 1.0);
    let q1 = g1 - m;
    let xs = tangent_point(nu, m, psi);
    let q2 = g(xs) - m * xs;
    Ok(PhaseConstants {
        nu,
        epsilon,
        psi,
        m,
        q1,
        q2,
        q_hat: q1.max(q2),
        ell: ell_nu(nu)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2 as SQRT2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn log_gamma_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-14);
        assert!((log_gamma(10.0).unwrap() - 362880f64.ln()).abs() < 1e-12);
        // reference values from a 40-digit evaluation
        let refs = [
            (0.5, 0.572_364_942_924_700_087_07),
            (1.5, -0.120_782_237_635_245_222_35),
            (3.7, 1.428_072_326_665_388_129_2),
            (25.25, 55.585_686_044_869_429_708),
            (199.5, 855.286_389_273_452_573_79),
            (0.75, 0.203_280_951_431_295_371_48),
            (123.456, 469.605_547_129_929_483_5),
        ];
        for (x, want) in refs {
            let got = log_gamma(x).unwrap();
            assert!((got - want).abs() <= 1e-12, "lnΓ({x}) = {got}, want {want}");
        }
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.0).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn incomplete_beta_values() {
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!((regularized_incomplete_beta(0.5, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-14);
        let refs = [
            (0.5, 1.5, 0.3, 0.660_745_949_143_545_146_34),
            (2.0, 3.0, 0.4, 0.5248),
            (0.5, 0.5, 0.9, 0.795_167_235_300_866_571_91),
            (4.0, 0.5, 0.99, 0.783_424_406_249_999_905_74),
            (10.0, 20.0, 0.35, 0.592_386_663_663_905_002_46),
            (0.5, 32.0, 0.01, 0.575_644_017_941_336_924_44),
            (32.0, 0.5, 0.999, 0.800_995_394_855_223_325_08),
        ];
        for (a, b, x, want) in refs {
            let got = regularized_incomplete_beta(a, b, x).unwrap();
            assert!(((got - want) / want).abs() <= 1e-10, "I({x};{a},{b}) = {got}, want {want}");
        }
        assert!(regularized_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(regularized_incomplete_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn t_cdf_values() {
        for nu in [Dof::Finite(1.0), Dof::Finite(2.5), Dof::Infinite] {
            assert_eq!(student_t_cdf(0.0, nu).unwrap(), 0.5);
        }
        assert!((student_t_cdf(1.0, Dof::Finite(1.0)).unwrap() - 0.75).abs() < 1e-14);
        // ν = 2 closed form
        let x = SQRT2;
        let want = 0.5 + x / (2.0 * SQRT2 * (1.0 + x * x / 2.0).sqrt());
        assert!((student_t_cdf(x, Dof::Finite(2.0)).unwrap() - want).abs() < 1e-13);
        let refs = [
            (2.0, 3.0, 0.930_337_015_720_578_411_58),
            (-1.3, 5.0, 0.125_150_317_085_338_611_97),
            (0.7, 1.5, 0.711_780_879_558_656_679_92),
            (10.0, 2.0, 0.995_073_771_488_337_154_58),
            (-4.0, 8.0, 0.001_974_886_401_722_662_905_1),
            (3.0, 64.0, 0.998_078_004_067_039_610_24),
            (0.25, 0.7, 0.571_882_767_435_126_308_99),
        ];
        for (x, nu, want) in refs {
            let got = student_t_cdf(x, Dof::Finite(nu)).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "F_{nu}({x}) = {got}, want {want}");
        }
        assert!(student_t_cdf(f64::NAN, Dof::Infinite).is_err());
        assert!(student_t_cdf(1.0, Dof::Finite(-1.0)).is_err());
    }

    #[test]
    fn xi_values() {
        assert_eq!(xi_nu(0.0, Dof::Finite(3.0)).unwrap(), 0.0);
        assert!((xi_nu(1.0, Dof::Finite(1.0)).unwrap() - 0.25).abs() < 1e-14);
        assert!(
            (xi_nu(-1.0, Dof::Finite(1.0)).unwrap() + 0.25).abs() < 1e-14,
            "Cauchy is odd"
        );
        let x = 1e6;
        assert!(xi_nu(x, Dof::Finite(1.0)).unwrap() < 0.5);
        assert!((xi_nu(40.0, Dof::Infinite).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ell_footnote_values() {
        assert!(close(ell_nu(Dof::Finite(1.0)).unwrap(), 2.0 / PI, 1e-12));
        assert!(close(ell_nu(Dof::Finite(2.0)).unwrap(), FRAC_1_SQRT_2, 1e-12));
        assert!(close(ell_nu(Dof::Infinite).unwrap(), (2.0 / PI).sqrt(), 1e-12));
        let l: Vec<f64> = [1.0, 2.0, 3.0, 8.0, 64.0]
            .iter()
            .map(|&nu| ell_nu(Dof::Finite(nu)).unwrap())
            .collect();
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert!(l[4] < ell_nu(Dof::Infinite).unwrap());
    }

    #[test]
    fn phase_constants_gaussian_and_cauchy() {
        let pc = phase_constants(Dof::Infinite, 0.01).unwrap();
        assert!((pc.psi - 2.575_829_303_549).abs() < 1e-8, "psi = {}", pc.psi);
        let pc1 = phase_constants(Dof::Finite(1.0), 0.01).unwrap();
        assert!((pc1.psi - (0.495 * PI).tan()).abs() < 1e-8, "psi = {}", pc1.psi);
        for pc in [pc, pc1] {
            assert!(pc.m > 0.0 && pc.m < pc.ell);
            assert!(pc.q2 >= pc.q1);
            assert_eq!(pc.q_hat, pc.q2.max(pc.q1));
            assert!((pc.q1 - (2.0 * xi(1.0, pc.nu) - pc.m)).abs() < 1e-15);
            assert!(2.0 * xi(pc.psi, pc.nu) >= 1.0 - pc.epsilon - 1e-9);
        }
    }

    #[test]
    fn phase_constants_errors() {
        assert!(phase_constants(Dof::Infinite, 0.0).is_err());
        assert!(phase_constants(Dof::Infinite, 0.2).is_err());
        // very fat tails saturate too slowly for a tiny tolerance
        assert!(matches!(
            phase_constants(Dof::Finite(0.3), 1e-3),
            Err(Error::Threshold(_))
        ));
    }

    #[test]
    fn dof_parsing() {
        assert_eq!("inf".parse::<Dof>().unwrap(), Dof::Infinite);
        assert_eq!("3".parse::<Dof>().unwrap(), Dof::Finite(3.0));
        assert!("-2".parse::<Dof>().is_err());
        let d: Dof = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(d, Dof::Infinite);
        let d: Dof = serde_json::from_str("2.5").unwrap();
        assert_eq!(d, Dof::Finite(2.5));
        assert!(serde_json::from_str::<Dof>("0").is_err());
    }
}
