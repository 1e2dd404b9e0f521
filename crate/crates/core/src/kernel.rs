//! The ReLU random-feature kernel on the sphere and its spectrum.
//!
//! For `phi(x; b) = max(0, b^T x)` with `x, b` uniform on `S^{d-1}` the
//! induced kernel depends only on `t = x^T x'` through the profile
//! `k(t) = sqrt(1 - t^2) + t (pi - arccos t)`, up to a global constant
//! (`E_b[phi phi'] = k(t) / (2 pi d)`). Its eigenfunctions are spherical
//! harmonics, so the operator spectrum is indexed by harmonic degree `n` with
//! multiplicity `N(d, n)`.
//!
//! Two eigenvalue formulas are provided:
//!
//! * [`EigenFormula::ClosedForm`]: `lambda_0` in closed form and
//!   `lambda_n = C(d) Lambda(d, n)` for `n >= 1`.
//! * [`EigenFormula::Integral`]: `lambda_n = (1/Omega_{d-1}) int k(t) P_n(t) (1-t^2)^{(d-3)/2} dt`,
//!   evaluated through the closed-form Gegenbauer integral of `k`.
//!
//! The two do not agree beyond eigenvalue ratios within the `Lambda` family;
//! only the integral form matches quadrature of the defining integral (and
//! hence the empirical Gram spectrum).

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{dot, eval_feature, row_major, sample_sphere, FeatureKind, FeatureSet};
use crate::quadrature::Quadrature;
use crate::special::{ln_factorial, ln_gamma_half, rgamma_half, sphere_area};

const PROFILE_TOL: f64 = 1e-12;

/// `k(t) = sqrt(1 - t^2) + t (pi - arccos t)` on `[-1, 1]`.
///
/// Inputs within `1e-12` outside the interval are clipped.
pub fn kernel_profile(t: f64) -> Result<f64> {
    if !(t.abs() <= 1.0 + PROFILE_TOL) {
        return Err(Error::invalid(format!("kernel profile needs |t| <= 1, got {t}")));
    }
    let t = t.clamp(-1.0, 1.0);
    Ok((1.0 - t * t).sqrt() + t * (PI - t.acos()))
}

/// The profile as a function of the angle `theta = arccos t`.
///
/// Smooth on `[0, pi]`, which is what the quadrature routines integrate.
pub fn kernel_profile_angle(theta: f64) -> f64 {
    theta.sin() + theta.cos() * (PI - theta)
}

/// Monte-Carlo kernel value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// `(1/m) sum_k phi(x; b_k) phi(x'; b_k)`.
pub fn kernel_mc(x: &[f64], x2: &[f64], feats: &FeatureSet) -> Result<McEstimate> {
    let m = feats.count();
    if m == 0 {
        return Err(Error::Empty("kernel_mc needs at least one feature"));
    }
    let a = feats.eval_all(x)?;
    let b = feats.eval_all(x2)?;
    let prods: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
    Ok(mean_stderr(&prods))
}

pub(crate) fn mean_stderr(v: &[f64]) -> McEstimate {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        stderr: (var / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `scale * k(x^T x')` on the unit sphere.
    ReluClosedForm { dim: usize, scale: f64 },
    /// The empirical kernel of a fixed feature sample.
    McEmpirical { features: FeatureSet },
}

impl KernelSpec {
    /// Closed-form ReLU kernel scaled to match `E_b[phi(x;b) phi(x';b)]` exactly.
    pub fn relu(dim: usize) -> Self {
        KernelSpec::ReluClosedForm {
            dim,
            scale: 1.0 / (2.0 * PI * dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::ReluClosedForm { dim, .. } => *dim,
            KernelSpec::McEmpirical { features } => features.input_dim(),
        }
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        match self {
            KernelSpec::ReluClosedForm { dim, scale } => {
                if x.len() != *dim || x2.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        actual: if x.len() != *dim { x.len() } else { x2.len() },
                    });
                }
                Ok(scale * kernel_profile(dot(x, x2).clamp(-1.0, 1.0))?)
            }
            KernelSpec::McEmpirical { features } => Ok(kernel_mc(x, x2, features)?.mean),
        }
    }
}

/// One `(x, x')` pair of a profile-scale fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub cosine: f64,
    pub profile: f64,
    pub mc: McEstimate,
}

/// Least-squares fit of the single constant relating the closed-form profile
/// to the empirical ReLU kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileScaleFit {
    pub scale: f64,
    pub samples: Vec<KernelSample>,
}

impl ProfileScaleFit {
    /// Largest `|mc - scale * profile|` in units of the MC standard error.
    pub fn max_z(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| {
                let resid = (s.mc.mean - self.scale * s.profile).abs();
                if s.mc.stderr > 0.0 {
                    resid / s.mc.stderr
                } else if resid <= 1e-12 * self.scale.abs() * PI {
                    // exact MC value, residual at roundoff of the profile
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Fits `scale` in `E_b[phi phi'] ~ scale * k(x^T x')` from `feature_count`
/// ReLU features at `pair_count` cosines evenly spread over `[-1, 1]`.
pub fn fit_profile_scale(dim: usize, feature_count: usize, pair_count: usize, seed: u64) -> Result<ProfileScaleFit> {
    if dim < 2 || pair_count < 2 {
        return Err(Error::invalid("profile fit needs dim >= 2 and at least two pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = FeatureSet::sample(FeatureKind::Relu, dim, feature_count, rand::Rng::random(&mut rng))?;
    let x: Vec<f64> = sample_sphere(rand::Rng::random(&mut rng), dim, 1)?.iter().copied().collect();
    // A unit vector orthogonal to x.
    let mut w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let proj = dot(&w, &x);
    w.iter_mut().zip(&x).for_each(|(wi, xi)| *wi -= proj * xi);
    let wn = dot(&w, &w).sqrt();
    w.iter_mut().for_each(|wi| *wi /= wn);

    let dirs = row_major(&feats.directions);
    let phi_x: Vec<f64> = dirs
        .chunks_exact(dim)
        .map(|b| eval_feature(FeatureKind::Relu, b, &x))
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(pair_count);
    for i in 0..pair_count {
        let c = -1.0 + 2.0 * i as f64 / (pair_count - 1) as f64;
        let s = (1.0 - c * c).max(0.0).sqrt();
        let x2: Vec<f64> = x.iter().zip(&w).map(|(a, b)| c * a + s * b).collect();
        let prods: Vec<f64> = dirs
            .chunks_exact(dim)
            .zip(&phi_x)
            .map(|(b, px)| Ok(px * eval_feature(FeatureKind::Relu, b, &x2)?))
            .collect::<Result<_>>()?;
        let cosine = dot(&x, &x2).clamp(-1.0, 1.0);
        samples.push(KernelSample {
            cosine,
            profile: kernel_profile(cosine)?,
            mc: mean_stderr(&prods),
        });
    }
    let num: f64 = samples.iter().map(|s| s.mc.mean * s.profile).sum();
    let den: f64 = samples.iter().map(|s| s.profile * s.profile).sum();
    Ok(ProfileScaleFit {
        scale: num / den,
        samples,
    })
}

fn require_dim(d: usize) -> Result<()> {
    if d < 3 {
        return Err(Error::invalid(format!("spherical harmonic formulas need d >= 3, got {d}")));
    }
    Ok(())
}

/// Dimension `N(d, n)` of the degree-`n` spherical harmonics on `S^{d-1}`.
pub fn harmonic_multiplicity(d: usize, n: usize) -> Result<u64> {
    require_dim(d)?;
    if n == 0 {
        return Ok(1);
    }
    // N = (2n+d-2)/n * binom(n+d-3, n-1) = (2n+d-2) (n+d-3)! / (n! (d-2)!)
    let binom = binomial((n + d - 3) as u128, (n - 1) as u128)
        .ok_or_else(|| Error::invalid("harmonic multiplicity overflows"))?;
    let num = (2 * n + d - 2) as u128 * binom;
    u64::try_from(num / n as u128).map_err(|_| Error::invalid("harmonic multiplicity overflows"))
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Gegenbauer polynomial `C_n^{(d-2)/2}(t)` by the three-term recurrence
/// `C_n = [(2n+d-4) t C_{n-1} - (n+d-4) C_{n-2}] / n`.
pub fn gegenbauer(d: usize, n: usize, t: f64) -> Result<f64> {
    require_dim(d)?;
    let df = d as f64;
    let mut prev = 1.0;
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = (df - 2.0) * t;
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf + df - 4.0) * t * cur - (kf + df - 4.0) * prev) / kf;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Constant `c` with `C_n(t) = c P_n(t)`, from the norms of the two families:
/// `c^2 = Omega_{d-2} N(d,n) 2^{3-d} pi Gamma(n+d-2) / (Omega_{d-1} (n + (d-2)/2) n! Gamma((d-2)/2)^2)`.
pub fn legendre_to_gegenbauer(d: usize, n: usize) -> Result<f64> {
    require_dim(d)?;
    let mult = harmonic_multiplicity(d, n)? as f64;
    let df = d as f64;
    let nf = n as f64;
    let ln_sq = sphere_area(d - 2).ln() + mult.ln() + (3.0 - df) * 2f64.ln() + PI.ln()
        + ln_gamma_pos(2 * (n + d - 2))
        - sphere_area(d - 1).ln()
        - (nf + (df - 2.0) / 2.0).ln()
        - ln_factorial(n as u64)
        - 2.0 * ln_gamma_pos(d - 2);
    Ok((0.5 * ln_sq).exp())
}

fn ln_gamma_pos(twice: usize) -> f64 {
    ln_gamma_half(twice as i64).expect("positive argument").0
}

/// Legendre polynomial of dimension `d`, normalized so `P_n(1) = 1`.
pub fn legendre(d: usize, n: usize, t: f64) -> Result<f64> {
    Ok(gegenbauer(d, n, t)? / legendre_to_gegenbauer(d, n)?)
}

/// `lambda_0 = 2 sqrt(pi) d Gamma(d/2) / (Gamma(d) Gamma((d-1)/2))`.
pub fn lambda_zero(d: usize) -> Result<f64> {
    require_dim(d)?;
    let ln = 2f64.ln() + 0.5 * PI.ln() + (d as f64).ln() + ln_gamma_pos(d)
        - ln_gamma_pos(2 * d)
        - ln_gamma_pos(d - 1);
    Ok(ln.exp())
}

/// `ln C(d)` with
/// `C(d) = 2^{(d-5)/2} pi^{(2d+3)/4} d (d-2) [Gamma((d-2)/2) Gamma(d-1) / (Gamma((d-1)/2) Gamma(d/2))]^{1/2}`.
fn ln_c_dim(d: usize) -> f64 {
    let df = d as f64;
    (df - 5.0) / 2.0 * 2f64.ln()
        + (2.0 * df + 3.0) / 4.0 * PI.ln()
        + df.ln()
        + (df - 2.0).ln()
        + 0.5 * (ln_gamma_pos(d - 2) + ln_gamma_pos(2 * (d - 1)) - ln_gamma_pos(d - 1) - ln_gamma_pos(d))
}

pub fn c_dim(d: usize) -> Result<f64> {
    require_dim(d)?;
    Ok(ln_c_dim(d).exp())
}

/// `Lambda(d, n) = 2^{n-1/2} Gamma((n+d-2)/2) / ((n+d-3)! (n+d-1)! Gamma((3-n)/2)^2 Gamma((n+d-1)/2))`.
///
/// The `Gamma((3-n)/2)^{-2}` factor is a reciprocal gamma, so odd `n >= 3` give exactly zero.
pub fn big_lambda(d: usize, n: usize) -> Result<f64> {
    require_dim(d)?;
    Ok(ln_big_lambda_regular(d, n).exp() * rgamma_half(3 - n as i64).powi(2))
}

fn ln_big_lambda_regular(d: usize, n: usize) -> f64 {
    (n as f64 - 0.5) * 2f64.ln() + ln_gamma_pos(n + d - 2)
        - ln_factorial((n + d - 3) as u64)
        - ln_factorial((n + d - 1) as u64)
        - ln_gamma_pos(n + d - 1)
}

/// Closed-form operator eigenvalue of degree `n` (`lambda_0` for `n = 0`,
/// `C(d) Lambda(d, n)` otherwise).
pub fn analytic_eigenvalue(d: usize, n: usize) -> Result<f64> {
    require_dim(d)?;
    if n == 0 {
        return lambda_zero(d);
    }
    Ok((ln_c_dim(d) + ln_big_lambda_regular(d, n)).exp() * rgamma_half(3 - n as i64).powi(2))
}

/// `(n-1)^2 / ((n+d-1)^2 (n+d+1) (n+d))`, the step between consecutive
/// same-parity degrees of the `Lambda` family.
pub fn stage_ratio(d: usize, n: usize) -> f64 {
    let (nf, df) = (n as f64, d as f64);
    (nf - 1.0).powi(2) / ((nf + df - 1.0).powi(2) * (nf + df + 1.0) * (nf + df))
}

/// Closed-form Gegenbauer integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GegenbauerIntegral {
    /// `int (1-t^2)^{(d-2)/2} C_n(t) dt`
    Weight,
    /// `int (1-t^2)^{(d-3)/2} t (pi - arccos t) C_n(t) dt`
    ArcTerm,
    /// `int (1-t^2)^{(d-3)/2} k(t) C_n(t) dt`
    Kernel,
}

impl GegenbauerIntegral {
    pub const ALL: [GegenbauerIntegral; 3] = [Self::Weight, Self::ArcTerm, Self::Kernel];

    pub fn closed_form(self, d: usize, n: usize) -> Result<f64> {
        require_dim(d)?;
        let (nf, df) = (n as f64, d as f64);
        let common = 1.5 * PI.ln() + (df - 2.0).ln() + ln_gamma_pos(n + d - 2) - ln_factorial(n as u64);
        let three = 3 - n as i64;
        Ok(match self {
            Self::Weight => {
                let ln = common + (nf - 2.0) * 2f64.ln() - ln_gamma_pos(n + d + 1);
                ln.exp() * rgamma_half(1 - n as i64) * rgamma_half(three)
            }
            Self::ArcTerm => {
                let poly = nf * nf + (df - 2.0) * nf + 1.0;
                let ln = common + (nf - 3.0) * 2f64.ln() + poly.ln() - (nf + df - 1.0).ln() - ln_gamma_pos(n + d + 1);
                ln.exp() * rgamma_half(three).powi(2)
            }
            Self::Kernel => {
                let ln = common + df.ln() + (nf - 2.0) * 2f64.ln()
                    - 2.0 * (nf + df - 1.0).ln()
                    - ln_gamma_pos(n + d - 1);
                ln.exp() * rgamma_half(three).powi(2)
            }
        })
    }

    /// The same integral by adaptive quadrature in `theta = arccos t`.
    pub fn quadrature(self, d: usize, n: usize, node_count: usize) -> Result<f64> {
        require_dim(d)?;
        let q = quadrature_rule(node_count)?;
        let p = (d - 2) as i32;
        let f = |theta: f64| -> f64 {
            let t = theta.cos();
            let c = gegenbauer(d, n, t).unwrap_or(f64::NAN);
            let s = theta.sin();
            match self {
                // dt = sin(theta) dtheta absorbs one power
                Self::Weight => s.powi(p + 1) * c,
                Self::ArcTerm => s.powi(p) * t * (PI - theta) * c,
                Self::Kernel => s.powi(p) * kernel_profile_angle(theta) * c,
            }
        };
        q.integrate(f, 0.0, PI)
    }
}

fn quadrature_rule(node_count: usize) -> Result<Quadrature> {
    if node_count < 64 {
        return Err(Error::invalid(format!("quadrature needs at least 64 nodes, got {node_count}")));
    }
    Ok(Quadrature::new(node_count, 1e-12))
}

/// `(1/Omega_{d-1}) int_{-1}^1 k(t) P_n(t) (1-t^2)^{(d-3)/2} dt`, evaluated
/// through the closed-form Gegenbauer integral of `k`.
pub fn integral_eigenvalue(d: usize, n: usize) -> Result<f64> {
    let kc = GegenbauerIntegral::Kernel.closed_form(d, n)?;
    Ok(kc / (legendre_to_gegenbauer(d, n)? * sphere_area(d - 1)))
}

/// The same integral as [`integral_eigenvalue`] by adaptive quadrature.
pub fn quadrature_eigenvalue(d: usize, n: usize, node_count: usize) -> Result<f64> {
    require_dim(d)?;
    let q = quadrature_rule(node_count)?;
    let p = (d - 2) as i32;
    let scale = legendre_to_gegenbauer(d, n)?;
    let v = q.integrate(
        |theta| {
            let c = gegenbauer(d, n, theta.cos()).unwrap_or(f64::NAN);
            kernel_profile_angle(theta) * c / scale * theta.sin().powi(p)
        },
        0.0,
        PI,
    )?;
    Ok(v / sphere_area(d - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EigenFormula {
    ClosedForm,
    Integral,
}

/// Degree-indexed operator spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSpectrum {
    pub dim: usize,
    pub formula: EigenFormula,
    /// `lambda_n` for `n = 0..=max_degree`.
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<u64>,
    pub c_dim: f64,
    /// `Lambda(d, n)` (index 0 included for completeness).
    pub big_lambda: Vec<f64>,
    /// `Omega_{d-1}`
    pub area_d1: f64,
    /// `Omega_{d-2}`
    pub area_d2: f64,
}

impl AnalyticSpectrum {
    pub fn new(d: usize, max_degree: usize, formula: EigenFormula) -> Result<Self> {
        require_dim(d)?;
        let eigenvalues = (0..=max_degree)
            .map(|n| match formula {
                EigenFormula::ClosedForm => analytic_eigenvalue(d, n),
                EigenFormula::Integral => integral_eigenvalue(d, n),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: d,
            formula,
            eigenvalues,
            multiplicities: (0..=max_degree)
                .map(|n| harmonic_multiplicity(d, n))
                .collect::<Result<_>>()?,
            c_dim: c_dim(d)?,
            big_lambda: (0..=max_degree).map(|n| big_lambda(d, n)).collect::<Result<_>>()?,
            area_d1: sphere_area(d - 1),
            area_d2: sphere_area(d - 2),
        })
    }

    /// Eigenvalues of `f -> int k(x^T x') f(x') dpi(x')` under the uniform
    /// probability measure. For the integral formula this is `Omega_{d-2}`
    /// times the stored value (the Funk–Hecke constant); the closed-form family
    /// has no consistent conversion and is returned unchanged.
    pub fn probability_eigenvalues(&self) -> Vec<f64> {
        match self.formula {
            EigenFormula::Integral => self.eigenvalues.iter().map(|v| v * self.area_d2).collect(),
            EigenFormula::ClosedForm => self.eigenvalues.clone(),
        }
    }

    /// The largest `count` probability-measure eigenvalues, each repeated by
    /// its multiplicity, in descending order.
    pub fn flat(&self, count: usize) -> Vec<f64> {
        let mut all: Vec<f64> = Vec::new();
        for (v, &mult) in self.probability_eigenvalues().iter().zip(&self.multiplicities) {
            let take = (mult as usize).min(count);
            all.extend(std::iter::repeat_n(*v, take));
        }
        all.sort_by(|a, b| b.total_cmp(a));
        all.truncate(count);
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn profile_endpoints() {
        assert_eq!(kernel_profile(1.0).unwrap(), PI);
        assert_eq!(kernel_profile(0.0).unwrap(), 1.0);
        assert_eq!(kernel_profile(-1.0).unwrap(), 0.0);
        assert!(kernel_profile(1.0 + 1e-13).is_ok());
        assert!(kernel_profile(1.1).is_err());
        assert!(kernel_profile(f64::NAN).is_err());
    }

    #[test]
    fn profile_angle_agrees() {
        for i in 0..=20 {
            let th = PI * i as f64 / 20.0;
            assert!((kernel_profile_angle(th) - kernel_profile(th.cos()).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn multiplicities() {
        assert_eq!(harmonic_multiplicity(3, 0).unwrap(), 1);
        assert_eq!(harmonic_multiplicity(7, 0).unwrap(), 1);
        // In three dimensions the degree-n harmonics have dimension 2n + 1.
        for n in 1..10 {
            assert_eq!(harmonic_multiplicity(3, n).unwrap(), 2 * n as u64 + 1);
        }
        // d = 4: (n+1)^2
        for n in 1..10 {
            assert_eq!(harmonic_multiplicity(4, n).unwrap(), (n as u64 + 1).pow(2));
        }
        assert_eq!(harmonic_multiplicity(10, 1).unwrap(), 10);
        assert_eq!(harmonic_multiplicity(10, 2).unwrap(), 54);
        assert!(harmonic_multiplicity(2, 1).is_err());
    }

    #[test]
    fn gegenbauer_low_orders() {
        for d in [3, 5, 10] {
            for &t in &[-0.7, 0.0, 0.3, 1.0] {
                assert_eq!(gegenbauer(d, 0, t).unwrap(), 1.0);
                assert!((gegenbauer(d, 1, t).unwrap() - (d as f64 - 2.0) * t).abs() < 1e-15);
                // second-order coefficient of (1 - 2 s t + s^2)^{-a}: a(a+1) 2 t^2 - a
                let a = (d as f64 - 2.0) / 2.0;
                let c2 = 2.0 * a * (a + 1.0) * t * t - a;
                assert!((gegenbauer(d, 2, t).unwrap() - c2).abs() < 1e-13);
            }
        }
        assert!(gegenbauer(2, 1, 0.5).is_err());
    }

    #[test]
    fn legendre_is_one_at_one() {
        // The conversion constant equals C_n(1) = binom(n+d-3, n).
        for d in [3, 4, 5, 10] {
            for n in 0..9 {
                let p = legendre(d, n, 1.0).unwrap();
                assert!((p - 1.0).abs() < 1e-12, "d={d} n={n} P(1)={p}");
            }
        }
        // classical Legendre at d = 3
        let t: f64 = 0.4;
        assert!((legendre(3, 2, t).unwrap() - 0.5 * (3.0 * t * t - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn legendre_orthogonality_and_norm() {
        let q = Quadrature::new(64, 1e-13);
        for d in [3, 5, 10] {
            let p = (d - 2) as i32;
            for n in 0..=6 {
                for m in 0..=6 {
                    let v = q
                        .integrate(
                            |th| legendre(d, n, th.cos()).unwrap() * legendre(d, m, th.cos()).unwrap() * th.sin().powi(p),
                            0.0,
                            PI,
                        )
                        .unwrap();
                    if n == m {
                        let mult = harmonic_multiplicity(d, n).unwrap() as f64;
                        let expect = sphere_area(d - 1) / (sphere_area(d - 2) * mult);
                        assert!(rel(v, expect) < 1e-8, "d={d} n={n}: {v} vs {expect}");
                    } else {
                        assert!(v.abs() < 1e-10, "d={d} n={n} m={m}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_zero_d3() {
        assert!(rel(lambda_zero(3).unwrap(), 1.5 * PI) < 1e-14);
    }

    #[test]
    fn odd_degrees_vanish() {
        for d in [3, 4, 10, 25] {
            for n in [3, 5, 7, 9, 11] {
                assert_eq!(analytic_eigenvalue(d, n).unwrap(), 0.0);
                assert_eq!(integral_eigenvalue(d, n).unwrap(), 0.0);
            }
            assert!(analytic_eigenvalue(d, 1).unwrap() > 0.0);
        }
    }

    #[test]
    fn closed_form_ratio_for_positive_degrees() {
        for d in [3, 10] {
            for n in [1, 2, 4, 6] {
                let a = analytic_eigenvalue(d, n).unwrap();
                let b = analytic_eigenvalue(d, n + 2).unwrap();
                let r = stage_ratio(d, n);
                if r == 0.0 {
                    assert_eq!(b, 0.0);
                } else {
                    assert!(rel(b / a, r) < 1e-12, "d={d} n={n}");
                }
            }
        }
    }

    #[test]
    fn stage_inequality() {
        // lambda_0 comes from its own closed form and is not in the Lambda chain;
        // lambda_2 / lambda_0 exceeds 1/d^2 at d = 4 and 5.
        for d in [3, 5, 10] {
            for n in 1..12 {
                let a = analytic_eigenvalue(d, n).unwrap();
                let b = analytic_eigenvalue(d, n + 2).unwrap();
                assert!(b <= a / ((n + d) as f64).powi(2) * (1.0 + 1e-12), "d={d} n={n}");
                assert!(a >= 0.0);
            }
        }
    }

    #[test]
    fn gegenbauer_integrals_match_quadrature() {
        for d in [3, 5, 10] {
            for n in 0..=8 {
                for which in GegenbauerIntegral::ALL {
                    let c = which.closed_form(d, n).unwrap();
                    let q = which.quadrature(d, n, 64).unwrap();
                    if c == 0.0 {
                        assert!(q.abs() < 1e-10, "{which:?} d={d} n={n}: {q}");
                    } else {
                        assert!(rel(q, c) < 1e-8, "{which:?} d={d} n={n}: {q} vs {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn integral_eigenvalue_matches_quadrature() {
        for d in [3, 5, 10] {
            for n in 0..=8 {
                let a = integral_eigenvalue(d, n).unwrap();
                let q = quadrature_eigenvalue(d, n, 64).unwrap();
                if a == 0.0 {
                    assert!(q.abs() < 1e-10);
                } else {
                    assert!(rel(q, a) < 1e-8, "d={d} n={n}: {q} vs {a}");
                }
            }
        }
        assert!(quadrature_eigenvalue(3, 0, 32).is_err());
    }

    #[test]
    fn probability_eigenvalue_is_profile_average() {
        // Degree 0 under the uniform measure is E_{x'} k(x^T x'); for d = 3 the
        // cosine is uniform on [-1, 1], so the average is (1/2) int k = 3 pi / 8.
        let s = AnalyticSpectrum::new(3, 4, EigenFormula::Integral).unwrap();
        assert!(rel(s.probability_eigenvalues()[0], 3.0 * PI / 8.0) < 1e-12);
    }

    #[test]
    fn flat_spectrum_expands_multiplicities() {
        let s = AnalyticSpectrum::new(3, 6, EigenFormula::Integral).unwrap();
        let f = s.flat(9);
        let pe = s.probability_eigenvalues();
        assert_eq!(f.len(), 9);
        assert_eq!(f[0], pe[0]);
        assert!(f[1..4].iter().all(|&v| v == pe[1]));
        assert!(f[4..9].iter().all(|&v| v == pe[2]));
    }

    #[test]
    fn mc_kernel_diagonal() {
        let d = 10;
        let feats = FeatureSet::sample(FeatureKind::Relu, d, 100_000, 5).unwrap();
        let x: Vec<f64> = sample_sphere(6, d, 1).unwrap().iter().copied().collect();
        let est = kernel_mc(&x, &x, &feats).unwrap();
        // E[(b^T x)^2 1{b^T x > 0}] = E[(b^T x)^2] / 2 = 1 / (2d)
        assert!((est.mean - 0.05).abs() < 5.0 * est.stderr, "{est:?}");
        let ind = FeatureSet {
            kind: FeatureKind::Indicator,
            ..feats
        };
        let e2 = kernel_mc(&x, &x, &ind).unwrap();
        assert!((e2.mean - 0.5).abs() < 5.0 * e2.stderr);
        let empty = FeatureSet {
            directions: nalgebra::DMatrix::zeros(0, d),
            kind: FeatureKind::Relu,
        };
        assert!(kernel_mc(&x, &x, &empty).is_err());
    }

    #[test]
    fn mc_kernel_shape_ratio() {
        // kernel_mc(x, x') / kernel_mc(x, x) against k(t) / pi, delta-method standard error.
        let d = 6;
        let feats = FeatureSet::sample(FeatureKind::Relu, d, 100_000, 8).unwrap();
        let pts = sample_sphere(9, d, 4).unwrap();
        let rows = row_major(&pts);
        let x = &rows[0..d];
        let fx = feats.eval_all(x).unwrap();
        let diag: Vec<f64> = fx.iter().map(|v| v * v).collect();
        let bmean = diag.iter().sum::<f64>() / diag.len() as f64;
        for x2 in rows.chunks_exact(d).skip(1) {
            let f2 = feats.eval_all(x2).unwrap();
            let a: Vec<f64> = fx.iter().zip(&f2).map(|(u, v)| u * v).collect();
            let amean = a.iter().sum::<f64>() / a.len() as f64;
            let r = amean / bmean;
            let lin: Vec<f64> = a.iter().zip(&diag).map(|(ai, bi)| ai - r * bi).collect();
            let se = mean_stderr(&lin).stderr / bmean;
            let expect = kernel_profile(dot(x, x2)).unwrap() / PI;
            assert!((r - expect).abs() < 5.0 * se, "ratio {r} vs {expect} (se {se})");
        }
    }

    #[test]
    fn closed_form_spec_matches_expectation() {
        let k = KernelSpec::relu(4);
        let x = [1.0, 0.0, 0.0, 0.0];
        assert!((k.eval(&x, &x).unwrap() - 1.0 / 8.0).abs() < 1e-15);
        assert!(k.eval(&x, &[1.0, 0.0]).is_err());
    }
}
