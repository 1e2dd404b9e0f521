//! Gram and kernel matrices, their spectra, and the Marchenko–Pastur model of
//! the smallest Gram eigenvalue.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, Dataset, FeatureKind, FeatureSet, TargetSpec};
use crate::kernel::{AnalyticSpectrum, KernelSpec};
use crate::quadrature::Quadrature;

/// `G = Phi Phi^T / (nm)`.
pub fn gram_matrix(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = phi.shape();
    phi * phi.transpose() / (n as f64 * m as f64)
}

/// `K_ij = k(x_i, x_j) / n`.
pub fn kernel_matrix(data: &Dataset, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = data.len();
    if data.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            actual: data.dim(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.point(i)).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&rows[i], &rows[j])? / n as f64;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumSource {
    Gram,
    KernelMatrix,
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum {
    pub source: SpectrumSource,
    /// Descending. For the Gram matrix only the `min(n, m)` possibly nonzero
    /// eigenvalues are kept.
    pub eigenvalues: Vec<f64>,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl SymmetricSpectrum {
    pub fn smallest(&self) -> Option<f64> {
        self.eigenvalues.last().copied()
    }
}

/// Seeds for the data and feature draws of one spectrum cell.
fn cell_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random(), rng.random())
}

/// Spectrum of `G` for `n` sphere points and `m = round(gamma n)` features.
///
/// The eigenvalues are computed on whichever of `Phi Phi^T` and `Phi^T Phi`
/// is smaller; their nonzero spectra coincide.
pub fn gram_spectrum(seed: u64, n: usize, m: usize, d: usize, kind: FeatureKind) -> Result<(SymmetricSpectrum, Dataset)> {
    let (ds, fs) = cell_seeds(seed);
    let data = Dataset::sphere(ds, d, n, &TargetSpec::constant())?;
    let feats = FeatureSet::sample(kind, d, m, fs)?;
    let phi = build_feature_matrix(&data, &feats)?;
    let small = if n <= m {
        phi.clone() * phi.transpose()
    } else {
        phi.transpose() * &phi
    } / (n as f64 * m as f64);
    Ok((
        SymmetricSpectrum {
            source: SpectrumSource::Gram,
            eigenvalues: symmetric_eigenvalues(&small)?,
            gamma: Some(m as f64 / n as f64),
            seed,
            n,
            m,
            d,
        },
        data,
    ))
}

pub fn kernel_spectrum(data: &Dataset, kernel: &KernelSpec, seed: u64) -> Result<SymmetricSpectrum> {
    let k = kernel_matrix(data, kernel)?;
    Ok(SymmetricSpectrum {
        source: SpectrumSource::KernelMatrix,
        eigenvalues: symmetric_eigenvalues(&k)?,
        gamma: None,
        seed,
        n: data.len(),
        m: 0,
        d: data.dim(),
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `((1 - sqrt(gamma))^2, (1 + sqrt(gamma))^2)`
pub fn mp_edges(gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    let s = gamma.sqrt();
    Ok(((1.0 - s).powi(2), (1.0 + s).powi(2)))
}

/// Point mass at zero, `max(0, 1 - 1/gamma)`.
pub fn mp_atom(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok((1.0 - 1.0 / gamma).max(0.0))
}

/// Continuous part of the Marchenko–Pastur law with ratio `gamma`:
/// `sqrt((l+ - x)(x - l-)) / (2 pi gamma x)` on `[l-, l+]`.
pub fn mp_density(gamma: f64, x: f64) -> Result<f64> {
    let (lo, hi) = mp_edges(gamma)?;
    if !(x > lo && x < hi) || x <= 0.0 {
        return Ok(0.0);
    }
    Ok(((hi - x) * (x - lo)).sqrt() / (2.0 * std::f64::consts::PI * gamma * x))
}

/// Mass of the continuous part, integrated in the angle
/// `x = l- + 2r sin^2(theta/2)` (`r` the half-width) which removes the edge singularities.
pub fn mp_continuous_mass(gamma: f64) -> Result<f64> {
    let (lo, hi) = mp_edges(gamma)?;
    let r = (hi - lo) / 2.0;
    let q = Quadrature::new(64, 1e-13);
    q.integrate(
        |th| {
            let x = lo + 2.0 * r * (th / 2.0).sin().powi(2);
            let s = r * th.sin();
            if x <= 0.0 {
                0.0
            } else {
                s * s / (2.0 * std::f64::consts::PI * gamma * x)
            }
        },
        0.0,
        std::f64::consts::PI,
    )
}

/// `(1 - sqrt(gamma))^2` for `gamma <= 1`, `(1 - sqrt(1/gamma))^2` above.
pub fn mp_shape(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let g = if gamma <= 1.0 { gamma } else { 1.0 / gamma };
    Ok((1.0 - g.sqrt()).powi(2))
}

pub fn predict_smallest(gamma: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::invalid("calibration constant must be positive"));
    }
    Ok(c * mp_shape(gamma)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub c: f64,
    /// `sum (lambda - c shape)^2`
    pub residual: f64,
}

/// Least-squares `c` in `lambda ~ c * shape(gamma)`.
pub fn calibrate_c(measurements: &[(f64, f64)]) -> Result<Calibration> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(g, l) in measurements {
        let s = mp_shape(g)?;
        num += s * l;
        den += s * s;
    }
    if den == 0.0 {
        return Err(Error::invalid("calibration needs a measurement with gamma != 1"));
    }
    let c = num / den;
    let residual = measurements
        .iter()
        .map(|&(g, l)| (l - c * mp_shape(g).unwrap_or(0.0)).powi(2))
        .sum();
    Ok(Calibration { c, residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpModel {
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
    pub atom_mass: f64,
    pub calibration: Option<f64>,
}

impl MpModel {
    pub fn new(gamma: f64, calibration: Option<f64>) -> Result<Self> {
        let (lower, upper) = mp_edges(gamma)?;
        Ok(Self {
            gamma,
            lower,
            upper,
            atom_mass: mp_atom(gamma)?,
            calibration,
        })
    }

    pub fn predicted_smallest(&self) -> Option<f64> {
        self.calibration.and_then(|c| predict_smallest(self.gamma, c).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankComparison {
    pub rank: usize,
    pub gram: f64,
    pub kernel: f64,
    pub analytic: f64,
    pub rel_gram_kernel: f64,
    pub rel_gram_analytic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSummary {
    pub min: f64,
    /// Eigenvalues below `1e-6 * lambda_1`.
    pub count_tiny: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    pub top: Vec<RankComparison>,
    pub gram_tail: TailSummary,
    pub kernel_tail: TailSummary,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn tail(ev: &[f64]) -> TailSummary {
    let top = ev[0];
    TailSummary {
        min: *ev.last().expect("non-empty"),
        count_tiny: ev.iter().filter(|&&v| v < 1e-6 * top).count(),
    }
}

/// Compares the top 20 eigenvalues of the three spectra. The analytic
/// spectrum is expanded by multiplicity and multiplied by `scale`.
pub fn spectrum_report(
    gram: &SymmetricSpectrum,
    kernel: &SymmetricSpectrum,
    analytic: &AnalyticSpectrum,
    scale: f64,
) -> Result<SpectrumComparison> {
    if gram.eigenvalues.is_empty() || kernel.eigenvalues.is_empty() {
        return Err(Error::Empty("spectrum_report needs non-empty spectra"));
    }
    if gram.d != analytic.dim || kernel.d != analytic.dim {
        return Err(Error::DimensionMismatch {
            expected: analytic.dim,
            actual: gram.d,
        });
    }
    let count = 20.min(gram.eigenvalues.len()).min(kernel.eigenvalues.len());
    let flat = analytic.flat(count);
    let top = (0..count)
        .map(|i| {
            let a = flat.get(i).copied().unwrap_or(0.0) * scale;
            RankComparison {
                rank: i + 1,
                gram: gram.eigenvalues[i],
                kernel: kernel.eigenvalues[i],
                analytic: a,
                rel_gram_kernel: rel(gram.eigenvalues[i], kernel.eigenvalues[i]),
                rel_gram_analytic: rel(gram.eigenvalues[i], a),
            }
        })
        .collect();
    Ok(SpectrumComparison {
        top,
        gram_tail: tail(&gram.eigenvalues),
        kernel_tail: tail(&kernel.eigenvalues),
    })
}
