//! Closed-form gradient-flow trajectories of the least-squares random
//! feature problem.
//!
//! With `Phi = U Sigma V^T` and flow `da/dt = -Phi^T (Phi a - y) / (mn)` from
//! `a(0) = 0`, each mode evolves independently:
//! `a(t) = sum_i (1 - exp(-lambda_i^2 t / (mn))) / lambda_i * (u_i^T y) v_i`.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, Dataset, FeatureMatrix, FeatureSet, TargetSpec};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Flow time, with the `t = infinity` limit as an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Time {
    Finite(f64),
    Infinity,
}

impl Time {
    pub fn value(self) -> f64 {
        match self {
            Time::Finite(t) => t,
            Time::Infinity => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Time::Finite(_))
    }

    fn validate(self) -> Result<Self> {
        match self {
            Time::Finite(t) if t.is_nan() || t < 0.0 => Err(Error::NegativeTime(t)),
            Time::Finite(t) if t.is_infinite() => Ok(Time::Infinity),
            other => Ok(other),
        }
    }
}

impl From<f64> for Time {
    fn from(t: f64) -> Self {
        if t == f64::INFINITY {
            Time::Infinity
        } else {
            Time::Finite(t)
        }
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Time::Finite(t) => write!(f, "{t:.16e}"),
            Time::Infinity => f.write_str("inf"),
        }
    }
}

/// Log-spaced grid `10^start ..= 10^stop` with `per_decade` points per decade,
/// optionally followed by the `t = infinity` sentinel.
pub fn log_time_grid(start_exp: i32, stop_exp: i32, per_decade: usize, with_infinity: bool) -> Result<Vec<Time>> {
    if stop_exp < start_exp || per_decade == 0 {
        return Err(Error::invalid("time grid needs stop >= start and per_decade >= 1"));
    }
    let steps = (stop_exp - start_exp) as usize * per_decade;
    let mut grid: Vec<Time> = (0..=steps)
        .map(|k| Time::Finite(10f64.powf(start_exp as f64 + k as f64 / per_decade as f64)))
        .collect();
    if with_infinity {
        grid.push(Time::Infinity);
    }
    Ok(grid)
}

/// Thin SVD of an `n x m` feature matrix, singular values descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// `n x r`
    pub left: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `m x r`
    pub right: DMatrix<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl SpectralDecomposition {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `lambda_i / n`
    pub fn scaled_values(&self) -> Vec<f64> {
        self.singular_values.iter().map(|s| s / self.rows as f64).collect()
    }

    /// Absolute threshold under which a singular value counts as zero.
    pub fn zero_threshold(&self) -> f64 {
        RANK_CUTOFF * self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    pub fn numerical_rank(&self) -> usize {
        let thr = self.zero_threshold();
        self.singular_values.iter().filter(|&&s| s > thr && s > 0.0).count()
    }

    /// `U^T y`
    pub fn projections(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: y.len(),
            });
        }
        Ok(self.left.tr_mul(y))
    }

    /// Per-mode factor `(1 - exp(-lambda^2 t / (mn))) / lambda`, zero for
    /// numerically vanishing modes.
    pub fn mode_factors(&self, t: Time) -> Result<Vec<f64>> {
        let t = t.validate()?;
        let thr = self.zero_threshold();
        let mn = self.rows as f64 * self.cols as f64;
        Ok(self
            .singular_values
            .iter()
            .map(|&s| {
                if s <= thr || s == 0.0 {
                    0.0
                } else {
                    match t {
                        Time::Infinity => 1.0 / s,
                        Time::Finite(t) => -(-s * s * t / mn).exp_m1() / s,
                    }
                }
            })
            .collect())
    }
}

/// Thin SVD of `phi`; rank `min(n, m)`.
pub fn decompose(phi: &FeatureMatrix) -> Result<SpectralDecomposition> {
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (n, m) = phi.shape();
    if n == 0 || m == 0 {
        return Err(Error::Empty("cannot decompose an empty feature matrix"));
    }
    let svd = phi.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(Ordering::Equal));
    let r = order.len();
    let mut left = DMatrix::zeros(n, r);
    let mut right = DMatrix::zeros(m, r);
    let mut values = DVector::zeros(r);
    for (k, &i) in order.iter().enumerate() {
        values[k] = s[i];
        left.set_column(k, &u.column(i));
        right.set_column(k, &vt.row(i).transpose());
    }
    Ok(SpectralDecomposition {
        left,
        singular_values: values,
        right,
        rows: n,
        cols: m,
    })
}

/// Gradient-flow coefficients `a(t)`; `Time::Infinity` gives the minimum-norm
/// least-squares solution.
pub fn coefficients_at(dec: &SpectralDecomposition, y: &DVector<f64>, t: Time) -> Result<DVector<f64>> {
    let p = dec.projections(y)?;
    let f = dec.mode_factors(t)?;
    let w = DVector::from_iterator(p.len(), p.iter().zip(&f).map(|(a, b)| a * b));
    Ok(&dec.right * w)
}

/// `f_t(x) = sum_k a_k phi(x; b_k)`.
pub fn predict(coeffs: &DVector<f64>, feats: &FeatureSet, x: &[f64]) -> Result<f64> {
    if coeffs.len() != feats.count() {
        return Err(Error::DimensionMismatch {
            expected: feats.count(),
            actual: coeffs.len(),
        });
    }
    Ok(feats.eval_all(x)?.iter().zip(coeffs.iter()).map(|(p, a)| p * a).sum())
}

/// One point of a gradient-flow path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySnapshot {
    pub time: Time,
    /// `|Phi a - y|^2 / (2n)`
    pub train_error: f64,
    /// Root-mean-square of `f_t - f*` over the test points.
    pub test_error: f64,
    /// Root-mean-square of `f_t` over the test points.
    pub prediction_norm: f64,
    pub param_norm: f64,
    pub coefficients: Option<DVector<f64>>,
}

/// Precomputed state for evaluating many times on one problem.
pub struct TrajectoryEvaluator<'a> {
    dec: &'a SpectralDecomposition,
    y: DVector<f64>,
    proj: DVector<f64>,
    /// `Phi_test V`, `k x r`
    test_modes: DMatrix<f64>,
    test_targets: DVector<f64>,
}

impl<'a> TrajectoryEvaluator<'a> {
    pub fn new(
        dec: &'a SpectralDecomposition,
        y: &DVector<f64>,
        feats: &FeatureSet,
        target: &TargetSpec,
        test_points: &Dataset,
    ) -> Result<Self> {
        if test_points.is_empty() {
            return Err(Error::Empty("test set is empty"));
        }
        if feats.count() != dec.cols {
            return Err(Error::DimensionMismatch {
                expected: dec.cols,
                actual: feats.count(),
            });
        }
        let phi_test = build_feature_matrix(test_points, feats)?;
        Ok(Self {
            dec,
            y: y.clone(),
            proj: dec.projections(y)?,
            test_modes: phi_test * &dec.right,
            test_targets: target.values(test_points)?,
        })
    }

    pub fn snapshot(&self, t: Time, keep_coefficients: bool) -> Result<TrajectorySnapshot> {
        let f = self.dec.mode_factors(t)?;
        let w = DVector::from_iterator(f.len(), self.proj.iter().zip(&f).map(|(p, d)| p * d));
        // Phi a = U diag(lambda) w
        let fitted_modes =
            DVector::from_iterator(w.len(), w.iter().zip(self.dec.singular_values.iter()).map(|(a, s)| a * s));
        let resid = &self.dec.left * fitted_modes - &self.y;
        let n = self.dec.rows as f64;
        let pred = &self.test_modes * &w;
        let k = pred.len() as f64;
        let test_error = ((&pred - &self.test_targets).norm_squared() / k).sqrt();
        Ok(TrajectorySnapshot {
            time: t,
            train_error: resid.norm_squared() / (2.0 * n),
            test_error,
            prediction_norm: (pred.norm_squared() / k).sqrt(),
            param_norm: w.norm(),
            coefficients: keep_coefficients.then(|| &self.dec.right * &w),
        })
    }
}

/// Train/test errors and parameter norm along `times`.
pub fn errors_on_grid(
    dec: &SpectralDecomposition,
    y: &DVector<f64>,
    feats: &FeatureSet,
    target: &TargetSpec,
    test_points: &Dataset,
    times: &[Time],
) -> Result<Vec<TrajectorySnapshot>> {
    check_grid(times)?;
    let ev = TrajectoryEvaluator::new(dec, y, feats, target, test_points)?;
    times.iter().map(|&t| ev.snapshot(t, false)).collect()
}

fn check_grid(times: &[Time]) -> Result<()> {
    for (i, &t) in times.iter().enumerate() {
        t.validate()?;
        if t == Time::Infinity && i + 1 != times.len() {
            return Err(Error::invalid("t = inf may only appear last"));
        }
        if i > 0 && times[i - 1] >= t {
            return Err(Error::invalid("times must be strictly increasing"));
        }
    }
    Ok(())
}

/// Explicit-Euler integration of the flow ODE; a test reference.
pub fn ode_oracle(phi: &DMatrix<f64>, y: &DVector<f64>, t: f64, step: f64) -> Result<DVector<f64>> {
    let (n, m) = phi.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let mn = (n * m) as f64;
    let gtg = phi.tr_mul(phi);
    let stiffness = step * top_eigenvalue(&gtg) / mn;
    if stiffness >= 0.1 {
        return Err(Error::UnstableStep(stiffness));
    }
    let gty = phi.tr_mul(y);
    let mut a = DVector::zeros(m);
    let full = (t / step).floor() as u64;
    let rest = t - full as f64 * step;
    for _ in 0..full {
        a -= (&gtg * &a - &gty) * (step / mn);
    }
    if rest > 0.0 {
        a -= (&gtg * &a - &gty) * (rest / mn);
    }
    Ok(a)
}

/// Largest eigenvalue of a PSD matrix by power iteration.
fn top_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let k = a.nrows();
    let mut v = DVector::from_fn(k, |i, _| 1.0 + (i as f64 * 0.618).fract());
    let mut est = 0.0;
    for _ in 0..500 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w) / v.norm_squared();
        v = w / norm;
        if (next - est).abs() <= 1e-12 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    // The Rayleigh quotient underestimates; pad slightly so the stability check is conservative.
    est * 1.01
}

/// Cumulative share of `|y|^2` captured by the first `p` left singular vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub cumulative: Vec<f64>,
    /// Smallest `p` (1-based) with `c_p >= 0.99`, if reached.
    pub concentration_index: Option<usize>,
}

pub fn spectral_energy_profile(dec: &SpectralDecomposition, y: &DVector<f64>) -> Result<EnergyProfile> {
    let total = y.norm_squared();
    if total == 0.0 {
        return Err(Error::invalid("energy profile of a zero target"));
    }
    let p = dec.projections(y)?;
    let mut acc = 0.0;
    let cumulative: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v * v / total;
            acc
        })
        .collect();
    let concentration_index = cumulative.iter().position(|&c| c >= 0.99).map(|i| i + 1);
    Ok(EnergyProfile {
        cumulative,
        concentration_index,
    })
}
