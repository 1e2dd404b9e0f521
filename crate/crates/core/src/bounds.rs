//! Generalization bounds along the gradient-flow path and the empirical
//! constants they depend on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, Dataset, FeatureSet, TargetSpec};
use crate::spectral::{spectral_energy_profile, SpectralDecomposition};

/// `d(lambda, t) = (1 - exp(-lambda^2 t / (mn))) / lambda`, and 0 at `lambda = 0`.
pub fn damping(lambda: f64, t: f64, m: f64, n: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !(t >= 0.0) {
        return Err(Error::invalid(format!("damping needs lambda, t >= 0 (got {lambda}, {t})")));
    }
    if !(m > 0.0 && n > 0.0) {
        return Err(Error::invalid("damping needs m, n > 0"));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(-(-lambda * lambda * t / (m * n)).exp_m1() / lambda)
}

/// `sup_lambda d(lambda, t) <= sqrt(t / (mn))`.
pub fn damping_sup(t: f64, m: f64, n: f64) -> f64 {
    (t / (m * n)).sqrt()
}

/// Constants of the high-probability norm bound. `n` and `m` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBoundConstants {
    pub n: f64,
    pub m: f64,
    /// Sup bound on both `|f*|` and `|phi|`.
    pub m_bound: f64,
    pub delta: f64,
    /// `|f*|_{l2}`
    pub f_norm: f64,
    /// `E_b |phi(.; b)|^2_{l2}`
    pub feat_norm_sq: f64,
}

impl NormBoundConstants {
    /// The product of the two Hoeffding-corrected factors; the bound is this times `sqrt(t)`.
    pub fn factor(&self) -> Result<f64> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.f_norm < 0.0 || self.feat_norm_sq < 0.0 || self.m_bound < 0.0 {
            return Err(Error::invalid("norms must be non-negative"));
        }
        let dev = |size: f64| (2.0 * self.m_bound.powi(2) * (2.0 / self.delta).ln() / size).sqrt();
        let left = self.f_norm.powi(2) + dev(self.n);
        let right = self.feat_norm_sq + dev(self.m);
        Ok((left * right).sqrt())
    }
}

/// Bound on `|f_t|_{l2}` holding with probability `1 - delta`.
pub fn norm_bound_rough(t: f64, c: &NormBoundConstants) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    Ok(c.factor()? * t.sqrt())
}

/// Bound on `|f_s - f*|` given the error at an earlier time `t <= s`.
pub fn error_growth_bound(t: f64, s: f64, c: &NormBoundConstants, err_at_t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    if !(s >= t) {
        return Err(Error::invalid(format!("error growth needs s >= t (got t = {t}, s = {s})")));
    }
    Ok(err_at_t + c.factor()? * (s - t).sqrt())
}

/// `factor * sqrt(t - t0) + eps` for `t >= t0`.
pub fn error_growth_from(t: f64, t0: f64, eps: f64, c: &NormBoundConstants) -> Result<f64> {
    error_growth_bound(t0, t, c, eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedRate {
    pub value: f64,
    /// `lambda_hat_n = 0`: the `1 / lambda_hat_n` branch is dropped.
    pub degenerate: bool,
}

/// `d(t) = min{ sqrt(t), lambda_hat_{floor(sqrt n)+1} t, 1 / lambda_hat_n }` (1-based indices).
///
/// `scaled` lists `lambda_hat` descending; entries past its end count as zero.
pub fn capped_rate(t: f64, scaled: &[f64], n: usize) -> Result<CappedRate> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    if n == 0 {
        return Err(Error::invalid("capped rate needs n >= 1"));
    }
    let at = |k: usize| scaled.get(k).copied().unwrap_or(0.0);
    let mid = at(isqrt(n)) * t;
    let last = at(n - 1);
    let two = t.sqrt().min(mid);
    if last > 0.0 {
        Ok(CappedRate {
            value: two.min(1.0 / last),
            degenerate: false,
        })
    } else {
        Ok(CappedRate {
            value: two,
            degenerate: true,
        })
    }
}

pub(crate) fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinerBound {
    /// `3 exp(-2 lh1^2 t) + (5C + 1 + 2 sqrt(C) M d(t))^2 / sqrt(n)`
    pub stated: f64,
    /// `exp(-lh1^2 t) + 3C/sqrt(n) + (2C+1) n^{-1/4} + 2 sqrt(C) M d(t) n^{-1/4}`
    pub proof: f64,
    pub rate: CappedRate,
}

pub fn finer_bound(t: f64, c: f64, m_kernel: f64, scaled: &[f64], n: usize) -> Result<FinerBound> {
    let nf = n as f64;
    let ratio = c / nf.sqrt();
    if !(ratio < 1.0) {
        return Err(Error::HypothesisViolated(ratio));
    }
    if c < 0.0 || m_kernel < 0.0 {
        return Err(Error::invalid("C and M must be non-negative"));
    }
    let l1 = *scaled.first().ok_or(Error::Empty("no scaled singular values"))?;
    let rate = capped_rate(t, scaled, n)?;
    let tail = 2.0 * c.sqrt() * m_kernel * rate.value;
    let quarter = nf.powf(-0.25);
    Ok(FinerBound {
        stated: 3.0 * (-2.0 * l1 * l1 * t).exp() + (5.0 * c + 1.0 + tail).powi(2) / nf.sqrt(),
        proof: (-l1 * l1 * t).exp() + 3.0 * ratio + (2.0 * c + 1.0) * quarter + tail * quarter,
        rate,
    })
}

/// Window of the small-error regime and its level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeWindow {
    pub c1: f64,
    pub c2: f64,
    /// `c2 ln n`
    pub t_low: f64,
    /// `c2 n^{1/4}`
    pub t_high: f64,
    /// Squared-error level `c1 / sqrt(n)`.
    pub level_squared: f64,
    /// Unsquared level `c1 n^{-1/4}`.
    pub level: f64,
}

impl RegimeWindow {
    pub fn length(&self) -> f64 {
        self.t_high - self.t_low
    }

    pub fn is_empty(&self) -> bool {
        self.t_high < self.t_low
    }
}

/// `c2 = 1 / (4 lh1^2)`, `c1 = 2 + 5C + 2 sqrt(C) C' c2 M`.
pub fn regime_window(c: f64, c_prime: f64, m_kernel: f64, lh1: f64, n: usize) -> Result<RegimeWindow> {
    if !(lh1 > 0.0) {
        return Err(Error::invalid("regime window needs lambda_hat_1 > 0"));
    }
    let nf = n as f64;
    let c2 = 1.0 / (4.0 * lh1 * lh1);
    let c1 = 2.0 + 5.0 * c + 2.0 * c.sqrt() * c_prime * c2 * m_kernel;
    Ok(RegimeWindow {
        c1,
        c2,
        t_low: c2 * nf.ln(),
        t_high: c2 * nf.powf(0.25),
        level_squared: c1 / nf.sqrt(),
        level: c1 * nf.powf(-0.25),
    })
}

/// Empirical constants for the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// `sqrt(n)` times the largest of `discrepancies`.
    pub c_measured: f64,
    /// `|y|^2/n - 1`, `u1^T y / sqrt(n) - 1`, `|g1 - psi1|`, max off-identity `<g_i, g_j>` (absolute values).
    pub discrepancies: [f64; 4],
    pub c_prime: f64,
    pub m_bound: f64,
    pub m_kernel: f64,
    pub delta: f64,
    /// `(eps, t0)`, filled once a trajectory is known.
    pub epsilon_t0: Option<(f64, f64)>,
    pub regime: RegimeWindow,
    pub concentration_index: Option<usize>,
    pub f_norm: f64,
    pub feat_norm_sq: f64,
}

impl AssumptionReport {
    pub fn hypothesis_holds(&self, n: usize) -> bool {
        self.c_measured / (n as f64).sqrt() < 1.0
    }
}

/// Monte-Carlo norms needed by the rough bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimates {
    pub f_norm: f64,
    pub feat_norm_sq: f64,
    /// `sqrt(mean_x |phi(x; B)|^2 / n)`
    pub m_kernel: f64,
}

/// Estimates `|f*|`, `E_b |phi|^2` and the kernel constant `M` over `points`.
pub fn estimate_norms(feats: &FeatureSet, target: &TargetSpec, points: &Dataset, n: usize) -> Result<NormEstimates> {
    if points.is_empty() {
        return Err(Error::Empty("no Monte-Carlo points"));
    }
    const CHUNK: usize = 2000;
    let mut f_sq = 0.0;
    let mut phi_sq = 0.0;
    let k = points.len();
    let idx: Vec<usize> = (0..k).collect();
    for block in idx.chunks(CHUNK) {
        let sub = points.subset(block);
        let phi = build_feature_matrix(&sub, feats)?;
        phi_sq += phi.norm_squared();
        f_sq += target.values(&sub)?.norm_squared();
    }
    let mean_phi_sq = phi_sq / k as f64;
    Ok(NormEstimates {
        f_norm: (f_sq / k as f64).sqrt(),
        feat_norm_sq: mean_phi_sq / feats.count() as f64,
        m_kernel: (mean_phi_sq / n as f64).sqrt(),
    })
}

/// Measures the spectral assumptions on `mc_points`.
///
/// `g_i(x) = (sqrt(n) / lambda_i) v_i^T phi(x; B)`; the sign of the first
/// singular pair is chosen so that `u1^T y >= 0`. `norms` supplies the
/// Monte-Carlo norm estimates (computed on a larger sample by the caller).
pub fn measure_assumptions(
    dec: &SpectralDecomposition,
    y: &DVector<f64>,
    feats: &FeatureSet,
    target: &TargetSpec,
    mc_points: &Dataset,
    norms: &NormEstimates,
    delta: f64,
) -> Result<AssumptionReport> {
    if mc_points.is_empty() {
        return Err(Error::Empty("no Monte-Carlo points"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    let n = dec.rows;
    let nf = n as f64;
    let s = isqrt(n).min(dec.rank());
    let thr = dec.zero_threshold();
    for i in 0..s {
        if dec.singular_values[i] <= thr || dec.singular_values[i] == 0.0 {
            return Err(Error::ZeroSingularValue(i));
        }
    }
    let proj = dec.projections(y)?;
    let sign = if proj[0] < 0.0 { -1.0 } else { 1.0 };

    let phi = build_feature_matrix(mc_points, feats)?;
    let k = mc_points.len() as f64;
    let mut g: DMatrix<f64> = &phi * dec.right.columns(0, s);
    for i in 0..s {
        let scale = nf.sqrt() / dec.singular_values[i] * if i == 0 { sign } else { 1.0 };
        g.column_mut(i).scale_mut(scale);
    }
    let psi = target.values(mc_points)?;

    let d_norm = (y.norm_squared() / nf - 1.0).abs();
    let d_proj = (sign * proj[0] / nf.sqrt() - 1.0).abs();
    let d_g1 = ((g.column(0) - &psi).norm_squared() / k).sqrt();
    let mut d_orth: f64 = 0.0;
    if s >= 2 {
        let tail = g.columns(1, s - 1);
        let gram = tail.tr_mul(&tail) / k;
        for i in 0..s - 1 {
            for j in 0..s - 1 {
                let ideal = if i == j { 1.0 } else { 0.0 };
                d_orth = d_orth.max((gram[(i, j)] - ideal).abs());
            }
        }
    }
    let discrepancies = [d_norm, d_proj, d_g1, d_orth];
    let c_measured = nf.sqrt() * discrepancies.iter().copied().fold(0.0, f64::max);

    let scaled = dec.scaled_values();
    let c_prime = scaled
        .iter()
        .take(isqrt(n) + 1)
        .enumerate()
        .map(|(i, l)| l * ((i + 1) as f64).sqrt())
        .fold(0.0, f64::max);

    let max_norm = (0..mc_points.len())
        .map(|i| mc_points.points.row(i).norm())
        .fold(0.0, f64::max);
    let m_bound = feats.sup_bound(max_norm).max(target.sup_bound());
    let regime = regime_window(c_measured, c_prime, norms.m_kernel, scaled[0], n)?;

    Ok(AssumptionReport {
        c_measured,
        discrepancies,
        c_prime,
        m_bound,
        m_kernel: norms.m_kernel,
        delta,
        epsilon_t0: None,
        regime,
        concentration_index: spectral_energy_profile(dec, y)?.concentration_index,
        f_norm: norms.f_norm,
        feat_norm_sq: norms.feat_norm_sq,
    })
}
