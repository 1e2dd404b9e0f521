//! Data and feature sampling on spheres, feature maps and target functions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel;

/// An `n x m` matrix with `Phi[i, j] = phi(x_i; b_j)`.
pub type FeatureMatrix = DMatrix<f64>;

/// Draws `count` i.i.d. points uniformly from the unit sphere `S^{dim-1}`.
///
/// Points are normalized standard Gaussians, so the law is exactly uniform.
/// The stream is a ChaCha8 generator keyed by `seed` and is stable across
/// platforms.
pub fn sample_sphere(seed: u64, dim: usize, count: usize) -> Result<DMatrix<f64>> {
    if dim == 0 || count == 0 {
        return Err(Error::invalid(format!(
            "sphere sampling needs dim >= 1 and count >= 1 (got dim={dim}, count={count})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, dim);
    let mut row = vec![0.0; dim];
    for i in 0..count {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            // A zero Gaussian vector has probability zero but is not impossible in floating point.
            if norm > 0.0 {
                for (j, v) in row.iter().enumerate() {
                    out[(i, j)] = v / norm;
                }
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    UniformSphere,
    External,
}

/// Sample points (one per row) with their target values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub distribution: Distribution,
}

impl Dataset {
    pub fn new(points: DMatrix<f64>, targets: DVector<f64>, distribution: Distribution) -> Result<Self> {
        if points.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                actual: targets.len(),
            });
        }
        if points.ncols() == 0 {
            return Err(Error::invalid("dataset points must have dimension >= 1"));
        }
        Ok(Self {
            points,
            targets,
            distribution,
        })
    }

    /// Uniform points on `S^{dim-1}` labelled by `target`.
    pub fn sphere(seed: u64, dim: usize, count: usize, target: &TargetSpec) -> Result<Self> {
        let points = sample_sphere(seed, dim, count)?;
        let rows = row_major(&points);
        let targets = rows
            .chunks_exact(dim)
            .map(|x| target.eval(x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, DVector::from_vec(targets), Distribution::UniformSphere)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Points laid out row after row in one contiguous buffer.
    pub fn row_major(&self) -> Vec<f64> {
        row_major(&self.points)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let points = self.points.select_rows(idx);
        let targets = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.targets[i]));
        Dataset {
            points,
            targets,
            distribution: self.distribution,
        }
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// `max(0, b^T x)`
    Relu,
    /// `1{b^T x > 0}`
    Indicator,
    /// `max(0, b^T x + c)` with `(b, c)` stored as one row of length `d + 1`.
    AffineRelu,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Relu => "relu",
            FeatureKind::Indicator => "indicator",
            FeatureKind::AffineRelu => "affine-relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(FeatureKind::Relu),
            "indicator" => Ok(FeatureKind::Indicator),
            "affine-relu" | "affine_relu" => Ok(FeatureKind::AffineRelu),
            other => Err(Error::Config(format!("unknown feature kind '{other}'"))),
        }
    }

    /// Width of a direction row for inputs of dimension `dim`.
    pub fn direction_dim(self, dim: usize) -> usize {
        match self {
            FeatureKind::AffineRelu => dim + 1,
            _ => dim,
        }
    }
}

/// Random feature directions, one unit-norm row per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub directions: DMatrix<f64>,
    pub kind: FeatureKind,
}

impl FeatureSet {
    /// Samples `count` directions uniformly on the sphere matching `kind`
    /// (`S^{dim-1}`, or `S^dim` for the affine variant).
    pub fn sample(kind: FeatureKind, dim: usize, count: usize, seed: u64) -> Result<Self> {
        let directions = sample_sphere(seed, kind.direction_dim(dim), count)?;
        Ok(Self { directions, kind })
    }

    pub fn count(&self) -> usize {
        self.directions.nrows()
    }

    /// Input dimension these features accept.
    pub fn input_dim(&self) -> usize {
        match self.kind {
            FeatureKind::AffineRelu => self.directions.ncols() - 1,
            _ => self.directions.ncols(),
        }
    }

    /// `phi(x; B)`, the vector of all feature values at `x`.
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dirs = row_major(&self.directions);
        let w = self.directions.ncols();
        dirs.chunks_exact(w).map(|b| eval_feature(self.kind, b, x)).collect()
    }

    /// Upper bound on `|phi(x; b)|` over unit-norm directions and inputs with `|x| <= max_input_norm`.
    pub fn sup_bound(&self, max_input_norm: f64) -> f64 {
        match self.kind {
            FeatureKind::Relu => max_input_norm,
            FeatureKind::Indicator => 1.0,
            FeatureKind::AffineRelu => (max_input_norm * max_input_norm + 1.0).sqrt(),
        }
    }
}

pub fn eval_feature(kind: FeatureKind, b: &[f64], x: &[f64]) -> Result<f64> {
    let expected = kind.direction_dim(x.len());
    if b.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: b.len(),
        });
    }
    let mut pre = dot(&b[..x.len()], x);
    if kind == FeatureKind::AffineRelu {
        pre += b[x.len()];
    }
    Ok(activate(kind, pre))
}

#[inline]
fn activate(kind: FeatureKind, pre: f64) -> f64 {
    match kind {
        FeatureKind::Relu | FeatureKind::AffineRelu => pre.max(0.0),
        FeatureKind::Indicator => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn build_feature_matrix(data: &Dataset, feats: &FeatureSet) -> Result<FeatureMatrix> {
    feature_matrix_rows(&data.row_major(), data.dim(), feats)
}

/// Feature matrix for points given row-major with dimension `dim`.
pub(crate) fn feature_matrix_rows(points: &[f64], dim: usize, feats: &FeatureSet) -> Result<FeatureMatrix> {
    if feats.input_dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: feats.input_dim(),
            actual: dim,
        });
    }
    let n = points.len() / dim;
    let m = feats.count();
    let dirs = row_major(&feats.directions);
    let w = feats.directions.ncols();
    let mut phi = DMatrix::zeros(n, m);
    for (j, b) in dirs.chunks_exact(w).enumerate() {
        for (i, x) in points.chunks_exact(dim).enumerate() {
            phi[(i, j)] = eval_feature(feats.kind, b, x)?;
        }
    }
    Ok(phi)
}

/// Labels for points that do not come from a closed-form target.
///
/// Points are keyed by their exact bit pattern.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    entries: HashMap<Vec<u64>, f64>,
}

impl LabelTable {
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut table = Self::default();
        table.extend(data);
        table
    }

    pub fn extend(&mut self, data: &Dataset) {
        let rows = data.row_major();
        for (x, &y) in rows.chunks_exact(data.dim()).zip(data.targets.iter()) {
            self.entries.insert(key(x), y);
        }
    }

    pub fn get(&self, x: &[f64]) -> Option<f64> {
        self.entries.get(&key(x)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn sup(&self) -> f64 {
        self.entries.values().fold(0.0, |a, v| a.max(v.abs()))
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// The target function `f*`.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// The degree-0 harmonic, constant `normalization`.
    ConstantHarmonic { normalization: f64 },
    /// Zonal harmonic `normalization * P_order(axis^T x)` with the
    /// dimension-`d` Legendre polynomial (`P_order(1) = 1`).
    Legendre {
        order: usize,
        axis: Vec<f64>,
        normalization: f64,
    },
    ExternalLabels(LabelTable),
}

impl TargetSpec {
    pub fn constant() -> Self {
        TargetSpec::ConstantHarmonic { normalization: 1.0 }
    }

    /// Zonal target with unit `l2` norm under the uniform measure:
    /// `E[P_n(e^T x)^2] = 1/N(d, n)`, so the normalization is `sqrt(N(d, n))`.
    pub fn legendre(order: usize, axis: &[f64]) -> Result<Self> {
        let d = axis.len();
        let norm = dot(axis, axis).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("legendre axis must be non-zero"));
        }
        let multiplicity = kernel::harmonic_multiplicity(d, order)? as f64;
        Ok(TargetSpec::Legendre {
            order,
            axis: axis.iter().map(|v| v / norm).collect(),
            normalization: multiplicity.sqrt(),
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TargetSpec::ConstantHarmonic { .. } => "constant-harmonic",
            TargetSpec::Legendre { .. } => "legendre",
            TargetSpec::ExternalLabels(_) => "external-labels",
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            TargetSpec::ConstantHarmonic { normalization } => Ok(*normalization),
            TargetSpec::Legendre {
                order,
                axis,
                normalization,
            } => {
                if axis.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: axis.len(),
                        actual: x.len(),
                    });
                }
                let t = dot(axis, x).clamp(-1.0, 1.0);
                Ok(normalization * kernel::legendre(axis.len(), *order, t)?)
            }
            TargetSpec::ExternalLabels(table) => table.get(x).ok_or(Error::UnknownPoint),
        }
    }

    /// `sup |f*|` (on the unit sphere for the closed-form kinds).
    pub fn sup_bound(&self) -> f64 {
        match self {
            TargetSpec::ConstantHarmonic { normalization } => normalization.abs(),
            TargetSpec::Legendre { normalization, .. } => normalization.abs(),
            TargetSpec::ExternalLabels(table) => table.sup(),
        }
    }

    pub fn values(&self, data: &Dataset) -> Result<DVector<f64>> {
        let rows = data.row_major();
        let vals = rows
            .chunks_exact(data.dim())
            .map(|x| self.eval(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(vals))
    }
}
