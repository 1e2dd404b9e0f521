//! Adaptive Gauss–Legendre quadrature with interval halving.

use crate::error::{Error, Result};

/// Nodes and weights of the `count`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; count];
    let mut weights = vec![0.0; count];
    let nf = count as f64;
    for i in 0..count.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_count.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(count, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(count, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[count - 1 - i] = x;
        weights[i] = w;
        weights[count - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrator configured with a fixed rule and a halving budget.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Quadrature {
    pub fn new(node_count: usize, abs_tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(node_count);
        Self {
            nodes,
            weights,
            abs_tol,
            max_intervals: 4096,
        }
    }

    fn rule<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }

    /// Integrates `f` over `[a, b]`, halving intervals until the coarse and
    /// refined estimates agree to the tolerance.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        let first = self.rule(&f, a, b);
        let mut stack = vec![(a, b, first, self.abs_tol)];
        let mut total = 0.0;
        let mut intervals = 0usize;
        while let Some((lo, hi, whole, tol)) = stack.pop() {
            let mid = 0.5 * (lo + hi);
            let left = self.rule(&f, lo, mid);
            let right = self.rule(&f, mid, hi);
            let err = (left + right - whole).abs();
            // Below the roundoff floor further halving cannot reduce the error.
            let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs() + first.abs() * (hi - lo) / (b - a));
            if err <= tol.max(floor) || hi - lo < 1e-12 * (b - a).abs() {
                total += left + right;
                continue;
            }
            intervals += 1;
            if intervals > self.max_intervals {
                return Err(Error::QuadratureDiverged(err));
            }
            stack.push((lo, mid, left, tol / 2.0));
            stack.push((mid, hi, right, tol / 2.0));
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 14 polynomial: int_{-1}^1 t^14 = 2/15
        let v: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(14)).sum();
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let q = Quadrature::new(64, 1e-12);
        let v = q.integrate(|t| (1.0 - t * t).max(0.0).sqrt(), -1.0, 1.0).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut q = Quadrature::new(4, 1e-15);
        q.max_intervals = 2;
        let r = q.integrate(|t| (50.0 * t).sin().abs(), 0.0, 10.0);
        assert!(matches!(r, Err(Error::QuadratureDiverged(_))));
    }
}
