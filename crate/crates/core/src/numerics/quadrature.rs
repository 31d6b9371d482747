use alloc::vec;
use alloc::vec::Vec;

use ndarray::Array2;
#[allow(unused_imports)]
use num_traits::Float;

use super::BasisConfig;
use crate::{Error, Result};

/// Numerical integration rule over the latent cube `[-1, +1]^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Array2<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Points as a `Q x D` matrix.
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Cube volume `2^D`, the total weight of the rule.
    pub fn volume(&self) -> f64 {
        (2.0f64).powi(self.dim() as i32)
    }
}

/// Tensor product of 1-D Gauss-Legendre rules on `[-1, 1]`.
///
/// Exact for polynomials of per-dimension degree up to
/// `2 * nodes_per_dim - 1`.
pub fn quadrature_grid(dim: usize, nodes_per_dim: usize) -> Result<QuadratureRule> {
    if dim == 0 {
        return Err(Error::InvalidConfig("quadrature dim must be at least 1".into()));
    }
    if nodes_per_dim == 0 {
        return Err(Error::InvalidConfig(
            "quadrature nodes_per_dim must be at least 1".into(),
        ));
    }
    let (nodes, weights) = gauss_legendre_1d(nodes_per_dim);
    let q = nodes_per_dim.pow(dim as u32);
    let mut points = Array2::zeros((q, dim));
    let mut w = vec![0.0; q];
    let mut idx = vec![0usize; dim];
    for row in 0..q {
        let mut weight = 1.0;
        for k in 0..dim {
            points[[row, k]] = nodes[idx[k]];
            weight *= weights[idx[k]];
        }
        w[row] = weight;
        for k in (0..dim).rev() {
            idx[k] += 1;
            if idx[k] < nodes_per_dim {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(QuadratureRule { points, weights: w })
}

/// Gram matrix of the basis on the cube, estimated with the given rule:
/// entry `(l, l')` is `sum_q w_q phi_l(z_q) phi_l'(z_q)`.
///
/// With enough nodes this is the identity; it is the numerical check of
/// the orthonormality the parametric M-step relies on.
pub fn gram_matrix(cfg: &BasisConfig, rule: &QuadratureRule) -> Result<Array2<f64>> {
    if rule.dim() != cfg.latent_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.latent_dim(),
            got: rule.dim(),
            what: "quadrature rule dimension",
        });
    }
    let phi = cfg.eval_matrix(rule.points().view())?;
    let l = cfg.size();
    let mut gram = Array2::zeros((l, l));
    for (q, &wq) in rule.weights().iter().enumerate() {
        let row = phi.row(q);
        for a in 0..l {
            let fa = row[a] * wq;
            for b in 0..l {
                gram[[a, b]] += fa * row[b];
            }
        }
    }
    Ok(gram)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// found by Newton iteration on the Legendre polynomial.
fn gauss_legendre_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th positive root.
        let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for d in 1..n {
        let next = ((2 * d + 1) as f64 * x * p - d as f64 * p_prev) / (d + 1) as f64;
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_node_rule_is_midpoint() {
        let rule = quadrature_grid(1, 1).unwrap();
        assert_eq!(rule.len(), 1);
        assert_abs_diff_eq!(rule.points()[[0, 0]], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.weights()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn two_node_rule() {
        let rule = quadrature_grid(1, 2).unwrap();
        let r = 1.0 / (3.0f64).sqrt();
        assert_abs_diff_eq!(rule.points()[[0, 0]], -r, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.points()[[1, 0]], r, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights()[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn tensor_rule_weight_sum_is_volume() {
        let rule = quadrature_grid(2, 2).unwrap();
        assert_eq!(rule.len(), 4);
        let total: f64 = rule.weights().iter().sum();
        assert_abs_diff_eq!(total, 4.0, epsilon = 1e-13);
        for w in rule.weights() {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-13);
        }
        // integrating the constant 1 returns the volume exactly
        let rule3 = quadrature_grid(3, 5).unwrap();
        let total3: f64 = rule3.weights().iter().sum();
        assert_abs_diff_eq!(total3, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_is_identity_with_enough_nodes() {
        let cfg = BasisConfig::new(1, 3).unwrap();
        let rule = quadrature_grid(1, 8).unwrap();
        let g = gram_matrix(&cfg, &rule).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g[[a, b]], expected, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gram_degrades_with_insufficient_nodes() {
        // degree <= 4 needs 5 nodes for exactness of degree-8 products
        let cfg = BasisConfig::new(1, 4).unwrap();
        let rule = quadrature_grid(1, 3).unwrap();
        let g = gram_matrix(&cfg, &rule).unwrap();
        let mut max_dev: f64 = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                let expected = if a == b { 1.0 } else { 0.0 };
                max_dev = max_dev.max((g[[a, b]] - expected).abs());
            }
        }
        assert!(max_dev > 1e-3, "expected visible quadrature error, got {max_dev}");
    }

    #[test]
    fn gram_identity_in_two_dims() {
        let cfg = BasisConfig::new(2, 4).unwrap();
        let rule = quadrature_grid(2, 8).unwrap();
        let g = gram_matrix(&cfg, &rule).unwrap();
        let l = cfg.size();
        for a in 0..l {
            for b in 0..l {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g[[a, b]], expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = BasisConfig::new(2, 1).unwrap();
        let rule = quadrature_grid(1, 4).unwrap();
        assert!(gram_matrix(&cfg, &rule).is_err());
    }
}
