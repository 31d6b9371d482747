use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, ArrayView2};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Orthonormal tensor-product Legendre basis on the latent cube
/// `[-1, +1]^latent_dim`.
///
/// The 1-D factors are Legendre polynomials normalized to unit
/// L2([-1, 1]) norm, so the tensor products are orthonormal under the
/// uniform prior measure on the cube (up to the `2^D` volume factor,
/// see [`gram_matrix`](super::gram_matrix)). Basis entries are ordered
/// lexicographically in the per-dimension degree multi-index, with the
/// last dimension varying fastest; this ordering is fixed across the
/// library and across serialized models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisConfig {
    latent_dim: usize,
    max_degree: usize,
}

impl BasisConfig {
    pub fn new(latent_dim: usize, max_degree_per_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "basis latent_dim must be at least 1".into(),
            ));
        }
        Ok(Self {
            latent_dim,
            max_degree: max_degree_per_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn max_degree_per_dim(&self) -> usize {
        self.max_degree
    }

    /// Number of basis functions, `(max_degree + 1)^latent_dim`.
    pub fn size(&self) -> usize {
        (self.max_degree + 1).pow(self.latent_dim as u32)
    }

    /// Evaluates all basis functions at `z`.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_point(z)?;
        let per_dim = self.values_per_dim(z);
        let mut out = vec![0.0; self.size()];
        self.tensor_product(&per_dim, &mut out);
        Ok(out)
    }

    /// Evaluates the basis and its gradient at `z`.
    ///
    /// Returns `(values, grad)` where `grad[[k, l]]` is the partial
    /// derivative of basis function `l` with respect to `z_k`.
    pub fn eval_with_grad(&self, z: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
        self.check_point(z)?;
        let m = self.max_degree + 1;
        let d = self.latent_dim;
        let mut vals = Vec::with_capacity(d);
        let mut ders = Vec::with_capacity(d);
        for &x in z {
            let (v, dv) = legendre_normalized_with_deriv(x, self.max_degree);
            vals.push(v);
            ders.push(dv);
        }
        let size = self.size();
        let mut values = vec![0.0; size];
        let mut grad = Array2::zeros((d, size));
        let mut idx = vec![0usize; d];
        for l in 0..size {
            let mut p = 1.0;
            for k in 0..d {
                p *= vals[k][idx[k]];
            }
            values[l] = p;
            for k in 0..d {
                let mut g = 1.0;
                for k2 in 0..d {
                    g *= if k2 == k {
                        ders[k2][idx[k2]]
                    } else {
                        vals[k2][idx[k2]]
                    };
                }
                grad[[k, l]] = g;
            }
            // advance multi-index, last dimension fastest
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok((values, grad))
    }

    /// Basis matrix at a set of points: row `q` holds the basis values
    /// at `points.row(q)`.
    pub fn eval_matrix(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                got: points.ncols(),
                what: "basis point dimension",
            });
        }
        let mut out = Array2::zeros((points.nrows(), self.size()));
        let mut row_buf = vec![0.0; self.size()];
        let mut point = vec![0.0; self.latent_dim];
        for (q, p) in points.rows().into_iter().enumerate() {
            point.copy_from_slice(p.as_slice().expect("contiguous point row"));
            self.check_point(&point)?;
            let per_dim = self.values_per_dim(&point);
            self.tensor_product(&per_dim, &mut row_buf);
            out.row_mut(q)
                .as_slice_mut()
                .expect("contiguous output row")
                .copy_from_slice(&row_buf);
        }
        Ok(out)
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                got: z.len(),
                what: "latent point dimension",
            });
        }
        for (dim, &c) in z.iter().enumerate() {
            if !(-1.0..=1.0).contains(&c) {
                return Err(Error::LatentOutOfCube { coord: c, dim });
            }
        }
        Ok(())
    }

    fn values_per_dim(&self, z: &[f64]) -> Vec<Vec<f64>> {
        z.iter()
            .map(|&x| legendre_normalized(x, self.max_degree))
            .collect()
    }

    fn tensor_product(&self, per_dim: &[Vec<f64>], out: &mut [f64]) {
        let m = self.max_degree + 1;
        let d = self.latent_dim;
        let mut idx = vec![0usize; d];
        for slot in out.iter_mut() {
            let mut p = 1.0;
            for k in 0..d {
                p *= per_dim[k][idx[k]];
            }
            *slot = p;
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

/// Legendre polynomials at `x` up to `max_degree`, each scaled to unit
/// L2([-1, 1]) norm: `P~_d = sqrt((2d + 1) / 2) P_d`.
fn legendre_normalized(x: f64, max_degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_degree + 1);
    let mut p_prev = 1.0; // P_0
    let mut p = x; // P_1
    out.push(norm_factor(0) * p_prev);
    if max_degree >= 1 {
        out.push(norm_factor(1) * p);
    }
    for d in 1..max_degree {
        let next = ((2 * d + 1) as f64 * x * p - d as f64 * p_prev) / (d + 1) as f64;
        p_prev = p;
        p = next;
        out.push(norm_factor(d + 1) * p);
    }
    out
}

fn legendre_normalized_with_deriv(x: f64, max_degree: usize) -> (Vec<f64>, Vec<f64>) {
    let n = max_degree + 1;
    let mut p = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    p.push(1.0);
    dp.push(0.0);
    if max_degree >= 1 {
        p.push(x);
        dp.push(1.0);
    }
    for d in 1..max_degree {
        let next = ((2 * d + 1) as f64 * x * p[d] - d as f64 * p[d - 1]) / (d + 1) as f64;
        p.push(next);
        // P'_{d+1} = P'_{d-1} + (2d + 1) P_d
        let dnext = dp[d - 1] + (2 * d + 1) as f64 * p[d];
        dp.push(dnext);
    }
    for d in 0..n {
        let f = norm_factor(d);
        p[d] *= f;
        dp[d] *= f;
    }
    (p, dp)
}

fn norm_factor(d: usize) -> f64 {
    (((2 * d + 1) as f64) / 2.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_basis_value() {
        let cfg = BasisConfig::new(1, 0).unwrap();
        let v = cfg.eval(&[0.3]).unwrap();
        assert_eq!(v.len(), 1);
        assert_abs_diff_eq!(v[0], core::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn degree_one_at_endpoint() {
        let cfg = BasisConfig::new(1, 1).unwrap();
        let v = cfg.eval(&[1.0]).unwrap();
        assert_abs_diff_eq!(v[0], 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(v[1], (1.5f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn tensor_product_ordering() {
        let cfg = BasisConfig::new(2, 1).unwrap();
        let v = cfg.eval(&[1.0, 1.0]).unwrap();
        assert_eq!(v.len(), 4);
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.86603, epsilon = 1e-5);
        assert_abs_diff_eq!(v[2], 0.86603, epsilon = 1e-5);
        assert_abs_diff_eq!(v[3], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_index_is_constant() {
        let cfg = BasisConfig::new(3, 2).unwrap();
        let expected = core::f64::consts::FRAC_1_SQRT_2.powi(3);
        for z in [[0.0, 0.0, 0.0], [0.7, -0.2, 0.9], [-1.0, 1.0, 0.5]] {
            let v = cfg.eval(&z).unwrap();
            assert_abs_diff_eq!(v[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_point_outside_cube() {
        let cfg = BasisConfig::new(2, 2).unwrap();
        let err = cfg.eval(&[0.0, 1.2]).unwrap_err();
        assert!(matches!(err, crate::Error::LatentOutOfCube { dim: 1, .. }));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = BasisConfig::new(2, 4).unwrap();
        let z = [0.31, -0.62];
        let (_, grad) = cfg.eval_with_grad(&z).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let vp = cfg.eval(&zp).unwrap();
            let vm = cfg.eval(&zm).unwrap();
            for l in 0..cfg.size() {
                let fd = (vp[l] - vm[l]) / (2.0 * h);
                assert_abs_diff_eq!(grad[[k, l]], fd, epsilon = 1e-5);
            }
        }
    }
}
