//! Single-task kernel smoothing manifold model (KSMM).
//!
//! Alternates latent estimation (E-step) against a kernel-smoothed
//! parametric embedding fit (M-step). The embedding is `f(z) = V^T phi(z)`
//! with an orthonormal Legendre basis; the M-step solves the normal
//! equations `A V = B X` of the kernel-weighted least squares problem on
//! a quadrature rule. This is also the building block the multi-task
//! learner coordinates.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, ArrayView2};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::numerics::{smoothing_kernel, BasisConfig, QuadratureRule, Schedule};
use crate::{Error, Result};

/// Parametric task embedding `f(z) = coeff^T phi(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    basis: BasisConfig,
    coeff: Array2<f64>, // L x D_V
}

impl TaskModel {
    pub fn new(basis: BasisConfig, coeff: Array2<f64>) -> Result<Self> {
        if coeff.nrows() != basis.size() {
            return Err(Error::DimensionMismatch {
                expected: basis.size(),
                got: coeff.nrows(),
                what: "coefficient matrix rows",
            });
        }
        if coeff.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "coefficient matrix" });
        }
        Ok(Self { basis, coeff })
    }

    pub fn basis(&self) -> &BasisConfig {
        &self.basis
    }

    pub fn coeff(&self) -> &Array2<f64> {
        &self.coeff
    }

    pub fn visible_dim(&self) -> usize {
        self.coeff.ncols()
    }

    /// Decodes a latent point to visible space.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let phi = self.basis.eval(z)?;
        let d_v = self.visible_dim();
        let mut out = vec![0.0; d_v];
        for (l, &p) in phi.iter().enumerate() {
            let row = self.coeff.row(l);
            for d in 0..d_v {
                out[d] += p * row[d];
            }
        }
        Ok(out)
    }

    /// Decodes at every row of a precomputed basis matrix (`Q x L`).
    pub(crate) fn decode_with_basis_matrix(&self, phi: &Array2<f64>) -> Array2<f64> {
        phi.dot(&self.coeff)
    }
}

/// Grid/gradient parameters of the E-step and the stage split of `train`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    /// Grid resolution per latent dimension for the grid-search stage.
    pub grid_resolution: usize,
    /// Gradient steps per sample in the refinement stage.
    pub grad_iters: usize,
    /// Fraction of iterations that use the grid stage before switching
    /// to gradient refinement.
    pub grid_fraction: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            grid_resolution: 20,
            grad_iters: 5,
            grid_fraction: 0.6,
        }
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct KsmmFit {
    pub model: TaskModel,
    /// Final latent estimates, `N x D_L`.
    pub latents: Array2<f64>,
    /// Cost after the M-step of each iteration.
    pub trace: Vec<f64>,
}

/// M-step: fits `V = A^-1 B X` on the quadrature rule for fixed latents.
pub fn m_step(
    x: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    basis: &BasisConfig,
    rule: &QuadratureRule,
    lambda: f64,
) -> Result<TaskModel> {
    let coeff = weighted_m_step(x, z, None, basis, rule, lambda)?;
    TaskModel::new(*basis, coeff)
}

/// Shared M-step core; `weights` scales each sample's kernel column
/// (the instance-transfer path of the multi-task learner).
pub(crate) fn weighted_m_step(
    x: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    weights: Option<&[f64]>,
    basis: &BasisConfig,
    rule: &QuadratureRule,
    lambda: f64,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidConfig("m_step needs at least one sample".into()));
    }
    if z.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z.nrows(),
            what: "latent rows",
        });
    }
    if x.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "m_step inputs" });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig("m_step lambda must be positive".into()));
    }
    let phi = basis.eval_matrix(rule.points().view())?;
    let h = kernel_matrix(rule, z, lambda); // Q x N
    let q = rule.len();
    let w = rule.weights();

    // hbar(z_q) = sum_n w_n h(z_q | z_n)
    let mut hbar = vec![0.0; q];
    for qi in 0..q {
        let row = h.row(qi);
        let mut acc = 0.0;
        match weights {
            Some(ws) => {
                for (hn, wn) in row.iter().zip(ws) {
                    acc += hn * wn;
                }
            }
            None => acc = row.sum(),
        }
        hbar[qi] = acc;
    }

    // A = Phi^T diag(w * hbar) Phi
    let mut phi_w = phi.clone();
    for (qi, mut row) in phi_w.rows_mut().into_iter().enumerate() {
        let s = w[qi] * hbar[qi];
        row.mapv_inplace(|v| v * s);
    }
    let a = phi.t().dot(&phi_w);

    // B X = Phi^T diag(w) (H diag(weights) X)
    let hx = match weights {
        Some(ws) => {
            let mut xw = x.to_owned();
            for (mut row, &wn) in xw.rows_mut().into_iter().zip(ws) {
                row.mapv_inplace(|v| v * wn);
            }
            h.dot(&xw)
        }
        None => h.dot(&x),
    };
    let mut hx_w = hx;
    for (qi, mut row) in hx_w.rows_mut().into_iter().enumerate() {
        let s = w[qi];
        row.mapv_inplace(|v| v * s);
    }
    let bx = phi.t().dot(&hx_w);

    Ok(crate::numerics::solve::solve_with_ridge_fallback(&a, &bx))
}

/// Kernel matrix `H[q, n] = h(z_q | z_n)` for a point set against a rule.
pub(crate) fn kernel_matrix(
    rule: &QuadratureRule,
    z: ArrayView2<'_, f64>,
    lambda: f64,
) -> Array2<f64> {
    let q = rule.len();
    let n = z.nrows();
    let mut h = Array2::zeros((q, n));
    for qi in 0..q {
        let zq = rule.points().row(qi);
        let zq_s = zq.as_slice().expect("contiguous rule row");
        for ni in 0..n {
            let zn = z.row(ni);
            h[[qi, ni]] = smoothing_kernel(zq_s, zn.as_slice().expect("contiguous latent row"), lambda);
        }
    }
    h
}

/// Regular latent grid of `resolution^dim` points in `[-1, +1]^dim`,
/// rows in lexicographic multi-index order (first dimension slowest).
pub(crate) fn latent_grid(dim: usize, resolution: usize) -> Array2<f64> {
    let coords: Vec<f64> = if resolution == 1 {
        vec![0.0]
    } else {
        (0..resolution)
            .map(|i| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let g = resolution.pow(dim as u32);
    let mut points = Array2::zeros((g, dim));
    let mut idx = vec![0usize; dim];
    for row in 0..g {
        for k in 0..dim {
            points[[row, k]] = coords[idx[k]];
        }
        for k in (0..dim).rev() {
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
        }
    }
    points
}

/// Grid-stage E-step: per sample, the grid point minimizing
/// `||f(z) - x_n||^2`. Ties go to the lowest lexicographic grid index.
pub fn e_step_grid(
    x: ArrayView2<'_, f64>,
    model: &TaskModel,
    resolution: usize,
) -> Result<Array2<f64>> {
    let grid = latent_grid(model.basis().latent_dim(), resolution);
    let phi = model.basis().eval_matrix(grid.view())?;
    let decoded = model.decode_with_basis_matrix(&phi); // G x D_V
    Ok(nearest_on_decoded(x, &decoded, &grid))
}

pub(crate) fn nearest_on_decoded(
    x: ArrayView2<'_, f64>,
    decoded: &Array2<f64>,
    grid: &Array2<f64>,
) -> Array2<f64> {
    let n = x.nrows();
    let dim = grid.ncols();
    let mut z = Array2::zeros((n, dim));
    for ni in 0..n {
        let xs = x.row(ni);
        let mut best = f64::INFINITY;
        let mut best_g = 0;
        for g in 0..decoded.nrows() {
            let mut d2 = 0.0;
            let row = decoded.row(g);
            for (a, b) in row.iter().zip(xs.iter()) {
                let d = a - b;
                d2 += d * d;
            }
            if d2 < best {
                best = d2;
                best_g = g;
            }
        }
        z.row_mut(ni).assign(&grid.row(best_g));
    }
    z
}

/// Gradient-stage E-step: refines each latent by `iters` descent steps
/// with backtracking line search, clamped to the cube. The objective
/// never increases.
pub fn e_step_refine(
    x: ArrayView2<'_, f64>,
    model: &TaskModel,
    current: ArrayView2<'_, f64>,
    iters: usize,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    if current.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: current.nrows(),
            what: "latent rows",
        });
    }
    let dim = model.basis().latent_dim();
    let mut out = current.to_owned();
    let mut z = vec![0.0; dim];
    for ni in 0..n {
        z.copy_from_slice(out.row(ni).as_slice().expect("contiguous latent row"));
        let xs = x.row(ni);
        let xs = xs.as_slice().expect("contiguous sample row");
        refine_point(model, xs, &mut z, iters)?;
        for (k, &v) in z.iter().enumerate() {
            out[[ni, k]] = v;
        }
    }
    Ok(out)
}

/// Squared reconstruction error and its gradient with respect to `z`.
pub(crate) fn objective_with_grad(
    model: &TaskModel,
    x: &[f64],
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (phi, dphi) = model.basis().eval_with_grad(z)?;
    let d_v = model.visible_dim();
    let dim = z.len();
    let coeff = model.coeff();
    let mut residual = vec![0.0; d_v];
    for (l, &p) in phi.iter().enumerate() {
        let row = coeff.row(l);
        for d in 0..d_v {
            residual[d] += p * row[d];
        }
    }
    for (r, xv) in residual.iter_mut().zip(x) {
        *r -= xv;
    }
    let obj = residual.iter().map(|r| r * r).sum();
    let mut grad = vec![0.0; dim];
    for k in 0..dim {
        let mut acc = 0.0;
        for l in 0..phi.len() {
            let dp = dphi[[k, l]];
            if dp == 0.0 {
                continue;
            }
            let row = coeff.row(l);
            let mut dot = 0.0;
            for d in 0..d_v {
                dot += row[d] * residual[d];
            }
            acc += dp * dot;
        }
        grad[k] = 2.0 * acc;
    }
    Ok((obj, grad))
}

/// Squared reconstruction error at `z`.
pub(crate) fn objective(model: &TaskModel, x: &[f64], z: &[f64]) -> Result<f64> {
    let f = model.decode(z)?;
    Ok(f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn refine_point(model: &TaskModel, x: &[f64], z: &mut [f64], iters: usize) -> Result<()> {
    let dim = z.len();
    let mut candidate = vec![0.0; dim];
    for _ in 0..iters {
        let (obj, grad) = objective_with_grad(model, x, z)?;
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        // initial step scaled so the first trial moves O(0.1) in latent space
        let mut step = 0.1 / gnorm2.sqrt().max(1e-12);
        let mut improved = false;
        for _ in 0..30 {
            for k in 0..dim {
                candidate[k] = (z[k] - step * grad[k]).clamp(-1.0, 1.0);
            }
            let obj_c = objective(model, x, &candidate)?;
            if obj_c < obj {
                z.copy_from_slice(&candidate);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(())
}

/// KSMM cost: quadrature estimate of the kernel-smoothed reconstruction
/// error, `(beta / 2N) sum_n sum_q w_q h(z_q|z_n) ||f(z_q) - x_n||^2 / 2^D`.
pub fn cost(
    x: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    model: &TaskModel,
    lambda: f64,
    rule: &QuadratureRule,
    beta: f64,
) -> Result<f64> {
    let phi = model.basis().eval_matrix(rule.points().view())?;
    let decoded = model.decode_with_basis_matrix(&phi); // Q x D_V
    let h = kernel_matrix(rule, z, lambda);
    let n = x.nrows();
    let mut total = 0.0;
    for q in 0..rule.len() {
        let wq = rule.weights()[q];
        let fq = decoded.row(q);
        let hrow = h.row(q);
        let mut acc = 0.0;
        for ni in 0..n {
            let mut d2 = 0.0;
            for (a, b) in fq.iter().zip(x.row(ni).iter()) {
                let d = a - b;
                d2 += d * d;
            }
            acc += hrow[ni] * d2;
        }
        total += wq * acc;
    }
    Ok(beta / (2.0 * n as f64) * total / rule.volume())
}

/// Trains a single-task KSMM: random latent init from `seed`, then
/// alternating E/M steps under the annealing schedule. The E-step uses
/// grid search for the first `grid_fraction` of iterations and gradient
/// refinement afterwards.
pub fn train(
    x: ArrayView2<'_, f64>,
    basis: &BasisConfig,
    rule: &QuadratureRule,
    schedule: &Schedule,
    params: &TrainParams,
    seed: u64,
) -> Result<KsmmFit> {
    schedule.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidConfig("train needs at least one sample".into()));
    }
    let dim = basis.latent_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut z = Array2::zeros((n, dim));
    for ni in 0..n {
        for k in 0..dim {
            z[[ni, k]] = rng.gen_range(-1.0..=1.0);
        }
    }
    let total = schedule.total_iters;
    let grid_iters = grid_stage_iters(total, params.grid_fraction);
    let mut model = m_step(x, z.view(), basis, rule, schedule.anneal(0)?.lower)?;
    let mut trace = Vec::with_capacity(total);
    for t in 0..total {
        let lambda = schedule.anneal(t)?.lower;
        z = if t < grid_iters {
            e_step_grid(x, &model, params.grid_resolution)?
        } else {
            e_step_refine(x, &model, z.view(), params.grad_iters)?
        };
        model = m_step(x, z.view(), basis, rule, lambda)?;
        trace.push(cost(x, z.view(), &model, lambda, rule, schedule.beta)?);
    }
    Ok(KsmmFit { model, latents: z, trace })
}

pub(crate) fn grid_stage_iters(total: usize, fraction: f64) -> usize {
    ((total as f64) * fraction).ceil() as usize
}
