//! Multi-task KSMM: per-task lower KSMMs coordinated by a higher-order
//! KSMM over the task latent space.
//!
//! One training iteration runs
//!   1. instance transfer — Gaussian weights `rho[i, n]` on task-latent
//!      distance, mixing samples across tasks,
//!   2. lower M-step — a weighted [`ksmm`](crate::ksmm) M-step per task
//!      on the merged sample set,
//!   3. higher M-step — the same kernel-smoothing fit applied to the
//!      task coefficient matrices over the task space, producing the
//!      general model `G(z, u)` (model transfer),
//!   4. higher E-step — re-estimates each task latent `u_i`,
//!   5. lower E-step — re-estimates each sample latent `z_n` under the
//!      transferred model `G(·, u_i)`.
//!
//! [`TransferMode`] switches off either transfer mechanism, yielding the
//! single-task and model-transfer-only baselines.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::ksmm::{
    self, e_step_refine, grid_stage_iters, kernel_matrix, latent_grid,
    nearest_on_decoded, weighted_m_step, KsmmFit, TaskModel, TrainParams,
};
use crate::numerics::{smoothing_kernel, BasisConfig, QuadratureRule, Schedule};
use crate::{Error, Result};

/// Samples from several tasks sharing one visible space.
#[derive(Debug, Clone)]
pub struct MultiTaskDataset {
    x: Array2<f64>,
    task_of: Vec<usize>,
    /// Sample indices per task, ascending.
    samples: Vec<Vec<usize>>,
}

impl MultiTaskDataset {
    /// `task_of[n]` assigns sample `n` to a task in `0..n_tasks`; every
    /// task must own at least one sample.
    pub fn new(x: Array2<f64>, task_of: Vec<usize>, n_tasks: usize) -> Result<Self> {
        if task_of.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: task_of.len(),
                what: "task assignment length",
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "dataset samples" });
        }
        let mut samples = vec![Vec::new(); n_tasks];
        for (n, &i) in task_of.iter().enumerate() {
            if i >= n_tasks {
                return Err(Error::UnknownTask { task: i, n_tasks });
            }
            samples[i].push(n);
        }
        if let Some(empty) = samples.iter().position(Vec::is_empty) {
            return Err(Error::EmptyTaskWeights { task: empty });
        }
        Ok(Self { x, task_of, samples })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn task_of(&self) -> &[usize] {
        &self.task_of
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.samples.len()
    }

    pub fn visible_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Sample indices belonging to task `i`.
    pub fn samples_of(&self, i: usize) -> &[usize] {
        &self.samples[i]
    }

    /// Copies task `i`'s samples into a dense matrix.
    pub fn task_x(&self, i: usize) -> Array2<f64> {
        gather_rows(self.x.view(), &self.samples[i])
    }
}

fn gather_rows(m: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (r, &src) in rows.iter().enumerate() {
        out.row_mut(r).assign(&m.row(src));
    }
    out
}

fn scatter_rows(dst: &mut Array2<f64>, rows: &[usize], src: &Array2<f64>) {
    for (r, &d) in rows.iter().enumerate() {
        dst.row_mut(d).assign(&src.row(r));
    }
}

/// Which transfer mechanisms the trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// No transfer: independent single-task KSMMs.
    None,
    /// Model transfer only (the KSMM-of-KSMMs baseline).
    ModelOnly,
    /// Instance and model transfer: the full multi-task learner.
    Both,
}

/// E-step phase: exhaustive grid search early, local refinement late.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Grid,
    Gradient,
}

/// The general model `G(z, u)`: an order-3 coefficient tensor contracted
/// with the lower basis over `z` and the higher basis over `u`,
/// `G_d(z, u) = sum_k sum_l W[k, l, d] psi_k(u) phi_l(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    w: Array3<f64>, // K x L x D_V
    lower_basis: BasisConfig,
    higher_basis: BasisConfig,
}

impl GeneralModel {
    pub fn new(w: Array3<f64>, lower_basis: BasisConfig, higher_basis: BasisConfig) -> Result<Self> {
        if w.shape()[0] != higher_basis.size() {
            return Err(Error::DimensionMismatch {
                expected: higher_basis.size(),
                got: w.shape()[0],
                what: "tensor higher-basis extent",
            });
        }
        if w.shape()[1] != lower_basis.size() {
            return Err(Error::DimensionMismatch {
                expected: lower_basis.size(),
                got: w.shape()[1],
                what: "tensor lower-basis extent",
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "coefficient tensor" });
        }
        Ok(Self { w, lower_basis, higher_basis })
    }

    pub fn tensor(&self) -> &Array3<f64> {
        &self.w
    }

    pub fn lower_basis(&self) -> &BasisConfig {
        &self.lower_basis
    }

    pub fn higher_basis(&self) -> &BasisConfig {
        &self.higher_basis
    }

    pub fn visible_dim(&self) -> usize {
        self.w.shape()[2]
    }

    /// The task model `G(·, u)`: the tensor contracted with `psi(u)`.
    pub fn task_model_at(&self, u: &[f64]) -> Result<TaskModel> {
        let psi = self.higher_basis.eval(u)?;
        let (_, l, d_v) = self.w.dim();
        let mut coeff = Array2::zeros((l, d_v));
        for (k, &p) in psi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            coeff.scaled_add(p, &self.w.index_axis(ndarray::Axis(0), k));
        }
        TaskModel::new(self.lower_basis, coeff)
    }

    /// Decodes the latent pair `(z, u)` to a visible-space point.
    pub fn decode(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.task_model_at(u)?.decode(z)
    }
}

/// Free-function form of [`GeneralModel::decode`].
pub fn general_decode(model: &GeneralModel, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    model.decode(z, u)
}

/// Quadrature norm of `f_a - f_b` over the latent cube (the manifold
/// distance the latent spaces are compared by):
/// `sqrt( sum_q w_q ||f_a(z_q) - f_b(z_q)||^2 / 2^D )`.
pub fn manifold_distance(a: &TaskModel, b: &TaskModel, rule: &QuadratureRule) -> Result<f64> {
    if a.basis() != b.basis() {
        return Err(Error::InvalidConfig(
            "manifold_distance needs models on the same basis".into(),
        ));
    }
    let phi = a.basis().eval_matrix(rule.points().view())?;
    let fa = a.decode_with_basis_matrix(&phi);
    let fb = b.decode_with_basis_matrix(&phi);
    let mut total = 0.0;
    for (q, &wq) in rule.weights().iter().enumerate() {
        let d2: f64 = fa
            .row(q)
            .iter()
            .zip(fb.row(q))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += wq * d2;
    }
    Ok((total / rule.volume()).sqrt())
}

/// Step 1: instance-transfer weights
/// `rho[i, n] = exp(-||u_i - u_{i_n}||^2 / (2 lambda_rho^2))`.
pub fn instance_transfer(
    u: ArrayView2<'_, f64>,
    task_of: &[usize],
    lambda_rho: f64,
) -> Result<Array2<f64>> {
    if !(lambda_rho > 0.0) {
        return Err(Error::InvalidConfig("lambda_rho must be positive".into()));
    }
    let n_tasks = u.nrows();
    // task-by-task kernel, then spread over samples
    let mut r = Array2::zeros((n_tasks, n_tasks));
    for i in 0..n_tasks {
        let ui = u.row(i);
        let ui = ui.as_slice().expect("contiguous task latent row");
        for j in 0..n_tasks {
            let uj = u.row(j);
            r[[i, j]] = smoothing_kernel(ui, uj.as_slice().expect("contiguous task latent row"), lambda_rho);
        }
    }
    let mut rho = Array2::zeros((n_tasks, task_of.len()));
    for (n, &j) in task_of.iter().enumerate() {
        if j >= n_tasks {
            return Err(Error::UnknownTask { task: j, n_tasks });
        }
        for i in 0..n_tasks {
            rho[[i, n]] = r[[i, j]];
        }
    }
    Ok(rho)
}

/// Degenerate weights for the no-instance-transfer modes: each task sees
/// only its own samples.
pub fn own_task_indicator(task_of: &[usize], n_tasks: usize) -> Array2<f64> {
    let mut rho = Array2::zeros((n_tasks, task_of.len()));
    for (n, &i) in task_of.iter().enumerate() {
        rho[[i, n]] = 1.0;
    }
    rho
}

/// Step 2: per-task weighted M-steps on the merged sample set. Returns
/// the coefficient stack `V` (`I x L x D_V`).
///
/// When the weights factor through tasks (`rho[i, n]` depends on `n`
/// only through its task, which holds for both [`instance_transfer`]
/// and [`own_task_indicator`] output), the per-task kernel sums are
/// aggregated once per source task and mixed by matrix products;
/// otherwise each task falls back to an independent weighted fit.
pub fn lower_m_step(
    data: &MultiTaskDataset,
    z: ArrayView2<'_, f64>,
    rho: ArrayView2<'_, f64>,
    basis: &BasisConfig,
    rule: &QuadratureRule,
    lambda: f64,
) -> Result<Array3<f64>> {
    let n = data.n_samples();
    let n_tasks = data.n_tasks();
    let d_v = data.visible_dim();
    if rho.nrows() != n_tasks || rho.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n_tasks * n,
            got: rho.nrows() * rho.ncols(),
            what: "rho matrix size",
        });
    }
    for i in 0..n_tasks {
        if !(rho.row(i).sum() > 0.0) {
            return Err(Error::EmptyTaskWeights { task: i });
        }
    }
    let l = basis.size();
    let mut v_stack = Array3::zeros((n_tasks, l, d_v));

    if let Some(r) = task_factored_weights(data, rho) {
        // H[q, n], per-source-task kernel aggregates, then one mixing
        // product per quantity.
        let h = kernel_matrix(rule, z, lambda); // Q x N
        let q = rule.len();
        let mut s = Array2::zeros((n_tasks, q)); // sum of kernel columns per task
        let mut m = Array2::zeros((n_tasks, q * d_v)); // kernel-weighted data sums
        for (ni, &src) in data.task_of().iter().enumerate() {
            let xs = data.x().row(ni);
            for qi in 0..q {
                let hv = h[[qi, ni]];
                s[[src, qi]] += hv;
                if hv != 0.0 {
                    for d in 0..d_v {
                        m[[src, qi * d_v + d]] += hv * xs[d];
                    }
                }
            }
        }
        let hbar_all = r.dot(&s); // I x Q
        let hx_all = r.dot(&m); // I x (Q * D_V)
        let phi = basis.eval_matrix(rule.points().view())?;
        let w = rule.weights();
        for i in 0..n_tasks {
            let mut phi_w = phi.clone();
            for (qi, mut row) in phi_w.rows_mut().into_iter().enumerate() {
                let scale = w[qi] * hbar_all[[i, qi]];
                row.mapv_inplace(|v| v * scale);
            }
            let a = phi.t().dot(&phi_w);
            let mut hx = Array2::zeros((q, d_v));
            for qi in 0..q {
                for d in 0..d_v {
                    hx[[qi, d]] = w[qi] * hx_all[[i, qi * d_v + d]];
                }
            }
            let bx = phi.t().dot(&hx);
            let coeff = crate::numerics::solve::solve_with_ridge_fallback(&a, &bx);
            v_stack.index_axis_mut(ndarray::Axis(0), i).assign(&coeff);
        }
    } else {
        for i in 0..n_tasks {
            let weights: Vec<f64> = rho.row(i).iter().copied().collect();
            let coeff = weighted_m_step(data.x().view(), z, Some(&weights), basis, rule, lambda)?;
            v_stack.index_axis_mut(ndarray::Axis(0), i).assign(&coeff);
        }
    }
    Ok(v_stack)
}

/// Returns the task-by-task weight matrix when `rho[i, n]` is constant
/// over each source task.
fn task_factored_weights(data: &MultiTaskDataset, rho: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n_tasks = data.n_tasks();
    let mut r = Array2::zeros((n_tasks, n_tasks));
    for i in 0..n_tasks {
        for j in 0..n_tasks {
            r[[i, j]] = rho[[i, data.samples_of(j)[0]]];
        }
    }
    for (n, &j) in data.task_of().iter().enumerate() {
        for i in 0..n_tasks {
            if rho[[i, n]] != r[[i, j]] {
                return None;
            }
        }
    }
    Some(r)
}

/// Step 3: fits the general model by running the same kernel-smoothing
/// M-step over task space — each task's coefficient matrix flattened to
/// a row, smoothed along `u` with the higher basis, reshaped back into
/// the order-3 tensor.
pub fn higher_m_step(
    v_stack: ArrayView3<'_, f64>,
    u: ArrayView2<'_, f64>,
    lower_basis: &BasisConfig,
    higher_basis: &BasisConfig,
    rule_t: &QuadratureRule,
    lambda_t: f64,
) -> Result<GeneralModel> {
    let (n_tasks, l, d_v) = v_stack.dim();
    if l != lower_basis.size() {
        return Err(Error::DimensionMismatch {
            expected: lower_basis.size(),
            got: l,
            what: "coefficient stack basis extent",
        });
    }
    let flat = v_stack
        .to_shape((n_tasks, l * d_v))
        .expect("stack reshape")
        .to_owned();
    let coeff = weighted_m_step(flat.view(), u, None, higher_basis, rule_t, lambda_t)?;
    let k = higher_basis.size();
    let w = coeff
        .into_shape_with_order((k, l, d_v))
        .expect("tensor reshape");
    GeneralModel::new(w, *lower_basis, *higher_basis)
}

/// Step 4: re-estimates each task latent,
/// `u_i = argmin_u sum_{n in task i} ||G(z_n, u) - x_n||^2`.
pub fn higher_e_step(
    data: &MultiTaskDataset,
    z: ArrayView2<'_, f64>,
    model: &GeneralModel,
    current_u: ArrayView2<'_, f64>,
    stage: Stage,
    grid_res: usize,
    grad_iters: usize,
) -> Result<Array2<f64>> {
    let n_tasks = data.n_tasks();
    let d_t = model.higher_basis.latent_dim();
    match stage {
        Stage::Grid => {
            let ugrid = latent_grid(d_t, grid_res);
            let phi_z = model.lower_basis.eval_matrix(z)?; // N x L
            let mut best_err = vec![f64::INFINITY; n_tasks];
            let mut u = Array2::zeros((n_tasks, d_t));
            for g in 0..ugrid.nrows() {
                let ug = ugrid.row(g);
                let tm = model.task_model_at(ug.as_slice().expect("contiguous grid row"))?;
                let pred = phi_z.dot(tm.coeff()); // N x D_V
                for i in 0..n_tasks {
                    let mut err = 0.0;
                    for &ni in data.samples_of(i) {
                        err += pred
                            .row(ni)
                            .iter()
                            .zip(data.x().row(ni))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>();
                    }
                    if err < best_err[i] {
                        best_err[i] = err;
                        u.row_mut(i).assign(&ug);
                    }
                }
            }
            Ok(u)
        }
        Stage::Gradient => {
            let mut u = current_u.to_owned();
            for i in 0..n_tasks {
                // per-sample partial contraction P_n = W x_2 phi(z_n)
                let contractions = task_contractions(model, data, z, i)?;
                let mut ui: Vec<f64> = u.row(i).iter().copied().collect();
                refine_task_latent(model, data, i, &contractions, &mut ui, grad_iters)?;
                for (k, &v) in ui.iter().enumerate() {
                    u[[i, k]] = v;
                }
            }
            Ok(u)
        }
    }
}

/// `K x D_V` tensor contractions of `W` with `phi(z_n)` for each sample
/// of task `i`, in sample order.
fn task_contractions(
    model: &GeneralModel,
    data: &MultiTaskDataset,
    z: ArrayView2<'_, f64>,
    task: usize,
) -> Result<Vec<Array2<f64>>> {
    let (k, _, d_v) = model.w.dim();
    let mut out = Vec::with_capacity(data.samples_of(task).len());
    for &ni in data.samples_of(task) {
        let phi = model
            .lower_basis
            .eval(z.row(ni).as_slice().expect("contiguous latent row"))?;
        let mut p = Array2::zeros((k, d_v));
        for (l, &pv) in phi.iter().enumerate() {
            if pv == 0.0 {
                continue;
            }
            for ki in 0..k {
                for d in 0..d_v {
                    p[[ki, d]] += pv * model.w[[ki, l, d]];
                }
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// Task-latent objective `sum_n ||psi(u)^T P_n - x_n||^2` and gradient.
fn task_objective_with_grad(
    model: &GeneralModel,
    data: &MultiTaskDataset,
    task: usize,
    contractions: &[Array2<f64>],
    u: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (psi, dpsi) = model.higher_basis.eval_with_grad(u)?;
    let d_v = model.visible_dim();
    let d_t = u.len();
    let mut obj = 0.0;
    let mut grad = vec![0.0; d_t];
    for (p, &ni) in contractions.iter().zip(data.samples_of(task)) {
        let xs = data.x().row(ni);
        let mut residual = vec![0.0; d_v];
        for (k, &pv) in psi.iter().enumerate() {
            for d in 0..d_v {
                residual[d] += pv * p[[k, d]];
            }
        }
        for (r, xv) in residual.iter_mut().zip(xs) {
            *r -= xv;
        }
        obj += residual.iter().map(|r| r * r).sum::<f64>();
        for k in 0..psi.len() {
            let mut dot = 0.0;
            for d in 0..d_v {
                dot += p[[k, d]] * residual[d];
            }
            for t in 0..d_t {
                grad[t] += 2.0 * dpsi[[t, k]] * dot;
            }
        }
    }
    Ok((obj, grad))
}

fn task_objective(
    model: &GeneralModel,
    data: &MultiTaskDataset,
    task: usize,
    contractions: &[Array2<f64>],
    u: &[f64],
) -> Result<f64> {
    let psi = model.higher_basis.eval(u)?;
    let d_v = model.visible_dim();
    let mut obj = 0.0;
    for (p, &ni) in contractions.iter().zip(data.samples_of(task)) {
        let xs = data.x().row(ni);
        for d in 0..d_v {
            let mut f = 0.0;
            for (k, &pv) in psi.iter().enumerate() {
                f += pv * p[[k, d]];
            }
            let r = f - xs[d];
            obj += r * r;
        }
    }
    Ok(obj)
}

fn refine_task_latent(
    model: &GeneralModel,
    data: &MultiTaskDataset,
    task: usize,
    contractions: &[Array2<f64>],
    u: &mut [f64],
    iters: usize,
) -> Result<()> {
    let d_t = u.len();
    let mut candidate = vec![0.0; d_t];
    for _ in 0..iters {
        let (obj, grad) = task_objective_with_grad(model, data, task, contractions, u)?;
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let mut step = 0.1 / gnorm2.sqrt().max(1e-12);
        let mut improved = false;
        for _ in 0..30 {
            for k in 0..d_t {
                candidate[k] = (u[k] - step * grad[k]).clamp(-1.0, 1.0);
            }
            let obj_c = task_objective(model, data, task, contractions, &candidate)?;
            if obj_c < obj {
                u.copy_from_slice(&candidate);
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

/// Step 5: re-estimates each sample latent against the transferred model
/// `G(·, u_{i_n})`, same grid/gradient protocol as the single-task
/// E-step.
pub fn lower_e_step(
    data: &MultiTaskDataset,
    model: &GeneralModel,
    u: ArrayView2<'_, f64>,
    current_z: ArrayView2<'_, f64>,
    stage: Stage,
    grid_res: usize,
    grad_iters: usize,
) -> Result<Array2<f64>> {
    let d_l = model.lower_basis.latent_dim();
    let mut z = current_z.to_owned();
    let grid;
    let phi_grid;
    let (grid_ref, phi_ref) = match stage {
        Stage::Grid => {
            grid = latent_grid(d_l, grid_res);
            phi_grid = model.lower_basis.eval_matrix(grid.view())?;
            (Some(&grid), Some(&phi_grid))
        }
        Stage::Gradient => (None, None),
    };
    for i in 0..data.n_tasks() {
        let tm = model.task_model_at(u.row(i).as_slice().expect("contiguous task latent row"))?;
        let rows = data.samples_of(i);
        let x_i = data.task_x(i);
        let z_i = match stage {
            Stage::Grid => {
                let decoded = tm.decode_with_basis_matrix(phi_ref.expect("grid basis"));
                nearest_on_decoded(x_i.view(), &decoded, grid_ref.expect("grid"))
            }
            Stage::Gradient => {
                let current = gather_rows(current_z, rows);
                e_step_refine(x_i.view(), &tm, current.view(), grad_iters)?
            }
        };
        scatter_rows(&mut z, rows, &z_i);
    }
    Ok(z)
}

/// Everything [`train`] needs beyond the dataset.
#[derive(Debug, Clone)]
pub struct MtConfig {
    pub lower_basis: BasisConfig,
    pub higher_basis: BasisConfig,
    pub lower_rule: QuadratureRule,
    pub higher_rule: QuadratureRule,
    pub schedule: Schedule,
    pub mode: TransferMode,
    pub params: TrainParams,
    /// Grid resolution per dimension for the task-latent grid search.
    pub task_grid_resolution: usize,
    /// Pins the sample latents (Step 5 is skipped and no random `Z`
    /// init is drawn) — used by the regression setting where `z` is the
    /// known input coordinate.
    pub fixed_z: Option<Array2<f64>>,
}

impl MtConfig {
    pub fn new(
        lower_basis: BasisConfig,
        higher_basis: BasisConfig,
        lower_rule: QuadratureRule,
        higher_rule: QuadratureRule,
        schedule: Schedule,
        mode: TransferMode,
    ) -> Self {
        Self {
            lower_basis,
            higher_basis,
            lower_rule,
            higher_rule,
            schedule,
            mode,
            params: TrainParams::default(),
            task_grid_resolution: 20,
            fixed_z: None,
        }
    }

    fn validate(&self, data: &MultiTaskDataset) -> Result<()> {
        self.schedule.validate()?;
        if self.lower_rule.dim() != self.lower_basis.latent_dim()
            || self.higher_rule.dim() != self.higher_basis.latent_dim()
        {
            return Err(Error::InvalidConfig(
                "quadrature rule dimensions must match their bases".into(),
            ));
        }
        if self.task_grid_resolution == 0 || self.params.grid_resolution == 0 {
            return Err(Error::InvalidConfig("grid resolutions must be at least 1".into()));
        }
        if let Some(z) = &self.fixed_z {
            if z.nrows() != data.n_samples() || z.ncols() != self.lower_basis.latent_dim() {
                return Err(Error::DimensionMismatch {
                    expected: data.n_samples() * self.lower_basis.latent_dim(),
                    got: z.len(),
                    what: "fixed_z size",
                });
            }
        }
        Ok(())
    }
}

/// The trained model: one joint general model, or — without any
/// transfer — the plain stack of independent task models.
#[derive(Debug, Clone)]
pub enum MtModel {
    General(GeneralModel),
    PerTask(Vec<TaskModel>),
}

impl MtModel {
    /// The effective per-task embedding `f_i`.
    pub fn task_model(&self, i: usize, u: ArrayView2<'_, f64>) -> Result<TaskModel> {
        match self {
            MtModel::General(g) => {
                g.task_model_at(u.row(i).as_slice().expect("contiguous task latent row"))
            }
            MtModel::PerTask(models) => models.get(i).cloned().ok_or(Error::UnknownTask {
                task: i,
                n_tasks: models.len(),
            }),
        }
    }
}

/// Final latents and per-task coefficients of a training run.
#[derive(Debug, Clone)]
pub struct MtFitState {
    pub z: Array2<f64>,
    pub u: Array2<f64>,
    pub rho: Array2<f64>,
    pub v_stack: Array3<f64>,
    pub iteration: usize,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct MtFit {
    pub model: MtModel,
    pub state: MtFitState,
    /// Per-iteration lower cost summed over tasks.
    pub trace: Vec<f64>,
}

/// Trains the multi-task model (Algorithm: Steps 1–5 per iteration
/// under the annealing schedule, with a final Step 1–3 recompute so the
/// returned coefficients reflect the final latents).
///
/// The M-steps of iteration `t` reuse the length scales of iteration
/// `t - 1` (the scales of the E-step that produced the current
/// latents); with a single task this makes the run coincide with
/// single-task [`ksmm::train`].
///
/// Mode [`TransferMode::None`] trains one independent single-task KSMM
/// per task, task `i` seeded with `seed + i`.
pub fn train(data: &MultiTaskDataset, config: &MtConfig, seed: u64) -> Result<MtFit> {
    config.validate(data)?;
    if config.mode == TransferMode::None && config.fixed_z.is_none() {
        return train_independent(data, config, seed);
    }
    let n = data.n_samples();
    let n_tasks = data.n_tasks();
    let d_l = config.lower_basis.latent_dim();
    let d_t = config.higher_basis.latent_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut z = match &config.fixed_z {
        Some(z0) => z0.mapv(|v| v.clamp(-1.0, 1.0)),
        None => {
            let mut z = Array2::zeros((n, d_l));
            for v in z.iter_mut() {
                *v = rng.gen_range(-1.0..=1.0);
            }
            z
        }
    };
    let mut u = Array2::zeros((n_tasks, d_t));
    for v in u.iter_mut() {
        *v = rng.gen_range(-1.0..=1.0);
    }

    let total = config.schedule.total_iters;
    let grid_iters = grid_stage_iters(total, config.params.grid_fraction);
    let indicator = own_task_indicator(data.task_of(), n_tasks);
    let mut trace = Vec::with_capacity(total);
    let mut rho = indicator.clone();
    let mut v_stack = Array3::zeros((n_tasks, config.lower_basis.size(), data.visible_dim()));

    let steps_123 = |rho_out: &mut Array2<f64>,
                     v_out: &mut Array3<f64>,
                     z: &Array2<f64>,
                     u: &Array2<f64>,
                     lam: crate::numerics::Lambdas|
     -> Result<Option<GeneralModel>> {
        *rho_out = match config.mode {
            TransferMode::Both => instance_transfer(u.view(), data.task_of(), lam.rho)?,
            _ => indicator.clone(),
        };
        *v_out = lower_m_step(
            data,
            z.view(),
            rho_out.view(),
            &config.lower_basis,
            &config.lower_rule,
            lam.lower,
        )?;
        if config.mode == TransferMode::None {
            return Ok(None);
        }
        Ok(Some(higher_m_step(
            v_out.view(),
            u.view(),
            &config.lower_basis,
            &config.higher_basis,
            &config.higher_rule,
            lam.task,
        )?))
    };

    for t in 0..total {
        let lam = config.schedule.anneal(t.saturating_sub(1))?;
        let stage = if t < grid_iters { Stage::Grid } else { Stage::Gradient };
        let model = steps_123(&mut rho, &mut v_stack, &z, &u, lam)?;
        if let Some(g) = &model {
            u = higher_e_step(
                data,
                z.view(),
                g,
                u.view(),
                stage,
                config.task_grid_resolution,
                config.params.grad_iters,
            )?;
            if config.fixed_z.is_none() {
                z = lower_e_step(
                    data,
                    g,
                    u.view(),
                    z.view(),
                    stage,
                    config.params.grid_resolution,
                    config.params.grad_iters,
                )?;
            }
        }
        trace.push(summed_lower_cost(
            data,
            model.as_ref(),
            &v_stack,
            &config.lower_basis,
            &u,
            &z,
            lam.lower,
            &config.lower_rule,
            config.schedule.beta,
        )?);
    }

    // final recompute against the final latents
    let lam = config.schedule.anneal(total - 1)?;
    let model = steps_123(&mut rho, &mut v_stack, &z, &u, lam)?;
    let mt_model = match model {
        Some(g) => MtModel::General(g),
        None => MtModel::PerTask(stack_to_models(&v_stack, &config.lower_basis)?),
    };
    Ok(MtFit {
        model: mt_model,
        state: MtFitState { z, u, rho, v_stack, iteration: total },
        trace,
    })
}

/// Mode-none training: one independent single-task run per task.
fn train_independent(data: &MultiTaskDataset, config: &MtConfig, seed: u64) -> Result<MtFit> {
    let n_tasks = data.n_tasks();
    let total = config.schedule.total_iters;
    let d_t = config.higher_basis.latent_dim();
    // U plays no role without transfer; report its random init.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut u = Array2::zeros((n_tasks, d_t));
    for v in u.iter_mut() {
        *v = rng.gen_range(-1.0..=1.0);
    }
    let mut z = Array2::zeros((data.n_samples(), config.lower_basis.latent_dim()));
    let mut v_stack = Array3::zeros((n_tasks, config.lower_basis.size(), data.visible_dim()));
    let mut trace = vec![0.0; total];
    let mut models = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let x_i = data.task_x(i);
        let KsmmFit { model, latents, trace: task_trace } = ksmm::train(
            x_i.view(),
            &config.lower_basis,
            &config.lower_rule,
            &config.schedule,
            &config.params,
            seed.wrapping_add(i as u64),
        )?;
        scatter_rows(&mut z, data.samples_of(i), &latents);
        v_stack
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(model.coeff());
        for (t, c) in task_trace.iter().enumerate() {
            trace[t] += c;
        }
        models.push(model);
    }
    Ok(MtFit {
        model: MtModel::PerTask(models),
        state: MtFitState {
            z,
            u,
            rho: own_task_indicator(data.task_of(), n_tasks),
            v_stack,
            iteration: total,
        },
        trace,
    })
}

fn stack_to_models(v_stack: &Array3<f64>, basis: &BasisConfig) -> Result<Vec<TaskModel>> {
    let mut models = Vec::with_capacity(v_stack.shape()[0]);
    for i in 0..v_stack.shape()[0] {
        let coeff = v_stack.index_axis(ndarray::Axis(0), i).to_owned();
        models.push(TaskModel::new(*basis, coeff)?);
    }
    Ok(models)
}

/// Lower cost summed over tasks, each task against its effective model
/// and its own samples.
#[allow(clippy::too_many_arguments)]
fn summed_lower_cost(
    data: &MultiTaskDataset,
    model: Option<&GeneralModel>,
    v_stack: &Array3<f64>,
    basis: &BasisConfig,
    u: &Array2<f64>,
    z: &Array2<f64>,
    lambda: f64,
    rule: &QuadratureRule,
    beta: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.n_tasks() {
        let tm = match model {
            Some(g) => g.task_model_at(u.row(i).as_slice().expect("contiguous task latent row"))?,
            // mode none: the plain per-task coefficients
            None => TaskModel::new(*basis, v_stack.index_axis(ndarray::Axis(0), i).to_owned())?,
        };
        let x_i = data.task_x(i);
        let z_i = gather_rows(z.view(), data.samples_of(i));
        total += ksmm::cost(x_i.view(), z_i.view(), &tm, lambda, rule, beta)?;
    }
    Ok(total)
}

/// Fits a fresh task to a frozen general model by alternating a
/// task-latent grid sweep with coordinate-descent refinement of
/// `(u, Z)`. Each round's sweep keeps the incumbent, so the objective
/// is non-increasing across rounds. Returns the task latent and the
/// per-sample latents.
pub fn fit_new_task(
    x_new: ArrayView2<'_, f64>,
    model: &GeneralModel,
    rounds: usize,
    task_grid_res: usize,
    params: &TrainParams,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let j = x_new.nrows();
    if j == 0 {
        return Err(Error::InvalidConfig("fit_new_task needs at least one sample".into()));
    }
    if x_new.ncols() != model.visible_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.visible_dim(),
            got: x_new.ncols(),
            what: "new-task sample dimension",
        });
    }
    let d_t = model.higher_basis.latent_dim();
    let ugrid = latent_grid(d_t, task_grid_res);
    let phi_grid;
    let zgrid = latent_grid(model.lower_basis.latent_dim(), params.grid_resolution);
    phi_grid = model.lower_basis.eval_matrix(zgrid.view())?;

    let mut best_err = f64::INFINITY;
    let mut best_u: Vec<f64> = vec![0.0; d_t];
    let mut best_z = Array2::zeros((j, model.lower_basis.latent_dim()));

    let total_err = |tm: &TaskModel, z: &Array2<f64>| -> Result<f64> {
        let mut err = 0.0;
        for ni in 0..j {
            err += crate::ksmm::objective(
                tm,
                x_new.row(ni).as_slice().expect("contiguous sample row"),
                z.row(ni).as_slice().expect("contiguous latent row"),
            )?;
        }
        Ok(err)
    };

    for _ in 0..rounds.max(1) {
        // (a) grid sweep over u with best-response sample latents
        for g in 0..ugrid.nrows() {
            let ug = ugrid.row(g);
            let tm = model.task_model_at(ug.as_slice().expect("contiguous grid row"))?;
            let decoded = tm.decode_with_basis_matrix(&phi_grid);
            let zg = nearest_on_decoded(x_new, &decoded, &zgrid);
            let err = total_err(&tm, &zg)?;
            if err < best_err {
                best_err = err;
                best_u.copy_from_slice(ug.as_slice().expect("contiguous grid row"));
                best_z = zg;
            }
        }
        // (b) coordinate descent: refine Z at fixed u, then u at fixed Z
        let tm = model.task_model_at(&best_u)?;
        let z_ref = e_step_refine(x_new, &tm, best_z.view(), params.grad_iters)?;
        let task_of: Vec<usize> = vec![0; j];
        let pseudo = MultiTaskDataset::new(x_new.to_owned(), task_of, 1)?;
        let contractions = task_contractions(model, &pseudo, z_ref.view(), 0)?;
        let mut u_ref = best_u.clone();
        refine_task_latent(model, &pseudo, 0, &contractions, &mut u_ref, params.grad_iters)?;
        let tm_ref = model.task_model_at(&u_ref)?;
        let err = total_err(&tm_ref, &z_ref)?;
        if err <= best_err {
            best_err = err;
            best_u = u_ref;
            best_z = z_ref;
        }
    }
    Ok((best_u, best_z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ksmm::{e_step_grid, m_step};
    use crate::numerics::quadrature_grid;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn uniform(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
        let mut m = Array2::zeros((rows, cols));
        for v in m.iter_mut() {
            *v = rng.gen_range(-1.0..=1.0);
        }
        m
    }

    /// Small synthetic multi-task set: x = (z1, z2, z1^2 - z2^2 + u) + noise.
    fn saddle_like(
        n_tasks: usize,
        per_task: usize,
        sigma: f64,
        seed: u64,
    ) -> (MultiTaskDataset, Array2<f64>, Array1<f64>) {
        let mut r = rng(seed);
        let n = n_tasks * per_task;
        let mut x = Array2::zeros((n, 3));
        let mut task_of = Vec::with_capacity(n);
        let mut true_z = Array2::zeros((n, 2));
        let mut true_u = Array1::zeros(n_tasks);
        let mut row = 0;
        for i in 0..n_tasks {
            let u: f64 = r.gen_range(-1.0..=1.0);
            true_u[i] = u;
            for _ in 0..per_task {
                let z1: f64 = r.gen_range(-1.0..=1.0);
                let z2: f64 = r.gen_range(-1.0..=1.0);
                true_z[[row, 0]] = z1;
                true_z[[row, 1]] = z2;
                x[[row, 0]] = z1 + sigma * std_normal(&mut r);
                x[[row, 1]] = z2 + sigma * std_normal(&mut r);
                x[[row, 2]] = z1 * z1 - z2 * z2 + u + sigma * std_normal(&mut r);
                task_of.push(i);
                row += 1;
            }
        }
        (MultiTaskDataset::new(x, task_of, n_tasks).unwrap(), true_z, true_u)
    }

    fn std_normal(r: &mut ChaCha12Rng) -> f64 {
        // Box-Muller is plenty for test data
        let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = r.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn dataset_validation() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert!(MultiTaskDataset::new(x.clone(), vec![0, 1], 2).is_ok());
        // wrong assignment length
        assert!(MultiTaskDataset::new(x.clone(), vec![0], 2).is_err());
        // out-of-range task index
        assert!(MultiTaskDataset::new(x.clone(), vec![0, 5], 2).is_err());
        // empty task
        assert!(MultiTaskDataset::new(x.clone(), vec![0, 0], 2).is_err());
        // non-finite sample
        let bad = array![[f64::NAN, 0.0]];
        assert!(MultiTaskDataset::new(bad, vec![0], 1).is_err());
    }

    #[test]
    fn instance_transfer_full_pooling_and_analytic_value() {
        // all task latents equal -> rho identically 1
        let u = Array2::zeros((3, 1));
        let rho = instance_transfer(u.view(), &[0, 1, 1, 2], 1.0).unwrap();
        for v in rho.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 0.0);
        }
        // distance equal to lambda_rho -> exp(-1/2)
        let lam = 0.4;
        let u = array![[0.0], [lam]];
        let rho = instance_transfer(u.view(), &[0, 1], lam).unwrap();
        assert_abs_diff_eq!(rho[[0, 1]], (-0.5f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(rho[[1, 0]], (-0.5f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(rho[[0, 0]], 1.0, epsilon = 0.0);
        // own samples are never down-weighted
        assert_abs_diff_eq!(rho[[1, 1]], 1.0, epsilon = 0.0);
    }

    #[test]
    fn degenerate_lambda_rho_reduces_to_single_task_m_step() {
        let (data, _, _) = saddle_like(4, 6, 0.05, 1);
        let basis = BasisConfig::new(2, 2).unwrap();
        let rule = quadrature_grid(2, 6).unwrap();
        let mut r = rng(2);
        let z = uniform(&mut r, data.n_samples(), 2);
        let u = array![[-0.9], [-0.3], [0.3], [0.9]];
        let rho = instance_transfer(u.view(), data.task_of(), 1e-6).unwrap();
        let v = lower_m_step(&data, z.view(), rho.view(), &basis, &rule, 0.4).unwrap();
        for i in 0..4 {
            let x_i = data.task_x(i);
            let z_i = gather_rows(z.view(), data.samples_of(i));
            let oracle = m_step(x_i.view(), z_i.view(), &basis, &rule, 0.4).unwrap();
            let diff = (&v.index_axis(ndarray::Axis(0), i) - oracle.coeff())
                .iter()
                .fold(0.0f64, |a, d| a.max(d.abs()));
            assert!(diff < 1e-6, "task {i}: max-abs {diff}");
        }
    }

    #[test]
    fn lower_m_step_single_task_equals_ksmm() {
        let (data, _, _) = saddle_like(1, 12, 0.1, 3);
        let basis = BasisConfig::new(2, 2).unwrap();
        let rule = quadrature_grid(2, 6).unwrap();
        let mut r = rng(4);
        let z = uniform(&mut r, 12, 2);
        let rho = own_task_indicator(data.task_of(), 1);
        let v = lower_m_step(&data, z.view(), rho.view(), &basis, &rule, 0.3).unwrap();
        let oracle = m_step(data.x().view(), z.view(), &basis, &rule, 0.3).unwrap();
        for (a, b) in v.index_axis(ndarray::Axis(0), 0).iter().zip(oracle.coeff()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lower_m_step_identical_tasks_full_pooling_are_equal() {
        let mut r = rng(5);
        let x_half = uniform(&mut r, 6, 3);
        let mut x = Array2::zeros((12, 3));
        for n in 0..6 {
            x.row_mut(n).assign(&x_half.row(n));
            x.row_mut(n + 6).assign(&x_half.row(n));
        }
        let task_of: Vec<usize> = (0..12).map(|n| n / 6).collect();
        let data = MultiTaskDataset::new(x, task_of, 2).unwrap();
        let z_half = uniform(&mut r, 6, 1);
        let mut z = Array2::zeros((12, 1));
        for n in 0..6 {
            z.row_mut(n).assign(&z_half.row(n));
            z.row_mut(n + 6).assign(&z_half.row(n));
        }
        let basis = BasisConfig::new(1, 2).unwrap();
        let rule = quadrature_grid(1, 8).unwrap();
        let rho = Array2::ones((2, 12));
        let v = lower_m_step(&data, z.view(), rho.view(), &basis, &rule, 0.3).unwrap();
        assert_eq!(
            v.index_axis(ndarray::Axis(0), 0),
            v.index_axis(ndarray::Axis(0), 1)
        );
    }

    #[test]
    fn lower_m_step_matches_weighted_oracle() {
        // factorized path vs per-task weighted fits on the merged set
        let (data, _, _) = saddle_like(3, 5, 0.1, 7);
        let basis = BasisConfig::new(2, 2).unwrap();
        let rule = quadrature_grid(2, 6).unwrap();
        let mut r = rng(8);
        let z = uniform(&mut r, data.n_samples(), 2);
        let u = array![[-0.5], [0.1], [0.8]];
        let rho = instance_transfer(u.view(), data.task_of(), 0.5).unwrap();
        let v = lower_m_step(&data, z.view(), rho.view(), &basis, &rule, 0.4).unwrap();
        for i in 0..3 {
            let weights: Vec<f64> = rho.row(i).iter().copied().collect();
            let oracle =
                weighted_m_step(data.x().view(), z.view(), Some(&weights), &basis, &rule, 0.4)
                    .unwrap();
            let diff = (&v.index_axis(ndarray::Axis(0), i) - &oracle)
                .iter()
                .fold(0.0f64, |a, d| a.max(d.abs()));
            assert!(diff < 1e-10, "task {i}: max-abs {diff}");
        }
    }

    #[test]
    fn lower_m_step_rejects_zero_weight_task() {
        let (data, _, _) = saddle_like(2, 3, 0.0, 9);
        let basis = BasisConfig::new(2, 1).unwrap();
        let rule = quadrature_grid(2, 4).unwrap();
        let z = Array2::zeros((6, 2));
        let mut rho = Array2::ones((2, 6));
        rho.row_mut(1).fill(0.0);
        assert!(lower_m_step(&data, z.view(), rho.view(), &basis, &rule, 0.3).is_err());
    }

    #[test]
    fn higher_m_step_single_task_constant_smoother() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 0).unwrap();
        let rule_t = quadrature_grid(1, 8).unwrap();
        let mut r = rng(10);
        let v1 = uniform(&mut r, lower.size(), 2);
        let mut v_stack = Array3::zeros((1, lower.size(), 2));
        v_stack.index_axis_mut(ndarray::Axis(0), 0).assign(&v1);
        let u = array![[0.3]];
        let g = higher_m_step(v_stack.view(), u.view(), &lower, &higher, &rule_t, 0.5).unwrap();
        for ut in [-1.0, -0.2, 0.6] {
            let tm = g.task_model_at(&[ut]).unwrap();
            for (a, b) in tm.coeff().iter().zip(v1.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn higher_m_step_equal_models_give_constant_general_model() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 3).unwrap();
        let rule_t = quadrature_grid(1, 8).unwrap();
        let mut r = rng(11);
        let common = uniform(&mut r, lower.size(), 3);
        let n_tasks = 5;
        let mut v_stack = Array3::zeros((n_tasks, lower.size(), 3));
        for i in 0..n_tasks {
            v_stack.index_axis_mut(ndarray::Axis(0), i).assign(&common);
        }
        let u = uniform(&mut r, n_tasks, 1);
        let g = higher_m_step(v_stack.view(), u.view(), &lower, &higher, &rule_t, 0.4).unwrap();
        for ut in [-0.9, 0.0, 0.7] {
            let tm = g.task_model_at(&[ut]).unwrap();
            for (a, b) in tm.coeff().iter().zip(common.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn higher_m_step_linear_family_matches_closed_form() {
        // V_i = V0 + u_i * V1 with a degree-1 higher basis; the oracle
        // solves the same 2x2 normal equations in closed form with
        // naive scalar loops.
        let lower = BasisConfig::new(1, 1).unwrap(); // L = 2
        let higher = BasisConfig::new(1, 1).unwrap(); // K = 2
        let rule_t = quadrature_grid(1, 16).unwrap();
        let mut r = rng(12);
        let v0 = uniform(&mut r, 2, 1);
        let v1 = uniform(&mut r, 2, 1);
        let us = [-0.8, -0.3, 0.2, 0.9];
        let mut v_stack = Array3::zeros((4, 2, 1));
        let mut u = Array2::zeros((4, 1));
        for (i, &ui) in us.iter().enumerate() {
            u[[i, 0]] = ui;
            for l in 0..2 {
                v_stack[[i, l, 0]] = v0[[l, 0]] + ui * v1[[l, 0]];
            }
        }
        let lambda_t = 0.5;
        let g = higher_m_step(v_stack.view(), u.view(), &lower, &higher, &rule_t, lambda_t).unwrap();

        // oracle: per flattened target column, W = A^-1 B with
        // A[a][b] = sum_q w_q psi_a psi_b hbar(u_q),
        // B[a] = sum_q w_q psi_a sum_i h(u_q|u_i) v_i
        let psi = |k: usize, t: f64| -> f64 {
            if k == 0 {
                1.0 / (2.0f64).sqrt()
            } else {
                (1.5f64).sqrt() * t
            }
        };
        let mut a = [[0.0f64; 2]; 2];
        let mut b = [[0.0f64; 2]; 2]; // rows k, columns = flattened (l)
        for (q, &wq) in rule_t.weights().iter().enumerate() {
            let t = rule_t.points()[[q, 0]];
            let mut hbar = 0.0;
            let mut hv = [0.0f64; 2];
            for (i, &ui) in us.iter().enumerate() {
                let h = (-(t - ui) * (t - ui) / (2.0 * lambda_t * lambda_t)).exp();
                hbar += h;
                for l in 0..2 {
                    hv[l] += h * v_stack[[i, l, 0]];
                }
            }
            for ka in 0..2 {
                for kb in 0..2 {
                    a[ka][kb] += wq * psi(ka, t) * psi(kb, t) * hbar;
                }
                for l in 0..2 {
                    b[ka][l] += wq * psi(ka, t) * hv[l];
                }
            }
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        for l in 0..2 {
            let w0 = (a[1][1] * b[0][l] - a[0][1] * b[1][l]) / det;
            let w1 = (a[0][0] * b[1][l] - a[1][0] * b[0][l]) / det;
            assert_abs_diff_eq!(g.tensor()[[0, l, 0]], w0, epsilon = 1e-6);
            assert_abs_diff_eq!(g.tensor()[[1, l, 0]], w1, epsilon = 1e-6);
        }
    }

    fn random_general_model(seed: u64, lower: BasisConfig, higher: BasisConfig, d_v: usize) -> GeneralModel {
        let mut r = rng(seed);
        let mut w = Array3::zeros((higher.size(), lower.size(), d_v));
        for v in w.iter_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        GeneralModel::new(w, lower, higher).unwrap()
    }

    #[test]
    fn general_decode_matches_brute_force() {
        let lower = BasisConfig::new(2, 2).unwrap();
        let higher = BasisConfig::new(1, 2).unwrap();
        let g = random_general_model(13, lower, higher, 4);
        let mut r = rng(14);
        for _ in 0..20 {
            let z = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let u = [r.gen_range(-1.0..1.0)];
            let got = g.decode(&z, &u).unwrap();
            let phi = lower.eval(&z).unwrap();
            let psi = higher.eval(&u).unwrap();
            for d in 0..4 {
                let mut acc = 0.0;
                for k in 0..higher.size() {
                    for l in 0..lower.size() {
                        acc += g.tensor()[[k, l, d]] * psi[k] * phi[l];
                    }
                }
                assert_abs_diff_eq!(got[d], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn general_decode_edge_cases() {
        let lower = BasisConfig::new(1, 1).unwrap();
        let higher = BasisConfig::new(1, 1).unwrap();
        let zero = GeneralModel::new(Array3::zeros((2, 2, 3)), lower, higher).unwrap();
        assert_eq!(zero.decode(&[0.5], &[0.5]).unwrap(), vec![0.0; 3]);
        // rank-1 tensor with constant bases: G = w * psi0 * phi0
        let lower0 = BasisConfig::new(1, 0).unwrap();
        let higher0 = BasisConfig::new(1, 0).unwrap();
        let mut w = Array3::zeros((1, 1, 1));
        w[[0, 0, 0]] = 2.0;
        let g = GeneralModel::new(w, lower0, higher0).unwrap();
        // psi0 = phi0 = 1/sqrt(2)
        assert_abs_diff_eq!(g.decode(&[0.1], &[-0.7]).unwrap()[0], 1.0, epsilon = 1e-14);
        // cube violation
        assert!(g.decode(&[1.5], &[0.0]).is_err());
        assert!(g.decode(&[0.0], &[-1.5]).is_err());
    }

    #[test]
    fn general_decode_is_multilinear() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 1).unwrap();
        let g1 = random_general_model(15, lower, higher, 2);
        let g2 = random_general_model(16, lower, higher, 2);
        let sum = GeneralModel::new(g1.tensor() + g2.tensor(), lower, higher).unwrap();
        let z = [0.4];
        let u = [-0.6];
        let a = g1.decode(&z, &u).unwrap();
        let b = g2.decode(&z, &u).unwrap();
        let s = sum.decode(&z, &u).unwrap();
        for d in 0..2 {
            assert_abs_diff_eq!(s[d], a[d] + b[d], epsilon = 1e-14);
        }
    }

    #[test]
    fn higher_e_step_constant_model_ties_to_first_grid_point() {
        // degree-0 higher basis: G is independent of u
        let lower = BasisConfig::new(1, 1).unwrap();
        let higher = BasisConfig::new(1, 0).unwrap();
        let g = random_general_model(17, lower, higher, 2);
        let (data, _, _) = saddle_like(3, 4, 0.1, 18);
        // adapt dimensions: build a 2-D dataset
        let x = uniform(&mut rng(19), 12, 2);
        let data = MultiTaskDataset::new(x, data.task_of().to_vec(), 3).unwrap();
        let z = uniform(&mut rng(20), 12, 1);
        let u0 = uniform(&mut rng(21), 3, 1);
        let u = higher_e_step(&data, z.view(), &g, u0.view(), Stage::Grid, 11, 5).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(u[[i, 0]], -1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn higher_e_step_recovers_noiseless_task_latent() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 2).unwrap();
        let g = random_general_model(22, lower, higher, 3);
        let u_true = [0.52];
        let tm = g.task_model_at(&u_true).unwrap();
        let mut r = rng(23);
        let n = 8;
        let mut x = Array2::zeros((n, 3));
        let mut z = Array2::zeros((n, 1));
        for ni in 0..n {
            let zt = r.gen_range(-1.0..1.0);
            z[[ni, 0]] = zt;
            let f = tm.decode(&[zt]).unwrap();
            for d in 0..3 {
                x[[ni, d]] = f[d];
            }
        }
        let data = MultiTaskDataset::new(x, vec![0; n], 1).unwrap();
        let res = 41;
        let u0 = Array2::zeros((1, 1));
        let u = higher_e_step(&data, z.view(), &g, u0.view(), Stage::Grid, res, 5).unwrap();
        let cell = 2.0 / (res - 1) as f64;
        assert!((u[[0, 0]] - u_true[0]).abs() <= cell + 1e-12);
        // gradient stage tightens it further
        let u2 = higher_e_step(&data, z.view(), &g, u.view(), Stage::Gradient, res, 20).unwrap();
        assert!((u2[[0, 0]] - u_true[0]).abs() <= (u[[0, 0]] - u_true[0]).abs() + 1e-12);
    }

    #[test]
    fn lower_e_step_reduces_to_single_task_e_step() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 1).unwrap();
        let g = random_general_model(24, lower, higher, 2);
        let x = uniform(&mut rng(25), 10, 2);
        let data = MultiTaskDataset::new(x.clone(), vec![0; 10], 1).unwrap();
        let u = array![[0.3]];
        let z0 = uniform(&mut rng(26), 10, 1);
        let z = lower_e_step(&data, &g, u.view(), z0.view(), Stage::Grid, 15, 5).unwrap();
        let tm = g.task_model_at(&[0.3]).unwrap();
        let oracle = e_step_grid(x.view(), &tm, 15).unwrap();
        assert_eq!(z, oracle);
    }

    #[test]
    fn lower_e_step_noiseless_point_and_monotone_refinement() {
        let lower = BasisConfig::new(2, 2).unwrap();
        let higher = BasisConfig::new(1, 1).unwrap();
        let g = random_general_model(27, lower, higher, 4);
        let u_true = [0.1];
        let tm = g.task_model_at(&u_true).unwrap();
        let z_true = [0.31, -0.42];
        let f = tm.decode(&z_true).unwrap();
        let mut x = Array2::zeros((1, 4));
        for d in 0..4 {
            x[[0, d]] = f[d];
        }
        let data = MultiTaskDataset::new(x.clone(), vec![0], 1).unwrap();
        let u = array![[0.1]];
        let res = 21;
        let z0 = Array2::zeros((1, 2));
        let z = lower_e_step(&data, &g, u.view(), z0.view(), Stage::Grid, res, 5).unwrap();
        let cell = 2.0 / (res - 1) as f64;
        assert!((z[[0, 0]] - z_true[0]).abs() <= cell + 1e-12);
        assert!((z[[0, 1]] - z_true[1]).abs() <= cell + 1e-12);
        // gradient stage never increases the objective
        let before = crate::ksmm::objective(&tm, x.row(0).as_slice().unwrap(), z.row(0).as_slice().unwrap()).unwrap();
        let z2 = lower_e_step(&data, &g, u.view(), z.view(), Stage::Gradient, res, 5).unwrap();
        let after = crate::ksmm::objective(&tm, x.row(0).as_slice().unwrap(), z2.row(0).as_slice().unwrap()).unwrap();
        assert!(after <= before + 1e-15);
    }

    fn small_config(mode: TransferMode) -> MtConfig {
        let lower = BasisConfig::new(1, 3).unwrap();
        let higher = BasisConfig::new(1, 2).unwrap();
        MtConfig::new(
            lower,
            higher,
            quadrature_grid(1, 8).unwrap(),
            quadrature_grid(1, 8).unwrap(),
            Schedule { total_iters: 30, ..Schedule::default() },
            mode,
        )
    }

    #[test]
    fn train_single_task_mode_both_reduces_to_ksmm() {
        let mut r = rng(30);
        let n = 40;
        let mut x = Array2::zeros((n, 3));
        for ni in 0..n {
            let t: f64 = r.gen_range(-1.0..=1.0);
            x[[ni, 0]] = t;
            x[[ni, 1]] = t * t;
            x[[ni, 2]] = 0.3 * t;
        }
        let data = MultiTaskDataset::new(x.clone(), vec![0; n], 1).unwrap();
        let config = small_config(TransferMode::Both);
        let seed = 99;
        let fit = train(&data, &config, seed).unwrap();
        let oracle = ksmm::train(
            x.view(),
            &config.lower_basis,
            &config.lower_rule,
            &config.schedule,
            &config.params,
            seed,
        )
        .unwrap();
        let v1 = fit.state.v_stack.index_axis(ndarray::Axis(0), 0);
        let diff = (&v1 - oracle.model.coeff())
            .iter()
            .fold(0.0f64, |a, d| a.max(d.abs()));
        assert!(diff < 1e-6, "max-abs coefficient gap {diff}");
    }

    #[test]
    fn train_mode_none_equals_independent_ksmm_runs() {
        let (data, _, _) = saddle_like(3, 8, 0.1, 31);
        let mut config = small_config(TransferMode::None);
        config.lower_basis = BasisConfig::new(2, 2).unwrap();
        config.lower_rule = quadrature_grid(2, 6).unwrap();
        config.schedule.total_iters = 10;
        let seed = 5;
        let fit = train(&data, &config, seed).unwrap();
        for i in 0..3 {
            let x_i = data.task_x(i);
            let oracle = ksmm::train(
                x_i.view(),
                &config.lower_basis,
                &config.lower_rule,
                &config.schedule,
                &config.params,
                seed.wrapping_add(i as u64),
            )
            .unwrap();
            let diff = (&fit.state.v_stack.index_axis(ndarray::Axis(0), i) - oracle.model.coeff())
                .iter()
                .fold(0.0f64, |a, d| a.max(d.abs()));
            assert!(diff < 1e-10, "task {i}: max-abs {diff}");
        }
    }

    #[test]
    fn train_identical_tasks_yield_identical_manifolds() {
        let mut r = rng(32);
        let per = 10;
        let x_half = uniform(&mut r, per, 3);
        let mut x = Array2::zeros((2 * per, 3));
        for n in 0..per {
            x.row_mut(n).assign(&x_half.row(n));
            x.row_mut(n + per).assign(&x_half.row(n));
        }
        let task_of: Vec<usize> = (0..2 * per).map(|n| n / per).collect();
        let data = MultiTaskDataset::new(x, task_of, 2).unwrap();
        let config = small_config(TransferMode::Both);
        let fit = train(&data, &config, 7).unwrap();
        let f1 = TaskModel::new(
            config.lower_basis,
            fit.state.v_stack.index_axis(ndarray::Axis(0), 0).to_owned(),
        )
        .unwrap();
        let f2 = TaskModel::new(
            config.lower_basis,
            fit.state.v_stack.index_axis(ndarray::Axis(0), 1).to_owned(),
        )
        .unwrap();
        let d = manifold_distance(&f1, &f2, &config.lower_rule).unwrap();
        assert!(d < 1e-6, "manifold distance {d}");
    }

    #[test]
    fn train_is_deterministic_and_traces_every_iteration() {
        let (data, _, _) = saddle_like(4, 5, 0.1, 33);
        let mut config = small_config(TransferMode::Both);
        config.lower_basis = BasisConfig::new(2, 2).unwrap();
        config.lower_rule = quadrature_grid(2, 6).unwrap();
        config.schedule.total_iters = 8;
        let a = train(&data, &config, 3).unwrap();
        let b = train(&data, &config, 3).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state.z, b.state.z);
        assert_eq!(a.state.u, b.state.u);
        assert_eq!(a.state.v_stack, b.state.v_stack);
        assert_eq!(a.trace.len(), config.schedule.total_iters);
        assert_eq!(a.state.iteration, config.schedule.total_iters);
    }

    #[test]
    fn train_recovers_task_ordering_on_saddle_family() {
        let (data, _, true_u) = saddle_like(40, 4, 0.05, 34);
        let lower = BasisConfig::new(2, 3).unwrap();
        let higher = BasisConfig::new(1, 2).unwrap();
        let mut config = MtConfig::new(
            lower,
            higher,
            quadrature_grid(2, 8).unwrap(),
            quadrature_grid(1, 8).unwrap(),
            Schedule { total_iters: 40, ..Schedule::default() },
            TransferMode::Both,
        );
        config.params.grid_resolution = 15;
        let fit = train(&data, &config, 1).unwrap();
        let est: Vec<f64> = (0..40).map(|i| fit.state.u[[i, 0]]).collect();
        let truth: Vec<f64> = (0..40).map(|i| true_u[i]).collect();
        let rho_s = spearman(&est, &truth);
        assert!(rho_s.abs() > 0.9, "rank correlation {rho_s}");
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let ra = ranks(a);
        let rb = ranks(b);
        let n = a.len() as f64;
        let mean = (n + 1.0) / 2.0;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (x, y) in ra.iter().zip(&rb) {
            num += (x - mean) * (y - mean);
            da += (x - mean) * (x - mean);
            db += (y - mean) * (y - mean);
        }
        num / (da * db).sqrt()
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64 + 1.0;
        }
        r
    }

    #[test]
    fn train_fixed_z_skips_lower_e_step() {
        let (data, true_z, _) = saddle_like(3, 6, 0.05, 35);
        let mut config = small_config(TransferMode::Both);
        config.lower_basis = BasisConfig::new(2, 2).unwrap();
        config.lower_rule = quadrature_grid(2, 6).unwrap();
        config.schedule.total_iters = 6;
        config.fixed_z = Some(true_z.clone());
        let fit = train(&data, &config, 2).unwrap();
        assert_eq!(fit.state.z, true_z);
    }

    #[test]
    fn fit_new_task_reaches_noiseless_optimum() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 2).unwrap();
        let g = random_general_model(36, lower, higher, 3);
        let u_true = [0.37];
        let tm = g.task_model_at(&u_true).unwrap();
        let mut r = rng(37);
        let j = 6;
        let mut x = Array2::zeros((j, 3));
        let mut z_true = Array2::zeros((j, 1));
        for ni in 0..j {
            let zt = r.gen_range(-1.0..1.0);
            z_true[[ni, 0]] = zt;
            let f = tm.decode(&[zt]).unwrap();
            for d in 0..3 {
                x[[ni, d]] = f[d];
            }
        }
        let mut params = TrainParams::default();
        params.grad_iters = 20;
        let (u, z) = fit_new_task(x.view(), &g, 10, 21, &params).unwrap();
        let tm_fit = g.task_model_at(&u).unwrap();
        let mut err = 0.0;
        for ni in 0..j {
            err += crate::ksmm::objective(
                &tm_fit,
                x.row(ni).as_slice().unwrap(),
                z.row(ni).as_slice().unwrap(),
            )
            .unwrap();
        }
        // the true latents attain objective 0; the fit must get there too
        assert!(err < 1e-8, "residual objective {err}");
    }

    #[test]
    fn fit_new_task_single_sample_attains_grid_minimum() {
        let lower = BasisConfig::new(1, 2).unwrap();
        let higher = BasisConfig::new(1, 1).unwrap();
        let g = random_general_model(38, lower, higher, 2);
        let x = array![[0.2, -0.4]];
        let params = TrainParams::default();
        let res = 15;
        let (u, z) = fit_new_task(x.view(), &g, 3, res, &params).unwrap();
        let tm = g.task_model_at(&u).unwrap();
        let err = crate::ksmm::objective(&tm, x.row(0).as_slice().unwrap(), z.row(0).as_slice().unwrap()).unwrap();
        // exhaustive (u, z) grid minimum as the baseline
        let ugrid = latent_grid(1, res);
        let zgrid = latent_grid(1, params.grid_resolution);
        let mut best = f64::INFINITY;
        for gu in 0..ugrid.nrows() {
            let tm_g = g.task_model_at(ugrid.row(gu).as_slice().unwrap()).unwrap();
            for gz in 0..zgrid.nrows() {
                let e = crate::ksmm::objective(
                    &tm_g,
                    x.row(0).as_slice().unwrap(),
                    zgrid.row(gz).as_slice().unwrap(),
                )
                .unwrap();
                if e < best {
                    best = e;
                }
            }
        }
        assert!(err <= best + 1e-12, "fit {err} vs grid best {best}");
    }

    #[test]
    fn manifold_distance_analytic_value() {
        let basis = BasisConfig::new(1, 1).unwrap();
        let rule = quadrature_grid(1, 8).unwrap();
        // f_a - f_b = constant c in one coordinate: distance = |c|
        let c = 0.75;
        let a = TaskModel::new(basis, array![[c * (2.0f64).sqrt()], [0.0]]).unwrap();
        let b = TaskModel::new(basis, array![[0.0], [0.0]]).unwrap();
        let d = manifold_distance(&a, &b, &rule).unwrap();
        assert_abs_diff_eq!(d, c, epsilon = 1e-12);
    }
}
