//! Evaluation metrics: reconstruction RMSE, plug-in mutual information,
//! and reconstruction of held-out samples of trained tasks.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, ArrayView2};
#[allow(unused_imports)]
use num_traits::Float;

use crate::ksmm::{e_step_refine, latent_grid, nearest_on_decoded, TrainParams};
use crate::mt_ksmm::MtModel;
use crate::{Error, Result};

/// Root-mean-square of the per-sample Euclidean error:
/// `sqrt( (1/M) sum_m ||x_hat_m - x_m||^2 )`.
///
/// Note the norm is over the full sample vector, not per element — with
/// isotropic noise of deviation `sigma` in `D` dimensions the floor is
/// `sigma * sqrt(D)`.
pub fn rmse(predictions: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    if predictions.dim() != targets.dim() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
            what: "prediction matrix size",
        });
    }
    let m = predictions.nrows();
    if m == 0 {
        return Err(Error::InvalidConfig("rmse needs at least one sample".into()));
    }
    let mut total = 0.0;
    for (p, t) in predictions.rows().into_iter().zip(targets.rows()) {
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((total / m as f64).sqrt())
}

/// Plug-in mutual information (nats) of the joint histogram of `a` and
/// `b` with `bins_per_dim` equal-width bins spanning each axis's
/// observed min–max. Empty cells contribute 0; a constant axis occupies
/// a single bin.
pub fn mutual_information(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    bins_per_dim: usize,
) -> Result<f64> {
    let m = a.nrows();
    if b.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.nrows(),
            what: "second variable rows",
        });
    }
    if m < 2 {
        return Err(Error::InvalidConfig("mutual_information needs at least 2 samples".into()));
    }
    if bins_per_dim == 0 {
        return Err(Error::InvalidConfig("bins_per_dim must be at least 1".into()));
    }
    let ia = bin_indices(a, bins_per_dim)?;
    let ib = bin_indices(b, bins_per_dim)?;
    let mut joint: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut pa: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pb: BTreeMap<u64, usize> = BTreeMap::new();
    for (&ka, &kb) in ia.iter().zip(&ib) {
        *joint.entry((ka, kb)).or_insert(0) += 1;
        *pa.entry(ka).or_insert(0) += 1;
        *pb.entry(kb).or_insert(0) += 1;
    }
    let mf = m as f64;
    // summing in a canonical order keeps the estimator exactly
    // symmetric in its arguments
    let mut terms: Vec<f64> = joint
        .iter()
        .map(|(&(ka, kb), &c)| {
            let p = c as f64 / mf;
            let px = pa[&ka] as f64 / mf;
            let py = pb[&kb] as f64 / mf;
            p * (p / (px * py)).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}

/// Flattened joint-bin index per row, mixed-radix over the axes.
fn bin_indices(v: ArrayView2<'_, f64>, bins: usize) -> Result<Vec<u64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "mutual_information input" });
    }
    let d = v.ncols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in v.rows() {
        for (k, &x) in row.iter().enumerate() {
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
    }
    let mut out = Vec::with_capacity(v.nrows());
    for row in v.rows() {
        let mut key: u64 = 0;
        for (k, &x) in row.iter().enumerate() {
            let idx = if hi[k] > lo[k] {
                // the max lands in the last bin
                (((x - lo[k]) / (hi[k] - lo[k]) * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            key = key * bins as u64 + idx as u64;
        }
        out.push(key);
    }
    Ok(out)
}

/// Reconstructs held-out samples of tasks seen in training: per sample,
/// the latent is re-estimated against the task's trained embedding
/// (grid search plus gradient refinement) and the sample is decoded
/// back. Returns the predictions and the latent estimates.
pub fn reconstruct_existing(
    model: &MtModel,
    u: ArrayView2<'_, f64>,
    x_test: ArrayView2<'_, f64>,
    task_of_test: &[usize],
    params: &TrainParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if task_of_test.len() != x_test.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x_test.nrows(),
            got: task_of_test.len(),
            what: "test task assignment length",
        });
    }
    let n_tasks = u.nrows();
    let mut rows_of_task: Vec<Vec<usize>> = vec![Vec::new(); n_tasks];
    for (row, &i) in task_of_test.iter().enumerate() {
        if i >= n_tasks {
            return Err(Error::UnknownTask { task: i, n_tasks });
        }
        rows_of_task[i].push(row);
    }
    let mut predictions = Array2::zeros(x_test.raw_dim());
    let mut latents: Option<Array2<f64>> = None;
    let mut grid_cache: Option<(Array2<f64>, Array2<f64>)> = None; // (grid, phi)
    for (i, rows) in rows_of_task.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let tm = model.task_model(i, u)?;
        let d_l = tm.basis().latent_dim();
        let latents = latents.get_or_insert_with(|| Array2::zeros((x_test.nrows(), d_l)));
        if grid_cache.is_none() {
            let grid = latent_grid(d_l, params.grid_resolution);
            let phi = tm.basis().eval_matrix(grid.view())?;
            grid_cache = Some((grid, phi));
        }
        let (grid, phi) = grid_cache.as_ref().expect("cached grid");
        let mut x_i = Array2::zeros((rows.len(), x_test.ncols()));
        for (r, &src) in rows.iter().enumerate() {
            x_i.row_mut(r).assign(&x_test.row(src));
        }
        let decoded = tm.decode_with_basis_matrix(phi);
        let z_grid = nearest_on_decoded(x_i.view(), &decoded, grid);
        let z_i = e_step_refine(x_i.view(), &tm, z_grid.view(), params.grad_iters)?;
        for (r, &dst) in rows.iter().enumerate() {
            let pred = tm.decode(z_i.row(r).as_slice().expect("contiguous latent row"))?;
            for (d, &v) in pred.iter().enumerate() {
                predictions[[dst, d]] = v;
            }
            latents.row_mut(dst).assign(&z_i.row(r));
        }
    }
    let latents = latents.ok_or_else(|| Error::InvalidConfig("no test samples".into()))?;
    Ok((predictions, latents))
}
