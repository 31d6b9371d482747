//! Experiment orchestration: one evaluation cell per (dataset, S/T,
//! seed, transfer mode), run over a worker pool, summarized over seeds.

use std::time::Instant;

use mtksmm_core::datasets::{
    gen_regression, gen_saddle, gen_shape_family, regression_map, split_existing_new,
    LabeledMultiTaskDataset, RegressionKind, RegressionParams,
};
use mtksmm_core::ksmm;
use mtksmm_core::metrics::{mutual_information, reconstruct_existing, rmse};
use mtksmm_core::mt_ksmm::{fit_new_task, train, MtModel, TransferMode};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::config::{DatasetSpec, EvalSpec, ModeName, ModelConfig, RunConfig};
use crate::csvio::load_csv;
use crate::{CliError, Result};

/// One row of the long-format metric table. `NaN` marks metrics that
/// do not apply to the cell (no held-out data, no ground truth).
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub dataset: String,
    pub mode: ModeName,
    pub st: usize,
    pub seed: u64,
    pub rmse_existing: f64,
    pub mi_existing: f64,
    pub rmse_new: f64,
    pub mi_new: f64,
    pub runtime_s: f64,
}

/// Mean and standard deviation over seeds for one (dataset, mode, S/T).
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub dataset: String,
    pub mode: ModeName,
    pub st: usize,
    pub n_seeds: usize,
    pub rmse_existing: (f64, f64),
    pub mi_existing: (f64, f64),
    pub rmse_new: (f64, f64),
    pub mi_new: (f64, f64),
    pub runtime_s_mean: f64,
}

// Distinct deterministic seed roles derived from the cell seed, so the
// dataset, the split and the training run never share a stream.
pub fn data_seed(seed: u64) -> u64 {
    seed
}

pub fn split_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_5eed_0000_0001
}

pub fn train_seed(seed: u64) -> u64 {
    seed ^ 0x7261_696e_0000_0002
}

/// Instantiates a dataset spec (generators honor the seed; CSV data is
/// fixed on disk).
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<LabeledMultiTaskDataset> {
    match spec {
        DatasetSpec::Saddle { n_tasks, samples_per_task, sigma } => {
            Ok(gen_saddle(*n_tasks, *samples_per_task, *sigma, seed)?)
        }
        DatasetSpec::Shape { shape, n_tasks, samples_per_task, sigma } => Ok(gen_shape_family(
            (*shape).into(),
            *n_tasks,
            *samples_per_task,
            *sigma,
            seed,
        )?),
        DatasetSpec::Regression { variant, n_tasks, samples_per_task, params } => {
            let p: RegressionParams = (*params).into();
            Ok(gen_regression((*variant).into(), *n_tasks, *samples_per_task, &p, seed)?)
        }
        DatasetSpec::Csv { path, schema } => load_csv(std::path::Path::new(path), schema),
    }
}

fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).assign(&x.row(r));
    }
    out
}

/// Sample latents pinned to the ground truth, rescaled into the cube
/// when the truth exceeds it (domain-shifted regression inputs reach
/// beyond [-1, 1]). Returns the pinned latents and the scale used.
pub fn pinned_latents(true_z: &Array2<f64>) -> (Array2<f64>, f64) {
    let max_abs = true_z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = max_abs.max(1.0);
    (true_z.mapv(|v| v / scale), scale)
}

/// Runs one evaluation cell: generate, split, train, score existing and
/// new tasks.
pub fn run_cell(
    spec: &DatasetSpec,
    model_cfg: &ModelConfig,
    eval: &EvalSpec,
    st: usize,
    seed: u64,
    mode: ModeName,
    timing: bool,
) -> Result<MetricReport> {
    let started = Instant::now();
    let ds = generate_dataset(spec, data_seed(seed))?;
    let n_tasks = ds.data.n_tasks();
    let n_train = if eval.n_train_tasks == 0 { n_tasks } else { eval.n_train_tasks };
    if n_train > n_tasks {
        return Err(CliError::Config(format!(
            "eval.n_train_tasks ({n_train}) exceeds dataset task count ({n_tasks})"
        )));
    }
    let split = split_existing_new(&ds, n_train, st, split_seed(seed))?;

    let mut mt_cfg = model_cfg.to_mt_config(mode.into())?;
    if model_cfg.fix_z_to_input {
        let true_z = split.train.true_z.as_ref().ok_or_else(|| {
            CliError::Config("model.fix_z_to_input requires ground-truth latents".into())
        })?;
        mt_cfg.fixed_z = Some(pinned_latents(true_z).0);
    }
    let fit = train(&split.train.data, &mt_cfg, train_seed(seed))?;
    let scores = score_split(&fit.model, &fit.state.u, &split, model_cfg, eval, st, seed)?;

    let runtime_s = if timing { started.elapsed().as_secs_f64() } else { 0.0 };
    Ok(MetricReport {
        dataset: spec.name(),
        mode,
        st,
        seed,
        rmse_existing: scores.0,
        mi_existing: scores.1,
        rmse_new: scores.2,
        mi_new: scores.3,
        runtime_s,
    })
}

/// Scores a trained model on a split: existing-task test data via
/// latent re-estimation, new tasks via post-hoc fitting on their first
/// `st` samples. Returns `(rmse_existing, mi_existing, rmse_new,
/// mi_new)`; inapplicable entries are `NaN`.
pub fn score_split(
    model: &MtModel,
    u_trained: &Array2<f64>,
    split: &mtksmm_core::datasets::Split,
    model_cfg: &ModelConfig,
    eval: &EvalSpec,
    st: usize,
    seed: u64,
) -> Result<(f64, f64, f64, f64)> {
    let mt_cfg = model_cfg.to_mt_config(TransferMode::None)?;
    let params = model_cfg.train_params();

    // Existing-task test data: re-estimate z against the trained task
    // embeddings, decode, score.
    let (mut rmse_existing, mut mi_existing) = (f64::NAN, f64::NAN);
    if let Some(test) = &split.existing_test {
        let (preds, latents) = reconstruct_existing(
            model,
            u_trained.view(),
            test.data.x().view(),
            test.data.task_of(),
            &params,
        )?;
        rmse_existing = rmse(preds.view(), test.data.x().view())?;
        if let Some(tz) = &test.true_z {
            mi_existing = mutual_information(tz.view(), latents.view(), eval.bins)?;
        }
    }

    // New tasks: fit on the first `st` samples of each held-out task,
    // score on the rest.
    let (mut rmse_new, mut mi_new) = (f64::NAN, f64::NAN);
    if let Some(new) = &split.new_tasks {
        let i_new = new.data.n_tasks();
        let d_t = mt_cfg.higher_basis.latent_dim();
        let mut u_new = Array2::zeros((i_new, d_t));
        let mut per_task_models = Vec::new();
        let mut test_rows: Vec<usize> = Vec::new();
        let mut test_tasks: Vec<usize> = Vec::new();
        for i in 0..i_new {
            let rows = new.data.samples_of(i);
            if rows.len() <= st {
                continue; // nothing held out to score
            }
            let fit_rows = &rows[..st];
            let x_fit = take_rows(new.data.x().view(), fit_rows);
            match model {
                MtModel::General(g) => {
                    let (u_i, _z) = fit_new_task(
                        x_fit.view(),
                        g,
                        eval.new_task_rounds,
                        model_cfg.task_grid_resolution,
                        &params,
                    )?;
                    for (d, v) in u_i.iter().enumerate() {
                        u_new[[i, d]] = *v;
                    }
                }
                MtModel::PerTask(_) => {
                    // No shared model to transfer from: train a fresh
                    // single-task KSMM on the few new samples.
                    let single = ksmm::train(
                        x_fit.view(),
                        &mt_cfg.lower_basis,
                        &mt_cfg.lower_rule,
                        &mt_cfg.schedule,
                        &params,
                        train_seed(seed) ^ 0x6e65_7774_0000_0000u64.wrapping_add(i as u64),
                    )?;
                    per_task_models.push((i, single.model));
                }
            }
            for &r in &rows[st..] {
                test_rows.push(r);
                test_tasks.push(i);
            }
        }
        if !test_rows.is_empty() {
            let eval_model = match model {
                MtModel::General(g) => MtModel::General(g.clone()),
                MtModel::PerTask(_) => {
                    // Dense per-task vector; tasks with nothing to score
                    // keep a placeholder never referenced by test rows.
                    let mut models: Vec<Option<ksmm::TaskModel>> = vec![None; i_new];
                    for (i, m) in per_task_models {
                        models[i] = Some(m);
                    }
                    let filler = models
                        .iter()
                        .flatten()
                        .next()
                        .cloned()
                        .expect("at least one fitted new task");
                    MtModel::PerTask(
                        models.into_iter().map(|m| m.unwrap_or_else(|| filler.clone())).collect(),
                    )
                }
            };
            let x_test = take_rows(new.data.x().view(), &test_rows);
            let (preds, latents) =
                reconstruct_existing(&eval_model, u_new.view(), x_test.view(), &test_tasks, &params)?;
            rmse_new = rmse(preds.view(), x_test.view())?;
            if let Some(tz) = &new.true_z {
                let tz_test = take_rows(tz.view(), &test_rows);
                mi_new = mutual_information(tz_test.view(), latents.view(), eval.bins)?;
            }
        }
    }

    Ok((rmse_existing, mi_existing, rmse_new, mi_new))
}

pub const ALL_MODES: [ModeName; 3] = [ModeName::None, ModeName::ModelOnly, ModeName::Both];

/// Runs the full grid of cells (datasets x S/T x modes x seeds) on a
/// worker pool and summarizes over seeds. Cell order in the output is
/// deterministic regardless of the worker count.
pub fn compare_methods(cfg: &RunConfig) -> Result<(Vec<MetricReport>, Vec<SummaryRow>)> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for spec in &cfg.datasets {
        for &st in &cfg.eval.st_list {
            for mode in ALL_MODES {
                for &seed in &cfg.eval.seeds {
                    cells.push((spec, st, mode, seed));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers())
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    let reports: Vec<MetricReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|(spec, st, mode, seed)| {
                run_cell(spec, &cfg.model, &cfg.eval, *st, *seed, *mode, cfg.timing)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(&reports);
    Ok((reports, summary))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups reports by (dataset, mode, S/T), preserving first-appearance
/// order, and aggregates over seeds.
pub fn summarize(reports: &[MetricReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, ModeName, usize)> = Vec::new();
    for r in reports {
        let key = (r.dataset.clone(), r.mode, r.st);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|(dataset, mode, st)| {
            let group: Vec<&MetricReport> = reports
                .iter()
                .filter(|r| &r.dataset == dataset && r.mode == *mode && r.st == *st)
                .collect();
            let col = |f: fn(&MetricReport) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            SummaryRow {
                dataset: dataset.clone(),
                mode: *mode,
                st: *st,
                n_seeds: group.len(),
                rmse_existing: mean_std(&col(|r| r.rmse_existing)),
                mi_existing: mean_std(&col(|r| r.mi_existing)),
                rmse_new: mean_std(&col(|r| r.rmse_new)),
                mi_new: mean_std(&col(|r| r.mi_new)),
                runtime_s_mean: mean_std(&col(|r| r.runtime_s)).0,
            }
        })
        .collect()
}

/// Regression-toy scoring: train with sample latents pinned to the
/// input coordinate, then measure the mean squared error of the
/// predicted output over a dense input grid of every task.
pub fn regression_prediction_mse(
    variant: crate::config::RegressionName,
    params: &RegressionParams,
    n_tasks: usize,
    st: usize,
    seed: u64,
    model_cfg: &ModelConfig,
    mode: ModeName,
    grid_points: usize,
) -> Result<f64> {
    let kind: RegressionKind = variant.into();
    let ds = gen_regression(kind, n_tasks, st, params, data_seed(seed))?;
    let true_z = ds.true_z.as_ref().expect("generator provides latents");
    let (pinned, scale) = pinned_latents(true_z);

    let mut mt_cfg = model_cfg.to_mt_config(mode.into())?;
    mt_cfg.fixed_z = Some(pinned);
    let fit = train(&ds.data, &mt_cfg, train_seed(seed))?;

    let true_u = ds.true_u.as_ref().expect("generator provides task latents");
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n_tasks {
        let u = true_u[[i, 0]];
        let (lo, hi) = match kind {
            RegressionKind::Plain => (-1.0, 1.0),
            RegressionKind::DomainShift => (-1.0 + u / 2.0, 1.0 + u / 2.0),
        };
        let task_model = fit.model.task_model(i, fit.state.u.view())?;
        for g in 0..grid_points {
            let t = lo + (hi - lo) * g as f64 / (grid_points - 1) as f64;
            // The analytic input range can slightly exceed the scale
            // observed in the training sample; stay inside the cube.
            let pred = task_model.decode(&[(t / scale).clamp(-1.0, 1.0)])?;
            let truth = regression_map(t, u, params);
            let err = pred[1] - truth;
            sum += err * err;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
