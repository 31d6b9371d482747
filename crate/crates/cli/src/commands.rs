//! Implementations of the CLI subcommands. Everything here is plain
//! library code so the commands are testable without spawning the
//! binary.

use std::path::{Path, PathBuf};

use mtksmm_core::datasets::split_existing_new;
use mtksmm_core::mt_ksmm::{train, MtModel};
use ndarray::Array2;

use crate::config::{DatasetSpec, RunConfig};
use crate::csvio::{
    export_dataset_csv, fmt_f64, write_metrics_csv, write_summary_csv, write_trace_csv,
};
use crate::model_io::{FitStateFile, ModelFile};
use crate::runner::{
    self, compare_methods, generate_dataset, pinned_latents, score_split, MetricReport,
};
use crate::svg::{line_chart, scatter_chart, Series};
use crate::{io_err, CliError, Result};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// The training cell `train`/`evaluate --model` agree on: the first
/// dataset, the first S/T value and the config's base seed.
fn base_split(
    cfg: &RunConfig,
) -> Result<(mtksmm_core::datasets::Split, usize)> {
    let spec = &cfg.datasets[0];
    let st = cfg.eval.st_list[0];
    let ds = generate_dataset(spec, runner::data_seed(cfg.seed))?;
    let n_tasks = ds.data.n_tasks();
    let n_train = if cfg.eval.n_train_tasks == 0 { n_tasks } else { cfg.eval.n_train_tasks };
    if n_train > n_tasks {
        return Err(CliError::Config(format!(
            "eval.n_train_tasks ({n_train}) exceeds dataset task count ({n_tasks})"
        )));
    }
    let split = split_existing_new(&ds, n_train, st, runner::split_seed(cfg.seed))?;
    Ok((split, st))
}

/// `train`: fit one model on the config's first dataset and write the
/// model, the fit state, the cost trace and a single-row metric table.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    ensure_dir(&out)?;
    cfg.write_effective(&out)?;

    let started = std::time::Instant::now();
    let (split, st) = base_split(cfg)?;
    let mut mt_cfg = cfg.model.to_mt_config(cfg.model.mode.into())?;
    if cfg.model.fix_z_to_input {
        let true_z = split.train.true_z.as_ref().ok_or_else(|| {
            CliError::Config("model.fix_z_to_input requires ground-truth latents".into())
        })?;
        mt_cfg.fixed_z = Some(pinned_latents(true_z).0);
    }
    let fit = train(&split.train.data, &mt_cfg, runner::train_seed(cfg.seed))?;

    ModelFile::from_fit(&fit, &mt_cfg).save(&out.join("model.json"))?;
    FitStateFile::from_fit(&fit).save(&out.join("fit_state.json"))?;
    write_trace_csv(&out.join("trace.csv"), &fit.trace)?;

    let scores = score_split(&fit.model, &fit.state.u, &split, &cfg.model, &cfg.eval, st, cfg.seed)?;
    let report = MetricReport {
        dataset: cfg.datasets[0].name(),
        mode: cfg.model.mode,
        st,
        seed: cfg.seed,
        rmse_existing: scores.0,
        mi_existing: scores.1,
        rmse_new: scores.2,
        mi_new: scores.3,
        runtime_s: if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 },
    };
    write_metrics_csv(&out.join("train_metrics.csv"), &[report.clone()])?;
    println!(
        "trained {} (mode {}, st {}): rmse_existing {}",
        report.dataset,
        report.mode.as_str(),
        st,
        fmt_f64(report.rmse_existing)
    );
    Ok(())
}

/// `evaluate`: with a model file, score that model on the config's
/// base split; without one, run the full three-method comparison.
pub fn cmd_evaluate(cfg: &RunConfig, model_path: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    ensure_dir(&out)?;
    cfg.write_effective(&out)?;

    match model_path {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "model file not found: {}",
                    path.display()
                )));
            }
            let started = std::time::Instant::now();
            let (model, u, _schedule, mode) = ModelFile::load(path)?.to_parts()?;
            let (split, st) = base_split(cfg)?;
            check_compatibility(&model, &u, &split.train.data)?;
            let scores =
                score_split(&model, &u, &split, &cfg.model, &cfg.eval, st, cfg.seed)?;
            let report = MetricReport {
                dataset: cfg.datasets[0].name(),
                mode: mode.into(),
                st,
                seed: cfg.seed,
                rmse_existing: scores.0,
                mi_existing: scores.1,
                rmse_new: scores.2,
                mi_new: scores.3,
                runtime_s: if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 },
            };
            write_metrics_csv(&out.join("metrics.csv"), &[report.clone()])?;
            println!(
                "evaluated {}: rmse_existing {}",
                path.display(),
                fmt_f64(report.rmse_existing)
            );
        }
        None => {
            let (reports, summary) = compare_methods(cfg)?;
            write_metrics_csv(&out.join("metrics.csv"), &reports)?;
            write_summary_csv(&out.join("summary.csv"), &summary)?;
            println!("wrote {} metric rows, {} summary rows", reports.len(), summary.len());
        }
    }
    Ok(())
}

fn check_compatibility(
    model: &MtModel,
    u: &Array2<f64>,
    train_data: &mtksmm_core::mt_ksmm::MultiTaskDataset,
) -> Result<()> {
    let model_dv = match model {
        MtModel::General(g) => g.visible_dim(),
        MtModel::PerTask(models) => models.first().map(|m| m.visible_dim()).unwrap_or(0),
    };
    if model_dv != train_data.visible_dim() {
        return Err(CliError::Config(format!(
            "model/config mismatch: model visible_dim {} vs dataset visible_dim {}",
            model_dv,
            train_data.visible_dim()
        )));
    }
    if u.nrows() != train_data.n_tasks() {
        return Err(CliError::Config(format!(
            "model/config mismatch: model has {} task latents, split has {} training tasks",
            u.nrows(),
            train_data.n_tasks()
        )));
    }
    Ok(())
}

/// Latent points for `generate`: an explicit `;`-separated list of
/// `,`-separated coordinates, or an axis-aligned grid over the cube.
pub fn parse_points(list: Option<&str>, grid: Option<usize>, dim: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(text) = list {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let mut points = Vec::new();
        for (i, chunk) in text.split(';').enumerate() {
            let coords: Vec<f64> = chunk
                .split(',')
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|_| {
                        CliError::Config(format!("point {i}: non-numeric coordinate '{c}'"))
                    })
                })
                .collect::<Result<_>>()?;
            if coords.len() != dim {
                return Err(CliError::Config(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    coords.len()
                )));
            }
            if coords.iter().any(|v| v.abs() > 1.0) {
                return Err(CliError::Config(format!(
                    "point {i} lies outside the latent cube [-1, 1]^{dim}"
                )));
            }
            points.push(coords);
        }
        return Ok(points);
    }
    let res = grid.unwrap_or(10);
    if res == 0 {
        return Err(CliError::Config("grid resolution must be >= 1".into()));
    }
    let axis: Vec<f64> = if res == 1 {
        vec![0.0]
    } else {
        (0..res).map(|k| -1.0 + 2.0 * k as f64 / (res - 1) as f64).collect()
    };
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in &axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

/// `generate`: decode `G(z, u)` over the given latent lists/grids into
/// a CSV and optionally an SVG projection (one series per task latent).
#[allow(clippy::too_many_arguments)]
pub fn cmd_generate(
    model_path: &Path,
    z_list: Option<&str>,
    z_grid: Option<usize>,
    u_list: Option<&str>,
    u_grid: Option<usize>,
    out_dir: &Path,
    svg: bool,
    proj: Option<(usize, usize)>,
) -> Result<()> {
    if !model_path.exists() {
        return Err(CliError::Config(format!(
            "model file not found: {}",
            model_path.display()
        )));
    }
    let (model, _u, _schedule, _mode) = ModelFile::load(model_path)?.to_parts()?;
    let general = match &model {
        MtModel::General(g) => g,
        MtModel::PerTask(_) => {
            return Err(CliError::Config(
                "mode-none model has per-task embeddings only; generate needs a task-space map"
                    .into(),
            ))
        }
    };
    let d_l = general.lower_basis().latent_dim();
    let d_t = general.higher_basis().latent_dim();
    let d_v = general.visible_dim();
    let zs = parse_points(z_list, z_grid, d_l)?;
    // Default: the single central task latent.
    let us = match (u_list, u_grid) {
        (None, None) => vec![vec![0.0; d_t]],
        _ => parse_points(u_list, u_grid, d_t)?,
    };

    ensure_dir(out_dir)?;
    let mut header: Vec<String> = Vec::new();
    for d in 1..=d_t {
        header.push(format!("u_{d}"));
    }
    for d in 1..=d_l {
        header.push(format!("z_{d}"));
    }
    for d in 1..=d_v {
        header.push(format!("x_{d}"));
    }
    let mut text = header.join(",");
    text.push('\n');

    let mut series: Vec<Series> = Vec::new();
    let (px, py) = proj.unwrap_or((0, if d_v > 2 { 2 } else { d_v - 1 }));
    if px >= d_v || py >= d_v {
        return Err(CliError::Config(format!(
            "projection coordinates must be < visible_dim ({d_v})"
        )));
    }
    for u in &us {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for z in &zs {
            let x = general.decode(z, u)?;
            let mut row: Vec<String> = u.iter().map(|v| fmt_f64(*v)).collect();
            row.extend(z.iter().map(|v| fmt_f64(*v)));
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            text.push_str(&row.join(","));
            text.push('\n');
            xs.push(x[px]);
            ys.push(x[py]);
        }
        series.push(Series {
            label: format!("u=({})", u.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(",")),
            xs,
            ys,
            err: None,
        });
    }
    let csv_path = out_dir.join("generated.csv");
    std::fs::write(&csv_path, text).map_err(|e| io_err(&csv_path, e))?;

    if svg {
        let chart = scatter_chart(
            "decoded manifold",
            &format!("x_{}", px + 1),
            &format!("x_{}", py + 1),
            &series,
        );
        let svg_path = out_dir.join("generated.svg");
        std::fs::write(&svg_path, chart).map_err(|e| io_err(&svg_path, e))?;
    }
    println!("decoded {} points", zs.len() * us.len());
    Ok(())
}

/// `sweep`: the full comparison plus per-mode RMSE/MI curves over S/T,
/// as CSV and SVG (error bars: std over seeds).
pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    ensure_dir(&out)?;
    cfg.write_effective(&out)?;

    let (reports, summary) = compare_methods(cfg)?;
    write_metrics_csv(&out.join("metrics.csv"), &reports)?;
    write_summary_csv(&out.join("summary.csv"), &summary)?;

    for spec in &cfg.datasets {
        let name = spec.name();
        for (metric, label, file) in [
            (0usize, "RMSE (existing tasks)", "rmse"),
            (1usize, "MI (existing tasks)", "mi"),
        ] {
            let series: Vec<Series> = runner::ALL_MODES
                .iter()
                .map(|mode| {
                    let rows: Vec<_> = summary
                        .iter()
                        .filter(|s| s.dataset == name && s.mode == *mode)
                        .collect();
                    let pick = |s: &crate::runner::SummaryRow| match metric {
                        0 => s.rmse_existing,
                        _ => s.mi_existing,
                    };
                    Series {
                        label: mode.as_str().to_string(),
                        xs: rows.iter().map(|s| s.st as f64).collect(),
                        ys: rows.iter().map(|s| pick(s).0).collect(),
                        err: Some(rows.iter().map(|s| pick(s).1).collect()),
                    }
                })
                .collect();
            let chart = line_chart(&format!("{label} — {name}"), "S/T", label, &series);
            let path = out.join(format!("sweep_{file}_{name}.svg"));
            std::fs::write(&path, chart).map_err(|e| io_err(&path, e))?;
        }
    }
    println!("wrote {} metric rows over {} S/T values", reports.len(), cfg.eval.st_list.len());
    Ok(())
}

/// `datagen`: write the config's first dataset to CSV (plus a scatter
/// of the first two observation coordinates).
pub fn cmd_datagen(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    ensure_dir(&out)?;
    cfg.write_effective(&out)?;

    let spec: &DatasetSpec = &cfg.datasets[0];
    let ds = generate_dataset(spec, runner::data_seed(cfg.seed))?;
    export_dataset_csv(&out.join("dataset.csv"), &ds)?;
    println!(
        "generated {}: {} samples across {} tasks",
        spec.name(),
        ds.data.n_samples(),
        ds.data.n_tasks()
    );
    Ok(())
}
