//! CSV reading and writing: datasets in and out, metric tables, traces.
//!
//! Floats are written with the shortest round-trip representation, so a
//! rerun with identical inputs produces byte-identical files.

use std::path::Path;

use mtksmm_core::datasets::LabeledMultiTaskDataset;
use mtksmm_core::mt_ksmm::MultiTaskDataset;
use ndarray::Array2;

use crate::config::CsvSchema;
use crate::runner::{MetricReport, SummaryRow};
use crate::{io_err, CliError, Result};

/// Shortest exact decimal form; `NaN` marks metrics that do not apply
/// (e.g. MI without ground-truth latents).
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub const METRICS_HEADER: [&str; 9] = [
    "dataset",
    "mode",
    "st",
    "seed",
    "rmse_existing",
    "mi_existing",
    "rmse_new",
    "mi_new",
    "runtime_s",
];

/// Long-format metric table, one row per evaluation cell.
pub fn write_metrics_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.mode.as_str().to_string(),
                r.st.to_string(),
                r.seed.to_string(),
                fmt_f64(r.rmse_existing),
                fmt_f64(r.mi_existing),
                fmt_f64(r.rmse_new),
                fmt_f64(r.mi_new),
                fmt_f64(r.runtime_s),
            ]
        })
        .collect();
    write_rows(path, &METRICS_HEADER, &rows)
}

/// Per-(dataset, mode, S/T) summary with mean and standard deviation
/// over seeds.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let header = [
        "dataset",
        "mode",
        "st",
        "seeds",
        "rmse_existing_mean",
        "rmse_existing_std",
        "mi_existing_mean",
        "mi_existing_std",
        "rmse_new_mean",
        "rmse_new_std",
        "mi_new_mean",
        "mi_new_std",
        "runtime_s_mean",
    ];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.mode.as_str().to_string(),
                r.st.to_string(),
                r.n_seeds.to_string(),
                fmt_f64(r.rmse_existing.0),
                fmt_f64(r.rmse_existing.1),
                fmt_f64(r.mi_existing.0),
                fmt_f64(r.mi_existing.1),
                fmt_f64(r.rmse_new.0),
                fmt_f64(r.rmse_new.1),
                fmt_f64(r.mi_new.0),
                fmt_f64(r.mi_new.1),
                fmt_f64(r.runtime_s_mean),
            ]
        })
        .collect();
    write_rows(path, &header, &table)
}

/// Per-iteration training cost.
pub fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .enumerate()
        .map(|(t, c)| vec![t.to_string(), fmt_f64(*c)])
        .collect();
    write_rows(path, &["iteration", "cost"], &rows)
}

/// Dataset export: `task, x_1..x_Dv[, z_1..][, u_1..]` — task latents
/// are repeated on each of the task's rows.
pub fn export_dataset_csv(path: &Path, ds: &LabeledMultiTaskDataset) -> Result<()> {
    let d_v = ds.data.visible_dim();
    let mut header: Vec<String> = vec!["task".into()];
    for d in 1..=d_v {
        header.push(format!("x_{d}"));
    }
    if let Some(z) = &ds.true_z {
        for d in 1..=z.ncols() {
            header.push(format!("true_z_{d}"));
        }
    }
    if let Some(u) = &ds.true_u {
        for d in 1..=u.ncols() {
            header.push(format!("true_u_{d}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let mut rows = Vec::with_capacity(ds.data.n_samples());
    for n in 0..ds.data.n_samples() {
        let task = ds.data.task_of()[n];
        let mut row = vec![task.to_string()];
        row.extend(ds.data.x().row(n).iter().map(|v| fmt_f64(*v)));
        if let Some(z) = &ds.true_z {
            row.extend(z.row(n).iter().map(|v| fmt_f64(*v)));
        }
        if let Some(u) = &ds.true_u {
            row.extend(u.row(task).iter().map(|v| fmt_f64(*v)));
        }
        rows.push(row);
    }
    write_rows(path, &header_refs, &rows)
}

/// Loads a user CSV into a dataset. Task labels are mapped to
/// contiguous indices in first-appearance order; parse errors name the
/// row (1-based, counting the header as row 1) and column.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledMultiTaskDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty file", path.display())))?;
    let header: Vec<&str> = header_line.split(',').map(str::trim).collect();

    let col_index = |name: &String| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!("{}: unknown column '{name}'", path.display()))
        })
    };
    let task_col = col_index(&schema.task_column)?;
    let value_cols: Vec<usize> =
        schema.value_columns.iter().map(col_index).collect::<Result<_>>()?;
    let z_cols: Vec<usize> =
        schema.true_z_columns.iter().map(col_index).collect::<Result<_>>()?;
    let u_cols: Vec<usize> =
        schema.true_u_columns.iter().map(col_index).collect::<Result<_>>()?;

    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut z_rows: Vec<Vec<f64>> = Vec::new();
    let mut task_of: Vec<usize> = Vec::new();
    let mut task_labels: Vec<String> = Vec::new();
    let mut u_of_task: Vec<Vec<f64>> = Vec::new();

    for (line_idx, line) in lines.enumerate() {
        let row_no = line_idx + 2; // header is row 1
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(CliError::Config(format!(
                "{}: row {row_no} has {} cells, header has {}",
                path.display(),
                cells.len(),
                header.len()
            )));
        }
        let parse = |col: usize| -> Result<f64> {
            cells[col].parse::<f64>().map_err(|_| {
                CliError::Config(format!(
                    "{}: non-numeric value '{}' at row {row_no}, column '{}'",
                    path.display(),
                    cells[col],
                    header[col]
                ))
            })
        };
        let label = cells[task_col].to_string();
        let task = match task_labels.iter().position(|l| *l == label) {
            Some(i) => i,
            None => {
                task_labels.push(label);
                u_of_task.push(Vec::new());
                task_labels.len() - 1
            }
        };
        task_of.push(task);
        x_rows.push(value_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?);
        if !z_cols.is_empty() {
            z_rows.push(z_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?);
        }
        if !u_cols.is_empty() {
            u_of_task[task] = u_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?;
        }
    }
    if x_rows.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }

    let n = x_rows.len();
    let d_v = schema.value_columns.len();
    let mut x = Array2::zeros((n, d_v));
    for (r, row) in x_rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            x[[r, c]] = *v;
        }
    }
    let true_z = if z_cols.is_empty() {
        None
    } else {
        let mut z = Array2::zeros((n, z_cols.len()));
        for (r, row) in z_rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                z[[r, c]] = *v;
            }
        }
        Some(z)
    };
    let true_u = if u_cols.is_empty() {
        None
    } else {
        let mut u = Array2::zeros((task_labels.len(), u_cols.len()));
        for (i, row) in u_of_task.iter().enumerate() {
            if row.len() != u_cols.len() {
                return Err(CliError::Config(format!(
                    "{}: task '{}' has no true_u values",
                    path.display(),
                    task_labels[i]
                )));
            }
            for (c, v) in row.iter().enumerate() {
                u[[i, c]] = *v;
            }
        }
        Some(u)
    };

    let data = MultiTaskDataset::new(x, task_of, task_labels.len())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(LabeledMultiTaskDataset { data, true_z, true_u })
}
