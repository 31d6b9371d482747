//! JSON serialization of trained models and fit states.
//!
//! Floats are written in their shortest exact decimal form, so a
//! save/load cycle restores bit-identical coefficients.

use std::path::Path;

use mtksmm_core::ksmm::TaskModel;
use mtksmm_core::mt_ksmm::{GeneralModel, MtConfig, MtFit, MtModel, TransferMode};
use mtksmm_core::numerics::BasisConfig;
use mtksmm_core::numerics::Schedule;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::config::{ModeName, ScheduleConfig};
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixData {
    pub shape: [usize; 2],
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixData {
    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            shape: [a.nrows(), a.ncols()],
            data: a.iter().cloned().collect(),
        }
    }

    fn to_array(&self, what: &str) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|_| CliError::Config(format!("model file: inconsistent {what} shape")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: [usize; 3],
    /// Row-major (last index fastest) entries.
    pub data: Vec<f64>,
}

impl TensorData {
    fn from_array(a: &Array3<f64>) -> Self {
        let d = a.dim();
        Self {
            shape: [d.0, d.1, d.2],
            data: a.iter().cloned().collect(),
        }
    }

    fn to_array(&self) -> Result<Array3<f64>> {
        Array3::from_shape_vec(
            (self.shape[0], self.shape[1], self.shape[2]),
            self.data.clone(),
        )
        .map_err(|_| CliError::Config("model file: inconsistent tensor shape".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisData {
    pub latent_dim: usize,
    pub max_degree: usize,
}

impl BasisData {
    fn from_config(c: &BasisConfig) -> Self {
        Self {
            latent_dim: c.latent_dim(),
            max_degree: c.max_degree_per_dim(),
        }
    }

    fn to_config(&self) -> Result<BasisConfig> {
        BasisConfig::new(self.latent_dim, self.max_degree)
            .map_err(|e| CliError::Config(format!("model file: {e}")))
    }
}

/// On-disk model document: bases, schedule, coefficients and the final
/// task latents. General modes carry the order-3 tensor `w`; mode
/// `none` instead carries one coefficient matrix per task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub visible_dim: usize,
    pub mode: ModeName,
    pub lower_basis: BasisData,
    pub higher_basis: BasisData,
    pub schedule: ScheduleConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w: Option<TensorData>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task_models: Option<Vec<MatrixData>>,
    /// Final task latent estimates, one row per trained task.
    pub u: MatrixData,
}

impl ModelFile {
    pub fn from_fit(fit: &MtFit, config: &MtConfig) -> Self {
        let (w, task_models, visible_dim) = match &fit.model {
            MtModel::General(g) => {
                (Some(TensorData::from_array(g.tensor())), None, g.visible_dim())
            }
            MtModel::PerTask(models) => {
                let mats: Vec<MatrixData> =
                    models.iter().map(|m| MatrixData::from_array(m.coeff())).collect();
                let d_v = models.first().map(|m| m.visible_dim()).unwrap_or(0);
                (None, Some(mats), d_v)
            }
        };
        Self {
            visible_dim,
            mode: config.mode.into(),
            lower_basis: BasisData::from_config(&config.lower_basis),
            higher_basis: BasisData::from_config(&config.higher_basis),
            schedule: config.schedule.into(),
            w,
            task_models,
            u: MatrixData::from_array(&fit.state.u),
        }
    }

    /// Rebuilds the in-memory model, task latents, schedule and mode.
    pub fn to_parts(&self) -> Result<(MtModel, Array2<f64>, Schedule, TransferMode)> {
        let lower = self.lower_basis.to_config()?;
        let higher = self.higher_basis.to_config()?;
        let model = match (&self.w, &self.task_models) {
            (Some(w), None) => MtModel::General(
                GeneralModel::new(w.to_array()?, lower, higher)
                    .map_err(|e| CliError::Config(format!("model file: {e}")))?,
            ),
            (None, Some(mats)) => {
                let models: Vec<TaskModel> = mats
                    .iter()
                    .map(|m| {
                        TaskModel::new(lower, m.to_array("task coefficient")?)
                            .map_err(|e| CliError::Config(format!("model file: {e}")))
                    })
                    .collect::<Result<_>>()?;
                MtModel::PerTask(models)
            }
            _ => {
                return Err(CliError::Config(
                    "model file: expected exactly one of 'w' or 'task_models'".into(),
                ))
            }
        };
        let u = self.u.to_array("task latent")?;
        Ok((model, u, self.schedule.into(), self.mode.into()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| CliError::Runtime(format!("model serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Final latent estimates of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitStateFile {
    pub z: MatrixData,
    pub u: MatrixData,
}

impl FitStateFile {
    pub fn from_fit(fit: &MtFit) -> Self {
        Self {
            z: MatrixData::from_array(&fit.state.z),
            u: MatrixData::from_array(&fit.state.u),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| CliError::Runtime(format!("fit-state serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
