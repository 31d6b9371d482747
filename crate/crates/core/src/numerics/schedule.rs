use alloc::format;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Annealed kernel length scales at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    /// Sample-space kernel scale (lambda_L).
    pub lower: f64,
    /// Task-space kernel scale (lambda_T).
    pub task: f64,
    /// Instance-transfer weight scale (lambda_rho).
    pub rho: f64,
}

/// Annealing schedule and noise precision shared by the learners.
///
/// Each length scale decays geometrically from its start to its end
/// value over `total_iters` iterations, the continuous analogue of the
/// shrinking SOM neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub lambda_lower_start: f64,
    pub lambda_lower_end: f64,
    pub lambda_task_start: f64,
    pub lambda_task_end: f64,
    pub lambda_rho_start: f64,
    pub lambda_rho_end: f64,
    pub total_iters: usize,
    /// Noise precision beta. Scales costs but never moves an argmin.
    pub beta: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lambda_lower_start: 1.0,
            lambda_lower_end: 0.2,
            lambda_task_start: 1.0,
            lambda_task_end: 0.2,
            lambda_rho_start: 1.0,
            lambda_rho_end: 0.2,
            total_iters: 150,
            beta: 1.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("lambda_L", self.lambda_lower_start, self.lambda_lower_end),
            ("lambda_T", self.lambda_task_start, self.lambda_task_end),
            ("lambda_rho", self.lambda_rho_start, self.lambda_rho_end),
        ];
        for (name, start, end) in pairs {
            if !(end > 0.0 && start >= end && start.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} schedule must satisfy start >= end > 0 (got {start} -> {end})"
                )));
            }
        }
        if self.total_iters == 0 {
            return Err(Error::InvalidConfig("total_iters must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "beta must be positive (got {})",
                self.beta
            )));
        }
        Ok(())
    }

    /// Length scales at iteration `t` (geometric interpolation with
    /// `lambda(0) = start` and `lambda(total_iters - 1) = end`).
    pub fn anneal(&self, t: usize) -> Result<Lambdas> {
        if t >= self.total_iters {
            return Err(Error::InvalidConfig(format!(
                "iteration {t} out of range (total_iters = {})",
                self.total_iters
            )));
        }
        let frac = if self.total_iters == 1 {
            0.0
        } else {
            t as f64 / (self.total_iters - 1) as f64
        };
        let decay = |start: f64, end: f64| start * (end / start).powf(frac);
        Ok(Lambdas {
            lower: decay(self.lambda_lower_start, self.lambda_lower_end),
            task: decay(self.lambda_task_start, self.lambda_task_end),
            rho: decay(self.lambda_rho_start, self.lambda_rho_end),
        })
    }
}
