//! Temperature schedules for the relaxed discrete selection: static, linear
//! decay, and staged lists (cosine-annealing-style and step decay).

use crate::error::{DonnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TemperatureSchedule {
    /// Constant temperature.
    Static { tau: f64 },
    /// `tau(e) = max(tau_end, tau_start - decay_per_epoch * e)`.
    Linear {
        tau_start: f64,
        tau_end: f64,
        decay_per_epoch: f64,
    },
    /// Explicit stages of `(tau, epochs)`; cosine-annealing style lists go
    /// here.
    CosineList { stages: Vec<(f64, usize)> },
    /// Explicit stages of `(tau, epochs)` with monotone decreasing taus.
    StepList { stages: Vec<(f64, usize)> },
}

impl TemperatureSchedule {
    /// Linear 50 -> 1 at 0.5 per epoch, the configuration that trains best.
    pub fn default_linear() -> Self {
        TemperatureSchedule::Linear {
            tau_start: 50.0,
            tau_end: 1.0,
            decay_per_epoch: 0.5,
        }
    }

    /// The evaluated cosine-annealing stage list.
    pub fn reference_cosine() -> Self {
        let taus = [50.0, 40.0, 30.0, 20.0, 40.0, 30.0, 20.0, 30.0, 15.0, 5.0, 10.0, 1.0];
        let epochs = [10, 10, 10, 10, 10, 10, 10, 8, 7, 5, 5, 5];
        TemperatureSchedule::CosineList {
            stages: taus.into_iter().zip(epochs).collect(),
        }
    }

    /// The evaluated step-decay stage list.
    pub fn reference_step() -> Self {
        let taus = [50.0, 40.0, 30.0, 20.0, 10.0, 5.0, 1.0];
        let epochs = [25, 20, 20, 15, 10, 5, 5];
        TemperatureSchedule::StepList {
            stages: taus.into_iter().zip(epochs).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TemperatureSchedule::Static { tau } => {
                if !(*tau > 0.0) {
                    return Err(DonnError::NonPositiveTemperature);
                }
            }
            TemperatureSchedule::Linear {
                tau_start,
                tau_end,
                decay_per_epoch,
            } => {
                if !(*tau_start > 0.0 && *tau_end > 0.0) {
                    return Err(DonnError::NonPositiveTemperature);
                }
                if !(*decay_per_epoch >= 0.0) {
                    return Err(DonnError::Config(format!(
                        "decay per epoch must be non-negative, got {decay_per_epoch}"
                    )));
                }
            }
            TemperatureSchedule::CosineList { stages } | TemperatureSchedule::StepList { stages } => {
                if stages.is_empty() {
                    return Err(DonnError::Config("empty schedule stage list".into()));
                }
                for &(tau, epochs) in stages {
                    if !(tau > 0.0) {
                        return Err(DonnError::NonPositiveTemperature);
                    }
                    if epochs == 0 {
                        return Err(DonnError::Config(
                            "schedule stage with zero epochs".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum of stage epochs for list kinds; `None` for static/linear.
    pub fn total_stage_epochs(&self) -> Option<usize> {
        match self {
            TemperatureSchedule::CosineList { stages } | TemperatureSchedule::StepList { stages } => {
                Some(stages.iter().map(|&(_, e)| e).sum())
            }
            _ => None,
        }
    }
}

/// Temperature for a given epoch. Queries past the final stage return the
/// final stage value.
pub fn tau_at(sched: &TemperatureSchedule, epoch: usize) -> f64 {
    match sched {
        TemperatureSchedule::Static { tau } => *tau,
        TemperatureSchedule::Linear {
            tau_start,
            tau_end,
            decay_per_epoch,
        } => (tau_start - decay_per_epoch * epoch as f64).max(*tau_end),
        TemperatureSchedule::CosineList { stages } | TemperatureSchedule::StepList { stages } => {
            let mut cum = 0usize;
            for &(tau, epochs) in stages {
                cum += epochs;
                if epoch < cum {
                    return tau;
                }
            }
            stages.last().expect("validated non-empty").0
        }
    }
}
