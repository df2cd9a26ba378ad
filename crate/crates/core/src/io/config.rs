//! TOML run configuration. Unknown keys anywhere are rejected.
//!
//! ```toml
//! mode = "losparse"
//!
//! [task]
//! seed = 0
//! dims = [64, 64]
//! planted_rank = 4
//! planted_columns = 8
//! noise_std = 0.05
//! n_train = 2048
//! n_val = 512
//!
//! [budget]
//! total_ratio = 0.2
//! lowrank_ratio = 0.05
//!
//! [schedule]
//! total_steps = 2000
//! warmup_steps = 200
//! final_steps = 600
//!
//! [optim]
//! alpha = 2.0
//! batch_size = 32
//! beta = 0.85
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomposition::CompressionBudget;
use crate::error::{Error, Result};
use crate::harness::{Mode, ScheduleSpec, TaskSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub alpha: f64,
    pub batch_size: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub literal_schedule_formula: bool,
    pub task: TaskSpec,
    pub budget: CompressionBudget,
    pub schedule: ScheduleSpec,
    pub optim: OptimSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.task.validate()?;
        config.train_config().validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The task seed also seeds initialization and batch sampling.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.optim.alpha,
            schedule: self.schedule,
            literal_schedule_formula: self.literal_schedule_formula,
            beta: self.optim.beta,
            budget: self.budget,
            batch_size: self.optim.batch_size,
            seed: self.task.seed,
            mode: self.mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
mode = "itp"

[task]
seed = 3
dims = [8, 6, 4]
planted_rank = 2
planted_columns = 1
noise_std = 0.1
n_train = 64
n_val = 16

[budget]
total_ratio = 0.5
lowrank_ratio = 0.1

[schedule]
total_steps = 50
warmup_steps = 5
final_steps = 10

[optim]
alpha = 0.1
batch_size = 8
beta = 0.85
"#;

    #[test]
    fn parses_and_maps() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.mode, Mode::Itp);
        assert!(!c.literal_schedule_formula);
        let t = c.train_config();
        assert_eq!(t.seed, 3);
        assert_eq!(t.learning_rate, 0.1);
        assert_eq!(t.schedule.final_fraction, None);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = SAMPLE.replace("mode = \"itp\"", "mode = \"itp\"\nmomentum = 0.9");
        assert!(matches!(RunConfig::from_toml(&top), Err(Error::Config(_))));
        let nested = SAMPLE.replace("beta = 0.85", "beta = 0.85\nbeta2 = 0.9");
        let err = RunConfig::from_toml(&nested).unwrap_err();
        assert!(err.to_string().contains("beta2"), "{err}");
    }

    #[test]
    fn missing_section_and_bad_values() {
        let no_optim = SAMPLE.split("[optim]").next().unwrap();
        assert!(RunConfig::from_toml(no_optim).is_err());
        let bad_mode = SAMPLE.replace("\"itp\"", "\"movement\"");
        assert!(RunConfig::from_toml(&bad_mode).is_err());
        let bad_beta = SAMPLE.replace("beta = 0.85", "beta = 1.5");
        assert_eq!(RunConfig::from_toml(&bad_beta).unwrap_err().exit_code(), 2);
    }
}
