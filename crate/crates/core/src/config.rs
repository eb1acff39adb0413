//! Run configuration: a flat TOML file overridden by command-line flags.
//!
//! Every key is optional in the file; unknown keys are rejected. Example:
//!
//! ```toml
//! model = "UNet"
//! base_channels = 16
//! learning_rate = 2e-4
//! batch_size = 8
//! iterations = 300
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchSettings;
use crate::datakit::{DEFAULT_MIN_COVERAGE, DEFAULT_TILE_SIZE};
use crate::trainer::{
    TrainingConfig, DEFAULT_BATCH_SIZE, DEFAULT_BETAS, DEFAULT_EVAL_EVERY, DEFAULT_ITERATIONS, DEFAULT_LEARNING_RATE,
};
use crate::zoo::{ArchitectureConfig, Family, DEFAULT_LEAKY_SLOPE};
use crate::{Error, Result};

macro_rules! run_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Fully resolved settings for one command.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        /// A configuration layer; unset keys fall through to the layer below.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct PartialConfig {
            $( #[serde(default, skip_serializing_if = "Option::is_none")] pub $field: Option<$ty>, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl PartialConfig {
            /// `self` with unset keys taken from `lower`.
            pub fn over(self, lower: PartialConfig) -> PartialConfig {
                PartialConfig { $( $field: self.$field.or(lower.$field), )* }
            }

            pub fn resolve(self) -> RunConfig {
                let d = RunConfig::default();
                RunConfig { $( $field: self.$field.unwrap_or(d.$field), )* }
            }

            /// Names of the keys set in this layer.
            pub fn keys(&self) -> Vec<&'static str> {
                let mut out = Vec::new();
                $( if self.$field.is_some() { out.push(stringify!($field)); } )*
                out
            }
        }
    };
}

run_config! {
    model: Family = Family::UNet,
    base_channels: usize = 16,
    leaky_slope: f64 = DEFAULT_LEAKY_SLOPE,
    /// Empty means equal weights.
    mc_head_weights: Vec<f64> = Vec::new(),
    br_loss_weights: (f64, f64) = (0.5, 0.5),
    /// Unset means the family default.
    use_bn: Option<bool> = None,
    learning_rate: f64 = DEFAULT_LEARNING_RATE,
    beta1: f64 = DEFAULT_BETAS.0,
    beta2: f64 = DEFAULT_BETAS.1,
    batch_size: usize = DEFAULT_BATCH_SIZE,
    iterations: usize = DEFAULT_ITERATIONS,
    eval_every: usize = DEFAULT_EVAL_EVERY,
    seed: u64 = 0,
    /// Root for `logs/`, `checkpoints/` and `result/`.
    workdir: PathBuf = PathBuf::from("."),
    data: PathBuf = PathBuf::from("dataset"),
    tile_size: usize = DEFAULT_TILE_SIZE,
    /// Unset means `tile_size`.
    stride: Option<usize> = None,
    min_coverage: f64 = DEFAULT_MIN_COVERAGE,
    fractions: (f64, f64, f64) = (0.7, 0.15, 0.15),
    samples: usize = 8,
    bench_batch_size: usize = 4,
    bench_size: usize = DEFAULT_TILE_SIZE,
    warmup_iters: usize = 5,
    timed_iters: usize = 50,
}

impl PartialConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

impl RunConfig {
    /// Defaults, then the file layer, then the flag layer.
    pub fn layered(file: PartialConfig, flags: PartialConfig) -> Self {
        flags.over(file).resolve()
    }

    pub fn tile_stride(&self) -> usize {
        self.stride.unwrap_or(self.tile_size)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn architecture(&self) -> Result<ArchitectureConfig> {
        let mut a = ArchitectureConfig::new(self.model).with_base_channels(self.base_channels);
        a.leaky_slope = self.leaky_slope;
        if !self.mc_head_weights.is_empty() {
            a.mc_head_weights = self.mc_head_weights.clone();
        }
        a.br_loss_weights = self.br_loss_weights;
        if let Some(bn) = self.use_bn {
            a.use_bn = bn;
        }
        a.validate()?;
        Ok(a)
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.workdir.join("logs")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.workdir.join("checkpoints")
    }

    pub fn result_dir(&self) -> PathBuf {
        self.workdir.join("result")
    }

    /// Training settings writing into `logs/<model>/` and `checkpoints/<model>/`.
    pub fn training(&self) -> Result<TrainingConfig> {
        let t = TrainingConfig {
            learning_rate: self.learning_rate,
            betas: (self.beta1, self.beta2),
            batch_size: self.batch_size,
            iterations: self.iterations,
            eval_every: self.eval_every,
            seed: self.seed,
            checkpoint_dir: Some(self.checkpoints_dir().join(self.model.name())),
            log_dir: Some(self.logs_dir().join(self.model.name())),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn bench(&self, device: &str) -> BenchSettings {
        BenchSettings {
            batch_size: self.bench_batch_size,
            size: self.bench_size,
            base_channels: self.base_channels,
            warmup_iters: self.warmup_iters,
            timed_iters: self.timed_iters,
            seed: self.seed,
            device: device.to_string(),
            memory_budget: None,
        }
    }
}
