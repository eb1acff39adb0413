//! Training- and testing-stage throughput.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segtensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::trainer::{Adam, DEFAULT_BETAS, DEFAULT_LEARNING_RATE};
use crate::zoo::{build_model, family_loss, ArchitectureConfig, Family, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Forward, loss, backward and optimizer step.
    Training,
    /// Evaluation-mode forward.
    Testing,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Training => "training",
            Stage::Testing => "testing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub family: Family,
    pub stage: Stage,
    pub fps: f64,
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    pub elapsed_seconds: f64,
    pub device: String,
}

impl BenchmarkRecord {
    pub fn fps_from_fields(&self) -> f64 {
        (self.timed_iters * self.batch_size) as f64 / self.elapsed_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub batch_size: usize,
    /// Side length of the square synthetic inputs.
    pub size: usize,
    pub base_channels: usize,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    pub seed: u64,
    pub device: String,
    /// Memory ceiling in bytes; `None` uses the memory the OS reports as
    /// available.
    pub memory_budget: Option<u64>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            batch_size: 4,
            size: 224,
            base_channels: 16,
            warmup_iters: 5,
            timed_iters: 50,
            seed: 0,
            device: "cpu".into(),
            memory_budget: None,
        }
    }
}

fn available_memory() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn synthetic_batch<T: Scalar>(n: usize, size: usize, rng: &mut ChaCha8Rng) -> (Tensor<T>, Tensor<T>) {
    let x = Tensor::from_fn(&[n, 3, size, size], |_| T::from_f64_lossy(rng.gen::<f64>()));
    let (lo, hi) = (size / 4, 3 * size / 4);
    let y = Tensor::from_fn(&[n, 1, size, size], |i| {
        let (r, c) = ((i / size) % size, i % size);
        if (lo..hi).contains(&r) && (lo..hi).contains(&c) {
            T::one()
        } else {
            T::zero()
        }
    });
    (x, y)
}

/// Rough peak bytes for one step at `batch_size`: the batch-1 graph scaled
/// by the batch, doubled for gradients in the training stage, plus
/// parameters and optimizer state.
pub fn estimate_bytes<T: Scalar>(model: &mut Model<T>, stage: Stage, batch_size: usize, size: usize) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (x, y) = synthetic_batch::<T>(1, size, &mut rng);
    let per_item = {
        let pass = model.forward_tracked(&x, false)?;
        family_loss(model.config(), &pass.outputs, &y)?.graph_bytes() as u64
    };
    let params = (model.parameter_count() * T::BYTES) as u64;
    Ok(match stage {
        Stage::Testing => per_item * batch_size as u64 + params,
        Stage::Training => 2 * per_item * batch_size as u64 + 4 * params,
    })
}

/// Time `timed_iters` iterations on synthetic batches after `warmup_iters`
/// untimed ones.
pub fn measure<T: Scalar>(model: &mut Model<T>, stage: Stage, settings: &BenchSettings) -> Result<BenchmarkRecord> {
    if settings.batch_size == 0 || settings.timed_iters == 0 {
        return Err(Error::InvalidConfig(
            "batch_size and timed_iters must be at least 1".into(),
        ));
    }
    let budget = settings.memory_budget.or_else(available_memory);
    if let Some(budget) = budget {
        let needed = estimate_bytes(model, stage, settings.batch_size, settings.size)?;
        if needed > budget {
            return Err(Error::Oom {
                batch_size: settings.batch_size,
                needed_bytes: needed,
                budget_bytes: budget,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (x, y) = synthetic_batch::<T>(settings.batch_size, settings.size, &mut rng);
    let mut adam = Adam::new(DEFAULT_LEARNING_RATE, DEFAULT_BETAS);
    let mut iterate = |model: &mut Model<T>, i: usize| -> Result<()> {
        match stage {
            Stage::Testing => {
                model.forward(&x)?;
            }
            Stage::Training => {
                let grads = {
                    let pass = model.forward_train(&x)?;
                    let loss = family_loss(model.config(), &pass.outputs, &y)?;
                    if !loss.value().data()[0].is_finite() {
                        return Err(Error::Divergence { iteration: i });
                    }
                    loss.backward();
                    pass.gradients()
                };
                adam.step(model.params_mut(), &grads);
            }
        }
        Ok(())
    };
    for i in 0..settings.warmup_iters {
        iterate(model, i + 1)?;
    }
    let start = Instant::now();
    for i in 0..settings.timed_iters {
        iterate(model, settings.warmup_iters + i + 1)?;
    }
    let elapsed_seconds = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    let mut record = BenchmarkRecord {
        family: model.family(),
        stage,
        fps: 0.0,
        batch_size: settings.batch_size,
        warmup_iters: settings.warmup_iters,
        timed_iters: settings.timed_iters,
        elapsed_seconds,
        device: settings.device.clone(),
    };
    record.fps = record.fps_from_fields();
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub family: Family,
    pub training: std::result::Result<BenchmarkRecord, String>,
    pub testing: std::result::Result<BenchmarkRecord, String>,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn records(&self) -> Vec<BenchmarkRecord> {
        self.rows
            .iter()
            .flat_map(|r| [&r.training, &r.testing])
            .filter_map(|r| r.as_ref().ok().cloned())
            .collect()
    }

    pub fn failures(&self) -> Vec<(Family, Stage, String)> {
        let mut out = Vec::new();
        for r in &self.rows {
            if let Err(e) = &r.training {
                out.push((r.family, Stage::Training, e.clone()));
            }
            if let Err(e) = &r.testing {
                out.push((r.family, Stage::Testing, e.clone()));
            }
        }
        out
    }

    /// Fastest family per stage, `None` when no row succeeded.
    pub fn fastest(&self, stage: Stage) -> Option<Family> {
        self.records()
            .into_iter()
            .filter(|r| r.stage == stage)
            .max_by(|a, b| a.fps.total_cmp(&b.fps))
            .map(|r| r.family)
    }

    /// Text table; `*` marks the fastest family of each stage.
    pub fn render(&self) -> String {
        let best_train = self.fastest(Stage::Training);
        let best_test = self.fastest(Stage::Testing);
        let cell = |r: &std::result::Result<BenchmarkRecord, String>, best: Option<Family>| match r {
            Ok(rec) => format!("{:.1}{}", rec.fps, if Some(rec.family) == best { " *" } else { "" }),
            Err(_) => "failed".to_string(),
        };
        let mut out = format!("{:<8}  {:>14}  {:>14}\n", "model", "training FPS", "testing FPS");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<8}  {:>14}  {:>14}\n",
                row.family.display_name(),
                cell(&row.training, best_train),
                cell(&row.testing, best_test)
            ));
        }
        for (family, stage, err) in self.failures() {
            out.push_str(&format!("{} {stage}: {err}\n", family.display_name()));
        }
        out
    }
}

/// Measure both stages for every requested family, in reporting order.
/// A failing measurement is recorded and the suite moves on.
pub fn run_suite<T: Scalar>(families: &[Family], settings: &BenchSettings) -> Result<SuiteReport> {
    if families.is_empty() {
        return Err(Error::EmptyInput("no families to benchmark".into()));
    }
    let mut ordered: Vec<Family> = Family::ALL.into_iter().filter(|f| families.contains(f)).collect();
    ordered.dedup();
    let mut rows = Vec::new();
    for family in ordered {
        let config = ArchitectureConfig::new(family).with_base_channels(settings.base_channels);
        let run = |stage: Stage| -> std::result::Result<BenchmarkRecord, String> {
            let mut model = build_model::<T>(&config, settings.seed).map_err(|e| e.to_string())?;
            measure(&mut model, stage, settings).map_err(|e| e.to_string())
        };
        let training = run(Stage::Training);
        let testing = run(Stage::Testing);
        rows.push(SuiteRow {
            family,
            training,
            testing,
        });
    }
    Ok(SuiteReport { rows })
}

/// Append records to a CSV file, writing the header when the file is new.
pub fn append_csv(path: &Path, records: &[BenchmarkRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    let fmt = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    for r in records {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchmarkRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(family: Family, stage: Stage, fps: f64) -> BenchmarkRecord {
        BenchmarkRecord {
            family,
            stage,
            fps,
            batch_size: 2,
            warmup_iters: 0,
            timed_iters: 1,
            elapsed_seconds: 2.0 / fps,
            device: "cpu".into(),
        }
    }

    #[test]
    fn table_marks_fastest_per_stage() {
        let report = SuiteReport {
            rows: vec![
                SuiteRow {
                    family: Family::Fcn32s,
                    training: Ok(record(Family::Fcn32s, Stage::Training, 3.0)),
                    testing: Ok(record(Family::Fcn32s, Stage::Testing, 9.0)),
                },
                SuiteRow {
                    family: Family::UNet,
                    training: Ok(record(Family::UNet, Stage::Training, 4.0)),
                    testing: Err("oom".into()),
                },
            ],
        };
        assert_eq!(report.fastest(Stage::Training), Some(Family::UNet));
        assert_eq!(report.fastest(Stage::Testing), Some(Family::Fcn32s));
        let table = report.render();
        assert!(table.contains("4.0 *"));
        assert!(table.contains("9.0 *"));
        assert!(table.contains("failed"));
        assert_eq!(report.records().len(), 3);
    }

    #[test]
    fn oom_reports_batch_size() {
        let mut m = build_model::<f32>(&ArchitectureConfig::new(Family::UNet).with_base_channels(4), 0).unwrap();
        let settings = BenchSettings {
            batch_size: 3,
            size: 32,
            memory_budget: Some(1024),
            ..Default::default()
        };
        assert!(matches!(
            measure(&mut m, Stage::Training, &settings),
            Err(Error::Oom { batch_size: 3, .. })
        ));
    }
}
