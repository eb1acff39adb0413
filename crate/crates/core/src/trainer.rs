//! Fixed-protocol training: Adam, constant learning rate, seeded batch order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segtensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::datakit::{DatasetSplit, TileSample};
use crate::grid::BinaryMap;
use crate::metrics::{evaluate_pairs, MetricsReport};
use crate::zoo::{family_loss, images_to_tensor, masks_to_tensor, predict_masks, Model, Segmenter};
use crate::{Error, Result};

pub use crate::zoo::{load_checkpoint, save_checkpoint};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;
pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_BATCH_SIZE: usize = 24;
pub const DEFAULT_ITERATIONS: usize = 5000;
pub const DEFAULT_EVAL_EVERY: usize = 100;
pub const ADAM_EPS: f64 = 1e-8;
pub const THRESHOLD: f64 = 0.5;

pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    /// Optimizer steps.
    pub iterations: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Where `final.ckpt` goes; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Where the log CSVs go; nothing is written when unset.
    pub log_dir: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            betas: DEFAULT_BETAS,
            batch_size: DEFAULT_BATCH_SIZE,
            iterations: DEFAULT_ITERATIONS,
            eval_every: DEFAULT_EVAL_EVERY,
            seed: 0,
            checkpoint_dir: None,
            log_dir: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    step: i32,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, betas: (f64, f64)) -> Self {
        Self {
            lr,
            betas,
            eps: ADAM_EPS,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<T>>, grads: &BTreeMap<String, Tensor<T>>) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (tb1, tb2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let (ob1, ob2) = (T::one() - tb1, T::one() - tb2);
        let step_size = T::from_f64_lossy(self.lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = tb1 * *m + ob1 * g;
                *v = tb2 * *v + ob2 * g * g;
                *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub train_loss: f64,
    /// Precision, recall, overall accuracy, F1, Jaccard, kappa.
    pub val: Option<[f64; 6]>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

const LOG_HEADER: [&str; 8] = [
    "iteration",
    "train_loss",
    "precision",
    "recall",
    "overall_accuracy",
    "f1",
    "jaccard",
    "kappa",
];

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    pub fn validation_rows(&self) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(|r| r.val.is_some())
    }

    /// Learning curve as CSV. Wall-clock time is kept out so the file is a
    /// pure function of the run; see [`TrainLog::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LOG_HEADER).expect("in-memory csv");
        for r in &self.rows {
            let mut rec = vec![r.iteration.to_string(), r.train_loss.to_string()];
            match r.val {
                Some(v) => rec.extend(v.iter().map(|x| x.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            path: PathBuf::from(LOG_FILE),
            reason,
        };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != LOG_HEADER {
            return Err(fmt(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| fmt(format!("{}: {e}", LOG_HEADER[i])))
            };
            let iteration = rec[0].parse().map_err(|e| fmt(format!("iteration: {e}")))?;
            let val = if rec[2].is_empty() {
                None
            } else {
                let mut v = [0.0; 6];
                for (k, slot) in v.iter_mut().enumerate() {
                    *slot = num(k + 2)?;
                }
                Some(v)
            };
            rows.push(LogRow {
                iteration,
                train_loss: num(1)?,
                val,
                wall_ms: 0.0,
            });
        }
        Ok(Self { rows })
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("iteration,wall_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.3}\n", r.iteration, r.wall_ms));
        }
        out
    }

    /// Write `train_log.csv` and `timing.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = dir.join(LOG_FILE);
        std::fs::write(&log, self.to_csv()).map_err(|e| Error::io(&log, e))?;
        let timing = dir.join(TIMING_FILE);
        std::fs::write(&timing, self.timing_csv()).map_err(|e| Error::io(&timing, e))
    }
}

/// Endless stream of training indices: a fresh seeded permutation per epoch,
/// batches cut across epoch boundaries so every batch has the same size.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            cursor: 0,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn batch_tensors<T: Scalar>(samples: &[&TileSample]) -> (Tensor<T>, Tensor<T>) {
    let images: Vec<&RgbImage> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&BinaryMap> = samples.iter().map(|s| &s.mask).collect();
    (images_to_tensor(&images), masks_to_tensor(&masks))
}

/// Global confusion over `samples`, primary output binarized at `threshold`.
pub fn validate<T: Scalar>(
    model: &dyn Segmenter<T>,
    samples: &[TileSample],
    threshold: f64,
) -> Result<MetricsReport<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty".into()));
    }
    let refs: Vec<&TileSample> = samples.iter().collect();
    let preds = predict_masks(model, &refs, T::from_f64_lossy(threshold), 8)?;
    evaluate_pairs(preds.iter().zip(samples.iter().map(|s| &s.mask)))
}

/// One optimizer step on `samples`; returns the loss before the update.
pub fn train_step<T: Scalar>(model: &mut Model<T>, adam: &mut Adam<T>, samples: &[&TileSample]) -> Result<T> {
    let (x, y) = batch_tensors::<T>(samples);
    let grads = {
        let pass = model.forward_train(&x)?;
        let loss = family_loss(model.config(), &pass.outputs, &y)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: adam.steps() as usize + 1,
            });
        }
        loss.backward();
        (value, pass.gradients())
    };
    adam.step(model.params_mut(), &grads.1);
    Ok(grads.0)
}

pub fn train<T: Scalar>(model: Model<T>, split: &DatasetSplit, tcfg: &TrainingConfig) -> Result<(Model<T>, TrainLog)> {
    train_with_progress(model, split, tcfg, |_| {})
}

/// [`train`] with a callback invoked after each logged row.
pub fn train_with_progress<T: Scalar>(
    mut model: Model<T>,
    split: &DatasetSplit,
    tcfg: &TrainingConfig,
    mut progress: impl FnMut(&LogRow),
) -> Result<(Model<T>, TrainLog)> {
    tcfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let mut adam = Adam::new(tcfg.learning_rate, tcfg.betas);
    let mut order = BatchOrder::new(split.train.len(), tcfg.seed);
    let mut log = TrainLog::default();
    let started = Instant::now();
    for iteration in 1..=tcfg.iterations {
        let picks = order.next_batch(tcfg.batch_size);
        let batch: Vec<&TileSample> = picks.iter().map(|&i| &split.train[i]).collect();
        let loss = train_step(&mut model, &mut adam, &batch).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { iteration },
            other => other,
        })?;
        let val = if iteration % tcfg.eval_every == 0 && !split.val.is_empty() {
            Some(validate(&model, &split.val, THRESHOLD)?.values().map(Scalar::as_f64))
        } else {
            None
        };
        let row = LogRow {
            iteration,
            train_loss: loss.as_f64(),
            val,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        progress(&row);
        log.rows.push(row);
    }
    if let Some(dir) = &tcfg.log_dir {
        log.write(dir)?;
    }
    if let Some(dir) = &tcfg.checkpoint_dir {
        save_checkpoint(&model, dir.join(CHECKPOINT_FILE))?;
    }
    Ok((model, log))
}
