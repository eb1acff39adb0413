//! Pixel-level segmentation metrics.
//!
//! Every metric is a function of a single [`ConfusionMatrix`]. Reports over a
//! dataset accumulate one global matrix first (micro-averaging), so the
//! result does not depend on how pixels were grouped into tiles.

use std::ops::{Add, AddAssign};

use segtensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::grid::BinaryMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Tally prediction against ground truth.
pub fn confusion(pred: &BinaryMap, gt: &BinaryMap) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    // index = 2*pred + gt: 0 tn, 1 fn, 2 fp, 3 tp
    let mut counts = [0u64; 4];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        counts[usize::from(2 * p + g)] += 1;
    }
    Ok(ConfusionMatrix::new(counts[3], counts[2], counts[1], counts[0]))
}

/// A metric value plus whether its denominator was zero (value then 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric<T> {
    pub value: T,
    pub zero_division: bool,
}

fn ratio<T: Scalar>(num: u128, den: u128) -> Metric<T> {
    if den == 0 {
        Metric {
            value: T::zero(),
            zero_division: true,
        }
    } else {
        Metric {
            value: T::from_f64_lossy(num as f64 / den as f64),
            zero_division: false,
        }
    }
}

fn non_empty(cm: &ConfusionMatrix) -> Result<()> {
    if cm.total() == 0 {
        Err(Error::EmptyConfusion)
    } else {
        Ok(())
    }
}

pub fn precision<T: Scalar>(cm: &ConfusionMatrix) -> Result<Metric<T>> {
    non_empty(cm)?;
    Ok(ratio(cm.tp.into(), (cm.tp + cm.fp).into()))
}

pub fn recall<T: Scalar>(cm: &ConfusionMatrix) -> Result<Metric<T>> {
    non_empty(cm)?;
    Ok(ratio(cm.tp.into(), (cm.tp + cm.fn_).into()))
}

pub fn overall_accuracy<T: Scalar>(cm: &ConfusionMatrix) -> Result<Metric<T>> {
    non_empty(cm)?;
    Ok(ratio((cm.tp + cm.tn).into(), cm.total().into()))
}

/// Harmonic mean of precision and recall, evaluated as `2tp / (2tp + fp + fn)`
/// (the same quantity without compounding two rounded ratios). Flagged when
/// `precision + recall = 0`, i.e. when there are no true positives.
pub fn f1<T: Scalar>(cm: &ConfusionMatrix) -> Result<Metric<T>> {
    non_empty(cm)?;
    if cm.tp == 0 {
        return Ok(Metric {
            value: T::zero(),
            zero_division: true,
        });
    }
    let tp = u128::from(cm.tp);
    Ok(ratio(2 * tp, 2 * tp + u128::from(cm.fp) + u128::from(cm.fn_)))
}

pub fn jaccard<T: Scalar>(cm: &ConfusionMatrix) -> Result<Metric<T>> {
    non_empty(cm)?;
    Ok(ratio(cm.tp.into(), (cm.tp + cm.fp + cm.fn_).into()))
}

/// Two-class Cohen's kappa, `(p_o - p_e) / (1 - p_e)`.
///
/// Multiplying through by `n^2` gives an integer numerator and denominator,
/// so the only rounding is the final division. Flagged when `p_e = 1`.
pub fn kappa<T: Scalar>(cm: &ConfusionMatrix) -> Result<Metric<T>> {
    non_empty(cm)?;
    let (tp, fp, fn_, tn) = (
        u128::from(cm.tp),
        u128::from(cm.fp),
        u128::from(cm.fn_),
        u128::from(cm.tn),
    );
    let n = tp + fp + fn_ + tn;
    let chance = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
    let observed = n * (tp + tn);
    let den = n * n - chance;
    if den == 0 {
        return Ok(Metric {
            value: T::zero(),
            zero_division: true,
        });
    }
    let num = observed as i128 - chance as i128;
    Ok(Metric {
        value: T::from_f64_lossy(num as f64 / den as f64),
        zero_division: false,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDivisionFlags {
    pub precision: bool,
    pub recall: bool,
    pub overall_accuracy: bool,
    pub f1: bool,
    pub jaccard: bool,
    pub kappa: bool,
}

impl ZeroDivisionFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.overall_accuracy || self.f1 || self.jaccard || self.kappa
    }

    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.precision, "precision"),
            (self.recall, "recall"),
            (self.overall_accuracy, "overall_accuracy"),
            (self.f1, "f1"),
            (self.jaccard, "jaccard"),
            (self.kappa, "kappa"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect()
    }
}

/// The six metrics in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub precision: T,
    pub recall: T,
    pub overall_accuracy: T,
    pub f1: T,
    pub jaccard: T,
    pub kappa: T,
    pub zero_division: ZeroDivisionFlags,
    pub confusion: ConfusionMatrix,
}

pub const COLUMN_NAMES: [&str; 6] = ["precision", "recall", "overall accuracy", "F1", "Jaccard", "kappa"];

impl<T: Scalar> MetricsReport<T> {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let p = precision::<T>(cm)?;
        let r = recall::<T>(cm)?;
        let oa = overall_accuracy::<T>(cm)?;
        let f = f1::<T>(cm)?;
        let j = jaccard::<T>(cm)?;
        let k = kappa::<T>(cm)?;
        Ok(Self {
            precision: p.value,
            recall: r.value,
            overall_accuracy: oa.value,
            f1: f.value,
            jaccard: j.value,
            kappa: k.value,
            zero_division: ZeroDivisionFlags {
                precision: p.zero_division,
                recall: r.zero_division,
                overall_accuracy: oa.zero_division,
                f1: f.zero_division,
                jaccard: j.zero_division,
                kappa: k.zero_division,
            },
            confusion: *cm,
        })
    }

    pub fn values(&self) -> [T; 6] {
        [
            self.precision,
            self.recall,
            self.overall_accuracy,
            self.f1,
            self.jaccard,
            self.kappa,
        ]
    }

    /// Flat `metric -> value` record including the zero-division flags.
    pub fn to_record(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        let keys = ["precision", "recall", "overall_accuracy", "f1", "jaccard", "kappa"];
        for (k, v) in keys.iter().zip(self.values()) {
            map.insert((*k).to_string(), serde_json::json!(v.as_f64()));
        }
        let flags = self.zero_division;
        for (k, on) in keys.iter().zip([
            flags.precision,
            flags.recall,
            flags.overall_accuracy,
            flags.f1,
            flags.jaccard,
            flags.kappa,
        ]) {
            map.insert(format!("{k}_zero_division"), serde_json::json!(on));
        }
        for (k, v) in [
            ("tp", self.confusion.tp),
            ("fp", self.confusion.fp),
            ("fn", self.confusion.fn_),
            ("tn", self.confusion.tn),
        ] {
            map.insert(k.to_string(), serde_json::json!(v));
        }
        serde_json::Value::Object(map)
    }
}

/// Micro-averaged report: one confusion matrix over every pair.
pub fn evaluate_pairs<'a, T, I>(pairs: I) -> Result<MetricsReport<T>>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a BinaryMap, &'a BinaryMap)>,
{
    let mut total = ConfusionMatrix::default();
    let mut seen = 0usize;
    for (pred, gt) in pairs {
        total += confusion(pred, gt)?;
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::EmptyInput("evaluate_pairs needs at least one pair".into()));
    }
    MetricsReport::from_confusion(&total)
}

/// Aligned text table, one row per labelled report, columns in reporting
/// order. Zero-division flags become numbered footnotes.
pub fn render_table<T: Scalar>(rows: &[(String, MetricsReport<T>)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<label_w$}", "model");
    for name in COLUMN_NAMES {
        out.push_str(&format!("  {name:>16}"));
    }
    out.push('\n');
    let mut notes = Vec::new();
    for (label, report) in rows {
        out.push_str(&format!("{label:<label_w$}"));
        let flags = [
            report.zero_division.precision,
            report.zero_division.recall,
            report.zero_division.overall_accuracy,
            report.zero_division.f1,
            report.zero_division.jaccard,
            report.zero_division.kappa,
        ];
        for ((v, flagged), name) in report.values().iter().zip(flags).zip(COLUMN_NAMES) {
            if flagged {
                notes.push(format!("{label}: {name} has a zero denominator; reported as 0"));
                out.push_str(&format!("  {:>16}", format!("{:.4}[{}]", v.as_f64(), notes.len())));
            } else {
                out.push_str(&format!("  {:>16.4}", v.as_f64()));
            }
        }
        out.push('\n');
    }
    for (i, note) in notes.iter().enumerate() {
        out.push_str(&format!("[{}] {note}\n", i + 1));
    }
    out
}
