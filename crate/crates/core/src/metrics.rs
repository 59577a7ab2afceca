//! Dataset and split diagnostics: class entropy, class-ratio mean absolute
//! error, per-dataset statistics and per-fold split reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::kfold::{FoldAssignment, SplitMethod};
use crate::ingest::RawRecordSet;

/// Box counts per class over a fixed, ordered class universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub class_ids: Vec<u32>,
    pub counts: Vec<u64>,
}

impl ClassDistribution {
    pub fn new(class_ids: Vec<u32>, counts: Vec<u64>) -> Result<Self> {
        if class_ids.len() != counts.len() {
            return Err(Error::InvalidConfig(format!(
                "{} class ids for {} counts",
                class_ids.len(),
                counts.len()
            )));
        }
        if class_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "class ids must be strictly ascending".into(),
            ));
        }
        Ok(Self { class_ids, counts })
    }

    /// Classes numbered `0..counts.len()`.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self {
            class_ids: (0..counts.len() as u32).collect(),
            counts,
        }
    }

    /// Box-class counts of a record set over its own class universe.
    pub fn from_records(records: &RawRecordSet) -> Self {
        let totals = records.class_totals();
        Self {
            class_ids: totals.keys().copied().collect(),
            counts: totals.values().copied().collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Class ratios; all zero when there are no boxes.
    pub fn ratios(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    /// Re-expresses the distribution over `universe`, filling absent classes
    /// with zero. Fails if this distribution has a class outside `universe`.
    pub fn aligned_to(&self, universe: &[u32]) -> Result<Self> {
        let own: BTreeMap<u32, u64> = self
            .class_ids
            .iter()
            .copied()
            .zip(self.counts.iter().copied())
            .collect();
        let target: BTreeSet<u32> = universe.iter().copied().collect();
        if own.iter().any(|(id, &c)| c > 0 && !target.contains(id)) {
            return Err(Error::ClassUniverseMismatch {
                left: self.class_ids.clone(),
                right: universe.to_vec(),
            });
        }
        Self::new(
            target.iter().copied().collect(),
            target
                .iter()
                .map(|id| own.get(id).copied().unwrap_or(0))
                .collect(),
        )
    }
}

/// Shannon entropy in nats; zero-probability classes contribute nothing.
pub fn entropy(dist: &ClassDistribution) -> Result<f64> {
    entropy_with_base(dist, std::f64::consts::E)
}

pub fn entropy_with_base(dist: &ClassDistribution, base: f64) -> Result<f64> {
    if dist.total() == 0 {
        return Err(Error::EmptyDistribution);
    }
    if !(base.is_finite() && base > 0.0 && base != 1.0) {
        return Err(Error::InvalidConfig(format!("invalid logarithm base {base}")));
    }
    let nats: f64 = dist
        .ratios()
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    // + 0.0 normalizes a -0.0 sum
    Ok(nats / base.ln() + 0.0)
}

/// Mean over classes of the absolute difference in class ratios.
///
/// Both distributions must share the same class universe; use
/// [`ClassDistribution::aligned_to`] first when they do not.
pub fn class_ratio_mae(reference: &ClassDistribution, subset: &ClassDistribution) -> Result<f64> {
    if reference.class_ids != subset.class_ids {
        return Err(Error::ClassUniverseMismatch {
            left: reference.class_ids.clone(),
            right: subset.class_ids.clone(),
        });
    }
    if reference.class_ids.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let n = reference.class_ids.len() as f64;
    let sum: f64 = reference
        .ratios()
        .iter()
        .zip(subset.ratios())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinAvgMax {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl MinAvgMax {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut n = 0usize;
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        if n == 0 {
            return Self {
                min: 0.0,
                avg: 0.0,
                max: 0.0,
            };
        }
        Self {
            min,
            avg: sum / n as f64,
            max,
        }
    }
}

/// Dataset-level statistics in the shape of a "datasets" overview table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_classes: usize,
    /// Images, backgrounds included.
    pub num_samples: usize,
    /// `num_samples / num_classes`; 0 when there are no classes.
    pub samples_per_class: f64,
    pub boxes_per_image: MinAvgMax,
    pub classes_per_image: MinAvgMax,
    pub num_backgrounds: usize,
    pub num_boxes: usize,
    /// Entropy of the box-class distribution in nats; 0 when there are no boxes.
    pub entropy: f64,
}

pub fn dataset_stats(records: &RawRecordSet) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::EmptyRecordSet);
    }
    let num_classes = records.class_universe.len();
    let num_samples = records.len();
    let dist = ClassDistribution::from_records(records);
    let entropy = if dist.total() == 0 { 0.0 } else { entropy(&dist)? };
    Ok(DatasetStats {
        num_classes,
        num_samples,
        samples_per_class: if num_classes == 0 {
            0.0
        } else {
            num_samples as f64 / num_classes as f64
        },
        boxes_per_image: MinAvgMax::of(records.records.iter().map(|r| r.boxes.len() as f64)),
        classes_per_image: MinAvgMax::of(records.records.iter().map(|r| {
            r.boxes
                .iter()
                .map(|b| b.class_id)
                .collect::<BTreeSet<_>>()
                .len() as f64
        })),
        num_backgrounds: records.records.iter().filter(|r| r.is_background).count(),
        num_boxes: records.box_count(),
        entropy,
    })
}

impl DatasetStats {
    pub fn table_header() -> String {
        format!(
            "{:>7} {:>7} {:>11} | {:>5} {:>6} {:>5} | {:>5} {:>5} {:>5} | {:>7}",
            "Classes", "Samples", "Samples/Cls", "Min", "Avg", "Max", "Min", "Avg", "Max", "Entropy"
        )
    }

    /// One aligned row: class and sample counts, boxes per image,
    /// classes per image, entropy.
    pub fn table_row(&self) -> String {
        let b = &self.boxes_per_image;
        let c = &self.classes_per_image;
        format!(
            "{:>7} {:>7} {:>11.1} | {:>5} {:>6.1} {:>5} | {:>5} {:>5.1} {:>5} | {:>7.2}",
            self.num_classes,
            self.num_samples,
            self.samples_per_class,
            b.min,
            b.avg,
            b.max,
            c.min,
            c.avg,
            c.max,
            self.entropy
        )
    }
}

/// Median and half of the range, `(max - min) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub half_range: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary {
            median: 0.0,
            half_range: 0.0,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Summary {
        median,
        half_range: (sorted[n - 1] - sorted[0]) / 2.0,
    }
}

/// Per-fold class-ratio MAE of a split against the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub method: SplitMethod,
    pub k: usize,
    pub seed: u64,
    /// MAE of the union of every fold except `i`.
    pub per_fold_train_mae: Vec<f64>,
    /// MAE of fold `i` alone.
    pub per_fold_val_mae: Vec<f64>,
    pub train_summary: Summary,
    pub val_summary: Summary,
}

pub fn fold_report(matrix: &FeatureMatrix, assignment: &FoldAssignment) -> Result<SplitReport> {
    if assignment.len() != matrix.len() {
        return Err(Error::CoverageMismatch(format!(
            "{} assigned images vs {} matrix rows",
            assignment.len(),
            matrix.len()
        )));
    }
    let classes = matrix.class_ids.len();
    let mut per_fold = vec![vec![0u64; classes]; assignment.k];
    for row in &matrix.rows {
        let fold = *assignment.fold_of.get(&row.file_name).ok_or_else(|| {
            Error::CoverageMismatch(format!("'{}' has no fold", row.file_name))
        })?;
        if fold >= assignment.k {
            return Err(Error::FoldOutOfRange {
                fold,
                k: assignment.k,
            });
        }
        for (acc, &c) in per_fold[fold].iter_mut().zip(row.object_counts()) {
            *acc += c;
        }
    }

    let mut total = vec![0u64; classes];
    for fold in &per_fold {
        for (t, c) in total.iter_mut().zip(fold) {
            *t += c;
        }
    }
    let reference = ClassDistribution::new(matrix.class_ids.clone(), total.clone())?;

    let mut per_fold_train_mae = Vec::with_capacity(assignment.k);
    let mut per_fold_val_mae = Vec::with_capacity(assignment.k);
    for fold in &per_fold {
        let train: Vec<u64> = total.iter().zip(fold).map(|(t, v)| t - v).collect();
        let train = ClassDistribution::new(matrix.class_ids.clone(), train)?;
        let val = ClassDistribution::new(matrix.class_ids.clone(), fold.clone())?;
        per_fold_train_mae.push(class_ratio_mae(&reference, &train)?);
        per_fold_val_mae.push(class_ratio_mae(&reference, &val)?);
    }

    Ok(SplitReport {
        method: assignment.method,
        k: assignment.k,
        seed: assignment.seed,
        train_summary: summarize(&per_fold_train_mae),
        val_summary: summarize(&per_fold_val_mae),
        per_fold_train_mae,
        per_fold_val_mae,
    })
}

impl SplitReport {
    /// Aligned text table of per-fold values; `unit` divides every MAE
    /// (pass `1e-7` to print in units of 1e-7).
    pub fn to_table(&self, unit: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "method={} k={} seed={} (MAE unit {unit:e})",
            self.method, self.k, self.seed
        );
        let _ = writeln!(out, "{:>5} {:>14} {:>14}", "fold", "train", "val");
        for (i, (t, v)) in self
            .per_fold_train_mae
            .iter()
            .zip(&self.per_fold_val_mae)
            .enumerate()
        {
            let _ = writeln!(out, "{:>5} {:>14.4} {:>14.4}", i, t / unit, v / unit);
        }
        let fmt = |s: &Summary| format!("{:.4} ± {:.4}", s.median / unit, s.half_range / unit);
        let _ = writeln!(
            out,
            "{:>5} {:>14} {:>14}",
            "med",
            fmt(&self.train_summary),
            fmt(&self.val_summary)
        );
        out
    }
}
