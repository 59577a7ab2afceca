//! Per-image stratification labels.
//!
//! Each image becomes one row: a background indicator, one count column per
//! observed class, and the scaled average box width, height and
//! height-to-width ratio.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawRecordSet;

pub const DEFAULT_SCALE_FACTOR: f64 = 1000.0;
pub const BACKGROUND_COLUMN: &str = "background";
pub const GEOMETRY_COLUMNS: [&str; 3] = ["avg_w", "avg_h", "avg_ratio"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub file_name: String,
    /// Indexed by class column: `[background, class_ids[0], class_ids[1], ..]`.
    pub class_counts: Vec<u64>,
    /// Number of boxes, with zero replaced by one.
    pub box_count_effective: u64,
    pub avg_w: f64,
    pub avg_h: f64,
    pub avg_ratio: f64,
}

impl FeatureRow {
    pub fn is_background(&self) -> bool {
        self.class_counts[0] == 1
    }

    /// Box counts for the object classes, without the background column.
    pub fn object_counts(&self) -> &[u64] {
        &self.class_counts[1..]
    }

    /// All label values in column order.
    pub fn labels(&self) -> Vec<f64> {
        self.class_counts
            .iter()
            .map(|&c| c as f64)
            .chain([self.avg_w, self.avg_h, self.avg_ratio])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
    /// Class ids of the object count columns, ascending.
    pub class_ids: Vec<u32>,
    pub column_labels: Vec<String>,
    pub scale_factor: f64,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.column_labels.len()
    }

    pub fn file_names(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.file_name.clone()).collect()
    }

    /// Row-major label values.
    pub fn label_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(FeatureRow::labels).collect()
    }

    /// Sum of every label column over all rows.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_labels()];
        for row in &self.rows {
            for (s, v) in sums.iter_mut().zip(row.labels()) {
                *s += v;
            }
        }
        sums
    }

    /// Writes the matrix as CSV with a `file_name` column followed by the
    /// label columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(std::iter::once("file_name").chain(self.column_labels.iter().map(String::as_str)))?;
        for row in &self.rows {
            let mut fields = vec![row.file_name.clone()];
            fields.extend(row.class_counts.iter().map(u64::to_string));
            fields.extend([row.avg_w, row.avg_h, row.avg_ratio].iter().map(f64::to_string));
            out.write_record(&fields)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Builds one [`FeatureRow`] per record, in record order.
///
/// Widths and heights are multiplied by `scale_factor` before averaging;
/// `avg_ratio` is `avg_h / avg_w` (0 when `avg_w` is 0) and is not scaled.
pub fn build_feature_matrix(records: &RawRecordSet, scale_factor: f64) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyRecordSet);
    }
    if !(scale_factor.is_finite() && scale_factor > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "scale factor must be positive and finite, got {scale_factor}"
        )));
    }

    let class_ids = records.class_universe.clone();
    let column_of = |class_id: u32| -> usize {
        1 + class_ids
            .binary_search(&class_id)
            .expect("class universe covers every box")
    };

    let rows = records
        .records
        .iter()
        .map(|record| {
            let mut class_counts = vec![0u64; class_ids.len() + 1];
            let mut sum_w = 0.0;
            let mut sum_h = 0.0;
            for b in &record.boxes {
                class_counts[column_of(b.class_id)] += 1;
                sum_w += b.width * scale_factor;
                sum_h += b.height * scale_factor;
            }
            if record.boxes.is_empty() {
                class_counts[0] = 1;
            }
            let box_count_effective = (record.boxes.len() as u64).max(1);
            let avg_w = sum_w / box_count_effective as f64;
            let avg_h = sum_h / box_count_effective as f64;
            let avg_ratio = if avg_w > 0.0 { avg_h / avg_w } else { 0.0 };
            FeatureRow {
                file_name: record.file_name.clone(),
                class_counts,
                box_count_effective,
                avg_w,
                avg_h,
                avg_ratio,
            }
        })
        .collect();

    let column_labels = std::iter::once(BACKGROUND_COLUMN.to_string())
        .chain(class_ids.iter().map(|c| format!("class_{c}")))
        .chain(GEOMETRY_COLUMNS.iter().map(|s| s.to_string()))
        .collect();

    Ok(FeatureMatrix {
        rows,
        class_ids,
        column_labels,
        scale_factor,
    })
}
