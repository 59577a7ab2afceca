//! Synthetic YOLO datasets with controllable class skew, box counts,
//! background share and box geometry.
//!
//! Output layout is `<out>/images/*.jpg` (zero-byte placeholders) and
//! `<out>/labels/*.txt`. Coordinates are drawn on a 1e-6 grid so the written
//! six-decimal labels parse back to exactly the generated values.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BoxAnnotation, ImageRecord, RawRecordSet, SourcePaths};
use crate::kfold::seeded_rng;

const GRID: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub num_images: usize,
    pub num_classes: usize,
    /// Relative class frequencies, one positive weight per class.
    pub class_weights: Vec<f64>,
    /// Inclusive range of boxes per non-background image; min must be ≥ 1.
    pub boxes_per_image: (usize, usize),
    /// Exactly `floor(background_fraction * num_images)` images are backgrounds.
    pub background_fraction: f64,
    /// Inclusive range for normalized box width and height.
    pub box_size_range: (f64, f64),
    pub seed: u64,
}

impl ForgeConfig {
    /// Equal class weights, 1–4 boxes per image, no backgrounds.
    pub fn uniform(num_images: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            num_images,
            num_classes,
            class_weights: vec![1.0; num_classes],
            boxes_per_image: (1, 4),
            background_fraction: 0.0,
            box_size_range: (0.05, 0.5),
            seed,
        }
    }

    pub fn num_backgrounds(&self) -> usize {
        (self.background_fraction * self.num_images as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_images == 0 {
            return bad("num_images must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.class_weights.len() != self.num_classes {
            return bad(format!(
                "{} class weights for {} classes",
                self.class_weights.len(),
                self.num_classes
            ));
        }
        if self
            .class_weights
            .iter()
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return bad("class weights must be positive and finite".into());
        }
        let (bmin, bmax) = self.boxes_per_image;
        if bmin == 0 || bmin > bmax {
            return bad(format!("invalid boxes-per-image range ({bmin}, {bmax})"));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad(format!(
                "background fraction {} is outside [0, 1)",
                self.background_fraction
            ));
        }
        let (smin, smax) = self.box_size_range;
        if !(smin > 0.0 && smin <= smax && smax <= 1.0) || grid_range(smin, smax).is_none() {
            return bad(format!("invalid box size range ({smin}, {smax})"));
        }
        Ok(())
    }
}

/// Grid bounds `[ceil(min * GRID), floor(max * GRID)]`, if non-empty.
fn grid_range(min: f64, max: f64) -> Option<(u32, u32)> {
    let lo = ((min * GRID as f64).ceil() as u32).max(1);
    let hi = ((max * GRID as f64).floor() as u32).min(GRID);
    (lo <= hi).then_some((lo, hi))
}

fn on_grid(units: u32) -> f64 {
    units as f64 / GRID as f64
}

/// Generates the dataset in memory without touching the filesystem.
pub fn plan(config: &ForgeConfig) -> Result<Vec<ImageRecord>> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let n = config.num_images;

    let mut is_background = vec![false; n];
    for i in index::sample(&mut rng, n, config.num_backgrounds()) {
        is_background[i] = true;
    }

    let classes = WeightedIndex::new(&config.class_weights)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (size_lo, size_hi) = grid_range(config.box_size_range.0, config.box_size_range.1)
        .expect("validated size range");
    let (bmin, bmax) = config.boxes_per_image;
    let width = (n - 1).to_string().len().max(5);

    let mut records = Vec::with_capacity(n);
    for (i, &background) in is_background.iter().enumerate() {
        let file_name = format!("img_{i:0width$}.jpg");
        if background {
            records.push(ImageRecord::background(file_name));
            continue;
        }
        let count = rng.gen_range(bmin..=bmax);
        let boxes = (0..count)
            .map(|_| {
                let class_id = classes.sample(&mut rng) as u32;
                let w = rng.gen_range(size_lo..=size_hi);
                let h = rng.gen_range(size_lo..=size_hi);
                let x = rng.gen_range(w.div_ceil(2)..=GRID - w.div_ceil(2));
                let y = rng.gen_range(h.div_ceil(2)..=GRID - h.div_ceil(2));
                BoxAnnotation {
                    class_id,
                    x_center: on_grid(x),
                    y_center: on_grid(y),
                    width: on_grid(w),
                    height: on_grid(h),
                }
            })
            .collect();
        records.push(ImageRecord::new(file_name, boxes));
    }
    Ok(records)
}

/// Writes a synthetic dataset under `out_dir` and returns its records.
///
/// Fails if `out_dir/images` or `out_dir/labels` already holds files.
pub fn generate(config: &ForgeConfig, out_dir: &Path) -> Result<RawRecordSet> {
    let records = plan(config)?;
    let image_dir = out_dir.join("images");
    let label_dir = out_dir.join("labels");
    for dir in [&image_dir, &label_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::InvalidConfig(format!(
                "output directory '{}' is not empty",
                dir.display()
            )));
        }
    }

    for record in &records {
        let image_path = image_dir.join(&record.file_name);
        fs::File::create(&image_path).map_err(|e| Error::io(&image_path, e))?;

        let label_path = label_dir.join(format!("{}.txt", record.stem()));
        let mut text = String::new();
        for b in &record.boxes {
            text.push_str(&format_label_line(b));
        }
        let mut file = fs::File::create(&label_path).map_err(|e| Error::io(&label_path, e))?;
        file.write_all(text.as_bytes())
            .map_err(|e| Error::io(&label_path, e))?;
    }

    Ok(RawRecordSet::from_records(
        records,
        SourcePaths {
            image_dir,
            label_dir,
        },
    ))
}

/// `class x y w h` with six decimals and a trailing newline.
pub fn format_label_line(b: &BoxAnnotation) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}\n",
        b.class_id, b.x_center, b.y_center, b.width, b.height
    )
}
