//! Nested cross-validation plans and fold manifest export.
//!
//! The outer split is always stratified and reserves one fold as the test
//! set. The remaining images are re-split into `k - 1` inner folds with
//! either splitter, so both inner methods share the same test set for a
//! given outer seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, DEFAULT_SCALE_FACTOR};
use crate::ingest::{RawRecordSet, SourcePaths};
use crate::kfold::{
    folds_to_train_val, split_stratified, split_uniform, FoldAssignment, SplitMethod, GENERATOR_ID,
};

pub const MANIFEST_SCHEMA: &str = "stratifold.manifest/1";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TEST_LIST: &str = "test.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedConfig {
    pub k: usize,
    pub inner_method: SplitMethod,
    pub outer_seed: u64,
    pub inner_seed: u64,
    /// Outer fold used as the test set; defaults to the last fold.
    pub test_fold: Option<usize>,
    pub scale_factor: f64,
}

impl NestedConfig {
    pub fn new(k: usize, inner_method: SplitMethod, outer_seed: u64, inner_seed: u64) -> Self {
        Self {
            k,
            inner_method,
            outer_seed,
            inner_seed,
            test_fold: None,
            scale_factor: DEFAULT_SCALE_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedPlan {
    /// Stratified split of every image into `k` folds.
    pub outer: FoldAssignment,
    pub test_fold: usize,
    /// Split of the non-test images into `k - 1` folds.
    pub inner: FoldAssignment,
    pub outer_seed: u64,
    pub inner_seed: u64,
    pub scale_factor: f64,
    pub source: SourcePaths,
    pub input_hash: String,
}

impl NestedPlan {
    pub fn k(&self) -> usize {
        self.outer.k
    }

    /// Test images, sorted.
    pub fn test_images(&self) -> Vec<String> {
        self.outer
            .fold_of
            .iter()
            .filter(|(_, &f)| f == self.test_fold)
            .map(|(n, _)| n.clone())
            .collect()
    }
}

pub fn nested_split(records: &RawRecordSet, config: &NestedConfig) -> Result<NestedPlan> {
    let k = config.k;
    if k < 3 {
        return Err(Error::TooFewFolds { k, min: 3 });
    }
    let test_fold = config.test_fold.unwrap_or(k - 1);
    if test_fold >= k {
        return Err(Error::FoldOutOfRange { fold: test_fold, k });
    }

    let full = build_feature_matrix(records, config.scale_factor)?;
    let outer = split_stratified(&full, k, config.outer_seed)?;

    let keep: BTreeSet<&str> = outer
        .fold_of
        .iter()
        .filter(|(_, &f)| f != test_fold)
        .map(|(n, _)| n.as_str())
        .collect();
    let remaining = records.subset(&keep);
    let inner = match config.inner_method {
        SplitMethod::Stratified => {
            let reduced = build_feature_matrix(&remaining, config.scale_factor)?;
            split_stratified(&reduced, k - 1, config.inner_seed)?
        }
        SplitMethod::Uniform => split_uniform(&remaining.file_names(), k - 1, config.inner_seed)?,
    };

    Ok(NestedPlan {
        outer,
        test_fold,
        inner,
        outer_seed: config.outer_seed,
        inner_seed: config.inner_seed,
        scale_factor: config.scale_factor,
        source: records.source.clone(),
        input_hash: records.content_hash(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Plain-text lists of image paths only.
    #[default]
    Lists,
    /// Lists plus per-fold directories linking the image and label files.
    Links,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOptions {
    pub layout: Layout,
    /// Manifest paths are written relative to this directory.
    pub dataset_root: PathBuf,
    /// Embedded verbatim under `run` in the summary document.
    pub run: Option<serde_json::Value>,
}

impl ExportOptions {
    pub fn new(dataset_root: impl Into<PathBuf>) -> Self {
        Self {
            layout: Layout::Lists,
            dataset_root: dataset_root.into(),
            run: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldCounts {
    pub fold: usize,
    pub train: usize,
    pub val: usize,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub schema: String,
    pub generator: String,
    pub input_hash: String,
    pub k: usize,
    pub method: SplitMethod,
    pub seed: u64,
    /// Present for nested plans only.
    pub nested: Option<NestedInfo>,
    pub scale_factor: Option<f64>,
    pub layout: Layout,
    /// Directory of the images relative to the dataset root, `/`-separated.
    pub image_prefix: String,
    pub label_prefix: String,
    pub folds: Vec<FoldCounts>,
    /// List files written next to the summary, sorted.
    pub files: Vec<String>,
    pub run: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedInfo {
    pub outer_k: usize,
    pub outer_method: SplitMethod,
    pub outer_seed: u64,
    pub test_fold: usize,
    pub test_count: usize,
}

/// Writes `train_fold_<i>.txt` / `val_fold_<i>.txt` for every inner fold,
/// `test.txt`, and `summary.json`.
pub fn export_manifests(
    plan: &NestedPlan,
    out_dir: &Path,
    options: &ExportOptions,
) -> Result<ManifestSummary> {
    let test = plan.test_images();
    let mut summary = write_folds(
        &plan.inner,
        &plan.source,
        &plan.input_hash,
        Some(&test),
        out_dir,
        options,
    )?;
    summary.scale_factor = Some(plan.scale_factor);
    summary.nested = Some(NestedInfo {
        outer_k: plan.outer.k,
        outer_method: plan.outer.method,
        outer_seed: plan.outer_seed,
        test_fold: plan.test_fold,
        test_count: test.len(),
    });
    write_summary(out_dir, &summary)?;
    Ok(summary)
}

/// Writes train/val lists for every fold of a flat split plus
/// `summary.json`.
pub fn export_split(
    records: &RawRecordSet,
    assignment: &FoldAssignment,
    out_dir: &Path,
    options: &ExportOptions,
) -> Result<ManifestSummary> {
    let summary = write_folds(
        assignment,
        &records.source,
        &records.content_hash(),
        None,
        out_dir,
        options,
    )?;
    write_summary(out_dir, &summary)?;
    Ok(summary)
}

fn write_folds(
    assignment: &FoldAssignment,
    source: &SourcePaths,
    input_hash: &str,
    test: Option<&[String]>,
    out_dir: &Path,
    options: &ExportOptions,
) -> Result<ManifestSummary> {
    let image_prefix = relative_prefix(&source.image_dir, &options.dataset_root)?;
    let label_prefix = relative_prefix(&source.label_dir, &options.dataset_root)?;

    if options.layout == Layout::Links {
        for name in assignment.fold_of.keys().chain(test.into_iter().flatten()) {
            let image = source.image_dir.join(name);
            if !image.is_file() {
                return Err(Error::MissingSource(image));
            }
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut files = Vec::new();
    let mut folds = Vec::with_capacity(assignment.k);
    for fold in 0..assignment.k {
        let (train, val) = folds_to_train_val(assignment, fold)?;
        for (role, names) in [("train", &train), ("val", &val)] {
            let file = format!("{role}_fold_{fold}.txt");
            write_list(&out_dir.join(&file), &image_prefix, names)?;
            files.push(file);
            if options.layout == Layout::Links {
                link_files(source, names, &out_dir.join(format!("fold_{fold}")).join(role))?;
            }
        }
        folds.push(FoldCounts {
            fold,
            train: train.len(),
            val: val.len(),
        });
    }
    if let Some(test) = test {
        write_list(&out_dir.join(TEST_LIST), &image_prefix, test)?;
        files.push(TEST_LIST.to_string());
        if options.layout == Layout::Links {
            link_files(source, test, &out_dir.join("test"))?;
        }
    }
    files.sort();

    Ok(ManifestSummary {
        schema: MANIFEST_SCHEMA.to_string(),
        generator: GENERATOR_ID.to_string(),
        input_hash: input_hash.to_string(),
        k: assignment.k,
        method: assignment.method,
        seed: assignment.seed,
        nested: None,
        scale_factor: None,
        layout: options.layout,
        image_prefix,
        label_prefix,
        folds,
        files,
        run: options.run.clone(),
    })
}

fn write_summary(out_dir: &Path, summary: &ManifestSummary) -> Result<()> {
    let path = out_dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// One `prefix/name` line per image, newline-terminated, in the given
/// (sorted) order.
fn write_list(path: &Path, prefix: &str, names: &[String]) -> Result<()> {
    let mut text = String::new();
    for name in names {
        if !prefix.is_empty() {
            text.push_str(prefix);
            text.push('/');
        }
        text.push_str(name);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn link_files(source: &SourcePaths, names: &[String], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for name in names {
        link_one(&source.image_dir.join(name), &images.join(name))?;
        let stem = match name.rfind('.') {
            Some(i) if i > 0 => &name[..i],
            _ => name.as_str(),
        };
        let label_name = format!("{stem}.txt");
        let label = source.label_dir.join(&label_name);
        if label.is_file() {
            link_one(&label, &labels.join(label_name))?;
        }
    }
    Ok(())
}

fn link_one(src: &Path, dst: &Path) -> Result<()> {
    if fs::symlink_metadata(dst).is_ok() {
        fs::remove_file(dst).map_err(|e| Error::io(dst, e))?;
    }
    let target = fs::canonicalize(src).map_err(|e| Error::io(src, e))?;
    #[cfg(unix)]
    let linked = std::os::unix::fs::symlink(&target, dst);
    #[cfg(not(unix))]
    let linked = fs::copy(&target, dst).map(|_| ());
    linked.map_err(|e| Error::io(dst, e))
}

/// `path` relative to `root` as a `/`-separated string.
fn relative_prefix(path: &Path, root: &Path) -> Result<String> {
    let rel = match path.strip_prefix(root) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => {
            let canon = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
            let (p, r) = (canon(path)?, canon(root)?);
            p.strip_prefix(&r)
                .map_err(|_| Error::OutsideRoot {
                    path: path.to_path_buf(),
                    root: root.to_path_buf(),
                })?
                .to_path_buf()
        }
    };
    let parts: Vec<String> = rel
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect();
    Ok(parts.join("/"))
}
