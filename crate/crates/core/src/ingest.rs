//! YOLO label ingestion.
//!
//! A dataset is an image directory plus a label directory. Every image stem
//! becomes one [`ImageRecord`]; its boxes come from `<stem>.txt` in the label
//! directory. Images with no label file, an empty label file, or a label file
//! with no usable lines are background images.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, LineError, Result};

pub const DEFAULT_IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];
const LABEL_EXTENSION: &str = "txt";

/// One labeled bounding box in image-normalized center/size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub class_id: u32,
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxAnnotation {
    pub fn is_degenerate(&self) -> bool {
        self.width == 0.0 || self.height == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub file_name: String,
    pub boxes: Vec<BoxAnnotation>,
    pub is_background: bool,
}

impl ImageRecord {
    pub fn new(file_name: impl Into<String>, boxes: Vec<BoxAnnotation>) -> Self {
        let is_background = boxes.is_empty();
        Self {
            file_name: file_name.into(),
            boxes,
            is_background,
        }
    }

    pub fn background(file_name: impl Into<String>) -> Self {
        Self::new(file_name, Vec::new())
    }

    /// File stem, i.e. the name of the matching label file without `.txt`.
    pub fn stem(&self) -> &str {
        match self.file_name.rfind('.') {
            Some(0) | None => &self.file_name,
            Some(i) => &self.file_name[..i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePaths {
    pub image_dir: PathBuf,
    pub label_dir: PathBuf,
}

/// Non-fatal findings collected while scanning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestWarning {
    /// A label file whose stem matches no image.
    OrphanLabel { label: String },
    /// Several images share a stem; only `kept` is used.
    DuplicateStem { kept: String, dropped: String },
    /// A malformed line skipped under [`LinePolicy::SkipWithWarning`].
    SkippedLine {
        label: String,
        line: usize,
        reason: String,
    },
    /// A zero-width or zero-height box accepted in permissive mode.
    DegenerateBox { label: String, line: usize },
    /// A directory entry whose name is not valid UTF-8.
    NonUtf8Name { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinePolicy {
    /// Any malformed line aborts the scan.
    #[default]
    Abort,
    /// Malformed lines are dropped and reported as warnings.
    SkipWithWarning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    /// Lower-case image extensions without the leading dot.
    pub image_extensions: Vec<String>,
    pub line_policy: LinePolicy,
    /// Accept zero-width/height boxes with a warning instead of rejecting them.
    pub allow_degenerate: bool,
    /// Treat a missing label directory as "every image is a background".
    pub allow_missing_label_dir: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            image_extensions: DEFAULT_IMAGE_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
            line_policy: LinePolicy::Abort,
            allow_degenerate: false,
            allow_missing_label_dir: false,
        }
    }
}

/// Every image of a dataset together with its parsed boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecordSet {
    /// Sorted by `file_name`.
    pub records: Vec<ImageRecord>,
    /// Sorted, deduplicated class ids seen in any box.
    pub class_universe: Vec<u32>,
    pub source: SourcePaths,
    pub warnings: Vec<IngestWarning>,
}

impl RawRecordSet {
    /// Builds a record set from records in any order.
    pub fn from_records(mut records: Vec<ImageRecord>, source: SourcePaths) -> Self {
        records.sort_by(|a, b| a.file_name.cmp(&b.file_name));
        let class_universe = class_universe_of(&records);
        Self {
            records,
            class_universe,
            source,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn file_names(&self) -> Vec<String> {
        self.records.iter().map(|r| r.file_name.clone()).collect()
    }

    pub fn box_count(&self) -> usize {
        self.records.iter().map(|r| r.boxes.len()).sum()
    }

    /// Number of boxes per class id.
    pub fn class_totals(&self) -> BTreeMap<u32, u64> {
        let mut totals = BTreeMap::new();
        for b in self.records.iter().flat_map(|r| &r.boxes) {
            *totals.entry(b.class_id).or_insert(0) += 1;
        }
        totals
    }

    /// Restricts the set to the named images. The class universe is
    /// recomputed from the remaining boxes; warnings are dropped.
    pub fn subset(&self, keep: &BTreeSet<&str>) -> Self {
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(r.file_name.as_str()))
            .cloned()
            .collect();
        Self::from_records(records, self.source.clone())
    }

    /// SHA-256 over a canonical rendering of the records (file names and
    /// exact box bit patterns). Independent of source paths and warnings.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for record in &self.records {
            hasher.update(record.file_name.as_bytes());
            hasher.update(b"\n");
            for b in &record.boxes {
                let line = format!(
                    "{} {:016x} {:016x} {:016x} {:016x}\n",
                    b.class_id,
                    b.x_center.to_bits(),
                    b.y_center.to_bits(),
                    b.width.to_bits(),
                    b.height.to_bits()
                );
                hasher.update(line.as_bytes());
            }
            hasher.update(b"\0");
        }
        hex::encode(hasher.finalize())
    }
}

fn class_universe_of(records: &[ImageRecord]) -> Vec<u32> {
    records
        .iter()
        .flat_map(|r| r.boxes.iter().map(|b| b.class_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Parses one `class x_center y_center width height` line.
///
/// Zero-width and zero-height boxes are rejected; see [`IngestOptions`] for
/// the permissive variant used during scanning.
pub fn parse_label_line(line: &str) -> Result<BoxAnnotation, LineError> {
    parse_line(line, false)
}

fn parse_line(line: &str, allow_degenerate: bool) -> Result<BoxAnnotation, LineError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(LineError::FieldCount(fields.len()));
    }
    let class_id = fields[0]
        .parse::<u32>()
        .map_err(|_| LineError::ClassId(fields[0].to_string()))?;

    let names = ["x_center", "y_center", "width", "height"];
    let mut values = [0.0f64; 4];
    for (i, (raw, name)) in fields[1..].iter().zip(names).enumerate() {
        let v: f64 = raw
            .parse()
            .map_err(|_| LineError::Number(raw.to_string(), name))?;
        let ok = if i < 2 || allow_degenerate {
            (0.0..=1.0).contains(&v)
        } else {
            v > 0.0 && v <= 1.0
        };
        if !ok {
            let range = if i < 2 || allow_degenerate { "[0, 1]" } else { "(0, 1]" };
            return Err(LineError::OutOfRange {
                field: name,
                value: v,
                range,
            });
        }
        values[i] = v;
    }
    Ok(BoxAnnotation {
        class_id,
        x_center: values[0],
        y_center: values[1],
        width: values[2],
        height: values[3],
    })
}

/// Scans `image_dir` and `label_dir` into a sorted [`RawRecordSet`].
pub fn scan_dataset(
    image_dir: &Path,
    label_dir: &Path,
    options: &IngestOptions,
) -> Result<RawRecordSet> {
    let mut warnings = Vec::new();

    let image_exts: BTreeSet<String> = options
        .image_extensions
        .iter()
        .map(|e| e.trim_start_matches('.').to_ascii_lowercase())
        .collect();

    // stem -> image file names, sorted
    let mut images: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (stem, file_name) in list_files(image_dir, &mut warnings, |ext| {
        image_exts.contains(&ext.to_ascii_lowercase())
    })? {
        images.entry(stem).or_default().insert(file_name);
    }

    let labels: BTreeMap<String, PathBuf> = if label_dir.is_dir() {
        list_files(label_dir, &mut warnings, |ext| {
            ext.eq_ignore_ascii_case(LABEL_EXTENSION)
        })?
        .into_iter()
        .map(|(stem, file_name)| (stem, label_dir.join(file_name)))
        .collect()
    } else if options.allow_missing_label_dir && !label_dir.exists() {
        BTreeMap::new()
    } else if label_dir.exists() {
        return Err(Error::UnreadableDir {
            path: label_dir.to_path_buf(),
            source: std::io::Error::other("not a directory"),
        });
    } else {
        return Err(Error::MissingLabelDir {
            path: label_dir.to_path_buf(),
        });
    };

    let mut records = Vec::with_capacity(images.len());
    for (stem, names) in &images {
        let mut names = names.iter();
        let kept = names.next().expect("stem entries are non-empty").clone();
        for dropped in names {
            warnings.push(IngestWarning::DuplicateStem {
                kept: kept.clone(),
                dropped: dropped.clone(),
            });
        }
        let boxes = match labels.get(stem) {
            Some(path) => read_label_file(path, options, &mut warnings)?,
            None => Vec::new(),
        };
        records.push(ImageRecord::new(kept, boxes));
    }

    for (stem, path) in &labels {
        if !images.contains_key(stem) {
            warnings.push(IngestWarning::OrphanLabel {
                label: file_name_of(path),
            });
        }
    }

    let mut set = RawRecordSet::from_records(
        records,
        SourcePaths {
            image_dir: image_dir.to_path_buf(),
            label_dir: label_dir.to_path_buf(),
        },
    );
    set.warnings = warnings;
    Ok(set)
}

fn read_label_file(
    path: &Path,
    options: &IngestOptions,
    warnings: &mut Vec<IngestWarning>,
) -> Result<Vec<BoxAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = file_name_of(path);
    let mut boxes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_line(trimmed, options.allow_degenerate) {
            Ok(b) => {
                if b.is_degenerate() {
                    warnings.push(IngestWarning::DegenerateBox {
                        label: label.clone(),
                        line: line_no,
                    });
                }
                boxes.push(b);
            }
            Err(kind) => match options.line_policy {
                LinePolicy::Abort => {
                    return Err(Error::LabelParse {
                        path: path.to_path_buf(),
                        line: line_no,
                        kind,
                    })
                }
                LinePolicy::SkipWithWarning => warnings.push(IngestWarning::SkippedLine {
                    label: label.clone(),
                    line: line_no,
                    reason: kind.to_string(),
                }),
            },
        }
    }
    Ok(boxes)
}

/// Lists regular files in `dir` whose extension passes `keep`, as
/// `(stem, file_name)` pairs.
fn list_files(
    dir: &Path,
    warnings: &mut Vec<IngestWarning>,
    keep: impl Fn(&str) -> bool,
) -> Result<Vec<(String, String)>> {
    let unreadable = |source| Error::UnreadableDir {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(unreadable)? {
        let entry = entry.map_err(unreadable)?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(file_name) = entry.file_name().to_str().map(str::to_owned) else {
            warnings.push(IngestWarning::NonUtf8Name { path });
            continue;
        };
        let Some((stem, ext)) = file_name.rsplit_once('.') else {
            continue;
        };
        if stem.is_empty() || !keep(ext) {
            continue;
        }
        out.push((stem.to_string(), file_name.clone()));
    }
    Ok(out)
}

fn file_name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
