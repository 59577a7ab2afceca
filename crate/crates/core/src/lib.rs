//! Stratified K-fold splitting for YOLO-format object-detection datasets.
//!
//! The pipeline is: [`scan_dataset`] reads label files into a
//! [`RawRecordSet`], [`build_feature_matrix`] turns every image into a row of
//! class counts and scaled box-geometry averages, and [`split_stratified`]
//! assigns images to folds by iterative multi-label stratification over those
//! rows. [`fold_report`] measures how well each fold preserves the dataset's
//! class ratios; [`nested_split`] and [`export_manifests`] produce a nested
//! cross-validation plan and the list files external trainers consume.

pub mod error;
pub mod features;
pub mod forge;
pub mod ingest;
pub mod kfold;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, LineError, Result};
pub use features::{build_feature_matrix, FeatureMatrix, FeatureRow, DEFAULT_SCALE_FACTOR};
pub use forge::{generate, ForgeConfig};
pub use ingest::{
    parse_label_line, scan_dataset, BoxAnnotation, ImageRecord, IngestOptions, IngestWarning,
    LinePolicy, RawRecordSet, SourcePaths,
};
pub use kfold::{
    folds_to_train_val, split_stratified, split_uniform, FoldAssignment, SplitMethod, GENERATOR_ID,
};
pub use metrics::{
    class_ratio_mae, dataset_stats, entropy, fold_report, summarize, ClassDistribution,
    DatasetStats, SplitReport, Summary,
};
pub use pipeline::{
    export_manifests, export_split, nested_split, ExportOptions, Layout, ManifestSummary,
    NestedConfig, NestedPlan,
};
