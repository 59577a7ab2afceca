//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p stratifold --test acceptance -- --nocapture --test-threads=1`
//! to see them.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use stratifold::forge::{self, ForgeConfig};
use stratifold::*;

fn verdict(name: &str, ok: bool, detail: impl AsRef<str>) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {}", detail.as_ref());
    assert!(ok, "{name} failed: {}", detail.as_ref());
}

fn in_memory(records: Vec<ImageRecord>) -> RawRecordSet {
    RawRecordSet::from_records(
        records,
        SourcePaths {
            image_dir: "images".into(),
            label_dir: "labels".into(),
        },
    )
}

fn random_forge(rng: &mut ChaCha8Rng, max_images: usize) -> ForgeConfig {
    let num_classes = rng.gen_range(1..=6);
    let bmin = rng.gen_range(1..=3);
    let smin = rng.gen_range(0.01..0.3);
    ForgeConfig {
        num_images: rng.gen_range(2..=max_images),
        num_classes,
        class_weights: (0..num_classes).map(|_| rng.gen_range(0.05..1.0)).collect(),
        boxes_per_image: (bmin, bmin + rng.gen_range(0..=5)),
        background_fraction: rng.gen_range(0.0..0.5),
        box_size_range: (smin, smin + rng.gen_range(0.0..0.6)),
        seed: rng.gen(),
    }
}

fn check_partition(a: &FoldAssignment, names: &[String]) -> Result<(), String> {
    if a.fold_of.len() != names.len() {
        return Err(format!("{} assigned vs {} images", a.fold_of.len(), names.len()));
    }
    let expected: BTreeSet<&String> = names.iter().collect();
    let folds = a.folds();
    let mut seen = BTreeSet::new();
    for (i, fold) in folds.iter().enumerate() {
        if fold.is_empty() {
            return Err(format!("fold {i} empty (sizes {:?})", a.fold_sizes()));
        }
        for name in fold {
            if !seen.insert(name) {
                return Err(format!("{name} in two folds"));
            }
        }
    }
    if seen != expected {
        return Err("folds do not cover the input".into());
    }
    if a.method == SplitMethod::Uniform {
        let sizes = a.fold_sizes();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        if spread > 1 {
            return Err(format!("uniform size spread {spread}"));
        }
    }
    Ok(())
}

#[test]
fn partition_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut draws = 0;
    let mut failures = Vec::new();
    while draws < 1000 {
        let config = random_forge(&mut rng, 150);
        let records = in_memory(forge::plan(&config).unwrap());
        let matrix = build_feature_matrix(&records, DEFAULT_SCALE_FACTOR).unwrap();
        let names = records.file_names();
        let k = rng.gen_range(2..=names.len().min(12));
        let seed: u64 = rng.gen();
        for a in [
            split_stratified(&matrix, k, seed).unwrap(),
            split_uniform(&names, k, seed).unwrap(),
        ] {
            if let Err(e) = check_partition(&a, &names) {
                failures.push(format!("draw {draws} {} k={k}: {e}", a.method));
            }
        }
        draws += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        "partition suite",
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{draws} datasets x 2 methods, {} violations, {:.2?} (< 60 s)",
            failures.len(),
            elapsed
        ) + &failures.first().map(|f| format!("; first: {f}")).unwrap_or_default(),
    );
}

fn tree_digest(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            let meta = fs::symlink_metadata(&path).unwrap();
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            if meta.is_dir() {
                stack.push(path);
            } else if meta.file_type().is_symlink() {
                out.insert(rel, fs::read_link(&path).unwrap().to_string_lossy().into_owned());
            } else {
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&path).unwrap())));
            }
        }
    }
    out
}

fn run_all_exports(data: &Path, out: &Path, k: usize, seed: u64, layout: Layout) {
    let records = scan_dataset(&data.join("images"), &data.join("labels"), &IngestOptions::default()).unwrap();
    let matrix = build_feature_matrix(&records, DEFAULT_SCALE_FACTOR).unwrap();
    let options = ExportOptions {
        layout,
        ..ExportOptions::new(data)
    };
    let strat = split_stratified(&matrix, k, seed).unwrap();
    export_split(&records, &strat, &out.join("split_stratified"), &options).unwrap();
    let uni = split_uniform(&records.file_names(), k, seed).unwrap();
    export_split(&records, &uni, &out.join("split_uniform"), &options).unwrap();
    if k >= 3 {
        for method in [SplitMethod::Stratified, SplitMethod::Uniform] {
            let plan = nested_split(&records, &NestedConfig::new(k, method, seed, seed ^ 1)).unwrap();
            export_manifests(&plan, &out.join(format!("nested_{method}")), &options).unwrap();
        }
    }
}

#[test]
fn determinism_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD37);
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    let mut files = 0;
    for i in 0..50 {
        let mut config = random_forge(&mut rng, 120);
        config.num_images = config.num_images.max(3);
        let data = tmp.path().join(format!("data{i}"));
        forge::generate(&config, &data).unwrap();
        let k = rng.gen_range(2..=config.num_images.min(10));
        let seed: u64 = rng.gen();
        let layout = if i % 5 == 0 { Layout::Links } else { Layout::Lists };
        let first = tmp.path().join(format!("run{i}a"));
        let second = tmp.path().join(format!("run{i}b"));
        run_all_exports(&data, &first, k, seed, layout);
        run_all_exports(&data, &second, k, seed, layout);
        let (a, b) = (tree_digest(&first), tree_digest(&second));
        files += a.len();
        if a != b {
            mismatches.push(i);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "determinism suite",
        mismatches.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "50 configs, {files} files compared, mismatching configs {mismatches:?}, {elapsed:.2?} (< 30 s)"
        ),
    );
}

#[test]
fn entropy_unit_checks() {
    let two = entropy(&ClassDistribution::from_counts(vec![1, 1])).unwrap();
    let one = entropy(&ClassDistribution::from_counts(vec![1])).unwrap();
    let mut ok = (two - LN_2).abs() <= 1e-12 && one.abs() <= 1e-12;
    let mut detail = format!("H([.5,.5]) = {two:.15}, H([1]) = {one}");

    let mut runner = TestRunner::new_with_rng(
        Config::with_cases(2000),
        TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (prop::collection::vec(0u64..40, 1..12), any::<prop::sample::Index>());
    let result = runner.run(&strategy, |(counts, rot)| {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let n = counts.len();
        let e = entropy(&ClassDistribution::from_counts(counts.clone())).unwrap();
        let mut permuted = counts.clone();
        permuted.rotate_left(rot.index(n));
        permuted.reverse();
        let ep = entropy(&ClassDistribution::from_counts(permuted)).unwrap();
        prop_assert!((e - ep).abs() <= 1e-12, "permutation changed entropy");
        let max = (n as f64).ln();
        prop_assert!(e <= max + 1e-12, "entropy above ln n");
        let uniform = counts.iter().all(|&c| c == counts[0]);
        prop_assert_eq!(uniform, (e - max).abs() <= 1e-12, "equality iff uniform");
        Ok(())
    });
    if let Err(e) = result {
        ok = false;
        detail.push_str(&format!("; property failure: {e}"));
    } else {
        detail.push_str("; permutation invariance and ln n bound hold on 2000 random distributions");
    }
    verdict("entropy unit checks", ok, detail);
}

#[test]
fn mae_unit_checks() {
    let reference = ClassDistribution::from_counts(vec![5, 3, 2]);
    let subset = ClassDistribution::from_counts(vec![4, 4, 2]);
    let identity = class_ratio_mae(&reference, &reference).unwrap();
    let hand = class_ratio_mae(&reference, &subset).unwrap();
    verdict(
        "MAE unit checks",
        identity == 0.0 && (hand - 0.066667).abs() <= 1e-6 && (hand - 0.2 / 3.0).abs() <= 1e-9,
        format!("identity = {identity}, [.5,.3,.2] vs [.4,.4,.2] = {hand:.9}"),
    );
}

/// Stratified vs uniform 10-fold splits on a skewed three-class dataset.
/// Box sides are drawn from [0.1, 0.5], i.e. aspect ratios within 1:5; much
/// wider geometry spreads let the unscaled `avg_ratio` column dominate the
/// assignment and erode class-ratio preservation.
#[test]
fn stratified_trend_on_skewed_data() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for data_seed in [2024u64, 1, 2] {
        let config = ForgeConfig {
            num_images: 400,
            num_classes: 3,
            class_weights: vec![0.8, 0.15, 0.05],
            boxes_per_image: (1, 5),
            background_fraction: 0.1,
            box_size_range: (0.1, 0.5),
            seed: data_seed,
        };
        let records = in_memory(forge::plan(&config).unwrap());
        let dataset_entropy = entropy(&ClassDistribution::from_records(&records)).unwrap();
        let backgrounds = records.records.iter().filter(|r| r.is_background).count();
        let matrix = build_feature_matrix(&records, DEFAULT_SCALE_FACTOR).unwrap();
        let names = records.file_names();

        let mut wins = 0;
        let mut strat_medians = Vec::new();
        let mut uni_medians = Vec::new();
        for seed in 0..20u64 {
            let s = fold_report(&matrix, &split_stratified(&matrix, 10, seed).unwrap()).unwrap();
            let u = fold_report(&matrix, &split_uniform(&names, 10, seed).unwrap()).unwrap();
            if s.val_summary.median <= u.val_summary.median
                && s.val_summary.half_range <= u.val_summary.half_range
            {
                wins += 1;
            }
            strat_medians.push(s.val_summary.median);
            uni_medians.push(u.val_summary.median);
        }
        ok &= dataset_entropy <= 1.0 && backgrounds == 40 && wins >= 16;
        detail.push(format!(
            "dataset {data_seed}: entropy {dataset_entropy:.3}, {backgrounds} backgrounds, \
             stratified wins {wins}/20, median val MAE {:.3e} vs {:.3e}",
            summarize(&strat_medians).median,
            summarize(&uni_medians).median
        ));
    }
    let elapsed = start.elapsed();
    detail.push(format!("{elapsed:.2?} (< 120 s)"));
    verdict(
        "stratified beats uniform on skewed data",
        ok && elapsed < Duration::from_secs(120),
        detail.join("; "),
    );
}

/// Largest |fold weight - total / 2| over labels and both folds.
fn max_deviation(labels: &[Vec<f64>], in_first: &[bool]) -> f64 {
    let num_labels = labels[0].len();
    let mut worst: f64 = 0.0;
    for l in 0..num_labels {
        let total: f64 = labels.iter().map(|r| r[l]).sum();
        let first: f64 = labels
            .iter()
            .zip(in_first)
            .filter(|(_, &f)| f)
            .map(|(r, _)| r[l])
            .sum();
        worst = worst.max((first - total / 2.0).abs()).max((total - first - total / 2.0).abs());
    }
    worst
}

/// Exhaustive minimum over all balanced bipartitions.
fn brute_force_optimum(labels: &[Vec<f64>]) -> f64 {
    let n = labels.len();
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == n / 2)
        .map(|mask| {
            let in_first: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            max_deviation(labels, &in_first)
        })
        .fold(f64::INFINITY, f64::min)
}

fn image(name: &str, classes: &[u32], size: f64) -> ImageRecord {
    ImageRecord::new(
        name,
        classes
            .iter()
            .map(|&class_id| BoxAnnotation {
                class_id,
                x_center: 0.5,
                y_center: 0.5,
                width: size,
                height: size,
            })
            .collect(),
    )
}

fn family(spec: &[(&[u32], f64)]) -> RawRecordSet {
    in_memory(
        spec.iter()
            .enumerate()
            .map(|(i, (classes, size))| image(&format!("{i}.jpg"), classes, *size))
            .collect(),
    )
}

#[test]
fn tiny_instance_oracle() {
    let start = Instant::now();
    let families: Vec<(&str, RawRecordSet)> = vec![
        ("4: two classes", family(&[(&[0], 0.2), (&[0], 0.2), (&[1], 0.2), (&[1], 0.2)])),
        ("4: backgrounds", family(&[(&[], 0.2), (&[], 0.2), (&[0], 0.2), (&[0], 0.2)])),
        ("4: shared class", family(&[(&[0, 1], 0.2), (&[0, 1], 0.2), (&[0], 0.2), (&[0], 0.2)])),
        (
            "6: three classes",
            family(&[(&[0], 0.2), (&[0], 0.2), (&[1], 0.2), (&[1], 0.2), (&[2], 0.2), (&[2], 0.2)]),
        ),
        (
            "6: backgrounds",
            family(&[(&[], 0.2), (&[], 0.2), (&[0], 0.2), (&[0], 0.2), (&[1], 0.2), (&[1], 0.2)]),
        ),
        (
            "6: class-coupled geometry",
            family(&[(&[], 0.1), (&[], 0.1), (&[0], 0.1), (&[0], 0.1), (&[1], 0.4), (&[1], 0.4)]),
        ),
    ];
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, records) in &families {
        let matrix = build_feature_matrix(records, DEFAULT_SCALE_FACTOR).unwrap();
        let labels = matrix.label_matrix();
        let optimum = brute_force_optimum(&labels);
        for seed in 0..64 {
            let a = split_stratified(&matrix, 2, seed).unwrap();
            let in_first: Vec<bool> = matrix.rows.iter().map(|r| a.fold_of[&r.file_name] == 0).collect();
            let got = max_deviation(&labels, &in_first);
            checked += 1;
            if (got - optimum).abs() > 1e-9 {
                failures.push(format!("{name} seed {seed}: {got} vs optimum {optimum}"));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "tiny-instance oracle",
        failures.is_empty() && elapsed < Duration::from_secs(5),
        format!(
            "{} families x 64 seeds = {checked} splits, {} off-optimum, {elapsed:.2?} (< 5 s)",
            families.len(),
            failures.len()
        ) + &failures.first().map(|f| format!("; first: {f}")).unwrap_or_default(),
    );
}

#[test]
fn forge_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut mismatches = Vec::new();
    for i in 0..10 {
        let config = random_forge(&mut rng, 200);
        let planned = in_memory(forge::plan(&config).unwrap()).class_totals();
        let out = tmp.path().join(format!("d{i}"));
        let generated = forge::generate(&config, &out).unwrap();
        let scanned = scan_dataset(&out.join("images"), &out.join("labels"), &IngestOptions::default()).unwrap();
        let matrix = build_feature_matrix(&scanned, DEFAULT_SCALE_FACTOR).unwrap();
        let sums = matrix.column_sums();
        let from_matrix: BTreeMap<u32, u64> = matrix
            .class_ids
            .iter()
            .enumerate()
            .map(|(col, &id)| (id, sums[col + 1] as u64))
            .collect();
        if from_matrix != planned || generated != scanned {
            mismatches.push(i);
        }
    }
    verdict(
        "forge round-trip",
        mismatches.is_empty(),
        format!("10 generated datasets, column sums vs planned totals mismatching: {mismatches:?}"),
    );
}

#[test]
fn nested_protocol_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let config = ForgeConfig {
        background_fraction: 0.1,
        ..ForgeConfig::uniform(300, 4, 99)
    };
    forge::generate(&config, &data).unwrap();
    let records = scan_dataset(&data.join("images"), &data.join("labels"), &IngestOptions::default()).unwrap();

    let mut outputs = Vec::new();
    for method in [SplitMethod::Uniform, SplitMethod::Stratified] {
        let plan = nested_split(&records, &NestedConfig::new(10, method, 7, 8)).unwrap();
        let out = tmp.path().join(method.as_str());
        let summary = export_manifests(&plan, &out, &ExportOptions::new(&data)).unwrap();
        outputs.push((out, summary));
    }
    let mut ok = true;
    let mut detail = Vec::new();
    for (out, summary) in &outputs {
        let train = summary.files.iter().filter(|f| f.starts_with("train_fold_")).count();
        let val = summary.files.iter().filter(|f| f.starts_with("val_fold_")).count();
        let test = summary.files.iter().filter(|f| *f == "test.txt").count();
        ok &= (train, val, test) == (9, 9, 1) && out.join("summary.json").is_file();
        detail.push(format!("{}: {test} test + {train}/{val} train/val", summary.method));
    }
    let a = fs::read(outputs[0].0.join("test.txt")).unwrap();
    let b = fs::read(outputs[1].0.join("test.txt")).unwrap();
    ok &= a == b && !a.is_empty();
    detail.push(format!("test.txt identical across inner methods: {}", a == b));
    verdict("nested protocol shape", ok, detail.join("; "));
}

/// Reference statistics for public/private datasets, checked only when
/// `STRATIFOLD_DATASETS` points at a directory holding `<name>/images` and
/// `<name>/labels` for some of them.
#[test]
fn reference_datasets_optional() {
    let Ok(root) = std::env::var("STRATIFOLD_DATASETS") else {
        println!("[SKIP] reference datasets: STRATIFOLD_DATASETS not set");
        return;
    };
    let expected = [
        ("website_screenshot", 1.61, 150.8),
        ("aquarium", 1.42, 91.1),
        ("bccd", 0.53, 121.3),
    ];
    let mut found = 0;
    for (name, want_entropy, want_spc) in expected {
        let dir = Path::new(&root).join(name);
        if !dir.join("images").is_dir() {
            println!("[SKIP] reference dataset {name}: not present under {root}");
            continue;
        }
        found += 1;
        let options = IngestOptions {
            line_policy: LinePolicy::SkipWithWarning,
            ..Default::default()
        };
        let records = scan_dataset(&dir.join("images"), &dir.join("labels"), &options).unwrap();
        let stats = dataset_stats(&records).unwrap();
        verdict(
            &format!("reference dataset {name}"),
            (stats.entropy - want_entropy).abs() <= 0.05
                && (stats.samples_per_class - want_spc).abs() <= 0.5,
            format!(
                "entropy {:.3} (want {want_entropy} ± 0.05), samples/class {:.2} (want {want_spc} ± 0.5)",
                stats.entropy, stats.samples_per_class
            ),
        );
    }
    if found == 0 {
        println!("[SKIP] reference datasets: none found under {root}");
    }
}
