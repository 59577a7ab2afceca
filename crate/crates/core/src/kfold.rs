//! K-fold assignment: iterative multi-label stratification and the seeded
//! uniform baseline.
//!
//! Both splitters draw all randomness from [`seeded_rng`], a ChaCha8 stream
//! keyed by the caller's 64-bit seed, so an assignment is a pure function of
//! its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Identifier of the pseudo-random generator, recorded in exported manifests.
pub const GENERATOR_ID: &str = "rand_chacha-0.3/ChaCha8Rng::seed_from_u64";

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Stratified,
    Uniform,
}

impl SplitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMethod::Stratified => "stratified",
            SplitMethod::Uniform => "uniform",
        }
    }
}

impl fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stratified" => Ok(SplitMethod::Stratified),
            "uniform" | "kfold" => Ok(SplitMethod::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown split method '{other}'"))),
        }
    }
}

/// Mapping from image file name to fold index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
    pub method: SplitMethod,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Members of every fold, each sorted by file name.
    pub fn folds(&self) -> Vec<Vec<String>> {
        let mut folds = vec![Vec::new(); self.k];
        for (name, &fold) in &self.fold_of {
            folds[fold].push(name.clone());
        }
        folds
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &fold in self.fold_of.values() {
            sizes[fold] += 1;
        }
        sizes
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::TooFewFolds { k, min: 2 });
    }
    if k > n {
        return Err(Error::MoreFoldsThanImages { k, n });
    }
    Ok(())
}

/// Splits the images of `matrix` into `k` folds by iterative stratification
/// over every label column (class counts, background indicator and geometry
/// averages).
pub fn split_stratified(matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<FoldAssignment> {
    check_k(k, matrix.len())?;
    for row in &matrix.rows {
        for (value, column) in row.labels().into_iter().zip(&matrix.column_labels) {
            if !value.is_finite() {
                return Err(Error::NonFiniteLabel {
                    file_name: row.file_name.clone(),
                    column: column.clone(),
                });
            }
            if value < 0.0 {
                return Err(Error::NegativeLabel {
                    file_name: row.file_name.clone(),
                    column: column.clone(),
                    value,
                });
            }
        }
    }
    let folds = stratify_labels(&matrix.label_matrix(), k, seed);
    Ok(FoldAssignment {
        k,
        fold_of: matrix
            .rows
            .iter()
            .map(|r| r.file_name.clone())
            .zip(folds)
            .collect(),
        method: SplitMethod::Stratified,
        seed,
    })
}

/// Iterative stratification over non-negative real label weights.
///
/// Returns the fold of each row. Callers guarantee `2 <= k <= labels.len()`
/// and finite non-negative weights.
///
/// The rows are first put in a seeded random order. Each fold then starts
/// with a demand of `column_total / k` for every label and a capacity of
/// `n / k` images. Until every row is placed, the label with the smallest
/// positive weight still held by unplaced rows is selected, and each unplaced
/// row carrying that label goes to the fold with the largest demand for it,
/// ties broken by largest capacity and then by a seeded draw. Placing a row
/// subtracts its labels from the fold's demands and one from its capacity.
/// Rows whose labels are all zero go to the fold with the largest capacity.
pub fn stratify_labels(labels: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    let num_labels = labels.first().map_or(0, Vec::len);
    let mut rng = seeded_rng(seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut totals = vec![0.0; num_labels];
    for &i in &order {
        for (t, v) in totals.iter_mut().zip(&labels[i]) {
            *t += v;
        }
    }
    let mut demand: Vec<Vec<f64>> = vec![totals.iter().map(|t| t / k as f64).collect(); k];
    let mut capacity = vec![n as f64 / k as f64; k];
    let mut fold_of: Vec<Option<usize>> = vec![None; n];
    let mut unplaced = n;

    while unplaced > 0 {
        let mut remaining = vec![0.0; num_labels];
        for &i in order.iter().filter(|&&i| fold_of[i].is_none()) {
            for (r, v) in remaining.iter_mut().zip(&labels[i]) {
                *r += v;
            }
        }

        let smallest = remaining
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .min_by(f64::total_cmp);

        let Some(smallest) = smallest else {
            for &i in &order {
                if fold_of[i].is_some() {
                    continue;
                }
                let all: Vec<usize> = (0..k).collect();
                let fold = pick(&argmax(&all, |f| capacity[f]), &mut rng);
                fold_of[i] = Some(fold);
                capacity[fold] -= 1.0;
            }
            break;
        };

        let label_candidates: Vec<usize> = (0..num_labels)
            .filter(|&l| remaining[l] == smallest)
            .collect();
        let label = pick(&label_candidates, &mut rng);

        for &i in &order {
            if fold_of[i].is_some() || labels[i][label] <= 0.0 {
                continue;
            }
            let all: Vec<usize> = (0..k).collect();
            let by_demand = argmax(&all, |f| demand[f][label]);
            let by_capacity = argmax(&by_demand, |f| capacity[f]);
            let fold = pick(&by_capacity, &mut rng);

            fold_of[i] = Some(fold);
            unplaced -= 1;
            for (d, v) in demand[fold].iter_mut().zip(&labels[i]) {
                *d -= v;
            }
            capacity[fold] -= 1.0;
        }
    }

    fold_of
        .into_iter()
        .map(|f| f.expect("every row is placed"))
        .collect()
}

/// All candidates attaining the maximum key.
fn argmax(candidates: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let best = candidates
        .iter()
        .map(|&c| key(c))
        .max_by(f64::total_cmp)
        .expect("non-empty candidate set");
    candidates.iter().copied().filter(|&c| key(c) == best).collect()
}

/// Single candidates are returned without consuming randomness.
fn pick(candidates: &[usize], rng: &mut ChaCha8Rng) -> usize {
    match candidates {
        [only] => *only,
        _ => candidates[rng.gen_range(0..candidates.len())],
    }
}

/// Seeded shuffle followed by contiguous chunking; the first `n % k` folds
/// receive one extra image.
pub fn split_uniform(file_names: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    check_k(k, file_names.len())?;
    let distinct: BTreeSet<&String> = file_names.iter().collect();
    if distinct.len() != file_names.len() {
        return Err(Error::InvalidConfig("duplicate file names in split input".into()));
    }

    let mut shuffled = file_names.to_vec();
    shuffled.shuffle(&mut seeded_rng(seed));

    let n = shuffled.len();
    let mut fold_of = BTreeMap::new();
    let mut names = shuffled.into_iter();
    for fold in 0..k {
        let size = n / k + usize::from(fold < n % k);
        for name in names.by_ref().take(size) {
            fold_of.insert(name, fold);
        }
    }
    Ok(FoldAssignment {
        k,
        fold_of,
        method: SplitMethod::Uniform,
        seed,
    })
}

/// Training and validation file names for one fold, both sorted.
pub fn folds_to_train_val(
    assignment: &FoldAssignment,
    val_fold: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    if val_fold >= assignment.k {
        return Err(Error::FoldOutOfRange {
            fold: val_fold,
            k: assignment.k,
        });
    }
    let (val, train): (Vec<_>, Vec<_>) = assignment
        .fold_of
        .iter()
        .partition(|(_, &fold)| fold == val_fold);
    let names = |v: Vec<(&String, &usize)>| v.into_iter().map(|(n, _)| n.clone()).collect();
    Ok((names(train), names(val)))
}
