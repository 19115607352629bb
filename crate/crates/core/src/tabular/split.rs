use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{EncodedTable, ScalerStats, ScalingMode, Target};
use crate::error::{Error, Result};
use crate::seed;

const TEST_FRACTION: f64 = 0.2;
const PSEUDO_VAL_FRACTION: f64 = 0.2;

/// Row indices of every split, relative to the source table(s).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub source_rows: usize,
    /// When set, `test` indexes the separately shipped test file and
    /// `source_rows` counts the training file only.
    pub predefined_test: bool,
    pub train_unlabeled: Vec<usize>,
    pub pseudo_val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    /// Training rows: the unlabeled split and the pseudo-validation split.
    pub fn train_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.train_unlabeled.iter().chain(&self.pseudo_val).copied().collect();
        rows.sort_unstable();
        rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    /// Meta-training input; labels removed.
    pub train_unlabeled: EncodedTable,
    /// Held out from meta-training for pseudo-validation; labels removed.
    pub pseudo_val: EncodedTable,
    pub test: EncodedTable,
    /// All training rows with labels, used only to draw few-shot sets.
    pub labeled_pool: EncodedTable,
    pub manifest: SplitManifest,
}

fn round_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

fn carve(train: &EncodedTable, mut train_rows: Vec<usize>, rng: &mut seed::Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = round_count(train_rows.len(), PSEUDO_VAL_FRACTION);
    if n_val == 0 || n_val >= train_rows.len() {
        return Err(Error::Split {
            rows: train.rows(),
            message: format!("{} training rows cannot yield a non-empty pseudo-validation split", train_rows.len()),
        });
    }
    train_rows.shuffle(rng);
    let mut val = train_rows[..n_val].to_vec();
    let mut unl = train_rows[n_val..].to_vec();
    val.sort_unstable();
    unl.sort_unstable();
    Ok((unl, val))
}

fn assemble(train: &EncodedTable, test: &EncodedTable, manifest: SplitManifest) -> DatasetSplits {
    let train_rows = manifest.train_rows();
    DatasetSplits {
        train_unlabeled: train.select(&manifest.train_unlabeled).without_target(),
        pseudo_val: train.select(&manifest.pseudo_val).without_target(),
        test: test.select(&manifest.test),
        labeled_pool: train.select(&train_rows),
        manifest,
    }
}

/// 80/20 train/test split, then 20% of the training rows carved out for
/// pseudo-validation. Deterministic under `seed`.
pub fn make_splits(table: &EncodedTable, seed: u64) -> Result<DatasetSplits> {
    let n = table.rows();
    let n_test = round_count(n, TEST_FRACTION);
    if n_test == 0 || n_test >= n {
        return Err(Error::Split {
            rows: n,
            message: "cannot form a non-empty test split".into(),
        });
    }
    let mut rng = seed::derived_rng(seed, &["split".into()]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    test.sort_unstable();
    let train_rows = order[n_test..].to_vec();
    let (train_unlabeled, pseudo_val) = carve(table, train_rows, &mut rng)?;
    let manifest = SplitManifest {
        seed,
        source_rows: n,
        predefined_test: false,
        train_unlabeled,
        pseudo_val,
        test,
    };
    Ok(assemble(table, table, manifest))
}

/// Honors a dataset's shipped train/test split; only the pseudo-validation
/// carve-out of the training rows is random.
pub fn make_splits_predefined(train: &EncodedTable, test: &EncodedTable, seed: u64) -> Result<DatasetSplits> {
    if train.dims() != test.dims() {
        return Err(Error::Shape(format!(
            "train has {} encoded columns, test has {}",
            train.dims(),
            test.dims()
        )));
    }
    if test.rows() == 0 {
        return Err(Error::Split {
            rows: train.rows(),
            message: "predefined test file is empty".into(),
        });
    }
    let mut rng = seed::derived_rng(seed, &["split".into()]);
    let (train_unlabeled, pseudo_val) = carve(train, (0..train.rows()).collect(), &mut rng)?;
    let manifest = SplitManifest {
        seed,
        source_rows: train.rows(),
        predefined_test: true,
        train_unlabeled,
        pseudo_val,
        test: (0..test.rows()).collect(),
    };
    Ok(assemble(train, test, manifest))
}

impl DatasetSplits {
    /// Fits scaling statistics on the training rows and applies them to
    /// every split.
    pub fn scale(&self, mode: ScalingMode) -> Result<(DatasetSplits, ScalerStats)> {
        let stats = ScalerStats::fit(&self.labeled_pool, mode)?;
        let scaled = DatasetSplits {
            train_unlabeled: stats.apply(&self.train_unlabeled)?,
            pseudo_val: stats.apply(&self.pseudo_val)?,
            test: stats.apply(&self.test)?,
            labeled_pool: stats.apply(&self.labeled_pool)?,
            manifest: self.manifest.clone(),
        };
        Ok((scaled, stats))
    }

    pub fn dims(&self) -> usize {
        self.train_unlabeled.dims()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labeled_pool.class_labels().map(|(_, c)| c)
    }
}

/// A few-shot labeled set, grouped by class (classification) or by target
/// quantile bin (regression).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Array2<f64>,
    pub target: Target,
    /// Row indices into the pool the set was drawn from.
    pub rows: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn draw_groups(pool: &EncodedTable, groups: &[Vec<usize>], per_group: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut rows = Vec::with_capacity(groups.len() * per_group);
    for members in groups {
        let picked = index::sample(&mut rng, members.len(), per_group);
        rows.extend(picked.into_iter().map(|i| members[i]));
    }
    debug_assert!(rows.iter().all(|&r| r < pool.rows()));
    rows
}

/// Exactly `shots_per_class` rows per class, without replacement.
pub fn sample_labeled(pool: &EncodedTable, shots_per_class: usize, seed: u64) -> Result<LabeledSet> {
    let (labels, n_classes) = pool
        .class_labels()
        .ok_or_else(|| Error::InvalidArgument("labeled pool has no class labels".into()))?;
    if shots_per_class == 0 {
        return Err(Error::InvalidArgument("shots per class must be at least 1".into()));
    }
    let mut groups = vec![Vec::new(); n_classes];
    for (row, &c) in labels.iter().enumerate() {
        groups[c].push(row);
    }
    for (class, members) in groups.iter().enumerate() {
        if members.len() < shots_per_class {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                required: shots_per_class,
            });
        }
    }
    let rows = draw_groups(pool, &groups, shots_per_class, seed);
    let selected = pool.select(&rows);
    Ok(LabeledSet {
        x: selected.values,
        target: selected.target.expect("pool has labels"),
        rows,
    })
}

/// Regression analogue of [`sample_labeled`]: pool rows are split into
/// `bins` equal-frequency bins by target value and `shots` rows are drawn
/// from each bin.
pub fn sample_labeled_regression(pool: &EncodedTable, shots: usize, bins: usize, seed: u64) -> Result<LabeledSet> {
    let values = match &pool.target {
        Some(Target::Real(v)) => v,
        _ => return Err(Error::InvalidArgument("labeled pool has no real-valued targets".into())),
    };
    if shots == 0 || bins == 0 {
        return Err(Error::InvalidArgument("shots and bins must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n = order.len();
    let groups: Vec<Vec<usize>> = (0..bins)
        .map(|b| {
            let mut g = order[b * n / bins..(b + 1) * n / bins].to_vec();
            g.sort_unstable();
            g
        })
        .collect();
    for (class, members) in groups.iter().enumerate() {
        if members.len() < shots {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                required: shots,
            });
        }
    }
    let rows = draw_groups(pool, &groups, shots, seed);
    let selected = pool.select(&rows);
    Ok(LabeledSet {
        x: selected.values,
        target: selected.target.expect("pool has targets"),
        rows,
    })
}
