//! Adaptation of a trained encoder to real few-shot labeled sets, and the
//! multi-seed evaluation protocol with its result files.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protonet::{self, Embedding, Identity};
use crate::stats;
use crate::tabular::{sample_labeled, sample_labeled_regression, DatasetSplits, LabeledSet, Target};

fn class_labels(set: &LabeledSet) -> Result<(&[usize], usize)> {
    match &set.target {
        Target::Class { labels, n_classes } => Ok((labels, *n_classes)),
        Target::Real(_) => Err(Error::InvalidArgument("labeled set has real-valued targets".into())),
    }
}

fn real_targets(set: &LabeledSet) -> Result<&[f64]> {
    match &set.target {
        Target::Real(v) => Ok(v),
        Target::Class { .. } => Err(Error::InvalidArgument("labeled set has class targets".into())),
    }
}

/// Prototype classifier on top of `embedding`, built from `labeled`.
/// Ties go to the lowest class index.
pub fn adapt_and_classify(embedding: &dyn Embedding, labeled: &LabeledSet, x_test: ArrayView2<f64>) -> Result<Vec<usize>> {
    let (labels, n_classes) = class_labels(labeled)?;
    let protos = protonet::compute_prototypes(embedding.embed(labeled.x.view())?.view(), labels, n_classes)?;
    let probs = protonet::classify(embedding.embed(x_test)?.view(), &protos)?;
    Ok(protonet::argmax_rows(&probs))
}

/// Nearest prototype in raw feature space.
pub fn raw_prototype_baseline(labeled: &LabeledSet, x_test: ArrayView2<f64>) -> Result<Vec<usize>> {
    adapt_and_classify(&Identity, labeled, x_test)
}

/// Unweighted mean target of the `k` nearest labeled rows in embedding
/// space; equal distances go to the lower labeled row.
pub fn knn_regress(embedding: &dyn Embedding, labeled: &LabeledSet, x_test: ArrayView2<f64>, k: usize) -> Result<Vec<f64>> {
    let targets = real_targets(labeled)?;
    if k == 0 || k > labeled.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={} (labeled rows)",
            labeled.len()
        )));
    }
    let z_l = embedding.embed(labeled.x.view())?;
    let z_t = embedding.embed(x_test)?;
    let d2 = protonet::squared_distances(z_t.view(), z_l.view());
    Ok(d2
        .rows()
        .into_iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            order[..k].iter().map(|&i| targets[i]).sum::<f64>() / k as f64
        })
        .collect())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64
}

fn with_seed<T>(seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Seed { seed, source: Box::new(e) })
}

/// Test accuracy for every seed: seed `s` draws the labeled set with
/// `sample_labeled(pool, shots, s)` and the whole test split is scored.
pub fn classification_accuracies(
    splits: &DatasetSplits,
    embedding: &dyn Embedding,
    shots: usize,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    let (truth, _) = splits
        .test
        .class_labels()
        .ok_or_else(|| Error::InvalidArgument("test split has no class labels".into()))?;
    // the test embedding does not depend on the seed
    let z_test = embedding.embed(splits.test.values.view())?;
    seeds
        .par_iter()
        .map(|&s| {
            with_seed(s, (|| {
                let labeled = sample_labeled(&splits.labeled_pool, shots, s)?;
                let (labels, n_classes) = class_labels(&labeled)?;
                let protos =
                    protonet::compute_prototypes(embedding.embed(labeled.x.view())?.view(), labels, n_classes)?;
                let pred = protonet::argmax_rows(&protonet::classify(z_test.view(), &protos)?);
                Ok(accuracy(&pred, truth))
            })())
        })
        .collect()
}

/// Test MSE for every seed, with `shots` labeled rows drawn per target
/// quantile bin.
pub fn regression_mses(
    splits: &DatasetSplits,
    embedding: &dyn Embedding,
    shots: usize,
    bins: usize,
    k: usize,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    let truth = match &splits.test.target {
        Some(Target::Real(v)) => v,
        _ => return Err(Error::InvalidArgument("test split has no real-valued targets".into())),
    };
    seeds
        .par_iter()
        .map(|&s| {
            with_seed(s, (|| {
                let labeled = sample_labeled_regression(&splits.labeled_pool, shots, bins, s)?;
                let pred = knn_regress(embedding, &labeled, splits.test.values.view(), k)?;
                Ok(mse(&pred, truth))
            })())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mse,
}

/// Summary of one (dataset, method, shots) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub method: String,
    pub metric: Metric,
    pub shots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub n_seeds: usize,
    pub mean: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// One line of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ResultRecord {
    Seed { method: String, seed: u64, value: f64 },
    Aggregate(Aggregate),
}

/// Where a result came from, for the aggregate record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub dataset: String,
    pub config_hash: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub method: String,
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub provenance: Provenance,
}

impl FewShotResult {
    pub fn new(method: &str, shots: usize, seeds: Vec<u64>, accuracies: Vec<f64>, provenance: Provenance) -> Self {
        let (mean, std) = stats::mean_std(&accuracies);
        Self {
            method: method.into(),
            shots,
            seeds,
            accuracies,
            mean,
            std,
            provenance,
        }
    }

    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn aggregate(&self) -> Aggregate {
        Aggregate {
            dataset: self.provenance.dataset.clone(),
            method: self.method.clone(),
            metric: Metric::Accuracy,
            shots: self.shots,
            k: None,
            n_seeds: self.n_seeds(),
            mean: self.mean,
            std: self.std,
            config_hash: self.provenance.config_hash.clone(),
            checkpoint: self.provenance.checkpoint.clone(),
        }
    }

    pub fn records(&self) -> Vec<ResultRecord> {
        seed_records(&self.method, &self.seeds, &self.accuracies, self.aggregate())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub method: String,
    pub shots: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub mses: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub provenance: Provenance,
}

impl RegressionResult {
    pub fn new(method: &str, shots: usize, k: usize, seeds: Vec<u64>, mses: Vec<f64>, provenance: Provenance) -> Self {
        let (mean, std) = stats::mean_std(&mses);
        Self {
            method: method.into(),
            shots,
            k,
            seeds,
            mses,
            mean,
            std,
            provenance,
        }
    }

    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn aggregate(&self) -> Aggregate {
        Aggregate {
            dataset: self.provenance.dataset.clone(),
            method: self.method.clone(),
            metric: Metric::Mse,
            shots: self.shots,
            k: Some(self.k),
            n_seeds: self.n_seeds(),
            mean: self.mean,
            std: self.std,
            config_hash: self.provenance.config_hash.clone(),
            checkpoint: self.provenance.checkpoint.clone(),
        }
    }

    pub fn records(&self) -> Vec<ResultRecord> {
        seed_records(&self.method, &self.seeds, &self.mses, self.aggregate())
    }
}

fn seed_records(method: &str, seeds: &[u64], values: &[f64], agg: Aggregate) -> Vec<ResultRecord> {
    seeds
        .iter()
        .zip(values)
        .map(|(&seed, &value)| ResultRecord::Seed {
            method: method.into(),
            seed,
            value,
        })
        .chain(std::iter::once(ResultRecord::Aggregate(agg)))
        .collect()
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Serialize(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Serialize(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn column_label(a: &Aggregate) -> String {
    match a.k {
        Some(k) => format!("{} ({}-shot, k={k})", a.method, a.shots),
        None => format!("{} ({}-shot)", a.method, a.shots),
    }
}

fn cell(a: &Aggregate) -> String {
    match a.metric {
        Metric::Accuracy => format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * a.std),
        Metric::Mse => format!("{:.4}", a.mean),
    }
}

/// Datasets as rows, (method, shots) as columns, in first-seen order.
/// Accuracies are shown in percent with their std; MSEs as plain means.
/// A later aggregate for the same cell replaces an earlier one.
pub fn markdown_table(aggregates: &[Aggregate]) -> String {
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), String> = BTreeMap::new();
    for a in aggregates {
        let col = column_label(a);
        let r = rows.iter().position(|d| *d == a.dataset).unwrap_or_else(|| {
            rows.push(a.dataset.clone());
            rows.len() - 1
        });
        let c = cols.iter().position(|x| *x == col).unwrap_or_else(|| {
            cols.push(col);
            cols.len() - 1
        });
        cells.insert((r, c), cell(a));
    }
    let mut out = format!("| dataset | {} |\n", cols.join(" | "));
    out.push_str(&format!("|---|{}\n", "---|".repeat(cols.len())));
    for (r, name) in rows.iter().enumerate() {
        let line: Vec<&str> = (0..cols.len())
            .map(|c| cells.get(&(r, c)).map_or("–", String::as_str))
            .collect();
        out.push_str(&format!("| {name} | {} |\n", line.join(" | ")));
    }
    out
}
