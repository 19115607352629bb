//! Self-generated tasks from unlabeled rows.
//!
//! A task picks a random subset of columns, clusters the rows on those
//! columns with k-means to get pseudo-labels, then corrupts the same columns
//! in the inputs so the label cannot be read off them. Episodes (disjoint
//! support and query sets) are sampled from a task for meta-training.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig};
use crate::seed::Rng;

/// Attempts allowed to produce a task with at least two usable
/// pseudo-classes before giving up.
pub const MAX_REGENERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMask {
    bits: Vec<bool>,
    ratio: f64,
}

impl FeatureMask {
    /// Selects every column.
    pub fn full(d: usize) -> Self {
        Self {
            bits: vec![true; d],
            ratio: 1.0,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let ratio = bits.iter().filter(|&&b| b).count() as f64 / bits.len().max(1) as f64;
        Self { bits, ratio }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// The sampled masking ratio p.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Indices of the masked (selected) columns, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// Samples p ~ U(r1, r2) and a mask with exactly ⌊d·p⌋ columns set.
pub fn sample_mask(d: usize, r1: f64, r2: f64, rng: &mut Rng) -> Result<FeatureMask> {
    if d < 2 {
        return Err(Error::Mask(format!("need at least 2 columns, got {d}")));
    }
    if !(0.0 < r1 && r1 < r2 && r2 < 1.0) {
        return Err(Error::Mask(format!("need 0 < r1 < r2 < 1, got r1={r1}, r2={r2}")));
    }
    if (d as f64 * r1).floor() < 1.0 {
        return Err(Error::Mask(format!("floor({d} * {r1}) = 0: no columns selectable")));
    }
    let ratio = rng.random_range(r1..r2);
    let count = (d as f64 * ratio).floor() as usize;
    let mut bits = vec![false; d];
    for i in index::sample(rng, d, count) {
        bits[i] = true;
    }
    Ok(FeatureMask { bits, ratio })
}

/// How masked columns are replaced in task inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MaskStrategy {
    /// Each masked cell is redrawn from its column's empirical values.
    #[default]
    MarginalDistribution,
    Zero,
    /// Adds N(0, sigma²) noise to masked cells.
    Gaussian { sigma: f64 },
    /// Inputs are left clean.
    None,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskStrategy::MarginalDistribution => f.write_str("marginal"),
            MaskStrategy::Zero => f.write_str("zero"),
            MaskStrategy::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            MaskStrategy::None => f.write_str("none"),
        }
    }
}

impl From<MaskStrategy> for String {
    fn from(s: MaskStrategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for MaskStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" | "marginal_distribution" => Ok(MaskStrategy::MarginalDistribution),
            "zero" => Ok(MaskStrategy::Zero),
            "none" => Ok(MaskStrategy::None),
            "gaussian" => Ok(MaskStrategy::Gaussian { sigma: 0.1 }),
            other => match other.strip_prefix("gaussian:").map(str::parse::<f64>) {
                Some(Ok(sigma)) if sigma >= 0.0 && sigma.is_finite() => Ok(MaskStrategy::Gaussian { sigma }),
                _ => Err(Error::InvalidArgument(format!(
                    "unknown mask strategy '{other}' (marginal, zero, gaussian[:sigma], none)"
                ))),
            },
        }
    }
}

/// Replaces the masked columns of `clean` according to `strategy`.
/// Unmasked columns are copied verbatim.
pub fn corrupt(clean: ArrayView2<f64>, mask: &FeatureMask, strategy: MaskStrategy, rng: &mut Rng) -> Array2<f64> {
    assert_eq!(mask.len(), clean.ncols(), "mask length must equal column count");
    let mut out = clean.to_owned();
    let n = clean.nrows();
    let cols = mask.selected();
    match strategy {
        MaskStrategy::None => {}
        MaskStrategy::Zero => {
            for &j in &cols {
                out.column_mut(j).fill(0.0);
            }
        }
        MaskStrategy::MarginalDistribution => {
            for i in 0..n {
                for &j in &cols {
                    out[[i, j]] = clean[[rng.random_range(0..n), j]];
                }
            }
        }
        MaskStrategy::Gaussian { sigma } => {
            let noise = Normal::new(0.0, sigma).expect("sigma validated non-negative");
            for i in 0..n {
                for &j in &cols {
                    out[[i, j]] += noise.sample(rng);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StuntTask {
    /// Corrupted rows, N_u × d.
    pub inputs: Array2<f64>,
    pub pseudo_labels: Vec<usize>,
    pub way: usize,
    pub mask: FeatureMask,
    /// Centroids in the squeezed (selected-column) space.
    pub centroids: Array2<f64>,
}

impl StuntTask {
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.way];
        for (row, &c) in self.pseudo_labels.iter().enumerate() {
            members[c].push(row);
        }
        members
    }

    /// Writes inputs plus a `pseudo_label` column, for inspection.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut header: Vec<String> = (0..self.inputs.ncols())
            .map(|j| if self.mask.bits[j] { format!("x{j}*") } else { format!("x{j}") })
            .collect();
        header.push("pseudo_label".into());
        let err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        w.write_record(&header).map_err(err)?;
        for (row, &label) in self.inputs.rows().into_iter().zip(&self.pseudo_labels) {
            let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
            rec.push(label.to_string());
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub way: usize,
    pub r1: f64,
    pub r2: f64,
    pub strategy: MaskStrategy,
    pub kmeans: KMeansConfig,
}

/// Builds a task from a fixed mask: cluster the clean selected columns,
/// then corrupt those columns in the full-width rows.
pub fn generate_task_with_mask(
    unlabeled: ArrayView2<f64>,
    mask: FeatureMask,
    way: usize,
    strategy: MaskStrategy,
    kmeans_config: KMeansConfig,
    rng: &mut Rng,
) -> Result<StuntTask> {
    let squeezed = unlabeled.select(Axis(1), &mask.selected());
    let clustering = kmeans::kmeans(squeezed.view(), way, kmeans_config, rng)?;
    let inputs = corrupt(unlabeled, &mask, strategy, rng);
    Ok(StuntTask {
        inputs,
        pseudo_labels: clustering.assignments,
        way,
        mask,
        centroids: clustering.centroids,
    })
}

/// One full-batch task: every unlabeled row participates.
pub fn generate_stunt_task(unlabeled: ArrayView2<f64>, config: &TaskConfig, rng: &mut Rng) -> Result<StuntTask> {
    if unlabeled.nrows() < config.way {
        return Err(Error::TooFewPoints {
            n: unlabeled.nrows(),
            k: config.way,
        });
    }
    let mask = sample_mask(unlabeled.ncols(), config.r1, config.r2, rng)?;
    generate_task_with_mask(unlabeled, mask, config.way, config.strategy, config.kmeans, rng)
}

/// Pseudo-validation task: all columns selected, clean inputs, k = C.
pub fn build_pseudo_val_task(
    val: ArrayView2<f64>,
    n_classes: usize,
    kmeans_config: KMeansConfig,
    rng: &mut Rng,
) -> Result<StuntTask> {
    let mask = FeatureMask::full(val.ncols());
    generate_task_with_mask(val, mask, n_classes, MaskStrategy::None, kmeans_config, rng)
}

/// Support and query sets drawn from one task. Rows are grouped by class;
/// labels are episode-local (0..n_way) in the order of `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Array2<f64>,
    pub support_labels: Vec<usize>,
    pub query: Array2<f64>,
    pub query_labels: Vec<usize>,
    /// Task row indices of the support and query samples.
    pub support_rows: Vec<usize>,
    pub query_rows: Vec<usize>,
    /// Task pseudo-class of every episode class.
    pub classes: Vec<usize>,
    pub shot: usize,
    pub query_per_class: usize,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    /// Builds an episode directly from matrices (no task); used for
    /// adaptation-style evaluation and tests.
    pub fn from_parts(
        support: Array2<f64>,
        support_labels: Vec<usize>,
        query: Array2<f64>,
        query_labels: Vec<usize>,
    ) -> Self {
        let way = support_labels.iter().chain(&query_labels).max().map_or(0, |m| m + 1);
        let shot = support_labels.len() / way.max(1);
        let query_per_class = query_labels.len() / way.max(1);
        Self {
            support_rows: (0..support.nrows()).collect(),
            query_rows: (support.nrows()..support.nrows() + query.nrows()).collect(),
            support,
            support_labels,
            query,
            query_labels,
            classes: (0..way).collect(),
            shot,
            query_per_class,
        }
    }
}

/// Draws `shot + query_per_class` rows without replacement from every
/// pseudo-class large enough; smaller classes are left out. Fails when fewer
/// than two classes qualify.
pub fn sample_episode(task: &StuntTask, shot: usize, query_per_class: usize, rng: &mut Rng) -> Result<Episode> {
    if shot == 0 || query_per_class == 0 {
        return Err(Error::InvalidArgument("shot and query must be at least 1".into()));
    }
    let need = shot + query_per_class;
    let eligible: Vec<(usize, Vec<usize>)> = task
        .class_members()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.len() >= need)
        .collect();
    if eligible.len() < 2 {
        return Err(Error::TooFewEligibleClasses {
            eligible: eligible.len(),
            required: need,
        });
    }
    let mut support_rows = Vec::with_capacity(eligible.len() * shot);
    let mut query_rows = Vec::with_capacity(eligible.len() * query_per_class);
    let mut support_labels = Vec::with_capacity(support_rows.capacity());
    let mut query_labels = Vec::with_capacity(query_rows.capacity());
    for (local, (_, members)) in eligible.iter().enumerate() {
        let picked = index::sample(rng, members.len(), need).into_vec();
        for (n, &i) in picked.iter().enumerate() {
            if n < shot {
                support_rows.push(members[i]);
                support_labels.push(local);
            } else {
                query_rows.push(members[i]);
                query_labels.push(local);
            }
        }
    }
    Ok(Episode {
        support: task.inputs.select(Axis(0), &support_rows),
        query: task.inputs.select(Axis(0), &query_rows),
        support_labels,
        query_labels,
        support_rows,
        query_rows,
        classes: eligible.into_iter().map(|(c, _)| c).collect(),
        shot,
        query_per_class,
    })
}

/// Generates a task and samples one episode from it, regenerating the task
/// with a fresh mask when too few pseudo-classes are large enough.
pub fn sample_task_episode(
    unlabeled: ArrayView2<f64>,
    config: &TaskConfig,
    shot: usize,
    query_per_class: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    let mut last = None;
    for _ in 0..MAX_REGENERATIONS {
        let task = generate_stunt_task(unlabeled, config, rng)?;
        match sample_episode(&task, shot, query_per_class, rng) {
            Ok(ep) => return Ok(ep),
            Err(e @ Error::TooFewEligibleClasses { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Regeneration {
        attempts: MAX_REGENERATIONS,
        last: Box::new(last.expect("at least one attempt")),
    })
}
