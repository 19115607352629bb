//! Episodic meta-training over self-generated tasks, pseudo-validation and
//! the hyperparameter grid search built on it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kmeans::KMeansConfig;
use crate::protonet::{self, adam_step, AdamState, Embedding, EncoderParams};
use crate::seed::{self, Rng};
use crate::tasks::{self, Episode, MaskStrategy, StuntTask, TaskConfig, MAX_REGENERATIONS};

/// Everything that determines a training run. Serialized as flat TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub shot: usize,
    pub query: usize,
    pub way: usize,
    pub r1: f64,
    pub r2: f64,
    pub strategy: MaskStrategy,
    pub meta_batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub embed: usize,
    pub total_steps: usize,
    pub val_interval: usize,
    pub val_episodes: usize,
    pub val_query: usize,
    pub seed: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shot: 1,
            query: 15,
            way: 5,
            r1: 0.2,
            r2: 0.5,
            strategy: MaskStrategy::MarginalDistribution,
            meta_batch: 4,
            lr: 1e-3,
            weight_decay: 1e-4,
            hidden: 1024,
            embed: 1024,
            total_steps: 10_000,
            val_interval: 200,
            val_episodes: 100,
            val_query: 15,
            seed: 0,
            kmeans_max_iter: KMeansConfig::default().max_iter,
            kmeans_tol: KMeansConfig::default().tol,
        }
    }
}

/// Model size and step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// H = D = 1024, 10K steps.
    #[default]
    Full,
    /// H = D = 256, 2K steps.
    Fast,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "fast" => Ok(Profile::Fast),
            other => Err(Error::InvalidArgument(format!("unknown profile '{other}' (fast, full)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Fast => "fast",
        })
    }
}

/// Per-dataset (shot, query, way) found by pseudo-validation.
const PRESETS: &[(&str, usize, usize, usize)] = &[
    ("income", 1, 15, 10),
    ("cmc", 1, 5, 3),
    ("karhunen", 1, 15, 20),
    ("optdigit", 1, 15, 20),
    ("diabetes", 1, 15, 5),
    ("semeion", 1, 15, 20),
    ("pixel", 1, 15, 10),
    ("dna", 1, 15, 10),
];

impl TrainConfig {
    /// Defaults with the dataset's (shot, query, way), if it is known.
    pub fn for_dataset(name: &str) -> Option<Self> {
        PRESETS.iter().find(|p| p.0 == name).map(|&(_, shot, query, way)| Self {
            shot,
            query,
            way,
            ..Self::default()
        })
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|p| p.0)
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        let (width, steps) = match profile {
            Profile::Full => (1024, 10_000),
            Profile::Fast => (256, 2_000),
        };
        self.hidden = width;
        self.embed = width;
        self.total_steps = steps;
        self
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
        }
    }

    pub fn task_config(&self) -> TaskConfig {
        TaskConfig {
            way: self.way,
            r1: self.r1,
            r2: self.r2,
            strategy: self.strategy,
            kmeans: self.kmeans(),
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.shot >= 1, "shot must be >= 1");
        need(self.query >= 1, "query must be >= 1");
        need(self.way >= 2, "way must be >= 2");
        need(
            0.0 < self.r1 && self.r1 < self.r2 && self.r2 < 1.0,
            "need 0 < r1 < r2 < 1",
        );
        need(self.meta_batch >= 1, "meta_batch must be >= 1");
        need(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive and finite");
        need(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay must be non-negative and finite",
        );
        need(self.hidden >= 1, "hidden must be >= 1");
        need(self.embed >= 1, "embed must be >= 1");
        need(self.total_steps >= 1, "total_steps must be >= 1");
        need(self.val_interval >= 1, "val_interval must be >= 1");
        need(self.val_episodes >= 1, "val_episodes must be >= 1");
        need(self.val_query >= 1, "val_query must be >= 1");
        need(self.kmeans_max_iter >= 1, "kmeans_max_iter must be >= 1");
        need(
            self.kmeans_tol >= 0.0 && self.kmeans_tol.is_finite(),
            "kmeans_tol must be non-negative and finite",
        );
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// First 8 bytes (little-endian) of the SHA-256 of the TOML form.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean episode loss over the meta-batch.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_val_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_pseudo_val_acc: Option<f64>,
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Serialize(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Serialize(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest pseudo-validation accuracy; the earliest such step wins ties.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
}

/// Hooks into a running `meta_train`.
pub trait TrainObserver {
    fn on_record(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    fn on_improvement(&mut self, _best: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Seed of task `j` at `step`.
pub fn task_seed(config: &TrainConfig, step: usize, j: usize) -> u64 {
    seed::derive(config.seed, &["task".into(), step.into(), j.into()])
}

/// Seed used by every pseudo-validation call of a run.
pub fn pseudo_val_seed(config: &TrainConfig) -> u64 {
    seed::derive(config.seed, &["pseudo_val".into()])
}

fn task_episode(unlabeled: ArrayView2<f64>, config: &TrainConfig, step: usize, j: usize) -> Result<Episode> {
    let s = task_seed(config, step, j);
    let mut rng = seed::rng(s);
    tasks::sample_task_episode(unlabeled, &config.task_config(), config.shot, config.query, &mut rng)
        .map_err(|e| Error::Seed { seed: s, source: Box::new(e) })
}

/// The meta-batch episodes of one step (one fresh task each).
pub fn step_episodes(unlabeled: ArrayView2<f64>, config: &TrainConfig, step: usize) -> Result<Vec<Episode>> {
    (0..config.meta_batch)
        .into_par_iter()
        .map(|j| task_episode(unlabeled, config, step, j))
        .collect()
}

/// Mean loss and mean gradient over the meta-batch of `step`. Tasks are
/// evaluated concurrently; gradients are summed in task order.
pub fn meta_gradient(
    params: &EncoderParams,
    unlabeled: ArrayView2<f64>,
    config: &TrainConfig,
    step: usize,
) -> Result<(f64, EncoderParams)> {
    let parts: Vec<(f64, EncoderParams)> = (0..config.meta_batch)
        .into_par_iter()
        .map(|j| {
            let ep = task_episode(unlabeled, config, step, j)?;
            protonet::episode_loss_and_grad(params, &ep)
        })
        .collect::<Result<_>>()?;
    Ok(average(parts))
}

fn average(parts: Vec<(f64, EncoderParams)>) -> (f64, EncoderParams) {
    let m = parts.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("meta_batch >= 1");
    for (l, g) in iter {
        loss += l;
        grad.add_assign(&g);
    }
    grad.scale(1.0 / m);
    (loss / m, grad)
}

fn check_val_rows(val_rows: usize, n_classes: usize, query: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "pseudo-validation needs at least 2 classes, got {n_classes}"
        )));
    }
    let need = n_classes * (1 + query);
    if val_rows < need {
        return Err(Error::InvalidArgument(format!(
            "pseudo-validation needs at least {need} rows ({n_classes} classes x (1 + {query})), got {val_rows}"
        )));
    }
    Ok(())
}

/// Mean 1-shot ProtoNet accuracy on a clustering-labelled task built from
/// `val` (all columns, clean inputs, k = `n_classes`).
///
/// If k-means leaves fewer than two clusters with `1 + query` members, the
/// task is rebuilt from the continuing RNG stream (up to the regeneration
/// cap). Validation rows are embedded once and episodes index into them.
pub fn pseudo_validate(
    embedding: &dyn Embedding,
    val: ArrayView2<f64>,
    n_classes: usize,
    episodes: usize,
    query: usize,
    kmeans: KMeansConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("pseudo-validation needs at least 1 episode".into()));
    }
    check_val_rows(val.nrows(), n_classes, query)?;
    let z = embedding.embed(val)?;
    let mut last = None;
    for _ in 0..MAX_REGENERATIONS {
        let task = tasks::build_pseudo_val_task(val, n_classes, kmeans, rng)?;
        let embedded = StuntTask {
            inputs: z.clone(),
            ..task
        };
        match tasks::sample_episode(&embedded, 1, query, rng) {
            Ok(first) => {
                let mut total = episode_accuracy(&first)?;
                for _ in 1..episodes {
                    total += episode_accuracy(&tasks::sample_episode(&embedded, 1, query, rng)?)?;
                }
                return Ok(total / episodes as f64);
            }
            Err(e @ Error::TooFewEligibleClasses { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Regeneration {
        attempts: MAX_REGENERATIONS,
        last: Box::new(last.expect("at least one attempt")),
    })
}

/// Accuracy of an episode whose support and query are already embedded.
fn episode_accuracy(ep: &Episode) -> Result<f64> {
    let protos = protonet::compute_prototypes(ep.support.view(), &ep.support_labels, ep.way())?;
    let pred = protonet::argmax_rows(&protonet::classify(ep.query.view(), &protos)?);
    let hits = pred.iter().zip(&ep.query_labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ep.query_labels.len() as f64)
}

/// Pseudo-validation with the run's fixed settings and seed.
pub fn pseudo_validate_config(
    embedding: &dyn Embedding,
    val: ArrayView2<f64>,
    n_classes: usize,
    config: &TrainConfig,
) -> Result<f64> {
    let mut rng = seed::rng(pseudo_val_seed(config));
    pseudo_validate(
        embedding,
        val,
        n_classes,
        config.val_episodes,
        config.val_query,
        config.kmeans(),
        &mut rng,
    )
}

pub fn meta_train(
    unlabeled: ArrayView2<f64>,
    val: ArrayView2<f64>,
    n_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    meta_train_observed(unlabeled, val, n_classes, config, &mut ())
}

/// Runs `total_steps` Adam steps on meta-batch-averaged episode gradients,
/// pseudo-validating every `val_interval` steps and at the final step.
pub fn meta_train_observed(
    unlabeled: ArrayView2<f64>,
    val: ArrayView2<f64>,
    n_classes: usize,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if unlabeled.nrows() < config.way {
        return Err(Error::TooFewPoints {
            n: unlabeled.nrows(),
            k: config.way,
        });
    }
    if val.ncols() != unlabeled.ncols() {
        return Err(Error::Shape(format!(
            "validation rows have {} columns, unlabeled rows {}",
            val.ncols(),
            unlabeled.ncols()
        )));
    }
    check_val_rows(val.nrows(), n_classes, config.val_query)?;

    let hash = config.hash();
    let mut params = EncoderParams::init(unlabeled.ncols(), config.hidden, config.embed, config.seed)?;
    let mut adam = AdamState::new(&params);
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::with_capacity(config.total_steps);
    let mut last_acc = f64::NAN;

    for step in 1..=config.total_steps {
        let (loss, grad) = meta_gradient(&params, unlabeled, config, step)?;
        adam_step(&mut params, &grad, &mut adam, config.lr, config.weight_decay);
        if !params.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameters diverged at step {step}; lower lr"
            )));
        }

        let mut record = LogRecord {
            step,
            loss,
            pseudo_val_acc: None,
            best_pseudo_val_acc: best.as_ref().map(|b| b.pseudo_val_accuracy),
        };
        if step % config.val_interval == 0 || step == config.total_steps {
            let acc = pseudo_validate_config(&params, val, n_classes, config)?;
            last_acc = acc;
            record.pseudo_val_acc = Some(acc);
            if best.as_ref().is_none_or(|b| acc > b.pseudo_val_accuracy) {
                let ck = Checkpoint {
                    params: params.clone(),
                    step: step as u64,
                    pseudo_val_accuracy: acc,
                    config_hash: hash,
                };
                observer.on_improvement(&ck)?;
                best = Some(ck);
            }
            record.best_pseudo_val_acc = best.as_ref().map(|b| b.pseudo_val_accuracy);
        }
        observer.on_record(&record)?;
        log.push(record);
    }

    Ok(TrainOutcome {
        best: best.expect("final step is always validated"),
        last: Checkpoint {
            params,
            step: config.total_steps as u64,
            pseudo_val_accuracy: last_acc,
            config_hash: hash,
        },
        log,
    })
}

/// Candidate (shot, query) pairs crossed with candidate ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub shot_query: Vec<(usize, usize)>,
    pub way: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub shot: usize,
    pub query: usize,
    pub way: usize,
}

const SEARCH_PAIRS: [(usize, usize); 4] = [(1, 5), (1, 15), (5, 10), (5, 20)];

impl GridSpec {
    /// The published search space for the datasets that have one.
    pub fn for_dataset(name: &str) -> Option<Self> {
        let way = match name {
            "income" => vec![5, 10],
            "cmc" => vec![3],
            "semeion" | "pixel" => vec![10, 20],
            _ => return None,
        };
        Some(Self {
            shot_query: SEARCH_PAIRS.to_vec(),
            way,
        })
    }

    /// Way-major order: all pairs for the first way, then the next.
    pub fn points(&self) -> Vec<GridPoint> {
        self.way
            .iter()
            .flat_map(|&way| self.shot_query.iter().map(move |&(shot, query)| GridPoint { shot, query, way }))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shot_query.is_empty() || self.way.is_empty() {
            return Err(Error::Config(vec!["grid must have at least one (shot, query) pair and one way".into()]));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("grid always serializes")
    }
}

#[derive(Debug)]
pub struct GridResult {
    /// Position in `GridSpec::points()`.
    pub index: usize,
    pub point: GridPoint,
    pub config: TrainConfig,
    /// Training failures are recorded, not propagated.
    pub outcome: std::result::Result<TrainOutcome, String>,
}

impl GridResult {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.best.pseudo_val_accuracy)
    }
}

/// Config of grid point `index`: the base config with the point's
/// (shot, query, way) and a seed derived from the base seed and index.
pub fn grid_config(base: &TrainConfig, point: GridPoint, index: usize) -> TrainConfig {
    TrainConfig {
        shot: point.shot,
        query: point.query,
        way: point.way,
        seed: seed::derive(base.seed, &["grid".into(), index.into()]),
        ..base.clone()
    }
}

/// Trains every grid point and ranks them by best pseudo-validation
/// accuracy, descending; failed points go last. Ties keep grid order.
pub fn grid_search(
    unlabeled: ArrayView2<f64>,
    val: ArrayView2<f64>,
    n_classes: usize,
    grid: &GridSpec,
    base: &TrainConfig,
) -> Result<Vec<GridResult>> {
    grid.validate()?;
    let mut results: Vec<GridResult> = grid
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(index, point)| {
            let config = grid_config(base, point, index);
            let outcome = meta_train(unlabeled, val, n_classes, &config).map_err(|e| e.to_string());
            GridResult {
                index,
                point,
                config,
                outcome,
            }
        })
        .collect();
    results.sort_by(|a, b| {
        let key = |r: &GridResult| r.best_accuracy().unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.index.cmp(&b.index))
    });
    Ok(results)
}
