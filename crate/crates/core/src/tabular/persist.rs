//! On-disk layout of a prepared dataset directory:
//!
//! ```text
//! train_unlabeled.csv   encoded + scaled features, no target
//! pseudo_val.csv        encoded + scaled features, no target
//! test.csv              features + `target` column
//! labeled_pool.csv      features + `target` column
//! meta.json             feature list, task kind, class count
//! split_manifest.txt    seed and row indices of every split
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a load after a
//! save reproduces every value exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetSplits, EncodedTable, Feature, SplitManifest, Target, TargetTask};
use crate::error::{Error, Result};

pub const TRAIN_UNLABELED: &str = "train_unlabeled.csv";
pub const PSEUDO_VAL: &str = "pseudo_val.csv";
pub const TEST: &str = "test.csv";
pub const LABELED_POOL: &str = "labeled_pool.csv";
pub const META: &str = "meta.json";
pub const SPLIT_MANIFEST: &str = "split_manifest.txt";
/// Every file `DatasetSplits::save` writes.
pub const SPLIT_FILES: [&str; 6] = [TRAIN_UNLABELED, PSEUDO_VAL, TEST, LABELED_POOL, META, SPLIT_MANIFEST];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsMeta {
    pub task: TargetTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    pub features: Vec<Feature>,
}

fn write_table(path: &Path, table: &EncodedTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header: Vec<&str> = table.features.iter().map(|f| f.name.as_str()).collect();
    if table.target.is_some() {
        header.push("target");
    }
    w.write_record(&header).map_err(csv_err)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (i, row) in table.values.rows().into_iter().enumerate() {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        match &table.target {
            Some(Target::Class { labels, .. }) => record.push(labels[i].to_string()),
            Some(Target::Real(v)) => record.push(v[i].to_string()),
            None => {}
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path, meta: &SplitsMeta, labeled: bool) -> Result<EncodedTable> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    let d = meta.features.len();
    let width = d + usize::from(labeled);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() != width {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: format!("expected {width} columns, found {}", header.len()),
        });
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut reals = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (j, cell) in rec.iter().enumerate() {
            let bad = |message: String| Error::Load {
                path: path.to_path_buf(),
                row: i + 1,
                column: header.get(j).unwrap_or("?").to_string(),
                message,
            };
            if j < d {
                values.push(cell.parse::<f64>().map_err(|e| bad(e.to_string()))?);
            } else if meta.task == TargetTask::Classification {
                labels.push(cell.parse::<usize>().map_err(|e| bad(e.to_string()))?);
            } else {
                reals.push(cell.parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
        }
    }
    let n = values.len() / d.max(1);
    let values = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    let target = labeled.then(|| match meta.task {
        TargetTask::Classification => Target::Class {
            labels,
            n_classes: meta.n_classes.unwrap_or(0),
        },
        TargetTask::Regression => Target::Real(reals),
    });
    Ok(EncodedTable {
        values,
        features: meta.features.clone(),
        target,
    })
}

fn join(rows: &[usize]) -> String {
    let mut s = String::with_capacity(rows.len() * 5);
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{r}");
    }
    s
}

impl SplitManifest {
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\nsource_rows = {}\npredefined_test = {}\ntrain_unlabeled = {}\npseudo_val = {}\ntest = {}\n",
            self.seed,
            self.source_rows,
            self.predefined_test,
            join(&self.train_unlabeled),
            join(&self.pseudo_val),
            join(&self.test)
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = SplitManifest {
            seed: 0,
            source_rows: 0,
            predefined_test: false,
            train_unlabeled: Vec::new(),
            pseudo_val: Vec::new(),
            test: Vec::new(),
        };
        let bad = |line: &str| Error::Serialize(format!("bad split manifest line '{line}'"));
        let rows = |v: &str, line: &str| -> Result<Vec<usize>> {
            v.split_whitespace().map(|t| t.parse().map_err(|_| bad(line))).collect()
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            let v = v.trim();
            match k.trim() {
                "seed" => m.seed = v.parse().map_err(|_| bad(line))?,
                "source_rows" => m.source_rows = v.parse().map_err(|_| bad(line))?,
                "predefined_test" => m.predefined_test = v.parse().map_err(|_| bad(line))?,
                "train_unlabeled" => m.train_unlabeled = rows(v, line)?,
                "pseudo_val" => m.pseudo_val = rows(v, line)?,
                "test" => m.test = rows(v, line)?,
                _ => return Err(bad(line)),
            }
        }
        Ok(m)
    }
}

impl DatasetSplits {
    pub fn meta(&self) -> SplitsMeta {
        let (task, n_classes) = match &self.labeled_pool.target {
            Some(Target::Real(_)) => (TargetTask::Regression, None),
            Some(Target::Class { n_classes, .. }) => (TargetTask::Classification, Some(*n_classes)),
            None => (TargetTask::Classification, None),
        };
        SplitsMeta {
            task,
            n_classes,
            features: self.labeled_pool.features.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_table(&dir.join(TRAIN_UNLABELED), &self.train_unlabeled)?;
        write_table(&dir.join(PSEUDO_VAL), &self.pseudo_val)?;
        write_table(&dir.join(TEST), &self.test)?;
        write_table(&dir.join(LABELED_POOL), &self.labeled_pool)?;
        let meta = serde_json::to_string_pretty(&self.meta()).map_err(|e| Error::Serialize(e.to_string()))?;
        std::fs::write(dir.join(META), meta + "\n").map_err(|e| Error::io(dir.join(META), e))?;
        std::fs::write(dir.join(SPLIT_MANIFEST), self.manifest.to_text())
            .map_err(|e| Error::io(dir.join(SPLIT_MANIFEST), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "splits directory not found"),
            ));
        }
        let meta_path = dir.join(META);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: SplitsMeta = serde_json::from_str(&text).map_err(|e| Error::Serialize(e.to_string()))?;
        let mpath = dir.join(SPLIT_MANIFEST);
        let manifest =
            SplitManifest::from_text(&std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
        Ok(DatasetSplits {
            train_unlabeled: read_table(&dir.join(TRAIN_UNLABELED), &meta, false)?,
            pseudo_val: read_table(&dir.join(PSEUDO_VAL), &meta, false)?,
            test: read_table(&dir.join(TEST), &meta, true)?,
            labeled_pool: read_table(&dir.join(LABELED_POOL), &meta, true)?,
            manifest,
        })
    }
}
