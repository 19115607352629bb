//! Deterministic synthetic stand-ins shaped like the benchmark tables
//! (column counts, kinds, class balance), for tests and demos when the
//! real CSVs are not available.
//!
//! Every generator follows the same recipe: a hidden low-dimensional latent
//! drives the class (or regression target) and a subset of the columns;
//! the remaining columns are independent nuisance noise. Values are rounded
//! to four decimals so the CSV form round-trips exactly.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tabular::{
    encode, make_splits, make_splits_predefined, Cell, ColumnSchema, DatasetSplits, RawTable, ScalingMode, Schema,
    TargetTask,
};

pub const NAMES: [&str; 4] = ["diabetes", "income", "cmc", "abalone"];

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub name: String,
    pub schema: Schema,
    pub train: RawTable,
    /// Shipped test rows, when the dataset has a predefined split.
    pub test: Option<RawTable>,
}

/// Builds the named stand-in; `None` for unknown names.
pub fn generate(name: &str, seed: u64) -> Option<SynthDataset> {
    let mut rng = seed::derived_rng(seed, &["synth".into(), name.into()]);
    let ds = match name {
        "diabetes" => diabetes(&mut rng),
        "income" => income(&mut rng),
        "cmc" => cmc(&mut rng),
        "abalone" => abalone(&mut rng),
        _ => return None,
    };
    Some(ds)
}

impl SynthDataset {
    pub fn scaling(&self) -> ScalingMode {
        self.schema.scaling.unwrap_or_default()
    }

    /// Unscaled splits, honoring the predefined test rows if present.
    pub fn splits(&self, seed: u64) -> Result<DatasetSplits> {
        let train = encode(&self.train, &self.schema);
        match &self.test {
            Some(test) => make_splits_predefined(&train, &encode(test, &self.schema), seed),
            None => make_splits(&train, seed),
        }
    }

    /// Writes `<name>.csv`, `<name>.schema.toml` and, with a predefined
    /// split, `<name>_test.csv`. Returns (csv path, schema path).
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{}.csv", self.name));
        write_csv(&csv_path, &self.schema, &self.train)?;
        let mut schema = self.schema.clone();
        if let Some(test) = &self.test {
            let test_name = format!("{}_test.csv", self.name);
            write_csv(&dir.join(&test_name), &self.schema, test)?;
            schema.predefined_test = Some(PathBuf::from(test_name));
        }
        let schema_path = dir.join(format!("{}.schema.toml", self.name));
        std::fs::write(&schema_path, schema.to_toml_string()?).map_err(|e| Error::io(&schema_path, e))?;
        Ok((csv_path, schema_path))
    }
}

fn write_csv(path: &Path, schema: &Schema, table: &RawTable) -> Result<()> {
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(schema.columns.iter().map(|c| c.name.as_str())).map_err(err)?;
    for row in &table.rows {
        let rec = row.iter().zip(&schema.columns).map(|(cell, col)| match *cell {
            Cell::Num(v) => v.to_string(),
            Cell::Cat(c) => col.categories[c].clone(),
        });
        w.write_record(rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn normal(rng: &mut Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Draws from softmax(logits).
fn categorical(rng: &mut Rng, logits: &[f64]) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

fn class_index(rng: &mut Rng, priors: &[f64]) -> usize {
    let logits: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
    categorical(rng, &logits)
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// 768 rows, 8 numerical columns, 2 classes (65/35). Five columns load on
/// a class-shifted latent; three are uniform nuisance columns.
fn diabetes(rng: &mut Rng) -> SynthDataset {
    let cols = ["preg", "plas", "pres", "skin", "insu", "mass", "pedi", "age"];
    // (informative loading, offset, scale); loading 0 = nuisance
    let spec: [(f64, f64, f64); 8] = [
        (0.6, 4.0, 3.0),
        (1.0, 120.0, 30.0),
        (0.0, 70.0, 20.0),
        (0.0, 25.0, 15.0),
        (0.0, 100.0, 100.0),
        (0.9, 32.0, 7.0),
        (0.5, 0.45, 0.3),
        (0.8, 33.0, 11.0),
    ];
    let mut columns: Vec<ColumnSchema> = cols.iter().map(|c| ColumnSchema::numerical(*c)).collect();
    columns.push(ColumnSchema::target("class", ["tested_negative", "tested_positive"]));
    let schema = Schema::new(TargetTask::Classification, columns).expect("static schema");

    let rows = (0..768)
        .map(|_| {
            let y = class_index(rng, &[0.65, 0.35]);
            let z = if y == 1 { 0.8 } else { -0.45 } + 0.9 * normal(rng);
            let mut row: Vec<Cell> = spec
                .iter()
                .map(|&(load, off, scale)| {
                    let v = if load > 0.0 {
                        load * z + (1.0 - load * load).max(0.3).sqrt() * normal(rng)
                    } else {
                        rng.random_range(-1.7..1.7)
                    };
                    Cell::Num(round4(off + scale * v))
                })
                .collect();
            row.push(Cell::Cat(y));
            row
        })
        .collect();
    SynthDataset {
        name: "diabetes".into(),
        schema,
        train: RawTable { rows },
        test: None,
    }
}

/// Mixed columns, 2 classes (76/24), standardized, shipped with a
/// predefined 1600/400 train/test split.
fn income(rng: &mut Rng) -> SynthDataset {
    let workclass = names(&["private", "self-emp", "local-gov", "state-gov", "federal-gov"]);
    let marital = names(&["married", "never-married", "divorced", "widowed"]);
    let occupation = names(&["exec", "prof", "craft", "sales", "clerical", "service"]);
    let relationship = names(&["husband", "wife", "own-child", "not-in-family"]);
    let race = names(&["a", "b", "c"]);
    let columns = vec![
        ColumnSchema::numerical("age"),
        ColumnSchema::categorical("workclass", workclass.clone()),
        ColumnSchema::numerical("fnlwgt"),
        ColumnSchema::numerical("education_num"),
        ColumnSchema::categorical("marital_status", marital.clone()),
        ColumnSchema::categorical("occupation", occupation.clone()),
        ColumnSchema::categorical("relationship", relationship.clone()),
        ColumnSchema::categorical("race", race.clone()),
        ColumnSchema::numerical("capital_gain"),
        ColumnSchema::numerical("hours_per_week"),
        ColumnSchema::target("class", ["<=50K", ">50K"]),
    ];
    let mut schema = Schema::new(TargetTask::Classification, columns).expect("static schema");
    schema.scaling = Some(ScalingMode::Standardize);

    let row = |rng: &mut Rng| {
        let y = class_index(rng, &[0.76, 0.24]);
        let z = if y == 1 { 1.0 } else { -0.3 } + normal(rng);
        let status = [1.2 * z, -z, 0.0, -0.5];
        let occ = [1.0 * z, 0.8 * z, 0.0, 0.2 * z, -0.4 * z, -0.9 * z];
        let rel = [0.9 * z, 0.4 * z, -1.2 * z, -0.3 * z];
        vec![
            Cell::Num((40.0 + 8.0 * z + 9.0 * normal(rng)).clamp(17.0, 90.0).round()),
            Cell::Cat(categorical(rng, &[1.5, 0.2, 0.0, -0.2, -0.6])),
            Cell::Num(rng.random_range(20_000.0..400_000.0f64).round()),
            Cell::Num((10.0 + 1.6 * z + 1.5 * normal(rng)).clamp(1.0, 16.0).round()),
            Cell::Cat(categorical(rng, &status)),
            Cell::Cat(categorical(rng, &occ)),
            Cell::Cat(categorical(rng, &rel)),
            Cell::Cat(categorical(rng, &[1.5, 0.0, -0.5])),
            Cell::Num(if rng.random::<f64>() < 0.08 {
                rng.random_range(1000.0..20_000.0f64).round()
            } else {
                0.0
            }),
            Cell::Num((40.0 + 4.0 * z + 9.0 * normal(rng)).clamp(1.0, 99.0).round()),
            Cell::Cat(y),
        ]
    };
    let train = (0..1600).map(|_| row(rng)).collect();
    let test = (0..400).map(|_| row(rng)).collect();
    SynthDataset {
        name: "income".into(),
        schema,
        train: RawTable { rows: train },
        test: Some(RawTable { rows: test }),
    }
}

/// 1473 rows, 2 numerical + 7 categorical columns, 3 classes. Class means
/// sit on a triangle in a 2-D latent.
fn cmc(rng: &mut Rng) -> SynthDataset {
    let four = names(&["1", "2", "3", "4"]);
    let two = names(&["0", "1"]);
    let columns = vec![
        ColumnSchema::numerical("wife_age"),
        ColumnSchema::categorical("wife_education", four.clone()),
        ColumnSchema::categorical("husband_education", four.clone()),
        ColumnSchema::numerical("children"),
        ColumnSchema::categorical("wife_religion", two.clone()),
        ColumnSchema::categorical("wife_working", two.clone()),
        ColumnSchema::categorical("husband_occupation", four.clone()),
        ColumnSchema::categorical("living_standard", four.clone()),
        ColumnSchema::categorical("media_exposure", two.clone()),
        ColumnSchema::target("method", ["no-use", "long-term", "short-term"]),
    ];
    let schema = Schema::new(TargetTask::Classification, columns).expect("static schema");
    let means = [(-0.8, -0.4), (0.9, 0.2), (0.0, 0.9)];
    let rows = (0..1473)
        .map(|_| {
            let y = class_index(rng, &[0.43, 0.22, 0.35]);
            let a = means[y].0 + 0.8 * normal(rng);
            let b = means[y].1 + 0.8 * normal(rng);
            let ordinal = |rng: &mut Rng, t: f64| categorical(rng, &[-1.2 * t, -0.4 * t, 0.4 * t, 1.2 * t]);
            vec![
                Cell::Num((32.0 + 5.0 * b + 6.0 * normal(rng)).clamp(16.0, 49.0).round()),
                Cell::Cat(ordinal(rng, a)),
                Cell::Cat(ordinal(rng, 0.7 * a)),
                Cell::Num((3.0 + 1.5 * b + 1.5 * normal(rng)).clamp(0.0, 16.0).round()),
                Cell::Cat(categorical(rng, &[0.0, 1.5])),
                Cell::Cat(categorical(rng, &[0.0, 1.0])),
                Cell::Cat(ordinal(rng, -0.6 * a)),
                Cell::Cat(ordinal(rng, 0.5 * a + 0.3 * b)),
                Cell::Cat(categorical(rng, &[2.0 + a, 0.0])),
                Cell::Cat(y),
            ]
        })
        .collect();
    SynthDataset {
        name: "cmc".into(),
        schema,
        train: RawTable { rows },
        test: None,
    }
}

/// 4177 rows, 1 categorical + 7 numerical columns, real-valued target.
/// Shell measurements grow with a log-age latent.
fn abalone(rng: &mut Rng) -> SynthDataset {
    let measures = ["length", "diameter", "height", "whole_weight", "shucked_weight", "viscera_weight", "shell_weight"];
    let mut columns = vec![ColumnSchema::categorical("sex", ["M", "F", "I"])];
    columns.extend(measures.iter().map(|m| ColumnSchema::numerical(*m)));
    columns.push(ColumnSchema {
        name: "rings".into(),
        kind: crate::tabular::ColumnKind::Target,
        categories: Vec::new(),
    });
    let schema = Schema::new(TargetTask::Regression, columns).expect("static schema");
    let rows = (0..4177)
        .map(|_| {
            let rings = (9.0 + 3.0 * normal(rng)).clamp(1.0, 29.0).round();
            let s = (rings / 10.0).ln() + 0.15 * normal(rng);
            let infant = s < -0.2 && rng.random::<f64>() < 0.8;
            let sex = if infant { 2 } else { categorical(rng, &[0.0, -0.1, -2.0]) };
            let length = (0.52 + 0.25 * s + 0.03 * normal(rng)).max(0.05);
            let mut row = vec![Cell::Cat(sex)];
            let vals = [
                length,
                0.8 * length + 0.015 * normal(rng),
                (0.27 * length + 0.012 * normal(rng)).max(0.0),
                (4.0 * length.powi(3) * (1.0 + 0.1 * normal(rng))).max(0.002),
                (1.7 * length.powi(3) * (1.0 + 0.15 * normal(rng))).max(0.001),
                (0.9 * length.powi(3) * (1.0 + 0.15 * normal(rng))).max(0.0005),
                (1.2 * length.powi(3) * (1.0 + 0.12 * normal(rng)) * (1.0 + 0.4 * s)).max(0.0015),
            ];
            row.extend(vals.iter().map(|v| Cell::Num(round4(*v))));
            row.push(Cell::Num(rings));
            row
        })
        .collect();
    SynthDataset {
        name: "abalone".into(),
        schema,
        train: RawTable { rows },
        test: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{load_csv, load_splits, Target};

    #[test]
    fn shapes_and_balance() {
        let d = generate("diabetes", 0).unwrap();
        let enc = encode(&d.train, &d.schema);
        assert_eq!((enc.rows(), enc.dims()), (768, 8));
        let (labels, c) = enc.class_labels().unwrap();
        assert_eq!(c, 2);
        let pos = labels.iter().filter(|&&y| y == 1).count() as f64 / 768.0;
        assert!((0.28..0.42).contains(&pos), "{pos}");

        let cmc = generate("cmc", 0).unwrap();
        assert_eq!(encode(&cmc.train, &cmc.schema).dims(), 2 + 4 * 4 + 3 * 2);
        let ab = generate("abalone", 0).unwrap();
        let enc = encode(&ab.train, &ab.schema);
        assert_eq!(enc.dims(), 10);
        assert!(matches!(enc.target, Some(Target::Real(_))));
        assert!(generate("nope", 0).is_none());
    }

    #[test]
    fn deterministic_per_seed() {
        for name in NAMES {
            let a = generate(name, 3).unwrap();
            let b = generate(name, 3).unwrap();
            assert_eq!(a.train, b.train);
            assert_ne!(a.train, generate(name, 4).unwrap().train, "{name}");
        }
    }

    #[test]
    fn csv_round_trip_with_predefined_split() {
        let dir = tempfile::tempdir().unwrap();
        let inc = generate("income", 1).unwrap();
        let (csv, schema_path) = inc.write(dir.path()).unwrap();
        let schema = Schema::from_file(&schema_path).unwrap();
        assert_eq!(schema.scaling, Some(ScalingMode::Standardize));
        assert_eq!(load_csv(&csv, &schema).unwrap(), inc.train);
        let from_disk = load_splits(&csv, &schema, 5).unwrap();
        let in_memory = inc.splits(5).unwrap();
        assert_eq!(from_disk, in_memory);
        assert_eq!(from_disk.test.rows(), 400);
        assert!(from_disk.manifest.predefined_test);
    }
}
