//! Tabular data: loading, one-hot encoding, scaling and the
//! unlabeled / pseudo-validation / test / labeled-pool splits.

mod persist;
pub use persist::{SplitsMeta, SPLIT_FILES};
mod scale;
mod schema;
pub(crate) mod split;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scale::{fit_and_scale, ColumnStats, ScalerStats, ScalingMode};
pub use schema::{ColumnKind, ColumnSchema, Schema, TargetTask};
pub use split::{
    make_splits, make_splits_predefined, sample_labeled, sample_labeled_regression, DatasetSplits, LabeledSet,
    SplitManifest,
};

/// A validated cell. Categorical and class-target cells hold the category
/// index from the schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(usize),
}

/// Row-major cells in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_cell(col: &ColumnSchema, task: TargetTask, raw: &str) -> std::result::Result<Cell, String> {
    let text = raw.trim();
    let numeric = match col.kind {
        ColumnKind::Numerical => true,
        ColumnKind::Target => task == TargetTask::Regression,
        ColumnKind::Categorical => false,
    };
    if numeric {
        if text.is_empty() {
            return Err("missing value".into());
        }
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Cell::Num(v)),
            Ok(_) => Err(format!("non-finite value '{text}'")),
            Err(_) => Err(format!("cannot parse '{text}' as a number")),
        }
    } else {
        col.categories
            .iter()
            .position(|c| c == text)
            .map(Cell::Cat)
            .ok_or_else(|| format!("unknown category '{text}'"))
    }
}

/// Reads a comma-separated file with a header row whose names match the
/// schema (in any order).
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => csv_err(e),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut positions = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let pos = header.iter().position(|h| *h == col.name).ok_or_else(|| Error::Load {
            path: path.to_path_buf(),
            row: 0,
            column: col.name.clone(),
            message: "missing column in header".into(),
        })?;
        positions.push(pos);
    }
    if let Some(extra) = header.iter().find(|h| !schema.columns.iter().any(|c| &c.name == *h)) {
        return Err(Error::Load {
            path: path.to_path_buf(),
            row: 0,
            column: extra.clone(),
            message: "column not in schema".into(),
        });
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(schema.columns.len());
        for (col, &pos) in schema.columns.iter().zip(&positions) {
            let raw = record.get(pos).unwrap_or("");
            let cell = parse_cell(col, schema.task, raw).map_err(|message| Error::Load {
                path: path.to_path_buf(),
                row: row_no,
                column: col.name.clone(),
                message,
            })?;
            row.push(cell);
        }
        rows.push(row);
    }
    Ok(RawTable { rows })
}

/// Loads, encodes and splits a dataset (unscaled). A schema with a
/// `predefined_test` file uses that file as the test split.
pub fn load_splits(path: &Path, schema: &Schema, seed: u64) -> Result<DatasetSplits> {
    let train = encode(&load_csv(path, schema)?, schema);
    match &schema.predefined_test {
        Some(test_path) => {
            let test = encode(&load_csv(test_path, schema)?, schema);
            make_splits_predefined(&train, &test, seed)
        }
        None => make_splits(&train, seed),
    }
}

/// One encoded column and the schema column it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    /// Index of the source column in the schema.
    pub source: usize,
    pub numerical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class { labels: Vec<usize>, n_classes: usize },
    Real(Vec<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Class { labels, .. } => labels.len(),
            Target::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Class { labels, n_classes } => Target::Class {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                n_classes: *n_classes,
            },
            Target::Real(v) => Target::Real(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Dense numeric table after one-hot encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    pub values: Array2<f64>,
    pub features: Vec<Feature>,
    pub target: Option<Target>,
}

impl EncodedTable {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `rows` in the given order, target included.
    pub fn select(&self, rows: &[usize]) -> EncodedTable {
        EncodedTable {
            values: self.values.select(ndarray::Axis(0), rows),
            features: self.features.clone(),
            target: self.target.as_ref().map(|t| t.select(rows)),
        }
    }

    pub fn without_target(mut self) -> EncodedTable {
        self.target = None;
        self
    }

    pub fn class_labels(&self) -> Option<(&[usize], usize)> {
        match &self.target {
            Some(Target::Class { labels, n_classes }) => Some((labels, *n_classes)),
            _ => None,
        }
    }

    /// Contiguous one-hot column ranges, one per categorical source column.
    pub fn categorical_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut blocks: Vec<std::ops::Range<usize>> = Vec::new();
        for (j, f) in self.features.iter().enumerate() {
            if f.numerical {
                continue;
            }
            match blocks.last_mut() {
                Some(b) if b.end == j && self.features[b.start].source == f.source => b.end = j + 1,
                _ => blocks.push(j..j + 1),
            }
        }
        blocks
    }
}

/// One-hot encodes categorical columns; numerical columns pass through.
pub fn encode(raw: &RawTable, schema: &Schema) -> EncodedTable {
    let mut features = Vec::new();
    for (source, col) in schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Numerical => features.push(Feature {
                name: col.name.clone(),
                source,
                numerical: true,
            }),
            ColumnKind::Categorical => features.extend(col.categories.iter().map(|cat| Feature {
                name: format!("{}={}", col.name, cat),
                source,
                numerical: false,
            })),
            ColumnKind::Target => {}
        }
    }
    // first encoded column of every schema column
    let mut offsets = vec![0usize; schema.columns.len()];
    let mut width = 0;
    for (source, col) in schema.columns.iter().enumerate() {
        offsets[source] = width;
        width += match col.kind {
            ColumnKind::Numerical => 1,
            ColumnKind::Categorical => col.categories.len(),
            ColumnKind::Target => 0,
        };
    }

    let target_idx = schema.target_index();
    let mut values = Array2::<f64>::zeros((raw.len(), width));
    let mut class_labels = Vec::new();
    let mut real_targets = Vec::new();
    for (i, row) in raw.rows.iter().enumerate() {
        for (source, (col, cell)) in schema.columns.iter().zip(row).enumerate() {
            match (col.kind, *cell) {
                (ColumnKind::Target, Cell::Cat(c)) => class_labels.push(c),
                (ColumnKind::Target, Cell::Num(v)) => real_targets.push(v),
                (ColumnKind::Numerical, Cell::Num(v)) => values[[i, offsets[source]]] = v,
                (ColumnKind::Categorical, Cell::Cat(c)) => values[[i, offsets[source] + c]] = 1.0,
                (kind, cell) => panic!("cell {cell:?} does not match column kind {kind:?}"),
            }
        }
    }
    let target = match schema.task {
        TargetTask::Classification => Target::Class {
            labels: class_labels,
            n_classes: schema.columns[target_idx].categories.len(),
        },
        TargetTask::Regression => Target::Real(real_targets),
    };
    EncodedTable {
        values,
        features,
        target: Some(target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> Schema {
        Schema::new(
            TargetTask::Classification,
            vec![
                ColumnSchema::numerical("age"),
                ColumnSchema::categorical("sex", ["M", "F"]),
                ColumnSchema::target("label", ["a", "b"]),
            ],
        )
        .unwrap()
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows() {
        let f = write("age,sex,label\n31,M,a\n45,F,b\n22.5,F,a\n");
        let raw = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(raw.rows[2], vec![Cell::Num(22.5), Cell::Cat(1), Cell::Cat(0)]);
    }

    #[test]
    fn header_order_is_free() {
        let f = write("label,sex,age\na,M,31\n");
        let raw = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(raw.rows[0], vec![Cell::Num(31.0), Cell::Cat(0), Cell::Cat(0)]);
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let f = write("age,sex,label\n31,M,a\nNaN,F,b\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::Load { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_category_is_an_error() {
        let f = write("age,sex,label\n31,X,a\n");
        let err = load_csv(f.path(), &schema()).unwrap_err();
        assert!(err.to_string().contains("unknown category 'X'"), "{err}");
        assert!(err.to_string().contains("'sex'"), "{err}");
    }

    #[test]
    fn missing_and_extra_columns() {
        let f = write("age,label\n31,a\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Load { row: 0, .. })));
        let f = write("age,sex,label,zip\n31,M,a,1\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Load { row: 0, .. })));
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), &schema()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }

    #[test]
    fn one_hot_block() {
        let s = Schema::new(
            TargetTask::Classification,
            vec![
                ColumnSchema::numerical("x"),
                ColumnSchema::numerical("y"),
                ColumnSchema::categorical("c", ["A", "B", "C"]),
                ColumnSchema::target("t", ["0", "1"]),
            ],
        )
        .unwrap();
        let raw = RawTable {
            rows: vec![vec![Cell::Num(1.5), Cell::Num(-2.0), Cell::Cat(1), Cell::Cat(1)]],
        };
        let enc = encode(&raw, &s);
        assert_eq!(enc.dims(), 5);
        assert_eq!(enc.values.row(0).to_vec(), vec![1.5, -2.0, 0.0, 1.0, 0.0]);
        assert_eq!(enc.features[3].name, "c=B");
        assert_eq!(enc.categorical_blocks(), vec![2..5]);
        assert_eq!(enc.class_labels(), Some((&[1usize][..], 2)));
    }

    #[test]
    fn indicator_table_width() {
        // dna-style: 180 binary indicator variables declared as 0/1 columns
        let mut cols: Vec<ColumnSchema> = (0..180).map(|i| ColumnSchema::numerical(format!("a{i}"))).collect();
        cols.push(ColumnSchema::target("class", ["ei", "ie", "n"]));
        let s = Schema::new(TargetTask::Classification, cols).unwrap();
        let mut row: Vec<Cell> = (0..180).map(|i| Cell::Num((i % 2) as f64)).collect();
        row.push(Cell::Cat(2));
        let enc = encode(&RawTable { rows: vec![row] }, &s);
        assert_eq!(enc.dims(), 180);
        assert!(enc.categorical_blocks().is_empty());
    }
}
