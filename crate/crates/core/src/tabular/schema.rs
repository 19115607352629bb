use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ScalingMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTask {
    #[default]
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Ordered category labels. Required for categorical columns and for
    /// classification targets, where the position is the class index.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSchema {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numerical,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn target<S: Into<String>>(name: impl Into<String>, classes: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Target,
            categories: classes.into_iter().map(Into::into).collect(),
        }
    }
}

/// Column typing for one dataset, read from a TOML sidecar file:
///
/// ```toml
/// task = "classification"          # or "regression"
/// scaling = "min_max"              # optional default for `prepare`
/// predefined_test = "test.csv"     # optional, relative to the schema file
///
/// [[column]]
/// name = "age"
/// kind = "numerical"
///
/// [[column]]
/// name = "sex"
/// kind = "categorical"
/// categories = ["M", "F"]
///
/// [[column]]
/// name = "label"
/// kind = "target"
/// categories = ["no", "yes"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub task: TargetTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predefined_test: Option<PathBuf>,
    #[serde(rename = "column")]
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(task: TargetTask, columns: Vec<ColumnSchema>) -> Result<Self> {
        let schema = Self {
            task,
            scaling: None,
            predefined_test: None,
            columns,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Every column numerical except `target`.
    pub fn all_numeric(header: &[String], target: &str, task: TargetTask, classes: Vec<String>) -> Result<Self> {
        let columns = header
            .iter()
            .map(|name| {
                if name == target {
                    ColumnSchema {
                        name: name.clone(),
                        kind: ColumnKind::Target,
                        categories: classes.clone(),
                    }
                } else {
                    ColumnSchema::numerical(name.clone())
                }
            })
            .collect();
        Self::new(task, columns)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    /// Reads a schema file; a relative `predefined_test` path is resolved
    /// against the schema file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut schema = Self::from_toml_str(&text)?;
        if let Some(test) = &schema.predefined_test {
            if test.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                schema.predefined_test = Some(base.join(test));
            }
        }
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let targets = self.columns.iter().filter(|c| c.kind == ColumnKind::Target).count();
        if targets != 1 {
            return Err(Error::Schema(format!("expected exactly one target column, found {targets}")));
        }
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name '{}'", col.name)));
            }
            let needs_categories = match col.kind {
                ColumnKind::Categorical => true,
                ColumnKind::Target => self.task == TargetTask::Classification,
                ColumnKind::Numerical => false,
            };
            if needs_categories && col.categories.is_empty() {
                return Err(Error::Schema(format!("column '{}' needs a non-empty category list", col.name)));
            }
            if !needs_categories && !col.categories.is_empty() {
                return Err(Error::Schema(format!("column '{}' cannot have categories", col.name)));
            }
            let mut seen = HashSet::new();
            for cat in &col.categories {
                if !seen.insert(cat.as_str()) {
                    return Err(Error::Schema(format!("column '{}' lists category '{cat}' twice", col.name)));
                }
            }
        }
        if self.columns.len() < 2 {
            return Err(Error::Schema("need at least one feature column".into()));
        }
        Ok(())
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Target)
            .expect("validated schema has a target")
    }

    pub fn target(&self) -> &ColumnSchema {
        &self.columns[self.target_index()]
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.task {
            TargetTask::Classification => Some(self.target().categories.len()),
            TargetTask::Regression => None,
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
        predefined_test = "test.csv"
        [[column]]
        name = "age"
        kind = "numerical"
        [[column]]
        name = "sex"
        kind = "categorical"
        categories = ["M", "F"]
        [[column]]
        name = "label"
        kind = "target"
        categories = ["no", "yes"]
    "#;

    #[test]
    fn parses_sidecar() {
        let s = Schema::from_toml_str(TEXT).unwrap();
        assert_eq!(s.columns.len(), 3);
        assert_eq!(s.target_index(), 2);
        assert_eq!(s.n_classes(), Some(2));
        assert_eq!(s.columns[1].categories, vec!["M", "F"]);
        assert_eq!(s.predefined_test.as_deref(), Some(Path::new("test.csv")));
        let back = Schema::from_toml_str(&s.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_schemas() {
        let two_targets = vec![ColumnSchema::target("a", ["x"]), ColumnSchema::target("b", ["y"])];
        assert!(matches!(Schema::new(TargetTask::Classification, two_targets), Err(Error::Schema(_))));

        let no_target = vec![ColumnSchema::numerical("a"), ColumnSchema::numerical("b")];
        assert!(Schema::new(TargetTask::Classification, no_target).is_err());

        let dup_cat = vec![ColumnSchema::categorical("c", ["A", "A"]), ColumnSchema::target("t", ["x"])];
        assert!(Schema::new(TargetTask::Classification, dup_cat).is_err());

        let empty_cat = vec![ColumnSchema::categorical("c", Vec::<String>::new()), ColumnSchema::target("t", ["x"])];
        assert!(Schema::new(TargetTask::Classification, empty_cat).is_err());

        let reg = vec![ColumnSchema::numerical("a"), ColumnSchema::target("t", Vec::<String>::new())];
        assert!(Schema::new(TargetTask::Regression, reg).is_ok());
    }
}
