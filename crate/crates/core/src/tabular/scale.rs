use serde::{Deserialize, Serialize};

use super::{EncodedTable, Target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    #[default]
    MinMax,
    Standardize,
}

impl std::str::FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_max" | "min-max" | "minmax" => Ok(ScalingMode::MinMax),
            "standardize" | "zscore" => Ok(ScalingMode::Standardize),
            other => Err(Error::InvalidArgument(format!("unknown scaling mode '{other}'"))),
        }
    }
}

/// `(min, max)` under min-max, `(mean, std)` under standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub a: f64,
    pub b: f64,
}

impl ColumnStats {
    fn apply(&self, mode: ScalingMode, v: f64) -> f64 {
        match mode {
            ScalingMode::MinMax => {
                let range = self.b - self.a;
                if range > 0.0 {
                    (v - self.a) / range
                } else {
                    0.0
                }
            }
            ScalingMode::Standardize => {
                if self.b > 0.0 {
                    (v - self.a) / self.b
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-column scaling statistics, fit on training rows only. One-hot
/// columns are left as 0/1 indicators; only numerical columns are scaled.
/// Regression targets are always min-max scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mode: ScalingMode,
    pub columns: Vec<ColumnStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ColumnStats>,
}

fn column_stats(mode: ScalingMode, column: usize, values: impl Iterator<Item = f64> + Clone) -> ColumnStats {
    match mode {
        ScalingMode::MinMax => {
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            ColumnStats { column, a: lo, b: hi }
        }
        ScalingMode::Standardize => {
            let n = values.clone().count() as f64;
            let mean = values.clone().sum::<f64>() / n;
            let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ColumnStats {
                column,
                a: mean,
                b: var.sqrt(),
            }
        }
    }
}

impl ScalerStats {
    pub fn fit(table: &EncodedTable, mode: ScalingMode) -> Result<Self> {
        if table.rows() == 0 {
            return Err(Error::Empty("cannot fit scaling statistics on an empty table".into()));
        }
        let columns = table
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.numerical)
            .map(|(j, _)| column_stats(mode, j, table.values.column(j).into_iter().copied()))
            .collect();
        let target = match &table.target {
            Some(Target::Real(v)) => Some(column_stats(ScalingMode::MinMax, usize::MAX, v.iter().copied())),
            _ => None,
        };
        Ok(Self { mode, columns, target })
    }

    pub fn apply(&self, table: &EncodedTable) -> Result<EncodedTable> {
        let mut out = table.clone();
        for stats in &self.columns {
            if stats.column >= out.dims() {
                return Err(Error::Shape(format!(
                    "scaler column {} outside table of width {}",
                    stats.column,
                    out.dims()
                )));
            }
            out.values
                .column_mut(stats.column)
                .mapv_inplace(|v| stats.apply(self.mode, v));
        }
        if let (Some(stats), Some(Target::Real(v))) = (&self.target, &mut out.target) {
            for t in v.iter_mut() {
                *t = stats.apply(ScalingMode::MinMax, *t);
            }
        }
        Ok(out)
    }
}

/// Fits statistics on `table` and scales it with them.
pub fn fit_and_scale(table: &EncodedTable, mode: ScalingMode) -> Result<(EncodedTable, ScalerStats)> {
    let stats = ScalerStats::fit(table, mode)?;
    Ok((stats.apply(table)?, stats))
}
