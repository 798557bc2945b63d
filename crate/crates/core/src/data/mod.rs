//! Schema-typed time-series tables, normalization, windowing and the
//! planted-regime synthesizer.

mod csv_io;
mod synth;
mod window;

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, read_csv, write_csv, write_labels_csv};
pub use synth::{synth_generate, SynthConfig, SynthOutput};
pub use window::{make_windows, split_windows, WindowInstance};

/// Std below this is treated as a constant column.
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteVar {
    pub name: String,
    pub vocab_size: usize,
}

/// Declared variables and window geometry of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub endogenous_name: String,
    #[serde(default)]
    pub discrete_vars: Vec<DiscreteVar>,
    #[serde(default)]
    pub continuous_vars: Vec<String>,
    #[serde(rename = "period_T")]
    pub period: usize,
    #[serde(rename = "lookback_L")]
    pub lookback: usize,
    #[serde(rename = "horizon_H")]
    pub horizon: usize,
}

impl VariableSchema {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Schema(format!(
                "period_T, lookback_L and horizon_H must be >= 1 (got {}, {}, {})",
                self.period, self.lookback, self.horizon
            )));
        }
        let mut seen = HashSet::new();
        let names = std::iter::once(&self.endogenous_name)
            .chain(self.discrete_vars.iter().map(|v| &v.name))
            .chain(self.continuous_vars.iter());
        for name in names {
            if name == "ts" {
                return Err(Error::Schema("\"ts\" is reserved for the timestamp column".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name {name:?}")));
            }
        }
        if let Some(v) = self.discrete_vars.iter().find(|v| v.vocab_size == 0) {
            return Err(Error::Schema(format!("discrete variable {:?} has vocab_size 0", v.name)));
        }
        Ok(())
    }

    /// Steps seen by the encoder, `L + H`.
    pub fn window_len(&self) -> usize {
        self.lookback + self.horizon
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Contiguous, ordered, non-overlapping partitions of the row range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// Train/val/test by fractions of `len`; test takes the remainder.
    pub fn by_fraction(len: usize, train: f64, val: f64) -> Result<Self> {
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::Config(format!("bad split fractions {train}, {val}")));
        }
        let a = (len as f64 * train).round() as usize;
        let b = (len as f64 * (train + val)).round() as usize;
        Ok(Self {
            train: 0..a,
            val: a..b.max(a),
            test: b.max(a)..len,
        })
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        let ok = self.train.start == 0
            && self.train.end == self.val.start
            && self.val.end == self.test.start
            && self.test.end == len
            && self.train.start <= self.train.end
            && self.val.start <= self.val.end
            && self.test.start <= self.test.end;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("splits {self:?} do not tile 0..{len}")))
        }
    }
}

/// Time-indexed endogenous and exogenous columns with partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub timestamps: Vec<i64>,
    pub y: Vec<f64>,
    /// One integer column per discrete variable, in schema order.
    pub x_dis: Vec<Vec<u32>>,
    /// One float column per continuous variable, in schema order.
    pub x_con: Vec<Vec<f64>>,
    pub splits: Splits,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self, schema: &VariableSchema) -> Result<()> {
        let n = self.len();
        if self.timestamps.len() != n
            || self.x_dis.len() != schema.discrete_vars.len()
            || self.x_con.len() != schema.continuous_vars.len()
            || self.x_dis.iter().any(|c| c.len() != n)
            || self.x_con.iter().any(|c| c.len() != n)
        {
            return Err(Error::Contract("bundle columns disagree in length or count".into()));
        }
        if self.timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("timestamps are not strictly increasing".into()));
        }
        for (col, var) in self.x_dis.iter().zip(&schema.discrete_vars) {
            if let Some((row, &v)) = col.iter().enumerate().find(|(_, &v)| v as usize >= var.vocab_size) {
                return Err(Error::Vocabulary {
                    row,
                    column: var.name.clone(),
                    value: v as i64,
                    vocab: var.vocab_size,
                });
            }
        }
        self.splits.validate(n)
    }

    /// Replaces the partitions with fraction-based ones.
    pub fn with_split_fractions(mut self, train: f64, val: f64) -> Result<Self> {
        self.splits = Splits::by_fraction(self.len(), train, val)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std < MIN_STD { 1.0 } else { std },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Global per-variable z-scoring with statistics from the train split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub target: ColumnStats,
    pub continuous: Vec<ColumnStats>,
}

impl Normalizer {
    pub fn fit(bundle: &DatasetBundle) -> Self {
        let r = bundle.splits.train.clone();
        Self {
            target: ColumnStats::fit(&bundle.y[r.clone()]),
            continuous: bundle.x_con.iter().map(|c| ColumnStats::fit(&c[r.clone()])).collect(),
        }
    }

    pub fn apply(&self, bundle: &DatasetBundle) -> DatasetBundle {
        let mut out = bundle.clone();
        out.y.iter_mut().for_each(|v| *v = self.target.apply(*v));
        for (col, stats) in out.x_con.iter_mut().zip(&self.continuous) {
            col.iter_mut().for_each(|v| *v = stats.apply(*v));
        }
        out
    }

    pub fn invert(&self, bundle: &DatasetBundle) -> DatasetBundle {
        let mut out = bundle.clone();
        out.y.iter_mut().for_each(|v| *v = self.target.invert(*v));
        for (col, stats) in out.x_con.iter_mut().zip(&self.continuous) {
            col.iter_mut().for_each(|v| *v = stats.invert(*v));
        }
        out
    }

    pub fn invert_target(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.target.invert(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(len: usize) -> (VariableSchema, DatasetBundle) {
        let schema = VariableSchema {
            endogenous_name: "load".into(),
            discrete_vars: vec![DiscreteVar {
                name: "is_holiday".into(),
                vocab_size: 2,
            }],
            continuous_vars: vec!["temp".into(), "flat".into()],
            period: 4,
            lookback: 4,
            horizon: 2,
        };
        let bundle = DatasetBundle {
            timestamps: (0..len as i64).collect(),
            y: (0..len).map(|i| (i as f64).sin() * 3.0 + 2.0).collect(),
            x_dis: vec![(0..len).map(|i| (i % 2) as u32).collect()],
            x_con: vec![(0..len).map(|i| i as f64).collect(), vec![5.0; len]],
            splits: Splits::by_fraction(len, 0.5, 0.25).unwrap(),
        };
        (schema, bundle)
    }

    #[test]
    fn schema_rejects_duplicates_and_zero_vocab() {
        let (mut schema, _) = toy(4);
        schema.continuous_vars.push("load".into());
        assert!(schema.validate().is_err());
        let (mut schema, _) = toy(4);
        schema.discrete_vars[0].vocab_size = 0;
        assert!(schema.validate().is_err());
    }

    #[test]
    fn schema_json_uses_declared_field_names() {
        let (schema, _) = toy(4);
        let json = serde_json::to_string(&schema).unwrap();
        assert!(json.contains("\"period_T\":4"));
        assert!(json.contains("\"lookback_L\":4"));
        assert_eq!(VariableSchema::from_json(&json).unwrap(), schema);
    }

    #[test]
    fn normalizer_uses_train_rows_only() {
        let (_, bundle) = toy(20);
        let norm = Normalizer::fit(&bundle);
        let mut tampered = bundle.clone();
        for i in tampered.splits.val.start..tampered.len() {
            tampered.y[i] = 1e9;
            tampered.x_con[0][i] = -1e9;
        }
        assert_eq!(Normalizer::fit(&tampered), norm);
        // constant column falls back to unit std
        assert_eq!(norm.continuous[1].std, 1.0);
    }

    #[test]
    fn normalizer_round_trip() {
        let (_, bundle) = toy(20);
        let norm = Normalizer::fit(&bundle);
        let back = norm.invert(&norm.apply(&bundle));
        for (a, b) in back.y.iter().zip(&bundle.y) {
            assert!((a - b).abs() < 1e-10);
        }
        for (ca, cb) in back.x_con.iter().zip(&bundle.x_con) {
            for (a, b) in ca.iter().zip(cb) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn splits_tile_the_range() {
        let s = Splits::by_fraction(10, 0.7, 0.15).unwrap();
        assert_eq!(s.train, 0..7);
        assert_eq!(s.test.end, 10);
        assert!(s.validate(10).is_ok());
        assert!(Splits::by_fraction(10, 0.9, 0.2).is_err());
    }
}
