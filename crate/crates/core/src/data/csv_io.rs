use std::io::{Read, Write};
use std::path::Path;

use crate::data::{DatasetBundle, Splits, VariableSchema};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const TRAIN_FRACTION: f64 = 0.7;
const VAL_FRACTION: f64 = 0.15;

/// Loads a CSV with a `ts` column plus one column per schema variable.
///
/// Rows are sorted by timestamp; partitions default to 70/15/15.
pub fn load_csv(path: impl AsRef<Path>, schema: &VariableSchema) -> Result<DatasetBundle> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &VariableSchema) -> Result<DatasetBundle> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let ts_col = col("ts")?;
    let y_col = col(&schema.endogenous_name)?;
    let dis_cols = schema
        .discrete_vars
        .iter()
        .map(|v| col(&v.name))
        .collect::<Result<Vec<_>>>()?;
    let con_cols = schema
        .continuous_vars
        .iter()
        .map(|v| col(v))
        .collect::<Result<Vec<_>>>()?;

    struct Row {
        ts: i64,
        y: f64,
        dis: Vec<u32>,
        con: Vec<f64>,
    }

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |c: usize, name: &str| -> Result<&str> {
            match record.get(c) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: "missing value".into(),
                }),
            }
        };
        let float = |c: usize, name: &str| -> Result<f64> {
            let s = cell(c, name)?;
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("{s:?} is not a finite number"),
                }),
            }
        };
        let ts_str = cell(ts_col, "ts")?;
        let ts = ts_str.parse::<i64>().map_err(|_| Error::Parse {
            row,
            column: "ts".into(),
            message: format!("{ts_str:?} is not an integer timestamp"),
        })?;
        let y = float(y_col, &schema.endogenous_name)?;
        let mut dis = Vec::with_capacity(dis_cols.len());
        for (&c, var) in dis_cols.iter().zip(&schema.discrete_vars) {
            let s = cell(c, &var.name)?;
            let v = s.parse::<i64>().map_err(|_| Error::Parse {
                row,
                column: var.name.clone(),
                message: format!("{s:?} is not an integer code"),
            })?;
            if v < 0 || v as u64 >= var.vocab_size as u64 {
                return Err(Error::Vocabulary {
                    row,
                    column: var.name.clone(),
                    value: v,
                    vocab: var.vocab_size,
                });
            }
            dis.push(v as u32);
        }
        let con = con_cols
            .iter()
            .zip(&schema.continuous_vars)
            .map(|(&c, name)| float(c, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row { ts, y, dis, con });
    }
    rows.sort_by_key(|r| r.ts);
    if rows.windows(2).any(|w| w[0].ts == w[1].ts) {
        return Err(Error::Contract("duplicate timestamps".into()));
    }

    let n = rows.len();
    let bundle = DatasetBundle {
        timestamps: rows.iter().map(|r| r.ts).collect(),
        y: rows.iter().map(|r| r.y).collect(),
        x_dis: (0..dis_cols.len())
            .map(|j| rows.iter().map(|r| r.dis[j]).collect())
            .collect(),
        x_con: (0..con_cols.len())
            .map(|j| rows.iter().map(|r| r.con[j]).collect())
            .collect(),
        splits: Splits::by_fraction(n, TRAIN_FRACTION, VAL_FRACTION)?,
    };
    Ok(bundle)
}

fn render_csv(bundle: &DatasetBundle, schema: &VariableSchema) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["ts".to_string(), schema.endogenous_name.clone()];
    header.extend(schema.discrete_vars.iter().map(|v| v.name.clone()));
    header.extend(schema.continuous_vars.iter().cloned());
    w.write_record(&header)?;
    for i in 0..bundle.len() {
        let mut rec = vec![bundle.timestamps[i].to_string(), format_float(bundle.y[i])];
        rec.extend(bundle.x_dis.iter().map(|c| c[i].to_string()));
        rec.extend(bundle.x_con.iter().map(|c| format_float(c[i])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

// `{}` on f64 prints the shortest string that round-trips exactly.
fn format_float(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv(path: impl AsRef<Path>, bundle: &DatasetBundle, schema: &VariableSchema) -> Result<()> {
    let bytes = render_csv(bundle, schema)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes per-step ground-truth regime labels as `ts,regime`.
pub fn write_labels_csv(path: impl AsRef<Path>, timestamps: &[i64], labels: &[usize]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "ts,regime").map_err(|e| Error::io(path.as_ref(), e))?;
    for (ts, l) in timestamps.iter().zip(labels) {
        writeln!(out, "{ts},{l}").map_err(|e| Error::io(path.as_ref(), e))?;
    }
    write_atomic(path.as_ref(), &out)
}
