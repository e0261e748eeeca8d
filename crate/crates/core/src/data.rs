//! Tidy observation tables: one row per (experiment, time, variable, value).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("bad header: expected `experiment,time,variable,value`, got `{0}`")]
    Header(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub experiment: String,
    pub time: f64,
    pub variable: String,
    pub value: f64,
}

/// Observations of one experiment, with the sorted set of distinct times.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub id: String,
    pub times: Vec<f64>,
    /// (row index into `Dataset::rows`, index into `times`)
    pub rows: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    experiments: Vec<ExperimentData>,
}

impl Dataset {
    /// Validate and index a set of observations. Within each
    /// (experiment, variable) the times must be strictly increasing in the
    /// order given.
    pub fn new(rows: Vec<Observation>) -> Result<Self, DataError> {
        let mut last: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if !r.time.is_finite() || !r.value.is_finite() {
                return Err(DataError::Invalid(format!("row {}: non-finite time or value", i + 1)));
            }
            if r.experiment.is_empty() || r.variable.is_empty() {
                return Err(DataError::Invalid(format!("row {}: empty experiment or variable", i + 1)));
            }
            let key = (r.experiment.as_str(), r.variable.as_str());
            if let Some(&prev) = last.get(&key) {
                if r.time <= prev {
                    return Err(DataError::Invalid(format!(
                        "row {}: times not strictly increasing for experiment `{}`, variable `{}` ({} after {})",
                        i + 1,
                        r.experiment,
                        r.variable,
                        r.time,
                        prev
                    )));
                }
            }
            last.insert(key, r.time);
        }

        let mut order: Vec<String> = Vec::new();
        let mut by_exp: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            by_exp
                .entry(r.experiment.clone())
                .or_insert_with(|| {
                    order.push(r.experiment.clone());
                    Vec::new()
                })
                .push(i);
        }
        let experiments = order
            .into_iter()
            .map(|id| {
                let idx = &by_exp[&id];
                let mut times: Vec<f64> = idx.iter().map(|&i| rows[i].time).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                let rows_ix = idx
                    .iter()
                    .map(|&i| {
                        let t = rows[i].time;
                        let ti = times.binary_search_by(|x| x.total_cmp(&t)).expect("time indexed");
                        (i, ti)
                    })
                    .collect();
                ExperimentData {
                    id,
                    times,
                    rows: rows_ix,
                }
            })
            .collect();
        Ok(Self { rows, experiments })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn experiments(&self) -> &[ExperimentData] {
        &self.experiments
    }

    pub fn variables(&self) -> Vec<String> {
        let mut v: Vec<String> = self.rows.iter().map(|r| r.variable.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Build a dataset from a design (values zero), for simulation.
    pub fn from_design(design: &[(String, f64, String)]) -> Result<Self, DataError> {
        Self::new(
            design
                .iter()
                .map(|(e, t, v)| Observation {
                    experiment: e.clone(),
                    time: *t,
                    variable: v.clone(),
                    value: 0.0,
                })
                .collect(),
        )
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self, DataError> {
        if values.len() != self.rows.len() {
            return Err(DataError::Invalid(format!(
                "expected {} values, got {}",
                self.rows.len(),
                values.len()
            )));
        }
        let rows = self
            .rows
            .iter()
            .zip(values)
            .map(|(r, &v)| Observation { value: v, ..r.clone() })
            .collect();
        Self::new(rows)
    }

    /// Read CSV with header `experiment,time,variable,value`; `#` starts a
    /// comment line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != ["experiment", "time", "variable", "value"] {
            return Err(DataError::Header(header.join(",")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 4 {
                return Err(DataError::Row {
                    line,
                    msg: format!("expected 4 fields, got {}", rec.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, DataError> {
                s.parse::<f64>().map_err(|_| DataError::Row {
                    line,
                    msg: format!("cannot parse {what} `{s}`"),
                })
            };
            rows.push(Observation {
                experiment: rec[0].to_owned(),
                time: parse(&rec[1], "time")?,
                variable: rec[2].to_owned(),
                value: parse(&rec[3], "value")?,
            });
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["experiment", "time", "variable", "value"])?;
        for r in &self.rows {
            w.write_record([r.experiment.clone(), r.time.to_string(), r.variable.clone(), r.value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
