use std::io::{Read, Write};

use super::InferenceError;

/// Retained draws, row-major, one row per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    names: Vec<String>,
    values: Vec<f64>,
}

impl Draws {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            values: Vec::new(),
        }
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, InferenceError> {
        let mut d = Self::new(names);
        for r in rows {
            d.push(r)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<(), InferenceError> {
        if row.len() != self.names.len() {
            return Err(InferenceError::Config(format!(
                "draw has {} components, expected {}",
                row.len(),
                self.names.len()
            )));
        }
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim().max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    /// CSV: header of parameter names, one row per draw, shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), InferenceError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        let mut buf = Vec::with_capacity(self.dim());
        for r in self.rows() {
            buf.clear();
            buf.extend(r.iter().map(|x| x.to_string()));
            w.write_record(&buf)?;
        }
        w.flush().map_err(|e| InferenceError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, InferenceError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut d = Self::new(names);
        let mut row = Vec::with_capacity(d.dim());
        for rec in rdr.records() {
            let rec = rec?;
            row.clear();
            for f in rec.iter() {
                row.push(
                    f.parse::<f64>()
                        .map_err(|_| InferenceError::Io(format!("bad number `{f}` in chain file")))?,
                );
            }
            d.push(&row)?;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let rows = vec![vec![0.1 + 0.2, -1e-300], vec![6.02e23, 1.0 / 3.0]];
        let d = Draws::from_rows(vec!["a".into(), "b".into()], &rows).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Draws::read_csv(buf.as_slice()).unwrap(), d);
        assert_eq!(d.column(1), vec![-1e-300, 1.0 / 3.0]);
    }
}
