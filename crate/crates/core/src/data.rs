//! Rectangular data with missing values and censoring status.
//!
//! Values are stored column-wise; `NaN` marks a missing cell. A column may
//! carry a status vector recording whether each value is exact or a left or
//! right censoring bound. On disk this is the CSV column `<name>_status`
//! holding `obs`, `left` or `right`.

use crate::error::{Error, Result};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

/// Suffix of the CSV column holding censoring status.
pub const STATUS_SUFFIX: &str = "_status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Observed,
    Left,
    Right,
}

impl Status {
    fn parse(s: &str) -> Option<Status> {
        match s {
            "obs" => Some(Status::Observed),
            "left" => Some(Status::Left),
            "right" => Some(Status::Right),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Observed => "obs",
            Status::Left => "left",
            Status::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    status: Vec<Option<Vec<Status>>>,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate column '{name}'")));
            }
        }
        if let Some(first) = columns.first() {
            if let Some((j, _)) = columns
                .iter()
                .enumerate()
                .find(|(_, c)| c.len() != first.len())
            {
                return Err(Error::Data(format!(
                    "column '{}' has {} rows, expected {}",
                    names[j],
                    columns[j].len(),
                    first.len()
                )));
            }
        }
        let status = vec![None; names.len()];
        Ok(Dataset {
            names,
            columns,
            status,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index(name).map(|j| self.columns[j].as_slice())
    }

    pub fn column_at(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    /// Status of a cell; columns without a status vector are exact.
    pub fn status(&self, row: usize, j: usize) -> Status {
        self.status[j].as_ref().map_or(Status::Observed, |s| s[row])
    }

    pub fn has_status(&self, j: usize) -> bool {
        self.status[j].is_some()
    }

    pub fn status_column(&self, name: &str) -> Option<&[Status]> {
        self.index(name)
            .and_then(|j| self.status[j].as_deref())
    }

    /// Appends a column, or replaces the values of an existing one (dropping
    /// its status).
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if !self.names.is_empty() && values.len() != self.n_rows() {
            return Err(Error::Data(format!(
                "column '{name}' has {} rows, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        match self.index(name) {
            Some(j) => {
                self.columns[j] = values;
                self.status[j] = None;
            }
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
                self.status.push(None);
            }
        }
        Ok(())
    }

    pub fn set_status(&mut self, name: &str, status: Vec<Status>) -> Result<()> {
        let j = self
            .index(name)
            .ok_or_else(|| Error::Data(format!("no column '{name}'")))?;
        if status.len() != self.n_rows() {
            return Err(Error::Data(format!(
                "status for '{name}' has {} rows, expected {}",
                status.len(),
                self.n_rows()
            )));
        }
        self.status[j] = Some(status);
        Ok(())
    }

    /// New dataset made of the given rows, in order; rows may repeat.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            status: self
                .status
                .iter()
                .map(|s| s.as_ref().map(|s| rows.iter().map(|&i| s[i]).collect()))
                .collect(),
        }
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open '{}': {e}", path.display())))?;
        Self::from_reader(file)
    }

    /// Parses CSV with a mandatory header. Empty cells are missing.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Data("missing header row".into()));
        }
        let mut value_cols = Vec::new();
        let mut status_cols = Vec::new();
        for (j, h) in header.iter().enumerate() {
            match h.strip_suffix(STATUS_SUFFIX) {
                Some(base) if header.iter().any(|o| o == base) => status_cols.push((j, base)),
                _ => value_cols.push(j),
            }
        }
        let names: Vec<String> = value_cols.iter().map(|&j| header[j].clone()).collect();
        let mut columns = vec![Vec::new(); names.len()];
        let mut status: Vec<Vec<Status>> = vec![Vec::new(); status_cols.len()];
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let line = r + 2;
            for (c, &j) in value_cols.iter().enumerate() {
                let cell = record.get(j).unwrap_or("");
                let v = if cell.is_empty() || cell == "NA" {
                    f64::NAN
                } else {
                    cell.parse::<f64>().map_err(|_| {
                        Error::Data(format!(
                            "line {line}, column '{}': cannot parse '{cell}' as a number",
                            header[j]
                        ))
                    })?
                };
                columns[c].push(v);
            }
            for (s, &(j, base)) in status_cols.iter().enumerate() {
                let cell = record.get(j).unwrap_or("");
                let st = if cell.is_empty() {
                    Status::Observed
                } else {
                    Status::parse(cell).ok_or_else(|| {
                        Error::Data(format!(
                            "line {line}, column '{}': status must be obs, left or right, found '{cell}'",
                            header[j]
                        ))
                    })?
                };
                let c = names.iter().position(|n| n == base).unwrap_or(0);
                if st != Status::Observed && columns[c][r].is_nan() {
                    return Err(Error::Data(format!(
                        "line {line}: '{base}' is censored but has no bound"
                    )));
                }
                status[s].push(st);
            }
        }
        let mut data = Dataset::new(names, columns)?;
        for ((_, base), st) in status_cols.into_iter().zip(status) {
            data.set_status(base, st)?;
        }
        Ok(data)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    /// Writes CSV; status columns follow their value column.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::new();
        for (j, name) in self.names.iter().enumerate() {
            header.push(name.clone());
            if self.status[j].is_some() {
                header.push(format!("{name}{STATUS_SUFFIX}"));
            }
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            for j in 0..self.names.len() {
                let v = self.columns[j][i];
                record.push(if v.is_nan() { String::new() } else { format!("{v}") });
                if let Some(s) = &self.status[j] {
                    record.push(s[i].as_str().to_string());
                }
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
