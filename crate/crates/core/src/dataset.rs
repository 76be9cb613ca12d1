//! Observation data sets and their CSV form (`t,y` header, one observation per line).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Where the data came from, e.g. the generator and seed.
    pub provenance: String,
}

/// Seventeen significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl DataSet {
    pub fn new(times: Vec<f64>, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DataParse(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DataParse(format!("value {} is not finite", i + 1)));
        }
        Ok(Self { times, values, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Observation grid starting at `t0`.
    pub fn grid(&self, t0: f64) -> Result<TimeGrid> {
        TimeGrid::new(t0, self.times.clone())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y\n");
        for (t, y) in self.times.iter().zip(&self.values) {
            let _ = writeln!(out, "{},{}", format_f64(*t), format_f64(*y));
        }
        out
    }

    pub fn from_csv<R: Read>(reader: R, provenance: impl Into<String>) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::DataParse("empty file".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::DataParse(format!("line {}: {e}", i + 1)))?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
            }
        };
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "y"] {
            return Err(Error::DataParse(format!("expected header `t,y`, found `{}`", header.trim())));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::DataParse(format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::DataParse(format!("line {}: expected 2 fields, found {}", i + 1, fields.len())));
            }
            let parse = |s: &str, what: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::DataParse(format!("line {}: cannot parse {what} `{s}`", i + 1)))
            };
            times.push(parse(fields[0], "t")?);
            values.push(parse(fields[1], "y")?);
        }
        if times.is_empty() {
            return Err(Error::DataParse("no observations".into()));
        }
        Self::new(times, values, provenance)
    }
}
