//! CSV data files and JSON run artifacts.
//!
//! Data files have a header row. One-dimensional data use the columns
//! `idx, x, y`, spatial data `s1, s2, x, y`; every column whose name starts
//! with `x` is a covariate. The `y` column may be absent in files of new
//! points for prediction.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::covariance::Locations;
use crate::data::Covariates;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub locations: Locations,
    pub x_names: Vec<String>,
    pub x: Covariates,
    pub y: Option<Vec<f64>>,
}

impl DataTable {
    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn require_y(&self) -> Result<&[f64]> {
        self.y.as_deref().ok_or_else(|| Error::Schema("missing column y".into()))
    }
}

fn parse_cell(value: &str, column: &str, row: usize) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Schema(format!("row {row}, column {column}: cannot parse {value:?}")))
}

pub fn read_data_csv(path: &Path) -> Result<DataTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let x_cols: Vec<usize> = (0..headers.len()).filter(|&c| headers[c].starts_with('x')).collect();
    if x_cols.is_empty() {
        return Err(Error::Schema(format!("{}: no covariate columns", path.display())));
    }
    let (s1, s2, idx, y_col) = (find("s1"), find("s2"), find("idx"), find("y"));
    if s1.is_some() != s2.is_some() {
        return Err(Error::Schema("spatial data need both s1 and s2".into()));
    }

    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |c: usize| parse_cell(record.get(c).unwrap_or(""), &headers[c], row);
        rows.push(x_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<f64>>>()?);
        if let (Some(a), Some(b)) = (s1, s2) {
            points.push([cell(a)?, cell(b)?]);
        } else if let Some(c) = idx {
            let v = cell(c)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Schema(format!("row {row}: idx must be a non-negative integer")));
            }
            labels.push(v as usize);
        } else {
            labels.push(row);
        }
        if let Some(c) = y_col {
            y.push(cell(c)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    let locations = if s1.is_some() {
        Locations::Points(points)
    } else {
        Locations::Index(labels)
    };
    Ok(DataTable {
        locations,
        x_names: x_cols.iter().map(|&c| headers[c].clone()).collect(),
        x: Covariates::from_rows(&rows)?,
        y: y_col.map(|_| y),
    })
}

/// Write labelled rows with extra named columns after the covariates.
pub fn write_columns_csv(
    path: &Path,
    locations: &Locations,
    x: &Covariates,
    extra: &[(&str, &[f64])],
) -> Result<()> {
    let n = x.n();
    if locations.len() != n || extra.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::DimensionMismatch("columns differ in length".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = match locations {
        Locations::Index(_) => vec!["idx".into()],
        Locations::Points(_) => vec!["s1".into(), "s2".into()],
    };
    if x.p() == 1 {
        header.push("x".into());
    } else {
        header.extend((1..=x.p()).map(|j| format!("x{j}")));
    }
    header.extend(extra.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec: Vec<String> = match locations {
            Locations::Index(ix) => vec![ix[i].to_string()],
            Locations::Points(p) => vec![p[i][0].to_string(), p[i][1].to_string()],
        };
        rec.extend(x.row(i).iter().map(f64::to_string));
        rec.extend(extra.iter().map(|(_, c)| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_data_csv(path: &Path, locations: &Locations, x: &Covariates, y: &[f64]) -> Result<()> {
    write_columns_csv(path, locations, x, &[("y", y)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let loc = Locations::Points(vec![[0.1, 0.2], [1.0 / 3.0, 0.75]]);
        let x = Covariates::from_column(&[0.5, -1e-17]).unwrap();
        let y = [std::f64::consts::PI, -2.5];
        write_data_csv(&p, &loc, &x, &y).unwrap();
        let t = read_data_csv(&p).unwrap();
        assert_eq!(t.locations, loc);
        assert_eq!(t.x, x);
        assert_eq!(t.y.unwrap(), y);
    }

    #[test]
    fn index_and_multiple_covariates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "idx,x1,x2\n3,1,2\n4,5,6\n").unwrap();
        let t = read_data_csv(&p).unwrap();
        assert_eq!(t.locations, Locations::Index(vec![3, 4]));
        assert_eq!(t.x.row(1), &[5.0, 6.0]);
        assert!(t.y.is_none());
        assert!(t.require_y().is_err());
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "idx,x,y\n").unwrap();
        assert!(matches!(read_data_csv(&p), Err(Error::Schema(_))));
        std::fs::write(&p, "idx,y\n1,2\n").unwrap();
        assert!(matches!(read_data_csv(&p), Err(Error::Schema(_))));
        std::fs::write(&p, "idx,x,y\n1,abc,2\n").unwrap();
        assert!(matches!(read_data_csv(&p), Err(Error::Schema(_))));
    }
}
