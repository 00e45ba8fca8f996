use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::table::RateRow;
use crate::error::{Error, Result};

pub const TABLE_HEADER: [&str; 6] = [
    "alpha",
    "beta",
    "gamma",
    "empirical_rate",
    "empirical_stderr",
    "theoretical_rate",
];
pub const TRAJECTORY_HEADER: [&str; 2] = ["step", "value"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// One line of a table CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub empirical_rate: f64,
    pub empirical_stderr: f64,
    pub theoretical_rate: f64,
}

impl From<&RateRow> for TableRecord {
    fn from(r: &RateRow) -> Self {
        TableRecord {
            alpha: r.theta.alpha,
            beta: r.theta.beta,
            gamma: r.theta.gamma,
            empirical_rate: r.empirical_rate,
            empirical_stderr: r.empirical_stderr,
            theoretical_rate: r.theoretical_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub value: f64,
}

fn to_string(buf: Vec<u8>) -> String {
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn table_csv_string(rows: &[TableRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    Ok(to_string(
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?,
    ))
}

pub fn parse_table_csv<R: Read>(reader: R) -> Result<Vec<TableRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TABLE_HEADER) {
        return Err(Error::Dataset(format!("unexpected table header: {headers:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn trajectory_csv_string(values: &[f64]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    for (k, &value) in values.iter().enumerate() {
        w.serialize(TrajectoryPoint { step: k as u64, value })?;
    }
    Ok(to_string(
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?,
    ))
}

/// Parses a `step,value` CSV. Steps must be `0, 1, 2, ...`.
pub fn parse_trajectory_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Dataset(format!("unexpected trajectory header: {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let p: TrajectoryPoint = rec?;
        if p.step != out.len() as u64 {
            return Err(Error::Dataset(format!("expected step {}, found {}", out.len(), p.step)));
        }
        out.push(p.value);
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn write_table_csv(rows: &[TableRecord], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &table_csv_string(rows)?)
}

pub fn read_table_csv(path: impl AsRef<Path>) -> Result<Vec<TableRecord>> {
    parse_table_csv(read_file(path.as_ref())?)
}

pub fn write_trajectory_csv(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &trajectory_csv_string(values)?)
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    parse_trajectory_csv(read_file(path.as_ref())?)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Metadata written next to every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub library: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Sidecar {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Sidecar {
            library: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
        }
    }
}

/// `<out>.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_sidecar(out: &Path, sidecar: &Sidecar) -> Result<PathBuf> {
    let p = sidecar_path(out);
    write_json(sidecar, &p)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(
            table_csv_string(&[]).unwrap(),
            "alpha,beta,gamma,empirical_rate,empirical_stderr,theoretical_rate\n"
        );
        assert!(parse_table_csv(table_csv_string(&[]).unwrap().as_bytes())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn nan_survives_round_trip() {
        let r = TableRecord {
            alpha: 2.0,
            beta: 0.95,
            gamma: 0.1,
            empirical_rate: f64::NAN,
            empirical_stderr: f64::NAN,
            theoretical_rate: 0.05,
        };
        let back = parse_table_csv(table_csv_string(&[r]).unwrap().as_bytes()).unwrap();
        assert!(back[0].empirical_rate.is_nan());
        assert_eq!(back[0].theoretical_rate, 0.05);
    }

    #[test]
    fn bad_headers_and_steps_are_rejected() {
        assert!(parse_table_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(parse_trajectory_csv("step,value\n0,1\n2,3\n".as_bytes()).is_err());
        assert!(parse_trajectory_csv("step,value\n0,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory_csv(&[1.0, 0.5, 0.25], &p).unwrap();
        assert_eq!(read_trajectory_csv(&p).unwrap(), vec![1.0, 0.5, 0.25]);
        let sc = Sidecar::new("couple", 42, serde_json::json!({"n": 3}));
        let sp = write_sidecar(&p, &sc).unwrap();
        let text = fs::read_to_string(sp).unwrap();
        let back: Sidecar = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, 42);
        let missing = dir.path().join("nope").join("x.csv");
        let err = write_table_csv(&[], &missing).unwrap_err();
        assert!(err.to_string().contains("x.csv"));
    }

    proptest! {
        #[test]
        fn table_round_trip_is_exact(v in prop::collection::vec(prop::array::uniform6(-1e6f64..1e6), 0..8)) {
            let rows: Vec<TableRecord> = v.iter().map(|a| TableRecord {
                alpha: a[0], beta: a[1], gamma: a[2],
                empirical_rate: a[3], empirical_stderr: a[4], theoretical_rate: a[5],
            }).collect();
            let back = parse_table_csv(table_csv_string(&rows).unwrap().as_bytes()).unwrap();
            prop_assert_eq!(back, rows);
        }

        #[test]
        fn trajectory_round_trip_is_exact(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..50)) {
            let back = parse_trajectory_csv(trajectory_csv_string(&v).unwrap().as_bytes()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
