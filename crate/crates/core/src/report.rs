//! Versioned JSON and CSV outputs.
//!
//! Every file carries `schema_version` and the name and hash of the manifest of the run that
//! wrote it. JSON files wrap their payload in [`Report`]; CSV files start with one `#` comment
//! line holding the same fields.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Serde adapter for floats that may be infinite or NaN. JSON has no such numbers, so they
/// are written as the strings "inf", "-inf" and "nan".
pub mod float_token {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Int(i64),
        Tok(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Int(i) => Ok(i as f64),
            Repr::Tok(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number or \"inf\", got \"{other}\""))),
            },
        }
    }
}

/// What every output file points back to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRef {
    /// File name of the manifest, relative to the output directory.
    pub manifest: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub kind: String,
    pub manifest: String,
    pub config_hash: String,
    pub data: T,
}

impl<T> Report<T> {
    pub fn new(kind: &str, mref: &ManifestRef, data: T) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            manifest: mref.manifest.clone(),
            config_hash: mref.config_hash.clone(),
            data,
        }
    }
}

fn ser_err(e: impl std::fmt::Display) -> Error {
    Error::Serialization(e.to_string())
}

pub fn to_json_string<T: Serialize>(report: &Report<T>) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(ser_err)
}

pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<Report<T>> {
    let r: Report<T> = serde_json::from_str(s).map_err(ser_err)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(Error::Serialization(format!("unsupported schema_version {}", r.schema_version)));
    }
    Ok(r)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Report<T>> {
    from_json_str(&fs::read_to_string(path)?)
}

/// Plot-ready numeric table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn fmt_cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_csv_to<W: Write>(w: W, table: &Table, kind: &str, mref: &ManifestRef) -> Result<()> {
    let mut w = w;
    writeln!(w, "# schema_version={SCHEMA_VERSION} kind={kind} manifest={} config_hash={}", mref.manifest, mref.config_hash)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(&table.header).map_err(ser_err)?;
    for row in &table.rows {
        csv.write_record(row.iter().map(|&x| fmt_cell(x))).map_err(ser_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// Parses a table written by [`write_csv_to`]; returns the comment fields and the table.
pub fn read_csv(path: &Path) -> Result<(Vec<(String, String)>, Table)> {
    let text = fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| Error::Serialization("empty csv".into()))?;
    let meta: Vec<(String, String)> = first
        .trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    let header = rdr.headers().map_err(ser_err)?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(ser_err)?;
        let row = rec
            .iter()
            .map(|c| match c {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => c.parse::<f64>().map_err(ser_err),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((meta, Table { header, rows }))
}

/// Output directory of one run; records every file it writes.
#[derive(Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub mref: ManifestRef,
    pub written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, manifest: &str, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            mref: ManifestRef { manifest: manifest.into(), config_hash: config_hash.into() },
            written: Vec::new(),
        })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, data: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, to_json_string(&Report::new(kind, &self.mref, data))?)?;
        self.written.push(name.into());
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, kind: &str, table: &Table) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let f = fs::File::create(&path)?;
        write_csv_to(std::io::BufWriter::new(f), table, kind, &self.mref)?;
        self.written.push(name.into());
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hminus::RateValue;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Payload {
        rate: RateValue,
        #[serde(with = "float_token")]
        radius: f64,
        values: Vec<f64>,
    }

    fn mref() -> ManifestRef {
        ManifestRef { manifest: "manifest.json".into(), config_hash: "abc".into() }
    }

    #[test]
    fn json_round_trip_keeps_infinite_rates() {
        let p = Payload { rate: RateValue::Infinite, radius: f64::INFINITY, values: vec![0.1, -3.5e-17] };
        let s = to_json_string(&Report::new("test", &mref(), &p)).unwrap();
        let back: Report<Payload> = from_json_str(&s).unwrap();
        assert_eq!(back.data, p);
        assert_eq!(back.manifest, "manifest.json");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let s = r#"{"schema_version":99,"kind":"x","manifest":"m","config_hash":"h","data":1}"#;
        assert!(from_json_str::<i32>(s).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), "manifest.json", "h").unwrap();
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![0.1, f64::INFINITY]);
        t.push(vec![-2.0, 1.0 / 3.0]);
        let path = out.csv("t.csv", "table", &t).unwrap();
        let (meta, back) = read_csv(&path).unwrap();
        assert_eq!(back, t);
        assert!(meta.contains(&("manifest".into(), "manifest.json".into())));
        assert!(meta.contains(&("schema_version".into(), "1".into())));
    }
}
