//! CSV and TOML artifacts. Every file starts with a provenance comment
//! `# config_hash=<hex> seed=<n>`; files are written to a temporary name and
//! renamed so readers never see partial output.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::PipelineError;

/// The configuration hash and seed a file was produced with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.trim().strip_prefix('#')?.trim();
        let mut hash = None;
        let mut seed = None;
        for part in rest.split_whitespace() {
            if let Some(v) = part.strip_prefix("config_hash=") {
                hash = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        Some(Provenance {
            config_hash: hash?,
            seed: seed?,
        })
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_f64(s: &str, path: &Path) -> Result<f64, PipelineError> {
    s.trim()
        .parse()
        .map_err(|_| PipelineError::io(path, format!("invalid number {s:?}")))
}

pub fn parse_usize(s: &str, path: &Path) -> Result<usize, PipelineError> {
    s.trim()
        .parse()
        .map_err(|_| PipelineError::io(path, format!("invalid integer {s:?}")))
}

/// Writes `bytes` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e.to_string()))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e.to_string()))
}

pub fn csv_bytes<I, R>(prov: &Provenance, header: &[String], rows: I) -> Result<Vec<u8>, PipelineError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut buf = prov.header_line().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let err = |e: csv::Error| PipelineError::Internal(e.to_string());
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|e| PipelineError::Internal(e.to_string()))?;
    }
    Ok(buf)
}

pub fn write_csv<I, R>(path: &Path, prov: &Provenance, header: &[String], rows: I) -> Result<(), PipelineError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    write_atomic(path, &csv_bytes(prov, header, rows)?)
}

/// A parsed CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub provenance: Option<Provenance>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_csv(path: &Path) -> Result<Table, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e.to_string()))?;
    let provenance = text.lines().next().and_then(Provenance::parse);
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| PipelineError::io(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| PipelineError::io(path, e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table {
        provenance,
        header,
        rows,
    })
}

/// Serializes `value` as TOML behind the provenance comment.
pub fn write_toml<T: serde::Serialize>(path: &Path, prov: &Provenance, value: &T) -> Result<(), PipelineError> {
    let body = toml::to_string(value).map_err(|e| PipelineError::Internal(e.to_string()))?;
    write_atomic(path, format!("{}{body}", prov.header_line()).as_bytes())
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e.to_string()))?;
    toml::from_str(&text).map_err(|e| PipelineError::io(path, e.to_string()))
}

/// Appends rows to a CSV that is being built incrementally.
pub struct AppendWriter {
    file: fs::File,
}

impl AppendWriter {
    /// Opens `path` for appending, writing the provenance and header when
    /// the file is new.
    pub fn open(path: &Path, prov: &Provenance, header: &[String]) -> Result<Self, PipelineError> {
        let exists = path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e.to_string()))?;
        if !exists {
            let bytes = csv_bytes(prov, header, std::iter::empty::<Vec<String>>())?;
            file.write_all(&bytes).map_err(|e| PipelineError::io(path, e.to_string()))?;
        }
        Ok(AppendWriter { file })
    }

    pub fn append(&mut self, row: &[String]) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(row).map_err(|e| PipelineError::Internal(e.to_string()))?;
            w.flush().map_err(|e| PipelineError::Internal(e.to_string()))?;
        }
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.flush())
            .map_err(|e| PipelineError::Internal(e.to_string()))
    }
}
