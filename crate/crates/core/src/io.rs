//! Small file helpers: atomic writes and CSV emission.
//!
//! Every artifact is written to a sibling temporary file and renamed into
//! place, so readers only ever see a complete file or none at all. Floats use
//! Rust's shortest round-trip formatting.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Accumulates CSV text with a fixed header.
#[derive(Debug, Clone)]
pub struct CsvWriter {
    buf: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut buf = header
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(",");
        buf.push('\n');
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row<D: Display>(&mut self, fields: &[D]) {
        debug_assert_eq!(fields.len(), self.columns);
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            self.buf.push_str(&f.to_string());
        }
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }
}

/// Reads a headed CSV of numbers, returning the header and the rows.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some((_, h)) => h.split(',').map(|s| s.trim().to_owned()).collect(),
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (no, line) in lines {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                message: e.to_string(),
            })?;
        if row.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes one `index,f0,f1,...` row per feature vector.
pub fn write_features<F: AsRef<[f64]>>(path: &Path, features: &[F]) -> Result<()> {
    let dim = features.first().map_or(0, |f| f.as_ref().len());
    let mut header = vec!["index".to_owned()];
    header.extend((0..dim).map(|k| format!("f{k}")));
    let mut w = CsvWriter::new(&header);
    for (i, f) in features.iter().enumerate() {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
        let mut row = vec![i.to_string()];
        row.extend(f.iter().map(ToString::to_string));
        w.row(&row);
    }
    w.write(path)
}

/// Reads a file written by [`write_features`]; rows must be indexed 0, 1, ...
pub fn read_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_numeric_csv(path)?;
    if header.first().map(String::as_str) != Some("index") || header.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected `index` followed by feature columns".into(),
        });
    }
    rows.into_iter()
        .enumerate()
        .map(|(k, mut r)| {
            if r[0] != k as f64 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: k + 2,
                    message: format!("expected index {k}, found {}", r[0]),
                });
            }
            r.remove(0);
            Ok(r)
        })
        .collect()
}
