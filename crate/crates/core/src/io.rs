//! File formats: shape manifests, constraint files, label tables and dense
//! matrices.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub mesh: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub shapes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.shapes {
            if e.mesh.is_relative() {
                e.mesh = base.join(&e.mesh);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.shapes {
            if e.id.is_empty() || e.id.contains([',', '/', '\\', '\n']) {
                return Err(Error::Config(format!("invalid shape id {:?}", e.id)));
            }
            if !seen.insert(&e.id) {
                return Err(Error::Config(format!("duplicate shape id {}", e.id)));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn ids(&self) -> Vec<String> {
        self.shapes.iter().map(|e| e.id.clone()).collect()
    }
}

/// Parsed constraints file: `T a b c` triplets and `L shape_id class` labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintFile {
    pub triplets: Vec<[String; 3]>,
    pub labels: BTreeMap<String, String>,
}

impl ConstraintFile {
    pub fn parse(text: &str) -> Result<ConstraintFile> {
        let mut out = ConstraintFile::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse("constraints", format!("line {}: {line:?}", lineno + 1));
            match parts.as_slice() {
                ["T", a, b, c] => {
                    if a == b || b == c || a == c {
                        return Err(bad());
                    }
                    out.triplets.push([a.to_string(), b.to_string(), c.to_string()]);
                }
                ["L", id, class] => {
                    if let Some(prev) = out.labels.insert(id.to_string(), class.to_string()) {
                        if prev != *class {
                            return Err(Error::parse("constraints", format!("shape {id} labeled {prev} and {class}")));
                        }
                    }
                }
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<ConstraintFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConstraintFile::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for [a, b, c] in &self.triplets {
            s.push_str(&format!("T {a} {b} {c}\n"));
        }
        for (id, class) in &self.labels {
            s.push_str(&format!("L {id} {class}\n"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Two-column CSV with a header, e.g. `shape_id,style`.
pub fn read_table(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.splitn(2, ',');
        match (it.next(), it.next()) {
            (Some(a), Some(b)) => rows.push((a.trim().to_string(), b.trim().to_string())),
            _ => return Err(Error::parse(path.display().to_string(), format!("line {}", i + 1))),
        }
    }
    Ok(rows)
}

pub fn write_table(path: &Path, header: &str, rows: &[(String, String)]) -> Result<()> {
    let mut s = format!("{header}\n");
    for (a, b) in rows {
        s.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
}

/// One JSON header line followed by row-major little-endian `f64` data.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let header = MatrixHeader { rows: m.nrows(), cols: m.ncols(), dtype: "f64le".into(), order: "row-major".into() };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    buf.reserve(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(f);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: MatrixHeader = serde_json::from_str(line.trim())?;
    if header.dtype != "f64le" || header.order != "row-major" {
        return Err(Error::parse(path.display().to_string(), "unsupported matrix encoding"));
    }
    let mut data = Vec::new();
    reader.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    if data.len() != header.rows * header.cols * 8 {
        return Err(Error::parse(path.display().to_string(), "matrix payload has the wrong length"));
    }
    let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_row_slice(header.rows, header.cols, &values))
}
