//! Class embedding tables and their CSV interchange format.
//!
//! The file is UTF-8 CSV with header `class_id,e0,e1,...,e{d-1}` and one
//! row per class. Values are written with Rust's shortest round-trip float
//! formatting, so a write followed by a read reproduces every bit.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A class label. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(Arc<str>);

impl ClassLabel {
    pub fn new(s: &str) -> Self {
        Self(Arc::from(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassLabel {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Map from class label to a `dim`-dimensional feature vector. Insertion
/// order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    labels: Vec<ClassLabel>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<ClassLabel, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            labels: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Builds a table from `(label, vector)` pairs.
    pub fn from_entries<I, L>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (L, Vec<f64>)>,
        L: Into<ClassLabel>,
    {
        let mut table = Self::new(dim);
        for (label, v) in entries {
            table.insert(label.into(), v)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, label: ClassLabel, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.index.contains_key(&label) {
            return Err(Error::DuplicateClass(label.to_string()));
        }
        self.index.insert(label.clone(), self.labels.len());
        self.labels.push(label);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn get(&self, label: &ClassLabel) -> Option<&[f64]> {
        self.index.get(label).map(|&i| self.vectors[i].as_slice())
    }

    /// Like [`get`](Self::get) but reports a missing class as an error.
    pub fn require(&self, label: &ClassLabel) -> Result<&[f64]> {
        self.get(label)
            .ok_or_else(|| Error::MissingEmbedding(label.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ClassLabel, &[f64])> {
        self.labels
            .iter()
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Every vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vectors {
            v.iter_mut().for_each(|x| *x *= c);
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::EmptyInput("embedding file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"class_id") || cols.len() < 2 {
            return Err(Error::Parse {
                line: hline,
                message: "header must be `class_id,e0,...`".into(),
            });
        }
        for (i, c) in cols[1..].iter().enumerate() {
            if *c != format!("e{i}") {
                return Err(Error::Parse {
                    line: hline,
                    message: format!("expected column `e{i}`, found `{c}`"),
                });
            }
        }
        let dim = cols.len() - 1;
        let mut table = Self::new(dim);
        for (line, row) in lines {
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::RaggedRow {
                    line,
                    expected: dim + 1,
                    found: fields.len(),
                });
            }
            let vector = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("`{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line,
                    message: "non-finite value".into(),
                });
            }
            table.insert(ClassLabel::new(fields[0]), vector)?;
        }
        if table.is_empty() {
            return Err(Error::EmptyInput("embedding file has no rows"));
        }
        Ok(table)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("class_id");
        for i in 0..self.dim {
            out.push_str(&format!(",e{i}"));
        }
        out.push('\n');
        for (label, v) in self.iter() {
            out.push_str(label.as_str());
            for x in v {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Reads an embedding table from a CSV file.
pub fn ingest_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path)?;
    EmbeddingTable::parse_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_row_file() {
        let t = EmbeddingTable::parse_csv("class_id,e0,e1\na,1,0\nb,0,1\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get(&"a".into()).unwrap(), &[1.0, 0.0]);
        assert_eq!(t.get(&"b".into()).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert_eq!(
            EmbeddingTable::parse_csv("").unwrap_err(),
            Error::EmptyInput("embedding file")
        );
        assert!(EmbeddingTable::parse_csv("class_id,e0\n").is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = EmbeddingTable::parse_csv("class_id,e0,e1\na,1,0\nb,zz,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = EmbeddingTable::parse_csv("class_id,e0,e1\na,1,0\nb,1\n").unwrap_err();
        assert_eq!(
            err,
            Error::RaggedRow {
                line: 3,
                expected: 3,
                found: 2
            }
        );
        let err = EmbeddingTable::parse_csv("class_id,e0\na,1\na,2\n").unwrap_err();
        assert_eq!(err, Error::DuplicateClass("a".into()));
        assert!(EmbeddingTable::parse_csv("label,e0\na,1\n").is_err());
    }

    #[test]
    fn write_then_read_is_bit_exact() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "emb", 0);
        let table = EmbeddingTable::from_entries(
            16,
            (0..50).map(|i| {
                let v: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
                (ClassLabel::new(&format!("class{i}")), v)
            }),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        table.write_csv(&path).unwrap();
        let back = ingest_embeddings(&path).unwrap();
        assert_eq!(back, table);
        for ((_, a), (_, b)) in table.iter().zip(back.iter()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
