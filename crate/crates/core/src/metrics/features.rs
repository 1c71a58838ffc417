//! Feature matrices and their text file layout.
//!
//! ```text
//! modinv-features v1
//! count <rows>
//! dim <columns>
//! tag <real|generated>
//! labels <label per row ...>   (or `labels none`)
//! <row 0: dim floats separated by spaces>
//! ...
//! ```
//! Floats are written in shortest round-trip form, so reading a written file
//! reproduces the matrix bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Real,
    Generated,
}

impl FeatureSource {
    fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Real => "real",
            FeatureSource::Generated => "generated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    pub source: FeatureSource,
    pub labels: Option<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, source: FeatureSource, labels: Option<Vec<usize>>) -> Result<Self> {
        ensure!(!rows.is_empty(), "feature matrix needs at least one row");
        let dim = rows[0].len();
        ensure!(dim > 0, "feature dimension must be positive");
        ensure!(
            rows.iter().all(|r| r.len() == dim),
            "feature rows have inconsistent dimensions"
        );
        ensure!(
            rows.iter().flatten().all(|v| v.is_finite()),
            "feature matrix contains non-finite values"
        );
        if let Some(l) = &labels {
            ensure!(l.len() == rows.len(), "one label per row required");
        }
        Ok(Self {
            dim,
            data: rows.into_iter().flatten().collect(),
            source,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Rows whose label equals `class`.
    pub fn class_rows(&self, class: usize) -> Vec<&[f64]> {
        match &self.labels {
            Some(l) => self
                .rows()
                .zip(l)
                .filter(|(_, &lab)| lab == class)
                .map(|(r, _)| r)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone().unwrap_or_default();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "modinv-features v1");
        let _ = writeln!(s, "count {}", self.len());
        let _ = writeln!(s, "dim {}", self.dim);
        let _ = writeln!(s, "tag {}", self.source.as_str());
        match &self.labels {
            Some(l) => {
                let joined: Vec<String> = l.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "labels {}", joined.join(" "));
            }
            None => {
                let _ = writeln!(s, "labels none");
            }
        }
        for row in self.rows() {
            let joined: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", joined.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: String| Error::Parse {
            path: "<features>".into(),
            message: m,
        };
        let mut lines = text.lines();
        if lines.next() != Some("modinv-features v1") {
            return Err(perr("missing `modinv-features v1` header".into()));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| perr(format!("missing `{name}` line")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
                .map(str::to_string)
                .ok_or_else(|| perr(format!("expected `{name}`, found `{line}`")))
        };
        let count: usize = field("count")?.parse().map_err(|e| perr(format!("count: {e}")))?;
        let dim: usize = field("dim")?.parse().map_err(|e| perr(format!("dim: {e}")))?;
        let source = match field("tag")?.as_str() {
            "real" => FeatureSource::Real,
            "generated" => FeatureSource::Generated,
            other => return Err(perr(format!("unknown tag `{other}`"))),
        };
        let labels_line = field("labels")?;
        let labels = if labels_line == "none" {
            None
        } else {
            Some(
                labels_line
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().map_err(|e| perr(format!("label: {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let rows: Vec<Vec<f64>> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| perr(format!("value `{t}`: {e}"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        if rows.len() != count {
            return Err(perr(format!("header says {count} rows, found {}", rows.len())));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(perr(format!("every row must have {dim} values")));
        }
        FeatureMatrix::new(rows, source, labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}
