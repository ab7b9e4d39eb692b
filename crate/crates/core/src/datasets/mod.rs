//! Dataset model, seen/unseen splits, synthetic benchmarks and feature files.

mod io;
mod split;
mod synthetic;

pub use io::{load_features, save_features, semantics_path, FileFormat};
pub use split::{split_azsl, SplitBundle, SplitOptions, TeacherMode};
pub use synthetic::{make_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticSource {
    Attribute,
    WordEmbedding,
    Synthetic,
}

/// One semantic embedding row per class. The source tag is metadata and
/// does not take part in equality.
#[derive(Debug, Clone)]
pub struct SemanticTable {
    rows: Matrix,
    pub source: SemanticSource,
}

impl PartialEq for SemanticTable {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
    }
}

impl SemanticTable {
    pub fn new(rows: Matrix, source: SemanticSource) -> Result<Self> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(Error::invalid(
                "semantic table needs at least one class and one dimension",
            ));
        }
        if !rows.is_finite() {
            return Err(Error::invalid("semantic table contains non-finite values"));
        }
        Ok(SemanticTable { rows, source })
    }

    pub fn class_count(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn embedding(&self, class: usize) -> Option<&[f64]> {
        (class < self.rows.rows()).then(|| self.rows.row(class))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }
}

/// Real visual features with labels and per-class semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    semantics: SemanticTable,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        semantics: SemanticTable,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.cols() == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if class_names.len() != semantics.class_count() {
            return Err(Error::shape(format!(
                "{} class names for {} semantic rows",
                class_names.len(),
                semantics.class_count()
            )));
        }
        let classes = semantics.class_count();
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Parse {
                row,
                message: format!("label {l} has no semantic row ({classes} classes)"),
            });
        }
        if let Some(row) = (0..features.rows()).find(|&r| features.row(r).iter().any(|v| !v.is_finite())) {
            return Err(Error::Parse {
                row,
                message: "non-finite feature value".into(),
            });
        }
        Ok(Dataset {
            features,
            labels,
            semantics,
            class_names,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn semantics(&self) -> &SemanticTable {
        &self.semantics
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.features.cols()
    }

    pub fn dim_a(&self) -> usize {
        self.semantics.dim()
    }

    pub fn class_count(&self) -> usize {
        self.semantics.class_count()
    }

    /// Row indices of each class, in row order.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Features and labels of the given rows.
    pub fn subset(&self, rows: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }
}

/// Column means of a set of rows.
pub fn mean_of_rows(m: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for &r in rows {
        for (a, b) in mean.iter_mut().zip(m.row(r)) {
            *a += b;
        }
    }
    let n = rows.len().max(1) as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}
