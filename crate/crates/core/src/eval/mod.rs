//! Zero-shot classification protocols, metrics and report export.

mod metrics;
mod projection;

pub use metrics::{harmonic_mean, per_class_accuracy, per_class_top1};
pub use projection::{export_projection, pca2, Projection};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::client::ArtifactBundle;
use crate::datasets::{Dataset, SplitBundle, TeacherMode};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Mlp};
use crate::teacher::Scenario;

/// A network whose output column `i` scores global class `classes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub params: Mlp,
    pub classes: Vec<usize>,
}

impl Classifier {
    pub fn new(params: Mlp, classes: Vec<usize>) -> Result<Self> {
        if params.output_dim() != classes.len() {
            return Err(Error::shape(format!(
                "{} output units for {} classes",
                params.output_dim(),
                classes.len()
            )));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("classifier classes must be strictly increasing"));
        }
        Ok(Classifier { params, classes })
    }

    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        self.params.predict(features)
    }
}

/// Arg-max of each row restricted to `class_space`; ties go to the lowest
/// class index.
pub fn predict(model: &Classifier, features: &Matrix, class_space: &[usize]) -> Result<Vec<usize>> {
    predict_from_scores(&model.scores(features)?, &model.classes, class_space)
}

pub fn predict_from_scores(scores: &Matrix, head: &[usize], class_space: &[usize]) -> Result<Vec<usize>> {
    if scores.cols() != head.len() {
        return Err(Error::shape(format!(
            "{} score columns for a head of {} classes",
            scores.cols(),
            head.len()
        )));
    }
    if class_space.is_empty() {
        return Err(Error::invalid("class space is empty"));
    }
    let mut cols: Vec<(usize, usize)> = Vec::with_capacity(class_space.len());
    for &c in class_space {
        let col = head
            .iter()
            .position(|&h| h == c)
            .ok_or_else(|| Error::invalid(format!("class {c} is not covered by the model head")))?;
        cols.push((c, col));
    }
    cols.sort_unstable();
    cols.dedup();
    Ok(scores
        .row_iter()
        .map(|row| {
            let mut best = cols[0];
            for &(c, col) in &cols[1..] {
                if row[col] > row[best.1] {
                    best = (c, col);
                }
            }
            best.0
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Czsl,
    Gzsl,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Czsl => "czsl",
            Task::Gzsl => "gzsl",
        }
    }
}

/// Run metadata copied into every report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext {
    pub teacher_mode: TeacherMode,
    pub scenario: Scenario,
    pub masked: bool,
    pub seed: u64,
    pub transcript_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub context: ReportContext,
    /// Unseen per-class top-1, percent.
    pub u: f64,
    /// Seen per-class top-1, percent; GZSL only.
    pub s: Option<f64>,
    pub h: Option<f64>,
    pub per_class: BTreeMap<usize, f64>,
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub class_names: Vec<String>,
    /// `confusion[true][pred]` over all dataset classes.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_predictions(
        task: Task,
        context: ReportContext,
        preds: &[usize],
        labels: &[usize],
        seen_classes: &[usize],
        unseen_classes: &[usize],
        class_names: &[String],
    ) -> Result<Self> {
        let c = class_names.len();
        let mut confusion = vec![vec![0u64; c]; c];
        for (&p, &l) in preds.iter().zip(labels) {
            if p >= c || l >= c {
                return Err(Error::invalid(format!("class index outside 0..{c}")));
            }
            confusion[l][p] += 1;
        }
        let all: Vec<usize> = (0..c).collect();
        let per_class = per_class_accuracy(preds, labels, &all)?;
        let u = per_class_top1(preds, labels, unseen_classes)?;
        let (s, h) = match task {
            Task::Czsl => (None, None),
            Task::Gzsl => {
                let s = per_class_top1(preds, labels, seen_classes)?;
                (Some(s), Some(harmonic_mean(u, s)?))
            }
        };
        Ok(EvalReport {
            task,
            context,
            u,
            s,
            h,
            per_class,
            seen_classes: seen_classes.to_vec(),
            unseen_classes: unseen_classes.to_vec(),
            class_names: class_names.to_vec(),
            confusion,
        })
    }

    /// Macro accuracy over `classes` recomputed from the confusion counts.
    pub fn accuracy_from_confusion(&self, classes: &[usize]) -> Option<f64> {
        let accs: Vec<f64> = classes
            .iter()
            .filter_map(|&c| {
                let n: u64 = self.confusion[c].iter().sum();
                (n > 0).then(|| self.confusion[c][c] as f64 / n as f64)
            })
            .collect();
        (!accs.is_empty()).then(|| 100.0 * accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// `key: value` header, per-class table and a csv confusion block.
    pub fn to_text(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let ctx = &self.context;
        let _ = writeln!(out, "task: {}", self.task.as_str());
        let _ = writeln!(out, "teacher_mode: {}", ctx.teacher_mode.as_str());
        let _ = writeln!(out, "scenario: {}", ctx.scenario.as_str());
        let _ = writeln!(out, "masked: {}", ctx.masked);
        let _ = writeln!(out, "u: {}", pct(Some(self.u)));
        let _ = writeln!(out, "s: {}", pct(self.s));
        let _ = writeln!(out, "H: {}", pct(self.h));
        let _ = writeln!(out, "seen_classes: {}", list(&self.seen_classes));
        let _ = writeln!(out, "unseen_classes: {}", list(&self.unseen_classes));
        let _ = writeln!(out, "seed: {}", ctx.seed);
        let _ = writeln!(out, "transcript_digest: {}", ctx.transcript_digest);
        out.push_str("\n[per_class]\nclass,name,accuracy\n");
        for (&c, acc) in &self.per_class {
            let _ = writeln!(out, "{c},{},{acc:.2}", self.class_names[c]);
        }
        out.push_str("\n[confusion]\ntrue\\pred");
        for c in 0..self.confusion.len() {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{c}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn context(bundle: &ArtifactBundle, masked: bool) -> ReportContext {
    ReportContext {
        teacher_mode: bundle.teacher_mode,
        scenario: bundle.scenario,
        masked,
        seed: bundle.seed,
        transcript_digest: bundle.transcript_digest(),
    }
}

fn check_mode(bundle: &ArtifactBundle, split: &SplitBundle) -> Result<()> {
    if bundle.teacher_mode != split.teacher_mode {
        return Err(Error::invalid(format!(
            "artifacts were trained for a {} teacher, split is {}",
            bundle.teacher_mode.as_str(),
            split.teacher_mode.as_str()
        )));
    }
    Ok(())
}

/// Conventional zero-shot evaluation on the unseen evaluation rows. The
/// transductive student predicts over every class.
pub fn eval_czsl(bundle: &ArtifactBundle, split: &SplitBundle, dataset: &Dataset) -> Result<EvalReport> {
    eval_czsl_with(bundle, split, dataset, false)
}

/// As [`eval_czsl`]; `masked` restricts the transductive student to the
/// unseen classes.
pub fn eval_czsl_with(
    bundle: &ArtifactBundle,
    split: &SplitBundle,
    dataset: &Dataset,
    masked: bool,
) -> Result<EvalReport> {
    check_mode(bundle, split)?;
    let (x, labels) = dataset.subset(&split.client_eval_unseen);
    let preds = match split.teacher_mode {
        TeacherMode::Transductive => {
            let space = if masked {
                split.unseen_classes.clone()
            } else {
                split.all_classes()
            };
            predict(&bundle.student, &x, &space)?
        }
        TeacherMode::Inductive => {
            let clf = bundle
                .classifier_czsl
                .as_ref()
                .ok_or_else(|| Error::invalid("inductive artifacts lack the unseen-class classifier"))?;
            predict(clf, &x, &split.unseen_classes)?
        }
    };
    let masked = masked || split.teacher_mode == TeacherMode::Inductive;
    EvalReport::from_predictions(
        Task::Czsl,
        context(bundle, masked),
        &preds,
        &labels,
        &split.seen_classes,
        &split.unseen_classes,
        dataset.class_names(),
    )
}

/// Generalised zero-shot evaluation over seen and unseen evaluation rows.
pub fn eval_gzsl(bundle: &ArtifactBundle, split: &SplitBundle, dataset: &Dataset) -> Result<EvalReport> {
    check_mode(bundle, split)?;
    let rows: Vec<usize> = split
        .client_eval_seen
        .iter()
        .chain(&split.client_eval_unseen)
        .copied()
        .collect();
    let (x, labels) = dataset.subset(&rows);
    let space = split.all_classes();
    let model = match split.teacher_mode {
        TeacherMode::Transductive => &bundle.student,
        TeacherMode::Inductive => bundle
            .classifier_gzsl
            .as_ref()
            .ok_or_else(|| Error::invalid("inductive artifacts lack the all-class classifier"))?,
    };
    let preds = predict(model, &x, &space)?;
    EvalReport::from_predictions(
        Task::Gzsl,
        context(bundle, false),
        &preds,
        &labels,
        &split.seen_classes,
        &split.unseen_classes,
        dataset.class_names(),
    )
}
