use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::train::init_student;
use super::{
    generate, init_generator, train_black, train_generator_white, train_inductive_classifier, train_student, verify,
    TrainConfig, VerifiedBatch,
};
use crate::datasets::{SemanticTable, TeacherMode};
use crate::error::{Error, Result};
use crate::eval::Classifier;
use crate::numkit::{Matrix, Mlp};
use crate::protocol::{Channel, RemoteTeacher};
use crate::teacher::{FeedbackRequest, RiskLog, Scenario};

/// One line of a training trace. `total = loss + alpha * reg`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub phase: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub reg: f64,
    pub total: f64,
}

impl TraceRow {
    pub fn new(phase: &'static str, epoch: usize, loss: f64, reg: f64, alpha: f64) -> Self {
        TraceRow {
            phase,
            epoch,
            loss,
            reg,
            total: loss + alpha * reg,
        }
    }
}

/// What the client knows about the task: feature width and which classes
/// are seen or unseen. No feature values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub dim_x: usize,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl ClassSplit {
    pub fn all(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.seen.iter().chain(&self.unseen).copied().collect();
        all.sort_unstable();
        all
    }

    /// Classes the teacher was trained on.
    pub fn teacher_classes(&self, mode: TeacherMode) -> Vec<usize> {
        match mode {
            TeacherMode::Transductive => self.all(),
            TeacherMode::Inductive => {
                let mut s = self.seen.clone();
                s.sort_unstable();
                s
            }
        }
    }
}

/// Generates, uploads and verifies `per_class_count` rows per class,
/// regenerating for classes below `min_verified_per_class` for up to
/// `regen_retry_cap` further rounds. Remaining deficits are reported in
/// `shortfall`. With verification disabled every row is kept after one round.
pub fn ensure_quota<C: Channel>(
    gen: &Mlp,
    teacher: &mut RemoteTeacher<C>,
    semantics: &SemanticTable,
    classes: &[usize],
    cfg: &TrainConfig,
) -> Result<VerifiedBatch> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes to verify"));
    }
    let mut features: Option<Matrix> = None;
    let mut softmaxes: Option<Matrix> = None;
    let mut labels = Vec::new();
    let mut class_space: Option<Vec<usize>> = None;
    let mut generated = 0usize;
    let mut kept: BTreeMap<usize, usize> = classes.iter().map(|&c| (c, 0)).collect();
    let mut pending = classes.to_vec();

    for round in 0..=cfg.regen_retry_cap {
        let noise = cfg.noise.fork("quota", round as u64);
        let batch = generate(gen, semantics, &pending, cfg.per_class_count, &noise)?;
        let n = batch.features.rows();
        let mut soft: Option<Matrix> = None;
        let mut start = 0;
        while start < n {
            let rows: Vec<usize> = (start..(start + cfg.upload_chunk).min(n)).collect();
            let resp = teacher.feedback(&FeedbackRequest {
                scenario: cfg.scenario,
                batch: batch.features.select_rows(&rows),
                cond_labels: rows.iter().map(|&r| batch.cond_labels[r]).collect(),
                want_softmax: true,
                want_ce_grad: false,
            })?;
            match &class_space {
                Some(cs) if *cs != resp.class_space => {
                    return Err(Error::protocol(
                        crate::protocol::ERR_PROTOCOL,
                        "teacher class space changed",
                    ))
                }
                Some(_) => {}
                None => class_space = Some(resp.class_space.clone()),
            }
            let p = resp
                .softmax
                .ok_or_else(|| Error::protocol(crate::protocol::ERR_PROTOCOL, "verification response lacks softmax"))?;
            soft = Some(match soft {
                Some(s) => s.vstack(&p)?,
                None => p,
            });
            start += rows.len();
        }
        let soft = soft.expect("at least one row generated");
        let cs = class_space.clone().expect("class space from first response");
        let part = if cfg.verify {
            verify(&batch, &soft, &cs)?
        } else {
            VerifiedBatch {
                features: batch.features.clone(),
                labels: batch.cond_labels.clone(),
                teacher_softmax: soft,
                class_space: cs,
                kept_fraction: 1.0,
                shortfall: Vec::new(),
            }
        };
        generated += n;
        for &l in &part.labels {
            *kept.get_mut(&l).expect("label from pending classes") += 1;
        }
        labels.extend_from_slice(&part.labels);
        features = Some(match features {
            Some(f) => f.vstack(&part.features)?,
            None => part.features,
        });
        softmaxes = Some(match softmaxes {
            Some(s) => s.vstack(&part.teacher_softmax)?,
            None => part.teacher_softmax,
        });
        pending = kept
            .iter()
            .filter(|&(_, &k)| k < cfg.min_verified_per_class)
            .map(|(&c, _)| c)
            .collect();
        if !cfg.verify || pending.is_empty() {
            break;
        }
    }
    let shortfall = if cfg.verify {
        pending.iter().map(|c| (*c, kept[c])).collect()
    } else {
        Vec::new()
    };
    Ok(VerifiedBatch {
        features: features.expect("at least one round"),
        teacher_softmax: softmaxes.expect("at least one round"),
        kept_fraction: labels.len() as f64 / generated as f64,
        labels,
        class_space: class_space.expect("at least one response"),
        shortfall,
    })
}

/// Everything a client run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactBundle {
    pub scenario: Scenario,
    pub teacher_mode: TeacherMode,
    pub seed: u64,
    pub gen: Mlp,
    pub student: Classifier,
    /// Inductive only: classifier over the unseen classes.
    pub classifier_czsl: Option<Classifier>,
    /// Inductive only: classifier over seen and unseen classes.
    pub classifier_gzsl: Option<Classifier>,
    pub trace: Vec<TraceRow>,
    pub transcript: RiskLog,
    pub kept_fraction: f64,
    pub shortfall: Vec<(usize, usize)>,
}

impl ArtifactBundle {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("phase,epoch,loss,reg,total\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{},{},{},{}", r.phase, r.epoch, r.loss, r.reg, r.total);
        }
        out
    }

    pub fn transcript_digest(&self) -> String {
        hex::encode(Sha256::digest(self.transcript.to_json().as_bytes()))
    }

    /// Hash over weights, traces and transcript.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.gen.to_bytes());
        h.update(self.student.params.to_bytes());
        for c in [&self.classifier_czsl, &self.classifier_gzsl].into_iter().flatten() {
            h.update(c.params.to_bytes());
        }
        h.update(self.trace_csv().as_bytes());
        h.update(self.transcript.to_json().as_bytes());
        hex::encode(h.finalize())
    }

    /// Writes `gen.azw`, `student.azw`, `classifier.azw` (all classes) and
    /// `classifier_czsl.azw` when present, `trace.csv` and `transcript.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("gen.azw"), self.gen.to_bytes())?;
        fs::write(dir.join("student.azw"), self.student.params.to_bytes())?;
        if let Some(c) = &self.classifier_gzsl {
            fs::write(dir.join("classifier.azw"), c.params.to_bytes())?;
        }
        if let Some(c) = &self.classifier_czsl {
            fs::write(dir.join("classifier_czsl.azw"), c.params.to_bytes())?;
        }
        fs::write(dir.join("trace.csv"), self.trace_csv())?;
        fs::write(dir.join("transcript.json"), self.transcript.to_json())?;
        Ok(())
    }
}

/// Full client procedure: generator training in the configured scenario,
/// verification with quota, student distillation, and for an inductive
/// teacher the generated-feature classifiers. Use a fresh `RemoteTeacher`
/// per run; its transcript becomes the bundle's.
pub fn run_algorithm1<C: Channel>(
    teacher: &mut RemoteTeacher<C>,
    semantics: &SemanticTable,
    classes: &ClassSplit,
    cfg: &TrainConfig,
) -> Result<ArtifactBundle> {
    cfg.validate()?;
    let teacher_classes = classes.teacher_classes(cfg.teacher_mode);
    if teacher_classes.is_empty() {
        return Err(Error::invalid("teacher has no classes"));
    }
    let mut gen = init_generator(cfg.noise.dim, semantics.dim(), classes.dim_x, cfg)?;
    let mut student = init_student(classes.dim_x, teacher_classes.len(), cfg)?;
    let mut trace = match cfg.scenario {
        Scenario::WhiteBox => train_generator_white(&mut gen, teacher, semantics, &teacher_classes, cfg)?,
        Scenario::BlackBox => train_black(&mut gen, &mut student, teacher, semantics, &teacher_classes, cfg)?,
    };
    let verified = ensure_quota(&gen, teacher, semantics, &teacher_classes, cfg)?;
    trace.extend(train_student(&mut student, &verified, cfg)?);

    let (classifier_czsl, classifier_gzsl) = match cfg.teacher_mode {
        TeacherMode::Transductive => (None, None),
        TeacherMode::Inductive => {
            let (czsl, t1, _) = train_inductive_classifier(&gen, semantics, &classes.unseen, cfg)?;
            let (gzsl, t2, _) = train_inductive_classifier(&gen, semantics, &classes.all(), cfg)?;
            trace.extend(t1);
            trace.extend(t2);
            (Some(czsl), Some(gzsl))
        }
    };
    Ok(ArtifactBundle {
        scenario: cfg.scenario,
        teacher_mode: cfg.teacher_mode,
        seed: cfg.seed,
        gen,
        student: Classifier::new(student, verified.class_space.clone())?,
        classifier_czsl,
        classifier_gzsl,
        trace,
        transcript: teacher.transcript().clone(),
        kept_fraction: verified.kept_fraction,
        shortfall: verified.shortfall,
    })
}
