//! The data-owner side: teacher training, regularizer fitting and the
//! feedback service.

mod regularizer;
mod risk;
mod server;

pub use regularizer::{
    fit_regularizer, DiagGaussian, RegularizerKind, RegularizerState, MMD_REFERENCE_CAP, VARIANCE_FLOOR,
};
pub use risk::{Direction, MessageKind, RiskEntry, RiskLog, RiskTag, Scenario};
pub use server::{export_weights, feedback, TeacherServer};

use rand::seq::SliceRandom;

use crate::datasets::{Dataset, SplitBundle};
use crate::error::{Error, Result};
use crate::numkit::{adam_step, loss_ce, softmax, Activation, AdamState, LayerSpec, Matrix, Mlp, Role};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden: vec![1024, 512],
            epochs: 50,
            batch_size: 64,
            learning_rate: crate::numkit::DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

/// Layer stack for a classifier with LeakyReLU hidden layers.
pub fn classifier_layers(input: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    let mut specs: Vec<LayerSpec> = dims.windows(2).map(|w| LayerSpec::leaky(w[0], w[1])).collect();
    specs.push(LayerSpec::new(*dims.last().unwrap(), classes, Activation::Identity));
    specs
}

/// A trained teacher. Output column `i` scores `class_space[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub params: Mlp,
    pub class_space: Vec<usize>,
    pub train_accuracy: f64,
    pub loss_trace: Vec<f64>,
}

impl TeacherModel {
    pub fn column_of(&self, class: usize) -> Option<usize> {
        self.class_space.binary_search(&class).ok()
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }
}

/// Trains the teacher with cross-entropy and Adam on the split's teacher rows.
pub fn train_teacher(dataset: &Dataset, split: &SplitBundle, cfg: &TeacherConfig) -> Result<TeacherModel> {
    if split.teacher_train.is_empty() {
        return Err(Error::invalid("teacher training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let class_space = split.teacher_classes();
    let specs = classifier_layers(dataset.dim_x(), &cfg.hidden, class_space.len());
    let mut params = Mlp::init(&specs, Role::Teacher, seed::derive(cfg.seed, "teacher/init"))?;
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut rng = seed::rng(seed::derive(cfg.seed, "teacher/shuffle"));

    let column = |class: usize| {
        class_space
            .binary_search(&class)
            .expect("teacher row outside class space")
    };
    let mut order = split.teacher_train.clone();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = dataset.subset(chunk);
            let cols: Vec<usize> = labels.iter().map(|&l| column(l)).collect();
            let (logits, cache) = params.forward(&x)?;
            let (loss, dlogits) = loss_ce(&softmax(&logits), &cols)?;
            let (grads, _) = params.backward(&cache, &dlogits)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += loss * chunk.len() as f64;
        }
        loss_trace.push(total / order.len() as f64);
    }

    let (x, labels) = dataset.subset(&split.teacher_train);
    let preds = params.predict(&x)?.argmax_rows();
    let correct = preds.iter().zip(&labels).filter(|(&p, &l)| class_space[p] == l).count();
    Ok(TeacherModel {
        params,
        class_space,
        train_accuracy: correct as f64 / labels.len() as f64,
        loss_trace,
    })
}

/// One uploaded generated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRequest {
    pub scenario: Scenario,
    pub batch: Matrix,
    pub cond_labels: Vec<usize>,
    pub want_softmax: bool,
    pub want_ce_grad: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeFeedback {
    pub value: f64,
    /// Gradient of the mean cross-entropy w.r.t. the uploaded batch.
    pub grad: Matrix,
}

/// Server answer to one uploaded batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackResponse {
    /// Global class id of each softmax column.
    pub class_space: Vec<usize>,
    pub softmax: Option<Matrix>,
    pub reg_value: f64,
    pub reg_grad: Matrix,
    pub ce: Option<CeFeedback>,
}

impl FeedbackResponse {
    pub const SOFTMAX_RISK: RiskTag = RiskTag::Low;
    pub const REGULARIZER_RISK: RiskTag = RiskTag::Low;
    pub const CE_GRAD_RISK: RiskTag = RiskTag::Mid;

    /// Risk tag per present field.
    pub fn risk_tags(&self) -> Vec<(&'static str, RiskTag)> {
        let mut tags = Vec::new();
        if self.softmax.is_some() {
            tags.push(("softmax", Self::SOFTMAX_RISK));
        }
        tags.push(("reg_value", Self::REGULARIZER_RISK));
        tags.push(("reg_grad", Self::REGULARIZER_RISK));
        if self.ce.is_some() {
            tags.push(("ce_value", Self::CE_GRAD_RISK));
            tags.push(("ce_grad", Self::CE_GRAD_RISK));
        }
        tags
    }

    pub fn message_kind(&self) -> MessageKind {
        if self.ce.is_some() {
            MessageKind::CeGrad
        } else {
            MessageKind::FeedbackResponse
        }
    }
}

/// Computes the feedback for one request. Pure; logging happens in
/// [`feedback`].
pub fn compute_feedback(
    teacher: &TeacherModel,
    reg: &RegularizerState,
    req: &FeedbackRequest,
) -> Result<FeedbackResponse> {
    if req.scenario == Scenario::BlackBox && req.want_ce_grad {
        return Err(Error::protocol(
            crate::protocol::ERR_PROTOCOL,
            "black-box requests cannot ask for the cross-entropy gradient",
        ));
    }
    let batch = &req.batch;
    if batch.cols() != teacher.input_dim() {
        return Err(Error::protocol(
            crate::protocol::ERR_INVALID_REQUEST,
            format!(
                "batch has {} columns, teacher expects {}",
                batch.cols(),
                teacher.input_dim()
            ),
        ));
    }
    if batch.rows() != req.cond_labels.len() || batch.rows() == 0 {
        return Err(Error::protocol(
            crate::protocol::ERR_INVALID_REQUEST,
            format!("{} rows for {} labels", batch.rows(), req.cond_labels.len()),
        ));
    }
    if !batch.is_finite() {
        return Err(Error::protocol(
            crate::protocol::ERR_INVALID_REQUEST,
            "non-finite batch",
        ));
    }
    let mut columns = Vec::with_capacity(req.cond_labels.len());
    for &l in &req.cond_labels {
        columns.push(teacher.column_of(l).ok_or_else(|| {
            Error::protocol(
                crate::protocol::ERR_INVALID_REQUEST,
                format!("class {l} is outside the teacher class space"),
            )
        })?);
    }
    let (logits, cache) = teacher.params.forward(batch)?;
    let probs = softmax(&logits);
    let (reg_value, reg_grad) = reg.value_grad(batch, &req.cond_labels)?;
    let ce = if req.want_ce_grad {
        let (value, dlogits) = loss_ce(&probs, &columns)?;
        let (_, grad) = teacher.params.backward(&cache, &dlogits)?;
        Some(CeFeedback { value, grad })
    } else {
        None
    };
    Ok(FeedbackResponse {
        class_space: teacher.class_space.clone(),
        softmax: req.want_softmax.then_some(probs),
        reg_value,
        reg_grad,
        ce,
    })
}
