use rand::seq::SliceRandom;

use super::algorithm::TraceRow;
use super::{generate_cached, GenerationBatch, TrainConfig, VerifiedBatch};
use crate::datasets::SemanticTable;
use crate::error::{Error, Result};
use crate::eval::Classifier;
use crate::numkit::{
    adam_step, loss_ce, loss_mse, softmax, softmax_backward, Activation, AdamState, ForwardCache, LayerSpec, Matrix,
    Mlp, MlpGrads, Role,
};
use crate::protocol::{Channel, RemoteTeacher};
use crate::seed;
use crate::teacher::{FeedbackRequest, FeedbackResponse, Scenario};

/// Rows per class in one training batch; at least 2 so per-class batch
/// statistics exist.
fn rows_per_class(batch_size: usize, classes: usize) -> usize {
    batch_size.div_ceil(classes).max(2)
}

fn sample_batch(
    gen: &Mlp,
    semantics: &SemanticTable,
    classes: &[usize],
    cfg: &TrainConfig,
    label: &str,
    epoch: usize,
) -> Result<(GenerationBatch, ForwardCache)> {
    let noise = cfg.noise.fork(label, epoch as u64);
    generate_cached(
        gen,
        semantics,
        classes,
        rows_per_class(cfg.batch_size, classes.len()),
        &noise,
    )
}

fn expect_classes(resp: &FeedbackResponse, expected: &[usize]) -> Result<()> {
    if resp.class_space != expected {
        return Err(Error::protocol(
            crate::protocol::ERR_PROTOCOL,
            format!(
                "teacher answers over classes {:?}, expected {:?}",
                resp.class_space, expected
            ),
        ));
    }
    Ok(())
}

/// Generator gradient from white-box feedback: the feature gradient
/// `ce_grad + alpha * reg_grad` pushed back through the generator.
pub fn generator_white_grads(gen: &Mlp, cache: &ForwardCache, resp: &FeedbackResponse, alpha: f64) -> Result<MlpGrads> {
    let ce = resp
        .ce
        .as_ref()
        .ok_or_else(|| Error::protocol(crate::protocol::ERR_PROTOCOL, "white-box feedback lacks ce_grad"))?;
    let mut g = ce.grad.clone();
    g.add_scaled(&resp.reg_grad, alpha)?;
    Ok(gen.backward(cache, &g)?.0)
}

/// Trains the generator on teacher gradient feedback. One epoch is one
/// generated batch and one Adam step.
pub fn train_generator_white<C: Channel>(
    gen: &mut Mlp,
    teacher: &mut RemoteTeacher<C>,
    semantics: &SemanticTable,
    classes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes to generate"));
    }
    let mut adam = AdamState::new(gen, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.gen_epochs);
    for epoch in 0..cfg.gen_epochs {
        let (batch, cache) = sample_batch(gen, semantics, classes, cfg, "white", epoch)?;
        let resp = teacher.feedback(&FeedbackRequest {
            scenario: Scenario::WhiteBox,
            batch: batch.features,
            cond_labels: batch.cond_labels,
            want_softmax: true,
            want_ce_grad: true,
        })?;
        let grads = generator_white_grads(gen, &cache, &resp, cfg.alpha)?;
        adam_step(gen, &grads, &mut adam)?;
        let ce = resp.ce.as_ref().map_or(0.0, |c| c.value);
        trace.push(TraceRow::new("generator", epoch, ce, resp.reg_value, cfg.alpha));
    }
    Ok(trace)
}

/// Joint black-box gradients for one batch. The teacher softmax rows are
/// constant targets; the features receive the student's input gradient plus
/// `alpha * reg_grad`. Returns `(mse, generator grads, student grads)`.
pub fn black_step_grads(
    gen: &Mlp,
    gen_cache: &ForwardCache,
    student: &Mlp,
    features: &Matrix,
    targets: &Matrix,
    reg_grad: &Matrix,
    alpha: f64,
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let (logits, s_cache) = student.forward(features)?;
    let p = softmax(&logits);
    let (mse, dp) = loss_mse(&p, targets)?;
    let dlogits = softmax_backward(&p, &dp)?;
    let (s_grads, mut dx) = student.backward(&s_cache, &dlogits)?;
    dx.add_scaled(reg_grad, alpha)?;
    let (g_grads, _) = gen.backward(gen_cache, &dx)?;
    Ok((mse, g_grads, s_grads))
}

/// Trains generator and student end to end against teacher softmax outputs.
pub fn train_black<C: Channel>(
    gen: &mut Mlp,
    student: &mut Mlp,
    teacher: &mut RemoteTeacher<C>,
    semantics: &SemanticTable,
    classes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes to generate"));
    }
    if student.output_dim() != classes.len() {
        return Err(Error::shape(format!(
            "student has {} outputs for {} teacher classes",
            student.output_dim(),
            classes.len()
        )));
    }
    let mut gen_adam = AdamState::new(gen, cfg.learning_rate);
    let mut student_adam = AdamState::new(student, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.gen_epochs);
    for epoch in 0..cfg.gen_epochs {
        let (batch, cache) = sample_batch(gen, semantics, classes, cfg, "black", epoch)?;
        let resp = teacher.feedback(&FeedbackRequest {
            scenario: Scenario::BlackBox,
            batch: batch.features.clone(),
            cond_labels: batch.cond_labels,
            want_softmax: true,
            want_ce_grad: false,
        })?;
        expect_classes(&resp, classes)?;
        let targets = resp
            .softmax
            .as_ref()
            .ok_or_else(|| Error::protocol(crate::protocol::ERR_PROTOCOL, "black-box feedback lacks softmax"))?;
        let (mse, g_grads, s_grads) = black_step_grads(
            gen,
            &cache,
            student,
            &batch.features,
            targets,
            &resp.reg_grad,
            cfg.alpha,
        )?;
        adam_step(gen, &g_grads, &mut gen_adam)?;
        adam_step(student, &s_grads, &mut student_adam)?;
        trace.push(TraceRow::new("black", epoch, mse, resp.reg_value, cfg.alpha));
    }
    Ok(trace)
}

pub fn student_layers(dim_x: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    crate::teacher::classifier_layers(dim_x, hidden, classes)
}

pub(crate) fn init_student(dim_x: usize, classes: usize, cfg: &TrainConfig) -> Result<Mlp> {
    Mlp::init(
        &student_layers(dim_x, &cfg.student_hidden, classes),
        Role::Student,
        seed::derive(cfg.seed, "student/init"),
    )
}

/// Mean squared error between student and teacher softmax rows, with the
/// student parameter gradient.
pub fn student_grads(student: &Mlp, x: &Matrix, targets: &Matrix) -> Result<(f64, MlpGrads)> {
    let (logits, cache) = student.forward(x)?;
    let p = softmax(&logits);
    let (mse, dp) = loss_mse(&p, targets)?;
    let dlogits = softmax_backward(&p, &dp)?;
    Ok((mse, student.backward(&cache, &dlogits)?.0))
}

/// Distils the teacher softmax targets of a verified batch into the student.
pub fn train_student(student: &mut Mlp, verified: &VerifiedBatch, cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    let n = verified.features.rows();
    if n == 0 {
        return Err(Error::invalid("verified batch is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut adam = AdamState::new(student, cfg.learning_rate);
    let mut rng = seed::rng(seed::derive(cfg.seed, "student/shuffle"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.student_epochs);
    for epoch in 0..cfg.student_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = verified.features.select_rows(chunk);
            let t = verified.teacher_softmax.select_rows(chunk);
            let (mse, grads) = student_grads(student, &x, &t)?;
            adam_step(student, &grads, &mut adam)?;
            total += mse * chunk.len() as f64;
        }
        trace.push(TraceRow::new("student", epoch, total / n as f64, 0.0, 0.0));
    }
    Ok(trace)
}

/// Trains a single linear softmax layer on generated features of
/// `class_space`. Returns the classifier, its trace and its accuracy on the
/// generated training set.
pub fn train_inductive_classifier(
    gen: &Mlp,
    semantics: &SemanticTable,
    class_space: &[usize],
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<TraceRow>, f64)> {
    if class_space.is_empty() {
        return Err(Error::invalid("classifier class space is empty"));
    }
    let mut classes = class_space.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let tag = format!("classifier/{}", classes.len());
    let noise = cfg.noise.fork(&tag, 0);
    let batch = super::generate(gen, semantics, &classes, cfg.per_class_count, &noise)?;
    let cols: Vec<usize> = batch
        .cond_labels
        .iter()
        .map(|l| classes.binary_search(l).expect("generated label in class space"))
        .collect();

    let spec = [LayerSpec::new(gen.output_dim(), classes.len(), Activation::Identity)];
    let mut params = Mlp::init(&spec, Role::Classifier, seed::derive(cfg.seed, &format!("{tag}/init")))?;
    let mut adam = AdamState::new(&params, cfg.classifier_learning_rate);
    let mut rng = seed::rng(seed::derive(cfg.seed, &format!("{tag}/shuffle")));
    let n = cols.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.classifier_epochs);
    for epoch in 0..cfg.classifier_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&r| cols[r]).collect();
            let (logits, cache) = params.forward(&x)?;
            let (loss, dlogits) = loss_ce(&softmax(&logits), &y)?;
            let (grads, _) = params.backward(&cache, &dlogits)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += loss * chunk.len() as f64;
        }
        trace.push(TraceRow::new("classifier", epoch, total / n as f64, 0.0, 0.0));
    }
    let preds = params.predict(&batch.features)?.argmax_rows();
    let acc = preds.iter().zip(&cols).filter(|(p, c)| p == c).count() as f64 / n as f64;
    Ok((Classifier::new(params, classes)?, trace, acc))
}
