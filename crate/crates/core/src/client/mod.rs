//! The data-free side. Everything here sees only class embeddings, class
//! ids, noise and teacher responses; no real feature row is reachable.

mod algorithm;
mod train;

pub use algorithm::{ensure_quota, run_algorithm1, ArtifactBundle, ClassSplit, TraceRow};
pub use train::{
    black_step_grads, generator_white_grads, student_grads, student_layers, train_black, train_generator_white,
    train_inductive_classifier, train_student,
};

use rand_distr::{Distribution, StandardNormal};

use crate::datasets::{SemanticTable, TeacherMode};
use crate::error::{Error, Result};
use crate::numkit::{Activation, ForwardCache, LayerSpec, Matrix, Mlp, Role};
use crate::seed;
use crate::teacher::Scenario;

pub const DEFAULT_NOISE_DIM: usize = 20;

/// Standard-normal noise of dimension `dim`, drawn from per-class streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub dim: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(dim: usize, seed: u64) -> Self {
        NoiseSpec { dim, seed }
    }

    /// An independent stream derived from this one.
    pub fn fork(&self, label: &str, index: u64) -> Self {
        NoiseSpec {
            dim: self.dim,
            seed: seed::derive_indexed(self.seed, label, index),
        }
    }

    /// `count` rows of noise for `class`.
    pub fn sample(&self, class: usize, count: usize) -> Matrix {
        let mut rng = seed::rng(seed::derive_indexed(self.seed, "class", class as u64));
        let data = (0..count * self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(count, self.dim, data).expect("noise shape")
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::new(DEFAULT_NOISE_DIM, 0)
    }
}

/// Generated features and what produced them, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationBatch {
    pub features: Matrix,
    pub cond_labels: Vec<usize>,
    pub cond_semantics: Matrix,
    pub noise_used: Matrix,
}

/// Generated rows the teacher agrees with, plus the teacher's softmax rows
/// as distillation targets.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub teacher_softmax: Matrix,
    /// Global class of each softmax column.
    pub class_space: Vec<usize>,
    pub kept_fraction: f64,
    /// Classes still below the quota, with the rows they did get.
    pub shortfall: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub teacher_mode: TeacherMode,
    /// Generator steps (white-box) or joint steps (black-box).
    pub gen_epochs: usize,
    /// Full passes over the verified set.
    pub student_epochs: usize,
    /// Full passes over the generated set for the inductive classifier.
    pub classifier_epochs: usize,
    pub batch_size: usize,
    pub per_class_count: usize,
    pub alpha: f64,
    pub noise: NoiseSpec,
    pub learning_rate: f64,
    pub classifier_learning_rate: f64,
    pub gen_hidden: usize,
    pub student_hidden: Vec<usize>,
    pub min_verified_per_class: usize,
    pub regen_retry_cap: usize,
    /// Filter generated rows through the teacher before distillation.
    pub verify: bool,
    /// Rows per verification upload.
    pub upload_chunk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scenario: Scenario::WhiteBox,
            teacher_mode: TeacherMode::Transductive,
            gen_epochs: 2000,
            student_epochs: 2000,
            classifier_epochs: 50,
            batch_size: 64,
            per_class_count: 400,
            alpha: 0.5,
            noise: NoiseSpec::default(),
            learning_rate: crate::numkit::DEFAULT_LEARNING_RATE,
            classifier_learning_rate: 1e-3,
            gen_hidden: 4096,
            student_hidden: vec![1024, 512],
            min_verified_per_class: 40,
            regen_retry_cap: 3,
            verify: true,
            upload_chunk: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gen_epochs", self.gen_epochs),
            ("student_epochs", self.student_epochs),
            ("classifier_epochs", self.classifier_epochs),
            ("batch_size", self.batch_size),
            ("per_class_count", self.per_class_count),
            ("noise.dim", self.noise.dim),
            ("gen_hidden", self.gen_hidden),
            ("upload_chunk", self.upload_chunk),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("classifier_learning_rate", self.classifier_learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        if self.student_hidden.contains(&0) {
            return Err(Error::invalid("student hidden widths must be >= 1"));
        }
        Ok(())
    }
}

/// `concat(z, a)` → LeakyReLU hidden layer → ReLU feature layer.
pub fn generator_layers(noise_dim: usize, dim_a: usize, hidden: usize, dim_x: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::leaky(noise_dim + dim_a, hidden),
        LayerSpec::new(hidden, dim_x, Activation::Relu),
    ]
}

pub fn init_generator(noise_dim: usize, dim_a: usize, dim_x: usize, cfg: &TrainConfig) -> Result<Mlp> {
    Mlp::init(
        &generator_layers(noise_dim, dim_a, cfg.gen_hidden, dim_x),
        Role::Generator,
        seed::derive(cfg.seed, "generator/init"),
    )
}

fn check_generator(gen: &Mlp, semantics: &SemanticTable, noise_dim: usize) -> Result<()> {
    if gen.role() != Role::Generator {
        return Err(Error::invalid("generate needs a generator network"));
    }
    if gen.input_dim() != noise_dim + semantics.dim() {
        return Err(Error::shape(format!(
            "generator takes {} inputs, noise {} + embedding {}",
            gen.input_dim(),
            noise_dim,
            semantics.dim()
        )));
    }
    Ok(())
}

/// Builds the conditioning input `[z | a_label]` row by row.
pub fn condition(semantics: &SemanticTable, labels: &[usize], noise: &Matrix) -> Result<(Matrix, Matrix)> {
    if noise.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} noise rows for {} labels",
            noise.rows(),
            labels.len()
        )));
    }
    let mut a = Matrix::zeros(labels.len(), semantics.dim());
    for (r, &c) in labels.iter().enumerate() {
        let emb = semantics
            .embedding(c)
            .ok_or_else(|| Error::invalid(format!("class {c} has no semantic embedding")))?;
        a.row_mut(r).copy_from_slice(emb);
    }
    Ok((Matrix::hconcat(noise, &a)?, a))
}

/// Generates from explicit noise rows. Returns the forward cache for
/// backpropagation into the generator.
pub fn generate_from_noise(
    gen: &Mlp,
    semantics: &SemanticTable,
    labels: &[usize],
    noise: Matrix,
) -> Result<(GenerationBatch, ForwardCache)> {
    check_generator(gen, semantics, noise.cols())?;
    let (input, a) = condition(semantics, labels, &noise)?;
    let (features, cache) = gen.forward(&input)?;
    Ok((
        GenerationBatch {
            features,
            cond_labels: labels.to_vec(),
            cond_semantics: a,
            noise_used: noise,
        },
        cache,
    ))
}

pub(crate) fn generate_cached(
    gen: &Mlp,
    semantics: &SemanticTable,
    classes: &[usize],
    count_per_class: usize,
    noise: &NoiseSpec,
) -> Result<(GenerationBatch, ForwardCache)> {
    let mut labels = Vec::with_capacity(classes.len() * count_per_class);
    let mut z = Vec::with_capacity(classes.len() * count_per_class * noise.dim);
    for &c in classes {
        labels.extend(std::iter::repeat_n(c, count_per_class));
        z.extend(noise.sample(c, count_per_class).into_vec());
    }
    let z = Matrix::from_vec(labels.len(), noise.dim, z)?;
    generate_from_noise(gen, semantics, &labels, z)
}

/// `count_per_class` generated rows for each class, in class order.
pub fn generate(
    gen: &Mlp,
    semantics: &SemanticTable,
    classes: &[usize],
    count_per_class: usize,
    noise: &NoiseSpec,
) -> Result<GenerationBatch> {
    Ok(generate_cached(gen, semantics, classes, count_per_class, noise)?.0)
}

/// Keeps the rows whose teacher arg-max (lowest column on ties) is the
/// conditioning class. `class_space[j]` is the class of softmax column `j`.
pub fn verify(batch: &GenerationBatch, softmax: &Matrix, class_space: &[usize]) -> Result<VerifiedBatch> {
    if softmax.rows() != batch.features.rows() || softmax.cols() != class_space.len() {
        return Err(Error::shape(format!(
            "softmax {}x{} for {} rows over {} classes",
            softmax.rows(),
            softmax.cols(),
            batch.features.rows(),
            class_space.len()
        )));
    }
    let keep: Vec<usize> = softmax
        .argmax_rows()
        .into_iter()
        .enumerate()
        .filter(|&(r, col)| class_space[col] == batch.cond_labels[r])
        .map(|(r, _)| r)
        .collect();
    let total = batch.features.rows();
    Ok(VerifiedBatch {
        features: batch.features.select_rows(&keep),
        labels: keep.iter().map(|&r| batch.cond_labels[r]).collect(),
        teacher_softmax: softmax.select_rows(&keep),
        class_space: class_space.to_vec(),
        kept_fraction: if total == 0 {
            0.0
        } else {
            keep.len() as f64 / total as f64
        },
        shortfall: Vec::new(),
    })
}
