use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, SemanticSource, SemanticTable};
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::seed;

/// Parameters of a synthetic benchmark in which class feature clusters are a
/// fixed nonlinear function of the class embeddings.
///
/// Embeddings are `a_c = B·u_c` with a latent `u_c` of dimension
/// `semantic_rank`, so unseen embeddings are linear combinations of seen
/// ones once `seen >= semantic_rank`. Cluster means are
/// `separation · ReLU(M·a_c)` for a random linkage map `M` drawn from
/// `link_seed`; samples add isotropic Gaussian noise of scale `noise` and
/// are clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub seen: usize,
    pub dim_x: usize,
    pub dim_a: usize,
    pub per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub semantic_rank: usize,
    pub link_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            seen: 8,
            dim_x: 64,
            dim_a: 16,
            per_class: 200,
            separation: 1.0,
            noise: 0.2,
            semantic_rank: 4,
            link_seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.seen == 0 || self.seen >= self.classes {
            return Err(Error::invalid(format!(
                "need 1 <= seen < classes, got seen={} classes={}",
                self.seen, self.classes
            )));
        }
        if self.dim_x == 0 || self.dim_a == 0 || self.per_class == 0 || self.semantic_rank == 0 {
            return Err(Error::invalid("synthetic counts must be >= 1"));
        }
        if !(self.separation > 0.0) || !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid("separation must be > 0 and noise >= 0"));
        }
        Ok(())
    }

    /// Classes `seen..classes` are the unseen ones.
    pub fn unseen_classes(&self) -> Vec<usize> {
        (self.seen..self.classes).collect()
    }

    /// Per-class cluster means and embeddings, before sampling.
    pub fn class_geometry(&self, seed: u64) -> Result<(Matrix, Matrix)> {
        self.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "synthetic/embeddings"));
        let rank = self.semantic_rank.min(self.dim_a);
        let basis = gaussian(&mut rng, self.dim_a, rank, 1.0 / (rank as f64).sqrt());
        let latent = gaussian(&mut rng, self.classes, rank, 1.0);
        let embeddings = latent.matmul(&basis.transpose())?;

        let mut link_rng = seed::rng(self.link_seed);
        let link = gaussian(&mut link_rng, self.dim_a, self.dim_x, 1.0 / (self.dim_a as f64).sqrt());
        let means = embeddings.matmul(&link)?.map(|v| self.separation * v.max(0.0));
        Ok((embeddings, means))
    }
}

fn gaussian(rng: &mut seed::Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Draws a synthetic dataset. Rows are grouped by class in class order.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let (embeddings, means) = spec.class_geometry(seed)?;
    let mut rng = seed::rng(seed::derive(seed, "synthetic/samples"));
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dim_x);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        for _ in 0..spec.per_class {
            for &m in means.row(c) {
                let eps: f64 = rng.sample(StandardNormal);
                data.push((m + spec.noise * eps).max(0.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, spec.dim_x, data)?,
        labels,
        SemanticTable::new(embeddings, SemanticSource::Synthetic)?,
        (0..spec.classes).map(|c| c.to_string()).collect(),
    )
}
