//! Distribution regularizers fitted on real features and evaluated against
//! uploaded generated batches. Real rows stay inside [`RegularizerState`].

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::datasets::{Dataset, SplitBundle};
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::seed;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MMD_REFERENCE_CAP: usize = 256;
const BANDWIDTH_SAMPLE_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    None,
    GaussianKl,
    RbfMmd,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::GaussianKl => "kl",
            RegularizerKind::RbfMmd => "mmd",
        }
    }
}

impl std::str::FromStr for RegularizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "ce" => Ok(RegularizerKind::None),
            "kl" | "gaussian_kl" | "ce+kl" => Ok(RegularizerKind::GaussianKl),
            "mmd" | "rbf_mmd" | "ce+mmd" => Ok(RegularizerKind::RbfMmd),
            other => Err(format!("unknown regularizer `{other}`")),
        }
    }
}

/// Per-dimension mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    /// Biased statistics of `rows` of `m`, variance floored.
    pub fn fit(m: &Matrix, rows: &[usize]) -> Self {
        let d = m.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (a, b) in mean.iter_mut().zip(m.row(r)) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((v, x), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                *v += (x - mu) * (x - mu);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / n).max(VARIANCE_FLOOR));
        DiagGaussian { mean, var }
    }
}

/// Server-held statistics for the regularizer term `α·R(x̃)`.
#[derive(Debug, Clone)]
pub struct RegularizerState {
    kind: RegularizerKind,
    alpha: f64,
    dim: usize,
    gaussians: BTreeMap<usize, DiagGaussian>,
    references: BTreeMap<usize, Matrix>,
    // mean of k(y, y') over each reference set, fixed at fit time
    reference_self_kernel: BTreeMap<usize, f64>,
    bandwidth: f64,
}

impl RegularizerState {
    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn gaussian(&self, class: usize) -> Option<&DiagGaussian> {
        self.gaussians.get(&class)
    }

    pub fn covers(&self, class: usize) -> bool {
        match self.kind {
            RegularizerKind::None => true,
            RegularizerKind::GaussianKl => self.gaussians.contains_key(&class),
            RegularizerKind::RbfMmd => self.references.contains_key(&class),
        }
    }

    /// State with explicit per-class Gaussians.
    pub fn from_gaussians(alpha: f64, gaussians: BTreeMap<usize, DiagGaussian>) -> Result<Self> {
        let dim = gaussians
            .values()
            .next()
            .map(|g| g.mean.len())
            .ok_or_else(|| Error::invalid("no class statistics"))?;
        Ok(RegularizerState {
            kind: RegularizerKind::GaussianKl,
            alpha,
            dim,
            gaussians,
            references: BTreeMap::new(),
            reference_self_kernel: BTreeMap::new(),
            bandwidth: 1.0,
        })
    }

    /// State with explicit per-class reference samples; bandwidth by the
    /// median heuristic over the pooled references.
    pub fn from_references(alpha: f64, references: BTreeMap<usize, Matrix>) -> Result<Self> {
        let dim = references
            .values()
            .next()
            .map(Matrix::cols)
            .ok_or_else(|| Error::invalid("no reference samples"))?;
        let pooled: Vec<&[f64]> = references.values().flat_map(|m| m.row_iter()).collect();
        let bandwidth = median_sq_distance(&pooled);
        let reference_self_kernel = references
            .iter()
            .map(|(&c, y)| (c, mean_kernel(y, y, bandwidth)))
            .collect();
        Ok(RegularizerState {
            kind: RegularizerKind::RbfMmd,
            alpha,
            dim,
            gaussians: BTreeMap::new(),
            references,
            reference_self_kernel,
            bandwidth,
        })
    }

    /// Regularizer value and its gradient w.r.t. every batch entry. The
    /// value is averaged over the conditioning classes present.
    pub fn value_grad(&self, batch: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
        if batch.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} batch rows for {} labels",
                batch.rows(),
                labels.len()
            )));
        }
        let mut grad = Matrix::zeros(batch.rows(), batch.cols());
        if self.kind == RegularizerKind::None || batch.rows() == 0 {
            return Ok((0.0, grad));
        }
        if batch.cols() != self.dim {
            return Err(Error::shape(format!(
                "batch has {} columns, regularizer fitted on {}",
                batch.cols(),
                self.dim
            )));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (r, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(r);
        }
        let k = groups.len() as f64;
        let mut total = 0.0;
        for (&class, rows) in &groups {
            if !self.covers(class) {
                return Err(Error::invalid(format!("class {class} has no regularizer statistics")));
            }
            let (v, g) = match self.kind {
                RegularizerKind::GaussianKl => kl_term(batch, rows, &self.gaussians[&class]),
                RegularizerKind::RbfMmd => self.mmd_term(batch, rows, class),
                RegularizerKind::None => unreachable!(),
            };
            total += v;
            for (i, &r) in rows.iter().enumerate() {
                for (dst, src) in grad.row_mut(r).iter_mut().zip(&g[i]) {
                    *dst = src / k;
                }
            }
        }
        Ok((total / k, grad))
    }

    fn mmd_term(&self, batch: &Matrix, rows: &[usize], class: usize) -> (f64, Vec<Vec<f64>>) {
        let reference = &self.references[&class];
        let bw = self.bandwidth;
        let x = batch.select_rows(rows);
        let n = x.rows() as f64;
        let m = reference.rows() as f64;
        let kxx = mean_kernel(&x, &x, bw);
        let kxy = mean_kernel(&x, reference, bw);
        let value = kxx + self.reference_self_kernel[&class] - 2.0 * kxy;

        // d k(x, y) / d x = -2 (x - y) / bw * k(x, y)
        let mut grads = vec![vec![0.0; x.cols()]; x.rows()];
        for (i, gi) in grads.iter_mut().enumerate() {
            let xi = x.row(i);
            for b in 0..x.rows() {
                if b == i {
                    continue;
                }
                let xb = x.row(b);
                let kv = rbf(xi, xb, bw);
                let coef = 2.0 / (n * n) * (-2.0 / bw) * kv;
                for ((g, a), c) in gi.iter_mut().zip(xi).zip(xb) {
                    *g += coef * (a - c);
                }
            }
            for y in reference.row_iter() {
                let kv = rbf(xi, y, bw);
                let coef = -2.0 / (n * m) * (-2.0 / bw) * kv;
                for ((g, a), c) in gi.iter_mut().zip(xi).zip(y) {
                    *g += coef * (a - c);
                }
            }
        }
        (value, grads)
    }
}

/// Closed-form `KL(N(μ̂, v̂) ‖ N(μ, σ²))` summed over dimensions, where
/// `μ̂, v̂` are the batch statistics of `rows`.
fn kl_term(batch: &Matrix, rows: &[usize], target: &DiagGaussian) -> (f64, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = batch.cols();
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (a, b) in mean.iter_mut().zip(batch.row(r)) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut raw_var = vec![0.0; d];
    for &r in rows {
        for ((v, x), mu) in raw_var.iter_mut().zip(batch.row(r)).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    raw_var.iter_mut().for_each(|v| *v /= n);

    let mut value = 0.0;
    let mut d_mean = vec![0.0; d];
    let mut d_var = vec![0.0; d];
    for j in 0..d {
        let floored = raw_var[j] < VARIANCE_FLOOR;
        let v = raw_var[j].max(VARIANCE_FLOOR);
        let s2 = target.var[j];
        let diff = mean[j] - target.mean[j];
        value += 0.5 * (v / s2 + diff * diff / s2 - 1.0 + (s2 / v).ln());
        d_mean[j] = diff / s2;
        d_var[j] = if floored { 0.0 } else { 0.5 * (1.0 / s2 - 1.0 / v) };
    }
    let grads = rows
        .iter()
        .map(|&r| {
            batch
                .row(r)
                .iter()
                .enumerate()
                .map(|(j, &x)| d_mean[j] / n + d_var[j] * 2.0 * (x - mean[j]) / n)
                .collect()
        })
        .collect();
    (value, grads)
}

#[inline]
fn rbf(a: &[f64], b: &[f64], bw: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / bw).exp()
}

fn mean_kernel(x: &Matrix, y: &Matrix, bw: f64) -> f64 {
    let mut total = 0.0;
    for a in x.row_iter() {
        for b in y.row_iter() {
            total += rbf(a, b, bw);
        }
    }
    total / (x.rows() * y.rows()) as f64
}

fn median_sq_distance(rows: &[&[f64]]) -> f64 {
    let take = rows.len().min(BANDWIDTH_SAMPLE_CAP);
    // evenly spaced subsample keeps this deterministic
    let picked: Vec<&[f64]> = (0..take).map(|i| rows[i * rows.len() / take.max(1)]).collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..picked.len() {
        for j in 0..i {
            d.push(picked[i].iter().zip(picked[j]).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Fits the regularizer on the teacher's training rows.
pub fn fit_regularizer(
    dataset: &Dataset,
    split: &SplitBundle,
    kind: RegularizerKind,
    alpha: f64,
) -> Result<RegularizerState> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    if split.teacher_train.is_empty() {
        return Err(Error::invalid("teacher training set is empty"));
    }
    let classes = split.teacher_classes();
    let mut by_class: BTreeMap<usize, Vec<usize>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    for &r in &split.teacher_train {
        if let Some(rows) = by_class.get_mut(&dataset.labels()[r]) {
            rows.push(r);
        }
    }
    let features = dataset.features();
    match kind {
        RegularizerKind::None => Ok(RegularizerState {
            kind,
            alpha,
            dim: dataset.dim_x(),
            gaussians: BTreeMap::new(),
            references: BTreeMap::new(),
            reference_self_kernel: BTreeMap::new(),
            bandwidth: 1.0,
        }),
        RegularizerKind::GaussianKl => {
            let global = DiagGaussian::fit(features, &split.teacher_train);
            let gaussians = by_class
                .iter()
                .map(|(&c, rows)| {
                    let g = if rows.len() < 2 {
                        global.clone()
                    } else {
                        DiagGaussian::fit(features, rows)
                    };
                    (c, g)
                })
                .collect();
            RegularizerState::from_gaussians(alpha, gaussians)
        }
        RegularizerKind::RbfMmd => {
            let mut rng = seed::rng(seed::derive(split.seed, "mmd-reference"));
            let mut refs = BTreeMap::new();
            for (&c, rows) in &by_class {
                let mut rows = rows.clone();
                if rows.is_empty() {
                    rows = split.teacher_train.clone();
                }
                rows.shuffle(&mut rng);
                rows.truncate(MMD_REFERENCE_CAP);
                rows.sort_unstable();
                refs.insert(c, features.select_rows(&rows));
            }
            RegularizerState::from_references(alpha, refs)
        }
    }
}
