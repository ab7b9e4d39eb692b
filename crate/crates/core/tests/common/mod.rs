#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use azsl_core::cli::ExperimentConfig;
use azsl_core::datasets::{Dataset, SemanticSource, SemanticTable};
use azsl_core::numkit::Matrix;
use azsl_core::seed;

/// Small-network preset that trains the default synthetic benchmark in
/// about a second per run.
pub const DESK: &str = "\
dataset.source = synthetic
teacher.hidden = 64,32
teacher.epochs = 30
teacher.learning_rate = 1e-3
train.gen_epochs = 300
train.gen_hidden = 128
train.learning_rate = 1e-3
train.student_hidden = 64,32
train.student_epochs = 30
train.per_class_count = 100
train.classifier_epochs = 30
alpha = 0.5
";

/// Desk preset with keys in `extra` replacing the preset's, output under `dir`.
pub fn desk_config(dir: &Path, scenario: &str, mode: &str, seed: u64, extra: &str) -> ExperimentConfig {
    let key = |line: &str| line.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let base: String = DESK
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    let text = format!("{base}scenario = {scenario}\nteacher_mode = {mode}\nseed = {seed}\n{extra}");
    ExperimentConfig::parse(&text, dir).expect("desk config parses")
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seed::rng(seed);
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut rng = seed::rng(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Two Gaussian blobs at +-`offset` along every axis.
pub fn two_blobs(per_class: usize, dim: usize, offset: f64, seed: u64) -> Dataset {
    let noise = random_matrix(2 * per_class, dim, seed);
    let mut rows = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for r in 0..2 * per_class {
        let c = r % 2;
        let sign = if c == 0 { -1.0 } else { 1.0 };
        rows.push(
            noise
                .row(r)
                .iter()
                .map(|v| sign * offset + 0.5 * v)
                .collect::<Vec<f64>>(),
        );
        labels.push(c);
    }
    let sem = SemanticTable::new(
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        SemanticSource::Synthetic,
    )
    .unwrap();
    Dataset::new(
        Matrix::from_rows(&rows).unwrap(),
        labels,
        sem,
        vec!["a".into(), "b".into()],
    )
    .unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// True when every step rises by at most `tolerance` relative to the running
/// minimum before it.
pub fn nonincreasing_within(trace: &[f64], tolerance: f64) -> bool {
    let mut best = f64::INFINITY;
    for &v in trace {
        if v > best * (1.0 + tolerance) + 1e-12 {
            return false;
        }
        best = best.min(v);
    }
    true
}
