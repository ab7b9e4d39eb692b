//! Central finite-difference gradient verification.

use rand::seq::index::sample;

use super::matrix::Matrix;
use super::mlp::{Mlp, MlpGrads};
use crate::error::Result;
use crate::seed;

/// Minimum number of coordinates compared when the parameter vector is
/// larger than this.
pub const MIN_SAMPLED_COORDS: usize = 200;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn coordinates(total: usize, requested: usize, seed: u64) -> Vec<usize> {
    let n = requested.max(MIN_SAMPLED_COORDS);
    if total <= n {
        return (0..total).collect();
    }
    let mut idx = sample(&mut seed::rng(seed), total, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares the analytic parameter gradient returned by `loss` against
/// central differences at a random subsample of coordinates and returns the
/// largest relative error.
pub fn grad_check<F>(params: &Mlp, loss: F, epsilon: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Mlp) -> Result<(f64, MlpGrads)>,
{
    let (_, analytic) = loss(params)?;
    grad_check_against(params, &analytic, |p| Ok(loss(p)?.0), epsilon, samples, seed)
}

/// Like [`grad_check`] but with a precomputed analytic gradient.
pub fn grad_check_against<F>(
    params: &Mlp,
    analytic: &MlpGrads,
    loss: F,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Mlp) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in coordinates(params.param_count(), samples, seed) {
        let original = params.param(i);
        probe.set_param(i, original + epsilon);
        let up = loss(&probe)?;
        probe.set_param(i, original - epsilon);
        let down = loss(&probe)?;
        probe.set_param(i, original);
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.get(i), numeric));
    }
    Ok(worst)
}

/// Finite-difference check of a gradient w.r.t. the entries of a matrix.
pub fn grad_check_matrix<F>(
    point: &Matrix,
    analytic: &Matrix,
    loss: F,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    let mut probe = point.clone();
    let mut worst: f64 = 0.0;
    for i in coordinates(point.data().len(), samples, seed) {
        let original = point.data()[i];
        probe.data_mut()[i] = original + epsilon;
        let up = loss(&probe)?;
        probe.data_mut()[i] = original - epsilon;
        let down = loss(&probe)?;
        probe.data_mut()[i] = original;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
