use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Top-2 principal axes of `features` and the centred projections onto them.
/// Each axis is oriented so its largest-magnitude coordinate is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub scores: Matrix,
}

pub fn pca2(features: &Matrix) -> Result<Projection> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::invalid("projection needs at least 2 rows"));
    }
    let mut mean = vec![0.0; d];
    for row in features.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |r, c| features.get(r, c) - mean[c]);
    let scale = centred.amax();
    let svd = centred.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    if scale == 0.0 || top <= 1e-12 * scale * ((n * d) as f64).sqrt() {
        return Err(Error::invalid("data has rank 0 after centring"));
    }

    let axis = |k: usize| -> Vec<f64> {
        let Some(&i) = order.get(k) else {
            return vec![0.0; d];
        };
        let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [axis(0), axis(1)];
    let mut scores = Matrix::zeros(n, 2);
    for r in 0..n {
        for (k, comp) in components.iter().enumerate() {
            let s: f64 = (0..d).map(|c| centred[(r, c)] * comp[c]).sum();
            scores.set(r, k, s);
        }
    }
    Ok(Projection {
        mean,
        components,
        scores,
    })
}

/// Writes `label,pc1,pc2` rows for external plotting.
pub fn export_projection(features: &Matrix, labels: &[usize], path: &Path) -> Result<Projection> {
    if labels.len() != features.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let proj = pca2(features)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["label", "pc1", "pc2"]).map_err(csv_io)?;
    for (r, &l) in labels.iter().enumerate() {
        let row = proj.scores.row(r);
        w.write_record([l.to_string(), row[0].to_string(), row[1].to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(proj)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_data_projects_onto_itself() {
        let m = Matrix::from_rows(&[[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let p = pca2(&m).unwrap();
        assert_eq!(
            p.components[0].iter().map(|x| x.abs()).collect::<Vec<_>>(),
            vec![1.0, 0.0]
        );
        for r in 0..4 {
            for c in 0..2 {
                assert!((p.scores.get(r, c) - m.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_rows_are_rank_zero() {
        let m = Matrix::filled(5, 3, 2.0);
        assert!(pca2(&m).is_err());
        assert!(pca2(&Matrix::zeros(1, 3)).is_err());
    }
}
