use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Macro-averaged top-1 accuracy in percent over the classes of `classes`
/// that occur in `labels`. Rows whose label is outside `classes` are ignored.
pub fn per_class_top1(preds: &[usize], labels: &[usize], classes: &[usize]) -> Result<f64> {
    let tallies = class_tallies(preds, labels, classes)?;
    if tallies.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let sum: f64 = tallies.values().map(|&(hit, n)| hit as f64 / n as f64).sum();
    Ok(100.0 * sum / tallies.len() as f64)
}

/// Per-class accuracy in percent, keyed by class, for present classes.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], classes: &[usize]) -> Result<BTreeMap<usize, f64>> {
    Ok(class_tallies(preds, labels, classes)?
        .into_iter()
        .map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64))
        .collect())
}

fn class_tallies(preds: &[usize], labels: &[usize], classes: &[usize]) -> Result<BTreeMap<usize, (usize, usize)>> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut tallies: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in preds.iter().zip(labels) {
        if classes.contains(&l) {
            let t = tallies.entry(l).or_default();
            t.1 += 1;
            if p == l {
                t.0 += 1;
            }
        }
    }
    Ok(tallies)
}

/// `2us / (u + s)`, zero when both are zero.
pub fn harmonic_mean(u: f64, s: f64) -> Result<f64> {
    if !(u >= 0.0 && s >= 0.0) {
        return Err(Error::invalid(format!("accuracies must be >= 0, got u={u}, s={s}")));
    }
    if u + s == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * u * s / (u + s))
}
