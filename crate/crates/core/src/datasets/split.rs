use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TeacherMode {
    /// Teacher sees seen-class rows only.
    Inductive,
    /// Teacher also trains on part of every unseen class.
    Transductive,
}

impl TeacherMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherMode::Inductive => "inductive",
            TeacherMode::Transductive => "transductive",
        }
    }
}

impl std::str::FromStr for TeacherMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inductive" | "ind" => Ok(TeacherMode::Inductive),
            "transductive" | "trans" => Ok(TeacherMode::Transductive),
            other => Err(format!("unknown teacher mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOptions {
    pub unseen_classes: Vec<usize>,
    pub teacher_mode: TeacherMode,
    /// Fraction of each unseen class given to a transductive teacher.
    pub unseen_train_ratio: f64,
    /// Fraction of each seen class used for teacher training.
    pub seen_train_ratio: f64,
    pub seed: u64,
}

impl SplitOptions {
    pub fn new(unseen_classes: Vec<usize>, teacher_mode: TeacherMode, seed: u64) -> Self {
        SplitOptions {
            unseen_classes,
            teacher_mode,
            unseen_train_ratio: 0.8,
            seen_train_ratio: 0.8,
            seed,
        }
    }
}

/// Row partition for one teacher/client scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub teacher_train: Vec<usize>,
    pub client_eval_seen: Vec<usize>,
    pub client_eval_unseen: Vec<usize>,
    pub teacher_mode: TeacherMode,
    pub seed: u64,
}

impl SplitBundle {
    /// Classes the teacher is trained on, ascending.
    pub fn teacher_classes(&self) -> Vec<usize> {
        match self.teacher_mode {
            TeacherMode::Inductive => self.seen_classes.clone(),
            TeacherMode::Transductive => self.all_classes(),
        }
    }

    pub fn all_classes(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.seen_classes.iter().chain(&self.unseen_classes).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Number of evaluation rows for a class of `n` rows when `train_ratio` of
/// it goes to training. Rounds the evaluation side down.
pub(crate) fn eval_count(n: usize, train_ratio: f64) -> usize {
    ((n as f64) * (1.0 - train_ratio) + 1e-9).floor() as usize
}

/// Splits rows into teacher training and client evaluation sets.
pub fn split_azsl(dataset: &Dataset, opts: &SplitOptions) -> Result<SplitBundle> {
    let classes = dataset.class_count();
    if classes < 2 {
        return Err(Error::invalid("split needs at least two classes"));
    }
    for (name, r) in [
        ("unseen_train_ratio", opts.unseen_train_ratio),
        ("seen_train_ratio", opts.seen_train_ratio),
    ] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1), got {r}")));
        }
    }
    let unseen: BTreeSet<usize> = opts.unseen_classes.iter().copied().collect();
    if unseen.is_empty() || unseen.len() >= classes {
        return Err(Error::invalid("need at least one seen and one unseen class"));
    }
    if let Some(&c) = unseen.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("unseen class {c} out of range")));
    }
    let seen: Vec<usize> = (0..classes).filter(|c| !unseen.contains(c)).collect();
    let unseen: Vec<usize> = unseen.into_iter().collect();

    let mut rng = seed::rng(seed::derive(opts.seed, "split"));
    let by_class = dataset.rows_by_class();
    let mut teacher_train = Vec::new();
    let mut eval_seen = Vec::new();
    let mut eval_unseen = Vec::new();

    for &c in &seen {
        let mut rows = by_class[c].clone();
        rows.shuffle(&mut rng);
        let k = eval_count(rows.len(), opts.seen_train_ratio);
        eval_seen.extend_from_slice(&rows[..k]);
        teacher_train.extend_from_slice(&rows[k..]);
    }
    for &c in &unseen {
        let mut rows = by_class[c].clone();
        match opts.teacher_mode {
            TeacherMode::Inductive => eval_unseen.extend(rows),
            TeacherMode::Transductive => {
                if rows.len() < 2 {
                    return Err(Error::invalid(format!(
                        "unseen class {c} has {} rows, cannot split",
                        rows.len()
                    )));
                }
                rows.shuffle(&mut rng);
                let k = eval_count(rows.len(), opts.unseen_train_ratio);
                eval_unseen.extend_from_slice(&rows[..k]);
                teacher_train.extend_from_slice(&rows[k..]);
            }
        }
    }
    teacher_train.sort_unstable();
    eval_seen.sort_unstable();
    eval_unseen.sort_unstable();
    Ok(SplitBundle {
        seen_classes: seen,
        unseen_classes: unseen,
        teacher_train,
        client_eval_seen: eval_seen,
        client_eval_unseen: eval_unseen,
        teacher_mode: opts.teacher_mode,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_synthetic, SyntheticSpec};

    fn toy(per_class: usize) -> Dataset {
        make_synthetic(
            &SyntheticSpec {
                per_class,
                ..SyntheticSpec::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn inductive_teacher_never_sees_unseen_rows() {
        let ds = toy(20);
        let split = split_azsl(&ds, &SplitOptions::new(vec![8, 9], TeacherMode::Inductive, 1)).unwrap();
        let labels: BTreeSet<usize> = split.teacher_train.iter().map(|&r| ds.labels()[r]).collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), split.seen_classes);
        assert_eq!(split.client_eval_unseen.len(), 40);
        assert_eq!(split.teacher_classes(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn transductive_unseen_split_is_four_to_one() {
        let ds = toy(100);
        let split = split_azsl(&ds, &SplitOptions::new(vec![8, 9], TeacherMode::Transductive, 2)).unwrap();
        for c in [8, 9] {
            let train = split.teacher_train.iter().filter(|&&r| ds.labels()[r] == c).count();
            let eval = split
                .client_eval_unseen
                .iter()
                .filter(|&&r| ds.labels()[r] == c)
                .count();
            assert_eq!((train, eval), (80, 20));
        }
    }

    #[test]
    fn eval_side_rounds_down() {
        assert_eq!(eval_count(100, 0.8), 20);
        assert_eq!(eval_count(7, 0.8), 1);
        assert_eq!(eval_count(4, 0.8), 0);
        // aPY-sized unseen pool lands within a few rows of the standard
        // 6333 / 1591 partition; per-class flooring accounts for the rest
        let total = 6333 + 1591;
        assert!((eval_count(total, 0.8) as i64 - 1591).abs() <= 10);
    }

    #[test]
    fn transductive_rejects_singleton_class() {
        let ds = toy(1);
        let err = split_azsl(&ds, &SplitOptions::new(vec![9], TeacherMode::Transductive, 0));
        assert!(err.is_err());
        assert!(split_azsl(&ds, &SplitOptions::new(vec![9], TeacherMode::Inductive, 0)).is_ok());
    }

    #[test]
    fn bad_ratios_and_classes_are_rejected() {
        let ds = toy(10);
        let mut opts = SplitOptions::new(vec![9], TeacherMode::Transductive, 0);
        opts.unseen_train_ratio = 1.0;
        assert!(split_azsl(&ds, &opts).is_err());
        assert!(split_azsl(&ds, &SplitOptions::new(vec![], TeacherMode::Inductive, 0)).is_err());
        assert!(split_azsl(&ds, &SplitOptions::new(vec![12], TeacherMode::Inductive, 0)).is_err());
    }
}
