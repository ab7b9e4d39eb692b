mod common;

use proptest::prelude::*;
use rand::Rng;

use azsl_core::client::ArtifactBundle;
use azsl_core::datasets::{split_azsl, Dataset, SemanticSource, SemanticTable, SplitBundle, SplitOptions, TeacherMode};
use azsl_core::eval::{
    eval_czsl, eval_czsl_with, eval_gzsl, export_projection, harmonic_mean, pca2, per_class_top1, predict_from_scores,
    Classifier, EvalReport, ReportContext, Task,
};
use azsl_core::numkit::{Activation, LayerSpec, Matrix, Mlp, Role};
use azsl_core::seed;
use azsl_core::teacher::{RiskLog, Scenario};

use common::random_matrix;

const CLASSES: usize = 6;
const UNSEEN: [usize; 2] = [4, 5];
const PCT_TOL: f64 = 1e-9;

/// One-hot class indicators with small noise, so an identity map is a
/// perfect classifier.
fn indicator_dataset(per_class: usize) -> Dataset {
    let n = CLASSES * per_class;
    let noise = random_matrix(n, CLASSES, 17);
    let labels: Vec<usize> = (0..n).map(|r| r % CLASSES).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..CLASSES)
                .map(|c| f64::from(u8::from(c == labels[r])) + 0.05 * noise.get(r, c))
                .collect()
        })
        .collect();
    let sem_rows: Vec<Vec<f64>> = (0..CLASSES).map(|c| vec![c as f64, 1.0]).collect();
    let sem = SemanticTable::new(Matrix::from_rows(&sem_rows).unwrap(), SemanticSource::Synthetic).unwrap();
    let names = (0..CLASSES).map(|c| format!("class{c}")).collect();
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, sem, names).unwrap()
}

fn linear(weights: Matrix, bias: Vec<f64>, classes: Vec<usize>) -> Classifier {
    let spec = [LayerSpec::new(weights.rows(), weights.cols(), Activation::Identity)];
    Classifier::new(
        Mlp::from_parts(Role::Classifier, &spec, vec![weights], vec![bias], 0).unwrap(),
        classes,
    )
    .unwrap()
}

fn oracle() -> Classifier {
    let mut w = Matrix::zeros(CLASSES, CLASSES);
    for c in 0..CLASSES {
        w.set(c, c, 1.0);
    }
    linear(w, vec![0.0; CLASSES], (0..CLASSES).collect())
}

/// Scores `class` highest on every input.
fn constant(class: usize) -> Classifier {
    let mut bias = vec![0.0; CLASSES];
    bias[class] = 100.0;
    linear(Matrix::zeros(CLASSES, CLASSES), bias, (0..CLASSES).collect())
}

fn bundle(mode: TeacherMode, student: Classifier) -> ArtifactBundle {
    let gen = Mlp::from_parts(
        Role::Generator,
        &[LayerSpec::new(2, CLASSES, Activation::Relu)],
        vec![Matrix::zeros(2, CLASSES)],
        vec![vec![0.0; CLASSES]],
        0,
    )
    .unwrap();
    ArtifactBundle {
        scenario: Scenario::BlackBox,
        teacher_mode: mode,
        seed: 0,
        gen,
        classifier_czsl: None,
        classifier_gzsl: None,
        student,
        trace: Vec::new(),
        transcript: RiskLog::new(),
        kept_fraction: 1.0,
        shortfall: Vec::new(),
    }
}

fn setup(mode: TeacherMode) -> (Dataset, SplitBundle) {
    let ds = indicator_dataset(40);
    let split = split_azsl(&ds, &SplitOptions::new(UNSEEN.to_vec(), mode, 3)).unwrap();
    (ds, split)
}

#[test]
fn oracle_student_scores_one_hundred() {
    let (ds, split) = setup(TeacherMode::Transductive);
    let b = bundle(TeacherMode::Transductive, oracle());
    let czsl = eval_czsl(&b, &split, &ds).unwrap();
    assert_eq!(czsl.u, 100.0);
    assert_eq!((czsl.s, czsl.h), (None, None));
    let gzsl = eval_gzsl(&b, &split, &ds).unwrap();
    assert_eq!((gzsl.u, gzsl.s, gzsl.h), (100.0, Some(100.0), Some(100.0)));
}

#[test]
fn inductive_oracle_classifiers_score_one_hundred() {
    let (ds, split) = setup(TeacherMode::Inductive);
    let mut b = bundle(TeacherMode::Inductive, constant(0));
    let mut w = Matrix::zeros(CLASSES, UNSEEN.len());
    for (k, &c) in UNSEEN.iter().enumerate() {
        w.set(c, k, 1.0);
    }
    b.classifier_czsl = Some(linear(w, vec![0.0; UNSEEN.len()], UNSEEN.to_vec()));
    b.classifier_gzsl = Some(oracle());
    let czsl = eval_czsl(&b, &split, &ds).unwrap();
    assert_eq!(czsl.u, 100.0);
    assert!(czsl.context.masked);
    assert_eq!(eval_gzsl(&b, &split, &ds).unwrap().h, Some(100.0));

    b.classifier_czsl = None;
    assert!(eval_czsl(&b, &split, &ds).is_err());
}

#[test]
fn transductive_student_voting_seen_scores_zero_unless_masked() {
    let (ds, split) = setup(TeacherMode::Transductive);
    let b = bundle(TeacherMode::Transductive, constant(1));
    assert_eq!(eval_czsl(&b, &split, &ds).unwrap().u, 0.0);
    // Restricted to the unseen classes the constant scores tie, so every row
    // goes to the lowest unseen class.
    let masked = eval_czsl_with(&b, &split, &ds, true).unwrap();
    assert!((masked.u - 50.0).abs() < PCT_TOL);
    assert!(masked.context.masked);
}

#[test]
fn fixed_seen_prediction_gives_zero_harmonic_mean() {
    let (ds, split) = setup(TeacherMode::Transductive);
    let b = bundle(TeacherMode::Transductive, constant(2));
    let r = eval_gzsl(&b, &split, &ds).unwrap();
    assert_eq!(r.u, 0.0);
    assert!((r.s.unwrap() - 100.0 / split.seen_classes.len() as f64).abs() < PCT_TOL);
    assert_eq!(r.h, Some(0.0));
}

#[test]
fn confusion_matrix_agrees_with_reported_accuracies() {
    let (ds, split) = setup(TeacherMode::Transductive);
    // Noisy weights give a mix of right and wrong answers.
    let w = random_matrix(CLASSES, CLASSES, 5).scale(0.8);
    let mut id = Matrix::zeros(CLASSES, CLASSES);
    for c in 0..CLASSES {
        id.set(c, c, 1.0);
    }
    let b = bundle(
        TeacherMode::Transductive,
        linear(id.add(&w).unwrap(), vec![0.0; CLASSES], (0..CLASSES).collect()),
    );
    let r = eval_gzsl(&b, &split, &ds).unwrap();
    assert!(r.u > 0.0 && r.u < 100.0, "u = {}", r.u);
    assert!((r.accuracy_from_confusion(&split.unseen_classes).unwrap() - r.u).abs() < PCT_TOL);
    assert!((r.accuracy_from_confusion(&split.seen_classes).unwrap() - r.s.unwrap()).abs() < PCT_TOL);
    let total: u64 = r.confusion.iter().flatten().sum();
    assert_eq!(
        total as usize,
        split.client_eval_seen.len() + split.client_eval_unseen.len()
    );
    for (&c, &acc) in &r.per_class {
        assert!((r.accuracy_from_confusion(&[c]).unwrap() - acc).abs() < PCT_TOL);
    }
}

#[test]
fn report_text_lists_metrics_and_confusion() {
    let (ds, split) = setup(TeacherMode::Transductive);
    let b = bundle(TeacherMode::Transductive, oracle());
    let text = eval_czsl(&b, &split, &ds).unwrap().to_text();
    for line in [
        "task: czsl",
        "u: 100.00",
        "s: n/a",
        "H: n/a",
        "unseen_classes: 4,5",
        "[per_class]",
    ] {
        assert!(text.contains(line), "missing `{line}` in\n{text}");
    }
}

#[test]
fn uniform_guessing_over_two_classes_is_near_fifty() {
    let labels: Vec<usize> = (0..2000).map(|r| r % 2).collect();
    for s in 0..5 {
        let mut rng = seed::rng(s);
        let preds: Vec<usize> = labels.iter().map(|_| rng.gen_range(0..2)).collect();
        let acc = per_class_top1(&preds, &labels, &[0, 1]).unwrap();
        assert!((acc - 50.0).abs() <= 5.0, "seed {s}: {acc}");
    }
}

#[test]
fn accuracy_is_averaged_per_class() {
    // Class 0: 9 of 10 right. Class 1: 0 of 90 right.
    let mut labels = vec![0; 10];
    labels.extend(vec![1; 90]);
    let mut preds = vec![0; 9];
    preds.push(1);
    preds.extend(vec![0; 90]);
    let macro_acc = per_class_top1(&preds, &labels, &[0, 1]).unwrap();
    let micro = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64;
    assert!((macro_acc - 45.0).abs() < PCT_TOL);
    assert!((micro - 9.0).abs() < PCT_TOL);
}

#[test]
fn harmonic_mean_reference_values() {
    assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
    assert_eq!(harmonic_mean(0.0, 80.0).unwrap(), 0.0);
    assert!((harmonic_mean(50.0, 50.0).unwrap() - 50.0).abs() < PCT_TOL);
    assert!((harmonic_mean(30.0, 60.0).unwrap() - 40.0).abs() < PCT_TOL);
    assert!(harmonic_mean(f64::NAN, 1.0).is_err());
    assert!(harmonic_mean(-0.5, 1.0).is_err());
}

#[test]
fn empty_evaluation_set_is_an_error() {
    assert!(per_class_top1(&[0, 1], &[0, 1], &[7]).is_err());
    assert!(per_class_top1(&[0], &[0, 1], &[0]).is_err());
}

#[test]
fn report_rejects_out_of_range_classes() {
    let ctx = ReportContext {
        teacher_mode: TeacherMode::Transductive,
        scenario: Scenario::WhiteBox,
        masked: false,
        seed: 0,
        transcript_digest: String::new(),
    };
    let names = vec!["a".to_string(), "b".to_string()];
    assert!(EvalReport::from_predictions(Task::Gzsl, ctx, &[5], &[0], &[0], &[1], &names).is_err());
}

#[test]
fn rank_two_data_is_reconstructed_exactly() {
    let dim = 7;
    let coeffs = random_matrix(50, 2, 8);
    let basis = random_matrix(2, dim, 9);
    let offset: Vec<f64> = (0..dim).map(|c| c as f64 - 3.0).collect();
    let mut x = coeffs.matmul(&basis).unwrap();
    for r in 0..x.rows() {
        for (v, o) in x.row_mut(r).iter_mut().zip(&offset) {
            *v += o;
        }
    }
    let p = pca2(&x).unwrap();
    for r in 0..x.rows() {
        for c in 0..dim {
            let back = p.mean[c] + p.scores.get(r, 0) * p.components[0][c] + p.scores.get(r, 1) * p.components[1][c];
            assert!((back - x.get(r, c)).abs() < 1e-9, "row {r} col {c}");
        }
    }
    let unit = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    assert!((unit(&p.components[0]) - 1.0).abs() < 1e-9);
    assert!(
        p.components[0]
            .iter()
            .zip(&p.components[1])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs()
            < 1e-9
    );
}

#[test]
fn duplicated_rows_project_identically() {
    let x = random_matrix(12, 5, 4);
    let doubled = x.vstack(&x.select_rows(&[3])).unwrap();
    let p = pca2(&doubled).unwrap();
    assert_eq!(p.scores.row(3), p.scores.row(12));
}

#[test]
fn projection_export_writes_one_row_per_sample() {
    let x = random_matrix(9, 4, 1);
    let labels: Vec<usize> = (0..9).map(|r| r % 3).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("proj.csv");
    let p = export_projection(&x, &labels, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "label,pc1,pc2");
    assert_eq!(lines.len(), 10);
    let first: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, p.scores.row(0));
    assert!(export_projection(&x, &labels[..3], &path).is_err());
    assert!(pca2(&Matrix::filled(4, 3, 2.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn harmonic_mean_bounds(u in 0.0f64..100.0, s in 0.0f64..100.0) {
        let h = harmonic_mean(u, s).unwrap();
        prop_assert!(h <= (u + s) / 2.0 + 1e-9);
        prop_assert!(h <= 2.0 * u.min(s) + 1e-9);
        prop_assert!(h >= u.min(s) - 1e-9 && h <= u.max(s) + 1e-9);
    }

    #[test]
    fn duplicating_every_row_keeps_accuracy(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let classes = [0, 1, 2, 3];
        let once = per_class_top1(&preds, &labels, &classes).unwrap();
        let twice = per_class_top1(
            &[preds.clone(), preds].concat(),
            &[labels.clone(), labels].concat(),
            &classes,
        ).unwrap();
        prop_assert!((once - twice).abs() < PCT_TOL);
    }

    #[test]
    fn singleton_class_space_always_predicts_it(seed in any::<u64>(), class in 0usize..5) {
        let scores = random_matrix(8, 5, seed);
        let head: Vec<usize> = (0..5).collect();
        let preds = predict_from_scores(&scores, &head, &[class]).unwrap();
        prop_assert!(preds.iter().all(|&p| p == class));
    }
}
