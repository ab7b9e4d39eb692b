mod common;

use std::sync::Arc;

use proptest::prelude::*;

use azsl_core::cli::{build_server, load_dataset, make_split};
use azsl_core::client::{
    black_step_grads, ensure_quota, generate, generate_from_noise, generator_layers, generator_white_grads,
    init_generator, run_algorithm1, student_grads, student_layers, train_black, train_generator_white,
    train_inductive_classifier, train_student, verify, ClassSplit, GenerationBatch, NoiseSpec, TrainConfig,
};
use azsl_core::datasets::{Dataset, SemanticSource, SemanticTable, SplitBundle, TeacherMode};
use azsl_core::numkit::{
    grad_check, grad_check_against, loss_ce, loss_mse, softmax, Activation, LayerSpec, Matrix, Mlp, MlpGrads, Role,
    MIN_SAMPLED_COORDS,
};
use azsl_core::protocol::{InProcessChannel, RemoteTeacher};
use azsl_core::teacher::{
    classifier_layers, compute_feedback, DiagGaussian, FeedbackRequest, RegularizerState, RiskTag, Scenario,
    TeacherModel, TeacherServer,
};

use common::{desk_config, median, nonincreasing_within, random_matrix, uniform_matrix};

const FD_EPS: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn semantics(rows: &[&[f64]]) -> SemanticTable {
    SemanticTable::new(Matrix::from_rows(rows).unwrap(), SemanticSource::Synthetic).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        gen_hidden: 8,
        student_hidden: vec![6],
        noise: NoiseSpec::new(3, 5),
        per_class_count: 10,
        ..TrainConfig::default()
    }
}

// Generation.

#[test]
fn zero_generator_yields_zero_features() {
    let sem = semantics(&[&[1.0, -2.0], &[3.0, 0.5]]);
    let mut gen = init_generator(3, 2, 5, &small_cfg()).unwrap();
    let (ws, bs) = gen.params_mut();
    ws.iter_mut().for_each(|w| w.data_mut().fill(0.0));
    bs.iter_mut().for_each(|b| b.fill(0.0));
    let batch = generate(&gen, &sem, &[0, 1], 7, &NoiseSpec::new(3, 1)).unwrap();
    assert!(batch.features.data().iter().all(|&v| v == 0.0));
}

#[test]
fn four_hundred_per_class_over_ten_classes() {
    let rows: Vec<Vec<f64>> = (0..10).map(|c| vec![c as f64, 1.0]).collect();
    let sem = SemanticTable::new(Matrix::from_rows(&rows).unwrap(), SemanticSource::Synthetic).unwrap();
    let gen = init_generator(
        20,
        2,
        4,
        &TrainConfig {
            gen_hidden: 8,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let classes: Vec<usize> = (0..10).collect();
    let batch = generate(&gen, &sem, &classes, 400, &NoiseSpec::default()).unwrap();
    assert_eq!(batch.features.shape(), (4000, 4));
    assert_eq!(batch.cond_labels.len(), 4000);
    assert_eq!(batch.noise_used.shape(), (4000, 20));
    assert_eq!(batch.cond_semantics.shape(), (4000, 2));
    for (i, c) in classes.iter().enumerate() {
        assert!(batch.cond_labels[i * 400..(i + 1) * 400].iter().all(|l| l == c));
    }
}

#[test]
fn identical_semantics_and_noise_give_identical_blocks() {
    let sem = semantics(&[&[0.3, 0.7], &[0.3, 0.7], &[1.0, 0.0]]);
    let gen = init_generator(3, 2, 6, &small_cfg()).unwrap();
    let z = random_matrix(5, 3, 4);
    let noise = z.vstack(&z).unwrap();
    let (batch, _) = generate_from_noise(&gen, &sem, &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1], noise).unwrap();
    for r in 0..5 {
        assert_eq!(batch.features.row(r), batch.features.row(r + 5));
    }
}

#[test]
fn class_without_embedding_is_an_error() {
    let sem = semantics(&[&[1.0, 0.0]]);
    let gen = init_generator(3, 2, 4, &small_cfg()).unwrap();
    assert!(generate(&gen, &sem, &[0, 1], 2, &NoiseSpec::new(3, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_features_are_nonnegative(seed in any::<u64>(), count in 1usize..20) {
        let sem = semantics(&[&[1.0, -1.0, 0.5], &[-2.0, 0.0, 3.0]]);
        let cfg = TrainConfig { seed, ..small_cfg() };
        let gen = init_generator(3, 3, 7, &cfg).unwrap();
        let batch = generate(&gen, &sem, &[0, 1], count, &NoiseSpec::new(3, seed)).unwrap();
        prop_assert!(batch.features.data().iter().all(|&v| v >= 0.0));
    }
}

// Verification.

fn fixture_batch(labels: Vec<usize>) -> GenerationBatch {
    let n = labels.len();
    GenerationBatch {
        features: Matrix::from_vec(n, 1, (0..n).map(|r| r as f64).collect()).unwrap(),
        cond_semantics: Matrix::zeros(n, 1),
        noise_used: Matrix::zeros(n, 1),
        cond_labels: labels,
    }
}

#[test]
fn verify_keeps_exactly_the_matching_rows_in_order() {
    // Columns map to classes 2, 5, 7.
    let batch = fixture_batch(vec![2, 5, 7, 2, 5]);
    let soft = Matrix::from_rows(&[
        [0.8, 0.1, 0.1], // 2 -> 2 keep
        [0.6, 0.3, 0.1], // 5 -> 2 drop
        [0.1, 0.1, 0.8], // 7 -> 7 keep
        [0.1, 0.8, 0.1], // 2 -> 5 drop
        [0.2, 0.7, 0.1], // 5 -> 5 keep
    ])
    .unwrap();
    let v = verify(&batch, &soft, &[2, 5, 7]).unwrap();
    assert_eq!(v.labels, vec![2, 7, 5]);
    assert_eq!(v.features.data(), &[0.0, 2.0, 4.0]);
    assert_eq!(v.teacher_softmax, soft.select_rows(&[0, 2, 4]));
    assert!((v.kept_fraction - 0.6).abs() < 1e-15);
    for (r, &l) in v.labels.iter().enumerate() {
        let col = v.teacher_softmax.argmax_rows()[r];
        assert_eq!(v.class_space[col], l);
    }
}

#[test]
fn verify_all_or_nothing() {
    let batch = fixture_batch(vec![0, 1]);
    let right = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap();
    let v = verify(&batch, &right, &[0, 1]).unwrap();
    assert_eq!((v.kept_fraction, v.features.clone()), (1.0, batch.features.clone()));
    let wrong = Matrix::from_rows(&[[0.1, 0.9], [0.8, 0.2]]).unwrap();
    let v = verify(&batch, &wrong, &[0, 1]).unwrap();
    assert_eq!(v.kept_fraction, 0.0);
    assert_eq!(v.features.rows(), 0);
}

#[test]
fn verify_breaks_ties_toward_the_lowest_class() {
    let batch = fixture_batch(vec![0, 1]);
    let tie = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
    assert_eq!(verify(&batch, &tie, &[0, 1]).unwrap().labels, vec![0]);
}

// Quota.

/// A linear teacher over two features that never predicts class 1.
fn biased_server(dim_x: usize) -> Arc<TeacherServer> {
    let spec = [LayerSpec::new(dim_x, 2, Activation::Identity)];
    let params = Mlp::from_parts(
        Role::Teacher,
        &spec,
        vec![Matrix::zeros(dim_x, 2)],
        vec![vec![10.0, -10.0]],
        0,
    )
    .unwrap();
    let teacher = TeacherModel {
        params,
        class_space: vec![0, 1],
        train_accuracy: 0.0,
        loss_trace: Vec::new(),
    };
    let g = DiagGaussian {
        mean: vec![0.0; dim_x],
        var: vec![1.0; dim_x],
    };
    let reg = RegularizerState::from_gaussians(0.0, [(0, g.clone()), (1, g)].into()).unwrap();
    Arc::new(TeacherServer::new(teacher, reg))
}

#[test]
fn never_predicted_class_is_reported_after_the_cap() {
    let sem = semantics(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let cfg = TrainConfig {
        regen_retry_cap: 2,
        min_verified_per_class: 5,
        ..small_cfg()
    };
    let gen = init_generator(3, 2, 4, &cfg).unwrap();
    let server = biased_server(4);
    let mut remote = RemoteTeacher::new(InProcessChannel::new(server.clone()));
    let v = ensure_quota(&gen, &mut remote, &sem, &[0, 1], &cfg).unwrap();
    assert_eq!(v.shortfall, vec![(1, 0)]);
    assert!(v.labels.iter().all(|&l| l == 0));
    // One full round, then two retries for class 1 only.
    assert_eq!(server.log().len(), 2 * 3);
    assert!((v.kept_fraction - 10.0 / 40.0).abs() < 1e-15);
}

#[test]
fn retry_cap_zero_is_a_single_verify_pass() {
    let sem = semantics(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let cfg = TrainConfig {
        regen_retry_cap: 0,
        min_verified_per_class: 5,
        ..small_cfg()
    };
    let gen = init_generator(3, 2, 4, &cfg).unwrap();
    let server = biased_server(4);
    let mut remote = RemoteTeacher::new(InProcessChannel::new(server.clone()));
    let v = ensure_quota(&gen, &mut remote, &sem, &[0, 1], &cfg).unwrap();

    let batch = generate(&gen, &sem, &[0, 1], cfg.per_class_count, &cfg.noise.fork("quota", 0)).unwrap();
    let req = FeedbackRequest {
        scenario: cfg.scenario,
        batch: batch.features.clone(),
        cond_labels: batch.cond_labels.clone(),
        want_softmax: true,
        want_ce_grad: false,
    };
    let resp = compute_feedback(server.teacher(), server.regularizer(), &req).unwrap();
    let single = verify(&batch, resp.softmax.as_ref().unwrap(), &resp.class_space).unwrap();
    assert_eq!(v.features, single.features);
    assert_eq!(v.labels, single.labels);
    assert_eq!(v.teacher_softmax, single.teacher_softmax);
    assert_eq!(v.kept_fraction, single.kept_fraction);
    assert_eq!(v.shortfall, vec![(1, 0)]);
}

#[test]
fn satisfied_quota_needs_one_round() {
    let sem = semantics(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let cfg = TrainConfig {
        min_verified_per_class: 5,
        upload_chunk: 7,
        ..small_cfg()
    };
    let gen = init_generator(3, 2, 4, &cfg).unwrap();
    let server = biased_server(4);
    let mut remote = RemoteTeacher::new(InProcessChannel::new(server.clone()));
    let v = ensure_quota(&gen, &mut remote, &sem, &[0], &cfg).unwrap();
    assert!(v.shortfall.is_empty());
    assert_eq!(v.labels.len(), 10);
    // 10 rows in uploads of at most 7.
    assert_eq!(server.log().len(), 4);
}

// Gradients on a 2-class toy.

struct Toy {
    teacher: TeacherModel,
    reg: RegularizerState,
    sem: SemanticTable,
    gen: Mlp,
    z: Matrix,
    labels: Vec<usize>,
}

fn toy(seed: u64) -> Toy {
    let dim_x = 5;
    let teacher = TeacherModel {
        params: Mlp::init(&classifier_layers(dim_x, &[7], 2), Role::Teacher, seed).unwrap(),
        class_space: vec![0, 1],
        train_accuracy: 0.0,
        loss_trace: Vec::new(),
    };
    let gaussians = (0..2)
        .map(|c| {
            let m = uniform_matrix(20, dim_x, 0.0, 1.0, seed + 10 + c as u64);
            (c, DiagGaussian::fit(&m, &(0..20).collect::<Vec<_>>()))
        })
        .collect();
    let cfg = TrainConfig {
        gen_hidden: 9,
        seed,
        ..small_cfg()
    };
    let mut gen = init_generator(3, 2, dim_x, &cfg).unwrap();
    // Shift the output bias so every ReLU unit is active.
    let (_, bs) = gen.params_mut();
    bs[1].iter_mut().for_each(|b| *b += 3.0);
    Toy {
        teacher,
        reg: RegularizerState::from_gaussians(0.5, gaussians).unwrap(),
        sem: semantics(&[&[1.0, 0.2], &[-0.4, 1.0]]),
        gen,
        z: random_matrix(12, 3, seed + 1),
        labels: (0..12).map(|r| r % 2).collect(),
    }
}

fn gen_forward(gen: &Mlp, toy: &Toy) -> Matrix {
    generate_from_noise(gen, &toy.sem, &toy.labels, toy.z.clone())
        .unwrap()
        .0
        .features
}

#[test]
fn white_box_generator_gradient_matches_finite_differences() {
    let t = toy(3);
    let alpha = 0.5;
    let (batch, cache) = generate_from_noise(&t.gen, &t.sem, &t.labels, t.z.clone()).unwrap();
    assert!(
        batch.features.data().iter().all(|&v| v > 0.0),
        "toy must stay off the ReLU kink"
    );
    let req = FeedbackRequest {
        scenario: Scenario::WhiteBox,
        batch: batch.features,
        cond_labels: t.labels.clone(),
        want_softmax: true,
        want_ce_grad: true,
    };
    let resp = compute_feedback(&t.teacher, &t.reg, &req).unwrap();
    let analytic = generator_white_grads(&t.gen, &cache, &resp, alpha).unwrap();

    // Local copy of the teacher: CE(T(G)) + alpha * R(G).
    let objective = |g: &Mlp| {
        let x = gen_forward(g, &t);
        let p = softmax(&t.teacher.params.predict(&x)?);
        let (ce, _) = loss_ce(&p, &t.labels)?;
        Ok(ce + alpha * t.reg.value_grad(&x, &t.labels)?.0)
    };
    let err = grad_check_against(&t.gen, &analytic, objective, FD_EPS, MIN_SAMPLED_COORDS, 1).unwrap();
    assert!(err < FD_TOL, "white-box generator max relative error {err}");
}

#[test]
fn black_box_joint_gradient_matches_finite_differences() {
    let t = toy(4);
    let alpha = 0.5;
    let student = Mlp::init(&student_layers(5, &[6], 2), Role::Student, 8).unwrap();
    let (batch, cache) = generate_from_noise(&t.gen, &t.sem, &t.labels, t.z.clone()).unwrap();
    assert!(batch.features.data().iter().all(|&v| v > 0.0));
    // Teacher outputs held fixed for the whole step.
    let targets = softmax(&t.teacher.params.predict(&batch.features).unwrap());
    let (_, reg_grad) = t.reg.value_grad(&batch.features, &t.labels).unwrap();
    let (mse, g_grads, s_grads) =
        black_step_grads(&t.gen, &cache, &student, &batch.features, &targets, &reg_grad, alpha).unwrap();

    let objective = |g: &Mlp, s: &Mlp| -> azsl_core::Result<f64> {
        let x = gen_forward(g, &t);
        let p = softmax(&s.predict(&x)?);
        Ok(loss_mse(&p, &targets)?.0 + alpha * t.reg.value_grad(&x, &t.labels)?.0)
    };
    let base = objective(&t.gen, &student).unwrap();
    let reg0 = t.reg.value_grad(&batch.features, &t.labels).unwrap().0;
    assert!((base - (mse + alpha * reg0)).abs() < 1e-12);

    let err_g = grad_check_against(
        &t.gen,
        &g_grads,
        |g| objective(g, &student),
        FD_EPS,
        MIN_SAMPLED_COORDS,
        2,
    )
    .unwrap();
    let err_s = grad_check_against(
        &student,
        &s_grads,
        |s| objective(&t.gen, s),
        FD_EPS,
        MIN_SAMPLED_COORDS,
        3,
    )
    .unwrap();
    assert!(err_g < FD_TOL, "generator max relative error {err_g}");
    assert!(err_s < FD_TOL, "student max relative error {err_s}");
}

#[test]
fn black_box_step_treats_teacher_outputs_as_constants() {
    let t = toy(5);
    let student = Mlp::init(&student_layers(5, &[6], 2), Role::Student, 9).unwrap();
    let (batch, cache) = generate_from_noise(&t.gen, &t.sem, &t.labels, t.z.clone()).unwrap();
    let targets = softmax(&t.teacher.params.predict(&batch.features).unwrap());
    let literal = Matrix::from_vec(targets.rows(), targets.cols(), targets.data().to_vec()).unwrap();
    let reg = t.reg.value_grad(&batch.features, &t.labels).unwrap().1;
    let a = black_step_grads(&t.gen, &cache, &student, &batch.features, &targets, &reg, 0.5).unwrap();
    let b = black_step_grads(&t.gen, &cache, &student, &batch.features, &literal, &reg, 0.5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn student_matching_its_targets_gets_no_update() {
    let t = toy(6);
    let student = Mlp::init(&student_layers(5, &[6], 2), Role::Student, 1).unwrap();
    let (batch, cache) = generate_from_noise(&t.gen, &t.sem, &t.labels, t.z.clone()).unwrap();
    let targets = softmax(&student.predict(&batch.features).unwrap());
    let zero = Matrix::zeros(batch.features.rows(), batch.features.cols());
    let (mse, g, s) = black_step_grads(&t.gen, &cache, &student, &batch.features, &targets, &zero, 0.0).unwrap();
    assert_eq!(mse, 0.0);
    assert!(g.is_zero() && s.is_zero());
    let (mse, grads) = student_grads(&student, &batch.features, &targets).unwrap();
    assert_eq!(mse, 0.0);
    assert!(grads.is_zero());
}

#[test]
fn confident_teacher_and_zero_alpha_leave_the_generator_still() {
    let t = toy(7);
    // A teacher whose logits separate the classes by a wide margin everywhere.
    let w = Matrix::filled(5, 2, 0.0);
    let bias = vec![200.0, -200.0];
    let teacher = TeacherModel {
        params: Mlp::from_parts(
            Role::Teacher,
            &[LayerSpec::new(5, 2, Activation::Identity)],
            vec![w],
            vec![bias],
            0,
        )
        .unwrap(),
        class_space: vec![0, 1],
        train_accuracy: 1.0,
        loss_trace: Vec::new(),
    };
    let labels = vec![0; 12];
    let (batch, cache) = generate_from_noise(&t.gen, &t.sem, &labels, t.z.clone()).unwrap();
    let req = FeedbackRequest {
        scenario: Scenario::WhiteBox,
        batch: batch.features,
        cond_labels: labels,
        want_softmax: true,
        want_ce_grad: true,
    };
    let resp = compute_feedback(&teacher, &t.reg, &req).unwrap();
    let grads = generator_white_grads(&t.gen, &cache, &resp, 0.0).unwrap();
    assert!(grads.norm() < 1e-12, "update norm {}", grads.norm());
}

#[test]
fn student_gradient_matches_finite_differences() {
    let student = Mlp::init(&student_layers(6, &[8, 5], 3), Role::Student, 12).unwrap();
    let x = random_matrix(10, 6, 2);
    let targets = softmax(&random_matrix(10, 3, 3));
    let err = grad_check(
        &student,
        |s| student_grads(s, &x, &targets),
        FD_EPS,
        MIN_SAMPLED_COORDS,
        4,
    )
    .unwrap();
    assert!(err < FD_TOL, "student max relative error {err}");
}

// Training on the default synthetic benchmark.

struct Desk {
    ds: Dataset,
    split: SplitBundle,
    server: Arc<TeacherServer>,
    cfg: TrainConfig,
    classes: ClassSplit,
}

fn desk(seed: u64, scenario: &str, mode: &str) -> Desk {
    let dir = tempfile::tempdir().unwrap();
    let exp = desk_config(dir.path(), scenario, mode, seed, "");
    let (ds, unseen) = load_dataset(&exp).unwrap();
    let split = make_split(&exp, &ds, &unseen).unwrap();
    let server = Arc::new(build_server(&exp, &ds, &split).unwrap());
    let classes = ClassSplit {
        dim_x: ds.dim_x(),
        seen: split.seen_classes.clone(),
        unseen: split.unseen_classes.clone(),
    };
    Desk {
        cfg: exp.train_config(),
        ds,
        split,
        server,
        classes,
    }
}

#[test]
fn student_loss_decreases_over_the_first_ten_epochs() {
    let mut traces = Vec::new();
    for seed in SEEDS {
        let d = desk(seed, "whitebox", "transductive");
        let cfg = TrainConfig {
            gen_epochs: 50,
            student_epochs: 10,
            ..d.cfg.clone()
        };
        let classes = d.classes.teacher_classes(TeacherMode::Transductive);
        let mut gen = init_generator(cfg.noise.dim, d.ds.dim_a(), d.ds.dim_x(), &cfg).unwrap();
        let mut remote = RemoteTeacher::new(InProcessChannel::new(d.server.clone()));
        train_generator_white(&mut gen, &mut remote, d.ds.semantics(), &classes, &cfg).unwrap();
        let verified = ensure_quota(&gen, &mut remote, d.ds.semantics(), &classes, &cfg).unwrap();
        let mut student = Mlp::init(
            &student_layers(d.ds.dim_x(), &cfg.student_hidden, classes.len()),
            Role::Student,
            seed,
        )
        .unwrap();
        let trace = train_student(&mut student, &verified, &cfg).unwrap();
        traces.push(trace.iter().map(|r| r.loss).collect::<Vec<f64>>());
    }
    let med: Vec<f64> = (0..10).map(|e| median(traces.iter().map(|t| t[e]).collect())).collect();
    assert!(med.windows(2).all(|w| w[1] < w[0]), "median trace {med:?}");
}

#[test]
fn white_box_generator_trace_is_nonincreasing_over_50_epochs() {
    let mut traces = Vec::new();
    for seed in SEEDS {
        let d = desk(seed, "whitebox", "transductive");
        let cfg = TrainConfig {
            gen_epochs: 50,
            ..d.cfg.clone()
        };
        let classes = d.classes.teacher_classes(TeacherMode::Transductive);
        let mut gen = init_generator(cfg.noise.dim, d.ds.dim_a(), d.ds.dim_x(), &cfg).unwrap();
        let mut remote = RemoteTeacher::new(InProcessChannel::new(d.server.clone()));
        let trace = train_generator_white(&mut gen, &mut remote, d.ds.semantics(), &classes, &cfg).unwrap();
        traces.push(trace.iter().map(|r| r.total).collect::<Vec<f64>>());
    }
    let med: Vec<f64> = (0..50).map(|e| median(traces.iter().map(|t| t[e]).collect())).collect();
    assert!(nonincreasing_within(&med, 0.05), "median trace {med:?}");
}

#[test]
fn black_box_training_discloses_only_low_risk_messages() {
    let d = desk(0, "blackbox", "transductive");
    let cfg = TrainConfig {
        gen_epochs: 20,
        ..d.cfg.clone()
    };
    let classes = d.classes.teacher_classes(TeacherMode::Transductive);
    let mut gen = init_generator(cfg.noise.dim, d.ds.dim_a(), d.ds.dim_x(), &cfg).unwrap();
    let mut student = Mlp::init(
        &student_layers(d.ds.dim_x(), &cfg.student_hidden, classes.len()),
        Role::Student,
        0,
    )
    .unwrap();
    let mut remote = RemoteTeacher::new(InProcessChannel::new(d.server.clone()));
    let trace = train_black(&mut gen, &mut student, &mut remote, d.ds.semantics(), &classes, &cfg).unwrap();
    assert_eq!(trace.len(), 20);
    assert_eq!(remote.transcript().len(), 40);
    assert!(remote.transcript().entries().iter().all(|e| e.risk == RiskTag::Low));
}

#[test]
fn inductive_classifier_heads_follow_the_class_space() {
    let d = desk(1, "whitebox", "inductive");
    let cfg = TrainConfig {
        classifier_epochs: 2,
        per_class_count: 20,
        ..d.cfg.clone()
    };
    let gen = init_generator(cfg.noise.dim, d.ds.dim_a(), d.ds.dim_x(), &cfg).unwrap();
    let (czsl, _, _) = train_inductive_classifier(&gen, d.ds.semantics(), &d.split.unseen_classes, &cfg).unwrap();
    assert_eq!(czsl.params.output_dim(), d.split.unseen_classes.len());
    assert_eq!(czsl.classes, d.split.unseen_classes);
    let (gzsl, _, _) = train_inductive_classifier(&gen, d.ds.semantics(), &d.classes.all(), &cfg).unwrap();
    assert_eq!(gzsl.params.output_dim(), d.ds.class_count());
    assert!(train_inductive_classifier(&gen, d.ds.semantics(), &[], &cfg).is_err());
}

#[test]
fn separated_generated_clusters_are_classified() {
    // A generator whose output depends only on the one-hot embedding.
    let classes = 4;
    let (noise_dim, dim_x, hidden) = (3, 6, classes);
    let sem_rows: Vec<Vec<f64>> = (0..classes)
        .map(|c| (0..classes).map(|j| f64::from(u8::from(c == j))).collect())
        .collect();
    let sem = SemanticTable::new(Matrix::from_rows(&sem_rows).unwrap(), SemanticSource::Synthetic).unwrap();
    let specs = generator_layers(noise_dim, classes, hidden, dim_x);
    let mut w1 = Matrix::zeros(noise_dim + classes, hidden);
    for c in 0..classes {
        w1.set(noise_dim + c, c, 1.0);
    }
    let mut w2 = Matrix::zeros(hidden, dim_x);
    for c in 0..classes {
        w2.set(c, c, 5.0);
    }
    let gen = Mlp::from_parts(
        Role::Generator,
        &specs,
        vec![w1, w2],
        vec![vec![0.0; hidden], vec![0.0; dim_x]],
        0,
    )
    .unwrap();

    // Nearest-centroid oracle on the generated set.
    let all: Vec<usize> = (0..classes).collect();
    let batch = generate(&gen, &sem, &all, 10, &NoiseSpec::new(noise_dim, 1)).unwrap();
    let centroid = |c: usize| -> Vec<f64> { batch.features.row(c * 10).to_vec() };
    let oracle = (0..batch.features.rows())
        .filter(|&r| {
            let x = batch.features.row(r);
            let d = |c: usize| -> f64 { x.iter().zip(centroid(c)).map(|(a, b)| (a - b) * (a - b)).sum() };
            (0..classes).min_by(|&a, &b| d(a).partial_cmp(&d(b)).unwrap()).unwrap() == batch.cond_labels[r]
        })
        .count() as f64
        / batch.features.rows() as f64;
    assert!(oracle >= 0.99);

    let cfg = TrainConfig {
        per_class_count: 50,
        classifier_epochs: 100,
        classifier_learning_rate: 1e-2,
        batch_size: 32,
        noise: NoiseSpec::new(noise_dim, 2),
        ..TrainConfig::default()
    };
    let (_, _, acc) = train_inductive_classifier(&gen, &sem, &all, &cfg).unwrap();
    assert!(acc >= 0.99, "classifier train accuracy {acc}");
}

#[test]
fn algorithm_runs_are_replayable() {
    for (scenario, mode) in [("whitebox", "inductive"), ("blackbox", "transductive")] {
        let run = || {
            let d = desk(2, scenario, mode);
            let cfg = TrainConfig {
                gen_epochs: 15,
                student_epochs: 3,
                classifier_epochs: 2,
                per_class_count: 20,
                ..d.cfg.clone()
            };
            let mut remote = RemoteTeacher::new(InProcessChannel::new(d.server.clone()));
            run_algorithm1(&mut remote, d.ds.semantics(), &d.classes, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.transcript_digest(), b.transcript_digest());
        assert_eq!(a.classifier_czsl.is_some(), mode == "inductive");
        if scenario == "blackbox" {
            assert_eq!(a.transcript.mid_risk_count(), 0);
        }
    }
}

#[test]
fn invalid_train_config_is_rejected() {
    let bad = [
        TrainConfig {
            alpha: -1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            gen_epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            noise: NoiseSpec::new(0, 0),
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
    assert!(TrainConfig::default().validate().is_ok());
    let empty = azsl_core::client::VerifiedBatch {
        features: Matrix::zeros(0, 2),
        labels: Vec::new(),
        teacher_softmax: Matrix::zeros(0, 2),
        class_space: vec![0, 1],
        kept_fraction: 0.0,
        shortfall: Vec::new(),
    };
    let mut s = Mlp::init(&student_layers(2, &[3], 2), Role::Student, 0).unwrap();
    assert!(train_student(&mut s, &empty, &TrainConfig::default()).is_err());
    let _ = MlpGrads::zeros_like(&s);
}
