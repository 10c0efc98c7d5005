mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use transfer_risk::distributions::{seeded_rng, EmpiricalDistribution};
use transfer_risk::finetune::*;
use transfer_risk::gaussian_lab::{basic_case_outputs, random_task, RandomTaskParams, TaskRole};
use transfer_risk::ot::OtConfig;
use transfer_risk::risk::{AffineModel, OutputMode, RiskCombiner, TransportMap};

fn scalar_law(v: &[f64]) -> EmpiricalDistribution {
    EmpiricalDistribution::from_scalars(v).unwrap()
}

fn identity_family() -> OutputFamily {
    OutputFamily {
        init: AffineModel::identity(1),
        mode: OutputMode::YOnly,
        softmax: false,
    }
}

/// Inputs from N(0,1) and labels `sinh(x) + 0.5`, which no affine map reproduces.
fn curved_instance(n: usize) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = draw(&DVector::from_element(1, 0.0), &DMatrix::identity(1, 1), n, 61)
        .iter()
        .map(|v| v[0])
        .collect();
    let ys = draw(&DVector::from_element(1, 0.0), &DMatrix::identity(1, 1), n, 62)
        .iter()
        .map(|v| v[0].sinh() + 0.5)
        .collect();
    (xs, ys)
}

fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn map_already_matching_labels_has_zero_risk() {
    let xs = vec![-1.0, 0.2, 0.5, 2.0];
    let source = TransportMap::Affine(AffineModel::linear_1d(&[2.0], 1.0).unwrap());
    let labels: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    let r = minimize_output_risk(
        &identity_family(),
        &source,
        &scalar_law(&xs),
        &scalar_law(&labels),
        1.0,
        &TrainConfig::risk_mode(),
        &OtConfig::default(),
    )
    .unwrap();
    assert!(r.risk < 1e-12);
    assert_eq!(r.best_epoch, 0);
}

fn train_curved(epochs: usize) -> MinimizedRisk {
    let (xs, ys) = curved_instance(60);
    let cfg = TrainConfig {
        epochs,
        learning_rate: 0.3,
        ..TrainConfig::risk_mode()
    };
    minimize_output_risk(
        &identity_family(),
        &TransportMap::Identity { dim: 1 },
        &scalar_law(&xs),
        &scalar_law(&ys),
        1.0,
        &cfg,
        &OtConfig::default(),
    )
    .unwrap()
}

#[test]
fn ten_epochs_approach_grid_optimum() {
    let (xs, ys) = curved_instance(60);
    let mut grid_best = f64::INFINITY;
    for i in 0..100 {
        for j in 0..100 {
            let w = 0.0 + 3.0 * i as f64 / 99.0;
            let b = -1.0 + 3.0 * j as f64 / 99.0;
            let pushed: Vec<f64> = xs.iter().map(|x| w * x + b).collect();
            grid_best = grid_best.min(w1_sorted(&pushed, &ys));
        }
    }
    let r = train_curved(10);
    assert_eq!(r.trace.epochs_run, 10);
    assert_eq!(r.trace.objective.len(), 10);
    assert!(r.risk <= 1.1 * grid_best, "trained {} vs grid {grid_best}", r.risk);
    // The reported risk is the W1 of the returned map.
    let TransportMap::Affine(m) = &r.map else { panic!("affine map expected") };
    let pushed: Vec<f64> = xs.iter().map(|x| m.apply(&[*x]).unwrap()[0]).collect();
    assert!((w1_sorted(&pushed, &ys) - r.risk).abs() < 1e-12);
}

#[test]
fn larger_budget_never_reports_more_risk() {
    let short = train_curved(10);
    let long = train_curved(50);
    assert!(long.risk <= short.risk + 1e-9);
    assert!(short.risk <= {
        let (xs, ys) = curved_instance(60);
        w1_sorted(&xs, &ys)
    });
}

#[test]
fn training_is_deterministic() {
    let a = train_curved(20);
    let b = train_curved(20);
    assert_eq!(a, b);
    let (train, test) = blobs(3, 60, 1.0, 71);
    let init = random_affine(3, 2, 5).unwrap();
    let cfg = TrainConfig::accuracy_mode();
    assert_eq!(
        train_classifier(&init, &train, &test, &cfg).unwrap(),
        train_classifier(&init, &train, &test, &cfg).unwrap()
    );
}

/// Class `c` centred on a point of a circle of radius `spread`, unit noise.
fn blobs(classes: usize, per_class: usize, spread: f64, seed: u64) -> (LabeledData, LabeledData) {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    for i in 0..per_class * 2 {
        let c = i % classes;
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let noise = draw(&DVector::zeros(2), &DMatrix::identity(2, 2), 1, r.gen());
        rows.push((vec![spread * angle.cos() + noise[0][0], spread * angle.sin() + noise[0][1]], c));
    }
    let split = |pick: usize| {
        let (x, y): (Vec<Vec<f64>>, Vec<usize>) = rows.iter().enumerate().filter(|(i, _)| (i / classes) % 2 == pick).map(|(_, r)| r.clone()).unzip();
        LabeledData::new(EmpiricalDistribution::uniform(x).unwrap(), y).unwrap()
    };
    (split(0), split(1))
}

/// Runs the perceptron; `true` if it reaches zero training errors.
fn perceptron_separates(data: &LabeledData) -> bool {
    let mut w = [0.0; 3];
    for _ in 0..1000 {
        let mut errors = 0;
        for (x, &y) in data.features.points().iter().zip(&data.labels) {
            let s = if y == 1 { 1.0 } else { -1.0 };
            if s * (w[0] * x[0] + w[1] * x[1] + w[2]) <= 0.0 {
                w[0] += s * x[0];
                w[1] += s * x[1];
                w[2] += s;
                errors += 1;
            }
        }
        if errors == 0 {
            return true;
        }
    }
    false
}

#[test]
fn separable_blobs_are_learned() {
    let (train, test) = blobs(2, 100, 4.0, 73);
    assert!(perceptron_separates(&train));
    let r = train_classifier(&random_affine(2, 2, 1).unwrap(), &train, &test, &TrainConfig::accuracy_mode()).unwrap();
    assert!(r.accuracy >= 0.95, "accuracy {}", r.accuracy);
    let obj = &r.trace.objective;
    assert!(obj.last().unwrap() < &obj[0]);
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let (mut train, mut test) = blobs(2, 200, 0.0, 75);
    let mut r = rng(76);
    train.labels.shuffle(&mut r);
    test.labels.shuffle(&mut r);
    let out = train_classifier(&random_affine(2, 2, 2).unwrap(), &train, &test, &TrainConfig::accuracy_mode()).unwrap();
    assert!((out.accuracy - 0.5).abs() <= 0.1, "accuracy {}", out.accuracy);
}

/// Multinomial logistic regression by Newton's method (IRLS) with a tiny ridge; class 0 is
/// the reference. Returns a `K x d` affine model.
fn irls_multinomial(data: &LabeledData, classes: usize) -> AffineModel {
    let d = data.features.dim();
    let q = (classes - 1) * (d + 1);
    let mut beta = DVector::<f64>::zeros(q);
    let rows: Vec<DVector<f64>> = data
        .features
        .points()
        .iter()
        .map(|x| DVector::from_iterator(d + 1, x.iter().copied().chain(std::iter::once(1.0))))
        .collect();
    for _ in 0..50 {
        let mut grad = DVector::<f64>::zeros(q);
        let mut hess = DMatrix::<f64>::identity(q, q) * 1e-8;
        for (z, &y) in rows.iter().zip(&data.labels) {
            let mut logits = vec![0.0; classes];
            for c in 1..classes {
                logits[c] = beta.rows((c - 1) * (d + 1), d + 1).dot(z);
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / s).collect();
            for a in 1..classes {
                let ia = (a - 1) * (d + 1);
                let r = if y == a { 1.0 } else { 0.0 } - p[a];
                grad.rows_mut(ia, d + 1).axpy(r, z, 1.0);
                for b in 1..classes {
                    let ib = (b - 1) * (d + 1);
                    let wgt = p[a] * (if a == b { 1.0 } else { 0.0 } - p[b]);
                    let block = z * z.transpose() * wgt;
                    let mut view = hess.view_mut((ia, ib), (d + 1, d + 1));
                    view += block;
                }
            }
        }
        let step = hess.lu().solve(&grad).unwrap();
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let mut w = DMatrix::zeros(classes, d);
    let mut b = DVector::zeros(classes);
    for c in 1..classes {
        let blk = beta.rows((c - 1) * (d + 1), d + 1);
        for j in 0..d {
            w[(c, j)] = blk[j];
        }
        b[c] = blk[d];
    }
    AffineModel::new(w, b).unwrap()
}

#[test]
fn classifier_matches_newton_reference() {
    let (train, test) = blobs(3, 150, 1.5, 77);
    let reference = accuracy(&irls_multinomial(&train, 3), &test);
    let got = train_classifier(&random_affine(3, 2, 3).unwrap(), &train, &test, &TrainConfig::accuracy_mode()).unwrap();
    assert!((got.accuracy - reference).abs() <= 0.05, "gd {} vs newton {reference}", got.accuracy);
}

#[test]
fn single_class_training_is_rejected() {
    let (mut train, test) = blobs(2, 10, 1.0, 79);
    train.labels.iter_mut().for_each(|y| *y = 0);
    assert!(train_classifier(&random_affine(2, 2, 1).unwrap(), &train, &test, &TrainConfig::accuracy_mode()).is_err());
}

#[test]
fn plateau_stop_respects_budget() {
    let (train, test) = blobs(2, 50, 4.0, 81);
    let cfg = TrainConfig {
        epochs: 500,
        learning_rate: 1e-12,
        plateau_patience: Some(5),
        ..TrainConfig::accuracy_mode()
    };
    let r = train_classifier(&random_affine(2, 2, 1).unwrap(), &train, &test, &cfg).unwrap();
    assert!(r.trace.epochs_run < 500);
    assert_eq!(r.trace.objective.len(), r.trace.epochs_run);
}

#[test]
fn label_proxy_bound_on_gaussian_instances() {
    // 2^{p-1} [W_p(P_ST, Law Y)^p + W_p(P_T, Law Y)^p] >= W_p(P_ST, P_T)^p, with p = 2 and
    // 1-D Gaussian W2^2 = (m1 - m2)^2 + (s1 - s2)^2.
    let w2 = |m1: f64, v1: f64, m2: f64, v2: f64| (m1 - m2).powi(2) + (v1.sqrt() - v2.sqrt()).powi(2);
    let mut rng = seeded_rng(83);
    for _ in 0..100 {
        let s = random_task(&RandomTaskParams::default(), TaskRole::Source, &mut rng).unwrap();
        let t = random_task(&RandomTaskParams::default(), TaskRole::Target, &mut rng).unwrap();
        let (p_t, p_st) = basic_case_outputs(&s, &t).unwrap();
        let (mt, vt) = (p_t.mean()[0], p_t.cov()[(0, 0)]);
        let (ms, vs) = (p_st.mean()[0], p_st.cov()[(0, 0)]);
        let (my, vy) = (t.joint.mu_y()[0], t.joint.sigma_yy()[(0, 0)]);
        let lhs = 2.0 * (w2(ms, vs, my, vy) + w2(mt, vt, my, vy));
        assert!(lhs >= w2(ms, vs, mt, vt) - 1e-12);
    }
}

#[test]
fn pair_table_shape_and_consistency() {
    let cfg = OfficeConfig {
        samples_per_class: 30,
        ..OfficeConfig::default()
    };
    let combiner = RiskCombiner::OFFICE;
    let table = evaluate_risk_accuracy_pairs(&SyntheticDomain::office_analog(), &combiner, &cfg).unwrap();
    assert_eq!(table.rows.len(), 6);
    for r in &table.rows {
        assert_eq!(r.transfer_risk, combiner.combine(r.input_risk, r.output_risk).unwrap());
        assert!((0.0..=1.0).contains(&r.accuracy));
    }
}

#[test]
fn identical_domains_have_zero_input_risk_and_top_accuracy() {
    let domains = vec![
        SyntheticDomain::new("A", 0.0, 101),
        SyntheticDomain::new("B", 0.0, 101),
        SyntheticDomain::new("W", 1.1, 303),
    ];
    let table = evaluate_risk_accuracy_pairs(&domains, &RiskCombiner::OFFICE, &OfficeConfig::default()).unwrap();
    // Each pair draws its own training seed, so the two identical pairs differ slightly;
    // both must still beat every pair involving W.
    let (same, other): (Vec<_>, Vec<_>) = table.rows.iter().partition(|r| r.target != "W" && r.source != "W");
    let best_other = other.iter().map(|r| r.accuracy).fold(0.0, f64::max);
    for r in same {
        assert!(r.input_risk < 1e-9);
        assert!(r.accuracy > best_other, "{}-{}: {} vs {best_other}", r.source, r.target, r.accuracy);
    }
}
