mod common;

use common::*;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;
use transfer_risk::distributions::{seeded_rng, GaussianJoint};
use transfer_risk::gaussian_lab::*;
use transfer_risk::risk::AffineModel;

fn scalar_task(mu_x: DVector<f64>, mu_y: f64, sxx: DMatrix<f64>, sxy: DVector<f64>, syy: f64, role: TaskRole) -> GaussianTask {
    let d = sxy.len();
    let joint = GaussianJoint::new(mu_x, dvector![mu_y], sxx, DMatrix::from_column_slice(d, 1, sxy.as_slice()), dmatrix![syy]).unwrap();
    GaussianTask::new(joint, role).unwrap()
}

fn params(dim_x: usize) -> RandomTaskParams {
    RandomTaskParams {
        dim_x,
        ..RandomTaskParams::default()
    }
}

fn predict(m: &AffineModel, x: &DVector<f64>) -> f64 {
    m.apply_vec(x)[0]
}

#[test]
fn optimal_model_matches_sample_least_squares() {
    let mut rng = seeded_rng(1);
    let task = random_task(&params(3), TaskRole::Source, &mut rng).unwrap();
    let model = optimal_linear_model(&task).unwrap();
    let (w, b) = ols(&draw_joint(&task.joint, 100_000, 2));
    for i in 0..3 {
        assert!((model.weights()[(0, i)] - w[i]).abs() < 1e-2, "w[{i}]");
    }
    assert!((model.bias()[0] - b).abs() < 1e-2);
}

#[test]
fn pushforward_matches_sampled_predictions() {
    let mut rng = seeded_rng(3);
    let s = random_task(&params(2), TaskRole::Source, &mut rng).unwrap();
    let t = random_task(&params(2), TaskRole::Target, &mut rng).unwrap();
    let (_, p_st) = basic_case_outputs(&s, &t).unwrap();
    let f_s = optimal_linear_model(&s).unwrap();
    let preds: Vec<f64> = draw_joint(&t.joint, 100_000, 4).iter().map(|(x, _)| predict(&f_s, x)).collect();
    let (m, v) = mean_var(&preds);
    assert!((m - p_st.mean()[0]).abs() < 2e-2);
    assert!((v - p_st.cov()[(0, 0)]).abs() < 2e-2);
}

#[test]
fn regret_matches_monte_carlo_loss_gap() {
    let mut rng = seeded_rng(5);
    let s = random_task(&params(2), TaskRole::Source, &mut rng).unwrap();
    let t = random_task(&params(2), TaskRole::Target, &mut rng).unwrap();
    let f_s = optimal_linear_model(&s).unwrap();
    let f_t = optimal_linear_model(&t).unwrap();
    let samples = draw_joint(&t.joint, 1_000_000, 6);
    let gap = samples
        .iter()
        .map(|(x, y)| (y[0] - predict(&f_s, x)).powi(2) - (y[0] - predict(&f_t, x)).powi(2))
        .sum::<f64>()
        / samples.len() as f64;
    let r = regret(&s, &t).unwrap();
    assert!((gap - r).abs() < 1e-2, "mc {gap} vs closed form {r}");
    let direct = target_loss(&t, &f_s).unwrap() - target_loss(&t, &f_t).unwrap();
    assert!((direct - r).abs() < 1e-10);
}

#[test]
fn doubled_weights_regret_and_parallel_residual() {
    // Source regresses twice as strongly on the same inputs, with matched means.
    let sxx = dmatrix![1.5, 0.4; 0.4, 0.8];
    let c_t = dvector![0.3, -0.2];
    let mu_x = dvector![0.5, -1.0];
    let t = scalar_task(mu_x.clone(), 0.7, sxx.clone(), c_t.clone(), 1.0, TaskRole::Target);
    let s = scalar_task(mu_x, 0.7, sxx.clone(), &c_t * 2.0, 2.0, TaskRole::Source);
    let w_t = sxx.clone().lu().solve(&c_t).unwrap();
    let expected = (w_t.transpose() * &sxx * &w_t)[(0, 0)];
    let r = risk_regret_residual(&s, &t).unwrap();
    assert!((r.regret - expected).abs() < 1e-12);
    // w_S = 2 w_T: Cauchy-Schwarz is tight.
    assert!(r.residual.abs() < 1e-12);
    assert!((r.risk_w - r.regret).abs() < 1e-12);
}

#[test]
fn mean_shift_only_has_bias_but_no_variance() {
    let sxx = dmatrix![1.2, 0.3; 0.3, 0.9];
    let sxy = dvector![0.5, 0.2];
    let s = scalar_task(dvector![0.0, 0.0], 0.0, sxx.clone(), sxy.clone(), 1.0, TaskRole::Source);
    let t = scalar_task(dvector![0.4, -0.3], 0.9, sxx, sxy, 1.0, TaskRole::Target);
    let (kl, w) = basic_case_risks(&s, &t).unwrap();
    assert!(kl.variance_term.abs() < 1e-14 && w.variance_term.abs() < 1e-14);
    assert!(kl.bias_term > 0.0 && w.bias_term > 0.0);

    // Independent samples of P_T and P_ST.
    let f_s = optimal_linear_model(&s).unwrap();
    let f_t = optimal_linear_model(&t).unwrap();
    let n = 100_000;
    let p_t: Vec<f64> = draw_joint(&t.joint, n, 7).iter().map(|(x, _)| predict(&f_t, x)).collect();
    let p_st: Vec<f64> = draw_joint(&t.joint, n, 8).iter().map(|(x, _)| predict(&f_s, x)).collect();
    let w_mc = w2_sq_sorted(&p_t, &p_st);
    assert!((w_mc - w.total).abs() < 1e-2, "w: mc {w_mc} vs {}", w.total);

    // KL(P_T || P_ST) as E_{P_T}[log p_T - log p_ST].
    let (pt, pst) = basic_case_outputs(&s, &t).unwrap();
    let (m1, v1) = (pt.mean()[0], pt.cov()[(0, 0)]);
    let (m2, v2) = (pst.mean()[0], pst.cov()[(0, 0)]);
    let kl_mc = p_t.iter().map(|y| log_density_1d(*y, m1, v1) - log_density_1d(*y, m2, v2)).sum::<f64>() / n as f64;
    assert!((kl_mc - kl.total).abs() < 1e-2, "kl: mc {kl_mc} vs {}", kl.total);
}

#[test]
fn matched_conditional_variance_cancels_variance_terms() {
    // 1-D: variance terms vanish when c_T^2 / a = (c_S / s)^2 a, i.e. c_T = c_S a / s.
    let (s_var, c_s, a) = (1.3, 0.6, 2.1);
    let c_t = c_s * a / s_var;
    let s = scalar_task(dvector![0.0], 0.0, dmatrix![s_var], dvector![c_s], 1.0, TaskRole::Source);
    let t = scalar_task(dvector![0.0], 0.0, dmatrix![a], dvector![c_t], 2.0, TaskRole::Target);
    let (kl, w) = basic_case_risks(&s, &t).unwrap();
    assert!(kl.variance_term < 1e-12 && w.variance_term < 1e-12);
}

#[test]
fn h_is_nonnegative_with_unique_zero() {
    assert_eq!(h(1.0), 0.0);
    for i in -60..=60 {
        let x = 10f64.powf(i as f64 / 10.0);
        assert!(h(x) >= 0.0);
        if i != 0 {
            assert!(h(x) > 0.0, "h({x}) = {}", h(x));
        }
    }
}

#[test]
fn bias_terms_vanish_together() {
    let mut rng = seeded_rng(9);
    for i in 0..50 {
        let s = random_task(&params(2), TaskRole::Source, &mut rng).unwrap();
        let mut t = random_task(&params(2), TaskRole::Target, &mut rng).unwrap();
        if i % 2 == 0 {
            // Force mu_TY = mu_SY + w_S^T (mu_TX - mu_SX).
            let f_s = optimal_linear_model(&s).unwrap();
            let j = &t.joint;
            let mu_y = f_s.apply_vec(j.mu_x());
            let joint = GaussianJoint::new(j.mu_x().clone(), mu_y, j.sigma_xx().clone(), j.sigma_xy().clone(), j.sigma_yy().clone()).unwrap();
            t = GaussianTask::target(joint).unwrap();
        }
        let (kl, w) = basic_case_risks(&s, &t).unwrap();
        let zero = [kl.bias_term < 1e-12, w.bias_term < 1e-12];
        assert_eq!(zero[0], zero[1]);
        assert_eq!(zero[0], i % 2 == 0);
        // The regret's bias part equals the W bias term.
        let rr = risk_regret_residual(&s, &t).unwrap();
        assert!((rr.regret - rr.risk_w - rr.residual).abs() < 1e-9);
    }
}

fn augmented_pair(rng: &mut impl Rng, d: usize, k: usize) -> (GaussianTask, GaussianTask) {
    let t = random_task(&params(d + k), TaskRole::Target, rng).unwrap();
    let xs: Vec<usize> = (0..d).collect();
    let s = GaussianTask::source(sub_joint(&t.joint, &xs, &[0]).unwrap()).unwrap();
    (s, t)
}

#[test]
fn conditionally_independent_feature_gives_zero_risk() {
    let mut rng = seeded_rng(21);
    for _ in 0..20 {
        let s = random_task(&params(2), TaskRole::Source, &mut rng).unwrap();
        let sxx = s.joint.sigma_xx().clone();
        // Z = A X + noise keeps Z independent of Y given X.
        let a = DMatrix::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.0));
        let sigma_as_x = &sxx * a.transpose();
        let sigma_a_x = &a * &sxx * a.transpose() + dmatrix![0.5];
        let mu_a = &a * s.joint.mu_x();
        let cross = conditionally_independent_cross_cov(&s, &sigma_as_x).unwrap();
        let t = feature_augmented_target(&s, mu_a, sigma_as_x, sigma_a_x, cross).unwrap();
        let (kl, w) = feature_augmentation_risks(&s, &t).unwrap();
        assert!(kl.total.abs() < 1e-9 && w.total.abs() < 1e-9);
        let f_t = optimal_linear_model(&t).unwrap();
        let f_s = optimal_linear_model(&s).unwrap();
        assert!((f_t.weights().columns(0, 2) - f_s.weights()).amax() < 1e-9);
        assert!(f_t.weights()[(0, 2)].abs() < 1e-9);
        assert!((f_t.bias()[0] - f_s.bias()[0]).abs() < 1e-9);
    }
}

#[test]
fn uncorrelated_feature_ratio_and_monte_carlo_kl() {
    let s = scalar_task(dvector![0.2, 0.1], 0.5, dmatrix![1.0, 0.2; 0.2, 0.7], dvector![0.4, 0.1], 1.5, TaskRole::Source);
    let sigma_a_x = dmatrix![0.9];
    let sigma_a_xy = dmatrix![0.35];
    let t = feature_augmented_target(&s, dvector![0.0], DMatrix::zeros(2, 1), sigma_a_x.clone(), sigma_a_xy.clone()).unwrap();
    let q_s = {
        let sxy = s.joint.sigma_xy();
        (sxy.transpose() * s.joint.sigma_xx().clone().lu().solve(sxy).unwrap())[(0, 0)]
    };
    let expected = 1.0 + 0.35 * 0.35 / 0.9 / q_s;
    let ratio = feature_augmentation_ratio(&s, &t).unwrap();
    assert!((ratio - expected).abs() < 1e-12);
    let (kl, w) = feature_augmentation_risks(&s, &t).unwrap();
    assert!(kl.variance_term > 0.0 && w.variance_term > 0.0);
    assert_eq!((kl.bias_term, w.bias_term), (0.0, 0.0));

    let f_s = optimal_linear_model(&s).unwrap();
    let f_t = optimal_linear_model(&t).unwrap();
    let samples = draw_joint(&t.joint, 100_000, 22);
    let p_t: Vec<f64> = samples.iter().map(|(x, _)| predict(&f_t, x)).collect();
    let p_st: Vec<f64> = samples.iter().map(|(x, _)| predict(&f_s, &x.rows(0, 2).into_owned())).collect();
    let (m1, v1) = mean_var(&p_t);
    let (m2, v2) = mean_var(&p_st);
    let kl_mc = kl_1d(m1, v1, m2, v2);
    assert!((kl_mc - kl.total).abs() < 1e-2, "mc {kl_mc} vs {}", kl.total);
}

#[test]
fn augmentation_never_hurts_target_loss() {
    let mut rng = seeded_rng(23);
    for i in 0..200 {
        let (s, t) = augmented_pair(&mut rng, 2, 1);
        let f_s = optimal_linear_model(&s).unwrap();
        let f_t = optimal_linear_model(&t).unwrap();
        let samples = draw_joint(&t.joint, 20_000, 1000 + i);
        let n = samples.len() as f64;
        let (mut loss_s, mut loss_t) = (0.0, 0.0);
        for (x, y) in &samples {
            loss_s += (y[0] - predict(&f_s, &x.rows(0, 2).into_owned())).powi(2) / n;
            loss_t += (y[0] - predict(&f_t, x)).powi(2) / n;
        }
        assert!(loss_t <= loss_s + 1e-2, "instance {i}: {loss_t} > {loss_s}");
    }
}

#[test]
fn embedding_violation_is_rejected() {
    let mut rng = seeded_rng(25);
    let (s, _) = augmented_pair(&mut rng, 2, 1);
    let unrelated = random_task(&params(3), TaskRole::Target, &mut rng).unwrap();
    assert!(feature_augmentation_risks(&s, &unrelated).is_err());
}

fn output_pair(rng: &mut impl Rng) -> (GaussianTask, GaussianTask) {
    let p = RandomTaskParams {
        dim_x: 3,
        dim_y: 2,
        ..RandomTaskParams::default()
    };
    let t = random_task(&p, TaskRole::Target, rng).unwrap();
    let s = GaussianTask::source(sub_joint(&t.joint, &[0, 1, 2], &[0]).unwrap()).unwrap();
    (s, t)
}

#[test]
fn optimal_initializer_gives_zero_output_risk() {
    let mut rng = seeded_rng(31);
    for _ in 0..20 {
        let (s, t) = output_pair(&mut rng);
        let init = optimal_initializer(&s, &t).unwrap();
        let r = output_augmentation_risks(&s, &t, &init).unwrap();
        assert!(r.kl.abs() < 1e-9 && r.w.abs() < 1e-9, "kl {} w {}", r.kl, r.w);
        assert!(r.decomposition.total.abs() < 1e-9);
    }
}

#[test]
fn shifted_initializer_bias_is_a_quadratic_form() {
    let mut rng = seeded_rng(33);
    let (s, t) = output_pair(&mut rng);
    let opt = optimal_initializer(&s, &t).unwrap();
    let c = 0.7;
    let init = AffineModel::new(opt.weights().clone(), opt.bias() + dvector![c]).unwrap();
    let r = output_augmentation_risks(&s, &t, &init).unwrap();
    // Sigma_2 = [w_S w_0]^T Sigma_SX [w_S w_0] built from scratch.
    let sxx = s.joint.sigma_xx();
    let w_s = sxx.clone().lu().solve(s.joint.sigma_xy()).unwrap();
    let w_0 = opt.weights().transpose();
    let mut stacked = DMatrix::zeros(3, 2);
    stacked.set_column(0, &w_s.column(0));
    stacked.set_column(1, &w_0.column(0));
    let sigma2 = stacked.transpose() * sxx * &stacked;
    let gap = dvector![0.0, -c];
    let expected = 0.5 * (gap.transpose() * sigma2.lu().solve(&gap).unwrap())[(0, 0)];
    assert!((r.decomposition.bias_term - expected).abs() < 1e-10);
    assert!(r.decomposition.variance_term.abs() < 1e-9);
    assert_eq!(r.mean_gap[0], 0.0);
    assert!((r.mean_gap[1] + c).abs() < 1e-12);
}

#[test]
fn variance_term_forms_agree_and_kl_decomposes() {
    let mut rng = seeded_rng(35);
    for _ in 0..100 {
        let (s, t) = output_pair(&mut rng);
        let init = AffineModel::new(
            DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0)),
            dvector![rng.gen_range(-1.0..1.0)],
        )
        .unwrap();
        let r = output_augmentation_risks(&s, &t, &init).unwrap();
        let (s1, s2) = (r.laws.p_t.cov(), r.laws.p_st.cov());
        let eig = variance_term_eigen(s1, s2).unwrap();
        let tr = variance_term_trace(s1, s2).unwrap();
        assert!((eig - tr).abs() < 1e-9 * eig.abs().max(1.0), "{eig} vs {tr}");
        assert!(eig >= 0.0);
        assert!((r.decomposition.total - r.kl).abs() < 1e-9 * r.kl.max(1.0));
        let expected_tail = t.joint.mu_y()[1] - (init.weights() * s.joint.mu_x())[0] - init.bias()[0];
        assert_eq!(r.mean_gap[0], 0.0);
        assert!((r.mean_gap[1] - expected_tail).abs() < 1e-12);
    }
}
