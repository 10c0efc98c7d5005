//! Closed-form transfer risks and regret for Gaussian linear regression: the basic case,
//! feature augmentation and output augmentation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{gaussian_kl, gaussian_w2, Gaussian, GaussianJoint};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, DEFAULT_INVERTIBILITY_FLOOR};
use crate::risk::AffineModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Source,
    Target,
}

/// A regression task `(X, Y) ~ N(mu, Sigma)` with invertible `Sigma_X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTask {
    pub joint: GaussianJoint,
    pub role: TaskRole,
}

impl GaussianTask {
    pub fn new(joint: GaussianJoint, role: TaskRole) -> Result<Self> {
        joint.sigma_xx_cholesky(DEFAULT_INVERTIBILITY_FLOOR)?;
        Ok(Self { joint, role })
    }

    pub fn source(joint: GaussianJoint) -> Result<Self> {
        Self::new(joint, TaskRole::Source)
    }

    pub fn target(joint: GaussianJoint) -> Result<Self> {
        Self::new(joint, TaskRole::Target)
    }

    pub fn dim_x(&self) -> usize {
        self.joint.dim_x()
    }

    pub fn dim_y(&self) -> usize {
        self.joint.dim_y()
    }

    /// `Sigma_X^{-1} Sigma_XY`, shape `d x k`.
    fn regression_matrix(&self) -> Result<DMatrix<f64>> {
        let chol = self.joint.sigma_xx_cholesky(DEFAULT_INVERTIBILITY_FLOOR)?;
        Ok(chol.solve(self.joint.sigma_xy()))
    }

    /// `Sigma_YX Sigma_X^{-1} Sigma_XY`: the variance explained by the optimal predictor.
    fn explained(&self) -> Result<DMatrix<f64>> {
        Ok(self.joint.sigma_yx() * self.regression_matrix()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub variance_term: f64,
    pub bias_term: f64,
    pub total: f64,
}

impl RiskDecomposition {
    fn new(variance_term: f64, bias_term: f64) -> Self {
        Self {
            variance_term,
            bias_term,
            total: variance_term + bias_term,
        }
    }
}

/// `h(x) = (x - log x - 1) / 2`, the KL between centered normals with variance ratio `x`.
pub fn h(x: f64) -> f64 {
    0.5 * (x - x.ln() - 1.0)
}

/// Least-squares affine predictor `f(x) = W x + b` with `W = (Sigma_X^{-1} Sigma_XY)^T`.
pub fn optimal_linear_model(task: &GaussianTask) -> Result<AffineModel> {
    let w = task.regression_matrix()?.transpose();
    let b = task.joint.mu_y() - &w * task.joint.mu_x();
    AffineModel::new(w, b)
}

/// `E ||Y - f(X)||^2` under the task's law.
pub fn target_loss(task: &GaussianTask, model: &AffineModel) -> Result<f64> {
    check_dim(task.dim_x(), model.input_dim(), "model input vs task")?;
    check_dim(task.dim_y(), model.output_dim(), "model output vs task")?;
    let j = &task.joint;
    let w = model.weights();
    let second_moment = j.sigma_yy().trace() - 2.0 * (w * j.sigma_xy()).trace()
        + (w * j.sigma_xx() * w.transpose()).trace();
    let mean_gap = j.mu_y() - w * j.mu_x() - model.bias();
    Ok(second_moment + mean_gap.norm_squared())
}

fn scalar_output(task: &GaussianTask, which: &'static str) -> Result<()> {
    check_dim(1, task.dim_y(), which)
}

/// Quantities shared by the basic-case formulas.
struct BasicCase {
    /// `w_T^T Sigma_TX w_T`.
    var_t: f64,
    /// `w_S^T Sigma_TX w_S`.
    var_st: f64,
    /// `mu_TY - mu_SY - w_S^T (mu_TX - mu_SX)`.
    bias: f64,
    w_s: DVector<f64>,
    w_t: DVector<f64>,
}

fn basic_case(source: &GaussianTask, target: &GaussianTask) -> Result<BasicCase> {
    scalar_output(source, "basic case source output")?;
    scalar_output(target, "basic case target output")?;
    check_dim(source.dim_x(), target.dim_x(), "basic case input dimension")?;
    let w_s = source.regression_matrix()?.column(0).into_owned();
    let w_t = target.regression_matrix()?.column(0).into_owned();
    let sigma = target.joint.sigma_xx();
    let (s, t) = (&source.joint, &target.joint);
    Ok(BasicCase {
        var_t: linalg::quad_form(sigma, &w_t),
        var_st: linalg::quad_form(sigma, &w_s),
        bias: t.mu_y()[0] - s.mu_y()[0] - w_s.dot(&(t.mu_x() - s.mu_x())),
        w_s,
        w_t,
    })
}

/// `(P_T, P_ST)` for the basic case: the optimal target predictor's output law and the
/// pretrained model's output law on target inputs.
pub fn basic_case_outputs(source: &GaussianTask, target: &GaussianTask) -> Result<(Gaussian, Gaussian)> {
    check_dim(source.dim_x(), target.dim_x(), "basic case input dimension")?;
    let x_t = target.joint.x_marginal();
    let p_t = optimal_linear_model(target)?.pushforward(&x_t)?;
    let p_st = optimal_linear_model(source)?.pushforward(&x_t)?;
    Ok((p_t, p_st))
}

/// KL-based output risk `KL(P_T || P_ST)` split into `h(var_t / var_st)` and `bias^2 / (2 var_st)`.
pub fn basic_case_kl(source: &GaussianTask, target: &GaussianTask) -> Result<RiskDecomposition> {
    let c = basic_case(source, target)?;
    if !(c.var_st > 0.0) {
        return Err(Error::Degenerate(
            "pretrained model has zero output variance on target inputs; KL risk is undefined".into(),
        ));
    }
    if !(c.var_t > 0.0) {
        return Err(Error::Degenerate(
            "optimal target predictor has zero output variance; KL risk is infinite".into(),
        ));
    }
    Ok(RiskDecomposition::new(h(c.var_t / c.var_st), c.bias * c.bias / (2.0 * c.var_st)))
}

/// W2-based output risk split into `(sqrt var_st - sqrt var_t)^2` and `bias^2`.
pub fn basic_case_w(source: &GaussianTask, target: &GaussianTask) -> Result<RiskDecomposition> {
    let c = basic_case(source, target)?;
    let v = (c.var_st.max(0.0).sqrt() - c.var_t.max(0.0).sqrt()).powi(2);
    Ok(RiskDecomposition::new(v, c.bias * c.bias))
}

pub fn basic_case_risks(
    source: &GaussianTask,
    target: &GaussianTask,
) -> Result<(RiskDecomposition, RiskDecomposition)> {
    Ok((basic_case_kl(source, target)?, basic_case_w(source, target)?))
}

/// `L_T(f_S*) - L_T(f_T*) = ||Sigma_TX^{1/2} (w_T - w_S)||^2 + bias^2`.
pub fn regret(source: &GaussianTask, target: &GaussianTask) -> Result<f64> {
    let c = basic_case(source, target)?;
    let dw = &c.w_t - &c.w_s;
    Ok(linalg::quad_form(target.joint.sigma_xx(), &dw) + c.bias * c.bias)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRegret {
    pub risk_w: f64,
    pub regret: f64,
    /// `2 (||a|| ||b|| - <a, b>)` with `a = Sigma_TX^{1/2} w_T`, `b = Sigma_TX^{1/2} w_S`.
    pub residual: f64,
}

pub fn risk_regret_residual(source: &GaussianTask, target: &GaussianTask) -> Result<RiskRegret> {
    let c = basic_case(source, target)?;
    let root = linalg::psd_sqrt(target.joint.sigma_xx(), "target input covariance")?;
    let a = &root * &c.w_t;
    let b = &root * &c.w_s;
    Ok(RiskRegret {
        risk_w: basic_case_w(source, target)?.total,
        regret: regret(source, target)?,
        residual: 2.0 * (a.norm() * b.norm() - a.dot(&b)),
    })
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= 1e-10 * a.amax().max(b.amax()).max(1.0)
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Sub-law of `(X[xs], Y[ys])`.
pub fn sub_joint(joint: &GaussianJoint, xs: &[usize], ys: &[usize]) -> Result<GaussianJoint> {
    let d = joint.dim_x();
    if xs.iter().any(|&i| i >= d) || ys.iter().any(|&i| i >= joint.dim_y()) {
        return Err(Error::InvalidArgument("sub_joint index out of range".into()));
    }
    let mut all: Vec<usize> = xs.to_vec();
    all.extend(ys.iter().map(|i| i + d));
    let full = joint.full();
    let g = Gaussian::new(
        DVector::from_iterator(all.len(), all.iter().map(|&i| full.mean()[i])),
        select(full.cov(), &all, &all),
    )?;
    GaussianJoint::from_full(&g, xs.len())
}

/// Target law with `k` extra input features appended to the source input.
pub fn feature_augmented_target(
    source: &GaussianTask,
    mu_a_x: DVector<f64>,
    sigma_as_x: DMatrix<f64>,
    sigma_a_x: DMatrix<f64>,
    sigma_a_xy: DMatrix<f64>,
) -> Result<GaussianTask> {
    let s = &source.joint;
    let (d, k) = (s.dim_x(), mu_a_x.len());
    check_dim(d, sigma_as_x.nrows(), "Sigma_AS,X rows")?;
    check_dim(k, sigma_as_x.ncols(), "Sigma_AS,X cols")?;
    check_dim(k, sigma_a_xy.nrows(), "Sigma_A,XY rows")?;
    check_dim(s.dim_y(), sigma_a_xy.ncols(), "Sigma_A,XY cols")?;
    let mut mu_x = DVector::zeros(d + k);
    mu_x.rows_mut(0, d).copy_from(s.mu_x());
    mu_x.rows_mut(d, k).copy_from(&mu_a_x);
    let mut sxx = DMatrix::zeros(d + k, d + k);
    sxx.view_mut((0, 0), (d, d)).copy_from(s.sigma_xx());
    sxx.view_mut((0, d), (d, k)).copy_from(&sigma_as_x);
    sxx.view_mut((d, 0), (k, d)).copy_from(&sigma_as_x.transpose());
    sxx.view_mut((d, d), (k, k)).copy_from(&sigma_a_x);
    let mut sxy = DMatrix::zeros(d + k, s.dim_y());
    sxy.view_mut((0, 0), (d, s.dim_y())).copy_from(s.sigma_xy());
    sxy.view_mut((d, 0), (k, s.dim_y())).copy_from(&sigma_a_xy);
    let joint = GaussianJoint::new(mu_x, s.mu_y().clone(), sxx, sxy, s.sigma_yy().clone())?;
    GaussianTask::target(joint)
}

/// The cross-covariance `Sigma_A,XY = Sigma_AS,X^T Sigma_SX^{-1} Sigma_SXY` forced by
/// `Y independent of Z given X`.
pub fn conditionally_independent_cross_cov(source: &GaussianTask, sigma_as_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(source.dim_x(), sigma_as_x.nrows(), "Sigma_AS,X rows")?;
    Ok(sigma_as_x.transpose() * source.regression_matrix()?)
}

/// Checks that the target's leading input block and its output block reproduce the source.
pub fn check_feature_embedding(source: &GaussianTask, target: &GaussianTask) -> Result<()> {
    let (s, t) = (&source.joint, &target.joint);
    let d = s.dim_x();
    if t.dim_x() <= d || t.dim_y() != s.dim_y() {
        return Err(Error::InvalidArgument(format!(
            "feature augmentation needs target input dim > {d} and matching outputs"
        )));
    }
    let idx: Vec<usize> = (0..d).collect();
    let ys: Vec<usize> = (0..s.dim_y()).collect();
    let embedded = sub_joint(t, &idx, &ys)?;
    let ok = close(&embedded.full_cov(), &s.full_cov())
        && close(
            &DMatrix::from_column_slice(d + s.dim_y(), 1, embedded.full_mean().as_slice()),
            &DMatrix::from_column_slice(d + s.dim_y(), 1, s.full_mean().as_slice()),
        );
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "target blocks do not embed the source blocks; the projection is not consistent".into(),
        ))
    }
}

/// `Sigma_TYX Sigma_TX^{-1} Sigma_TXY / Sigma_SYX Sigma_SX^{-1} Sigma_SXY`.
pub fn feature_augmentation_ratio(source: &GaussianTask, target: &GaussianTask) -> Result<f64> {
    scalar_output(source, "feature augmentation output")?;
    check_feature_embedding(source, target)?;
    let q_s = source.explained()?[(0, 0)];
    if !(q_s > 0.0) {
        return Err(Error::Degenerate("source predictor has zero output variance".into()));
    }
    Ok(target.explained()?[(0, 0)] / q_s)
}

/// Output risks of `f_S o Proj` on a feature-augmented target. Bias terms vanish.
pub fn feature_augmentation_risks(
    source: &GaussianTask,
    target: &GaussianTask,
) -> Result<(RiskDecomposition, RiskDecomposition)> {
    scalar_output(source, "feature augmentation output")?;
    check_feature_embedding(source, target)?;
    let q_s = source.explained()?[(0, 0)];
    let q_t = target.explained()?[(0, 0)];
    let w = RiskDecomposition::new((q_t.max(0.0).sqrt() - q_s.max(0.0).sqrt()).powi(2), 0.0);
    if !(q_s > 0.0) || !(q_t > 0.0) {
        return Err(Error::Degenerate("zero output variance in feature augmentation".into()));
    }
    Ok((RiskDecomposition::new(h(q_t / q_s), 0.0), w))
}

/// Target law with `k` extra outputs `Y_A` appended to the source output.
pub fn output_augmented_target(
    source: &GaussianTask,
    mu_a_y: DVector<f64>,
    sigma_as_y: DMatrix<f64>,
    sigma_a_y: DMatrix<f64>,
    sigma_a_xy: DMatrix<f64>,
) -> Result<GaussianTask> {
    let s = &source.joint;
    let (d, l, k) = (s.dim_x(), s.dim_y(), mu_a_y.len());
    check_dim(l, sigma_as_y.nrows(), "Sigma_AS,Y rows")?;
    check_dim(k, sigma_as_y.ncols(), "Sigma_AS,Y cols")?;
    check_dim(d, sigma_a_xy.nrows(), "Sigma_A,XY rows")?;
    check_dim(k, sigma_a_xy.ncols(), "Sigma_A,XY cols")?;
    let mut mu_y = DVector::zeros(l + k);
    mu_y.rows_mut(0, l).copy_from(s.mu_y());
    mu_y.rows_mut(l, k).copy_from(&mu_a_y);
    let mut syy = DMatrix::zeros(l + k, l + k);
    syy.view_mut((0, 0), (l, l)).copy_from(s.sigma_yy());
    syy.view_mut((0, l), (l, k)).copy_from(&sigma_as_y);
    syy.view_mut((l, 0), (k, l)).copy_from(&sigma_as_y.transpose());
    syy.view_mut((l, l), (k, k)).copy_from(&sigma_a_y);
    let mut sxy = DMatrix::zeros(d, l + k);
    sxy.view_mut((0, 0), (d, l)).copy_from(s.sigma_xy());
    sxy.view_mut((0, l), (d, k)).copy_from(&sigma_a_xy);
    let joint = GaussianJoint::new(s.mu_x().clone(), mu_y, s.sigma_xx().clone(), sxy, syy)?;
    GaussianTask::target(joint)
}

fn check_output_embedding(source: &GaussianTask, target: &GaussianTask) -> Result<usize> {
    let (s, t) = (&source.joint, &target.joint);
    let (d, l) = (s.dim_x(), s.dim_y());
    if t.dim_x() != d || t.dim_y() <= l {
        return Err(Error::InvalidArgument(format!(
            "output augmentation needs the same inputs and more than {l} target outputs"
        )));
    }
    let xs: Vec<usize> = (0..d).collect();
    let ys: Vec<usize> = (0..l).collect();
    let embedded = sub_joint(t, &xs, &ys)?;
    let mean_ok = (embedded.full_mean() - s.full_mean()).amax() <= 1e-10 * s.full_mean().amax().max(1.0);
    if !(mean_ok && close(&embedded.full_cov(), &s.full_cov())) {
        return Err(Error::InvalidArgument("target blocks do not embed the source blocks".into()));
    }
    Ok(t.dim_y() - l)
}

/// The initializer that predicts `Y_A` optimally: `w_0 = Sigma_SX^{-1} Sigma_A,XY`,
/// `b_0 = mu_AY - w_0^T mu_SX`. Returned as a `k x d` affine model.
pub fn optimal_initializer(source: &GaussianTask, target: &GaussianTask) -> Result<AffineModel> {
    let k = check_output_embedding(source, target)?;
    let l = source.dim_y();
    let full = optimal_linear_model(target)?;
    AffineModel::new(
        full.weights().rows(l, k).into_owned(),
        full.bias().rows(l, k).into_owned(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputAugmentationLaws {
    /// `P_T = N(mu_1, Sigma_1)`.
    pub p_t: Gaussian,
    /// `P_ST = N(mu_2, Sigma_2)`.
    pub p_st: Gaussian,
}

/// Block formulas for `P_T` and `P_ST` when the intermediate model appends the initializer
/// `f_0(x) = w_0^T x + b_0` to the source prediction.
pub fn output_augmentation_laws(
    source: &GaussianTask,
    target: &GaussianTask,
    init: &AffineModel,
) -> Result<OutputAugmentationLaws> {
    let k = check_output_embedding(source, target)?;
    let (d, l) = (source.dim_x(), source.dim_y());
    check_dim(d, init.input_dim(), "initializer input")?;
    check_dim(k, init.output_dim(), "initializer output")?;
    let s = &source.joint;
    let t = &target.joint;
    let sx = s.sigma_xx();
    let w_s = source.regression_matrix()?; // d x l
    let b_s = s.mu_y() - w_s.transpose() * s.mu_x();
    let sigma_a_xy = t.sigma_xy().columns(l, k).into_owned(); // d x k
    let mu_a_y = t.mu_y().rows(l, k).into_owned();
    let chol = s.sigma_xx_cholesky(DEFAULT_INVERTIBILITY_FLOOR)?;

    let head = w_s.transpose() * s.mu_x() + &b_s;
    let mut mu1 = DVector::zeros(l + k);
    mu1.rows_mut(0, l).copy_from(&head);
    mu1.rows_mut(l, k).copy_from(&mu_a_y);
    let mut sigma1 = DMatrix::zeros(l + k, l + k);
    sigma1.view_mut((0, 0), (l, l)).copy_from(&(w_s.transpose() * sx * &w_s));
    let cross = w_s.transpose() * &sigma_a_xy;
    sigma1.view_mut((0, l), (l, k)).copy_from(&cross);
    sigma1.view_mut((l, 0), (k, l)).copy_from(&cross.transpose());
    sigma1
        .view_mut((l, l), (k, k))
        .copy_from(&(sigma_a_xy.transpose() * chol.solve(&sigma_a_xy)));

    let w_0 = init.weights().transpose(); // d x k
    let mut mu2 = DVector::zeros(l + k);
    mu2.rows_mut(0, l).copy_from(&head);
    mu2.rows_mut(l, k).copy_from(&(init.weights() * s.mu_x() + init.bias()));
    let mut stacked = DMatrix::zeros(d, l + k);
    stacked.columns_mut(0, l).copy_from(&w_s);
    stacked.columns_mut(l, k).copy_from(&w_0);
    let sigma2 = stacked.transpose() * sx * &stacked;

    Ok(OutputAugmentationLaws {
        p_t: Gaussian::new(mu1, linalg::symmetrize(&sigma1))?,
        p_st: Gaussian::new(mu2, linalg::symmetrize(&sigma2))?,
    })
}

/// `sum_i (lambda_i - log lambda_i - 1)` over the eigenvalues of `Sigma_2^{-1} Sigma_1`.
pub fn variance_term_eigen(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<f64> {
    let chol = linalg::spd_cholesky(sigma2, DEFAULT_INVERTIBILITY_FLOOR, "Sigma_2")?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Sigma_2 cholesky factor".into()))?;
    // L^{-1} Sigma_1 L^{-T} is similar to Sigma_2^{-1} Sigma_1.
    let m = linalg::symmetrize(&(&l_inv * sigma1 * l_inv.transpose()));
    let eig = linalg::sym_eigen(&m).eigenvalues;
    if let Some(bad) = eig.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Degenerate(format!(
            "Sigma_1 is singular (eigenvalue {bad:e} of Sigma_2^-1 Sigma_1)"
        )));
    }
    Ok(eig.iter().map(|v| v - v.ln() - 1.0).sum())
}

/// `Tr(Sigma_2^{-1} Sigma_1) - log det Sigma_1 / det Sigma_2 - n`.
pub fn variance_term_trace(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<f64> {
    let n = sigma1.nrows();
    let lu2 = sigma2.clone().lu();
    let trace = lu2
        .solve(sigma1)
        .ok_or_else(|| Error::Singular("Sigma_2".into()))?
        .trace();
    let (det1, det2) = (sigma1.determinant(), lu2.determinant());
    if !(det1 > 0.0) || !(det2 > 0.0) {
        return Err(Error::Degenerate(format!("non-positive determinant ({det1:e}, {det2:e})")));
    }
    Ok(trace - (det1 / det2).ln() - n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputAugmentationRisks {
    pub kl: f64,
    pub w: f64,
    /// Variance term `sum (lambda - log lambda - 1) / 2`, bias term
    /// `(mu_1 - mu_2)^T Sigma_2^{-1} (mu_1 - mu_2) / 2`; they add up to `kl`.
    pub decomposition: RiskDecomposition,
    /// `mu_1 - mu_2`; its first `l` entries are zero.
    pub mean_gap: DVector<f64>,
    pub laws: OutputAugmentationLaws,
}

pub fn output_augmentation_risks(
    source: &GaussianTask,
    target: &GaussianTask,
    init: &AffineModel,
) -> Result<OutputAugmentationRisks> {
    let laws = output_augmentation_laws(source, target, init)?;
    let (s1, s2) = (laws.p_t.cov(), laws.p_st.cov());
    let chol2 = linalg::spd_cholesky(s2, DEFAULT_INVERTIBILITY_FLOOR, "Sigma_2 (initializer output)")?;
    let mean_gap = laws.p_t.mean() - laws.p_st.mean();
    let bias = 0.5 * mean_gap.dot(&chol2.solve(&mean_gap));
    let variance = 0.5 * variance_term_eigen(s1, s2)?;
    Ok(OutputAugmentationRisks {
        kl: gaussian_kl(&laws.p_t, &laws.p_st)?,
        w: gaussian_w2(&laws.p_t, &laws.p_st)?,
        decomposition: RiskDecomposition::new(variance, bias),
        mean_gap,
        laws,
    })
}

/// Parameters of the random-instance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomTaskParams {
    pub dim_x: usize,
    pub dim_y: usize,
    pub eigen_min: f64,
    pub eigen_max: f64,
    /// Means are drawn uniformly from `[-mean_scale, mean_scale]`.
    pub mean_scale: f64,
}

impl Default for RandomTaskParams {
    fn default() -> Self {
        Self {
            dim_x: 2,
            dim_y: 1,
            eigen_min: 0.2,
            eigen_max: 2.0,
            mean_scale: 1.0,
        }
    }
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the distribution does not depend on the QR convention.
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random SPD matrix `Q diag(lambda) Q^T` with eigenvalues in `[lo, hi]`.
pub fn random_spd<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let lambda = DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi));
    linalg::symmetrize(&(&q * DMatrix::from_diagonal(&lambda) * q.transpose()))
}

pub fn random_joint<R: Rng>(params: &RandomTaskParams, rng: &mut R) -> Result<GaussianJoint> {
    if params.dim_x == 0 || params.dim_y == 0 || !(params.eigen_min > 0.0) || params.eigen_max < params.eigen_min {
        return Err(Error::InvalidArgument(format!("bad random task parameters {params:?}")));
    }
    let n = params.dim_x + params.dim_y;
    let cov = random_spd(n, params.eigen_min, params.eigen_max, rng);
    let s = params.mean_scale;
    let mean = DVector::from_fn(n, |_, _| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 });
    GaussianJoint::from_full(&Gaussian::new(mean, cov)?, params.dim_x)
}

pub fn random_task<R: Rng>(params: &RandomTaskParams, role: TaskRole, rng: &mut R) -> Result<GaussianTask> {
    GaussianTask::new(random_joint(params, rng)?, role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::seeded_rng;
    use nalgebra::{dmatrix, dvector};

    fn task(mu_x: DVector<f64>, mu_y: f64, sxx: DMatrix<f64>, sxy: DVector<f64>, syy: f64) -> GaussianTask {
        let k = sxy.len();
        GaussianTask::source(
            GaussianJoint::new(
                mu_x,
                dvector![mu_y],
                sxx,
                DMatrix::from_column_slice(k, 1, sxy.as_slice()),
                dmatrix![syy],
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn optimal_model_identity_covariance() {
        let t = task(dvector![0.0, 0.0], 0.0, DMatrix::identity(2, 2), dvector![0.5, 0.0], 1.0);
        let m = optimal_linear_model(&t).unwrap();
        assert_eq!(m.weights().as_slice(), &[0.5, 0.0]);
        assert_eq!(m.bias()[0], 0.0);
        let ind = task(dvector![1.0, 2.0], 3.0, DMatrix::identity(2, 2), dvector![0.0, 0.0], 1.0);
        let m = optimal_linear_model(&ind).unwrap();
        assert_eq!(m.weights().as_slice(), &[0.0, 0.0]);
        assert_eq!(m.bias()[0], 3.0);
    }

    #[test]
    fn same_task_has_zero_risk_and_regret() {
        let t = task(dvector![0.3], 1.0, dmatrix![2.0], dvector![0.7], 1.5);
        let (kl, w) = basic_case_risks(&t, &t).unwrap();
        assert_eq!((kl.total, w.total), (0.0, 0.0));
        let r = risk_regret_residual(&t, &t).unwrap();
        assert_eq!((r.risk_w, r.regret), (0.0, 0.0));
        assert!(r.residual.abs() < 1e-15);
    }

    #[test]
    fn zero_source_weights_make_kl_degenerate() {
        let s = task(dvector![0.0], 0.0, dmatrix![1.0], dvector![0.0], 1.0);
        let t = task(dvector![0.0], 0.0, dmatrix![1.0], dvector![0.5], 1.0);
        assert!(matches!(basic_case_kl(&s, &t), Err(Error::Degenerate(_))));
        assert!((basic_case_w(&s, &t).unwrap().total - 0.25).abs() < 1e-15);
    }

    #[test]
    fn scaled_weights_regret() {
        let sxx = dmatrix![2.0, 0.3; 0.3, 1.0];
        let w_t = dvector![0.4, -0.2];
        let sxy_t = &sxx * &w_t;
        let t = task(dvector![0.0, 0.0], 0.0, sxx.clone(), sxy_t.clone(), 2.0);
        let s = task(dvector![0.0, 0.0], 0.0, sxx.clone(), &sxy_t * 2.0, 2.0);
        let got = regret(&s, &t).unwrap();
        let want = linalg::quad_form(&sxx, &w_t);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn h_is_nonnegative_with_unique_zero() {
        assert_eq!(h(1.0), 0.0);
        for i in -40..=40 {
            let x = 10f64.powf(i as f64 / 10.0);
            assert!(h(x) >= 0.0);
            if i != 0 {
                assert!(h(x) > 0.0);
            }
        }
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = seeded_rng(5);
        let q = random_orthogonal(4, &mut rng);
        assert!((q.transpose() * &q - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn variance_forms_agree() {
        let mut rng = seeded_rng(9);
        for _ in 0..20 {
            let a = random_spd(3, 0.3, 3.0, &mut rng);
            let b = random_spd(3, 0.3, 3.0, &mut rng);
            let e = variance_term_eigen(&a, &b).unwrap();
            let t = variance_term_trace(&a, &b).unwrap();
            assert!((e - t).abs() < 1e-9, "{e} vs {t}");
        }
    }
}
