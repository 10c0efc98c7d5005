//! Empirical and Gaussian distributions, their closed-form divergences, and seeded sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Weighted point cloud in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmpirical")]
pub struct EmpiricalDistribution {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawEmpirical {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawEmpirical> for EmpiricalDistribution {
    type Error = Error;

    fn try_from(raw: RawEmpirical) -> Result<Self> {
        Self::new(raw.points, raw.weights)
    }
}

impl EmpiricalDistribution {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDistribution("no points".into()));
        }
        check_dim(points.len(), weights.len(), "weights vs points")?;
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidDistribution("points have dimension 0".into()));
        }
        for p in &points {
            check_dim(d, p.len(), "point dimension")?;
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidDistribution("non-finite coordinate".into()));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidDistribution("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Uniform distribution over scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn from_weighted_scalars(values: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect(), weights.to_vec())
    }

    /// Normalizes nonnegative masses to a probability vector before construction.
    pub fn from_masses(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("total mass is not positive".into()));
        }
        Self::new(points, masses.into_iter().map(|m| m / total).collect())
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.points[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }

    /// Scalar values of a 1-D distribution.
    pub fn scalars(&self) -> Result<Vec<f64>> {
        check_dim(1, self.dim(), "scalar view")?;
        Ok(self.points.iter().map(|p| p[0]).collect())
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (p, w) in self.iter() {
            for (acc, x) in m.iter_mut().zip(p) {
                *acc += w * x;
            }
        }
        m
    }

    /// Weighted (biased) covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for (p, w) in self.iter() {
            let c = DVector::from_column_slice(p) - &mean;
            cov += w * &c * c.transpose();
        }
        cov
    }

    /// Pushforward under an arbitrary map; weights are carried over unchanged.
    pub fn map_points<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let points = self.points.iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
        Self::new(points, self.weights.clone())
    }

    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        check_dim(self.dim(), shift.len(), "translation vector")?;
        self.map_points(|p| Ok(p.iter().zip(shift).map(|(x, s)| x + s).collect()))
    }
}

/// Multivariate normal `N(mean, cov)` with a symmetric PSD covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian")]
pub struct Gaussian {
    #[serde(with = "linalg::serde_vec")]
    mean: DVector<f64>,
    #[serde(with = "linalg::serde_rows")]
    cov: DMatrix<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGaussian {
    #[serde(with = "linalg::serde_vec")]
    mean: DVector<f64>,
    #[serde(with = "linalg::serde_rows")]
    cov: DMatrix<f64>,
}

impl TryFrom<RawGaussian> for Gaussian {
    type Error = Error;

    fn try_from(raw: RawGaussian) -> Result<Self> {
        Self::new(raw.mean, raw.cov)
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional gaussian".into()));
        }
        check_dim(n, cov.nrows(), "covariance rows")?;
        check_dim(n, cov.ncols(), "covariance cols")?;
        if !linalg::is_finite(&cov) || mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite parameters".into()));
        }
        if !linalg::is_symmetric(&cov, 1e-9) {
            return Err(Error::InvalidDistribution("covariance is not symmetric".into()));
        }
        let cov = linalg::symmetrize(&cov);
        linalg::check_psd(&cov, "gaussian covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let n = mean.len();
        check_dim(n * n, cov_row_major.len(), "covariance entries")?;
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(n, n, cov_row_major),
        )
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Law of `A x + b` for `x ~ self`.
    pub fn affine_pushforward(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), a.ncols(), "affine map input")?;
        check_dim(a.nrows(), b.len(), "affine map bias")?;
        Self::new(a * &self.mean + b, linalg::symmetrize(&(a * &self.cov * a.transpose())))
    }

    pub fn as_1d(&self) -> Result<Gaussian1D> {
        check_dim(1, self.dim(), "1-D view")?;
        Gaussian1D::new(self.mean[0], self.cov[(0, 0)])
    }
}

/// Scalar normal distribution with strictly positive variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "1-D gaussian requires finite mean and positive variance, got variance {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn to_nd(self) -> Gaussian {
        Gaussian {
            mean: DVector::from_element(1, self.mean),
            cov: DMatrix::from_element(1, 1, self.variance),
        }
    }
}

impl From<Gaussian1D> for Gaussian {
    fn from(g: Gaussian1D) -> Self {
        g.to_nd()
    }
}

/// Joint Gaussian law of `(X, Y)` stored in block form. Serialized as the full
/// `{mean, cov}` law plus `dim_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct GaussianJoint {
    mu_x: DVector<f64>,
    mu_y: DVector<f64>,
    sigma_xx: DMatrix<f64>,
    sigma_xy: DMatrix<f64>,
    sigma_yy: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRepr {
    #[serde(with = "linalg::serde_vec")]
    mean: DVector<f64>,
    #[serde(with = "linalg::serde_rows")]
    cov: DMatrix<f64>,
    dim_x: usize,
}

impl TryFrom<JointRepr> for GaussianJoint {
    type Error = Error;

    fn try_from(r: JointRepr) -> Result<Self> {
        Self::from_full(&Gaussian::new(r.mean, r.cov)?, r.dim_x)
    }
}

impl From<GaussianJoint> for JointRepr {
    fn from(j: GaussianJoint) -> Self {
        let full = j.full();
        Self {
            mean: full.mean().clone(),
            cov: full.cov().clone(),
            dim_x: j.dim_x(),
        }
    }
}

impl GaussianJoint {
    pub fn new(
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        sigma_xx: DMatrix<f64>,
        sigma_xy: DMatrix<f64>,
        sigma_yy: DMatrix<f64>,
    ) -> Result<Self> {
        let (d, k) = (mu_x.len(), mu_y.len());
        if d == 0 || k == 0 {
            return Err(Error::InvalidDistribution("empty block in joint gaussian".into()));
        }
        check_dim(d, sigma_xx.nrows(), "sigma_xx rows")?;
        check_dim(d, sigma_xx.ncols(), "sigma_xx cols")?;
        check_dim(d, sigma_xy.nrows(), "sigma_xy rows")?;
        check_dim(k, sigma_xy.ncols(), "sigma_xy cols")?;
        check_dim(k, sigma_yy.nrows(), "sigma_yy rows")?;
        check_dim(k, sigma_yy.ncols(), "sigma_yy cols")?;
        if !linalg::is_symmetric(&sigma_xx, 1e-9) || !linalg::is_symmetric(&sigma_yy, 1e-9) {
            return Err(Error::InvalidDistribution("diagonal block not symmetric".into()));
        }
        let joint = Self {
            mu_x,
            mu_y,
            sigma_xx: linalg::symmetrize(&sigma_xx),
            sigma_xy,
            sigma_yy: linalg::symmetrize(&sigma_yy),
        };
        // PSD check on the assembled covariance.
        Gaussian::new(joint.full_mean(), joint.full_cov())?;
        Ok(joint)
    }

    /// Splits a `(d + k)`-dimensional Gaussian into the block view with `dim_x = d`.
    pub fn from_full(full: &Gaussian, dim_x: usize) -> Result<Self> {
        let n = full.dim();
        if dim_x == 0 || dim_x >= n {
            return Err(Error::InvalidArgument(format!(
                "dim_x {dim_x} must lie strictly between 0 and {n}"
            )));
        }
        let k = n - dim_x;
        let c = full.cov();
        Ok(Self {
            mu_x: full.mean().rows(0, dim_x).into_owned(),
            mu_y: full.mean().rows(dim_x, k).into_owned(),
            sigma_xx: c.view((0, 0), (dim_x, dim_x)).into_owned(),
            sigma_xy: c.view((0, dim_x), (dim_x, k)).into_owned(),
            sigma_yy: c.view((dim_x, dim_x), (k, k)).into_owned(),
        })
    }

    pub fn dim_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn dim_y(&self) -> usize {
        self.mu_y.len()
    }

    pub fn mu_x(&self) -> &DVector<f64> {
        &self.mu_x
    }

    pub fn mu_y(&self) -> &DVector<f64> {
        &self.mu_y
    }

    pub fn sigma_xx(&self) -> &DMatrix<f64> {
        &self.sigma_xx
    }

    pub fn sigma_xy(&self) -> &DMatrix<f64> {
        &self.sigma_xy
    }

    pub fn sigma_yx(&self) -> DMatrix<f64> {
        self.sigma_xy.transpose()
    }

    pub fn sigma_yy(&self) -> &DMatrix<f64> {
        &self.sigma_yy
    }

    pub fn full_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim_x() + self.dim_y());
        m.rows_mut(0, self.dim_x()).copy_from(&self.mu_x);
        m.rows_mut(self.dim_x(), self.dim_y()).copy_from(&self.mu_y);
        m
    }

    pub fn full_cov(&self) -> DMatrix<f64> {
        let (d, k) = (self.dim_x(), self.dim_y());
        let mut c = DMatrix::zeros(d + k, d + k);
        c.view_mut((0, 0), (d, d)).copy_from(&self.sigma_xx);
        c.view_mut((0, d), (d, k)).copy_from(&self.sigma_xy);
        c.view_mut((d, 0), (k, d)).copy_from(&self.sigma_xy.transpose());
        c.view_mut((d, d), (k, k)).copy_from(&self.sigma_yy);
        c
    }

    pub fn full(&self) -> Gaussian {
        Gaussian {
            mean: self.full_mean(),
            cov: self.full_cov(),
        }
    }

    pub fn x_marginal(&self) -> Gaussian {
        Gaussian {
            mean: self.mu_x.clone(),
            cov: self.sigma_xx.clone(),
        }
    }

    pub fn y_marginal(&self) -> Gaussian {
        Gaussian {
            mean: self.mu_y.clone(),
            cov: self.sigma_yy.clone(),
        }
    }

    /// Cholesky factor of `sigma_xx`, failing when its smallest eigenvalue is at or below `floor`.
    pub fn sigma_xx_cholesky(&self, floor: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        linalg::spd_cholesky(&self.sigma_xx, floor, "sigma_xx")
    }
}

/// KL divergence `KL(p || q)` between multivariate normals.
pub fn gaussian_kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim(), "gaussian_kl")?;
    let n = p.dim() as f64;
    let q_chol = linalg::spd_cholesky(q.cov(), 0.0, "gaussian_kl: q covariance")
        .map_err(|e| Error::Singular(format!("{e}")))?;
    let p_chol = linalg::spd_cholesky(p.cov(), 0.0, "gaussian_kl: p covariance").map_err(|_| {
        Error::Degenerate("gaussian_kl: p covariance is singular, divergence is infinite".into())
    })?;
    let trace = q_chol.solve(p.cov()).trace();
    let diff = p.mean() - q.mean();
    let maha = diff.dot(&q_chol.solve(&diff));
    let log_det_ratio = linalg::log_det_cholesky(&p_chol) - linalg::log_det_cholesky(&q_chol);
    let kl = 0.5 * (trace - log_det_ratio - n + maha);
    Ok(kl.max(0.0))
}

/// Bures term `Tr(A + B - 2 (A^{1/2} B A^{1/2})^{1/2})` of the Gaussian W2 distance.
pub fn bures_term(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = linalg::psd_sqrt(a, "bures: first covariance")?;
    let middle = linalg::symmetrize(&(&ra * b * &ra));
    let cross = linalg::psd_sqrt(&middle, "bures: cross term")?;
    let total = a.trace() + b.trace();
    let value = total - 2.0 * cross.trace();
    // Below this the difference is cancellation noise; keeping it would give W2 ~ 1e-8 for equal laws.
    if value <= 16.0 * f64::EPSILON * total {
        return Ok(0.0);
    }
    Ok(value)
}

/// Squared 2-Wasserstein distance between multivariate normals.
pub fn gaussian_w2(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim(), "gaussian_w2")?;
    let mean_term = (p.mean() - q.mean()).norm_squared();
    Ok(mean_term + bures_term(p.cov(), q.cov())?)
}

/// Seeded sampling into an empirical distribution with uniform weights.
pub trait Sample {
    fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalDistribution>;
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    Ok(())
}

/// Draws `n` samples of `N(mean, cov)` using `rng`.
pub fn sample_gaussian_points<R: Rng>(g: &Gaussian, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let root = linalg::psd_sqrt(g.cov(), "sampling covariance")?;
    let d = g.dim();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            (g.mean() + &root * z).iter().copied().collect()
        })
        .collect())
}

impl Sample for Gaussian {
    fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalDistribution> {
        check_count(n)?;
        let mut rng = seeded_rng(seed);
        EmpiricalDistribution::uniform(sample_gaussian_points(self, n, &mut rng)?)
    }
}

impl Sample for Gaussian1D {
    fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalDistribution> {
        check_count(n)?;
        let mut rng = seeded_rng(seed);
        let sd = self.std_dev();
        let values: Vec<f64> = (0..n)
            .map(|_| self.mean + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        EmpiricalDistribution::from_scalars(&values)
    }
}

impl Sample for GaussianJoint {
    /// Samples the concatenated vector `(x, y)`.
    fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalDistribution> {
        self.full().sample(n, seed)
    }
}

impl Sample for EmpiricalDistribution {
    /// Resampling with replacement according to the weights.
    fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalDistribution> {
        check_count(n)?;
        let mut rng = seeded_rng(seed);
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let points = (0..n)
            .map(|_| {
                let u: f64 = rng.gen::<f64>() * acc;
                let idx = cdf.partition_point(|&c| c <= u).min(self.len() - 1);
                self.points[idx].clone()
            })
            .collect();
        EmpiricalDistribution::uniform(points)
    }
}
