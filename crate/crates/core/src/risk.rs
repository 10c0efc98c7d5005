//! Input and output transport risks, their combination into a transfer risk, and the
//! task metric `d_S`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{gaussian_kl, gaussian_w2, EmpiricalDistribution, Gaussian};
use crate::error::{check_dim, Error, Result};
use crate::ot::{wasserstein, OtConfig};

/// Default additive smoothing for discrete KL risks.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// Linear predictor `x -> W x + b` with `W` of shape `k x d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAffine")]
pub struct AffineModel {
    #[serde(with = "crate::linalg::serde_rows")]
    weights: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_vec")]
    bias: DVector<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAffine {
    #[serde(with = "crate::linalg::serde_rows")]
    weights: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_vec")]
    bias: DVector<f64>,
}

impl TryFrom<RawAffine> for AffineModel {
    type Error = Error;
    fn try_from(raw: RawAffine) -> Result<Self> {
        Self::new(raw.weights, raw.bias)
    }
}

impl AffineModel {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        check_dim(weights.nrows(), bias.len(), "affine bias length")?;
        if weights.ncols() == 0 || weights.nrows() == 0 {
            return Err(Error::InvalidArgument("affine model with an empty dimension".into()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("affine model has non-finite entries".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weights: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
        }
    }

    /// Scalar-output model `x -> w.x + b`.
    pub fn linear_1d(w: &[f64], b: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, w.len(), w), DVector::from_element(1, b))
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.bias
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len(), "affine model input")?;
        Ok(self.apply_vec(&DVector::from_column_slice(x)).iter().copied().collect())
    }

    /// `self(inner(x))`.
    pub fn compose(&self, inner: &AffineModel) -> Result<AffineModel> {
        check_dim(self.input_dim(), inner.output_dim(), "affine composition")?;
        AffineModel::new(&self.weights * &inner.weights, &self.weights * &inner.bias + &self.bias)
    }

    pub fn pushforward(&self, g: &Gaussian) -> Result<Gaussian> {
        g.affine_pushforward(&self.weights, &self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Unsupported(format!("activation '{other}'"))),
        }
    }
}

/// Fully connected network; the activation is applied after every layer but the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<AffineModel>,
    activation: Activation,
}

impl Mlp {
    pub fn new(layers: Vec<AffineModel>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].output_dim(), pair[1].input_dim(), "mlp layer chain")?;
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[AffineModel] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply_vec(&h);
            if i < last {
                h.apply(|v| *v = self.activation.eval(*v));
            }
        }
        h
    }

    /// Collapses to a single affine map when no nonlinearity is involved.
    fn as_affine(&self) -> Option<AffineModel> {
        if self.layers.len() > 1 && self.activation != Activation::Identity {
            return None;
        }
        let mut acc = self.layers[0].clone();
        for layer in &self.layers[1..] {
            acc = layer.compose(&acc).ok()?;
        }
        Some(acc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransportMap {
    Identity { dim: usize },
    /// Keeps the listed coordinates, in order.
    Projection { input_dim: usize, kept: Vec<usize> },
    Affine(AffineModel),
    Mlp(Mlp),
    /// Affine map followed by a softmax; used for classifier heads.
    SoftmaxAffine(AffineModel),
}

/// Numerically stable softmax.
pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let max = z.max();
    let e = z.map(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

impl TransportMap {
    pub fn projection(input_dim: usize, kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::InvalidArgument("projection keeps no coordinates".into()));
        }
        if let Some(&bad) = kept.iter().find(|&&k| k >= input_dim) {
            return Err(Error::InvalidArgument(format!(
                "projection index {bad} out of range for input dimension {input_dim}"
            )));
        }
        Ok(Self::Projection { input_dim, kept })
    }

    /// Drops the trailing coordinates, keeping the first `keep`.
    pub fn leading(input_dim: usize, keep: usize) -> Result<Self> {
        Self::projection(input_dim, (0..keep).collect())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Projection { input_dim, .. } => *input_dim,
            Self::Affine(m) | Self::SoftmaxAffine(m) => m.input_dim(),
            Self::Mlp(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Projection { kept, .. } => kept.len(),
            Self::Affine(m) | Self::SoftmaxAffine(m) => m.output_dim(),
            Self::Mlp(m) => m.output_dim(),
        }
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Identity { .. } => x.clone(),
            Self::Projection { kept, .. } => DVector::from_iterator(kept.len(), kept.iter().map(|&k| x[k])),
            Self::Affine(m) => m.apply_vec(x),
            Self::Mlp(m) => m.apply_vec(x),
            Self::SoftmaxAffine(m) => softmax(&m.apply_vec(x)),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len(), "transport map input")?;
        Ok(self.apply_vec(&DVector::from_column_slice(x)).iter().copied().collect())
    }

    pub fn as_affine(&self) -> Option<AffineModel> {
        match self {
            Self::Identity { dim } => Some(AffineModel::identity(*dim)),
            Self::Projection { input_dim, kept } => {
                let mut w = DMatrix::zeros(kept.len(), *input_dim);
                for (r, &k) in kept.iter().enumerate() {
                    w[(r, k)] = 1.0;
                }
                Some(AffineModel {
                    weights: w,
                    bias: DVector::zeros(kept.len()),
                })
            }
            Self::Affine(m) => Some(m.clone()),
            Self::Mlp(m) => m.as_affine(),
            Self::SoftmaxAffine(_) => None,
        }
    }

    pub fn pushforward_empirical(&self, law: &EmpiricalDistribution) -> Result<EmpiricalDistribution> {
        check_dim(self.input_dim(), law.dim(), "pushforward of empirical law")?;
        law.map_points(|p| self.apply(p))
    }

    pub fn pushforward(&self, law: &Law) -> Result<Law> {
        match law {
            Law::Empirical(e) => Ok(Law::Empirical(self.pushforward_empirical(e)?)),
            Law::Gaussian(g) => {
                check_dim(self.input_dim(), g.dim(), "pushforward of gaussian law")?;
                let affine = self.as_affine().ok_or_else(|| {
                    Error::Unsupported("closed-form gaussian pushforward through a nonlinear map".into())
                })?;
                Ok(Law::Gaussian(affine.pushforward(g)?))
            }
        }
    }
}

/// What the output transport map reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// The target input concatenated with the source prediction.
    #[default]
    Xy,
    YOnly,
    XOnly,
}

/// Intermediate model `f_ST(x) = T^Y(x, f_S(T^X(x)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPair {
    pub input_map: TransportMap,
    pub source_model: TransportMap,
    pub output_map: TransportMap,
    pub mode: OutputMode,
}

impl TransportPair {
    pub fn new(
        input_map: TransportMap,
        source_model: TransportMap,
        output_map: TransportMap,
        mode: OutputMode,
    ) -> Result<Self> {
        let pair = Self {
            input_map,
            source_model,
            output_map,
            mode,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// `T^X` followed by the source model, with identity output map.
    pub fn direct(input_map: TransportMap, source_model: TransportMap) -> Result<Self> {
        let out = source_model.output_dim();
        Self::new(input_map, source_model, TransportMap::Identity { dim: out }, OutputMode::YOnly)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(
            self.source_model.input_dim(),
            self.input_map.output_dim(),
            "source model input vs input map output",
        )?;
        let expected = match self.mode {
            OutputMode::Xy => self.target_input_dim() + self.source_model.output_dim(),
            OutputMode::YOnly => self.source_model.output_dim(),
            OutputMode::XOnly => self.target_input_dim(),
        };
        check_dim(expected, self.output_map.input_dim(), "output map input")
    }

    pub fn target_input_dim(&self) -> usize {
        self.input_map.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_map.output_dim()
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = match self.mode {
            OutputMode::XOnly => x.clone(),
            OutputMode::YOnly => self.source_model.apply_vec(&self.input_map.apply_vec(x)),
            OutputMode::Xy => {
                let y = self.source_model.apply_vec(&self.input_map.apply_vec(x));
                DVector::from_iterator(x.len() + y.len(), x.iter().chain(y.iter()).copied())
            }
        };
        self.output_map.apply_vec(&z)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.target_input_dim(), x.len(), "transport pair input")?;
        Ok(self.apply_vec(&DVector::from_column_slice(x)).iter().copied().collect())
    }

    /// The whole pipeline as one affine map, when every stage is affine.
    pub fn as_affine(&self) -> Option<AffineModel> {
        let d = self.target_input_dim();
        let inner = match self.mode {
            OutputMode::XOnly => AffineModel::identity(d),
            OutputMode::YOnly => self.source_model.as_affine()?.compose(&self.input_map.as_affine()?).ok()?,
            OutputMode::Xy => {
                let y = self.source_model.as_affine()?.compose(&self.input_map.as_affine()?).ok()?;
                let k = y.output_dim();
                let mut w = DMatrix::zeros(d + k, d);
                w.view_mut((0, 0), (d, d)).fill_with_identity();
                w.view_mut((d, 0), (k, d)).copy_from(y.weights());
                let mut b = DVector::zeros(d + k);
                b.rows_mut(d, k).copy_from(y.bias());
                AffineModel { weights: w, bias: b }
            }
        };
        self.output_map.as_affine()?.compose(&inner).ok()
    }

    /// `P_ST = f_ST # law_xt`.
    pub fn pushforward(&self, law_xt: &Law) -> Result<Law> {
        match law_xt {
            Law::Empirical(e) => {
                check_dim(self.target_input_dim(), e.dim(), "transport pair pushforward")?;
                Ok(Law::Empirical(e.map_points(|p| self.apply(p))?))
            }
            Law::Gaussian(g) => {
                check_dim(self.target_input_dim(), g.dim(), "transport pair pushforward")?;
                let affine = self.as_affine().ok_or_else(|| {
                    Error::Unsupported("closed-form gaussian pushforward through a nonlinear pair".into())
                })?;
                Ok(Law::Gaussian(affine.pushforward(g)?))
            }
        }
    }
}

/// A distribution given either by samples or in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "law", rename_all = "snake_case")]
pub enum Law {
    Empirical(EmpiricalDistribution),
    Gaussian(Gaussian),
}

impl Law {
    pub fn dim(&self) -> usize {
        match self {
            Law::Empirical(e) => e.dim(),
            Law::Gaussian(g) => g.dim(),
        }
    }
}

impl From<EmpiricalDistribution> for Law {
    fn from(e: EmpiricalDistribution) -> Self {
        Law::Empirical(e)
    }
}

impl From<Gaussian> for Law {
    fn from(g: Gaussian) -> Self {
        Law::Gaussian(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Divergence {
    Wasserstein { p: f64 },
    Kl,
}

impl Divergence {
    pub fn tag(&self) -> DivergenceTag {
        match self {
            Divergence::Wasserstein { .. } => DivergenceTag::Wasserstein,
            Divergence::Kl => DivergenceTag::Kl,
        }
    }
}

impl Default for Divergence {
    fn default() -> Self {
        Divergence::Wasserstein { p: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceTag {
    Kl,
    Wasserstein,
}

impl fmt::Display for DivergenceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceTag::Kl => "kl",
            DivergenceTag::Wasserstein => "wasserstein",
        })
    }
}

fn ot_with_order(cfg: &OtConfig, p: f64) -> OtConfig {
    OtConfig {
        order: p,
        ..cfg.clone()
    }
}

/// `W_p(a, b)^p`, closed form for Gaussians at `p = 2`.
fn wasserstein_cost(a: &Law, b: &Law, p: f64, cfg: &OtConfig) -> Result<f64> {
    check_dim(a.dim(), b.dim(), "wasserstein between laws")?;
    match (a, b) {
        (Law::Empirical(x), Law::Empirical(y)) => {
            Ok(wasserstein(x, y, &ot_with_order(cfg, p))?.distance.powf(p))
        }
        (Law::Gaussian(x), Law::Gaussian(y)) if p == 2.0 => gaussian_w2(x, y),
        (Law::Gaussian(_), Law::Gaussian(_)) => Err(Error::Unsupported(format!(
            "closed-form gaussian wasserstein only for p = 2, got p = {p}"
        ))),
        _ => Err(Error::Unsupported("wasserstein between an empirical and a gaussian law".into())),
    }
}

/// `E^I = D(T^X # Law(X_T), Law(X_S))`.
///
/// The Wasserstein variant returns the distance `W_p`; the KL variant needs Gaussian laws
/// and returns `KL(T^X # Law(X_T) || Law(X_S))`.
pub fn input_risk(
    t_x: &TransportMap,
    law_xt: &Law,
    law_xs: &Law,
    metric: Divergence,
    cfg: &OtConfig,
) -> Result<f64> {
    let pushed = t_x.pushforward(law_xt)?;
    check_dim(law_xs.dim(), pushed.dim(), "input risk: pushforward vs source law")?;
    match metric {
        Divergence::Wasserstein { p } => Ok(wasserstein_cost(&pushed, law_xs, p, cfg)?.max(0.0).powf(1.0 / p)),
        Divergence::Kl => match (&pushed, law_xs) {
            (Law::Gaussian(a), Law::Gaussian(b)) => gaussian_kl(a, b),
            _ => Err(Error::Unsupported("KL input risk needs gaussian laws".into())),
        },
    }
}

/// Reference output law: the true `P_T`, or the label law standing in for it.
#[derive(Clone, Debug, PartialEq)]
pub enum OutputTarget {
    Exact(Law),
    Proxy(EmpiricalDistribution),
}

impl OutputTarget {
    pub fn is_proxy(&self) -> bool {
        matches!(self, OutputTarget::Proxy(_))
    }

    pub fn law(&self) -> Law {
        match self {
            OutputTarget::Exact(l) => l.clone(),
            OutputTarget::Proxy(e) => Law::Empirical(e.clone()),
        }
    }
}

/// `E^O_W = W_p(P_ST, P_T)^p` with `P_ST = f_ST # Law(X_T)`.
pub fn output_risk_w(f_st: &TransportPair, law_xt: &Law, target: &Law, p: f64, cfg: &OtConfig) -> Result<f64> {
    let p_st = f_st.pushforward(law_xt)?;
    Ok(wasserstein_cost(&p_st, target, p, cfg)?.max(0.0))
}

/// Output laws accepted by the KL risk.
#[derive(Clone, Debug, PartialEq)]
pub enum KlLaw {
    Gaussian(Gaussian),
    /// Probability masses over a shared, ordered index set.
    Discrete(Vec<f64>),
}

/// Additive smoothing `(p_i + s) / (1 + K s)`.
pub fn smooth(p: &[f64], s: f64) -> Vec<f64> {
    let z = 1.0 + p.len() as f64 * s;
    p.iter().map(|v| (v + s) / z).collect()
}

fn check_masses(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{what}: masses must be finite and nonnegative")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("{what}: masses sum to {total}")));
    }
    Ok(())
}

/// `E^O_KL = KL(P_T || P_ST)`.
///
/// Only the absolutely continuous case is supported: Gaussians, or discrete laws after
/// additive smoothing. Mass of `P_T` where `P_ST` has none is a singular part and is
/// rejected.
pub fn output_risk_kl(p_st: &KlLaw, p_t: &KlLaw, smoothing: f64) -> Result<f64> {
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing must be nonnegative, got {smoothing}")));
    }
    match (p_st, p_t) {
        (KlLaw::Gaussian(q), KlLaw::Gaussian(p)) => gaussian_kl(p, q),
        (KlLaw::Discrete(q), KlLaw::Discrete(p)) => {
            check_dim(q.len(), p.len(), "discrete KL support")?;
            check_masses(q, "P_ST")?;
            check_masses(p, "P_T")?;
            let (q, p) = (smooth(q, smoothing), smooth(p, smoothing));
            let mut kl = 0.0;
            for (i, (pi, qi)) in p.iter().zip(&q).enumerate() {
                if *pi == 0.0 {
                    continue;
                }
                if *qi == 0.0 {
                    return Err(Error::SingularPart(format!(
                        "P_T puts mass {pi} on index {i} where P_ST has none; use smoothing > 0"
                    )));
                }
                kl += pi * (pi / qi).ln();
            }
            Ok(kl.max(0.0))
        }
        _ => Err(Error::InvalidArgument("KL risk needs two laws of the same kind".into())),
    }
}

/// The function `C` turning `(E^I, E^O)` into a transfer risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskCombiner {
    /// `E^O + lambda E^I`.
    Linear { lambda: f64 },
    /// `c_i E^I + c_o (E^O)^power`.
    Polynomial { c_i: f64, c_o: f64, power: f64 },
}

impl RiskCombiner {
    pub const OFFICE: RiskCombiner = RiskCombiner::Polynomial {
        c_i: 0.31,
        c_o: 0.92,
        power: 2.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RiskCombiner::Linear { lambda } => lambda >= 0.0 && lambda.is_finite(),
            RiskCombiner::Polynomial { c_i, c_o, power } => {
                c_i >= 0.0 && c_o >= 0.0 && power >= 1.0 && [c_i, c_o, power].iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "combiner {self:?} is not monotone: coefficients must be >= 0 and power >= 1"
            )))
        }
    }

    pub fn combine(&self, e_i: f64, e_o: f64) -> Result<f64> {
        self.validate()?;
        if !(e_i >= 0.0) || !(e_o >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "risks must be nonnegative, got E^I = {e_i}, E^O = {e_o}"
            )));
        }
        Ok(match *self {
            RiskCombiner::Linear { lambda } => e_o + lambda * e_i,
            RiskCombiner::Polynomial { c_i, c_o, power } => c_i * e_i + c_o * e_o.powf(power),
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            RiskCombiner::Linear { .. } => "linear",
            RiskCombiner::Polynomial { .. } => "polynomial",
        }
    }
}

impl Default for RiskCombiner {
    fn default() -> Self {
        RiskCombiner::Linear { lambda: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub input_risk: f64,
    pub output_risk: f64,
    pub combined: f64,
    pub combiner: RiskCombiner,
    pub divergence: DivergenceTag,
    /// True when the output risk was measured against the label law instead of `P_T`.
    pub approximated: bool,
}

impl RiskReport {
    pub fn new(
        input_risk: f64,
        output_risk: f64,
        combiner: RiskCombiner,
        divergence: DivergenceTag,
        approximated: bool,
    ) -> Result<Self> {
        Ok(Self {
            input_risk,
            output_risk,
            combined: combiner.combine(input_risk, output_risk)?,
            combiner,
            divergence,
            approximated,
        })
    }
}

/// Divergence choices for a transfer-risk evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSpec {
    pub input_metric: Divergence,
    pub output_divergence: Divergence,
    pub ot: OtConfig,
    pub smoothing: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self {
            input_metric: Divergence::Wasserstein { p: 1.0 },
            output_divergence: Divergence::Wasserstein { p: 1.0 },
            ot: OtConfig::default(),
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

/// Risk report for a single candidate intermediate model.
pub fn evaluate_candidate(
    candidate: &TransportPair,
    law_xt: &Law,
    law_xs: &Law,
    target: &OutputTarget,
    combiner: &RiskCombiner,
    spec: &RiskSpec,
) -> Result<RiskReport> {
    let e_i = input_risk(&candidate.input_map, law_xt, law_xs, spec.input_metric, &spec.ot)?;
    let e_o = match spec.output_divergence {
        Divergence::Wasserstein { p } => output_risk_w(candidate, law_xt, &target.law(), p, &spec.ot)?,
        Divergence::Kl => {
            let p_st = candidate.pushforward(law_xt)?;
            match (p_st, target.law()) {
                (Law::Gaussian(q), Law::Gaussian(p)) => {
                    output_risk_kl(&KlLaw::Gaussian(q), &KlLaw::Gaussian(p), spec.smoothing)?
                }
                _ => {
                    return Err(Error::Unsupported(
                        "KL output risk from samples needs densities; use gaussian laws or discrete masses".into(),
                    ))
                }
            }
        }
    };
    RiskReport::new(e_i, e_o, *combiner, spec.output_divergence.tag(), target.is_proxy())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferRisk {
    pub best: RiskReport,
    pub index: usize,
    /// One report per candidate, in input order.
    pub reports: Vec<RiskReport>,
}

/// `C(S, T)`: the smallest combined risk over a finite candidate set. Ties go to the
/// lowest index.
pub fn transfer_risk(
    candidates: &[TransportPair],
    law_xt: &Law,
    law_xs: &Law,
    target: &OutputTarget,
    combiner: &RiskCombiner,
    spec: &RiskSpec,
) -> Result<TransferRisk> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("transfer risk over an empty candidate set".into()));
    }
    let reports = candidates
        .iter()
        .map(|c| evaluate_candidate(c, law_xt, law_xs, target, combiner, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut index = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.combined < reports[index].combined {
            index = i;
        }
    }
    Ok(TransferRisk {
        best: reports[index].clone(),
        index,
        reports,
    })
}

/// `d_S(S1, S2) = W_p(mu_1, mu_2) + min(M, max_x ||f_1(x) - f_2(x)||)`.
///
/// The supremum in the model term is taken over `eval_points` only, so it is a lower bound
/// of the true one.
pub fn task_distance(
    s1: (&Law, &TransportMap),
    s2: (&Law, &TransportMap),
    cap: f64,
    eval_points: &EmpiricalDistribution,
    metric: Divergence,
    cfg: &OtConfig,
) -> Result<f64> {
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!("cap must be positive, got {cap}")));
    }
    let p = match metric {
        Divergence::Wasserstein { p } => p,
        Divergence::Kl => return Err(Error::InvalidArgument("task distance needs a metric; KL is not one".into())),
    };
    let (f1, f2) = (s1.1, s2.1);
    check_dim(f1.input_dim(), f2.input_dim(), "task models input")?;
    check_dim(f1.output_dim(), f2.output_dim(), "task models output")?;
    check_dim(f1.input_dim(), eval_points.dim(), "evaluation points")?;
    let d = wasserstein_cost(s1.0, s2.0, p, cfg)?.max(0.0).powf(1.0 / p);
    let mut sup: f64 = 0.0;
    for x in eval_points.points() {
        let x = DVector::from_column_slice(x);
        sup = sup.max((f1.apply_vec(&x) - f2.apply_vec(&x)).norm());
    }
    Ok(d + sup.min(cap))
}

/// Strictly convex generators for Bregman divergences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BregmanGenerator {
    /// `phi(u) = ||u||^2 / 2`.
    HalfSquaredNorm,
}

impl BregmanGenerator {
    fn value(self, u: &[f64]) -> f64 {
        match self {
            BregmanGenerator::HalfSquaredNorm => 0.5 * u.iter().map(|x| x * x).sum::<f64>(),
        }
    }

    fn gradient(self, u: &[f64]) -> Vec<f64> {
        match self {
            BregmanGenerator::HalfSquaredNorm => u.to_vec(),
        }
    }
}

impl FromStr for BregmanGenerator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half_squared_norm" => Ok(Self::HalfSquaredNorm),
            other => Err(Error::Unsupported(format!("bregman generator '{other}'"))),
        }
    }
}

/// `D_phi(u, v) = phi(u) - phi(v) - <u - v, grad phi(v)>`.
pub fn bregman(phi: BregmanGenerator, u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(u.len(), v.len(), "bregman arguments")?;
    let grad = phi.gradient(v);
    let inner: f64 = u.iter().zip(v).zip(&grad).map(|((a, b), g)| (a - b) * g).sum();
    Ok((phi.value(u) - phi.value(v) - inner).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: f64,
    pub center: f64,
    pub upper: f64,
}

fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    -p.iter().zip(q).map(|(a, b)| a * b.ln()).sum::<f64>()
}

/// Bounds `sum log p_ST <= H(P_T, P_ST) - H(Law(Y_T), P_ST) <= -sum log p_ST` (nats).
pub fn cross_entropy_sandwich(p_st: &[f64], law_yt: &[f64], p_t: &[f64]) -> Result<Sandwich> {
    check_dim(p_st.len(), law_yt.len(), "label law classes")?;
    check_dim(p_st.len(), p_t.len(), "target law classes")?;
    for (what, p) in [("P_ST", p_st), ("Law(Y_T)", law_yt), ("P_T", p_t)] {
        check_masses(p, what)?;
        if p.iter().any(|v| *v == 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "{what} has a zero-mass class; smooth it first"
            )));
        }
    }
    let log_sum: f64 = p_st.iter().map(|q| q.ln()).sum();
    let center = cross_entropy(p_t, p_st) - cross_entropy(law_yt, p_st);
    let s = Sandwich {
        lower: log_sum,
        center,
        upper: -log_sum,
    };
    debug_assert!(s.lower <= s.center + 1e-12 && s.center <= s.upper + 1e-12);
    Ok(s)
}
