//! Gradient-descent training of output transport maps and classifier heads, and a
//! desk-scale synthetic analog of the Office-31 risk/accuracy experiment.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{seeded_rng, EmpiricalDistribution};
use crate::error::{check_dim, Error, Result};
use crate::ot::{cost_matrix, quantile_coupling, sinkhorn, wasserstein, OtConfig};
use crate::risk::{softmax, AffineModel, OutputMode, RiskCombiner, TransportMap};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without improvement of the training loss before stopping; `None` disables it.
    pub plateau_patience: Option<usize>,
    /// Entropic regularization of the Sinkhorn surrogate used for multi-dimensional outputs.
    pub surrogate_epsilon: f64,
}

impl TrainConfig {
    /// The early-stopping budget used when estimating output risk.
    pub fn risk_mode() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.05,
            seed: 0,
            plateau_patience: None,
            surrogate_epsilon: 0.05,
        }
    }

    /// Training to (near) convergence for accuracy measurements.
    pub fn accuracy_mode() -> Self {
        Self {
            epochs: 100,
            plateau_patience: Some(10),
            ..Self::risk_mode()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.surrogate_epsilon > 0.0) {
            return Err(Error::InvalidArgument("surrogate epsilon must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::risk_mode()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Training objective at the start of each epoch.
    pub objective: Vec<f64>,
    pub epochs_run: usize,
    pub parameters: Vec<f64>,
}

/// Row-major weights followed by the bias.
pub fn flatten(model: &AffineModel) -> Vec<f64> {
    let w = model.weights();
    let mut out = Vec::with_capacity(w.len() + w.nrows());
    for i in 0..w.nrows() {
        out.extend(w.row(i).iter());
    }
    out.extend(model.bias().iter());
    out
}

pub fn unflatten(params: &[f64], rows: usize, cols: usize) -> Result<AffineModel> {
    check_dim(rows * cols + rows, params.len(), "affine parameter vector")?;
    AffineModel::new(
        DMatrix::from_row_slice(rows, cols, &params[..rows * cols]),
        DVector::from_column_slice(&params[rows * cols..]),
    )
}

/// Weights from a seeded uniform(-0.1, 0.1), zero bias.
pub fn random_affine(rows: usize, cols: usize, seed: u64) -> Result<AffineModel> {
    let mut rng = seeded_rng(seed);
    let w = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-0.1..0.1));
    AffineModel::new(w, DVector::zeros(rows))
}

/// Chain rule from output gradients `g_i` (one per sample) to affine parameters.
fn affine_backward(features: &[DVector<f64>], grads: &[DVector<f64>], rows: usize, cols: usize) -> Vec<f64> {
    let mut gw = DMatrix::zeros(rows, cols);
    let mut gb = DVector::zeros(rows);
    for (z, g) in features.iter().zip(grads) {
        gw += g * z.transpose();
        gb += g;
    }
    let mut out = Vec::with_capacity(rows * cols + rows);
    for i in 0..rows {
        out.extend(gw.row(i).iter());
    }
    out.extend(gb.iter());
    out
}

/// Trainable output map `y = A z + b` (optionally followed by a softmax), where `z` is what
/// the output map reads according to `mode`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputFamily {
    pub init: AffineModel,
    pub mode: OutputMode,
    pub softmax: bool,
}

impl OutputFamily {
    pub fn map(&self, params: &[f64]) -> Result<TransportMap> {
        let m = unflatten(params, self.init.output_dim(), self.init.input_dim())?;
        Ok(if self.softmax {
            TransportMap::SoftmaxAffine(m)
        } else {
            TransportMap::Affine(m)
        })
    }

    fn features(&self, source_model: &TransportMap, law_xt: &EmpiricalDistribution) -> Result<Vec<DVector<f64>>> {
        check_dim(source_model.input_dim(), law_xt.dim(), "source model vs target inputs")?;
        let expected = match self.mode {
            OutputMode::Xy => law_xt.dim() + source_model.output_dim(),
            OutputMode::YOnly => source_model.output_dim(),
            OutputMode::XOnly => law_xt.dim(),
        };
        check_dim(expected, self.init.input_dim(), "output family input")?;
        Ok(law_xt
            .points()
            .iter()
            .map(|p| {
                let x = DVector::from_column_slice(p);
                match self.mode {
                    OutputMode::XOnly => x,
                    OutputMode::YOnly => source_model.apply_vec(&x),
                    OutputMode::Xy => {
                        let y = source_model.apply_vec(&x);
                        DVector::from_iterator(x.len() + y.len(), x.iter().chain(y.iter()).copied())
                    }
                }
            })
            .collect())
    }
}

/// Training problem behind [`minimize_output_risk`]; exposed for gradient checks.
#[derive(Clone, Debug)]
pub struct OutputProblem {
    features: Vec<DVector<f64>>,
    weights: Vec<f64>,
    targets: EmpiricalDistribution,
    rows: usize,
    cols: usize,
    softmax: bool,
    p: f64,
    epsilon: f64,
}

impl OutputProblem {
    pub fn new(
        family: &OutputFamily,
        source_model: &TransportMap,
        law_xt: &EmpiricalDistribution,
        law_yt_proxy: &EmpiricalDistribution,
        p: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::InvalidArgument(format!("order must be >= 1, got {p}")));
        }
        check_dim(family.init.output_dim(), law_yt_proxy.dim(), "output family vs label law")?;
        Ok(Self {
            features: family.features(source_model, law_xt)?,
            weights: law_xt.weights().to_vec(),
            targets: law_yt_proxy.clone(),
            rows: family.init.output_dim(),
            cols: family.init.input_dim(),
            softmax: family.softmax,
            p,
            epsilon,
        })
    }

    /// Whether the objective is the exact 1-D `W_p^p` rather than the Sinkhorn surrogate.
    pub fn is_exact(&self) -> bool {
        self.rows == 1 && !self.softmax
    }

    fn outputs(&self, params: &[f64]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let m = unflatten(params, self.rows, self.cols)?;
        let logits: Vec<DVector<f64>> = self.features.iter().map(|z| m.apply_vec(z)).collect();
        let outputs = if self.softmax {
            logits.iter().map(softmax).collect()
        } else {
            logits.clone()
        };
        Ok((logits, outputs))
    }

    fn pushforward(&self, outputs: &[DVector<f64>]) -> Result<EmpiricalDistribution> {
        EmpiricalDistribution::new(
            outputs.iter().map(|y| y.iter().copied().collect()).collect(),
            self.weights.clone(),
        )
    }

    /// Objective value and gradient with respect to the flattened parameters.
    pub fn objective(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (_, outputs) = self.outputs(params)?;
        let p = self.p;
        let mut grads = vec![DVector::zeros(self.rows); outputs.len()];
        let value;
        if self.is_exact() {
            let ys: Vec<f64> = outputs.iter().map(|y| y[0]).collect();
            let ts = self.targets.scalars()?;
            let mut total = 0.0;
            for (i, j, mass) in quantile_coupling(&ys, &self.weights, &ts, self.targets.weights()) {
                let d = ys[i] - ts[j];
                total += mass * d.abs().powf(p);
                // Subgradient 0 at a tie when p = 1.
                if d != 0.0 {
                    grads[i][0] += mass * p * d.abs().powf(p - 1.0) * d.signum();
                }
            }
            value = total;
        } else {
            let pushed = self.pushforward(&outputs)?;
            let cost = cost_matrix(&pushed, &self.targets, p);
            let sol = sinkhorn(&self.weights, self.targets.weights(), &cost, self.epsilon, 5000, 1e-10)?;
            for (i, y) in outputs.iter().enumerate() {
                for (j, t) in self.targets.points().iter().enumerate() {
                    let mass = sol.plan[(i, j)];
                    if mass == 0.0 {
                        continue;
                    }
                    let diff = y - DVector::from_column_slice(t);
                    let norm = diff.norm();
                    if norm > 0.0 {
                        grads[i] += diff * (mass * p * norm.powf(p - 2.0));
                    }
                }
            }
            value = sol.regularized_cost;
        }
        if self.softmax {
            for (g, y) in grads.iter_mut().zip(&outputs) {
                let inner = g.dot(y);
                *g = y.component_mul(&g.map(|v| v - inner));
            }
        }
        Ok((value, affine_backward(&self.features, &grads, self.rows, self.cols)))
    }

    /// Exact `W_p^p` between the pushforward and the label law.
    pub fn exact_risk(&self, params: &[f64], cfg: &OtConfig) -> Result<f64> {
        let (_, outputs) = self.outputs(params)?;
        let pushed = self.pushforward(&outputs)?;
        let cfg = OtConfig {
            order: self.p,
            ..cfg.clone()
        };
        Ok(wasserstein(&pushed, &self.targets, &cfg)?.distance.powf(self.p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizedRisk {
    /// Smallest exact `W_p^p` over the visited parameters.
    pub risk: f64,
    pub map: TransportMap,
    pub trace: TrainTrace,
    /// Epoch whose parameters achieved `risk` (0 = initialization).
    pub best_epoch: usize,
}

fn diverged(epoch: usize, value: f64, trace: &[f64]) -> Error {
    Error::Diverged {
        epoch,
        value,
        trace: trace.to_vec(),
    }
}

/// Approximates `min W_p(P_ST, Law(Y_T))^p` over the family with exactly `cfg.epochs` epochs of
/// full-batch gradient descent. The reported risk is computed by the exact solver.
pub fn minimize_output_risk(
    family: &OutputFamily,
    source_model: &TransportMap,
    law_xt: &EmpiricalDistribution,
    law_yt_proxy: &EmpiricalDistribution,
    p: f64,
    cfg: &TrainConfig,
    ot: &OtConfig,
) -> Result<MinimizedRisk> {
    cfg.validate()?;
    let problem = OutputProblem::new(family, source_model, law_xt, law_yt_proxy, p, cfg.surrogate_epsilon)?;
    let mut params = flatten(&family.init);
    let mut objective = Vec::with_capacity(cfg.epochs);
    let mut best = (problem.exact_risk(&params, ot)?, 0, params.clone());
    for epoch in 0..cfg.epochs {
        let (value, grad) = problem.objective(&params)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(epoch, value, &objective));
        }
        objective.push(value);
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
        let risk = problem.exact_risk(&params, ot)?;
        if !risk.is_finite() {
            return Err(diverged(epoch + 1, risk, &objective));
        }
        if risk < best.0 {
            best = (risk, epoch + 1, params.clone());
        }
    }
    log::debug!("output risk: best {} at epoch {} of {}", best.0, best.1, cfg.epochs);
    Ok(MinimizedRisk {
        risk: best.0,
        map: family.map(&best.2)?,
        trace: TrainTrace {
            objective,
            epochs_run: cfg.epochs,
            parameters: params,
        },
        best_epoch: best.1,
    })
}

/// Features with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub features: EmpiricalDistribution,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn new(features: EmpiricalDistribution, labels: Vec<usize>) -> Result<Self> {
        check_dim(features.len(), labels.len(), "labels vs feature rows")?;
        Ok(Self { features, labels })
    }

    /// Label law as masses on the one-hot vertices `e_0 .. e_{K-1}`.
    pub fn one_hot_law(&self, classes: usize) -> Result<EmpiricalDistribution> {
        let mut mass = vec![0.0; classes];
        for (&y, &w) in self.labels.iter().zip(self.features.weights()) {
            if y >= classes {
                return Err(Error::InvalidArgument(format!("label {y} outside 0..{classes}")));
            }
            mass[y] += w;
        }
        let points = (0..classes)
            .map(|c| (0..classes).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
            .collect();
        EmpiricalDistribution::from_masses(points, mass)
    }

    /// Applies `f` to every feature row.
    pub fn map_features<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        Self::new(self.features.map_points(f)?, self.labels.clone())
    }
}

/// Weighted cross-entropy of `softmax(W x + b)` and its gradient (flattened like [`flatten`]).
pub fn cross_entropy_objective(params: &[f64], classes: usize, data: &LabeledData) -> Result<(f64, Vec<f64>)> {
    let d = data.features.dim();
    let model = unflatten(params, classes, d)?;
    let mut loss = 0.0;
    let mut features = Vec::with_capacity(data.labels.len());
    let mut grads = Vec::with_capacity(data.labels.len());
    for ((x, w), &y) in data.features.iter().zip(&data.labels) {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} outside 0..{classes}")));
        }
        let z = DVector::from_column_slice(x);
        let logits = model.apply_vec(&z);
        let max = logits.max();
        let lse = max + logits.map(|v| (v - max).exp()).sum().ln();
        loss += w * (lse - logits[y]);
        let mut g = softmax(&logits);
        g[y] -= 1.0;
        grads.push(g * w);
        features.push(z);
    }
    Ok((loss, affine_backward(&features, &grads, classes, d)))
}

/// Fraction of rows (by weight) whose arg-max class matches the label; ties go to the lowest class.
pub fn accuracy(model: &AffineModel, data: &LabeledData) -> f64 {
    data.features
        .iter()
        .zip(&data.labels)
        .map(|((x, w), &y)| {
            let s = model.apply_vec(&DVector::from_column_slice(x));
            let mut best = 0;
            for k in 1..s.len() {
                if s[k] > s[best] {
                    best = k;
                }
            }
            if best == y {
                w
            } else {
                0.0
            }
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// Accuracy on the held-out data.
    pub accuracy: f64,
    pub model: AffineModel,
    pub trace: TrainTrace,
}

/// Full-batch gradient descent on the cross-entropy of an affine softmax head.
pub fn train_classifier(
    init: &AffineModel,
    train: &LabeledData,
    test: &LabeledData,
    cfg: &TrainConfig,
) -> Result<Classification> {
    cfg.validate()?;
    let classes = init.output_dim();
    check_dim(init.input_dim(), train.features.dim(), "head input vs training features")?;
    check_dim(init.input_dim(), test.features.dim(), "head input vs test features")?;
    if classes < 2 {
        return Err(Error::InvalidArgument("classifier needs at least two classes".into()));
    }
    if train.labels.iter().all(|&y| y == train.labels[0]) {
        return Err(Error::Degenerate("training set contains a single class".into()));
    }
    let mut params = flatten(init);
    let mut objective = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = cross_entropy_objective(&params, classes, train)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(epoch, loss, &objective));
        }
        objective.push(loss);
        if loss < best_loss - 1e-9 * best_loss.abs().max(1.0) {
            best_loss = loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.plateau_patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }
    let model = unflatten(&params, classes, init.input_dim())?;
    Ok(Classification {
        accuracy: accuracy(&model, test),
        model,
        trace: TrainTrace {
            epochs_run: objective.len(),
            objective,
            parameters: params,
        },
    })
}

/// A synthetic domain: `K = 3` Gaussian classes in `R^6` whose means are rotated by `angle`
/// inside the planes spanned by `e_c` and `e_{c+3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDomain {
    pub name: String,
    pub angle: f64,
    pub seed: u64,
}

impl SyntheticDomain {
    pub fn new(name: &str, angle: f64, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            angle,
            seed,
        }
    }

    /// Three domains with increasing shift, standing in for Amazon, DSLR and Webcam.
    pub fn office_analog() -> Vec<Self> {
        vec![
            Self::new("A", 0.0, 101),
            Self::new("D", 0.9, 202),
            Self::new("W", 1.1, 303),
        ]
    }
}

pub const OFFICE_CLASSES: usize = 3;
pub const OFFICE_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfficeConfig {
    pub samples_per_class: usize,
    /// Distance of the class means from the origin.
    pub radius: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    pub accuracy_train: TrainConfig,
    pub risk_train: TrainConfig,
    /// Multiplies the input risk before combining.
    pub input_risk_scale: f64,
    pub ot: OtConfig,
    pub seed: u64,
}

impl Default for OfficeConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 60,
            radius: 2.0,
            noise: 1.0,
            accuracy_train: TrainConfig::accuracy_mode(),
            risk_train: TrainConfig::risk_mode(),
            input_risk_scale: 1.0,
            ot: OtConfig::default(),
            seed: 7,
        }
    }
}

pub fn generate_domain(domain: &SyntheticDomain, cfg: &OfficeConfig) -> Result<LabeledData> {
    if cfg.samples_per_class == 0 || !(cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument("domain needs samples and a nonnegative noise".into()));
    }
    let mut rng = seeded_rng(domain.seed);
    let (c, s) = (domain.angle.cos(), domain.angle.sin());
    let mut points = Vec::new();
    let mut labels = Vec::new();
    // Interleave classes so that even/odd splits stay balanced.
    for _ in 0..cfg.samples_per_class {
        for class in 0..OFFICE_CLASSES {
            let mut x: Vec<f64> = (0..OFFICE_DIM)
                .map(|_| cfg.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            x[class] += cfg.radius * c;
            x[class + OFFICE_CLASSES] += cfg.radius * s;
            points.push(x);
            labels.push(class);
        }
    }
    LabeledData::new(EmpiricalDistribution::uniform(points)?, labels)
}

/// Alternating split into two halves with uniform weights.
pub fn split_halves(data: &LabeledData) -> Result<(LabeledData, LabeledData)> {
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (i, (p, &y)) in data.features.points().iter().zip(&data.labels).enumerate() {
        parts[i % 2].0.push(p.clone());
        parts[i % 2].1.push(y);
    }
    let [(pa, ya), (pb, yb)] = parts;
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::InvalidArgument("need at least two rows to split".into()));
    }
    Ok((
        LabeledData::new(EmpiricalDistribution::uniform(pa)?, ya)?,
        LabeledData::new(EmpiricalDistribution::uniform(pb)?, yb)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub source: String,
    pub target: String,
    pub accuracy: f64,
    /// Rescaled input risk.
    pub input_risk: f64,
    pub output_risk: f64,
    pub transfer_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    pub rows: Vec<PairRow>,
    pub spearman: f64,
    pub pearson: f64,
}

/// Correlations between accuracy and combined risk.
pub fn correlations(rows: &[PairRow]) -> Result<(f64, f64)> {
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let risk: Vec<f64> = rows.iter().map(|r| r.transfer_risk).collect();
    Ok((stats::spearman(&acc, &risk)?, stats::pearson(&acc, &risk)?))
}

/// One row per ordered (source, target) pair, in row-major order over `domains`.
pub fn evaluate_risk_accuracy_pairs(
    domains: &[SyntheticDomain],
    combiner: &RiskCombiner,
    cfg: &OfficeConfig,
) -> Result<PairTable> {
    if domains.len() < 2 {
        return Err(Error::InvalidArgument("need at least two domains".into()));
    }
    combiner.validate()?;
    if !(cfg.input_risk_scale > 0.0) {
        return Err(Error::InvalidArgument("input risk scale must be positive".into()));
    }
    let data = domains
        .iter()
        .map(|d| generate_domain(d, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(domains.len() * (domains.len() - 1));
    let mut pair_index = 0u64;
    for (si, source) in domains.iter().enumerate() {
        for (ti, target) in domains.iter().enumerate() {
            if si == ti {
                continue;
            }
            let seed = cfg.seed + pair_index;
            pair_index += 1;
            rows.push(evaluate_pair(source, &data[si], target, &data[ti], combiner, cfg, seed)?);
        }
    }
    let (spearman, pearson) = correlations(&rows)?;
    Ok(PairTable {
        rows,
        spearman,
        pearson,
    })
}

fn evaluate_pair(
    source: &SyntheticDomain,
    source_data: &LabeledData,
    target: &SyntheticDomain,
    target_data: &LabeledData,
    combiner: &RiskCombiner,
    cfg: &OfficeConfig,
    seed: u64,
) -> Result<PairRow> {
    let k = OFFICE_CLASSES;
    let init = random_affine(k, source_data.features.dim(), seed)?;
    let pretrained = train_classifier(&init, source_data, source_data, &cfg.accuracy_train)?.model;
    let source_model = TransportMap::Affine(pretrained.clone());

    // Fine-tune a head on the frozen source logits with half the target data.
    let (tune, held_out) = split_halves(target_data)?;
    let logits = |d: &LabeledData| d.map_features(|x| pretrained.apply(x));
    let head = train_classifier(&AffineModel::identity(k), &logits(&tune)?, &logits(&held_out)?, &cfg.accuracy_train)?;

    let e_i = wasserstein(&target_data.features, &source_data.features, &OtConfig {
        order: 1.0,
        ..cfg.ot.clone()
    })?
    .distance
        * cfg.input_risk_scale;

    let family = OutputFamily {
        init: AffineModel::identity(k),
        mode: OutputMode::YOnly,
        softmax: true,
    };
    let risk_cfg = TrainConfig {
        seed,
        ..cfg.risk_train.clone()
    };
    let e_o = minimize_output_risk(
        &family,
        &source_model,
        &tune.features,
        &tune.one_hot_law(k)?,
        1.0,
        &risk_cfg,
        &cfg.ot,
    )?
    .risk;
    log::info!(
        "{} -> {}: accuracy {:.3}, E^I {:.4}, E^O {:.4}",
        source.name,
        target.name,
        head.accuracy,
        e_i,
        e_o
    );
    Ok(PairRow {
        source: source.name.clone(),
        target: target.name.clone(),
        accuracy: head.accuracy,
        input_risk: e_i,
        output_risk: e_o,
        transfer_risk: combiner.combine(e_i, e_o)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let m = random_affine(2, 3, 4).unwrap();
        assert_eq!(unflatten(&flatten(&m), 2, 3).unwrap(), m);
        assert!(m.weights().iter().all(|w| w.abs() < 0.1));
        assert!(m.bias().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn single_class_training_is_rejected() {
        let data = LabeledData::new(EmpiricalDistribution::from_scalars(&[0.0, 1.0]).unwrap(), vec![1, 1]).unwrap();
        let init = random_affine(2, 1, 0).unwrap();
        let err = train_classifier(&init, &data, &data, &TrainConfig::accuracy_mode());
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn risk_mode_runs_exact_budget() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let law = EmpiricalDistribution::from_scalars(&xs).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let proxy = EmpiricalDistribution::from_scalars(&ys).unwrap();
        let family = OutputFamily {
            init: AffineModel::linear_1d(&[1.0], 0.0).unwrap(),
            mode: OutputMode::YOnly,
            softmax: false,
        };
        let src = TransportMap::Identity { dim: 1 };
        let out = minimize_output_risk(&family, &src, &law, &proxy, 1.0, &TrainConfig::risk_mode(), &OtConfig::default()).unwrap();
        assert_eq!(out.trace.epochs_run, 10);
        assert_eq!(out.trace.objective.len(), 10);
        assert!(out.risk <= out.trace.objective[0]);
    }

    #[test]
    fn exact_map_has_zero_risk() {
        let xs = [0.1, 0.5, -0.3, 2.0];
        let law = EmpiricalDistribution::from_scalars(&xs).unwrap();
        let family = OutputFamily {
            init: AffineModel::linear_1d(&[3.0], -1.0).unwrap(),
            mode: OutputMode::XOnly,
            softmax: false,
        };
        let proxy = EmpiricalDistribution::from_scalars(&xs.map(|x| 3.0 * x - 1.0)).unwrap();
        let src = TransportMap::Identity { dim: 1 };
        let out = minimize_output_risk(&family, &src, &law, &proxy, 1.0, &TrainConfig::risk_mode(), &OtConfig::default()).unwrap();
        assert!(out.risk < 1e-12);
    }

    #[test]
    fn one_hot_law_masses() {
        let data = LabeledData::new(EmpiricalDistribution::from_scalars(&[0.0, 1.0, 2.0, 3.0]).unwrap(), vec![0, 2, 2, 1]).unwrap();
        let law = data.one_hot_law(3).unwrap();
        assert_eq!(law.weights(), &[0.25, 0.25, 0.5]);
        assert_eq!(law.points()[2], vec![0.0, 0.0, 1.0]);
    }
}
