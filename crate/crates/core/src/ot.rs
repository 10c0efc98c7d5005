//! Wasserstein distances between empirical distributions.
//!
//! Three solvers share one entry point, [`wasserstein`]:
//! - the quantile coupling for 1-D inputs (exact, `O((n + m) log(n + m))`),
//! - a transportation simplex on the dense cost matrix (exact, small supports),
//! - log-domain Sinkhorn iterations with epsilon scaling (entropic approximation).
//!
//! Ground cost is `||x - y||^p` in the Euclidean norm; the returned distance is the
//! `p`-th root of the optimal expected cost.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::EmpiricalDistribution;
use crate::error::{check_dim, Error, Result};

/// Tolerance on coupling marginals.
pub const MARGINAL_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtMethod {
    Auto,
    Exact1d,
    ExactLp,
    Sinkhorn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    /// Exponent `p >= 1` of the ground cost.
    pub order: f64,
    pub method: OtMethod,
    /// Entropic regularization; `None` means 1% of the mean pairwise cost.
    pub sinkhorn_epsilon: Option<f64>,
    pub sinkhorn_max_iter: usize,
    /// Stop once the largest marginal violation drops below this.
    pub sinkhorn_tolerance: f64,
    pub lp_max_support: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            order: 1.0,
            method: OtMethod::Auto,
            sinkhorn_epsilon: None,
            sinkhorn_max_iter: 2000,
            sinkhorn_tolerance: 1e-6,
            lp_max_support: 400,
        }
    }
}

impl OtConfig {
    pub fn with_order(order: f64) -> Self {
        Self {
            order,
            ..Self::default()
        }
    }

    pub fn with_method(mut self, method: OtMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.order >= 1.0) || !self.order.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "transport order must be >= 1, got {}",
                self.order
            )));
        }
        if let Some(eps) = self.sinkhorn_epsilon {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sinkhorn epsilon must be positive, got {eps}"
                )));
            }
        }
        if self.sinkhorn_max_iter == 0 || !(self.sinkhorn_tolerance > 0.0) {
            return Err(Error::InvalidArgument("sinkhorn iteration budget and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Transport plan stored as its nonzero (or basic) cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    /// `(source index, target index, mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// Realized expected cost `sum plan * cost`.
    pub cost: f64,
}

impl Coupling {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(i, j, mass) in &self.entries {
            m[(i, j)] += mass;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.rows];
        for &(i, _, mass) in &self.entries {
            r[i] += mass;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.cols];
        for &(_, j, mass) in &self.entries {
            c[j] += mass;
        }
        c
    }

    /// Largest deviation of either marginal from the given weights.
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.row_sums();
        let c = self.col_sums();
        r.iter()
            .zip(a)
            .chain(c.iter().zip(b))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transport {
    pub distance: f64,
    pub coupling: Option<Coupling>,
    /// The solver actually used after resolving `auto`.
    pub method: OtMethod,
}

pub fn ground_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        d2
    } else if p == 1.0 {
        d2.sqrt()
    } else {
        d2.sqrt().powf(p)
    }
}

pub fn cost_matrix(a: &EmpiricalDistribution, b: &EmpiricalDistribution, p: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        ground_cost(&a.points()[i], &b.points()[j], p)
    })
}

/// `W_p(a, b)` with the solver selected by `cfg.method`.
pub fn wasserstein(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    cfg: &OtConfig,
) -> Result<Transport> {
    cfg.validate()?;
    check_dim(a.dim(), b.dim(), "wasserstein")?;
    let p = cfg.order;
    let method = match cfg.method {
        OtMethod::Auto if a.dim() == 1 => OtMethod::Exact1d,
        OtMethod::Auto if a.len() <= cfg.lp_max_support && b.len() <= cfg.lp_max_support => {
            OtMethod::ExactLp
        }
        OtMethod::Auto => OtMethod::Sinkhorn,
        m => m,
    };
    let coupling = match method {
        OtMethod::Exact1d => {
            let xa = a.scalars()?;
            let xb = b.scalars()?;
            let entries = quantile_coupling(&xa, a.weights(), &xb, b.weights());
            let cost = entries
                .iter()
                .map(|&(i, j, m)| m * (xa[i] - xb[j]).abs().powf(p))
                .sum();
            Coupling {
                rows: a.len(),
                cols: b.len(),
                entries,
                cost,
            }
        }
        OtMethod::ExactLp => {
            if a.len() > cfg.lp_max_support || b.len() > cfg.lp_max_support {
                return Err(Error::InvalidArgument(format!(
                    "exact LP limited to supports of {} points, got {}x{}",
                    cfg.lp_max_support,
                    a.len(),
                    b.len()
                )));
            }
            solve_transport_lp(a.weights(), b.weights(), &cost_matrix(a, b, p))?
        }
        OtMethod::Sinkhorn => {
            let cost = cost_matrix(a, b, p);
            let eps = match cfg.sinkhorn_epsilon {
                Some(e) => e,
                None => default_epsilon(&cost),
            };
            if eps == 0.0 {
                // Every pairwise cost is zero, so every coupling is optimal.
                product_coupling(a.weights(), b.weights())
            } else {
                let sol = sinkhorn(
                    a.weights(),
                    b.weights(),
                    &cost,
                    eps,
                    cfg.sinkhorn_max_iter,
                    cfg.sinkhorn_tolerance,
                )?;
                sol.coupling()
            }
        }
        OtMethod::Auto => unreachable!("auto resolved above"),
    };
    Ok(Transport {
        distance: coupling.cost.max(0.0).powf(1.0 / p),
        coupling: Some(coupling),
        method,
    })
}

/// Exact 1-D `W_p` via the monotone (quantile) coupling.
pub fn wasserstein_1d_exact(a: &EmpiricalDistribution, b: &EmpiricalDistribution, p: f64) -> Result<f64> {
    check_dim(1, a.dim(), "wasserstein_1d_exact: first argument")?;
    check_dim(1, b.dim(), "wasserstein_1d_exact: second argument")?;
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("order must be >= 1, got {p}")));
    }
    let xa = a.scalars()?;
    let xb = b.scalars()?;
    let cost: f64 = quantile_coupling(&xa, a.weights(), &xb, b.weights())
        .into_iter()
        .map(|(i, j, m)| m * (xa[i] - xb[j]).abs().powf(p))
        .sum();
    Ok(cost.max(0.0).powf(1.0 / p))
}

fn sorted_order(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
    idx
}

/// Monotone coupling of two weighted 1-D samples, walking both quantile functions together.
///
/// Entries are produced in increasing quantile order; ties in value are broken by index.
pub fn quantile_coupling(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> Vec<(usize, usize, f64)> {
    let oa = sorted_order(xa);
    let ob = sorted_order(xb);
    let mut entries = Vec::with_capacity(oa.len() + ob.len());
    let (mut ia, mut ib) = (0, 0);
    // Skip zero-mass atoms.
    let mut ra = wa[oa[0]];
    let mut rb = wb[ob[0]];
    while ia < oa.len() && ib < ob.len() {
        let mass = ra.min(rb);
        if mass > 0.0 {
            entries.push((oa[ia], ob[ib], mass));
        }
        if ra < rb {
            rb -= ra;
            ia += 1;
            ra = oa.get(ia).map_or(0.0, |&k| wa[k]);
        } else if rb < ra {
            ra -= rb;
            ib += 1;
            rb = ob.get(ib).map_or(0.0, |&k| wb[k]);
        } else {
            ia += 1;
            ib += 1;
            ra = oa.get(ia).map_or(0.0, |&k| wa[k]);
            rb = ob.get(ib).map_or(0.0, |&k| wb[k]);
        }
    }
    entries
}

fn default_epsilon(cost: &DMatrix<f64>) -> f64 {
    0.01 * cost.mean()
}

fn product_coupling(a: &[f64], b: &[f64]) -> Coupling {
    let mut entries = Vec::with_capacity(a.len() * b.len());
    for (i, wa) in a.iter().enumerate() {
        for (j, wb) in b.iter().enumerate() {
            entries.push((i, j, wa * wb));
        }
    }
    Coupling {
        rows: a.len(),
        cols: b.len(),
        entries,
        cost: 0.0,
    }
}

/// Converged log-domain Sinkhorn solution.
#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    pub plan: DMatrix<f64>,
    /// Dual potentials, in cost units.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    /// `<plan, cost>`.
    pub transport_cost: f64,
    /// Entropic OT value (dual objective); its derivative with respect to `cost` is `plan`.
    pub regularized_cost: f64,
    pub iterations: usize,
    pub violation: f64,
}

impl SinkhornSolution {
    pub fn coupling(&self) -> Coupling {
        let (n, m) = self.plan.shape();
        let mut entries = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let mass = self.plan[(i, j)];
                if mass > 0.0 {
                    entries.push((i, j, mass));
                }
            }
        }
        Coupling {
            rows: n,
            cols: m,
            entries,
            cost: self.transport_cost,
        }
    }
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(terms: I) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Scalings larger than `exp(ABSORB_LOG)` are folded back into the potentials.
const ABSORB_LOG: f64 = 30.0;

/// Sinkhorn state: plan `diag(u) K diag(v)` with `K_ij = exp((F_i + G_j - C_ij) / eps)`.
struct Stabilized<'a> {
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a DMatrix<f64>,
    eps: f64,
    big_f: Vec<f64>,
    big_g: Vec<f64>,
    kernel: DMatrix<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Stabilized<'a> {
    fn new(a: &'a [f64], b: &'a [f64], cost: &'a DMatrix<f64>, eps: f64) -> Self {
        let (n, m) = cost.shape();
        let mut s = Self {
            a,
            b,
            cost,
            eps,
            big_f: vec![0.0; n],
            big_g: vec![0.0; m],
            kernel: DMatrix::zeros(n, m),
            u: vec![1.0; n],
            v: vec![1.0; m],
        };
        s.log_update();
        s
    }

    fn rebuild_kernel(&mut self) {
        let (n, m) = self.cost.shape();
        for j in 0..m {
            for i in 0..n {
                self.kernel[(i, j)] =
                    ((self.big_f[i] + self.big_g[j] - self.cost[(i, j)]) / self.eps).exp();
            }
        }
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    fn absorb(&mut self) {
        for (f, u) in self.big_f.iter_mut().zip(&self.u) {
            *f += self.eps * u.ln();
        }
        for (g, v) in self.big_g.iter_mut().zip(&self.v) {
            *g += self.eps * v.ln();
        }
        self.rebuild_kernel();
    }

    /// One exact log-domain sweep; used at start-up and whenever the kernel underflows.
    fn log_update(&mut self) {
        let (n, m) = self.cost.shape();
        let eps = self.eps;
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (self.big_g[j] - self.cost[(i, j)]) / eps));
            self.big_f[i] = if self.a[i] > 0.0 { eps * (self.a[i].ln() - lse) } else { -1e300 };
        }
        for j in 0..m {
            let lse = log_sum_exp(
                (0..n)
                    .filter(|&i| self.a[i] > 0.0)
                    .map(|i| (self.big_f[i] - self.cost[(i, j)]) / eps),
            );
            self.big_g[j] = if self.b[j] > 0.0 { eps * (self.b[j].ln() - lse) } else { -1e300 };
        }
        self.rebuild_kernel();
    }

    fn set_epsilon(&mut self, eps: f64) {
        self.absorb();
        self.eps = eps;
        self.log_update();
    }

    fn iterate(&mut self) {
        let (n, m) = self.cost.shape();
        let kv = &self.kernel * DVector::from_column_slice(&self.v);
        let mut degenerate = false;
        for i in 0..n {
            self.u[i] = if self.a[i] > 0.0 { self.a[i] / kv[i] } else { 0.0 };
            degenerate |= !self.u[i].is_finite();
        }
        if !degenerate {
            let ktu = self.kernel.tr_mul(&DVector::from_column_slice(&self.u));
            for j in 0..m {
                self.v[j] = if self.b[j] > 0.0 { self.b[j] / ktu[j] } else { 0.0 };
                degenerate |= !self.v[j].is_finite();
            }
        }
        if degenerate {
            self.u.fill(1.0);
            self.v.fill(1.0);
            self.log_update();
            return;
        }
        let too_big = |x: &f64| *x > 0.0 && x.ln().abs() > ABSORB_LOG;
        if self.u.iter().any(too_big) || self.v.iter().any(too_big) {
            self.absorb();
        }
    }

    /// Row potentials that make the row marginals exact for column potentials `g`.
    fn row_potentials(&self, g: &[f64]) -> Vec<f64> {
        let (n, m) = self.cost.shape();
        let eps = self.eps;
        (0..n)
            .map(|i| {
                if self.a[i] > 0.0 {
                    let lse = log_sum_exp((0..m).map(|j| (g[j] - self.cost[(i, j)]) / eps));
                    eps * (self.a[i].ln() - lse)
                } else {
                    -1e300
                }
            })
            .collect()
    }

    fn plan_for(&self, f: &[f64], g: &[f64]) -> DMatrix<f64> {
        let (n, m) = self.cost.shape();
        DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - self.cost[(i, j)]) / self.eps).exp())
    }

    fn column_residual(&self, plan: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.b.len(), |j, _| self.b[j] - plan.column(j).sum())
    }

    /// Damped Newton step on the column potentials of the semi-dual. Returns false when no
    /// step reduces the column residual.
    fn newton_step(&mut self) -> bool {
        self.absorb();
        let m = self.b.len();
        let active: Vec<usize> = (0..m).filter(|&j| self.b[j] > 0.0).collect();
        let g = self.big_g.clone();
        let f = self.row_potentials(&g);
        let plan = self.plan_for(&f, &g);
        let residual = self.column_residual(&plan);
        let norm = |r: &DVector<f64>| active.iter().map(|&j| r[j] * r[j]).sum::<f64>().sqrt();
        let r0 = norm(&residual);

        // Jacobian of the column marginals with respect to g.
        let k = active.len();
        let mut jac = DMatrix::zeros(k, k);
        for (p, &j) in active.iter().enumerate() {
            for (q, &l) in active.iter().enumerate().skip(p) {
                let mut s = 0.0;
                for i in 0..self.a.len() {
                    if self.a[i] > 0.0 {
                        s += plan[(i, j)] * plan[(i, l)] / self.a[i];
                    }
                }
                let diag = if p == q { plan.column(j).sum() } else { 0.0 };
                jac[(p, q)] = (diag - s) / self.eps;
                jac[(q, p)] = jac[(p, q)];
            }
        }
        let ridge = 1e-12 * jac.diagonal().amax().max(f64::MIN_POSITIVE);
        for p in 0..k {
            jac[(p, p)] += ridge;
        }
        let rhs = DVector::from_fn(k, |p, _| residual[active[p]]);
        let step = match jac.lu().solve(&rhs) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => return false,
        };

        let mut t = 1.0;
        for _ in 0..30 {
            let mut trial = g.clone();
            for (p, &j) in active.iter().enumerate() {
                trial[j] += t * step[p];
            }
            let tf = self.row_potentials(&trial);
            let tplan = self.plan_for(&tf, &trial);
            if norm(&self.column_residual(&tplan)) < r0 {
                self.big_f = tf;
                self.big_g = trial;
                self.rebuild_kernel();
                return true;
            }
            t *= 0.5;
        }
        false
    }

    /// Max violation over both marginals.
    fn full_violation(&self) -> f64 {
        let plan = self.current_plan();
        let rows = (0..self.a.len()).map(|i| (plan.row(i).sum() - self.a[i]).abs());
        let cols = (0..self.b.len()).map(|j| (plan.column(j).sum() - self.b[j]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    fn current_plan(&self) -> DMatrix<f64> {
        let mut plan = self.kernel.clone();
        for (i, mut row) in plan.row_iter_mut().enumerate() {
            row *= self.u[i];
        }
        for (j, mut col) in plan.column_iter_mut().enumerate() {
            col *= self.v[j];
        }
        plan
    }

    /// Row-marginal violation; columns are exact right after an iteration.
    fn violation(&self) -> f64 {
        let kv = &self.kernel * DVector::from_column_slice(&self.v);
        (0..self.a.len())
            .map(|i| (self.u[i] * kv[i] - self.a[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Entropic OT between weight vectors `a`, `b` for the given cost.
///
/// Iterates on scalings with log-domain absorption, after annealing epsilon down from the
/// mean cost to warm-start the potentials. On supports up to 500 points the iteration then
/// switches to damped Newton steps on the semi-dual. `max_iter` bounds the iterations
/// (scaling or Newton) spent at the target epsilon.
pub fn sinkhorn(
    a: &[f64],
    b: &[f64],
    cost: &DMatrix<f64>,
    epsilon: f64,
    max_iter: usize,
    tolerance: f64,
) -> Result<SinkhornSolution> {
    let (n, m) = cost.shape();
    check_dim(n, a.len(), "sinkhorn source weights")?;
    check_dim(m, b.len(), "sinkhorn target weights")?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }

    let mut eps = cost.mean().max(epsilon);
    let mut state = Stabilized::new(a, b, cost, eps);
    while eps > epsilon {
        for _ in 0..ANNEALING_ITERATIONS {
            state.iterate();
        }
        eps = (eps * 0.5).max(epsilon);
        state.set_epsilon(eps);
    }

    let newton_allowed = n.max(m) <= NEWTON_MAX_SUPPORT;
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        if newton_allowed && iterations >= SCALING_BEFORE_NEWTON {
            if !state.newton_step() {
                log::debug!("sinkhorn: newton step stalled at violation {violation:e}");
                // Fall back to plain scaling for the remaining budget.
                while iterations < max_iter && violation >= tolerance {
                    state.iterate();
                    iterations += 1;
                    violation = state.full_violation();
                }
                break;
            }
            iterations += 1;
            violation = state.full_violation();
        } else {
            state.iterate();
            iterations += 1;
            if iterations % 10 == 0 || iterations == max_iter {
                violation = state.violation();
            }
        }
        if violation < tolerance {
            break;
        }
    }
    if !(violation < tolerance) {
        return Err(Error::SinkhornNonConvergence {
            iterations,
            violation,
        });
    }
    state.absorb();

    let plan = state.kernel.clone();
    let transport_cost = plan.component_mul(cost).sum();
    // Potentials relative to the product reference measure a (x) b.
    let f: Vec<f64> = (0..n)
        .map(|i| if a[i] > 0.0 { state.big_f[i] - epsilon * a[i].ln() } else { 0.0 })
        .collect();
    let g: Vec<f64> = (0..m)
        .map(|j| if b[j] > 0.0 { state.big_g[j] - epsilon * b[j].ln() } else { 0.0 })
        .collect();
    let dual = a.iter().zip(&f).map(|(w, p)| w * p).sum::<f64>()
        + b.iter().zip(&g).map(|(w, p)| w * p).sum::<f64>();
    let regularized_cost = dual - epsilon * (plan.sum() - 1.0);
    Ok(SinkhornSolution {
        plan,
        f,
        g,
        epsilon,
        transport_cost,
        regularized_cost,
        iterations,
        violation,
    })
}

/// Iterations per annealing stage before halving epsilon.
const ANNEALING_ITERATIONS: usize = 50;
/// Plain scaling iterations before switching to Newton steps, which converge much faster
/// once the potentials are roughly right.
const SCALING_BEFORE_NEWTON: usize = 200;
const NEWTON_MAX_SUPPORT: usize = 500;

/// Exact transportation LP solved by the transportation simplex (MODI) method.
///
/// Starts from the northwest-corner basis. Entering cells use the most negative reduced cost
/// and switch to Bland's rule after a run of degenerate pivots; all ties go to the lowest
/// cell index `i * cols + j`.
pub fn solve_transport_lp(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<Coupling> {
    let (n, m) = cost.shape();
    check_dim(n, supply.len(), "transport LP supply")?;
    check_dim(m, demand.len(), "transport LP demand")?;
    if n == 0 || m == 0 {
        return Err(Error::Lp("empty support".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if !(total_s > 0.0) || !(total_d > 0.0) {
        return Err(Error::Lp("marginals must have positive mass".into()));
    }
    let demand: Vec<f64> = demand.iter().map(|d| d * total_s / total_d).collect();

    let mut lp = TransportSimplex::northwest(supply, &demand, cost);
    lp.optimize()?;
    let mut entries: Vec<(usize, usize, f64)> = lp
        .basis
        .iter()
        .filter(|&&(i, j)| lp.flow[(i, j)] > 0.0)
        .map(|&(i, j)| (i, j, lp.flow[(i, j)]))
        .collect();
    entries.sort_by_key(|&(i, j, _)| (i, j));
    let cost_value = entries.iter().map(|&(i, j, x)| x * cost[(i, j)]).sum();
    let coupling = Coupling {
        rows: n,
        cols: m,
        entries,
        cost: cost_value,
    };
    let violation = coupling.marginal_violation(supply, &demand);
    if violation > MARGINAL_TOLERANCE {
        return Err(Error::Lp(format!("marginal violation {violation:e} after optimization")));
    }
    Ok(coupling)
}

struct TransportSimplex<'a> {
    n: usize,
    m: usize,
    cost: &'a DMatrix<f64>,
    flow: DMatrix<f64>,
    is_basic: Vec<bool>,
    basis: Vec<(usize, usize)>,
}

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN_LIMIT: usize = 50;

impl<'a> TransportSimplex<'a> {
    fn northwest(supply: &[f64], demand: &[f64], cost: &'a DMatrix<f64>) -> Self {
        let (n, m) = cost.shape();
        let mut flow = DMatrix::zeros(n, m);
        let mut is_basic = vec![false; n * m];
        let mut basis = Vec::with_capacity(n + m - 1);
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]).max(0.0);
            flow[(i, j)] = q;
            is_basic[i * m + j] = true;
            basis.push((i, j));
            s[i] -= q;
            d[j] -= q;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            n,
            m,
            cost,
            flow,
            is_basic,
            basis,
        }
    }

    fn optimize(&mut self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let nodes = n + m;
        let scale = self.cost.amax().max(1e-300);
        let tol = 1e-12 * scale.max(1.0);
        let max_iter = 50 * n * m + 1000;
        let mut degenerate_run = 0;

        let mut potential = vec![0.0; nodes];
        let mut parent = vec![usize::MAX; nodes];
        let mut parent_edge = vec![usize::MAX; nodes];
        let mut depth = vec![0usize; nodes];
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];

        for _ in 0..max_iter {
            // Spanning tree of the basis, rooted at row 0; potentials satisfy u_i + v_j = c_ij.
            for adj in adjacency.iter_mut() {
                adj.clear();
            }
            for (k, &(i, j)) in self.basis.iter().enumerate() {
                adjacency[i].push((n + j, k));
                adjacency[n + j].push((i, k));
            }
            parent.fill(usize::MAX);
            let mut visited = vec![false; nodes];
            let mut queue = VecDeque::from([0usize]);
            visited[0] = true;
            potential[0] = 0.0;
            depth[0] = 0;
            while let Some(u) = queue.pop_front() {
                for &(v, k) in &adjacency[u] {
                    if visited[v] {
                        continue;
                    }
                    visited[v] = true;
                    parent[v] = u;
                    parent_edge[v] = k;
                    depth[v] = depth[u] + 1;
                    let (i, j) = self.basis[k];
                    potential[v] = self.cost[(i, j)] - potential[u];
                    queue.push_back(v);
                }
            }
            if visited.iter().any(|v| !v) {
                return Err(Error::Lp("basis does not span all nodes".into()));
            }

            let bland = degenerate_run >= DEGENERATE_RUN_LIMIT;
            let mut entering: Option<(usize, usize)> = None;
            let mut best = -tol;
            'scan: for i in 0..n {
                for j in 0..m {
                    if self.is_basic[i * m + j] {
                        continue;
                    }
                    let r = self.cost[(i, j)] - potential[i] - potential[n + j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok(());
            };

            // Cycle: entering cell, then the tree path from column ej back to row ei.
            let mut up_from_col = Vec::new();
            let mut up_from_row = Vec::new();
            let (mut a, mut b) = (n + ej, ei);
            while depth[a] > depth[b] {
                up_from_col.push(parent_edge[a]);
                a = parent[a];
            }
            while depth[b] > depth[a] {
                up_from_row.push(parent_edge[b]);
                b = parent[b];
            }
            while a != b {
                up_from_col.push(parent_edge[a]);
                a = parent[a];
                up_from_row.push(parent_edge[b]);
                b = parent[b];
            }
            let path: Vec<usize> = up_from_col
                .into_iter()
                .chain(up_from_row.into_iter().rev())
                .collect();

            // Odd positions along the path (starting at the column end) lose flow.
            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let (i, j) = self.basis[k];
                    let x = self.flow[(i, j)];
                    let better = x < theta
                        || (x == theta && {
                            let (li, lj) = self.basis[leaving];
                            i * m + j < li * m + lj
                        });
                    if better {
                        theta = x;
                        leaving = k;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (pos, &k) in path.iter().enumerate() {
                let (i, j) = self.basis[k];
                if pos % 2 == 0 {
                    self.flow[(i, j)] = (self.flow[(i, j)] - theta).max(0.0);
                } else {
                    self.flow[(i, j)] += theta;
                }
            }
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
            let (li, lj) = self.basis[leaving];
            self.flow[(li, lj)] = 0.0;
            self.is_basic[li * m + lj] = false;
            self.flow[(ei, ej)] = theta;
            self.is_basic[ei * m + ej] = true;
            self.basis[leaving] = (ei, ej);
        }
        Err(Error::Lp(format!("no optimum after {max_iter} pivots")))
    }
}
