#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use transfer_risk::distributions::{Gaussian, GaussianJoint};

/// A generator separate from the library's, so sampling oracles share no code with it.
pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Draws `n` vectors from `N(mean, cov)` through a Cholesky factor.
pub fn draw(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let l = cov.clone().cholesky().expect("positive definite covariance").l();
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(mean.len(), |_, _| r.sample::<f64, _>(StandardNormal));
            mean + &l * z
        })
        .collect()
}

/// Splits draws from the joint law into `(x, y)` pairs.
pub fn draw_joint(joint: &GaussianJoint, n: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let d = joint.dim_x();
    let k = joint.dim_y();
    draw(&joint.full_mean(), &joint.full_cov(), n, seed)
        .into_iter()
        .map(|v| (v.rows(0, d).into_owned(), v.rows(d, k).into_owned()))
        .collect()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Squared 2-Wasserstein distance between equal-size samples via sorting.
pub fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `KL(N(m1, v1) || N(m2, v2))` written out directly.
pub fn kl_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0)
}

pub fn log_density_1d(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v)
}

/// Least squares on samples: returns `(w, b)` for `y ~ w^T x + b`, scalar `y`.
pub fn ols(samples: &[(DVector<f64>, DVector<f64>)]) -> (DVector<f64>, f64) {
    let d = samples[0].0.len();
    // Normal equations on the augmented design [x, 1].
    let mut gram = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut rhs = DVector::<f64>::zeros(d + 1);
    for (x, y) in samples {
        let mut z = DVector::from_element(d + 1, 1.0);
        z.rows_mut(0, d).copy_from(x);
        gram += &z * z.transpose();
        rhs += &z * y[0];
    }
    let sol = gram.lu().solve(&rhs).expect("full-rank design");
    (sol.rows(0, d).into_owned(), sol[d])
}

pub fn gaussian(mean: &[f64], cov: &[&[f64]]) -> Gaussian {
    let n = mean.len();
    Gaussian::new(
        DVector::from_column_slice(mean),
        DMatrix::from_fn(n, n, |i, j| cov[i][j]),
    )
    .unwrap()
}

pub fn rel_close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs + rel * a.abs().max(b.abs())
}

/// Minimum-cost perfect matching (Hungarian method, potentials form). For equal-size
/// uniform point clouds this is the exact optimal-transport cost.
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// Exact `W_p^p` between equal-size uniform clouds.
pub fn wpp_uniform(a: &[Vec<f64>], b: &[Vec<f64>], p: f64) -> f64 {
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| x.iter().zip(y).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt().powf(p))
                .collect()
        })
        .collect();
    assignment_cost(&cost) / a.len() as f64
}
