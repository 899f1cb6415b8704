//! Independent reference computations used by the integration tests. None of
//! these call into the library's numerics.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// Compensated summation mean.
pub fn kahan_mean(x: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in x {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s / x.len() as f64
}

/// Two-pass sample variance with the `n - 1` divisor.
pub fn two_pass_variance(x: &[f64]) -> f64 {
    let m = kahan_mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Standard normal CDF through `erf`.
pub fn erf_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Normal quantile by bisection on the erf-based CDF.
pub fn bisect_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erf_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Type-7 quantile by direct order-statistic interpolation.
pub fn type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

fn spectral_bound(f: &DMatrix<f64>) -> f64 {
    // power iteration on F'F / n, padded a little for safety
    let n = f.nrows() as f64;
    let g = f.transpose() * f / n;
    let mut v = DVector::from_element(g.ncols(), 1.0);
    let mut est = 0.0;
    for _ in 0..500 {
        let w = &g * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 1.0;
        }
        est = norm / v.norm();
        v = w / norm;
    }
    est * 1.01
}

/// Accelerated proximal gradient (FISTA with adaptive restart) for a smooth
/// loss plus the weighted l1 penalty `sum_j t_j |theta_j|`.
fn fista<G, L>(p: usize, lipschitz: f64, thresholds: &[f64], grad: G, loss: L, iters: usize) -> (DVector<f64>, f64)
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
    L: Fn(&DVector<f64>) -> f64,
{
    let step = 1.0 / lipschitz;
    let obj = |th: &DVector<f64>| loss(th) + th.iter().zip(thresholds).map(|(t, l)| l * t.abs()).sum::<f64>();
    let mut x = DVector::zeros(p);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut last = obj(&x);
    let mut restarted = false;
    for _ in 0..iters {
        let g = grad(&yk);
        let next = DVector::from_fn(p, |j, _| soft(yk[j] - step * g[j], step * thresholds[j]));
        let val = obj(&next);
        let moved = (&next - &x).norm();
        if val > last {
            // a plain proximal step from x that still climbs is rounding noise
            if restarted {
                break;
            }
            restarted = true;
            t = 1.0;
            yk = x.clone();
            continue;
        }
        let t1 = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &next + (&next - &x) * ((t - 1.0) / t1);
        x = next;
        t = t1;
        last = val;
        restarted = false;
        if moved < 1e-13 {
            break;
        }
    }
    (x, last)
}

/// Oracle minimiser of `E_n[(y - f'theta)^2] / 2 + sum_j t_j |theta_j|`.
pub fn fista_linear(f: &DMatrix<f64>, y: &[f64], thresholds: &[f64]) -> (DVector<f64>, f64) {
    let n = f.nrows() as f64;
    let yv = DVector::from_column_slice(y);
    let grad = |th: &DVector<f64>| f.transpose() * (f * th - &yv) / n;
    let loss = |th: &DVector<f64>| (f * th - &yv).norm_squared() / (2.0 * n);
    fista(f.ncols(), spectral_bound(f), thresholds, grad, loss, 200_000)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Oracle minimiser of the mean logistic loss plus the weighted l1 penalty.
pub fn fista_logistic(f: &DMatrix<f64>, y: &[f64], thresholds: &[f64]) -> (DVector<f64>, f64) {
    let n = f.nrows() as f64;
    let yv = DVector::from_column_slice(y);
    let grad = |th: &DVector<f64>| {
        let mu = (f * th).map(sigmoid);
        f.transpose() * (mu - &yv) / n
    };
    let loss = |th: &DVector<f64>| {
        let eta = f * th;
        eta.iter()
            .zip(y)
            .map(|(&t, &yi)| (if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() }) - yi * t)
            .sum::<f64>()
            / n
    };
    fista(f.ncols(), spectral_bound(f) / 4.0, thresholds, grad, loss, 200_000)
}

/// Largest violation of the weighted-l1 optimality conditions.
pub fn kkt_gap(theta: &[f64], grad: &[f64], thresholds: &[f64]) -> f64 {
    theta
        .iter()
        .zip(grad)
        .zip(thresholds)
        .map(|((&t, &g), &l)| if t == 0.0 { (g.abs() - l).max(0.0) } else { (g + t.signum() * l).abs() })
        .fold(0.0, f64::max)
}

pub fn linear_gradient(f: &DMatrix<f64>, y: &[f64], theta: &[f64]) -> Vec<f64> {
    let n = f.nrows() as f64;
    let r = f * DVector::from_column_slice(theta) - DVector::from_column_slice(y);
    (f.transpose() * r / n).iter().copied().collect()
}

pub fn logistic_gradient(f: &DMatrix<f64>, y: &[f64], theta: &[f64]) -> Vec<f64> {
    let n = f.nrows() as f64;
    let mu = (f * DVector::from_column_slice(theta)).map(sigmoid);
    (f.transpose() * (mu - DVector::from_column_slice(y)) / n).iter().copied().collect()
}

/// Determinant of the unit-diagonal Gram matrix of the chosen columns.
pub fn normalized_gram_det(m: &DMatrix<f64>, cols: &[usize]) -> f64 {
    let k = cols.len();
    let norms: Vec<f64> = cols.iter().map(|&j| m.column(j).norm()).collect();
    let g = DMatrix::from_fn(k, k, |a, b| m.column(cols[a]).dot(&m.column(cols[b])) / (norms[a] * norms[b]));
    g.determinant()
}

/// Greedy left-to-right rank oracle: a column is kept when it raises the
/// Gram determinant of the kept set above `tol`.
pub fn greedy_rank_keep(m: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..m.ncols() {
        if m.column(j).norm() == 0.0 {
            continue;
        }
        let mut trial = kept.clone();
        trial.push(j);
        if normalized_gram_det(m, &trial) > tol {
            kept = trial;
        }
    }
    kept
}

/// Least squares by conjugate gradients on the normal equations.
pub fn cg_least_squares(f: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let a = f.transpose() * f;
    let b = f.transpose() * DVector::from_column_slice(y);
    let mut x = DVector::zeros(a.ncols());
    let mut r = &b - &a * &x;
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    for _ in 0..10 * a.ncols() {
        if rs.sqrt() <= 1e-14 * b.norm().max(1.0) {
            break;
        }
        let ap = &a * &p;
        let alpha = rs / p.dot(&ap);
        x += &p * alpha;
        r -= &ap * alpha;
        let next = r.norm_squared();
        p = &r + &p * (next / rs);
        rs = next;
    }
    x
}

/// Smallest point of a dense scan of `[grid_0, grid_last]` where the
/// piecewise-linear interpolant reaches `tau`; `None` if it never does.
pub fn dense_scan_inverse(grid: &[f64], values: &[f64], tau: f64, points: usize) -> Option<f64> {
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    let interp = |u: f64| {
        let k = grid.partition_point(|g| *g <= u).clamp(1, grid.len() - 1) - 1;
        let w = (u - grid[k]) / (grid[k + 1] - grid[k]);
        values[k] + w * (values[k + 1] - values[k])
    };
    (0..=points).map(|i| a + (b - a) * i as f64 / points as f64).find(|&u| interp(u) >= tau)
}

/// Writes a CSV with columns `y, d, z, x1..xp`.
pub fn write_csv(path: &std::path::Path, data: &hdte::data::RawData) {
    use std::io::Write;
    let mut out = std::fs::File::create(path).unwrap();
    let xs: Vec<String> = (1..=data.x.ncols()).map(|j| format!("x{j}")).collect();
    writeln!(out, "y,d,z,{}", xs.join(",")).unwrap();
    for i in 0..data.n() {
        let row: Vec<String> = (0..data.x.ncols()).map(|j| format!("{:?}", data.x[(i, j)])).collect();
        writeln!(out, "{:?},{:?},{:?},{}", data.y[i], data.d[i], data.z[i], row.join(",")).unwrap();
    }
}
