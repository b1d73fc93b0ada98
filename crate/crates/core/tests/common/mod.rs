#![allow(dead_code)]

use gibbsquad::{PointCloud, WeightedSample};
use rand::Rng;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Effective sample size from the integrated autocorrelation time, summing
/// autocorrelation pairs until the first negative pair sum.
pub fn ess(x: &[f64]) -> f64 {
    let n = x.len();
    let m = mean(x);
    let c0 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n / 2 {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau.max(1.0)
}

/// Column `k` of a point cloud.
pub fn column(cloud: &PointCloud, k: usize) -> Vec<f64> {
    cloud.iter().map(|p| p[k]).collect()
}

pub fn uniform_in_ball<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
        if p.iter().map(|c| c * c).sum::<f64>() <= radius * radius {
            return p;
        }
    }
}

/// `m` points in `B(0, 1)` with pairwise distances at least `gap`, also kept
/// away from every point of `avoid`.
pub fn separated_points<R: Rng>(rng: &mut R, m: usize, d: usize, gap: f64, avoid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(m);
    while out.len() < m {
        let p = uniform_in_ball(rng, d, 1.0);
        let far = |q: &Vec<f64>| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= gap * gap;
        if out.iter().all(far) && avoid.iter().all(far) {
            out.push(p);
        }
    }
    out
}

/// Random positive weights summing to one on the given points.
pub fn weighted<R: Rng>(rng: &mut R, points: &[Vec<f64>]) -> WeightedSample {
    let w: Vec<f64> = (0..points.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    WeightedSample::new(
        PointCloud::from_points(points).unwrap(),
        w.iter().map(|x| x / s).collect(),
    )
    .unwrap()
}
