//! Confining potentials.
//!
//! The quenched potential replaces the intractable kernel embedding of the
//! target by the embedding of a finitely supported background, plus a
//! quadratic penalty outside the ball `B(0, R)`:
//!
//! `V_n(z) = -sum_i w_i K(z, x_i) + [|z|^2 - R^2]_+`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::measures::{squared_norm, PointCloud, WeightedSample};
use crate::spec_string::CallExpr;
use crate::targets::EquilibriumSpec;

/// External potential acting on each particle.
pub trait Confinement: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, z: &[f64]) -> f64;

    /// Returns the value and writes the gradient into `grad`.
    fn value_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;

    /// Particle count baked into an `n`-dependent kernel, if any.
    fn particle_count_hint(&self) -> Option<usize> {
        None
    }

    /// Background measure the potential is built from, if any.
    fn background(&self) -> Option<&WeightedSample> {
        None
    }
}

/// `Phi(z) = max(|z|^2 - R^2, 0)`.
pub fn confinement_phi(z: &[f64], radius: f64) -> f64 {
    (squared_norm(z) - radius * radius).max(0.0)
}

/// Potential generated by a weighted background through a bounded kernel.
#[derive(Debug, Clone)]
pub struct QuenchedPotential<K = KernelSpec> {
    background: WeightedSample,
    kernel: K,
    radius: f64,
}

impl<K: Kernel> QuenchedPotential<K> {
    pub fn new(background: WeightedSample, kernel: K, radius: f64) -> Result<Self> {
        if kernel.is_singular() {
            return Err(Error::SingularKernel(
                "quenched potential needs a bounded kernel; use the regularized Coulomb kernel".into(),
            ));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("confinement radius must be positive"));
        }
        if let Some(d) = kernel.required_dim() {
            if d != background.dim() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: background.dim(),
                });
            }
        }
        Ok(Self {
            background,
            kernel,
            radius,
        })
    }

    pub fn background(&self) -> &WeightedSample {
        &self.background
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Kernel embedding of the background, `sum_i w_i K(z, x_i)`.
    pub fn embedding(&self, z: &[f64]) -> f64 {
        self.background
            .iter()
            .map(|(x, w)| w * self.kernel.value(sq_dist(z, x)))
            .sum()
    }

    /// `V_n(z)`.
    pub fn quenched_v(&self, z: &[f64]) -> f64 {
        -self.embedding(z) + confinement_phi(z, self.radius)
    }

    /// Gradient of `V_n`; the penalty contributes `2z` strictly outside the
    /// ball and nothing on the sphere itself.
    pub fn quenched_v_grad(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.value_and_grad(z, &mut g);
        g
    }
}

impl<K: Kernel> Confinement for QuenchedPotential<K> {
    fn dim(&self) -> usize {
        self.background.dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.quenched_v(z)
    }

    fn value_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut embedding = 0.0;
        for (x, w) in self.background.iter() {
            let (k, dk) = self.kernel.radial(sq_dist(z, x));
            embedding += w * k;
            let c = -2.0 * w * dk;
            for ((g, zi), xi) in grad.iter_mut().zip(z).zip(x) {
                *g += c * (zi - xi);
            }
        }
        let r2 = squared_norm(z);
        let excess = r2 - self.radius * self.radius;
        if excess > 0.0 {
            for (g, zi) in grad.iter_mut().zip(z) {
                *g += 2.0 * zi;
            }
            -embedding + excess
        } else {
            -embedding
        }
    }

    fn particle_count_hint(&self) -> Option<usize> {
        self.kernel.particle_count()
    }

    fn background(&self) -> Option<&WeightedSample> {
        Some(&self.background)
    }
}

/// `V(z) = c |z|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPotential {
    dim: usize,
    coefficient: f64,
}

impl QuadraticPotential {
    pub fn new(dim: usize, coefficient: f64) -> Self {
        Self { dim, coefficient }
    }

    /// The potential whose Coulomb equilibrium measure is uniform on `B(0, R)`.
    pub fn for_equilibrium(eq: &EquilibriumSpec) -> Self {
        Self::new(eq.dim(), eq.quadratic_coefficient())
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

impl Confinement for QuadraticPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.coefficient * squared_norm(z)
    }

    fn value_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        for (g, zi) in grad.iter_mut().zip(z) {
            *g = 2.0 * self.coefficient * zi;
        }
        self.value(z)
    }
}

/// Newtonian potential `int |z - x|^{-1} dmu(x)` of the uniform unit-mass ball
/// `B(0, R)` in three dimensions.
pub fn analytic_uniform_ball_potential(radius: f64, z: &[f64], d: usize) -> Result<f64> {
    if d != 3 || z.len() != 3 {
        return Err(Error::AnalyticFormUnavailable(if d != 3 { d } else { z.len() }));
    }
    let r2 = squared_norm(z);
    if r2 <= radius * radius {
        Ok((3.0 * radius * radius - r2) / (2.0 * radius.powi(3)))
    } else {
        Ok(1.0 / r2.sqrt())
    }
}

/// Potential of the uniform unit-mass ball `B(0, R)` in three dimensions under
/// the softened kernel `(|z - x|^2 + soft2)^{-1/2}`, by radial quadrature of
/// closed-form shell averages.
pub fn regularized_uniform_ball_potential(radius: f64, soft2: f64, z: &[f64]) -> Result<f64> {
    if z.len() != 3 {
        return Err(Error::AnalyticFormUnavailable(z.len()));
    }
    let rho = squared_norm(z).sqrt();
    let shell = |r: f64| -> f64 {
        if r == 0.0 || rho == 0.0 {
            1.0 / (r * r + rho * rho + soft2).sqrt()
        } else {
            (((r + rho).powi(2) + soft2).sqrt() - ((r - rho).powi(2) + soft2).sqrt()) / (2.0 * r * rho)
        }
    };
    let density = 3.0 / radius.powi(3);
    Ok(composite_simpson(|r| density * r * r * shell(r), 0.0, radius, 4000))
}

fn composite_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels * 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `max_z |approx(z) - reference(z)|` over the grid points.
pub fn potential_sup_error<A, R>(approx: A, reference: R, grid: &PointCloud) -> Result<f64>
where
    A: Fn(&[f64]) -> f64 + Sync,
    R: Fn(&[f64]) -> f64 + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty evaluation grid"));
    }
    let points: Vec<&[f64]> = grid.iter().collect();
    let err = points
        .par_iter()
        .map(|z| (approx(z) - reference(z)).abs())
        .reduce(|| 0.0, f64::max);
    if err.is_nan() {
        return Err(Error::Numerical("non-finite potential on grid".into()));
    }
    Ok(err)
}

/// Cubic lattice over `[-extent R, extent R]^d`, restricted to the ball of
/// radius `extent R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub extent: f64,
    pub pts_per_axis: usize,
}

impl GridSpec {
    pub fn points(&self, dim: usize, radius: f64) -> PointCloud {
        let half = self.extent * radius;
        let m = self.pts_per_axis;
        let axis: Vec<f64> = if m == 1 {
            vec![0.0]
        } else {
            (0..m).map(|i| -half + 2.0 * half * i as f64 / (m - 1) as f64).collect()
        };
        let mut cloud = PointCloud::empty(dim);
        let mut idx = vec![0usize; dim];
        let mut p = vec![0.0; dim];
        loop {
            for (c, i) in p.iter_mut().zip(&idx) {
                *c = axis[*i];
            }
            if squared_norm(&p) <= half * half * (1.0 + 1e-12) {
                cloud.push(&p).expect("finite lattice point");
            }
            let mut k = 0;
            loop {
                if k == dim {
                    return cloud;
                }
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let call = CallExpr::parse(s)?;
        if call.name != "grid" {
            return Err(Error::parse(format!("expected grid(...), found `{}`", call.name)));
        }
        call.expect_keys(&["extent", "pts_per_axis"])?;
        let g = GridSpec {
            extent: call.f64_or("extent", 1.2)?,
            pts_per_axis: call.usize_or("pts_per_axis", 20)?,
        };
        if !(g.extent > 0.0) || g.pts_per_axis == 0 || g.pts_per_axis > 1000 {
            return Err(Error::parse("grid: extent must be positive and pts_per_axis in 1..=1000"));
        }
        Ok(g)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grid(extent={},pts_per_axis={})", self.extent, self.pts_per_axis)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    crate::measures::squared_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::uniform_empirical;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn riesz() -> KernelSpec {
        KernelSpec::RieszRegularized { s: 1.0, eps: 0.1 }
    }

    fn random_background(seed: u64, m: usize) -> WeightedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect()).collect();
        uniform_empirical(&pts).unwrap()
    }

    #[test]
    fn phi_values() {
        assert_eq!(confinement_phi(&[1.0, 0.0, 0.0], 1.0), 0.0);
        assert_eq!(confinement_phi(&[0.0, 0.0, 0.0], 1.0), 0.0);
        assert_eq!(confinement_phi(&[2.0, 0.0, 0.0], 1.0), 3.0);
    }

    #[test]
    fn single_atom_gaussian_at_origin() {
        let bg = uniform_empirical(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let p = QuenchedPotential::new(bg, KernelSpec::Gaussian { bandwidth: 1.0 }, 1.0).unwrap();
        assert_eq!(p.quenched_v(&[0.0, 0.0, 0.0]), -1.0);
        let far = [10.0, 0.0, 0.0];
        assert!((p.quenched_v(&far) - confinement_phi(&far, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn singular_kernel_is_rejected() {
        let bg = uniform_empirical(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            QuenchedPotential::new(bg, KernelSpec::Coulomb { d: 3 }, 1.0),
            Err(Error::SingularKernel(_))
        ));
    }

    #[test]
    fn continuous_across_the_sphere() {
        let p = QuenchedPotential::new(random_background(1, 40), riesz(), 1.0).unwrap();
        let inside = [1.0 - 1e-6, 0.0, 0.0];
        let outside = [1.0 + 1e-6, 0.0, 0.0];
        assert!((p.quenched_v(&inside) - p.quenched_v(&outside)).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = QuenchedPotential::new(random_background(2, 50), riesz(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let g = p.quenched_v_grad(&z);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for k in 0..3 {
                let h = 1e-5;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                let fd = (p.quenched_v(&zp) - p.quenched_v(&zm)) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-5 * scale.max(1.0), "{} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn symmetric_background_gives_zero_gradient_at_origin() {
        let pts = vec![
            vec![0.5, 0.0, 0.0],
            vec![-0.5, 0.0, 0.0],
            vec![0.0, 0.3, 0.0],
            vec![0.0, -0.3, 0.0],
            vec![0.0, 0.0, 0.7],
            vec![0.0, 0.0, -0.7],
        ];
        let p = QuenchedPotential::new(uniform_empirical(&pts).unwrap(), riesz(), 1.0).unwrap();
        let g = p.quenched_v_grad(&[0.0, 0.0, 0.0]);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn penalty_gradient_outside_ball() {
        let p = QuenchedPotential::new(random_background(3, 10), riesz(), 1.0).unwrap();
        let z = [1.5, -0.4, 0.2];
        let g = p.quenched_v_grad(&z);
        let mut kernel_part = vec![0.0; 3];
        for (x, w) in p.background().iter() {
            let (_, dk) = riesz().radial(sq_dist(&z, x));
            for k in 0..3 {
                kernel_part[k] += -2.0 * w * dk * (z[k] - x[k]);
            }
        }
        for k in 0..3 {
            assert!((g[k] - kernel_part[k] - 2.0 * z[k]).abs() < 1e-12);
        }
        // subgradient convention on the sphere
        let s = [0.6, 0.8, 0.0];
        let gs = p.quenched_v_grad(&s);
        let mut only_kernel = vec![0.0; 3];
        for (x, w) in p.background().iter() {
            let (_, dk) = riesz().radial(sq_dist(&s, x));
            for k in 0..3 {
                only_kernel[k] += -2.0 * w * dk * (s[k] - x[k]);
            }
        }
        assert!(squared_norm(&s) <= 1.0);
        for k in 0..3 {
            assert!((gs[k] - only_kernel[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bounded_below_by_minus_diagonal() {
        let p = QuenchedPotential::new(random_background(4, 30), riesz(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert!(p.quenched_v(&z) >= -riesz().diag_sup());
        }
    }

    #[test]
    fn continuity_under_small_perturbations() {
        let p = QuenchedPotential::new(random_background(5, 30), riesz(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = squared_norm(&dir).sqrt();
            let zp: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + 1e-6 * b / norm).collect();
            let g = squared_norm(&p.quenched_v_grad(&z)).sqrt();
            assert!((p.quenched_v(&zp) - p.quenched_v(&z)).abs() < 1e-3 * (1.0 + g));
        }
    }

    #[test]
    fn analytic_ball_potential_values() {
        assert!((analytic_uniform_ball_potential(1.0, &[0.0, 0.0, 0.0], 3).unwrap() - 1.5).abs() < 1e-15);
        assert!((analytic_uniform_ball_potential(1.0, &[2.0, 0.0, 0.0], 3).unwrap() - 0.5).abs() < 1e-15);
        let r = 1.7;
        let inside = analytic_uniform_ball_potential(r, &[r, 0.0, 0.0], 3).unwrap();
        assert!((inside - 1.0 / r).abs() < 1e-15);
        assert_eq!(
            analytic_uniform_ball_potential(1.0, &[0.0, 0.0], 2),
            Err(Error::AnalyticFormUnavailable(2))
        );
    }

    #[test]
    fn regularized_ball_potential_approaches_newtonian() {
        for z in [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 2.0, 0.0]] {
            let exact = analytic_uniform_ball_potential(1.0, &z, 3).unwrap();
            let soft = regularized_uniform_ball_potential(1.0, 1e-10, &z).unwrap();
            assert!((soft - exact).abs() < 1e-4, "{soft} {exact}");
            let coarse = regularized_uniform_ball_potential(1.0, 0.5, &z).unwrap();
            assert!(coarse < exact);
        }
    }

    #[test]
    fn sup_error_of_identical_fields_is_zero() {
        let grid = GridSpec { extent: 1.2, pts_per_axis: 7 }.points(3, 1.0);
        let p = QuenchedPotential::new(random_background(6, 10), riesz(), 1.0).unwrap();
        assert_eq!(potential_sup_error(|z| p.embedding(z), |z| p.embedding(z), &grid).unwrap(), 0.0);
        let single = uniform_empirical(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let q = QuenchedPotential::new(single, riesz(), 1.0).unwrap();
        let own = |z: &[f64]| riesz().value(sq_dist(z, &[0.1, 0.2, 0.3]));
        assert_eq!(potential_sup_error(|z| q.embedding(z), own, &grid).unwrap(), 0.0);
        assert!(potential_sup_error(|_| 0.0, |_| 0.0, &PointCloud::empty(3)).is_err());
    }

    #[test]
    fn grid_points_lie_in_ball() {
        let g: GridSpec = "grid(extent=1.2,pts_per_axis=20)".parse().unwrap();
        let pts = g.points(3, 1.0);
        assert!(pts.len() > 3000 && pts.len() < 8000);
        assert!(pts.iter().all(|p| squared_norm(p) <= 1.44 + 1e-9));
        assert_eq!(g.to_string(), "grid(extent=1.2,pts_per_axis=20)");
        assert!("grid(extent=0,pts_per_axis=3)".parse::<GridSpec>().is_err());
        assert!("lattice(extent=1)".parse::<GridSpec>().is_err());
    }
}
