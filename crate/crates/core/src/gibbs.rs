//! Discrete energy of the interacting particle system.
//!
//! `H(y_1..y_n) = 1/(2n^2) sum_{i != j} K(y_i, y_j) + 1/n sum_i V(y_i)`
//!
//! Sums run over particles sorted lexicographically by coordinates, so the
//! energy is bit-for-bit invariant under relabeling and the gradient is
//! exactly equivariant.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::measures::PointCloud;
use crate::potentials::{Confinement, QuenchedPotential};
use crate::spec_string::CallExpr;

/// Positions `(y_1, ..., y_n)` of the particles.
pub type ParticleConfiguration = PointCloud;

/// Inverse temperature as a function of the particle count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    /// `beta_n = u n^exponent`, with `exponent > 1` so that `beta_n / n -> inf`.
    PowerLaw { u: f64, exponent: f64 },
}

impl BetaSchedule {
    pub fn power(u: f64, exponent: f64) -> Result<Self> {
        let s = BetaSchedule::PowerLaw { u, exponent };
        s.validate()?;
        Ok(s)
    }

    /// `beta_n = n^2`.
    pub fn n_squared() -> Self {
        BetaSchedule::PowerLaw { u: 1.0, exponent: 2.0 }
    }

    /// `beta_n = n^3`.
    pub fn n_cubed() -> Self {
        BetaSchedule::PowerLaw { u: 1.0, exponent: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let BetaSchedule::PowerLaw { u, exponent } = *self;
        if !(u > 0.0 && u.is_finite()) {
            return Err(Error::invalid("beta schedule: u must be positive"));
        }
        if !(exponent > 1.0 && exponent.is_finite()) {
            return Err(Error::invalid("beta schedule: exponent must exceed 1 (low-temperature regime)"));
        }
        Ok(())
    }

    pub fn beta(&self, n: usize) -> f64 {
        let BetaSchedule::PowerLaw { u, exponent } = *self;
        u * (n as f64).powf(exponent)
    }

    /// Growth margin `delta` in `beta_n >= u n^{1 + delta}`.
    pub fn delta(&self) -> f64 {
        let BetaSchedule::PowerLaw { exponent, .. } = *self;
        exponent - 1.0
    }
}

impl FromStr for BetaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let call = CallExpr::parse(s)?;
        if call.name != "power" {
            return Err(Error::parse(format!("unknown beta schedule `{}`", call.name)));
        }
        call.expect_keys(&["u", "exp"])?;
        let sched = BetaSchedule::PowerLaw {
            u: call.f64_or("u", 1.0)?,
            exponent: call.f64("exp")?,
        };
        sched.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(sched)
    }
}

impl fmt::Display for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let BetaSchedule::PowerLaw { u, exponent } = self;
        write!(f, "power(u={u},exp={exponent})")
    }
}

/// The Gibbs system: particle count, inverse temperature, pair kernel and
/// external potential.
///
/// `n = 1` is accepted as a degenerate system with no pair term.
#[derive(Debug, Clone)]
pub struct GibbsConfig<K = KernelSpec, V = QuenchedPotential<KernelSpec>> {
    n: usize,
    schedule: BetaSchedule,
    beta: f64,
    kernel: K,
    potential: V,
}

impl<K: Kernel, V: Confinement> GibbsConfig<K, V> {
    pub fn new(n: usize, schedule: BetaSchedule, kernel: K, potential: V) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        schedule.validate()?;
        if let Some(d) = kernel.required_dim() {
            if d != potential.dim() {
                return Err(Error::DimensionMismatch {
                    expected: potential.dim(),
                    found: d,
                });
            }
        }
        for count in [kernel.particle_count(), potential.particle_count_hint()].into_iter().flatten() {
            if count != n {
                return Err(Error::invalid(format!(
                    "regularized kernel built for n = {count} used with n = {n}"
                )));
            }
        }
        Ok(Self {
            n,
            schedule,
            beta: schedule.beta(n),
            kernel,
            potential,
        })
    }
}

impl<K: Kernel, V: Confinement> GibbsConfig<K, V> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn schedule(&self) -> BetaSchedule {
        self.schedule
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn potential(&self) -> &V {
        &self.potential
    }

    fn check(&self, x: &ParticleConfiguration) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        if x.len() != self.n {
            return Err(Error::invalid(format!("expected {} particles, got {}", self.n, x.len())));
        }
        Ok(())
    }

    /// `(1/n^2) sum_{i<j} K(y_i, y_j)`; `+inf` on a Coulomb collision.
    pub fn pair_term(&self, x: &ParticleConfiguration) -> Result<f64> {
        self.check(x)?;
        let sorted = SortedView::new(x);
        let d = x.dim();
        let mut acc = 0.0;
        for i in 0..self.n {
            let yi = sorted.point(i, d);
            for j in (i + 1)..self.n {
                acc += self.kernel.value(sq_dist(yi, sorted.point(j, d)));
            }
        }
        Ok(acc / (self.n * self.n) as f64)
    }

    /// `(1/n) sum_i V(y_i)`.
    pub fn confinement_term(&self, x: &ParticleConfiguration) -> Result<f64> {
        self.check(x)?;
        let sorted = SortedView::new(x);
        let d = x.dim();
        let acc: f64 = (0..self.n).map(|i| self.potential.value(sorted.point(i, d))).sum();
        Ok(acc / self.n as f64)
    }

    /// The discrete energy `H`.
    pub fn energy(&self, x: &ParticleConfiguration) -> Result<f64> {
        Ok(self.pair_term(x)? + self.confinement_term(x)?)
    }

    /// Energy and its gradient (flat, row-major) in one pass over the pairs.
    ///
    /// Fails with [`Error::SingularGradient`] when two particles coincide
    /// under a singular kernel.
    pub fn energy_and_grad(&self, x: &ParticleConfiguration) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let n = self.n;
        let d = x.dim();
        let sorted = SortedView::new(x);
        let mut sgrad = vec![0.0; n * d];
        let mut pair = 0.0;
        for i in 0..n {
            let yi = sorted.point(i, d);
            for j in (i + 1)..n {
                let yj = sorted.point(j, d);
                let (k, dk) = self.kernel.radial(sq_dist(yi, yj));
                if !k.is_finite() {
                    return Err(Error::SingularGradient);
                }
                pair += k;
                let c = 2.0 * dk;
                let (lo, hi) = sgrad.split_at_mut(j * d);
                let gi = &mut lo[i * d..(i + 1) * d];
                let gj = &mut hi[..d];
                for a in 0..d {
                    let t = c * (yi[a] - yj[a]);
                    gi[a] += t;
                    gj[a] -= t;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let inv_n2 = inv_n * inv_n;
        let mut conf = 0.0;
        let mut vgrad = vec![0.0; d];
        for i in 0..n {
            conf += self.potential.value_and_grad(sorted.point(i, d), &mut vgrad);
            for (g, v) in sgrad[i * d..(i + 1) * d].iter_mut().zip(&vgrad) {
                *g = *g * inv_n2 + v * inv_n;
            }
        }
        let energy = pair * inv_n2 + conf * inv_n;
        let mut grad = vec![0.0; n * d];
        for (rank, &orig) in sorted.order.iter().enumerate() {
            grad[orig * d..(orig + 1) * d].copy_from_slice(&sgrad[rank * d..(rank + 1) * d]);
        }
        Ok((energy, grad))
    }
}

/// `H_n^Q(y)`.
pub fn hnq_energy<K: Kernel, V: Confinement>(cfg: &GibbsConfig<K, V>, x: &ParticleConfiguration) -> Result<f64> {
    cfg.energy(x)
}

/// Gradient of `H_n^Q` with respect to each particle.
pub fn hnq_grad<K: Kernel, V: Confinement>(
    cfg: &GibbsConfig<K, V>,
    x: &ParticleConfiguration,
) -> Result<ParticleConfiguration> {
    let (_, g) = cfg.energy_and_grad(x)?;
    PointCloud::from_flat(x.dim(), g).map_err(|_| Error::Numerical("non-finite gradient".into()))
}

/// Particles reordered lexicographically by coordinates.
struct SortedView {
    order: Vec<usize>,
    coords: Vec<f64>,
}

impl SortedView {
    fn new(x: &PointCloud) -> Self {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| lexicographic(x.point(a), x.point(b)));
        let mut coords = Vec::with_capacity(x.as_flat().len());
        for &i in &order {
            coords.extend_from_slice(x.point(i));
        }
        Self { order, coords }
    }

    #[inline]
    fn point(&self, i: usize, d: usize) -> &[f64] {
        &self.coords[i * d..(i + 1) * d]
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    crate::measures::squared_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::uniform_empirical;
    use crate::potentials::QuadraticPotential;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn riesz() -> KernelSpec {
        KernelSpec::RieszRegularized { s: 1.0, eps: 0.1 }
    }

    fn random_cloud(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> PointCloud {
        let flat = (0..3 * m).map(|_| rng.gen_range(-scale..scale)).collect();
        PointCloud::from_flat(3, flat).unwrap()
    }

    fn system(n: usize, seed: u64) -> GibbsConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = uniform_empirical(&random_cloud(&mut rng, 50, 0.8).to_points()).unwrap();
        let pot = QuenchedPotential::new(bg, riesz(), 1.0).unwrap();
        GibbsConfig::new(n, BetaSchedule::n_squared(), riesz(), pot).unwrap()
    }

    #[test]
    fn hand_computed_two_particle_energy() {
        let bg = uniform_empirical(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let k = KernelSpec::Gaussian { bandwidth: 1.0 };
        let pot = QuenchedPotential::new(bg, k, 1.0).unwrap();
        let cfg = GibbsConfig::new(2, BetaSchedule::n_squared(), k, pot).unwrap();
        let x = PointCloud::from_flat(3, vec![0.0; 6]).unwrap();
        // Two ordered pairs: 1/8 * (1 + 1) + 1/2 * (-1 - 1).
        assert!((hnq_energy(&cfg, &x).unwrap() - (-0.75)).abs() < 1e-15);
    }

    #[test]
    fn energy_is_permutation_invariant_bitwise() {
        let cfg = system(30, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cloud(&mut rng, 30, 1.2);
        let e = hnq_energy(&cfg, &x).unwrap();
        let (_, g) = cfg.energy_and_grad(&x).unwrap();
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..30).collect();
            perm.shuffle(&mut rng);
            let y = PointCloud::from_points(&perm.iter().map(|&i| x.point(i).to_vec()).collect::<Vec<_>>()).unwrap();
            assert_eq!(hnq_energy(&cfg, &y).unwrap().to_bits(), e.to_bits());
            let (_, gy) = cfg.energy_and_grad(&y).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                assert_eq!(&gy[k * 3..k * 3 + 3], &g[i * 3..i * 3 + 3]);
            }
        }
    }

    #[test]
    fn confinement_dominates_far_away() {
        let cfg = system(2, 3);
        let x = PointCloud::from_flat(3, vec![1e6, 0.0, 0.0, -1e6, 0.0, 0.0]).unwrap();
        assert!(hnq_energy(&cfg, &x).unwrap() > 1e10);
    }

    #[test]
    fn energy_decomposes() {
        let cfg = system(25, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_cloud(&mut rng, 25, 1.5);
        let total = hnq_energy(&cfg, &x).unwrap();
        let parts = cfg.pair_term(&x).unwrap() + cfg.confinement_term(&x).unwrap();
        assert!((total - parts).abs() <= 1e-12 * total.abs());
        let (e2, _) = cfg.energy_and_grad(&x).unwrap();
        assert!((total - e2).abs() <= 1e-12 * total.abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = system(20, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_cloud(&mut rng, 20, 1.1);
        let g = hnq_grad(&cfg, &x).unwrap();
        let flat = x.as_flat().to_vec();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            let mut m = flat.clone();
            p[k] += h;
            m[k] -= h;
            let ep = hnq_energy(&cfg, &PointCloud::from_flat(3, p).unwrap()).unwrap();
            let em = hnq_energy(&cfg, &PointCloud::from_flat(3, m).unwrap()).unwrap();
            let fd = (ep - em) / (2.0 * h);
            let exact = g.as_flat()[k];
            worst = worst.max((exact - fd).abs() / exact.abs().max(1e-3));
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn mirror_symmetric_pair() {
        let pts = vec![
            vec![0.5, 0.0, 0.0],
            vec![-0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.0],
            vec![0.0, -0.5, 0.0],
            vec![0.0, 0.0, 0.5],
            vec![0.0, 0.0, -0.5],
        ];
        let pot = QuenchedPotential::new(uniform_empirical(&pts).unwrap(), riesz(), 1.0).unwrap();
        let cfg = GibbsConfig::new(2, BetaSchedule::n_squared(), riesz(), pot).unwrap();
        let x = PointCloud::from_flat(3, vec![0.3, 0.2, -0.1, -0.3, -0.2, 0.1]).unwrap();
        let g = hnq_grad(&cfg, &x).unwrap();
        for k in 0..3 {
            assert!((g.point(0)[k] + g.point(1)[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_particle_gradient_is_potential_gradient() {
        let cfg = system(1, 8);
        let x = PointCloud::from_flat(3, vec![0.2, -0.4, 1.3]).unwrap();
        let g = hnq_grad(&cfg, &x).unwrap();
        let expected = cfg.potential().quenched_v_grad(x.point(0));
        assert_eq!(g.point(0), expected.as_slice());
        assert_eq!(cfg.pair_term(&x).unwrap(), 0.0);
    }

    #[test]
    fn translation_leaves_pair_sum_invariant() {
        let cfg = system(15, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_cloud(&mut rng, 15, 1.0);
        let t = [1e-3, -2e-3, 5e-4];
        let shifted: Vec<f64> = x.as_flat().chunks(3).flat_map(|p| (0..3).map(move |k| p[k] + t[k])).collect();
        let y = PointCloud::from_flat(3, shifted).unwrap();
        assert!((cfg.pair_term(&x).unwrap() - cfg.pair_term(&y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn coulomb_collision() {
        let eq = crate::targets::EquilibriumSpec::quadratic_coulomb(3, 1.0).unwrap();
        let cfg = GibbsConfig::new(
            2,
            BetaSchedule::n_squared(),
            KernelSpec::Coulomb { d: 3 },
            QuadraticPotential::for_equilibrium(&eq),
        )
        .unwrap();
        let x = PointCloud::from_flat(3, vec![0.1, 0.0, 0.0, 0.1, 0.0, 0.0]).unwrap();
        assert_eq!(hnq_energy(&cfg, &x).unwrap(), f64::INFINITY);
        assert_eq!(hnq_grad(&cfg, &x), Err(Error::SingularGradient));
    }

    #[test]
    fn config_validation() {
        let bg = uniform_empirical(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let kz = KernelSpec::CoulombRegularized { d: 3, zeta: 0.05, n: 100 };
        let pot = QuenchedPotential::new(bg, kz, 1.0).unwrap();
        assert!(GibbsConfig::new(50, BetaSchedule::n_squared(), KernelSpec::Coulomb { d: 3 }, pot.clone()).is_err());
        assert!(GibbsConfig::new(100, BetaSchedule::n_squared(), KernelSpec::Coulomb { d: 3 }, pot.clone()).is_ok());
        assert!(GibbsConfig::new(100, BetaSchedule::n_squared(), KernelSpec::Coulomb { d: 4 }, pot).is_err());
        assert!(BetaSchedule::power(1.0, 1.0).is_err());
        assert!(BetaSchedule::power(0.0, 2.0).is_err());
    }

    #[test]
    fn beta_schedule_parsing() {
        let b: BetaSchedule = "power(u=1,exp=2)".parse().unwrap();
        assert_eq!(b, BetaSchedule::n_squared());
        assert_eq!(b.beta(10), 100.0);
        assert_eq!(b.to_string(), "power(u=1,exp=2)");
        assert!("power(u=1,exp=0.5)".parse::<BetaSchedule>().is_err());
        assert!("linear(u=1)".parse::<BetaSchedule>().is_err());
    }
}
