//! Compactly supported target densities and the quadratic Coulomb equilibrium.
//!
//! Densities are never normalized: MH ratios and importance weights only need
//! them up to a constant.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::measures::{squared_norm, Density, PointCloud};
use crate::spec_string::CallExpr;

/// Default truncation radius in units of the Gaussian scale.
pub const TRUNCATION_SIGMAS: f64 = 5.0;

/// Binary logistic-regression data: features, `0/1` labels, unlabeled test points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationData {
    pub features: PointCloud,
    pub labels: Vec<u8>,
    pub test_points: PointCloud,
}

/// Unnormalized target density with compact support.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetDensity {
    /// `exp(-|x|^2 / (2 sigma^2))` restricted to `|x| <= cutoff_radius`.
    TruncatedGaussian { d: usize, sigma: f64, cutoff_radius: f64 },
    /// Constant density on the closed ball of the given radius.
    UniformBall { d: usize, radius: f64 },
    /// Posterior of a logistic regression with intercept and a truncated
    /// Gaussian prior; the parameter lives in dimension `features.dim() + 1`.
    LogisticPosterior {
        features: PointCloud,
        labels: Vec<u8>,
        prior_sigma: f64,
        prior_cutoff: f64,
    },
}

impl TargetDensity {
    pub fn truncated_gaussian(d: usize, sigma: f64) -> Result<Self> {
        let t = TargetDensity::TruncatedGaussian {
            d,
            sigma,
            cutoff_radius: TRUNCATION_SIGMAS * sigma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn uniform_ball(d: usize, radius: f64) -> Result<Self> {
        let t = TargetDensity::UniformBall { d, radius };
        t.validate()?;
        Ok(t)
    }

    pub fn logistic_posterior(data: &ClassificationData, prior_sigma: f64) -> Result<Self> {
        let t = TargetDensity::LogisticPosterior {
            features: data.features.clone(),
            labels: data.labels.clone(),
            prior_sigma,
            prior_cutoff: TRUNCATION_SIGMAS * prior_sigma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive")))
            }
        };
        match self {
            TargetDensity::TruncatedGaussian { d, sigma, cutoff_radius } => {
                if *d == 0 {
                    return Err(Error::invalid("dimension must be at least 1"));
                }
                positive(*sigma, "sigma")?;
                positive(*cutoff_radius, "cutoff radius")
            }
            TargetDensity::UniformBall { d, radius } => {
                if *d == 0 {
                    return Err(Error::invalid("dimension must be at least 1"));
                }
                positive(*radius, "radius")
            }
            TargetDensity::LogisticPosterior {
                features,
                labels,
                prior_sigma,
                prior_cutoff,
            } => {
                if features.len() != labels.len() || features.is_empty() {
                    return Err(Error::invalid("features and labels must be nonempty and of equal length"));
                }
                if labels.iter().any(|t| *t > 1) {
                    return Err(Error::invalid("labels must be 0 or 1"));
                }
                positive(*prior_sigma, "prior sigma")?;
                positive(*prior_cutoff, "prior cutoff")
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetDensity::TruncatedGaussian { d, .. } | TargetDensity::UniformBall { d, .. } => *d,
            TargetDensity::LogisticPosterior { features, .. } => features.dim() + 1,
        }
    }

    /// Radius of a centered closed ball containing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            TargetDensity::TruncatedGaussian { cutoff_radius, .. } => *cutoff_radius,
            TargetDensity::UniformBall { radius, .. } => *radius,
            TargetDensity::LogisticPosterior { prior_cutoff, .. } => *prior_cutoff,
        }
    }

    /// Log of the unnormalized density; `-inf` outside the support.
    pub fn log_unnorm_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let r2 = squared_norm(x);
        let radius = self.support_radius();
        if r2 > radius * radius {
            return f64::NEG_INFINITY;
        }
        match self {
            TargetDensity::TruncatedGaussian { sigma, .. } => -0.5 * r2 / (sigma * sigma),
            TargetDensity::UniformBall { .. } => 0.0,
            TargetDensity::LogisticPosterior {
                features,
                labels,
                prior_sigma,
                ..
            } => {
                let mut ll = -0.5 * r2 / (prior_sigma * prior_sigma);
                for (z, t) in features.iter().zip(labels) {
                    let eta = logit(x, z);
                    ll += f64::from(*t) * eta - softplus(eta);
                }
                ll
            }
        }
    }

    /// Gradient of [`Self::log_unnorm_density`] inside the support.
    pub fn grad_log_unnorm_density(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TargetDensity::TruncatedGaussian { sigma, .. } => x.iter().map(|v| -v / (sigma * sigma)).collect(),
            TargetDensity::UniformBall { .. } => vec![0.0; x.len()],
            TargetDensity::LogisticPosterior {
                features,
                labels,
                prior_sigma,
                ..
            } => {
                let mut g: Vec<f64> = x.iter().map(|v| -v / (prior_sigma * prior_sigma)).collect();
                let k = x.len() - 1;
                for (z, t) in features.iter().zip(labels) {
                    let r = f64::from(*t) - sigmoid(logit(x, z));
                    for i in 0..k {
                        g[i] += r * z[i];
                    }
                    g[k] += r;
                }
                g
            }
        }
    }

    /// `exp(log_unnorm_density)`, `0` outside the support.
    pub fn density_ratio_ready(&self, x: &[f64]) -> f64 {
        self.log_unnorm_density(x).exp()
    }
}

impl Density for TargetDensity {
    fn dim(&self) -> usize {
        TargetDensity::dim(self)
    }
    fn density(&self, x: &[f64]) -> f64 {
        self.density_ratio_ready(x)
    }
}

/// Equilibrium measure of a confinement with known closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquilibriumSpec {
    /// `V(x) = (d-2) / (2 R^d) |x|^2` with the Coulomb kernel; the equilibrium
    /// measure is uniform on `B(0, R)`.
    QuadraticCoulomb { d: usize, radius: f64 },
}

impl EquilibriumSpec {
    pub fn quadratic_coulomb(d: usize, radius: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::invalid("quadratic Coulomb equilibrium needs d >= 3"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius must be positive"));
        }
        Ok(EquilibriumSpec::QuadraticCoulomb { d, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            EquilibriumSpec::QuadraticCoulomb { d, .. } => *d,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            EquilibriumSpec::QuadraticCoulomb { radius, .. } => *radius,
        }
    }

    /// Coefficient `c` of `V(x) = c |x|^2`.
    pub fn quadratic_coefficient(&self) -> f64 {
        match *self {
            EquilibriumSpec::QuadraticCoulomb { d, radius } => (d as f64 - 2.0) / (2.0 * radius.powi(d as i32)),
        }
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        self.quadratic_coefficient() * squared_norm(x)
    }

    /// Constant equilibrium density `1 / vol(B(0, R))` on the ball, 0 outside.
    pub fn equilibrium_density(&self, x: &[f64]) -> f64 {
        let r = self.radius();
        if squared_norm(x) <= r * r {
            1.0 / ball_volume(self.dim(), r)
        } else {
            0.0
        }
    }
}

impl Density for EquilibriumSpec {
    fn dim(&self) -> usize {
        EquilibriumSpec::dim(self)
    }
    fn density(&self, x: &[f64]) -> f64 {
        self.equilibrium_density(x)
    }
}

/// Volume of the `d`-dimensional ball of radius `r`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    let d = d as f64;
    std::f64::consts::PI.powf(0.5 * d) * r.powf(d) / gamma(0.5 * d + 1.0)
}

fn logit(y: &[f64], z: &[f64]) -> f64 {
    let k = z.len();
    z.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + y[k]
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `p(t = 1 | z, y) = sigmoid(y . [z, 1])`.
pub fn logistic_predictive(y: &[f64], z: &[f64]) -> f64 {
    assert_eq!(y.len(), z.len() + 1, "parameter must have one more coordinate than the features");
    sigmoid(logit(y, z))
}

/// Balanced two-component isotropic Gaussian mixture in the plane.
///
/// Component means sit at `(+-separation/2, 0)` with unit standard deviation;
/// labels alternate `0, 1, 0, ...` so classes are balanced. Test points are
/// drawn from the same mixture.
pub fn synthesize_classification_data(n_train: usize, n_test: usize, separation: f64, seed: u64) -> ClassificationData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |label: u8, rng: &mut ChaCha8Rng| -> [f64; 2] {
        let centre = if label == 1 { 0.5 * separation } else { -0.5 * separation };
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        [centre + a, b]
    };
    let mut features = Vec::with_capacity(2 * n_train);
    let mut labels = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let t = (i % 2) as u8;
        features.extend(draw(t, &mut rng));
        labels.push(t);
    }
    let mut test = Vec::with_capacity(2 * n_test);
    for _ in 0..n_test {
        let t = u8::from(rng.gen_bool(0.5));
        test.extend(draw(t, &mut rng));
    }
    ClassificationData {
        features: PointCloud::from_flat(2, features).expect("finite draws"),
        labels,
        test_points: PointCloud::from_flat(2, test).expect("finite draws"),
    }
}

/// Parses a training CSV with header `z1,...,zk,t`.
pub fn parse_training_csv(text: &str) -> Result<(PointCloud, Vec<u8>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse("empty training file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols.last() != Some(&"t") {
        return Err(Error::parse("training header must be `z1,...,zk,t`"));
    }
    let k = cols.len() - 1;
    for (i, c) in cols[..k].iter().enumerate() {
        if *c != format!("z{}", i + 1) {
            return Err(Error::parse(format!("unexpected column `{c}`")));
        }
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != k + 1 {
            return Err(Error::parse(format!("row {}: expected {} fields", row + 1, k + 1)));
        }
        for f in &fields[..k] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(format!("row {}: bad number `{f}`", row + 1)))?;
            coords.push(v);
        }
        labels.push(match fields[k] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(format!("row {}: label `{other}` is not 0/1", row + 1))),
        });
    }
    if labels.is_empty() {
        return Err(Error::parse("training file has no rows"));
    }
    Ok((PointCloud::from_flat(k, coords)?, labels))
}

/// Target as written in a config file, before any data file is read.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    TruncatedGaussian { d: usize, sigma: f64, cutoff: Option<f64> },
    UniformBall { d: usize, radius: f64 },
    Logistic {
        train: Option<String>,
        test: Option<String>,
        prior_sigma: f64,
        n_train: usize,
        n_test: usize,
        separation: f64,
    },
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::TruncatedGaussian { d, .. } | TargetSpec::UniformBall { d, .. } => *d,
            TargetSpec::Logistic { .. } => 3,
        }
    }

    /// Classification data for the logistic variant: read from the configured
    /// files or synthesized from `seed`.
    pub fn classification_data(&self, base_dir: &Path, seed: u64) -> Result<Option<ClassificationData>> {
        let TargetSpec::Logistic {
            train,
            test,
            n_train,
            n_test,
            separation,
            ..
        } = self
        else {
            return Ok(None);
        };
        let mut data = synthesize_classification_data(*n_train, *n_test, *separation, seed);
        if let Some(path) = train {
            let (features, labels) = parse_training_csv(&std::fs::read_to_string(base_dir.join(path))?)?;
            data.features = features;
            data.labels = labels;
        }
        if let Some(path) = test {
            let text = std::fs::read_to_string(base_dir.join(path))?;
            let cloud = parse_feature_csv(&text)?;
            data.test_points = cloud;
        }
        if data.features.dim() != 2 || data.test_points.dim() != 2 {
            return Err(Error::invalid("logistic target expects two features"));
        }
        Ok(Some(data))
    }

    pub fn resolve(&self, data: Option<&ClassificationData>) -> Result<TargetDensity> {
        match self {
            TargetSpec::TruncatedGaussian { d, sigma, cutoff } => {
                let t = TargetDensity::TruncatedGaussian {
                    d: *d,
                    sigma: *sigma,
                    cutoff_radius: cutoff.unwrap_or(TRUNCATION_SIGMAS * sigma),
                };
                t.validate()?;
                Ok(t)
            }
            TargetSpec::UniformBall { d, radius } => TargetDensity::uniform_ball(*d, *radius),
            TargetSpec::Logistic { prior_sigma, .. } => {
                let data = data.ok_or_else(|| Error::invalid("logistic target needs data"))?;
                TargetDensity::logistic_posterior(data, *prior_sigma)
            }
        }
    }
}

fn parse_feature_csv(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse("empty test file"))?;
    let k = header.split(',').count();
    let mut coords = Vec::new();
    for line in lines {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::parse(format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != k {
            return Err(Error::parse("ragged test file"));
        }
        coords.extend(vals);
    }
    PointCloud::from_flat(k, coords)
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let call = CallExpr::parse(s)?;
        let spec = match call.name.as_str() {
            "trunc_gaussian" => {
                call.expect_keys(&["d", "sigma", "cutoff"])?;
                TargetSpec::TruncatedGaussian {
                    d: call.usize("d")?,
                    sigma: call.f64("sigma")?,
                    cutoff: call.raw("cutoff").map(crate::spec_string::parse_f64).transpose()?,
                }
            }
            "uniform_ball" => {
                call.expect_keys(&["d", "R"])?;
                TargetSpec::UniformBall {
                    d: call.usize("d")?,
                    radius: call.f64("R")?,
                }
            }
            "logistic" => {
                call.expect_keys(&["train", "test", "prior_sigma", "n_train", "n_test", "separation"])?;
                TargetSpec::Logistic {
                    train: call.raw("train").map(str::to_string),
                    test: call.raw("test").map(str::to_string),
                    prior_sigma: call.f64_or("prior_sigma", 0.5)?,
                    n_train: call.usize_or("n_train", 50)?,
                    n_test: call.usize_or("n_test", 10)?,
                    separation: call.f64_or("separation", 4.0)?,
                }
            }
            other => return Err(Error::parse(format!("unknown target `{other}`"))),
        };
        let ok = match &spec {
            TargetSpec::TruncatedGaussian { d, sigma, cutoff } => {
                *d >= 1 && *sigma > 0.0 && cutoff.map_or(true, |c| c > 0.0)
            }
            TargetSpec::UniformBall { d, radius } => *d >= 1 && *radius > 0.0,
            TargetSpec::Logistic {
                prior_sigma,
                n_train,
                n_test,
                separation,
                ..
            } => *prior_sigma > 0.0 && *n_train >= 1 && *n_test >= 1 && *separation >= 0.0,
        };
        if !ok {
            return Err(Error::parse(format!("`{s}`: parameters out of range")));
        }
        Ok(spec)
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::TruncatedGaussian { d, sigma, cutoff } => {
                write!(f, "trunc_gaussian(d={d},sigma={sigma}")?;
                if let Some(c) = cutoff {
                    write!(f, ",cutoff={c}")?;
                }
                write!(f, ")")
            }
            TargetSpec::UniformBall { d, radius } => write!(f, "uniform_ball(d={d},R={radius})"),
            TargetSpec::Logistic {
                train,
                test,
                prior_sigma,
                n_train,
                n_test,
                separation,
            } => {
                write!(f, "logistic(")?;
                if let Some(t) = train {
                    write!(f, "train={t},")?;
                }
                if let Some(t) = test {
                    write!(f, "test={t},")?;
                }
                write!(
                    f,
                    "prior_sigma={prior_sigma},n_train={n_train},n_test={n_test},separation={separation})"
                )
            }
        }
    }
}
