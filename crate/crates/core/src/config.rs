//! Experiment configuration files.
//!
//! ```text
//! # comment
//! [run]
//! experiment = mmd-decay
//! n = 50, 100, 200
//! replicates = 20
//!
//! [target]
//! spec = trunc_gaussian(d=3,sigma=0.5)
//! ```
//!
//! Sections are `[run]`, `[target]`, `[kernel]`, `[gibbs]` and `[background]`.
//! Unknown sections or keys are errors.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gibbs::BetaSchedule;
use crate::kernels::{Kernel, KernelSpec};
use crate::potentials::GridSpec;
use crate::spec_string::{parse_f64, parse_usize, CallExpr};
use crate::targets::TargetSpec;

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Sample,
    MmdDecay,
    Variance,
    PotentialConvergence,
    BayesClassify,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Sample,
        Experiment::MmdDecay,
        Experiment::Variance,
        Experiment::PotentialConvergence,
        Experiment::BayesClassify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::MmdDecay => "mmd-decay",
            Experiment::Variance => "variance",
            Experiment::PotentialConvergence => "potential-convergence",
            Experiment::BayesClassify => "bayes-classify",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| Error::parse(format!("unknown experiment `{}`", s.trim())))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Node construction method compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Post-burn-in history of a random-walk Metropolis chain.
    Mcmc,
    /// Final state of MALA on the quenched Gibbs measure.
    Gibbs,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mcmc => "mcmc",
            Method::Gibbs => "gibbs",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mcmc" => Ok(Method::Mcmc),
            "gibbs" => Ok(Method::Gibbs),
            other => Err(Error::parse(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the background of the quenched potential is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackgroundSpec {
    /// `m` states of a Metropolis chain after `burn_in`, thinned by `thin`,
    /// or drawn i.i.d. from a history of `pool` states when `pool` is set.
    Mcmc {
        m: usize,
        burn_in: usize,
        thin: usize,
        pool: Option<usize>,
    },
    /// `n` Coulomb-gas nodes with uniform equilibrium on `B(0, radius)`,
    /// reweighted toward the target.
    Coulomb { radius: f64, steps: usize },
}

impl FromStr for BackgroundSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let call = CallExpr::parse(s)?;
        let spec = match call.name.as_str() {
            "mcmc" => {
                call.expect_keys(&["m", "burn_in", "thin", "pool"])?;
                let pool = match call.usize_or("pool", 0)? {
                    0 => None,
                    p => Some(p),
                };
                BackgroundSpec::Mcmc {
                    m: call.usize_or("m", 1000)?,
                    burn_in: call.usize_or("burn_in", 1000)?,
                    thin: call.usize_or("thin", 1)?,
                    pool,
                }
            }
            "coulomb" => {
                call.expect_keys(&["radius", "steps"])?;
                BackgroundSpec::Coulomb {
                    radius: call.f64("radius")?,
                    steps: call.usize_or("steps", 2000)?,
                }
            }
            other => return Err(Error::parse(format!("unknown background `{other}`"))),
        };
        match spec {
            BackgroundSpec::Mcmc { m, thin, .. } if m == 0 || thin == 0 => {
                Err(Error::parse("background: m and thin must be positive"))
            }
            BackgroundSpec::Coulomb { radius, steps } if !(radius > 0.0) || steps == 0 => {
                Err(Error::parse("background: radius and steps must be positive"))
            }
            ok => Ok(ok),
        }
    }
}

impl fmt::Display for BackgroundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackgroundSpec::Mcmc { m, burn_in, thin, pool } => {
                write!(f, "mcmc(m={m},burn_in={burn_in},thin={thin},pool={})", pool.unwrap_or(0))
            }
            BackgroundSpec::Coulomb { radius, steps } => write!(f, "coulomb(radius={radius},steps={steps})"),
        }
    }
}

/// Starting configuration of the Gibbs chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GibbsInit {
    /// Background atoms drawn by weight, jittered by `0.01 R`.
    Background,
    /// Uniform in the confinement ball.
    Uniform,
}

/// A fully parsed experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub replicates: usize,
    pub ns: Vec<usize>,
    pub methods: Vec<Method>,
    pub target: TargetSpec,
    pub kernel: KernelSpec,
    pub schedule: BetaSchedule,
    pub steps: usize,
    pub alpha0: f64,
    /// Confinement radius; defaults to the target's support radius.
    pub radius: Option<f64>,
    pub init: GibbsInit,
    pub background: BackgroundSpec,
    pub reference_steps: usize,
    pub reference_burn_in: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_ns: Vec<usize>,
    pub deltas: Vec<f64>,
    pub grid: GridSpec,
    pub output: Option<PathBuf>,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::MmdDecay,
            seed: 1,
            replicates: 20,
            ns: vec![50, 100, 200],
            methods: vec![Method::Mcmc, Method::Gibbs],
            target: TargetSpec::TruncatedGaussian {
                d: 3,
                sigma: 0.5,
                cutoff: None,
            },
            kernel: KernelSpec::RieszRegularized { s: 1.0, eps: 0.1 },
            schedule: BetaSchedule::n_squared(),
            steps: 2000,
            alpha0: crate::samplers::DEFAULT_ALPHA0,
            radius: None,
            init: GibbsInit::Background,
            background: BackgroundSpec::Mcmc {
                m: 1000,
                burn_in: 1000,
                thin: 1,
                pool: None,
            },
            reference_steps: 9000,
            reference_burn_in: 1000,
            mcmc_burn_in: 5000,
            mcmc_ns: Vec::new(),
            deltas: vec![0.02, 0.04, 0.06, 0.08, 0.10],
            grid: GridSpec {
                extent: 1.2,
                pts_per_axis: 20,
            },
            output: None,
            base_dir: PathBuf::from("."),
        }
    }
}

const SECTIONS: [&str; 5] = ["run", "target", "kernel", "gibbs", "background"];

fn parse_list<T>(raw: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::parse("empty list"));
    }
    Ok(items)
}

fn strictly_increasing(ns: &[usize], key: &str) -> Result<()> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::parse(format!("`{key}` must be strictly increasing")));
    }
    if ns.contains(&0) {
        return Err(Error::parse(format!("`{key}` entries must be positive")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses a config file. Keys absent from the file keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<String> = None;
        let mut seen: Vec<(String, String)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = |e: Error| Error::Parse(format!("line {line_no}: {}", e.to_string().trim_start_matches("parse error: ")));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::parse(format!("line {line_no}: unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let sec = section
                .clone()
                .ok_or_else(|| Error::parse(format!("line {line_no}: key outside of any section")))?;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {line_no}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(Error::parse(format!("line {line_no}: empty value for `{key}`")));
            }
            if seen.iter().any(|(s, k)| *s == sec && k == key) {
                return Err(Error::parse(format!("line {line_no}: duplicate key `{key}`")));
            }
            seen.push((sec.clone(), key.to_string()));
            cfg.set(&sec, key, value).map_err(ctx)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("run", "experiment") => self.experiment = value.parse()?,
            ("run", "seed") => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::parse(format!("`{value}` is not a 64-bit seed")))?
            }
            ("run", "replicates") => self.replicates = parse_usize(value)?,
            ("run", "n") => self.ns = parse_list(value, parse_usize)?,
            ("run", "methods") => self.methods = parse_list(value, str::parse)?,
            ("run", "reference_steps") => self.reference_steps = parse_usize(value)?,
            ("run", "reference_burn_in") => self.reference_burn_in = parse_usize(value)?,
            ("run", "mcmc_burn_in") => self.mcmc_burn_in = parse_usize(value)?,
            ("run", "mcmc_n") => self.mcmc_ns = parse_list(value, parse_usize)?,
            ("run", "deltas") => self.deltas = parse_list(value, parse_f64)?,
            ("run", "grid") => self.grid = value.parse()?,
            ("run", "output") => self.output = Some(PathBuf::from(value)),
            ("target", "spec") => self.target = value.parse()?,
            ("kernel", "spec") => self.kernel = value.parse()?,
            ("gibbs", "beta") => self.schedule = value.parse()?,
            ("gibbs", "steps") => self.steps = parse_usize(value)?,
            ("gibbs", "alpha0") => self.alpha0 = parse_f64(value)?,
            ("gibbs", "radius") => self.radius = Some(parse_f64(value)?),
            ("gibbs", "init") => {
                self.init = match value {
                    "background" => GibbsInit::Background,
                    "uniform" => GibbsInit::Uniform,
                    other => return Err(Error::parse(format!("unknown init `{other}`"))),
                }
            }
            ("background", "spec") => self.background = value.parse()?,
            _ => return Err(Error::parse(format!("unknown key `{key}` in [{section}]"))),
        }
        Ok(())
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::parse(m.to_string()));
        strictly_increasing(&self.ns, "n")?;
        strictly_increasing(&self.mcmc_ns, "mcmc_n")?;
        if self.replicates == 0 {
            return bad("replicates must be positive");
        }
        if self.steps == 0 {
            return bad("gibbs steps must be positive");
        }
        if !(self.alpha0 > 0.0) {
            return bad("alpha0 must be positive");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return bad("confinement radius must be positive");
            }
        }
        if self.reference_steps == 0 {
            return bad("reference_steps must be positive");
        }
        if self.deltas.iter().any(|d| *d < 0.0) {
            return bad("deltas must be nonnegative");
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("duplicate method");
        }
        if self.grid.pts_per_axis == 0 || !(self.grid.extent > 0.0) {
            return bad("grid needs positive extent and point count");
        }
        self.kernel.validate().map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(d) = self.kernel.required_dim() {
            if d != self.target.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.target.dim(),
                    found: d,
                });
            }
        }
        Ok(())
    }

    /// Restores full experiment sizes in place of the desk-scale defaults.
    pub fn full_scale(&mut self) {
        match self.experiment {
            Experiment::MmdDecay | Experiment::Variance => {
                self.replicates = 100;
                self.steps = 10_000;
                self.reference_steps = 90_000;
                self.reference_burn_in = 10_000;
            }
            Experiment::BayesClassify => {
                self.replicates = 50;
                self.steps = 10_000;
                self.reference_steps = 100_000;
            }
            Experiment::PotentialConvergence => {
                if let BackgroundSpec::Coulomb { radius, .. } = self.background {
                    self.background = BackgroundSpec::Coulomb { radius, steps: 10_000 };
                }
            }
            Experiment::Sample => {}
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s.push_str("[run]\n");
        s.push_str(&format!("experiment = {}\n", self.experiment));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("replicates = {}\n", self.replicates));
        s.push_str(&format!("n = {}\n", list(&self.ns)));
        let methods: Vec<&str> = self.methods.iter().map(Method::name).collect();
        s.push_str(&format!("methods = {}\n", methods.join(", ")));
        s.push_str(&format!("reference_steps = {}\n", self.reference_steps));
        s.push_str(&format!("reference_burn_in = {}\n", self.reference_burn_in));
        s.push_str(&format!("mcmc_burn_in = {}\n", self.mcmc_burn_in));
        if !self.mcmc_ns.is_empty() {
            s.push_str(&format!("mcmc_n = {}\n", list(&self.mcmc_ns)));
        }
        let deltas: Vec<String> = self.deltas.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("deltas = {}\n", deltas.join(", ")));
        s.push_str(&format!("grid = {}\n", self.grid));
        if let Some(out) = &self.output {
            s.push_str(&format!("output = {}\n", out.display()));
        }
        s.push_str(&format!("\n[target]\nspec = {}\n", self.target));
        s.push_str(&format!("\n[kernel]\nspec = {}\n", self.kernel));
        s.push_str(&format!("\n[gibbs]\nbeta = {}\n", self.schedule));
        s.push_str(&format!("steps = {}\n", self.steps));
        s.push_str(&format!("alpha0 = {}\n", self.alpha0));
        if let Some(r) = self.radius {
            s.push_str(&format!("radius = {r}\n"));
        }
        let init = match self.init {
            GibbsInit::Background => "background",
            GibbsInit::Uniform => "uniform",
        };
        s.push_str(&format!("init = {init}\n"));
        s.push_str(&format!("\n[background]\nspec = {}\n", self.background));
        s
    }
}

/// Names of the built-in presets.
pub const PRESETS: [&str; 7] = [
    "mmd-decay-desk",
    "bayes-desk",
    "sample-3d",
    "sample-planar",
    "variance-desk",
    "potential-desk",
    "smoke",
];

/// Text of a built-in preset config.
pub fn preset(name: &str) -> Result<&'static str> {
    Ok(match name {
        "mmd-decay-desk" => include_str!("../presets/mmd-decay-desk.conf"),
        "bayes-desk" => include_str!("../presets/bayes-desk.conf"),
        "sample-3d" => include_str!("../presets/sample-3d.conf"),
        "sample-planar" => include_str!("../presets/sample-planar.conf"),
        "variance-desk" => include_str!("../presets/variance-desk.conf"),
        "potential-desk" => include_str!("../presets/potential-desk.conf"),
        "smoke" => include_str!("../presets/smoke.conf"),
        other => return Err(Error::parse(format!("unknown preset `{other}`"))),
    })
}
