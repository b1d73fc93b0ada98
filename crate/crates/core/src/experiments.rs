//! Experiment runners: each turns an [`ExperimentConfig`] into a
//! [`DiagnosticsReport`] plus sidecar files.
//!
//! Every random draw comes from a stream named after the experiment, the
//! method, the particle count and the replicate, so results do not depend on
//! scheduling or on the number of worker threads.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{BackgroundSpec, Experiment, ExperimentConfig, GibbsInit, Method};
use crate::diagnostics::{bonferroni_interval, max_abs_error, DiagnosticsReport, MmdReference};
use crate::error::{Error, Result};
use crate::gibbs::GibbsConfig;
use crate::kernels::{Kernel, KernelSpec};
use crate::measures::{squared_distance, PointCloud, WeightedSample};
use crate::potentials::{analytic_uniform_ball_potential, potential_sup_error, QuenchedPotential};
use crate::samplers::{
    build_background_coulomb, build_background_mcmc, build_background_mcmc_iid, mala_gibbs, rwmh_chain,
    uniform_in_ball, ChainDiagnostics, MalaInit, RngStream,
};
use crate::targets::{logistic_predictive, ClassificationData, EquilibriumSpec, TargetDensity, TargetSpec};

/// Confidence level of the coverage intervals.
pub const COVERAGE_LEVEL: f64 = 0.95;
/// Number of terms in the variance test function.
pub const TEST_FUNCTION_TERMS: usize = 10;

/// Report plus extra files, keyed by file name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub report: DiagnosticsReport,
    pub sidecars: Vec<(String, String)>,
}

impl RunOutput {
    /// Writes `records.csv`, `aggregates.csv`, `config.conf` and the sidecars.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("records.csv"), self.report.records_csv())?;
        std::fs::write(dir.join("aggregates.csv"), self.report.aggregates_csv())?;
        std::fs::write(dir.join("config.conf"), cfg.to_config_string())?;
        for (name, body) in &self.sidecars {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    pub fn sidecar(&self, name: &str) -> Option<&str> {
        self.sidecars.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_str())
    }
}

/// Runs the experiment named in `cfg`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Sample => run_sample(cfg),
        Experiment::MmdDecay => run_mmd_decay(cfg),
        Experiment::Variance => run_variance(cfg),
        Experiment::PotentialConvergence => run_potential_convergence(cfg),
        Experiment::BayesClassify => run_bayes_classify(cfg),
    }
}

/// Hands out named streams and rejects duplicate stream ids.
struct Streams {
    seed: u64,
    experiment: Experiment,
    seen: Mutex<HashSet<u64>>,
}

impl Streams {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.seed,
            experiment: cfg.experiment,
            seen: Mutex::new(HashSet::new()),
        }
    }

    fn named(&self, label: &str) -> Result<RngStream> {
        let s = RngStream::labeled(self.seed, &format!("{}/{label}", self.experiment));
        if !self.seen.lock().expect("stream registry").insert(s.stream_id) {
            return Err(Error::Numerical(format!("stream id collision for `{label}`")));
        }
        Ok(s)
    }

    fn replicate(&self, method: &str, n: usize, r: usize) -> Result<RngStream> {
        self.named(&format!("{method}/n={n}/r={r}"))
    }
}

fn resolve_target(cfg: &ExperimentConfig) -> Result<(TargetDensity, Option<ClassificationData>)> {
    let data = cfg.target.classification_data(&cfg.base_dir, cfg.seed)?;
    let target = cfg.target.resolve(data.as_ref())?;
    Ok((target, data))
}

fn confinement_radius(cfg: &ExperimentConfig, target: &TargetDensity) -> f64 {
    cfg.radius.unwrap_or_else(|| target.support_radius())
}

fn build_background(
    cfg: &ExperimentConfig,
    target: &TargetDensity,
    n: usize,
    stream: RngStream,
) -> Result<WeightedSample> {
    match cfg.background {
        BackgroundSpec::Mcmc {
            m,
            burn_in,
            thin,
            pool: None,
        } => build_background_mcmc(target, m, burn_in, Some(thin), stream),
        BackgroundSpec::Mcmc {
            m,
            burn_in,
            pool: Some(pool),
            ..
        } => build_background_mcmc_iid(target, m, pool, burn_in, stream),
        BackgroundSpec::Coulomb { radius, steps } => {
            let eq = EquilibriumSpec::quadratic_coulomb(target.dim(), radius)?;
            build_background_coulomb(&eq, target, n, cfg.schedule, steps, stream)
        }
    }
}

fn background_label(spec: &BackgroundSpec) -> &'static str {
    match spec {
        BackgroundSpec::Mcmc { .. } => "mcmc",
        BackgroundSpec::Coulomb { .. } => "coulomb",
    }
}

/// Whether one background serves every particle count.
fn background_is_shared(spec: &BackgroundSpec) -> bool {
    matches!(spec, BackgroundSpec::Mcmc { .. })
}

/// Backgrounds for each requested particle count, built once and shared by
/// all replicates.
fn backgrounds(
    cfg: &ExperimentConfig,
    target: &TargetDensity,
    ns: &[usize],
    streams: &Streams,
) -> Result<Vec<(usize, WeightedSample)>> {
    if background_is_shared(&cfg.background) {
        let bg = build_background(cfg, target, 0, streams.named("background")?)?;
        Ok(ns.iter().map(|&n| (n, bg.clone())).collect())
    } else {
        let labelled: Vec<(usize, RngStream)> = ns
            .iter()
            .map(|&n| Ok((n, streams.named(&format!("background/n={n}"))?)))
            .collect::<Result<_>>()?;
        labelled
            .into_par_iter()
            .map(|(n, s)| Ok((n, build_background(cfg, target, n, s)?)))
            .collect()
    }
}

fn background_for(bgs: &[(usize, WeightedSample)], n: usize) -> &WeightedSample {
    &bgs.iter().find(|(m, _)| *m == n).expect("background built for every n").1
}

/// Final state of MALA on the quenched Gibbs measure with `n` particles.
fn gibbs_nodes(
    cfg: &ExperimentConfig,
    target: &TargetDensity,
    background: &WeightedSample,
    n: usize,
    stream: RngStream,
) -> Result<(PointCloud, ChainDiagnostics)> {
    let kernel = cfg.kernel.with_particle_count(n);
    let radius = confinement_radius(cfg, target);
    let potential = QuenchedPotential::new(background.clone(), kernel, radius)?;
    let system = GibbsConfig::new(n, cfg.schedule, kernel, potential)?;
    let init = match cfg.init {
        GibbsInit::Background => MalaInit::background_subsample(radius),
        GibbsInit::Uniform => {
            let mut rng = stream.child("init").rng();
            let mut flat = Vec::with_capacity(n * target.dim());
            for _ in 0..n {
                flat.extend(uniform_in_ball(&mut rng, target.dim(), radius));
            }
            MalaInit::Given(PointCloud::from_flat(target.dim(), flat)?)
        }
    };
    let (nodes, diag) = mala_gibbs(&system, cfg.steps, cfg.alpha0, stream, init)?;
    log::debug!("gibbs n={n}: acceptance {:.3}, alpha0 {:.3e}", diag.acceptance_rate, diag.final_step_size);
    Ok((nodes, diag))
}

fn mcmc_nodes(cfg: &ExperimentConfig, target: &TargetDensity, n: usize, stream: RngStream) -> Result<PointCloud> {
    Ok(rwmh_chain(target, cfg.mcmc_burn_in + n, cfg.mcmc_burn_in, stream)?.0)
}

/// One quadrature job.
#[derive(Debug, Clone, Copy)]
struct Job {
    method: Method,
    n: usize,
    r: usize,
    stream: RngStream,
}

fn jobs(cfg: &ExperimentConfig, streams: &Streams, ns_for: impl Fn(Method) -> Vec<usize>) -> Result<Vec<Job>> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for n in ns_for(method) {
            for r in 0..cfg.replicates {
                out.push(Job {
                    method,
                    n,
                    r,
                    stream: streams.replicate(method.name(), n, r)?,
                });
            }
        }
    }
    Ok(out)
}

/// Node sets for every job, in job order.
fn quadratures(
    cfg: &ExperimentConfig,
    target: &TargetDensity,
    jobs: &[Job],
    bgs: &[(usize, WeightedSample)],
) -> Result<Vec<WeightedSample>> {
    jobs.par_iter()
        .map(|job| {
            let nodes = match job.method {
                Method::Mcmc => mcmc_nodes(cfg, target, job.n, job.stream)?,
                Method::Gibbs => gibbs_nodes(cfg, target, background_for(bgs, job.n), job.n, job.stream)?.0,
            };
            WeightedSample::uniform(nodes)
        })
        .collect()
}

fn gibbs_ns(cfg: &ExperimentConfig) -> Vec<usize> {
    if cfg.methods.contains(&Method::Gibbs) {
        cfg.ns.clone()
    } else {
        Vec::new()
    }
}

/// Worst-case error of MCMC and Gibbs quadratures against a long reference
/// chain. Records the shifted energy `I_K(mu) - 2 I_K(mu, ref)`; the reference
/// energy `I_K(ref)` goes to `reference.json`.
pub fn run_mmd_decay(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (target, _) = resolve_target(cfg)?;
    if cfg.kernel.is_singular() {
        return Err(Error::UnboundedKernel);
    }
    let streams = Streams::new(cfg);
    let (history, _) = rwmh_chain(
        &target,
        cfg.reference_burn_in + cfg.reference_steps,
        cfg.reference_burn_in,
        streams.named("reference")?,
    )?;
    let reference = WeightedSample::uniform(history)?;
    let n_dependent = cfg.kernel.particle_count().is_some();
    let shared_ref = if n_dependent {
        None
    } else {
        Some(MmdReference::new(cfg.kernel, reference.clone())?)
    };
    let per_n: Vec<(usize, MmdReference<KernelSpec>)> = if n_dependent {
        cfg.ns
            .iter()
            .map(|&n| Ok((n, MmdReference::new(cfg.kernel.with_particle_count(n), reference.clone())?)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mmd_for = |n: usize| -> &MmdReference<KernelSpec> {
        shared_ref
            .as_ref()
            .unwrap_or_else(|| &per_n.iter().find(|(m, _)| *m == n).expect("reference per n").1)
    };

    let bgs = backgrounds(cfg, &target, &gibbs_ns(cfg), &streams)?;
    let jobs = jobs(cfg, &streams, |_| cfg.ns.clone())?;
    let samples = quadratures(cfg, &target, &jobs, &bgs)?;
    let values: Vec<f64> = jobs
        .par_iter()
        .zip(&samples)
        .map(|(job, s)| mmd_for(job.n).shifted(s))
        .collect::<Result<_>>()?;

    let mut report = DiagnosticsReport::new();
    for (job, v) in jobs.iter().zip(values) {
        report.push("shifted_energy", job.method.name(), job.n, job.r as u64, v)?;
    }
    let reference_energies: Vec<_> = cfg
        .ns
        .iter()
        .map(|&n| json!({"n": n, "reference_energy": mmd_for(n).reference_energy()}))
        .collect();
    let sidecar = json!({
        "kernel": cfg.kernel.to_string(),
        "reference_size": reference.len(),
        "reference_energies": reference_energies,
    });
    Ok(RunOutput {
        report,
        sidecars: vec![("reference.json".into(), pretty(&sidecar))],
    })
}

/// Variance across replicates of `(1/n) sum_i f(y_i)` with
/// `f(x) = sum_k a_k K(x, z_k)`, `z_k` uniform in `[-1, 1]^d` and `a_k`
/// uniform in `[-1, 1]`, drawn once per run.
pub fn run_variance(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (target, _) = resolve_target(cfg)?;
    let streams = Streams::new(cfg);
    let d = target.dim();
    let mut rng = streams.named("test-function")?.rng();
    let mut centres = Vec::with_capacity(TEST_FUNCTION_TERMS);
    let mut coeffs = Vec::with_capacity(TEST_FUNCTION_TERMS);
    for _ in 0..TEST_FUNCTION_TERMS {
        centres.push((0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect::<Vec<f64>>());
        coeffs.push(rng.gen_range(-1.0..=1.0));
    }
    let kernel = cfg.kernel;
    if kernel.is_singular() {
        return Err(Error::SingularKernel("test function needs a bounded kernel".into()));
    }
    let f = |x: &[f64]| -> f64 {
        coeffs
            .iter()
            .zip(&centres)
            .map(|(a, z)| a * kernel.value(squared_distance(x, z)))
            .sum()
    };

    let bgs = backgrounds(cfg, &target, &gibbs_ns(cfg), &streams)?;
    let jobs = jobs(cfg, &streams, |_| cfg.ns.clone())?;
    let samples = quadratures(cfg, &target, &jobs, &bgs)?;
    let mut report = DiagnosticsReport::new();
    for (job, s) in jobs.iter().zip(&samples) {
        report.push("linear_statistic", job.method.name(), job.n, job.r as u64, s.integrate(f))?;
    }
    let sidecar = json!({
        "kernel": kernel.to_string(),
        "a": coeffs,
        "z": centres,
    });
    Ok(RunOutput {
        report,
        sidecars: vec![("test_function.json".into(), pretty(&sidecar))],
    })
}

/// Sup-norm distance on a grid between the kernel potential of the
/// background and the exact Newtonian potential of a uniform ball in three
/// dimensions. Each replicate builds an independent background.
pub fn run_potential_convergence(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let TargetSpec::UniformBall { d, radius } = cfg.target else {
        return Err(Error::invalid("potential convergence needs a uniform-ball target"));
    };
    if d != 3 {
        return Err(Error::AnalyticFormUnavailable(d));
    }
    if cfg.kernel.is_singular() {
        return Err(Error::SingularKernel("potential convergence needs a bounded kernel".into()));
    }
    let (target, _) = resolve_target(cfg)?;
    let streams = Streams::new(cfg);
    let grid = cfg.grid.points(d, radius);
    let method = background_label(&cfg.background);
    let mut tasks = Vec::new();
    for &n in &cfg.ns {
        for r in 0..cfg.replicates {
            tasks.push((n, r, streams.replicate(method, n, r)?));
        }
    }
    let values: Vec<f64> = tasks
        .par_iter()
        .map(|&(n, _, stream)| {
            let bg = build_background(cfg, &target, n, stream)?;
            let kernel = cfg.kernel.with_particle_count(n);
            let approx = |z: &[f64]| -> f64 { bg.iter().map(|(x, w)| w * kernel.value(squared_distance(z, x))).sum() };
            let exact = |z: &[f64]| analytic_uniform_ball_potential(radius, z, 3).expect("three-dimensional grid");
            potential_sup_error(approx, exact, &grid)
        })
        .collect::<Result<_>>()?;
    let mut report = DiagnosticsReport::new();
    for (&(n, r, _), v) in tasks.iter().zip(values) {
        report.push("sup_error", method, n, r as u64, v)?;
    }
    let sidecar = json!({
        "kernel": cfg.kernel.to_string(),
        "grid": cfg.grid.to_string(),
        "grid_points": grid.len(),
    });
    Ok(RunOutput {
        report,
        sidecars: vec![("grid.json".into(), pretty(&sidecar))],
    })
}

/// Simultaneous coverage of posterior predictive probabilities at the test
/// points, against a long reference chain.
pub fn run_bayes_classify(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (target, data) = resolve_target(cfg)?;
    let data = data.ok_or_else(|| Error::invalid("bayes-classify needs a logistic target"))?;
    let tests = &data.test_points;
    let streams = Streams::new(cfg);
    let predict = |nodes: &WeightedSample| -> Vec<f64> {
        tests
            .iter()
            .map(|z| nodes.integrate(|y| logistic_predictive(y, z)))
            .collect()
    };
    let (history, _) = rwmh_chain(
        &target,
        cfg.reference_burn_in + cfg.reference_steps,
        cfg.reference_burn_in,
        streams.named("reference")?,
    )?;
    let reference = predict(&WeightedSample::uniform(history)?);

    let mcmc_ns = if cfg.mcmc_ns.is_empty() { cfg.ns.clone() } else { cfg.mcmc_ns.clone() };
    let bgs = backgrounds(cfg, &target, &gibbs_ns(cfg), &streams)?;
    let jobs = jobs(cfg, &streams, |m| match m {
        Method::Mcmc => mcmc_ns.clone(),
        Method::Gibbs => cfg.ns.clone(),
    })?;
    let samples = quadratures(cfg, &target, &jobs, &bgs)?;

    let mut report = DiagnosticsReport::new();
    for (job, s) in jobs.iter().zip(&samples) {
        let err = max_abs_error(&predict(s), &reference);
        report.push("max_abs_error", job.method.name(), job.n, job.r as u64, err)?;
    }
    let mut groups: Vec<(Method, usize)> = jobs.iter().map(|j| (j.method, j.n)).collect();
    groups.dedup();
    for (method, n) in groups {
        let errs = report.values("max_abs_error", method.name(), n);
        for &delta in &cfg.deltas {
            let p = errs.iter().filter(|&&e| e <= delta).count() as f64 / errs.len() as f64;
            let (lo, hi) = bonferroni_interval(p, errs.len(), cfg.deltas.len(), COVERAGE_LEVEL)?;
            report.add_aggregate("coverage", method.name(), n, &format!("delta={delta}"), p)?;
            report.add_aggregate("coverage", method.name(), n, &format!("ci_low_delta={delta}"), lo)?;
            report.add_aggregate("coverage", method.name(), n, &format!("ci_high_delta={delta}"), hi)?;
        }
    }
    let sidecar = json!({
        "test_points": tests.to_points(),
        "reference_predictive": reference,
        "reference_chain_length": cfg.reference_steps,
    });
    Ok(RunOutput {
        report,
        sidecars: vec![("reference.json".into(), pretty(&sidecar))],
    })
}

/// One Gibbs configuration per `n`, written as `configuration_n<n>.csv`
/// with chain diagnostics in `diagnostics_n<n>.json`.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (target, _) = resolve_target(cfg)?;
    let streams = Streams::new(cfg);
    let bgs = backgrounds(cfg, &target, &cfg.ns, &streams)?;
    let mut tasks = Vec::new();
    for &n in &cfg.ns {
        tasks.push((n, streams.replicate("gibbs", n, 0)?));
    }
    let results: Vec<(PointCloud, ChainDiagnostics)> = tasks
        .par_iter()
        .map(|&(n, s)| gibbs_nodes(cfg, &target, background_for(&bgs, n), n, s))
        .collect::<Result<_>>()?;
    let mut report = DiagnosticsReport::new();
    let mut sidecars = Vec::new();
    for (&(n, _), (nodes, diag)) in tasks.iter().zip(results) {
        report.push("acceptance_rate", "gibbs", n, 0, diag.acceptance_rate)?;
        sidecars.push((format!("configuration_n{n}.csv"), nodes.to_csv()));
        let meta = json!({
            "n": n,
            "steps": diag.steps,
            "acceptance_rate": diag.acceptance_rate,
            "final_step_size": diag.final_step_size,
            "target": cfg.target.to_string(),
            "kernel": cfg.kernel.to_string(),
            "beta": cfg.schedule.to_string(),
        });
        sidecars.push((format!("diagnostics_n{n}.json"), pretty(&meta)));
    }
    Ok(RunOutput { report, sidecars })
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}
