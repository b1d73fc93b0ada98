//! Markov chain samplers: random-walk Metropolis for targets, MALA for the
//! Gibbs measure, and the two background constructions built on them.

use std::fmt;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::{BetaSchedule, GibbsConfig, ParticleConfiguration};
use crate::kernels::{Kernel, KernelSpec};
use crate::measures::{fmt_full, importance_weights, squared_norm, PointCloud, WeightedSample};
use crate::potentials::{Confinement, QuadraticPotential};
use crate::targets::{EquilibriumSpec, TargetDensity};

/// Robbins-Monro exponent of the step-size adaptation gain `t^{-0.6}`.
const ADAPT_EXPONENT: f64 = 0.6;
/// Acceptance rate the adaptation steers toward.
const TARGET_ACCEPTANCE: f64 = 0.5;

/// Seed plus stream selector for a reproducible random number generator.
///
/// Each `(seed, stream_id)` pair names an independent ChaCha8 keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream whose id is a hash of `label`, e.g. `"mmd-decay/gibbs/n=50/r=3"`.
    pub fn labeled(seed: u64, label: &str) -> Self {
        let digest = Sha256::digest(label.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Self::new(seed, u64::from_le_bytes(bytes))
    }

    /// Child stream for a sub-task of this one.
    pub fn child(&self, label: &str) -> Self {
        Self::labeled(self.seed, &format!("{:016x}/{label}", self.stream_id))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

impl fmt::Display for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed={} stream={:016x}", self.seed, self.stream_id)
    }
}

/// Summary of a finished chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Accepted over proposed moves after adaptation stopped.
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub steps: usize,
    pub final_step_size: f64,
}

impl ChainDiagnostics {
    fn new(accepted: u64, proposed: u64, steps: usize, final_step_size: f64) -> Self {
        let acceptance_rate = if proposed == 0 {
            0.0
        } else {
            accepted as f64 / proposed as f64
        };
        Self {
            acceptance_rate,
            accepted,
            proposed,
            steps,
            final_step_size,
        }
    }
}

/// Robbins-Monro adaptation of a log step size.
#[derive(Debug, Clone, Copy)]
struct LogStepAdapter {
    log_step: f64,
    t: u64,
}

impl LogStepAdapter {
    fn new(step: f64) -> Self {
        Self {
            log_step: step.ln(),
            t: 0,
        }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn update(&mut self, acceptance_probability: f64) {
        self.t += 1;
        let gain = (self.t as f64).powf(-ADAPT_EXPONENT);
        self.log_step += gain * (acceptance_probability - TARGET_ACCEPTANCE);
    }
}

/// `min(1, exp(log_ratio))`, with NaN mapped to 0.
fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

pub(crate) fn uniform_in_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = squared_norm(&v).sqrt();
    let u: f64 = rng.gen();
    let scale = radius * u.powf(1.0 / dim as f64) / norm;
    v.iter_mut().for_each(|c| *c *= scale);
    v
}

/// Random-walk Metropolis on `target` with proposal `N(0, alpha I_d)`.
///
/// Starts uniformly in the support ball, adapts `alpha` toward 50% acceptance
/// during burn-in, then freezes it. Returns the `steps - burn_in` states after
/// burn-in.
pub fn rwmh_chain(
    target: &TargetDensity,
    steps: usize,
    burn_in: usize,
    rng: RngStream,
) -> Result<(PointCloud, ChainDiagnostics)> {
    target.validate()?;
    if steps <= burn_in {
        return Err(Error::invalid("rwmh: steps must exceed burn_in"));
    }
    let d = target.dim();
    let radius = target.support_radius();
    let mut rng = rng.rng();

    let mut x = Vec::new();
    let mut logp = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        x = uniform_in_ball(&mut rng, d, radius);
        logp = target.log_unnorm_density(&x);
        if logp.is_finite() {
            break;
        }
    }
    if !logp.is_finite() {
        return Err(Error::InvalidInitialConfiguration(
            "no point of positive density found in the support ball".into(),
        ));
    }

    let initial = (radius / (2.0 * d as f64).sqrt()).powi(2);
    let mut adapter = LogStepAdapter::new(initial);
    let mut history = PointCloud::empty(d);
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let mut proposal = vec![0.0; d];
    for t in 0..steps {
        let sd = adapter.step().sqrt();
        for (p, xi) in proposal.iter_mut().zip(&x) {
            let z: f64 = rng.sample(StandardNormal);
            *p = xi + sd * z;
        }
        let logp_new = target.log_unnorm_density(&proposal);
        let a = acceptance_probability(logp_new - logp);
        let accept = rng.gen::<f64>() < a;
        if accept {
            x.copy_from_slice(&proposal);
            logp = logp_new;
        }
        if t < burn_in {
            adapter.update(a);
        } else {
            proposed += 1;
            accepted += u64::from(accept);
            history.push(&x)?;
        }
    }
    Ok((history, ChainDiagnostics::new(accepted, proposed, steps, adapter.step())))
}

/// Uniform weights over the post-burn-in history of [`rwmh_chain`], optionally
/// keeping only every `subsample`-th state.
pub fn build_background_mcmc(
    target: &TargetDensity,
    m: usize,
    burn_in: usize,
    subsample: Option<usize>,
    rng: RngStream,
) -> Result<WeightedSample> {
    if m == 0 {
        return Err(Error::invalid("background size must be at least 1"));
    }
    let (history, _) = rwmh_chain(target, burn_in + m, burn_in, rng)?;
    let points = match subsample {
        None | Some(1) => history,
        Some(0) => return Err(Error::invalid("subsample stride must be at least 1")),
        Some(k) => {
            let mut kept = PointCloud::empty(history.dim());
            for p in history.iter().skip(k - 1).step_by(k) {
                kept.push(p)?;
            }
            kept
        }
    };
    if points.is_empty() {
        return Err(Error::invalid("subsample stride exceeds the chain length"));
    }
    WeightedSample::uniform(points)
}

/// Uniform weights over `m` states drawn i.i.d. (with replacement) from the
/// post-burn-in history of a chain of `burn_in + history_len` steps.
pub fn build_background_mcmc_iid(
    target: &TargetDensity,
    m: usize,
    history_len: usize,
    burn_in: usize,
    rng: RngStream,
) -> Result<WeightedSample> {
    if m == 0 || history_len == 0 {
        return Err(Error::invalid("background size must be at least 1"));
    }
    let (history, _) = rwmh_chain(target, burn_in + history_len, burn_in, rng)?;
    let mut pick = rng.child("iid-subsample").rng();
    let mut kept = PointCloud::empty(history.dim());
    for _ in 0..m {
        kept.push(history.point(pick.gen_range(0..history.len())))?;
    }
    WeightedSample::uniform(kept)
}

/// Starting point of a MALA chain.
#[derive(Debug, Clone)]
pub enum MalaInit {
    Given(ParticleConfiguration),
    /// `n` background atoms drawn i.i.d. by weight, each moved by
    /// `N(0, jitter^2 I_d)`.
    BackgroundSubsample { jitter: f64 },
}

impl MalaInit {
    /// Background subsample with jitter `0.01 R`.
    pub fn background_subsample(radius: f64) -> Self {
        MalaInit::BackgroundSubsample { jitter: 0.01 * radius }
    }
}

/// Serializable generator position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string (it is a 128-bit value).
    pub word_pos: String,
}

/// Snapshot of a MALA chain: configuration plus a JSON sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub configuration: ParticleConfiguration,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub step_size: f64,
    pub rng_state: RngState,
}

impl Checkpoint {
    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.configuration.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json())?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let csv = std::fs::read_to_string(dir.join(format!("{stem}.csv")))?;
        let json = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
        Self::from_parts(&csv, &json)
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.meta).expect("checkpoint metadata serializes") + "\n"
    }

    pub fn from_parts(csv: &str, json: &str) -> Result<Self> {
        let configuration = PointCloud::from_csv(csv)?;
        let meta: CheckpointMeta =
            serde_json::from_str(json).map_err(|e| Error::parse(format!("checkpoint sidecar: {e}")))?;
        if !(meta.step_size > 0.0 && meta.step_size.is_finite()) {
            return Err(Error::parse("checkpoint sidecar: step_size must be positive"));
        }
        meta.rng_state
            .word_pos
            .parse::<u128>()
            .map_err(|_| Error::parse("checkpoint sidecar: bad word_pos"))?;
        Ok(Self { configuration, meta })
    }
}

/// Metropolis-adjusted Langevin chain on `(R^d)^n` targeting
/// `exp(-beta_n H_n)`.
///
/// Proposal `y' ~ N(y - alpha beta_n grad H(y), 2 alpha I)` with
/// `alpha = alpha0 / beta_n`. `alpha0` is adapted over the first `T/5`
/// steps and frozen afterwards.
pub struct MalaChain<'a, K: Kernel, V: Confinement> {
    cfg: &'a GibbsConfig<K, V>,
    state: Vec<f64>,
    energy: f64,
    grad: Vec<f64>,
    adapter: LogStepAdapter,
    rng: ChaCha8Rng,
    stream: RngStream,
    step: usize,
    adapt_steps: usize,
    accepted: u64,
    proposed: u64,
    proposal: Vec<f64>,
}

impl<'a, K: Kernel, V: Confinement> MalaChain<'a, K, V> {
    pub fn new(
        cfg: &'a GibbsConfig<K, V>,
        total_steps: usize,
        alpha0: f64,
        rng: RngStream,
        init: MalaInit,
    ) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("MALA needs at least one step"));
        }
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::invalid("alpha0 must be positive"));
        }
        let mut gen = rng.rng();
        let start = match init {
            MalaInit::Given(x) => x,
            MalaInit::BackgroundSubsample { jitter } => {
                let bg = cfg.potential().background().ok_or_else(|| {
                    Error::InvalidInitialConfiguration("potential has no background to subsample".into())
                })?;
                subsample_with_jitter(bg, cfg.n(), jitter, &mut gen)?
            }
        };
        Self::from_state(cfg, start, total_steps, alpha0, rng, gen, 0)
    }

    fn from_state(
        cfg: &'a GibbsConfig<K, V>,
        start: ParticleConfiguration,
        total_steps: usize,
        alpha0: f64,
        stream: RngStream,
        rng: ChaCha8Rng,
        step: usize,
    ) -> Result<Self> {
        if start.dim() != cfg.dim() || start.len() != cfg.n() {
            return Err(Error::InvalidInitialConfiguration(format!(
                "expected {} particles in dimension {}, got {} in dimension {}",
                cfg.n(),
                cfg.dim(),
                start.len(),
                start.dim()
            )));
        }
        let (energy, grad) = match cfg.energy_and_grad(&start) {
            Ok((e, g)) if e.is_finite() && g.iter().all(|v| v.is_finite()) => (e, g),
            Ok(_) | Err(Error::SingularGradient) => {
                return Err(Error::InvalidInitialConfiguration("non-finite energy".into()))
            }
            Err(e) => return Err(e),
        };
        let state = start.into_flat();
        let len = state.len();
        Ok(Self {
            cfg,
            state,
            energy,
            grad,
            adapter: LogStepAdapter::new(alpha0),
            rng,
            stream,
            step,
            adapt_steps: total_steps / 5,
            accepted: 0,
            proposed: 0,
            proposal: vec![0.0; len],
        })
    }

    /// Continues from a checkpoint; `total_steps` must match the original run
    /// so that the adaptation window is the same.
    pub fn resume(cfg: &'a GibbsConfig<K, V>, checkpoint: &Checkpoint, total_steps: usize) -> Result<Self> {
        let meta = &checkpoint.meta;
        let stream = RngStream::new(meta.rng_state.seed, meta.rng_state.stream);
        let mut rng = stream.rng();
        let pos: u128 = meta
            .rng_state
            .word_pos
            .parse()
            .map_err(|_| Error::parse("checkpoint sidecar: bad word_pos"))?;
        rng.set_word_pos(pos);
        Self::from_state(
            cfg,
            checkpoint.configuration.clone(),
            total_steps,
            meta.step_size,
            stream,
            rng,
            meta.step,
        )
    }

    /// Current `alpha0`.
    pub fn step_size(&self) -> f64 {
        self.adapter.step()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn state(&self) -> ParticleConfiguration {
        PointCloud::from_flat(self.cfg.dim(), self.state.clone()).expect("chain state is finite")
    }

    /// One MALA transition. Returns whether the proposal was accepted.
    pub fn step(&mut self) -> Result<bool> {
        let alpha0 = self.adapter.step();
        let beta = self.cfg.beta();
        let alpha = alpha0 / beta;
        let sd = (2.0 * alpha).sqrt();
        for ((p, y), g) in self.proposal.iter_mut().zip(&self.state).zip(&self.grad) {
            let z: f64 = self.rng.sample(StandardNormal);
            *p = y - alpha0 * g + sd * z;
        }
        let u: f64 = self.rng.gen();

        let candidate = PointCloud::from_flat(self.cfg.dim(), self.proposal.clone());
        let evaluated = match candidate {
            Ok(c) => match self.cfg.energy_and_grad(&c) {
                Ok(pair) => Some(pair),
                Err(Error::SingularGradient) => None,
                Err(e) => return Err(e),
            },
            Err(Error::NonFinite { .. }) => None,
            Err(e) => return Err(e),
        };
        let (a, new) = match evaluated {
            Some((e_new, g_new)) if e_new.is_finite() && g_new.iter().all(|v| v.is_finite()) => {
                // log q(y | y') - log q(y' | y), both with variance 2 alpha.
                let mut fwd = 0.0;
                let mut bwd = 0.0;
                for i in 0..self.state.len() {
                    let f = self.proposal[i] - self.state[i] + alpha0 * self.grad[i];
                    let b = self.state[i] - self.proposal[i] + alpha0 * g_new[i];
                    fwd += f * f;
                    bwd += b * b;
                }
                let log_q = (fwd - bwd) / (4.0 * alpha);
                let log_ratio = -beta * (e_new - self.energy) + log_q;
                (acceptance_probability(log_ratio), Some((e_new, g_new)))
            }
            _ => (0.0, None),
        };
        let accept = u < a;
        if accept {
            let (e_new, g_new) = new.expect("accepted proposals have finite energy");
            std::mem::swap(&mut self.state, &mut self.proposal);
            self.energy = e_new;
            self.grad = g_new;
        }
        if self.step < self.adapt_steps {
            self.adapter.update(a);
        } else {
            self.proposed += 1;
            self.accepted += u64::from(accept);
        }
        self.step += 1;
        Ok(accept)
    }

    /// Runs until `total` steps have been taken in all.
    pub fn run_to(&mut self, total: usize) -> Result<()> {
        while self.step < total {
            self.step()?;
        }
        Ok(())
    }

    pub fn diagnostics(&self) -> ChainDiagnostics {
        ChainDiagnostics::new(self.accepted, self.proposed, self.step, self.adapter.step())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            configuration: self.state(),
            meta: CheckpointMeta {
                step: self.step,
                step_size: self.adapter.step(),
                rng_state: RngState {
                    seed: self.stream.seed,
                    stream: self.stream.stream_id,
                    word_pos: self.rng.get_word_pos().to_string(),
                },
            },
        }
    }
}

fn subsample_with_jitter<R: Rng>(
    background: &WeightedSample,
    n: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<ParticleConfiguration> {
    let index = WeightedIndex::new(background.weights())
        .map_err(|e| Error::InvalidInitialConfiguration(format!("background weights: {e}")))?;
    let d = background.dim();
    let mut flat = Vec::with_capacity(n * d);
    for _ in 0..n {
        let atom = background.points().point(index.sample(rng));
        for &c in atom {
            let z: f64 = rng.sample(StandardNormal);
            flat.push(c + jitter * z);
        }
    }
    PointCloud::from_flat(d, flat)
}

/// Runs a MALA chain for `T` steps and returns its final state.
pub fn mala_gibbs<K: Kernel, V: Confinement>(
    cfg: &GibbsConfig<K, V>,
    t: usize,
    alpha0: f64,
    rng: RngStream,
    init: MalaInit,
) -> Result<(ParticleConfiguration, ChainDiagnostics)> {
    let mut chain = MalaChain::new(cfg, t, alpha0, rng, init)?;
    chain.run_to(t)?;
    Ok((chain.state(), chain.diagnostics()))
}

/// Default initial `alpha0` for MALA runs.
pub const DEFAULT_ALPHA0: f64 = 1e-3;

/// Final state of a Coulomb gas with the quadratic potential whose
/// equilibrium measure is uniform on the ball, started from `n` uniform
/// points in the ball.
pub fn coulomb_gas_sample(
    eq: &EquilibriumSpec,
    n: usize,
    schedule: BetaSchedule,
    t: usize,
    rng: RngStream,
) -> Result<(ParticleConfiguration, ChainDiagnostics)> {
    let d = eq.dim();
    let cfg = GibbsConfig::new(
        n,
        schedule,
        KernelSpec::Coulomb { d },
        QuadraticPotential::for_equilibrium(eq),
    )?;
    let mut init_rng = rng.child("init").rng();
    let mut flat = Vec::with_capacity(n * d);
    for _ in 0..n {
        flat.extend(uniform_in_ball(&mut init_rng, d, eq.radius()));
    }
    let init = PointCloud::from_flat(d, flat)?;
    mala_gibbs(&cfg, t, DEFAULT_ALPHA0, rng, MalaInit::Given(init))
}

/// Coulomb-gas nodes reweighted toward `target` with weights
/// `pi(x) / mu_V(x)`.
pub fn build_background_coulomb(
    eq: &EquilibriumSpec,
    target: &TargetDensity,
    n: usize,
    schedule: BetaSchedule,
    t: usize,
    rng: RngStream,
) -> Result<WeightedSample> {
    target.validate()?;
    if target.dim() != eq.dim() {
        return Err(Error::DimensionMismatch {
            expected: eq.dim(),
            found: target.dim(),
        });
    }
    if target.support_radius() > eq.radius() {
        return Err(Error::TargetEscapesSupport {
            support: target.support_radius(),
            radius: eq.radius(),
        });
    }
    let (nodes, diag) = coulomb_gas_sample(eq, n, schedule, t, rng)?;
    log::debug!(
        "coulomb gas n={n}: acceptance {:.3}, alpha0 {}",
        diag.acceptance_rate,
        fmt_full(diag.final_step_size)
    );
    importance_weights(&nodes, target, eq)
}
