//! Monte Carlo quadrature with low-temperature Gibbs measures.
//!
//! Nodes are drawn from a Gibbs measure whose energy is the kernel
//! discrepancy between the empirical measure of the nodes and a target,
//! with the intractable target embedding replaced by that of a cheap
//! background sample.
//!
//! ```
//! use gibbsquad::potentials::QuenchedPotential;
//! use gibbsquad::samplers::{build_background_mcmc, mala_gibbs, MalaInit, RngStream};
//! use gibbsquad::{BetaSchedule, GibbsConfig, KernelSpec, TargetDensity};
//!
//! let target = TargetDensity::truncated_gaussian(3, 0.5)?;
//! let rng = RngStream::labeled(1, "demo");
//! let bg = build_background_mcmc(&target, 200, 500, None, rng.child("background"))?;
//! let kernel = KernelSpec::RieszRegularized { s: 1.0, eps: 0.1 };
//! let pot = QuenchedPotential::new(bg, kernel.clone(), target.support_radius())?;
//! let cfg = GibbsConfig::new(20, BetaSchedule::n_squared(), kernel, pot)?;
//! let (nodes, diag) = mala_gibbs(&cfg, 200, 1e-3, rng.child("mala"), MalaInit::background_subsample(1.0))?;
//! assert_eq!(nodes.len(), 20);
//! assert!(diag.acceptance_rate > 0.0);
//! # Ok::<(), gibbsquad::Error>(())
//! ```

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod kernels;
pub mod measures;
pub mod potentials;
pub mod samplers;
pub mod spec_string;
pub mod targets;

pub use config::{ExperimentConfig, Experiment, Method};
pub use error::{Error, Result};
pub use gibbs::{BetaSchedule, GibbsConfig, ParticleConfiguration};
pub use kernels::{Kernel, KernelSpec};
pub use measures::{PointCloud, SignedAtomicMeasure, WeightedSample};
pub use samplers::RngStream;
pub use targets::{EquilibriumSpec, TargetDensity};
