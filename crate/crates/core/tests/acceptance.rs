//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 10`.

mod common;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{column, ess, mean, separated_points, uniform_in_ball, variance, weighted};
use gibbsquad::config::{preset, ExperimentConfig};
use gibbsquad::diagnostics::{
    interaction_energy, smeared_coulomb_energy, worst_case_error, worst_case_error_sq, DiagonalConvention,
};
use gibbsquad::experiments::run;
use gibbsquad::gibbs::BetaSchedule;
use gibbsquad::measures::{as_signed_difference, importance_weights, Density};
use gibbsquad::potentials::{analytic_uniform_ball_potential, QuadraticPotential, QuenchedPotential};
use gibbsquad::samplers::{rwmh_chain, MalaChain, MalaInit};
use gibbsquad::targets::{synthesize_classification_data, EquilibriumSpec};
use gibbsquad::{Experiment, GibbsConfig, Kernel, KernelSpec, PointCloud, RngStream, TargetDensity};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

const HARNESS_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn riesz() -> KernelSpec {
    KernelSpec::RieszRegularized { s: 1.0, eps: 0.1 }
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let atoms: Vec<Vec<f64>> = (0..50).map(|_| uniform_in_ball(&mut rng, 3, 1.0)).collect();
    let bg = gibbsquad::measures::uniform_empirical(&atoms).unwrap();
    let pot = QuenchedPotential::new(bg, riesz(), 1.0).unwrap();
    let cfg = GibbsConfig::new(20, BetaSchedule::n_squared(), riesz(), pot).unwrap();
    // Some particles outside the confinement ball so the penalty is exercised.
    let flat: Vec<f64> = (0..20).flat_map(|_| uniform_in_ball(&mut rng, 3, 1.3)).collect();
    let x = PointCloud::from_flat(3, flat.clone()).unwrap();
    let grad = gibbsquad::gibbs::hnq_grad(&cfg, &x).unwrap();
    let h = 1e-6;
    let mut fd = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let ep = cfg.energy(&PointCloud::from_flat(3, plus).unwrap()).unwrap();
        let em = cfg.energy(&PointCloud::from_flat(3, minus).unwrap()).unwrap();
        fd.push((ep - em) / (2.0 * h));
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = grad
        .as_flat()
        .iter()
        .zip(&fd)
        .map(|(g, f)| (g - f).abs() / f.abs().max(1e-3 * scale))
        .fold(0.0f64, f64::max);
    outcome(rel < 1e-5, format!("max relative error {rel:.2e} (< 1e-5)"))
}

struct ZeroKernel;

impl Kernel for ZeroKernel {
    fn radial(&self, _r2: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
    fn diag_sup(&self) -> f64 {
        0.0
    }
}

fn sampler_calibration() -> Outcome {
    let mut worst_var: f64 = 0.0;
    for seed in 0..3 {
        let cfg = GibbsConfig::new(1, BetaSchedule::n_squared(), ZeroKernel, QuadraticPotential::new(3, 0.5)).unwrap();
        let total = 50_000;
        let init = MalaInit::Given(PointCloud::from_flat(3, vec![0.0; 3]).unwrap());
        let mut chain = MalaChain::new(&cfg, total, 0.5, RngStream::new(seed, 2), init).unwrap();
        chain.run_to(total / 5).unwrap();
        let mut draws = vec![Vec::new(); 3];
        while chain.steps_taken() < total {
            chain.step().unwrap();
            for (k, d) in draws.iter_mut().enumerate() {
                d.push(chain.state().point(0)[k]);
            }
        }
        for d in &draws {
            worst_var = worst_var.max((variance(d) - 1.0).abs());
        }
    }
    let target = TargetDensity::truncated_gaussian(3, 0.5).unwrap();
    let (mut acc_lo, mut acc_hi, mut worst_z) = (1.0f64, 0.0f64, 0.0f64);
    for seed in 0..10 {
        let (h, diag) = rwmh_chain(&target, 22_000, 2_000, RngStream::new(seed, 3)).unwrap();
        acc_lo = acc_lo.min(diag.acceptance_rate);
        acc_hi = acc_hi.max(diag.acceptance_rate);
        for k in 0..3 {
            let x = column(&h, k);
            let se = (variance(&x) / ess(&x)).sqrt();
            worst_z = worst_z.max(mean(&x).abs() / se);
        }
    }
    let pass = worst_var < 0.1 && acc_lo >= 0.35 && acc_hi <= 0.65 && worst_z < 4.0;
    outcome(
        pass,
        format!(
            "MALA |var-1| max {worst_var:.3} (< 0.1); RWMH acceptance in [{acc_lo:.3}, {acc_hi:.3}] (within [0.35, 0.65]); max |mean|/se {worst_z:.2} (< 4)"
        ),
    )
}

fn energy_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    let mut atomic_violations = 0;
    let mut checks = 0;
    for trial in 0..200 {
        let m = rng.gen_range(2..25);
        let k = rng.gen_range(2..25);
        let mu_pts = separated_points(&mut rng, m, 3, 1e-3, &[]);
        let nu_pts = separated_points(&mut rng, k, 3, 1e-3, &mu_pts);
        let diff = as_signed_difference(&weighted(&mut rng, &mu_pts), &weighted(&mut rng, &nu_pts)).unwrap();
        let gap = diff.points().min_pairwise_distance();
        let coulomb = smeared_coulomb_energy(3, &diff, 0.5 * gap).unwrap();
        let coulomb_atomic =
            interaction_energy(&KernelSpec::Coulomb { d: 3 }, &diff, DiagonalConvention::OffDiagonal).unwrap();
        let zeta = [0.01, 0.05][trial % 2];
        let n = [10, 100][(trial / 2) % 2];
        let reg = interaction_energy(
            &KernelSpec::CoulombRegularized { d: 3, zeta, n },
            &diff,
            DiagonalConvention::Include,
        )
        .unwrap();
        checks += 1;
        if reg > coulomb + 1e-10 {
            violations += 1;
        }
        let reg_off = interaction_energy(
            &KernelSpec::CoulombRegularized { d: 3, zeta, n },
            &diff,
            DiagonalConvention::OffDiagonal,
        )
        .unwrap();
        if reg_off > coulomb_atomic + 1e-10 {
            atomic_violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations}/{checks} violations of I_Kzeta <= I_g (I_g on the measure smeared over balls of half the minimum gap); \
             informational: atomic off-diagonal form violated {atomic_violations}/{checks}"
        ),
    )
}

fn psd_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut min_sq = f64::INFINITY;
    for trial in 0..200 {
        let kernel = if trial % 2 == 0 {
            KernelSpec::Gaussian {
                bandwidth: rng.gen_range(0.05..2.0),
            }
        } else {
            KernelSpec::RieszRegularized {
                s: 1.0,
                eps: rng.gen_range(0.01..1.0),
            }
        };
        let a: Vec<Vec<f64>> = (0..rng.gen_range(1..40)).map(|_| uniform_in_ball(&mut rng, 3, 1.0)).collect();
        let b: Vec<Vec<f64>> = (0..rng.gen_range(1..40)).map(|_| uniform_in_ball(&mut rng, 3, 1.0)).collect();
        let sq = worst_case_error_sq(&kernel, &weighted(&mut rng, &a), &weighted(&mut rng, &b)).unwrap();
        min_sq = min_sq.min(sq);
    }
    let kernel = KernelSpec::Gaussian { bandwidth: 0.5 };
    let a: Vec<Vec<f64>> = (0..30).map(|_| uniform_in_ball(&mut rng, 3, 1.0)).collect();
    let b: Vec<Vec<f64>> = (0..25).map(|_| uniform_in_ball(&mut rng, 3, 1.0)).collect();
    let (mu, nu) = (weighted(&mut rng, &a), weighted(&mut rng, &b));
    let bound = worst_case_error(worst_case_error_sq(&kernel, &mu, &nu).unwrap());
    let mut worst_slack = f64::INFINITY;
    for _ in 0..20 {
        let z = uniform_in_ball(&mut rng, 3, 1.5);
        let f = |x: &[f64]| {
            let r2: f64 = x.iter().zip(&z).map(|(p, q)| (p - q).powi(2)).sum();
            kernel.value(r2) / kernel.value(0.0).sqrt()
        };
        worst_slack = worst_slack.min(bound + 1e-8 - (mu.integrate(f) - nu.integrate(f)).abs());
    }
    outcome(
        min_sq >= -1e-10 && worst_slack >= 0.0,
        format!("min squared error {min_sq:.3e} (>= -1e-10); min duality slack {worst_slack:.3e} (>= 0)"),
    )
}

struct Scaled<'a>(f64, &'a TargetDensity);

impl Density for Scaled<'_> {
    fn dim(&self) -> usize {
        self.1.dim()
    }
    fn density(&self, x: &[f64]) -> f64 {
        self.0 * self.1.density(x)
    }
}

fn importance_weight_checks() -> Outcome {
    let eq = EquilibriumSpec::quadratic_coulomb(3, 3.0).unwrap();
    let data = synthesize_classification_data(50, 10, 4.0, 7);
    let targets = [
        TargetDensity::truncated_gaussian(3, 0.5).unwrap(),
        TargetDensity::uniform_ball(3, 1.0).unwrap(),
        TargetDensity::logistic_posterior(&data, 0.5).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cloud = PointCloud::from_points(&(0..500).map(|_| uniform_in_ball(&mut rng, 3, 3.0)).collect::<Vec<_>>()).unwrap();
    let (mut sum_err, mut bad_zero, mut scale_err) = (0.0f64, 0usize, 0.0f64);
    for t in &targets {
        let w = importance_weights(&cloud, t, &eq).unwrap();
        sum_err = sum_err.max((w.weights().iter().sum::<f64>() - 1.0).abs());
        for (p, wi) in w.iter() {
            if (t.density(p) == 0.0) != (wi == 0.0) {
                bad_zero += 1;
            }
        }
        for c in [1e-6, 0.5, 3.0, 1e6] {
            let ws = importance_weights(&cloud, &Scaled(c, t), &eq).unwrap();
            for (a, b) in ws.weights().iter().zip(w.weights()) {
                scale_err = scale_err.max((a - b).abs());
            }
        }
    }
    outcome(
        sum_err < 1e-12 && bad_zero == 0 && scale_err < 1e-12,
        format!("sum error {sum_err:.1e}; {bad_zero} misplaced zeros; rescaling error {scale_err:.1e}"),
    )
}

fn medians(out: &gibbsquad::experiments::RunOutput, metric: &str, method: &str, ns: &[usize]) -> Vec<f64> {
    ns.iter()
        .map(|&n| out.report.aggregate(metric, method, n, "median").expect("median"))
        .collect()
}

fn potential_convergence() -> Outcome {
    let cfg = ExperimentConfig::parse(preset("potential-desk").unwrap()).unwrap();
    let out = run(&cfg).unwrap();
    let a = medians(&out, "sup_error", "coulomb", &cfg.ns);
    let monotone = a.windows(2).all(|w| w[1] <= 1.2 * w[0]);
    let halved = a[a.len() - 1] < 0.5 * a[0];
    outcome(
        monotone && halved,
        format!(
            "median A_n at n = {:?}: {:?}; non-increasing within 20%: {monotone}; A_last < 0.5 A_first: {halved} (ratio {:.3})",
            cfg.ns,
            a.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            a[a.len() - 1] / a[0]
        ),
    )
}

fn mmd_decay() -> Outcome {
    let base = ExperimentConfig::parse(preset("mmd-decay-desk").unwrap()).unwrap();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in HARNESS_SEEDS {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let out = run(&cfg).unwrap();
        let ok = cfg.ns.iter().all(|&n| {
            let g = out.report.aggregate("shifted_energy", "gibbs", n, "quantile_90").unwrap();
            let m = out.report.aggregate("shifted_energy", "mcmc", n, "quantile_90").unwrap();
            g < m
        });
        wins += usize::from(ok);
        lines.push(format!("seed {seed}: {}", if ok { "gibbs below" } else { "not below" }));
    }
    outcome(wins >= 4, format!("{wins}/5 seeds with gibbs q90 < mcmc q90 at every n ({})", lines.join(", ")))
}

fn bayes_coverage() -> Outcome {
    let base = ExperimentConfig::parse(preset("bayes-desk").unwrap()).unwrap();
    let mut wins = 0;
    for seed in HARNESS_SEEDS {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let out = run(&cfg).unwrap();
        let ok = cfg.deltas.iter().all(|d| {
            let stat = format!("delta={d}");
            let g = out.report.aggregate("coverage", "gibbs", 100, &stat).unwrap();
            let m = out.report.aggregate("coverage", "mcmc", 100, &stat).unwrap();
            g >= m
        });
        wins += usize::from(ok);
    }
    outcome(wins >= 4, format!("{wins}/5 seeds with gibbs n=100 coverage >= mcmc n=100 at every delta"))
}

fn small_config(experiment: Experiment) -> ExperimentConfig {
    let mut cfg = match experiment {
        Experiment::PotentialConvergence => {
            let mut c = ExperimentConfig::parse(preset("potential-desk").unwrap()).unwrap();
            c.ns = vec![16, 32];
            c.replicates = 2;
            c.background = gibbsquad::config::BackgroundSpec::Coulomb { radius: 1.0, steps: 40 };
            c.grid.pts_per_axis = 8;
            c
        }
        Experiment::BayesClassify => {
            let mut c = ExperimentConfig::parse(preset("bayes-desk").unwrap()).unwrap();
            c.ns = vec![20];
            c.mcmc_ns = vec![20, 100];
            c.replicates = 3;
            c.steps = 40;
            c.reference_steps = 2000;
            c.background = gibbsquad::config::BackgroundSpec::Mcmc {
                m: 100,
                burn_in: 100,
                thin: 1,
                pool: Some(400),
            };
            c
        }
        _ => ExperimentConfig::parse(preset("smoke").unwrap()).unwrap(),
    };
    cfg.experiment = experiment;
    cfg
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn determinism() -> Outcome {
    let mut failures = Vec::new();
    let mut rows = 0;
    for experiment in Experiment::ALL {
        let cfg = small_config(experiment);
        let a = in_pool(1, || run(&cfg).unwrap());
        let b = in_pool(1, || run(&cfg).unwrap());
        let c = in_pool(3, || run(&cfg).unwrap());
        let same = |x: &gibbsquad::experiments::RunOutput, y: &gibbsquad::experiments::RunOutput| {
            x.report.records_csv() == y.report.records_csv() && x.sidecars == y.sidecars
        };
        rows += a.report.records().len();
        if !same(&a, &b) || !same(&a, &c) {
            failures.push(experiment.name());
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("all 5 experiments byte-identical across reruns and thread counts ({rows} records)")
        } else {
            format!("differing outputs: {failures:?}")
        },
    )
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 40)
}

fn analytic_potential_oracle() -> Outcome {
    let radius = 1.3;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let rho = 3.0 * radius * i as f64 / 49.0;
        // Shell theorem: a unit shell of radius r contributes 1 / max(r, rho).
        let density = 3.0 / radius.powi(3);
        let f = |r: f64| if r == 0.0 { 0.0 } else { density * r * r / r.max(rho) };
        let split = rho.min(radius);
        let oracle = adaptive_simpson(&f, 0.0, split, 1e-13) + adaptive_simpson(&f, split, radius, 1e-13);
        let got = analytic_uniform_ball_potential(radius, &[0.0, rho, 0.0], 3).unwrap();
        worst = worst.max((got - oracle).abs());
    }
    outcome(worst < 1e-8, format!("max deviation {worst:.2e} over 50 radii in [0, 3R] (< 1e-8)"))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient correctness",
            budget: Duration::from_secs(5),
            check: gradient_correctness,
        },
        Criterion {
            id: 2,
            name: "sampler calibration",
            budget: Duration::from_secs(60),
            check: sampler_calibration,
        },
        Criterion {
            id: 3,
            name: "energy dominance",
            budget: Duration::from_secs(10),
            check: energy_dominance,
        },
        Criterion {
            id: 4,
            name: "PSD and duality",
            budget: Duration::from_secs(10),
            check: psd_duality,
        },
        Criterion {
            id: 5,
            name: "importance weights",
            budget: Duration::from_secs(1),
            check: importance_weight_checks,
        },
        Criterion {
            id: 6,
            name: "potential uniform convergence",
            budget: Duration::from_secs(15 * 60),
            check: potential_convergence,
        },
        Criterion {
            id: 7,
            name: "MMD decay ordering",
            budget: Duration::from_secs(30 * 60),
            check: mmd_decay,
        },
        Criterion {
            id: 8,
            name: "Bayesian coverage ordering",
            budget: Duration::from_secs(30 * 60),
            check: bayes_coverage,
        },
        Criterion {
            id: 9,
            name: "determinism",
            budget: Duration::from_secs(10 * 60),
            check: determinism,
        },
        Criterion {
            id: 10,
            name: "analytic potential oracle",
            budget: Duration::from_secs(1),
            check: analytic_potential_oracle,
        },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let in_budget = elapsed <= c.budget;
        let ok = pass && in_budget;
        println!(
            "{} [{}] {}: {} ({:.1} s, budget {} s{})",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_budget { "" } else { ", over budget" }
        );
        let _ = std::io::stdout().flush();
        if !ok {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
