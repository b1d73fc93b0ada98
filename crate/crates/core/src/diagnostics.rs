//! Interaction energies, worst-case integration error, replicate statistics
//! and the report written by the experiment harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::measures::{fmt_full, squared_distance, SignedAtomicMeasure, WeightedSample};

/// Smallest separation accepted between atoms under a singular kernel.
pub const MIN_ATOM_GAP: f64 = 1e-12;

/// Whether `i = j` terms enter a double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalConvention {
    Include,
    OffDiagonal,
}

/// `sum_{i,j} c_i c_j K(x_i, x_j)`.
///
/// Singular kernels require [`DiagonalConvention::OffDiagonal`] and atoms at
/// least [`MIN_ATOM_GAP`] apart.
pub fn interaction_energy<K: Kernel>(
    kernel: &K,
    m: &SignedAtomicMeasure,
    convention: DiagonalConvention,
) -> Result<f64> {
    let singular = kernel.is_singular();
    if singular && convention == DiagonalConvention::Include {
        return Err(Error::SingularKernel(
            "diagonal terms are infinite; use the off-diagonal convention".into(),
        ));
    }
    let pts = m.points();
    let c = m.charges();
    let gap2 = MIN_ATOM_GAP * MIN_ATOM_GAP;
    // Row sums in parallel, combined in index order so the result does not
    // depend on the thread count.
    let rows: Vec<Result<f64>> = (0..m.len())
        .into_par_iter()
        .map(|i| {
            let xi = pts.point(i);
            let mut acc = 0.0;
            for j in (i + 1)..m.len() {
                let r2 = squared_distance(xi, pts.point(j));
                if singular && r2 < gap2 {
                    return Err(Error::SingularKernel(format!(
                        "atoms {i} and {j} closer than {MIN_ATOM_GAP:e}"
                    )));
                }
                acc += c[j] * kernel.value(r2);
            }
            let diag = match convention {
                DiagonalConvention::Include => c[i] * kernel.value(0.0),
                DiagonalConvention::OffDiagonal => 0.0,
            };
            Ok(c[i] * (2.0 * acc + diag))
        })
        .collect();
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok(total)
}

/// `sum_{i,j} a_i b_j K(x_i, y_j)` for weighted samples.
pub fn cross_energy<K: Kernel>(kernel: &K, a: &WeightedSample, b: &WeightedSample) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let rows: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let xi = a.points().point(i);
            let s: f64 = b
                .iter()
                .map(|(y, w)| w * kernel.value(squared_distance(xi, y)))
                .sum();
            a.weights()[i] * s
        })
        .collect();
    Ok(rows.iter().sum())
}

fn self_energy<K: Kernel>(kernel: &K, a: &WeightedSample) -> Result<f64> {
    interaction_energy(kernel, &SignedAtomicMeasure::from(a), DiagonalConvention::Include)
}

/// Reference measure with its self-energy computed once, for repeated
/// worst-case error evaluations.
#[derive(Debug, Clone)]
pub struct MmdReference<K> {
    kernel: K,
    reference: WeightedSample,
    self_energy: f64,
}

impl<K: Kernel> MmdReference<K> {
    pub fn new(kernel: K, reference: WeightedSample) -> Result<Self> {
        if kernel.is_singular() {
            return Err(Error::UnboundedKernel);
        }
        let self_energy = self_energy(&kernel, &reference)?;
        Ok(Self {
            kernel,
            reference,
            self_energy,
        })
    }

    pub fn reference(&self) -> &WeightedSample {
        &self.reference
    }

    /// `I_K(ref)`.
    pub fn reference_energy(&self) -> f64 {
        self.self_energy
    }

    /// `I_K(mu) - 2 I_K(mu, ref)`, the squared error shifted by `-I_K(ref)`.
    pub fn shifted(&self, mu: &WeightedSample) -> Result<f64> {
        Ok(self_energy(&self.kernel, mu)? - 2.0 * cross_energy(&self.kernel, mu, &self.reference)?)
    }

    /// `I_K(mu) - 2 I_K(mu, ref) + I_K(ref)`.
    pub fn worst_case_error_sq(&self, mu: &WeightedSample) -> Result<f64> {
        Ok(self.shifted(mu)? + self.self_energy)
    }
}

/// Squared maximum mean discrepancy between `mu` and `reference`.
pub fn worst_case_error_sq<K: Kernel>(kernel: &K, mu: &WeightedSample, reference: &WeightedSample) -> Result<f64> {
    if kernel.is_singular() {
        return Err(Error::UnboundedKernel);
    }
    Ok(self_energy(kernel, mu)? - 2.0 * cross_energy(kernel, mu, reference)? + self_energy(kernel, reference)?)
}

/// Square root of a squared discrepancy, clipping round-off negatives to 0.
pub fn worst_case_error(sq: f64) -> f64 {
    sq.max(0.0).sqrt()
}

/// Coulomb energy `I_g` of the measure obtained by spreading each atom
/// uniformly over a ball of radius `a`, in dimension `d >= 3`.
///
/// Exact when all atoms are at least `2a` apart: disjoint uniform balls
/// interact like point charges, and a ball of radius `a` has self-energy
/// `2d / ((d + 2) a^{d-2})`.
pub fn smeared_coulomb_energy(d: usize, m: &SignedAtomicMeasure, a: f64) -> Result<f64> {
    if d < 3 || m.dim() != d {
        return Err(Error::invalid("smeared Coulomb energy needs d >= 3 matching the atoms"));
    }
    if !(a > 0.0) {
        return Err(Error::invalid("smearing radius must be positive"));
    }
    let pts = m.points();
    let c = m.charges();
    let p = (d - 2) as f64;
    let mut total = 0.0;
    for i in 0..m.len() {
        let mut acc = 0.0;
        for j in (i + 1)..m.len() {
            let r = squared_distance(pts.point(i), pts.point(j)).sqrt();
            if r < 2.0 * a {
                return Err(Error::invalid("smearing balls overlap"));
            }
            acc += c[j] * r.powf(-p);
        }
        total += c[i] * (2.0 * acc + c[i] * 2.0 * d as f64 / ((d as f64 + 2.0) * a.powf(p)));
    }
    Ok(total)
}

/// Unbiased sample variance.
///
/// Fails with [`Error::TooFewReplicates`] on fewer than two values.
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::TooFewReplicates(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Variance across replicates of the weighted mean `sum_i w_i f(x_i)`.
pub fn variance_linear_statistic(replicates: &[WeightedSample], f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let means: Vec<f64> = replicates.iter().map(|s| s.integrate(&f)).collect();
    sample_variance(&means)
}

/// Fraction of replicates whose estimates all lie within `delta` of the
/// references.
pub fn simultaneous_coverage(estimates: &[Vec<f64>], references: &[f64], delta: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::TooFewReplicates(0));
    }
    let mut hits = 0usize;
    for row in estimates {
        if row.len() != references.len() {
            return Err(Error::DimensionMismatch {
                expected: references.len(),
                found: row.len(),
            });
        }
        if max_abs_error(row, references) <= delta {
            hits += 1;
        }
    }
    Ok(hits as f64 / estimates.len() as f64)
}

/// `max_j |a_j - b_j|`.
pub fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Lower empirical quantile: the order statistic at index `ceil(qN) - 1`,
/// clamped to the sample.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("quantile order must lie in [0, 1]"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in quantile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).saturating_sub(1);
    Ok(sorted[idx.min(sorted.len() - 1)])
}

/// Median, averaging the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    })
}

/// Gaussian confidence interval for a proportion `p` estimated from
/// `replicates` trials, Bonferroni-corrected for `comparisons` intervals at
/// overall level `level`. Clipped to `[0, 1]`.
pub fn bonferroni_interval(p: f64, replicates: usize, comparisons: usize, level: f64) -> Result<(f64, f64)> {
    if replicates == 0 || comparisons == 0 || !(0.0 < level && level < 1.0) {
        return Err(Error::invalid("confidence interval: bad arguments"));
    }
    let alpha = (1.0 - level) / comparisons as f64;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha / 2.0);
    let half = z * (p * (1.0 - p) / replicates as f64).sqrt();
    Ok(((p - half).max(0.0), (p + half).min(1.0)))
}

/// One per-replicate measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub metric: String,
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub value: f64,
}

/// One summary statistic of a group of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub metric: String,
    pub method: String,
    pub n: usize,
    pub stat: String,
    pub value: f64,
}

/// Per-replicate records and their summaries.
///
/// Every `(metric, method, n)` group gets `mean`, `median`, `quantile_90`
/// and (with two or more records) `variance`. Extra aggregates, such as
/// coverage proportions, can be attached with [`DiagnosticsReport::add_aggregate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsReport {
    records: Vec<Record>,
    extra: Vec<Aggregate>,
}

pub const RECORDS_HEADER: &str = "metric,method,n,seed,value";
pub const AGGREGATES_HEADER: &str = "metric,method,n,stat,value";

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.contains([',', '\n', '\r', '"']) {
        Err(Error::invalid(format!("label `{label}` must be nonempty without commas or quotes")))
    } else {
        Ok(())
    }
}

impl DiagnosticsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, metric: &str, method: &str, n: usize, seed: u64, value: f64) -> Result<()> {
        check_label(metric)?;
        check_label(method)?;
        self.records.push(Record {
            metric: metric.into(),
            method: method.into(),
            n,
            seed,
            value,
        });
        Ok(())
    }

    pub fn add_aggregate(&mut self, metric: &str, method: &str, n: usize, stat: &str, value: f64) -> Result<()> {
        check_label(metric)?;
        check_label(method)?;
        check_label(stat)?;
        self.extra.push(Aggregate {
            metric: metric.into(),
            method: method.into(),
            n,
            stat: stat.into(),
            value,
        });
        Ok(())
    }

    pub fn extend(&mut self, other: DiagnosticsReport) {
        self.records.extend(other.records);
        self.extra.extend(other.extra);
    }

    /// Records in canonical order.
    pub fn records(&self) -> Vec<Record> {
        let mut r = self.records.clone();
        r.sort_by(|a, b| {
            (&a.metric, &a.method, a.n, a.seed)
                .cmp(&(&b.metric, &b.method, b.n, b.seed))
                .then(a.value.total_cmp(&b.value))
        });
        r
    }

    /// Values of one `(metric, method, n)` group in canonical order.
    pub fn values(&self, metric: &str, method: &str, n: usize) -> Vec<f64> {
        self.records()
            .into_iter()
            .filter(|r| r.metric == metric && r.method == method && r.n == n)
            .map(|r| r.value)
            .collect()
    }

    /// Summary statistics, in canonical order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
        for r in self.records() {
            groups.entry((r.metric, r.method, r.n)).or_default().push(r.value);
        }
        let mut out = self.extra.clone();
        for ((metric, method, n), values) in groups {
            let mut stat = |name: &str, value: f64| {
                out.push(Aggregate {
                    metric: metric.clone(),
                    method: method.clone(),
                    n,
                    stat: name.into(),
                    value,
                })
            };
            let finite = !values.iter().any(|v| v.is_nan());
            stat("mean", values.iter().sum::<f64>() / values.len() as f64);
            if finite {
                stat("median", median(&values).expect("nonempty group"));
                stat("quantile_90", quantile(&values, 0.9).expect("nonempty group"));
            }
            if let Ok(v) = sample_variance(&values) {
                stat("variance", v);
            }
        }
        out.sort_by(|a, b| (&a.metric, &a.method, a.n, &a.stat).cmp(&(&b.metric, &b.method, b.n, &b.stat)));
        out
    }

    pub fn aggregate(&self, metric: &str, method: &str, n: usize, stat: &str) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.metric == metric && a.method == method && a.n == n && a.stat == stat)
            .map(|a| a.value)
    }

    pub fn records_csv(&self) -> String {
        let mut out = format!("{RECORDS_HEADER}\n");
        for r in self.records() {
            let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.method, r.n, r.seed, fmt_full(r.value));
        }
        out
    }

    pub fn aggregates_csv(&self) -> String {
        let mut out = format!("{AGGREGATES_HEADER}\n");
        for a in self.aggregates() {
            let _ = writeln!(out, "{},{},{},{},{}", a.metric, a.method, a.n, a.stat, fmt_full(a.value));
        }
        out
    }

    /// Parses the records CSV. Aggregates are recomputed, not read.
    pub fn from_records_csv(text: &str) -> Result<Self> {
        let mut report = Self::new();
        for (line_no, fields) in csv_rows(text, RECORDS_HEADER)? {
            let [metric, method, n, seed, value] = fields[..] else {
                return Err(Error::parse(format!("line {line_no}: expected 5 fields")));
            };
            report.push(
                metric,
                method,
                parse_field(n, line_no)?,
                parse_field(seed, line_no)?,
                parse_value(value, line_no)?,
            )?;
        }
        Ok(report)
    }

    /// Parses an aggregates CSV.
    pub fn parse_aggregates_csv(text: &str) -> Result<Vec<Aggregate>> {
        let mut out = Vec::new();
        for (line_no, fields) in csv_rows(text, AGGREGATES_HEADER)? {
            let [metric, method, n, stat, value] = fields[..] else {
                return Err(Error::parse(format!("line {line_no}: expected 5 fields")));
            };
            for label in [metric, method, stat] {
                check_label(label).map_err(|e| Error::Parse(format!("line {line_no}: {e}")))?;
            }
            out.push(Aggregate {
                metric: metric.into(),
                method: method.into(),
                n: parse_field(n, line_no)?,
                stat: stat.into(),
                value: parse_value(value, line_no)?,
            });
        }
        Ok(out)
    }
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(Error::parse(format!("expected header `{header}`"))),
    }
    Ok(lines
        .map(|(i, l)| (i + 1, l.trim().split(',').map(str::trim).collect()))
        .collect())
}

fn parse_field<T: std::str::FromStr>(raw: &str, line_no: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(format!("line {line_no}: bad integer `{raw}`")))
}

fn parse_value(raw: &str, line_no: usize) -> Result<f64> {
    // Values may be NaN or infinite (e.g. a diverged replicate).
    raw.parse()
        .map_err(|_| Error::parse(format!("line {line_no}: bad number `{raw}`")))
}
