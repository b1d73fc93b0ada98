//! Finitely supported measures on R^d.
//!
//! Every empirical, background or quadrature measure in the crate is a
//! [`WeightedSample`]: atoms stored row-major in a [`PointCloud`] plus
//! nonnegative weights summing to one. Signed combinations used for energy
//! evaluation live in [`SignedAtomicMeasure`].

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A single point of R^d.
pub type Point = Vec<f64>;

/// Anything that can be evaluated as an unnormalized density on R^d.
pub trait Density {
    fn dim(&self) -> usize;
    /// Unnormalized density value, `0` outside the support.
    fn density(&self, x: &[f64]) -> f64;
}

/// A list of points of a common dimension, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len() % dim,
            });
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: pos / dim });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySample)?;
        let dim = first.len();
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    /// Cloud with no points, used as an accumulator.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.coords
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: self.len() });
        }
        self.coords.extend_from_slice(p);
        Ok(())
    }

    /// Minimum pairwise Euclidean distance, `+inf` for fewer than two points.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                best = best.min(squared_distance(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    /// CSV with header `x1,...,xd`, one row per point.
    pub fn to_csv(&self) -> String {
        let mut out = coordinate_header(self.dim, false);
        for p in self.iter() {
            push_row(&mut out, None, p);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (dim, rows) = parse_numeric_csv(text, false)?;
        let coords = rows.into_iter().flat_map(|(_, r)| r).collect();
        Self::from_flat(dim, coords)
    }
}

/// Atoms with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    points: PointCloud,
    weights: Vec<f64>,
}

impl WeightedSample {
    /// Validates and wraps atoms and weights.
    pub fn new(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {w} is not a nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights `1/n` over the cloud.
    pub fn uniform(points: PointCloud) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Ok(Self { points, weights })
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// Weighted mean of `f` over the atoms.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// Number of atoms carrying positive weight.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// CSV with header `w,x1,...,xd` at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = coordinate_header(self.dim(), true);
        for (x, w) in self.iter() {
            push_row(&mut out, Some(w), x);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (dim, rows) = parse_numeric_csv(text, true)?;
        let mut weights = Vec::with_capacity(rows.len());
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (w, r) in rows {
            weights.push(w.unwrap_or_default());
            coords.extend(r);
        }
        Self::new(PointCloud::from_flat(dim, coords)?, weights)
    }
}

/// Signed atomic measure; no normalization constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAtomicMeasure {
    points: PointCloud,
    charges: Vec<f64>,
}

impl SignedAtomicMeasure {
    pub fn new(points: PointCloud, charges: Vec<f64>) -> Result<Self> {
        if points.len() != charges.len() {
            return Err(Error::InvalidWeights(format!(
                "{} points but {} charges",
                points.len(),
                charges.len()
            )));
        }
        if charges.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidWeights("non-finite charge".into()));
        }
        Ok(Self { points, charges })
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn total_charge(&self) -> f64 {
        self.charges.iter().sum()
    }
}

impl From<&WeightedSample> for SignedAtomicMeasure {
    fn from(s: &WeightedSample) -> Self {
        Self {
            points: s.points.clone(),
            charges: s.weights.clone(),
        }
    }
}

/// Empirical measure `(1/n) sum delta_{x_i}` with point order preserved.
pub fn uniform_empirical(points: &[Point]) -> Result<WeightedSample> {
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    WeightedSample::uniform(PointCloud::from_points(points)?)
}

/// Importance-reweighted empirical measure.
///
/// Each atom gets the unnormalized weight `target(x) / equilibrium(x)` when the
/// target density is positive there and `0` otherwise; weights are then
/// normalized. Positive target density stands in for membership of the
/// interior of the target's support. Rescaling the target by a positive
/// constant leaves the result unchanged up to rounding.
pub fn importance_weights<T, E>(points: &PointCloud, target: &T, equilibrium: &E) -> Result<WeightedSample>
where
    T: Density + ?Sized,
    E: Density + ?Sized,
{
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    for dim in [target.dim(), equilibrium.dim()] {
        if dim != points.dim() {
            return Err(Error::DimensionMismatch {
                expected: points.dim(),
                found: dim,
            });
        }
    }
    let mut raw = Vec::with_capacity(points.len());
    for x in points.iter() {
        let t = target.density(x);
        let w = if t > 0.0 {
            let e = equilibrium.density(x);
            if !(e > 0.0) {
                return Err(Error::Numerical(
                    "equilibrium density vanishes where the target is positive".into(),
                ));
            }
            t / e
        } else {
            0.0
        };
        raw.push(w);
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if (positive as f64) < (points.len() as f64).sqrt() {
        log::warn!(
            "effective sample size collapse: {positive} of {} atoms carry weight",
            points.len()
        );
    }
    // Renormalize through the validating constructor; the division above
    // already makes the sum one up to rounding.
    WeightedSample::new(points.clone(), weights)
}

/// `a - b` as a signed measure: atoms of `a` then atoms of `b`, with the
/// weights of `b` negated.
pub fn as_signed_difference(a: &WeightedSample, b: &WeightedSample) -> Result<SignedAtomicMeasure> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mut coords = Vec::with_capacity(a.points.as_flat().len() + b.points.as_flat().len());
    coords.extend_from_slice(a.points.as_flat());
    coords.extend_from_slice(b.points.as_flat());
    let charges = a
        .weights
        .iter()
        .copied()
        .chain(b.weights.iter().map(|w| -w))
        .collect();
    SignedAtomicMeasure::new(PointCloud::from_flat(a.dim(), coords)?, charges)
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

fn coordinate_header(dim: usize, weighted: bool) -> String {
    let mut out = String::new();
    if weighted {
        out.push_str("w,");
    }
    for k in 1..=dim {
        if k > 1 {
            out.push(',');
        }
        let _ = write!(out, "x{k}");
    }
    out.push('\n');
    out
}

fn push_row(out: &mut String, weight: Option<f64>, x: &[f64]) {
    if let Some(w) = weight {
        out.push_str(&fmt_full(w));
        out.push(',');
    }
    for (k, c) in x.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&fmt_full(*c));
    }
    out.push('\n');
}

type Row = (Option<f64>, Vec<f64>);

fn parse_numeric_csv(text: &str, weighted: bool) -> Result<(usize, Vec<Row>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::EmptySample)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let offset = usize::from(weighted);
    if weighted && cols.first() != Some(&"w") {
        return Err(Error::parse("expected header starting with `w`"));
    }
    let dim = cols.len().saturating_sub(offset);
    if dim == 0 {
        return Err(Error::parse("header has no coordinate columns"));
    }
    for (k, c) in cols[offset..].iter().enumerate() {
        if *c != format!("x{}", k + 1) {
            return Err(Error::parse(format!("unexpected column `{c}`")));
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(format!("row {}: bad number `{v}`", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != cols.len() {
            return Err(Error::parse(format!(
                "row {}: expected {} fields, found {}",
                lineno + 1,
                cols.len(),
                vals.len()
            )));
        }
        let weight = weighted.then(|| vals[0]);
        rows.push((weight, vals[offset..].to_vec()));
    }
    Ok((dim, rows))
}
