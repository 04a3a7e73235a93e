//! Shape-respecting distance and mean between trajectories.
//!
//! Distances are discrete Fréchet distances over monotone couplings of the
//! two point sequences. A coupling starts at the first points, ends at the
//! last, and each step advances one or both sequences by a single index.
//! Points are `(time, value)` and time is weighted by `time_scale` before
//! taking the Euclidean norm, so `time_scale = 0` compares values only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::Trajectory;
use crate::error::{Error, Result};

/// A fully observed sequence of `(time, value)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        Ok(Curve { times, values })
    }

    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        Curve::new(traj.times.clone(), traj.complete_values()?)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.times[i], self.values[i])
    }

    /// Piecewise-linear value at `t`, constant beyond the end points.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.values, t)
    }

    /// The curve shifted by `c` in value.
    pub fn translated(&self, c: f64) -> Curve {
        Curve {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let hi = times.partition_point(|&x| x <= t);
    let lo = hi - 1;
    let span = times[hi] - times[lo];
    if span == 0.0 {
        return values[lo];
    }
    values[lo] + (values[hi] - values[lo]) * (t - times[lo]) / span
}

/// How pointwise costs along a coupling are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// Largest pointwise cost: the classical discrete Fréchet distance.
    #[default]
    Max,
    /// Average pointwise cost over the coupling.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrechetParams {
    /// Weight converting months into value units.
    pub time_scale: f64,
    pub aggregate: Aggregate,
}

impl Default for FrechetParams {
    fn default() -> Self {
        FrechetParams {
            time_scale: 0.1,
            aggregate: Aggregate::Max,
        }
    }
}

impl FrechetParams {
    pub fn new(time_scale: f64, aggregate: Aggregate) -> Result<Self> {
        if !(time_scale >= 0.0) || !time_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time scale must be finite and non-negative, got {time_scale}"
            )));
        }
        Ok(FrechetParams { time_scale, aggregate })
    }
}

/// Euclidean distance between two points with time weighted by `time_scale`.
#[inline]
pub fn pointwise_dist(a: (f64, f64), b: (f64, f64), time_scale: f64) -> f64 {
    (time_scale * (a.0 - b.0)).hypot(a.1 - b.1)
}

/// Ordered index pairs `(i, j)` matching points of two curves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coupling {
    pub pairs: Vec<(usize, usize)>,
}

impl Coupling {
    /// Aggregated cost of this coupling between `a` and `b`.
    pub fn cost(&self, a: &Curve, b: &Curve, params: &FrechetParams) -> f64 {
        let costs = self
            .pairs
            .iter()
            .map(|&(i, j)| pointwise_dist(a.point(i), b.point(j), params.time_scale));
        match params.aggregate {
            Aggregate::Max => costs.fold(0.0, f64::max),
            Aggregate::Mean => costs.sum::<f64>() / self.pairs.len() as f64,
        }
    }

    /// Checks the start, end and unit-step rules for curves of length `n`, `m`.
    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.pairs.first(), self.pairs.last()) else {
            return false;
        };
        first == (0, 0)
            && last == (n - 1, m - 1)
            && self.pairs.windows(2).all(|w| {
                let di = w[1].0 as isize - w[0].0 as isize;
                let dj = w[1].1 as isize - w[0].1 as isize;
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }
}

/// Predecessor step into a cell, in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Start,
    Diagonal,
    AdvanceA,
    AdvanceB,
}

impl Step {
    fn back(self, i: usize, j: usize) -> (usize, usize) {
        match self {
            Step::Start => (i, j),
            Step::Diagonal => (i - 1, j - 1),
            Step::AdvanceA => (i - 1, j),
            Step::AdvanceB => (i, j - 1),
        }
    }
}

fn candidates(i: usize, j: usize) -> impl Iterator<Item = Step> {
    [
        (i > 0 && j > 0).then_some(Step::Diagonal),
        (i > 0).then_some(Step::AdvanceA),
        (j > 0).then_some(Step::AdvanceB),
    ]
    .into_iter()
    .flatten()
}

fn cost_matrix(a: &Curve, b: &Curve, time_scale: f64) -> Vec<f64> {
    let m = b.len();
    let mut out = Vec::with_capacity(a.len() * m);
    for i in 0..a.len() {
        for j in 0..m {
            out.push(pointwise_dist(a.point(i), b.point(j), time_scale));
        }
    }
    out
}

/// Min-max dynamic program. Returns the distance and the predecessor table.
fn solve_max(a: &Curve, b: &Curve, time_scale: f64) -> (f64, Vec<Step>) {
    let (n, m) = (a.len(), b.len());
    let cost = cost_matrix(a, b, time_scale);
    let mut best = vec![f64::INFINITY; n * m];
    let mut from = vec![Step::Start; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost[i * m + j];
            if i == 0 && j == 0 {
                best[0] = c;
                continue;
            }
            let mut chosen = Step::Start;
            let mut low = f64::INFINITY;
            for step in candidates(i, j) {
                let (pi, pj) = step.back(i, j);
                let v = best[pi * m + pj];
                if v < low {
                    low = v;
                    chosen = step;
                }
            }
            best[i * m + j] = c.max(low);
            from[i * m + j] = chosen;
        }
    }
    (best[n * m - 1], from)
}

/// Length-indexed min-sum dynamic program for the mean aggregate.
///
/// `sums[(i * m + j) * width + len]` is the least cost sum over couplings
/// from `(0, 0)` to `(i, j)` visiting exactly `len` pairs. The optimal
/// average is the minimum of `sum / len` over the lengths reachable at the
/// final cell; ties go to the shorter coupling.
struct MeanTable {
    m: usize,
    width: usize,
    sums: Vec<f64>,
    from: Vec<Step>,
}

impl MeanTable {
    fn solve(a: &Curve, b: &Curve, time_scale: f64) -> Self {
        let (n, m) = (a.len(), b.len());
        let width = n + m;
        let cost = cost_matrix(a, b, time_scale);
        let mut sums = vec![f64::INFINITY; n * m * width];
        let mut from = vec![Step::Start; n * m * width];
        sums[1] = cost[0];
        for i in 0..n {
            for j in 0..m {
                if i == 0 && j == 0 {
                    continue;
                }
                let c = cost[i * m + j];
                let cell = (i * m + j) * width;
                for len in (i.max(j) + 1)..=(i + j + 1) {
                    let mut low = f64::INFINITY;
                    let mut chosen = Step::Start;
                    for step in candidates(i, j) {
                        let (pi, pj) = step.back(i, j);
                        let v = sums[(pi * m + pj) * width + len - 1];
                        if v < low {
                            low = v;
                            chosen = step;
                        }
                    }
                    sums[cell + len] = c + low;
                    from[cell + len] = chosen;
                }
            }
        }
        MeanTable { m, width, sums, from }
    }

    /// Best average and the coupling length achieving it.
    fn optimum(&self, n: usize) -> (f64, usize) {
        let m = self.m;
        let cell = ((n - 1) * m + (m - 1)) * self.width;
        let mut best = (f64::INFINITY, 0);
        for len in n.max(m)..=(n + m - 1) {
            let avg = self.sums[cell + len] / len as f64;
            if avg < best.0 {
                best = (avg, len);
            }
        }
        best
    }
}

fn check_inputs(a: &Curve, b: &Curve) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(())
}

/// Discrete Fréchet distance between two complete curves.
pub fn frechet_distance(a: &Curve, b: &Curve, params: &FrechetParams) -> Result<f64> {
    check_inputs(a, b)?;
    Ok(match params.aggregate {
        Aggregate::Max => solve_max(a, b, params.time_scale).0,
        Aggregate::Mean => MeanTable::solve(a, b, params.time_scale).optimum(a.len()).0,
    })
}

/// A coupling achieving [`frechet_distance`]. Ties prefer the diagonal
/// step, then advancing `a`, then advancing `b`.
pub fn optimal_coupling(a: &Curve, b: &Curve, params: &FrechetParams) -> Result<Coupling> {
    check_inputs(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    match params.aggregate {
        Aggregate::Max => {
            let (_, from) = solve_max(a, b, params.time_scale);
            loop {
                pairs.push((i, j));
                let step = from[i * m + j];
                if step == Step::Start {
                    break;
                }
                (i, j) = step.back(i, j);
            }
        }
        Aggregate::Mean => {
            let table = MeanTable::solve(a, b, params.time_scale);
            let (_, mut len) = table.optimum(n);
            loop {
                pairs.push((i, j));
                let step = table.from[(i * m + j) * table.width + len];
                if step == Step::Start {
                    break;
                }
                (i, j) = step.back(i, j);
                len -= 1;
            }
        }
    }
    pairs.reverse();
    Ok(Coupling { pairs })
}

/// Pairwise distances between `curves` and `others`, row-major.
pub fn cross_distances(curves: &[Curve], others: &[Curve], params: &FrechetParams) -> Result<Vec<Vec<f64>>> {
    curves
        .par_iter()
        .map(|a| others.iter().map(|b| frechet_distance(a, b, params)).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrechetMeanConfig {
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FrechetMeanConfig {
    fn default() -> Self {
        FrechetMeanConfig {
            grid_size: 5,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrechetMean {
    pub curve: Curve,
    pub converged: bool,
    pub iterations: usize,
}

/// `size` points evenly spaced in visit index over `reference`, mapped to
/// time piecewise-linearly. With `size == reference.len()` the grid is the
/// reference schedule itself.
fn index_uniform_grid(reference: &[f64], size: usize) -> Vec<f64> {
    let last = reference.len() - 1;
    if size == 1 || last == 0 {
        return vec![reference[0]; size];
    }
    (0..size)
        .map(|j| {
            if j + 1 == size {
                return reference[last];
            }
            let pos = j as f64 * last as f64 / (size - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if frac == 0.0 {
                reference[lo]
            } else {
                reference[lo] + frac * (reference[lo + 1] - reference[lo])
            }
        })
        .collect()
}

/// Averages the points each curve couples to every centroid index.
/// Each curve first averages its own matches, then curves are averaged
/// with equal weight, which keeps the averaged times non-decreasing.
fn matched_average(curves: &[Curve], centroid: &Curve, params: &FrechetParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = centroid.len();
    let per_curve = curves
        .par_iter()
        .map(|c| {
            let coupling = optimal_coupling(c, centroid, params)?;
            let mut acc = vec![(0.0, 0.0, 0usize); g];
            for &(i, j) in &coupling.pairs {
                acc[j].0 += c.times[i];
                acc[j].1 += c.values[i];
                acc[j].2 += 1;
            }
            Ok(acc
                .into_iter()
                .map(|(t, v, k)| (t / k as f64, v / k as f64))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = curves.len() as f64;
    let mut times = vec![0.0; g];
    let mut values = vec![0.0; g];
    for matches in &per_curve {
        for (j, &(t, v)) in matches.iter().enumerate() {
            times[j] += t;
            values[j] += v;
        }
    }
    for j in 0..g {
        times[j] /= n;
        values[j] /= n;
    }
    Ok((times, values))
}

/// Linear resampling of points with non-decreasing times onto `grid`.
/// Points sharing a time are averaged first.
fn resample(times: &[f64], values: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = Vec::with_capacity(times.len());
    let mut vs: Vec<f64> = Vec::with_capacity(times.len());
    let mut counts: Vec<usize> = Vec::with_capacity(times.len());
    for (&t, &v) in times.iter().zip(values) {
        match ts.last() {
            Some(&last) if t <= last => {
                let k = vs.len() - 1;
                vs[k] += v;
                counts[k] += 1;
            }
            _ => {
                ts.push(t);
                vs.push(v);
                counts.push(1);
            }
        }
    }
    for (v, &c) in vs.iter_mut().zip(&counts) {
        *v /= c as f64;
    }
    grid.iter().map(|&t| interpolate(&ts, &vs, t)).collect()
}

/// Iterative shape-respecting mean of a bundle of curves.
///
/// The centroid lives on a grid of `grid_size` times spread evenly over the
/// visit indices of the longest input curve. It starts as the pointwise
/// mean; each iteration couples every curve to it, averages the matched
/// points per centroid index and resamples onto the grid, until no grid
/// value moves by `tol` or more.
pub fn frechet_mean(curves: &[Curve], params: &FrechetParams, cfg: &FrechetMeanConfig) -> Result<FrechetMean> {
    let first = curves.first().ok_or(Error::EmptyCohort("no curves to average".into()))?;
    if cfg.grid_size == 0 {
        return Err(Error::InvalidParameter("grid size must be positive".into()));
    }
    if curves.iter().any(Curve::is_empty) {
        return Err(Error::EmptyTrajectory);
    }
    let reference = curves.iter().fold(first, |best, c| if c.len() > best.len() { c } else { best });
    let grid = index_uniform_grid(&reference.times, cfg.grid_size);
    let n = curves.len() as f64;
    let init = grid
        .iter()
        .map(|&t| curves.iter().map(|c| c.value_at(t)).sum::<f64>() / n)
        .collect();
    let mut centroid = Curve { times: grid.clone(), values: init };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (times, values) = matched_average(curves, &centroid, params)?;
        let updated = resample(&times, &values, &grid);
        let movement = updated
            .iter()
            .zip(&centroid.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centroid.values = updated;
        if movement < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(FrechetMean {
        curve: centroid,
        converged,
        iterations,
    })
}
