//! k-means over trajectories with Fréchet assignment and Fréchet-mean
//! centroids, restarted until every group holds a minimum share of the
//! cohort.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data_model::{Partition, TrajectorySet};
use crate::error::{Error, Result};
use crate::frechet::{frechet_distance, frechet_mean, Curve, FrechetMeanConfig, FrechetParams};
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// `k` distinct subjects drawn at random for every restart.
    RandomSubjects,
    /// Fixed starting subjects, one per cluster.
    ProvidedIds(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmlShapeConfig {
    pub k: usize,
    pub frechet: FrechetParams,
    pub mean: FrechetMeanConfig,
    pub min_share: f64,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub init: Init,
    /// When set, each restart first clusters a random subset of this
    /// fraction of the cohort and starts the full run from its centroids.
    pub subset_fraction: Option<f64>,
}

impl KmlShapeConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KmlShapeConfig {
            k,
            frechet: FrechetParams::default(),
            mean: FrechetMeanConfig::default(),
            min_share: 0.10,
            restarts: 20,
            max_iter: 50,
            seed,
            init: Init::RandomSubjects,
            subset_fraction: None,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.k > n {
            return Err(Error::InvalidParameter(format!("k = {} exceeds {n} subjects", self.k)));
        }
        if !(0.0..1.0).contains(&self.min_share) || self.k as f64 * self.min_share > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "min share {} is infeasible for k = {}",
                self.min_share, self.k
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("at least one restart is required".into()));
        }
        if let Some(f) = self.subset_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!("subset fraction {f} must be in (0, 1]")));
            }
        }
        if let Init::ProvidedIds(ids) = &self.init {
            if ids.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "{} initial subjects provided for k = {}",
                    ids.len(),
                    self.k
                )));
            }
        }
        Ok(())
    }

    fn params_record(&self) -> BTreeMap<String, serde_json::Value> {
        let mut p = BTreeMap::new();
        p.insert("k".into(), json!(self.k));
        p.insert("time_scale".into(), json!(self.frechet.time_scale));
        p.insert("aggregate".into(), json!(self.frechet.aggregate));
        p.insert("min_share".into(), json!(self.min_share));
        p.insert("restarts".into(), json!(self.restarts));
        p.insert("max_iter".into(), json!(self.max_iter));
        p.insert("seed".into(), json!(self.seed));
        p.insert("grid_size".into(), json!(self.mean.grid_size));
        p.insert("init".into(), json!(self.init));
        if let Some(f) = self.subset_fraction {
            p.insert("subset_fraction".into(), json!(f));
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSolution {
    pub partition: Partition,
    /// Centroids in group-label order.
    pub centroids: Vec<Curve>,
    /// Sum of distances from each subject to its own centroid.
    pub within_dispersion: f64,
    /// Dispersion after every assignment step of the retained run.
    pub dispersion_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    /// Whether every group reaches `min_share` of the cohort.
    pub share_satisfied: bool,
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Curve>,
    dispersion: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Nearest centroid and its distance; ties go to the lowest index.
fn nearest(curve: &Curve, centroids: &[Curve], params: &FrechetParams) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (g, c) in centroids.iter().enumerate() {
        let d = frechet_distance(curve, c, params)?;
        if d < best.1 {
            best = (g, d);
        }
    }
    Ok(best)
}

fn assign_all(curves: &[Curve], centroids: &[Curve], params: &FrechetParams) -> Result<(Vec<usize>, Vec<f64>)> {
    let pairs = curves
        .par_iter()
        .map(|c| nearest(c, centroids, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Lloyd iteration from the given centroids. A recomputed centroid only
/// replaces the old one when it does not increase its cluster's dispersion,
/// so the dispersion trace never increases.
fn lloyd(curves: &[Curve], init: Vec<Curve>, cfg: &KmlShapeConfig) -> Result<Run> {
    let k = init.len();
    let params = &cfg.frechet;
    let mut centroids = init;
    let (mut labels, mut dists) = assign_all(curves, &centroids, params)?;
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut reseeded = false;
        for g in 0..k {
            if labels.contains(&g) {
                continue;
            }
            let mut sizes = vec![0usize; k];
            labels.iter().for_each(|&l| sizes[l] += 1);
            let donor = (0..curves.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = donor {
                labels[i] = g;
                dists[i] = 0.0;
                centroids[g] = curves[i].clone();
                reseeded = true;
            }
        }

        let updates = (0..k)
            .into_par_iter()
            .map(|g| {
                let members: Vec<usize> = (0..curves.len()).filter(|&i| labels[i] == g).collect();
                if members.is_empty() {
                    return Ok(None);
                }
                let bundle: Vec<Curve> = members.iter().map(|&i| curves[i].clone()).collect();
                let candidate = frechet_mean(&bundle, params, &cfg.mean)?.curve;
                let old: f64 = members.iter().map(|&i| dists[i]).sum();
                let new = members
                    .iter()
                    .map(|&i| frechet_distance(&curves[i], &candidate, params))
                    .sum::<Result<f64>>()?;
                Ok((new <= old).then_some(candidate))
            })
            .collect::<Result<Vec<_>>>()?;
        for (g, update) in updates.into_iter().enumerate() {
            if let Some(c) = update {
                centroids[g] = c;
            }
        }

        let (new_labels, new_dists) = assign_all(curves, &centroids, params)?;
        let unchanged = new_labels == labels && !reseeded;
        labels = new_labels;
        dists = new_dists;
        trace.push(dists.iter().sum());
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(Run {
        labels,
        centroids,
        dispersion: *trace.last().unwrap(),
        trace,
        iterations,
        converged,
    })
}

fn start_centroids(
    curves: &[Curve],
    ids: &[String],
    cfg: &KmlShapeConfig,
    rng: &mut SplitMix64,
) -> Result<Vec<Curve>> {
    match &cfg.init {
        Init::ProvidedIds(wanted) => wanted
            .iter()
            .map(|w| {
                ids.iter()
                    .position(|id| id == w)
                    .map(|i| curves[i].clone())
                    .ok_or_else(|| Error::InvalidParameter(format!("initial subject `{w}` not in cohort")))
            })
            .collect(),
        Init::RandomSubjects => Ok(rng
            .sample_distinct(curves.len(), cfg.k)
            .into_iter()
            .map(|i| curves[i].clone())
            .collect()),
    }
}

fn one_restart(curves: &[Curve], ids: &[String], cfg: &KmlShapeConfig, seed: u64) -> Result<Run> {
    let mut rng = SplitMix64::new(seed);
    match cfg.subset_fraction {
        Some(f) if f < 1.0 => {
            let size = ((f * curves.len() as f64).ceil() as usize).clamp(cfg.k, curves.len());
            let mut picked = rng.sample_distinct(curves.len(), size);
            picked.sort_unstable();
            let sub_curves: Vec<Curve> = picked.iter().map(|&i| curves[i].clone()).collect();
            let sub_ids: Vec<String> = picked.iter().map(|&i| ids[i].clone()).collect();
            let init = start_centroids(&sub_curves, &sub_ids, cfg, &mut rng)?;
            let sub = lloyd(&sub_curves, init, cfg)?;
            lloyd(curves, sub.centroids, cfg)
        }
        _ => {
            let init = start_centroids(curves, ids, cfg, &mut rng)?;
            lloyd(curves, init, cfg)
        }
    }
}

fn group_labels(k: usize) -> Vec<String> {
    (1..=k).map(|g| format!("G{g}")).collect()
}

/// Permutation of cluster indices ordering groups by decreasing size, then
/// by the position of their first member.
pub(crate) fn size_order(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        first[l] = first[l].min(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&g| (std::cmp::Reverse(sizes[g]), first[g]));
    order
}

/// Clusters the complete (or imputed) trajectories of `set`.
///
/// Subjects are processed in subject-id order, so the result does not
/// depend on the input order of the set.
pub fn cluster(set: &TrajectorySet, cfg: &KmlShapeConfig) -> Result<ClusterSolution> {
    let mut sorted: Vec<_> = set.trajectories().iter().collect();
    sorted.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let ids: Vec<String> = sorted.iter().map(|t| t.subject_id.clone()).collect();
    let curves = sorted
        .iter()
        .map(|t| Curve::from_trajectory(t))
        .collect::<Result<Vec<_>>>()?;
    let n = curves.len();
    cfg.check(n)?;

    let restarts = match cfg.init {
        Init::ProvidedIds(_) if cfg.subset_fraction.is_none() => 1,
        _ => cfg.restarts,
    };
    let mut seeder = SplitMix64::new(cfg.seed);
    let seeds: Vec<u64> = (0..restarts).map(|_| seeder.next_u64()).collect();
    let runs = seeds
        .par_iter()
        .map(|&s| one_restart(&curves, &ids, cfg, s))
        .collect::<Result<Vec<_>>>()?;

    let min_size = (cfg.min_share * n as f64 - 1e-9).ceil().max(1.0) as usize;
    let satisfied = |run: &Run| {
        let mut sizes = vec![0usize; cfg.k];
        run.labels.iter().for_each(|&l| sizes[l] += 1);
        sizes.iter().all(|&s| s >= min_size)
    };
    let pick = |accept_only: bool| {
        runs.iter()
            .enumerate()
            .filter(|(_, r)| !accept_only || satisfied(r))
            .fold(None, |best: Option<(usize, &Run)>, (i, r)| match best {
                Some((_, b)) if b.dispersion <= r.dispersion => best,
                _ => Some((i, r)),
            })
    };
    let (restart, run) = pick(true).or_else(|| pick(false)).expect("at least one restart");
    let share_satisfied = satisfied(run);

    let order = size_order(&run.labels, cfg.k);
    let mut rank = vec![0usize; cfg.k];
    for (r, &g) in order.iter().enumerate() {
        rank[g] = r;
    }
    let assignments: Vec<usize> = run.labels.iter().map(|&l| rank[l]).collect();
    let centroids = order.iter().map(|&g| run.centroids[g].clone()).collect();
    let mut params = cfg.params_record();
    params.insert("restart".into(), json!(restart));
    params.insert("converged".into(), json!(run.converged));
    params.insert("share_satisfied".into(), json!(share_satisfied));
    let partition = Partition::from_assignments("kmlshape", params, &ids, &assignments, &group_labels(cfg.k))?;

    Ok(ClusterSolution {
        partition,
        centroids,
        within_dispersion: run.dispersion,
        dispersion_trace: run.trace.clone(),
        iterations: run.iterations,
        converged: run.converged,
        restart,
        share_satisfied,
    })
}

/// Nearest-centroid partition; ties go to the lowest centroid index and
/// groups are labelled `G1..Gk` by centroid index.
pub fn assign(set: &TrajectorySet, centroids: &[Curve], params: &FrechetParams) -> Result<Partition> {
    if centroids.is_empty() {
        return Err(Error::InvalidParameter("no centroids to assign to".into()));
    }
    let curves = set
        .trajectories()
        .iter()
        .map(Curve::from_trajectory)
        .collect::<Result<Vec<_>>>()?;
    let (labels, _) = assign_all(&curves, centroids, params)?;
    let ids: Vec<String> = set.subject_ids().map(String::from).collect();
    let mut record = BTreeMap::new();
    record.insert("time_scale".into(), json!(params.time_scale));
    record.insert("aggregate".into(), json!(params.aggregate));
    Partition::from_assignments("kmlshape-assign", record, &ids, &labels, &group_labels(centroids.len()))
}

/// Calinski-Harabasz index of a partition under the Fréchet geometry:
/// `[B / (k - 1)] / [W / (n - k)]` with `W` the squared distances to the
/// group Fréchet means and `B` the size-weighted squared distances of the
/// group means to the overall Fréchet mean.
pub fn calinski_harabasz(
    set: &TrajectorySet,
    partition: &Partition,
    params: &FrechetParams,
    mean_cfg: &FrechetMeanConfig,
) -> Result<f64> {
    let k = partition.n_groups();
    let mut groups: Vec<Vec<Curve>> = vec![Vec::new(); k];
    for t in set.trajectories() {
        if let Some(g) = partition.group_of(&t.subject_id) {
            groups[g].push(Curve::from_trajectory(t)?);
        }
    }
    groups.retain(|g| !g.is_empty());
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    if k < 2 || k + 1 > n {
        return Err(Error::InvalidParameter(format!(
            "Calinski-Harabasz needs 2 <= k <= n - 1, got k = {k}, n = {n}"
        )));
    }
    let all: Vec<Curve> = groups.iter().flatten().cloned().collect();
    let global = frechet_mean(&all, params, mean_cfg)?.curve;
    let mut within = 0.0;
    let mut between = 0.0;
    for g in &groups {
        let centre = frechet_mean(g, params, mean_cfg)?.curve;
        for c in g {
            within += frechet_distance(c, &centre, params)?.powi(2);
        }
        between += g.len() as f64 * frechet_distance(&centre, &global, params)?.powi(2);
    }
    if within == 0.0 {
        return Err(Error::DegeneratePartition("within-group dispersion is zero".into()));
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Calinski-Harabasz index of the best clustering for each `k` in `ks`.
pub fn calinski_harabasz_sweep(
    set: &TrajectorySet,
    base: &KmlShapeConfig,
    ks: impl IntoIterator<Item = usize>,
) -> Result<Vec<(usize, f64)>> {
    ks.into_iter()
        .map(|k| {
            let cfg = KmlShapeConfig { k, ..base.clone() };
            let sol = cluster(set, &cfg)?;
            Ok((k, calinski_harabasz(set, &sol.partition, &cfg.frechet, &cfg.mean)?))
        })
        .collect()
}
