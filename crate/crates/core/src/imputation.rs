//! Missing-value imputation: linear interpolation, LOCF and CopyMean.
//!
//! CopyMean fills a subject's gaps by copying the local shape of the
//! population mean curve, anchored on the subject's own observations.
//! Interior gaps use the subject's line between the bracketing visits and
//! add the mean curve's deviation from its own chord over the same span.
//! Dropout tails carry the last observation forward and add the mean
//! curve's motion since that visit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Trajectory, TrajectorySet};
use crate::error::{Error, Result};

/// Cross-sectional average of the observed values at each visit.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCurve {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

impl MeanCurve {
    fn at(&self, k: usize) -> f64 {
        self.means[k]
    }
}

pub fn population_mean_curve(set: &TrajectorySet) -> Result<MeanCurve> {
    let width = set.schedule().len();
    let mut sums = vec![0.0; width];
    let mut counts = vec![0usize; width];
    for traj in set.trajectories() {
        for (k, v) in traj.values.iter().enumerate() {
            if let Some(v) = v {
                sums[k] += v;
                counts[k] += 1;
            }
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UnavailableTimepoint(set.schedule()[k]));
    }
    let means = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(MeanCurve {
        times: set.schedule().to_vec(),
        means,
        counts,
    })
}

/// How CopyMean combines the subject-wise and visit-wise candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyMeanMerge {
    /// Subject line plus the mean curve's departure from its chord.
    #[default]
    Anchored,
    /// Plain average of the subject candidate and the visit mean.
    Average,
}

/// Imputer selection for a whole cohort.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imputer {
    None,
    Linear,
    Locf,
    CopyMean(CopyMeanMerge),
}

fn observed_indices(traj: &Trajectory) -> Vec<usize> {
    traj.values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect()
}

fn lerp(t: f64, (t0, v0): (f64, f64), (t1, v1): (f64, f64)) -> f64 {
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Fills interior gaps on the straight line between the bracketing
/// observations. Leading or trailing gaps are an error.
pub fn interpolate_linear(traj: &Trajectory) -> Result<Trajectory> {
    let obs = observed_indices(traj);
    let mut out = traj.clone();
    for k in 0..traj.len() {
        if traj.values[k].is_some() {
            continue;
        }
        let before = obs.iter().rev().find(|&&i| i < k);
        let after = obs.iter().find(|&&i| i > k);
        let (Some(&i), Some(&j)) = (before, after) else {
            return Err(Error::NotBracketed {
                subject: traj.subject_id.clone(),
                time: traj.times[k],
            });
        };
        let vi = traj.values[i].unwrap();
        let vj = traj.values[j].unwrap();
        out.values[k] = Some(lerp(traj.times[k], (traj.times[i], vi), (traj.times[j], vj)));
    }
    Ok(out)
}

/// Last observation carried forward; interior gaps take the preceding
/// observation too.
pub fn impute_locf(traj: &Trajectory) -> Result<Trajectory> {
    let mut out = traj.clone();
    let mut last = None;
    for k in 0..traj.len() {
        match traj.values[k] {
            Some(v) => last = Some(v),
            None => match last {
                Some(v) => out.values[k] = Some(v),
                None => {
                    return Err(Error::LeadingGap {
                        subject: traj.subject_id.clone(),
                        time: traj.times[k],
                    })
                }
            },
        }
    }
    Ok(out)
}

/// CopyMean imputation of one subject against a precomputed mean curve.
/// The curve must be laid out on the same times as the trajectory.
pub fn copy_mean_trajectory(traj: &Trajectory, mean: &MeanCurve, merge: CopyMeanMerge) -> Result<Trajectory> {
    if mean.times != traj.times {
        return Err(Error::DimensionMismatch {
            expected: traj.len(),
            found: mean.times.len(),
        });
    }
    let obs = observed_indices(traj);
    let Some(&first) = obs.first() else {
        return Err(Error::AllMissing(traj.subject_id.clone()));
    };
    if first > 0 {
        return Err(Error::LeadingGap {
            subject: traj.subject_id.clone(),
            time: traj.times[0],
        });
    }
    let t = &traj.times;
    let mut out = traj.clone();
    for k in 0..traj.len() {
        if traj.values[k].is_some() {
            continue;
        }
        let i = *obs.iter().rev().find(|&&i| i < k).unwrap();
        let vi = traj.values[i].unwrap();
        let imputed = match obs.iter().find(|&&j| j > k) {
            Some(&j) => {
                let vj = traj.values[j].unwrap();
                let own = lerp(t[k], (t[i], vi), (t[j], vj));
                match merge {
                    CopyMeanMerge::Anchored => {
                        let chord = lerp(t[k], (t[i], mean.at(i)), (t[j], mean.at(j)));
                        own + (mean.at(k) - chord)
                    }
                    CopyMeanMerge::Average => 0.5 * (own + mean.at(k)),
                }
            }
            None => match merge {
                CopyMeanMerge::Anchored => vi + (mean.at(k) - mean.at(i)),
                CopyMeanMerge::Average => 0.5 * (vi + mean.at(k)),
            },
        };
        out.values[k] = Some(imputed);
    }
    Ok(out)
}

/// Fills every missing value of the cohort with CopyMean. The mean curve
/// comes from the originally observed values only.
pub fn impute_copy_mean(set: &TrajectorySet, merge: CopyMeanMerge) -> Result<TrajectorySet> {
    let mean = population_mean_curve(set)?;
    let filled = set
        .trajectories()
        .par_iter()
        .map(|t| copy_mean_trajectory(t, &mean, merge))
        .collect::<Result<Vec<_>>>()?;
    set.with_trajectories(filled)
}

/// Applies the selected imputer to every subject.
pub fn impute(set: &TrajectorySet, imputer: Imputer) -> Result<TrajectorySet> {
    let per_subject: fn(&Trajectory) -> Result<Trajectory> = match imputer {
        Imputer::None => return Ok(set.clone()),
        Imputer::CopyMean(merge) => return impute_copy_mean(set, merge),
        Imputer::Linear => interpolate_linear,
        Imputer::Locf => impute_locf,
    };
    let filled = set
        .trajectories()
        .par_iter()
        .map(per_subject)
        .collect::<Result<Vec<_>>>()?;
    set.with_trajectories(filled)
}
