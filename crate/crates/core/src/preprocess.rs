//! Composite Z-score construction and rate-of-change features.

use serde::{Deserialize, Serialize};

use crate::data_model::{Arm, Covariates, Trajectory, TrajectorySet};
use crate::error::{Error, Result};

/// Baseline mean and standard deviation of one component test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub components: Vec<ComponentStats>,
}

/// One subject-visit row of raw component scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentRecord {
    pub subject_id: String,
    pub arm: Arm,
    pub time: f64,
    pub scores: Vec<Option<f64>>,
}

/// Raw per-visit scores of the tests that make up the composite.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentTable {
    pub schedule: Vec<f64>,
    pub names: Vec<String>,
    pub records: Vec<ComponentRecord>,
    pub covariates: Covariates,
}

impl BaselineStats {
    /// Mean and sample standard deviation of each component over the
    /// records at the first scheduled visit.
    pub fn from_baseline(table: &ComponentTable) -> Result<Self> {
        let baseline = *table
            .schedule
            .first()
            .ok_or_else(|| Error::InvalidSchedule("schedule is empty".into()))?;
        let components = table
            .names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let xs: Vec<f64> = table
                    .records
                    .iter()
                    .filter(|r| r.time == baseline)
                    .filter_map(|r| r.scores.get(c).copied().flatten())
                    .collect();
                if xs.len() < 2 {
                    return Err(Error::DegenerateBaseline(name.clone()));
                }
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                Ok(ComponentStats {
                    name: name.clone(),
                    mean,
                    sd: var.sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = BaselineStats { components };
        stats.check()?;
        Ok(stats)
    }

    fn check(&self) -> Result<()> {
        match self.components.iter().find(|c| !(c.sd > 0.0) || !c.sd.is_finite()) {
            Some(c) => Err(Error::DegenerateBaseline(c.name.clone())),
            None => Ok(()),
        }
    }
}

/// Composite cohort plus the visits left missing because a component was
/// unavailable.
#[derive(Clone, Debug)]
pub struct CompositeScores {
    pub set: TrajectorySet,
    pub partial_visits: Vec<(String, f64)>,
}

/// Average of the standardized component scores at every visit. A visit
/// with any component missing yields a missing composite.
pub fn composite_zscore(table: &ComponentTable, stats: &BaselineStats) -> Result<CompositeScores> {
    stats.check()?;
    if stats.components.len() != table.names.len() {
        return Err(Error::DimensionMismatch {
            expected: table.names.len(),
            found: stats.components.len(),
        });
    }
    let k = stats.components.len() as f64;
    let mut order: Vec<String> = Vec::new();
    let mut by_subject: std::collections::HashMap<String, (Arm, Vec<(f64, Option<f64>)>)> =
        std::collections::HashMap::new();
    let mut partial_visits = Vec::new();

    for rec in &table.records {
        if rec.scores.len() != stats.components.len() {
            return Err(Error::DimensionMismatch {
                expected: stats.components.len(),
                found: rec.scores.len(),
            });
        }
        let present = rec.scores.iter().filter(|s| s.is_some()).count();
        let value = if present == rec.scores.len() {
            let total: f64 = rec
                .scores
                .iter()
                .zip(&stats.components)
                .map(|(s, c)| (s.unwrap() - c.mean) / c.sd)
                .sum();
            Some(total / k)
        } else {
            if present > 0 {
                partial_visits.push((rec.subject_id.clone(), rec.time));
            }
            None
        };
        let entry = by_subject.entry(rec.subject_id.clone()).or_insert_with(|| {
            order.push(rec.subject_id.clone());
            (rec.arm.clone(), Vec::new())
        });
        entry.1.push((rec.time, value));
    }

    let trajectories = order
        .into_iter()
        .map(|id| {
            let (arm, mut visits) = by_subject.remove(&id).unwrap();
            visits.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (times, values) = visits.into_iter().unzip();
            Trajectory::new(id, arm, times, values)
        })
        .collect();
    let set = TrajectorySet::validate(table.schedule.clone(), trajectories, table.covariates.clone())?;
    Ok(CompositeScores { set, partial_visits })
}

/// Per-period rates of change of one complete subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub subject_id: String,
    pub rates: Vec<f64>,
    /// `(start, end)` visit times of each period.
    pub periods: Vec<(f64, f64)>,
}

/// Difference of successive values divided by the elapsed time.
pub fn rates_of_change(traj: &Trajectory) -> Result<RateProfile> {
    let values = traj.complete_values()?;
    let (rates, periods) = traj
        .times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0]), (t[0], t[1])))
        .unzip();
    Ok(RateProfile {
        subject_id: traj.subject_id.clone(),
        rates,
        periods,
    })
}

/// Rate profiles of every subject in a complete set.
pub fn rate_profiles(set: &TrajectorySet) -> Result<Vec<RateProfile>> {
    set.trajectories().iter().map(rates_of_change).collect()
}

/// Rescales every rate column to zero mean and unit sample variance.
/// Constant columns are only centred.
pub fn standardize_profiles(profiles: &mut [RateProfile]) {
    let Some(width) = profiles.first().map(|p| p.rates.len()) else {
        return;
    };
    let n = profiles.len() as f64;
    for c in 0..width {
        let mean = profiles.iter().map(|p| p.rates[c]).sum::<f64>() / n;
        let var = if profiles.len() > 1 {
            profiles.iter().map(|p| (p.rates[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let sd = var.sqrt();
        for p in profiles.iter_mut() {
            p.rates[c] -= mean;
            if sd > 0.0 {
                p.rates[c] /= sd;
            }
        }
    }
}

/// Change from baseline to the last available value, per month.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullPeriodRate {
    pub rate: f64,
    /// Months between baseline and the last available visit.
    pub horizon: f64,
}

pub fn full_period_rate(traj: &Trajectory) -> Result<FullPeriodRate> {
    let (&t0, v0) = traj
        .times
        .first()
        .zip(traj.values.first())
        .ok_or(Error::EmptyTrajectory)?;
    let v0 = v0.ok_or_else(|| Error::MissingBaseline(traj.subject_id.clone()))?;
    let (t_last, v_last) = traj
        .observed()
        .skip(1)
        .last()
        .ok_or_else(|| Error::BaselineOnly(traj.subject_id.clone()))?;
    let horizon = t_last - t0;
    Ok(FullPeriodRate {
        rate: (v_last - v0) / horizon,
        horizon,
    })
}
