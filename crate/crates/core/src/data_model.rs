//! Core domain types shared by every method: trajectories, cohorts,
//! partitions and missingness classification.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal visit schedule of the prevention trial, in months.
pub const DEFAULT_SCHEDULE: [f64; 5] = [0.0, 6.0, 12.0, 24.0, 36.0];

/// Treatment arm label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Arm(pub String);

impl Arm {
    pub fn new(label: impl Into<String>) -> Self {
        Arm(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One subject's time-stamped outcome readings. `None` marks a missing visit.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub subject_id: String,
    pub arm: Arm,
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn new(
        subject_id: impl Into<String>,
        arm: Arm,
        times: Vec<f64>,
        values: Vec<Option<f64>>,
    ) -> Self {
        Trajectory {
            subject_id: subject_id.into(),
            arm,
            times,
            values,
        }
    }

    /// Trajectory with every visit observed.
    pub fn complete(subject_id: impl Into<String>, arm: Arm, times: Vec<f64>, values: Vec<f64>) -> Self {
        Self::new(subject_id, arm, times, values.into_iter().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observed `(time, value)` pairs in time order.
    pub fn observed(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.values)
            .filter_map(|(&t, v)| v.map(|v| (t, v)))
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// All values, or an incomplete-subject error if any is missing.
    pub fn complete_values(&self) -> Result<Vec<f64>> {
        self.values
            .iter()
            .map(|v| v.ok_or_else(|| Error::IncompleteSubject(self.subject_id.clone())))
            .collect()
    }

    /// Missingness shape relative to this trajectory's own visit list.
    pub fn missingness(&self) -> MissingnessPattern {
        MissingnessPattern::classify(&self.values)
    }

    fn check_shape(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                subject: self.subject_id.clone(),
                times: self.times.len(),
                values: self.values.len(),
            });
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::UnorderedTimes {
                subject: self.subject_id.clone(),
            });
        }
        if self.values.iter().all(Option::is_none) {
            return Err(Error::AllMissing(self.subject_id.clone()));
        }
        Ok(())
    }
}

/// How a subject's missing visits are laid out over the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingnessPattern {
    Complete,
    /// Every missing visit lies strictly between two observed visits.
    Intermittent,
    /// The missing visits form a suffix of the schedule (dropout).
    Monotone,
    /// Anything else: interior gaps combined with dropout, or a leading gap.
    Mixed,
}

impl MissingnessPattern {
    pub fn classify(values: &[Option<f64>]) -> Self {
        let first = values.iter().position(Option::is_some);
        let last = values.iter().rposition(Option::is_some);
        let (Some(first), Some(last)) = (first, last) else {
            return MissingnessPattern::Mixed;
        };
        let interior = values[first..=last].iter().any(Option::is_none);
        let trailing = last + 1 < values.len();
        let leading = first > 0;
        match (leading, interior, trailing) {
            (false, false, false) => MissingnessPattern::Complete,
            (false, true, false) => MissingnessPattern::Intermittent,
            (false, false, true) => MissingnessPattern::Monotone,
            _ => MissingnessPattern::Mixed,
        }
    }
}

impl fmt::Display for MissingnessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MissingnessPattern::Complete => "complete",
            MissingnessPattern::Intermittent => "intermittent",
            MissingnessPattern::Monotone => "monotone",
            MissingnessPattern::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

/// Opaque per-subject covariate columns, kept as raw text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub rows: HashMap<String, Vec<Option<String>>>,
}

impl Covariates {
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, subject: &str, column: usize) -> Option<&str> {
        self.rows
            .get(subject)
            .and_then(|row| row.get(column))
            .and_then(|v| v.as_deref())
    }
}

/// A validated cohort on a shared visit schedule.
///
/// After validation every trajectory is laid out on the full schedule:
/// visits a subject never attended become explicit missing markers.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    schedule: Vec<f64>,
    trajectories: Vec<Trajectory>,
    patterns: Vec<MissingnessPattern>,
    index: HashMap<String, usize>,
    covariates: Covariates,
}

impl TrajectorySet {
    /// Checks every invariant and classifies each subject's missingness.
    pub fn validate(
        schedule: Vec<f64>,
        trajectories: Vec<Trajectory>,
        covariates: Covariates,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidSchedule("schedule is empty".into()));
        }
        if schedule.windows(2).any(|w| !(w[0] < w[1])) || schedule.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSchedule(
                "times must be finite and strictly increasing".into(),
            ));
        }
        let mut index = HashMap::with_capacity(trajectories.len());
        let mut aligned = Vec::with_capacity(trajectories.len());
        for (i, traj) in trajectories.into_iter().enumerate() {
            traj.check_shape()?;
            if index.insert(traj.subject_id.clone(), i).is_some() {
                return Err(Error::DuplicateSubject(traj.subject_id));
            }
            aligned.push(align_to_schedule(traj, &schedule)?);
        }
        let patterns = aligned.iter().map(Trajectory::missingness).collect();
        Ok(TrajectorySet {
            schedule,
            trajectories: aligned,
            patterns,
            index,
            covariates,
        })
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn patterns(&self) -> &[MissingnessPattern] {
        &self.patterns
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, subject_id: &str) -> Option<&Trajectory> {
        self.index.get(subject_id).map(|&i| &self.trajectories[i])
    }

    pub fn pattern(&self, subject_id: &str) -> Option<MissingnessPattern> {
        self.index.get(subject_id).map(|&i| self.patterns[i])
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.trajectories.iter().map(|t| t.subject_id.as_str())
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<Trajectory>, Covariates) {
        (self.schedule, self.trajectories, self.covariates)
    }

    /// A new set on the same schedule with different trajectories.
    pub fn with_trajectories(&self, trajectories: Vec<Trajectory>) -> Result<Self> {
        Self::validate(self.schedule.clone(), trajectories, self.covariates.clone())
    }

    /// Keeps the subjects matching `keep`.
    pub fn filter<F>(&self, mut keep: F) -> Result<Self>
    where
        F: FnMut(&Trajectory) -> bool,
    {
        let kept = self.trajectories.iter().filter(|t| keep(t)).cloned().collect();
        self.with_trajectories(kept)
    }

    /// Subjects with zero missing values on the full schedule, plus the
    /// number of subjects removed.
    pub fn complete_cases(&self) -> Result<(TrajectorySet, usize)> {
        let kept = self.filter(Trajectory::is_complete)?;
        if kept.is_empty() {
            return Err(Error::EmptyCohort("no subject has complete follow-up".into()));
        }
        let removed = self.len() - kept.len();
        Ok((kept, removed))
    }

    pub fn count_pattern(&self, pattern: MissingnessPattern) -> usize {
        self.patterns.iter().filter(|&&p| p == pattern).count()
    }
}

fn align_to_schedule(traj: Trajectory, schedule: &[f64]) -> Result<Trajectory> {
    let mut values = vec![None; schedule.len()];
    let mut cursor = 0;
    for (&t, v) in traj.times.iter().zip(&traj.values) {
        let offset = schedule[cursor..].iter().position(|&s| s == t).ok_or_else(|| {
            Error::TimeOffSchedule {
                subject: traj.subject_id.clone(),
                time: t,
            }
        })?;
        cursor += offset;
        values[cursor] = *v;
        cursor += 1;
    }
    Ok(Trajectory {
        subject_id: traj.subject_id,
        arm: traj.arm,
        times: schedule.to_vec(),
        values,
    })
}

/// One labelled group of a partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    pub subject_ids: Vec<String>,
}

#[derive(Deserialize)]
struct PartitionRepr {
    method: String,
    #[serde(default)]
    params: BTreeMap<String, serde_json::Value>,
    groups: Vec<Group>,
}

/// Assignment of subjects to labelled groups, with the method and tuning
/// parameters that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr")]
pub struct Partition {
    pub method: String,
    pub params: BTreeMap<String, serde_json::Value>,
    groups: Vec<Group>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;

    fn try_from(repr: PartitionRepr) -> Result<Self> {
        Partition::from_groups(repr.method, repr.params, repr.groups)
    }
}

impl Partition {
    /// Builds a partition; empty groups are dropped and every subject must
    /// occur exactly once.
    pub fn from_groups(
        method: impl Into<String>,
        params: BTreeMap<String, serde_json::Value>,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let groups: Vec<Group> = groups.into_iter().filter(|g| !g.subject_ids.is_empty()).collect();
        let mut lookup = HashMap::new();
        let mut labels = HashSet::new();
        for (gi, g) in groups.iter().enumerate() {
            if !labels.insert(g.label.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate group label `{}`", g.label)));
            }
            for id in &g.subject_ids {
                if lookup.insert(id.clone(), gi).is_some() {
                    return Err(Error::DuplicateSubject(id.clone()));
                }
            }
        }
        Ok(Partition {
            method: method.into(),
            params,
            groups,
            lookup,
        })
    }

    /// Builds a partition from per-subject group indices into `labels`.
    pub fn from_assignments(
        method: impl Into<String>,
        params: BTreeMap<String, serde_json::Value>,
        subject_ids: &[String],
        assignments: &[usize],
        labels: &[String],
    ) -> Result<Self> {
        if subject_ids.len() != assignments.len() {
            return Err(Error::DimensionMismatch {
                expected: subject_ids.len(),
                found: assignments.len(),
            });
        }
        let mut groups: Vec<Group> = labels
            .iter()
            .map(|l| Group {
                label: l.clone(),
                subject_ids: Vec::new(),
            })
            .collect();
        for (id, &a) in subject_ids.iter().zip(assignments) {
            let g = groups.get_mut(a).ok_or_else(|| {
                Error::InvalidParameter(format!("group index {a} out of range"))
            })?;
            g.subject_ids.push(id.clone());
        }
        Self::from_groups(method, params, groups)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.label.as_str())
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.lookup.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.subject_ids.len()).collect()
    }

    /// Index of the subject's group, if the subject is in the partition.
    pub fn group_of(&self, subject_id: &str) -> Option<usize> {
        self.lookup.get(subject_id).copied()
    }

    pub fn label_of(&self, subject_id: &str) -> Option<&str> {
        self.group_of(subject_id).map(|g| self.groups[g].label.as_str())
    }

    pub fn contains(&self, subject_id: &str) -> bool {
        self.lookup.contains_key(subject_id)
    }
}
