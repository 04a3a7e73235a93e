//! Deterministic synthetic prevention-trial cohorts with ground truth.
//!
//! Generation is a pure function of the spec. Subjects are drawn in index
//! order from one [`SplitMix64`] stream seeded with `spec.seed`; for each
//! subject the draws are, in order:
//!
//! 1. one uniform selecting the shape by cumulative weight,
//! 2. one uniform selecting the arm by cumulative allocation weight,
//! 3. one normal per visit in time order (two uniforms each),
//! 4. for every visit after baseline, in time order, one dropout uniform
//!    followed by one intermittent-missingness uniform.
//!
//! All draws are consumed whatever their outcome, so every subject uses
//! exactly `2 + 2K + 2(K - 1)` uniforms for a schedule of `K` visits.
//! The baseline visit is always observed. A subject drops out at the first
//! post-baseline visit whose dropout uniform falls below the hazard, and
//! every later visit is missing; before dropout, a visit is missing when
//! its intermittent uniform falls below `intermittent_prob`.

use serde::{Deserialize, Serialize};

use crate::data_model::{Arm, Covariates, Group, Partition, Trajectory, TrajectorySet, DEFAULT_SCHEDULE};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub label: String,
    /// Mean trajectory on the schedule.
    pub values: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub schedule: Vec<f64>,
    pub shapes: Vec<ShapeSpec>,
    pub noise_sd: f64,
    pub arms: Vec<ArmSpec>,
    /// Per-visit probability of dropping out, after baseline.
    #[serde(default)]
    pub dropout_hazard: f64,
    /// Per-visit probability of an interior missing value.
    #[serde(default)]
    pub intermittent_prob: f64,
    pub seed: u64,
}

/// Linear ramp from 0 at the first visit to `total_change` at the last.
pub fn linear_shape(schedule: &[f64], total_change: f64) -> Vec<f64> {
    let (t0, t1) = (schedule[0], schedule[schedule.len() - 1]);
    schedule.iter().map(|t| total_change * (t - t0) / (t1 - t0)).collect()
}

/// Baseline separation of the improving and declining groups from the
/// stable group in the default cohort.
pub const GROUP_OFFSET: f64 = 0.2;

fn offset(values: Vec<f64>, by: f64) -> Vec<f64> {
    values.into_iter().map(|v| v + by).collect()
}

impl CohortSpec {
    /// Illustrative three-shape cohort in proportions 50/35/15 across four
    /// equally allocated arms: a stable group at 0, a group starting at
    /// +0.2 and improving linearly by 0.2 over follow-up, and a group
    /// starting at -0.2 and declining linearly by 0.8.
    pub fn three_shape(n: usize, noise_sd: f64, seed: u64) -> Self {
        let schedule = DEFAULT_SCHEDULE.to_vec();
        CohortSpec {
            n,
            shapes: vec![
                ShapeSpec {
                    label: "stable".into(),
                    values: vec![0.0; schedule.len()],
                    weight: 0.50,
                },
                ShapeSpec {
                    label: "improving".into(),
                    values: offset(linear_shape(&schedule, 0.2), GROUP_OFFSET),
                    weight: 0.35,
                },
                ShapeSpec {
                    label: "declining".into(),
                    values: offset(linear_shape(&schedule, -0.8), -GROUP_OFFSET),
                    weight: 0.15,
                },
            ],
            schedule,
            noise_sd,
            arms: ["placebo", "omega3", "mi", "mi_omega3"]
                .iter()
                .map(|a| ArmSpec {
                    label: a.to_string(),
                    weight: 0.25,
                })
                .collect(),
            dropout_hazard: 0.0,
            intermittent_prob: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.schedule.len() < 2 || self.schedule.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("schedule needs at least two strictly increasing times".into());
        }
        if self.shapes.is_empty() || self.arms.is_empty() {
            return bad("at least one shape and one arm are required".into());
        }
        for s in &self.shapes {
            if s.values.len() != self.schedule.len() {
                return bad(format!("shape `{}` does not match the schedule length", s.label));
            }
        }
        for (what, weights) in [
            ("shape", self.shapes.iter().map(|s| s.weight).collect::<Vec<_>>()),
            ("arm", self.arms.iter().map(|a| a.weight).collect()),
        ] {
            if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("{what} weights must be non-negative and sum to 1"));
            }
        }
        for (name, p) in [("dropout_hazard", self.dropout_hazard), ("intermittent_prob", self.intermittent_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedCohort {
    /// Observed cohort after missingness.
    pub observed: TrajectorySet,
    /// Pre-dropout values of every subject (always complete).
    pub truth: TrajectorySet,
    /// Generating shape of each subject.
    pub labels: Partition,
    pub complete_count: usize,
    pub dropout_count: usize,
}

fn pick(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        cum += w;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

pub fn subject_id(index: usize) -> String {
    format!("S{:05}", index + 1)
}

pub fn simulate_cohort(spec: &CohortSpec) -> Result<SimulatedCohort> {
    spec.validate()?;
    let k = spec.schedule.len();
    let mut rng = SplitMix64::new(spec.seed);
    let mut observed = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    let mut members: Vec<Vec<String>> = vec![Vec::new(); spec.shapes.len()];
    let mut complete_count = 0;
    let mut dropout_count = 0;

    for i in 0..spec.n {
        let id = subject_id(i);
        let shape = pick(spec.shapes.iter().map(|s| s.weight), rng.next_f64());
        let arm = pick(spec.arms.iter().map(|a| a.weight), rng.next_f64());
        let values: Vec<f64> = spec.shapes[shape]
            .values
            .iter()
            .map(|m| m + spec.noise_sd * rng.next_normal())
            .collect();
        let mut masked: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
        let mut dropped = false;
        for slot in masked.iter_mut().skip(1) {
            let u_drop = rng.next_f64();
            let u_int = rng.next_f64();
            if !dropped && u_drop < spec.dropout_hazard {
                dropped = true;
            }
            if dropped || u_int < spec.intermittent_prob {
                *slot = None;
            }
        }
        if dropped {
            dropout_count += 1;
        }
        if masked.iter().all(Option::is_some) {
            complete_count += 1;
        }
        let arm = Arm::new(spec.arms[arm].label.clone());
        members[shape].push(id.clone());
        truth.push(Trajectory::complete(id.clone(), arm.clone(), spec.schedule.clone(), values));
        observed.push(Trajectory::new(id, arm, spec.schedule.clone(), masked));
        debug_assert_eq!(observed.last().unwrap().len(), k);
    }

    let groups = spec
        .shapes
        .iter()
        .zip(members)
        .map(|(s, ids)| Group {
            label: s.label.clone(),
            subject_ids: ids,
        })
        .collect();
    let mut params = std::collections::BTreeMap::new();
    params.insert("seed".into(), serde_json::json!(spec.seed));
    Ok(SimulatedCohort {
        observed: TrajectorySet::validate(spec.schedule.clone(), observed, Covariates::default())?,
        truth: TrajectorySet::validate(spec.schedule.clone(), truth, Covariates::default())?,
        labels: Partition::from_groups("truth", params, groups)?,
        complete_count,
        dropout_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_shape_reproduces_shape() {
        let mut spec = CohortSpec::three_shape(20, 0.0, 1);
        spec.shapes.truncate(1);
        spec.shapes[0].weight = 1.0;
        spec.shapes[0].values = vec![0.0, 0.1, 0.2, 0.1, 0.0];
        let sim = simulate_cohort(&spec).unwrap();
        for t in sim.observed.trajectories() {
            assert_eq!(t.complete_values().unwrap(), spec.shapes[0].values);
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let mut spec = CohortSpec::three_shape(50, 0.1, 42);
        spec.dropout_hazard = 0.1;
        spec.intermittent_prob = 0.05;
        let a = simulate_cohort(&spec).unwrap();
        let b = simulate_cohort(&spec).unwrap();
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.labels, b.labels);
        spec.seed = 43;
        assert_ne!(simulate_cohort(&spec).unwrap().observed, a.observed);
    }

    #[test]
    fn observed_is_masked_truth() {
        let mut spec = CohortSpec::three_shape(200, 0.1, 5);
        spec.dropout_hazard = 0.1;
        spec.intermittent_prob = 0.1;
        let sim = simulate_cohort(&spec).unwrap();
        for (o, t) in sim.observed.trajectories().iter().zip(sim.truth.trajectories()) {
            assert!(t.is_complete());
            assert!(o.values[0].is_some());
            for (ov, tv) in o.values.iter().zip(&t.values) {
                if let Some(v) = ov {
                    assert_eq!(Some(*v), *tv);
                }
            }
        }
        assert_eq!(sim.observed.trajectories().iter().filter(|t| t.is_complete()).count(), sim.complete_count);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = CohortSpec::three_shape(10, 0.1, 0);
        spec.shapes[0].weight = 0.9;
        assert!(matches!(simulate_cohort(&spec), Err(Error::InvalidSpec(_))));
        let mut spec = CohortSpec::three_shape(10, 0.1, 0);
        spec.dropout_hazard = 1.5;
        assert!(simulate_cohort(&spec).is_err());
        let mut spec = CohortSpec::three_shape(10, 0.1, 0);
        spec.shapes[1].values.pop();
        assert!(simulate_cohort(&spec).is_err());
    }

    #[test]
    fn default_shapes_have_requested_change() {
        let spec = CohortSpec::three_shape(10, 0.1, 0);
        let change = |s: &ShapeSpec| s.values[4] - s.values[0];
        assert_eq!(spec.shapes[0].values, vec![0.0; 5]);
        assert!((change(&spec.shapes[1]) - 0.2).abs() < 1e-15);
        assert!((change(&spec.shapes[2]) + 0.8).abs() < 1e-15);
        assert_eq!(linear_shape(&DEFAULT_SCHEDULE, -0.8)[2], -0.8 * 12.0 / 36.0);
    }
}
