//! Responder classification against the control arm.
//!
//! Each subject's full-period rate `X` (last available visit versus
//! baseline) is compared with the mean control-arm rate `Y` over the same
//! horizon. Higher rates are better.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data_model::{Group, Partition, TrajectorySet};
use crate::error::{Error, Result};
use crate::preprocess::full_period_rate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponderRule {
    /// `X - Y >= threshold * |Y|`.
    #[default]
    Margin,
    /// `X >= Y * (1 - threshold * sign(Y))`. The bound loosens as the
    /// threshold grows, so responder counts rise with it.
    Ratio,
}

impl ResponderRule {
    pub fn accepts(self, x: f64, y: f64, threshold: f64) -> bool {
        match self {
            ResponderRule::Margin => x - y >= threshold * y.abs(),
            ResponderRule::Ratio => {
                let sign = if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                x >= y * (1.0 - threshold * sign)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Compare with controls whose last visit is at the same horizon.
    #[default]
    PerHorizon,
    /// Compare with all controls regardless of horizon.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReference {
    pub horizon: f64,
    pub mean_rate: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRates {
    pub control_arm: String,
    /// Sorted by horizon; only horizons with at least one control.
    pub horizons: Vec<HorizonReference>,
    pub pooled: HorizonReference,
}

impl ReferenceRates {
    pub fn at(&self, horizon: f64) -> Option<&HorizonReference> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }

    pub fn reference(&self, horizon: f64, mode: ReferenceMode) -> Option<f64> {
        match mode {
            ReferenceMode::PerHorizon => self.at(horizon).map(|h| h.mean_rate),
            ReferenceMode::Pooled => Some(self.pooled.mean_rate),
        }
    }
}

/// Mean full-period rate of control subjects, per horizon and pooled.
/// Controls without a post-baseline value do not contribute.
pub fn placebo_reference_rates(set: &TrajectorySet, control_arm: &str) -> Result<ReferenceRates> {
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    let mut present = false;
    for t in set.trajectories().iter().filter(|t| t.arm.as_str() == control_arm) {
        present = true;
        let Ok(r) = full_period_rate(t) else { continue };
        match sums.iter_mut().find(|s| s.0 == r.horizon) {
            Some(s) => {
                s.1 += r.rate;
                s.2 += 1;
            }
            None => sums.push((r.horizon, r.rate, 1)),
        }
    }
    if !present {
        return Err(Error::InvalidParameter(format!("control arm `{control_arm}` has no subjects")));
    }
    let total: usize = sums.iter().map(|s| s.2).sum();
    if total == 0 {
        return Err(Error::InvalidParameter(format!(
            "control arm `{control_arm}` has no subject with follow-up"
        )));
    }
    sums.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pooled_sum: f64 = sums.iter().map(|s| s.1).sum();
    Ok(ReferenceRates {
        control_arm: control_arm.to_string(),
        horizons: sums
            .iter()
            .map(|&(horizon, sum, count)| HorizonReference {
                horizon,
                mean_rate: sum / count as f64,
                count,
            })
            .collect(),
        pooled: HorizonReference {
            horizon: f64::NAN,
            mean_rate: pooled_sum / total as f64,
            count: total,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponderStatus {
    Responder,
    NonResponder,
    Unclassifiable,
}

impl ResponderStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponderStatus::Responder => "responder",
            ResponderStatus::NonResponder => "non-responder",
            ResponderStatus::Unclassifiable => "unclassifiable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponderLabel {
    pub subject_id: String,
    pub arm: String,
    pub horizon: Option<f64>,
    pub rate: Option<f64>,
    pub reference: Option<f64>,
    pub status: ResponderStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponderConfig {
    pub threshold: f64,
    pub rule: ResponderRule,
    pub mode: ReferenceMode,
}

impl Default for ResponderConfig {
    fn default() -> Self {
        ResponderConfig {
            threshold: 0.20,
            rule: ResponderRule::Margin,
            mode: ReferenceMode::PerHorizon,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResponderOutcome {
    /// One row per non-control subject, in input order.
    pub labels: Vec<ResponderLabel>,
    /// Responder and non-responder groups over classifiable subjects.
    pub partition: Partition,
}

impl ResponderOutcome {
    pub fn count(&self, status: ResponderStatus) -> usize {
        self.labels.iter().filter(|l| l.status == status).count()
    }
}

pub fn classify_responders(set: &TrajectorySet, refs: &ReferenceRates, cfg: &ResponderConfig) -> Result<ResponderOutcome> {
    if !(cfg.threshold >= 0.0 && cfg.threshold.is_finite()) {
        return Err(Error::InvalidParameter(format!("threshold must be a non-negative number, got {}", cfg.threshold)));
    }
    let labels: Vec<ResponderLabel> = set
        .trajectories()
        .par_iter()
        .filter(|t| t.arm.as_str() != refs.control_arm)
        .map(|t| {
            let fp = full_period_rate(t).ok();
            let horizon = fp.map(|r| r.horizon);
            let reference = horizon.and_then(|h| refs.reference(h, cfg.mode));
            let status = match (fp, reference) {
                (Some(r), Some(y)) if cfg.rule.accepts(r.rate, y, cfg.threshold) => ResponderStatus::Responder,
                (Some(_), Some(_)) => ResponderStatus::NonResponder,
                _ => ResponderStatus::Unclassifiable,
            };
            ResponderLabel {
                subject_id: t.subject_id.clone(),
                arm: t.arm.as_str().to_string(),
                horizon,
                rate: fp.map(|r| r.rate),
                reference,
                status,
            }
        })
        .collect();

    let members = |status: ResponderStatus| -> Vec<String> {
        labels
            .iter()
            .filter(|l| l.status == status)
            .map(|l| l.subject_id.clone())
            .collect()
    };
    let groups = [ResponderStatus::Responder, ResponderStatus::NonResponder]
        .into_iter()
        .map(|s| Group {
            label: s.as_str().to_string(),
            subject_ids: members(s),
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert("control_arm".into(), json!(refs.control_arm));
    params.insert("threshold".into(), json!(cfg.threshold));
    params.insert("rule".into(), json!(cfg.rule));
    params.insert("reference".into(), json!(cfg.mode));
    params.insert("unclassifiable".into(), json!(members(ResponderStatus::Unclassifiable).len()));
    let partition = Partition::from_groups("responders", params, groups)?;
    Ok(ResponderOutcome { labels, partition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{Arm, Covariates, Trajectory, DEFAULT_SCHEDULE};

    fn traj(id: &str, arm: &str, values: [Option<f64>; 5]) -> Trajectory {
        Trajectory::new(id, Arm::new(arm), DEFAULT_SCHEDULE.to_vec(), values.to_vec())
    }

    fn ending(id: &str, arm: &str, rate: f64) -> Trajectory {
        traj(id, arm, [Some(0.0), Some(6.0 * rate), None, None, Some(36.0 * rate)])
    }

    fn set(ts: Vec<Trajectory>) -> TrajectorySet {
        TrajectorySet::validate(DEFAULT_SCHEDULE.to_vec(), ts, Covariates::default()).unwrap()
    }

    #[test]
    fn worked_rule_examples() {
        let m = ResponderRule::Margin;
        assert!(m.accepts(-0.01, -0.02, 0.2));
        assert!(!m.accepts(-0.02, -0.02, 0.2));
        assert!(m.accepts(0.001, 0.0, 0.2));
        assert!(!m.accepts(-0.001, 0.0, 0.2));
        let r = ResponderRule::Ratio;
        assert!(r.accepts(0.8, 1.0, 0.2));
        assert!(!r.accepts(0.79, 1.0, 0.2));
        assert!(r.accepts(-1.2, -1.0, 0.2));
        assert!(r.accepts(0.0, 0.0, 0.2));
    }

    #[test]
    fn reference_means() {
        let one = set(vec![ending("c1", "placebo", -0.05), ending("t1", "mi", 0.0)]);
        let refs = placebo_reference_rates(&one, "placebo").unwrap();
        assert!((refs.at(36.0).unwrap().mean_rate + 0.05).abs() < 1e-15);
        let two = set(vec![ending("c1", "placebo", -0.02), ending("c2", "placebo", -0.04)]);
        let refs = placebo_reference_rates(&two, "placebo").unwrap();
        assert!((refs.at(36.0).unwrap().mean_rate + 0.03).abs() < 1e-15);
        assert_eq!(refs.at(36.0).unwrap().count, 2);
        assert!(refs.at(12.0).is_none());
        assert!(placebo_reference_rates(&two, "mi").is_err());
    }

    #[test]
    fn classification_excludes_controls_and_flags_gaps() {
        let s = set(vec![
            ending("c1", "placebo", -0.02),
            ending("t1", "mi", -0.01),
            ending("t2", "mi", -0.02),
            traj("t3", "mi", [Some(0.0), None, None, None, None]),
            traj("t4", "omega3", [Some(0.0), Some(0.3), None, None, None]),
        ]);
        let refs = placebo_reference_rates(&s, "placebo").unwrap();
        let out = classify_responders(&s, &refs, &ResponderConfig::default()).unwrap();
        let status: Vec<_> = out.labels.iter().map(|l| (l.subject_id.as_str(), l.status)).collect();
        assert_eq!(
            status,
            vec![
                ("t1", ResponderStatus::Responder),
                ("t2", ResponderStatus::NonResponder),
                ("t3", ResponderStatus::Unclassifiable),
                ("t4", ResponderStatus::Unclassifiable),
            ]
        );
        assert_eq!(out.partition.n_subjects(), 2);
        assert!(!out.partition.contains("c1"));

        let pooled = ResponderConfig {
            mode: ReferenceMode::Pooled,
            ..ResponderConfig::default()
        };
        let out = classify_responders(&s, &refs, &pooled).unwrap();
        assert_eq!(out.labels[3].status, ResponderStatus::Responder);
        assert_eq!(out.count(ResponderStatus::Unclassifiable), 1);
    }

    #[test]
    fn margin_counts_fall_as_threshold_rises() {
        let mut ts = vec![ending("c1", "placebo", -0.02), ending("c2", "placebo", -0.03)];
        ts.extend((0..40).map(|i| ending(&format!("t{i:02}"), "mi", -0.04 + 0.001 * i as f64)));
        let s = set(ts);
        let refs = placebo_reference_rates(&s, "placebo").unwrap();
        let mut last = usize::MAX;
        for threshold in [0.0, 0.1, 0.2, 0.5, 1.0] {
            let cfg = ResponderConfig {
                threshold,
                ..ResponderConfig::default()
            };
            let n = classify_responders(&s, &refs, &cfg).unwrap().count(ResponderStatus::Responder);
            assert!(n <= last);
            last = n;
        }
        let bad = ResponderConfig {
            threshold: -0.1,
            ..ResponderConfig::default()
        };
        assert!(classify_responders(&s, &refs, &bad).is_err());
    }
}
