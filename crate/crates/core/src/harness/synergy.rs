use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::train::TrainReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskGain {
    pub single: f64,
    pub multi: f64,
    /// `single − multi`; positive means joint training helped.
    pub gain: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergySummary {
    pub per_task: BTreeMap<usize, TaskGain>,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
    /// `positive_fraction − negative_fraction`, in `[−1, 1]`.
    pub net_score: f64,
    /// Gains with `|gain| ≤ tie_tolerance · single` count as neutral.
    pub tie_tolerance: f64,
}

/// Scores per-task gains from two loss tables over the same task set.
pub fn synergy_from_losses(
    multi: &BTreeMap<usize, f64>,
    single: &BTreeMap<usize, f64>,
    tie_tolerance: f64,
) -> Result<SynergySummary> {
    if !(tie_tolerance.is_finite() && tie_tolerance >= 0.0) {
        return Err(Error::config("tie_tolerance", "must be finite and non-negative"));
    }
    if multi.is_empty() || !multi.keys().eq(single.keys()) {
        return Err(Error::TaskMismatch(format!(
            "multi-task tasks {:?} vs single-task tasks {:?}",
            multi.keys().collect::<Vec<_>>(),
            single.keys().collect::<Vec<_>>()
        )));
    }
    let mut per_task = BTreeMap::new();
    let (mut pos, mut neg) = (0usize, 0usize);
    for (&task, &m) in multi {
        let s = single[&task];
        let gain = s - m;
        let outcome = if gain.abs() <= tie_tolerance * s.abs() {
            Outcome::Neutral
        } else if gain > 0.0 {
            pos += 1;
            Outcome::Positive
        } else {
            neg += 1;
            Outcome::Negative
        };
        per_task.insert(
            task,
            TaskGain {
                single: s,
                multi: m,
                gain,
                outcome,
            },
        );
    }
    let n = multi.len() as f64;
    let (positive_fraction, negative_fraction) = (pos as f64 / n, neg as f64 / n);
    Ok(SynergySummary {
        per_task,
        positive_fraction,
        negative_fraction,
        net_score: positive_fraction - negative_fraction,
        tie_tolerance,
    })
}

/// Compares a multi-task report against single-task reports. Each single
/// report contributes its `final_loss` entries; together they must cover
/// exactly the multi-task report's tasks.
pub fn synergy_report(multi: &TrainReport, singles: &[TrainReport], tie_tolerance: f64) -> Result<SynergySummary> {
    let mut single = BTreeMap::new();
    for report in singles {
        for (&task, &loss) in &report.final_loss {
            if single.insert(task, loss).is_some() {
                return Err(Error::TaskMismatch(format!("task {task} appears in more than one single-task report")));
            }
        }
    }
    synergy_from_losses(&multi.final_loss, &single, tie_tolerance)
}
