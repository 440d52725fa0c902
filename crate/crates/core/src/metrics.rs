//! Prediction and group-fairness metrics over a binary sensitive attribute.
//!
//! Group 0 is the minority. Differences are absolute values; the demographic
//! parity ratio is symmetrised as `min / (max + ε)`, while the equalized-odds
//! ratio is `min(TPR_0 / (TPR_1 + ε), FPR_0 / (FPR_1 + ε))` as written, which
//! can exceed 1 when the minority group is favoured. A clamped copy is kept in
//! [`EqualizedOdds::r_eo_clamped`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator guard for the ratio metrics.
pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("batch columns have different lengths")]
    LengthMismatch,
    #[error("label or group value {0} is not binary")]
    NotBinary(u8),
    #[error("every row abstained; metrics are undefined")]
    AllAbstained,
    #[error("group z={0} has no scored rows")]
    SubgroupMissing(u8),
    #[error("{0} is undefined: its group has no rows of that class")]
    RateUndefined(&'static str),
}

/// Aligned predictions, ground truth and group membership. A `None`
/// prediction is an abstention and is excluded from every rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    ids: Vec<u64>,
    predicted: Vec<Option<u8>>,
    truth: Vec<u8>,
    sensitive: Vec<u8>,
}

impl PredictionBatch {
    pub fn new(
        ids: Vec<u64>,
        predicted: Vec<Option<u8>>,
        truth: Vec<u8>,
        sensitive: Vec<u8>,
    ) -> Result<Self, MetricsError> {
        let n = ids.len();
        if predicted.len() != n || truth.len() != n || sensitive.len() != n {
            return Err(MetricsError::LengthMismatch);
        }
        let bad = predicted
            .iter()
            .flatten()
            .chain(&truth)
            .chain(&sensitive)
            .find(|&&v| v > 1);
        if let Some(&v) = bad {
            return Err(MetricsError::NotBinary(v));
        }
        Ok(PredictionBatch {
            ids,
            predicted,
            truth,
            sensitive,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn predicted(&self) -> &[Option<u8>] {
        &self.predicted
    }

    pub fn truth(&self) -> &[u8] {
        &self.truth
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn abstained(&self) -> usize {
        self.predicted.iter().filter(|p| p.is_none()).count()
    }

    /// The batch with abstained rows removed.
    pub fn without_abstentions(&self) -> PredictionBatch {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.predicted[i].is_some()).collect();
        PredictionBatch {
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            predicted: keep.iter().map(|&i| self.predicted[i]).collect(),
            truth: keep.iter().map(|&i| self.truth[i]).collect(),
            sensitive: keep.iter().map(|&i| self.sensitive[i]).collect(),
        }
    }

    /// Scored rows as (prediction, truth, group).
    fn scored(&self) -> impl Iterator<Item = (u8, u8, u8)> + '_ {
        (0..self.len()).filter_map(move |i| self.predicted[i].map(|p| (p, self.truth[i], self.sensitive[i])))
    }

    fn tally(&self) -> Tally {
        let mut t = Tally::default();
        for (p, y, z) in self.scored() {
            t.cells[z as usize][y as usize][p as usize] += 1;
        }
        t
    }
}

/// Counts indexed `[z][y][prediction]`.
#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    cells: [[[u64; 2]; 2]; 2],
}

impl Tally {
    fn total(&self) -> u64 {
        self.cells.iter().flatten().flatten().sum()
    }

    fn count(&self, z: Option<usize>, y: Option<usize>, p: Option<usize>) -> u64 {
        let mut n = 0;
        for zi in 0..2 {
            for yi in 0..2 {
                for pi in 0..2 {
                    if z.is_none_or(|v| v == zi) && y.is_none_or(|v| v == yi) && p.is_none_or(|v| v == pi) {
                        n += self.cells[zi][yi][pi];
                    }
                }
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Set when nothing was predicted positive; precision is then reported as 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemographicParity {
    pub dp0: f64,
    pub dp1: f64,
    pub delta_dp: f64,
    pub r_dp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualizedOdds {
    pub tpr0: f64,
    pub tpr1: f64,
    pub fpr0: f64,
    pub fpr1: f64,
    pub delta_tpr: f64,
    pub delta_fpr: f64,
    pub delta_eo: f64,
    pub r_eo: f64,
    pub r_eo_clamped: f64,
}

impl EqualizedOdds {
    pub fn from_rates(tpr0: f64, tpr1: f64, fpr0: f64, fpr1: f64) -> Self {
        let delta_tpr = (tpr1 - tpr0).abs();
        let delta_fpr = (fpr1 - fpr0).abs();
        let r_eo = (tpr0 / (tpr1 + EPSILON)).min(fpr0 / (fpr1 + EPSILON));
        EqualizedOdds {
            tpr0,
            tpr1,
            fpr0,
            fpr1,
            delta_tpr,
            delta_fpr,
            delta_eo: delta_tpr.max(delta_fpr),
            r_eo,
            r_eo_clamped: r_eo.clamp(0.0, 1.0),
        }
    }
}

pub fn prediction_metrics(batch: &PredictionBatch) -> Result<PredictionMetrics, MetricsError> {
    let t = batch.tally();
    let n = t.total();
    if n == 0 {
        return Err(MetricsError::AllAbstained);
    }
    let tp = t.count(None, Some(1), Some(1)) as f64;
    let tn = t.count(None, Some(0), Some(0)) as f64;
    let predicted_pos = t.count(None, None, Some(1)) as f64;
    let actual_pos = t.count(None, Some(1), None) as f64;

    let precision_undefined = predicted_pos == 0.0;
    let precision = if precision_undefined { 0.0 } else { tp / predicted_pos };
    let recall = if actual_pos == 0.0 { 0.0 } else { tp / actual_pos };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PredictionMetrics {
        accuracy: (tp + tn) / n as f64,
        precision,
        recall,
        f_score,
        precision_undefined,
    })
}

pub fn demographic_parity(batch: &PredictionBatch) -> Result<DemographicParity, MetricsError> {
    let t = batch.tally();
    let rate = |z: usize| {
        let n = t.count(Some(z), None, None);
        if n == 0 {
            return Err(MetricsError::SubgroupMissing(z as u8));
        }
        Ok(t.count(Some(z), None, Some(1)) as f64 / n as f64)
    };
    let dp0 = rate(0)?;
    let dp1 = rate(1)?;
    Ok(DemographicParity {
        dp0,
        dp1,
        delta_dp: (dp1 - dp0).abs(),
        r_dp: dp0.min(dp1) / (dp0.max(dp1) + EPSILON),
    })
}

pub fn equalized_odds(batch: &PredictionBatch) -> Result<EqualizedOdds, MetricsError> {
    let t = batch.tally();
    let rate = |z: usize, y: usize, name: &'static str| {
        let n = t.count(Some(z), Some(y), None);
        if n == 0 {
            return Err(MetricsError::RateUndefined(name));
        }
        Ok(t.count(Some(z), Some(y), Some(1)) as f64 / n as f64)
    };
    Ok(EqualizedOdds::from_rates(
        rate(0, 1, "TPR_0")?,
        rate(1, 1, "TPR_1")?,
        rate(0, 0, "FPR_0")?,
        rate(1, 0, "FPR_1")?,
    ))
}

/// Every metric for one evaluated batch, flattened for report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub precision_undefined: bool,
    pub dp0: f64,
    pub dp1: f64,
    pub delta_dp: f64,
    pub r_dp: f64,
    pub tpr0: f64,
    pub tpr1: f64,
    pub fpr0: f64,
    pub fpr1: f64,
    pub delta_tpr: f64,
    pub delta_fpr: f64,
    pub delta_eo: f64,
    pub r_eo: f64,
    pub r_eo_clamped: f64,
    pub epsilon: f64,
    pub n_rows: usize,
    pub n_abstained: usize,
    /// Scored rows per (z, y) cell in g1..g4 order.
    pub subgroup_counts: [u64; 4],
}

/// Names accepted by [`FairnessReport::metric`], in report order.
pub const METRIC_NAMES: [&str; 14] = [
    "accuracy",
    "precision",
    "recall",
    "f_score",
    "r_dp",
    "r_eo",
    "delta_dp",
    "delta_eo",
    "tpr0",
    "tpr1",
    "fpr0",
    "fpr1",
    "delta_tpr",
    "delta_fpr",
];

impl FairnessReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "recall" => self.recall,
            "f_score" => self.f_score,
            "dp0" => self.dp0,
            "dp1" => self.dp1,
            "delta_dp" => self.delta_dp,
            "r_dp" => self.r_dp,
            "tpr0" => self.tpr0,
            "tpr1" => self.tpr1,
            "fpr0" => self.fpr0,
            "fpr1" => self.fpr1,
            "delta_tpr" => self.delta_tpr,
            "delta_fpr" => self.delta_fpr,
            "delta_eo" => self.delta_eo,
            "r_eo" => self.r_eo,
            "r_eo_clamped" => self.r_eo_clamped,
            _ => return None,
        })
    }

    pub fn abstention_rate(&self) -> f64 {
        if self.n_rows == 0 {
            0.0
        } else {
            self.n_abstained as f64 / self.n_rows as f64
        }
    }
}

pub fn evaluate(batch: &PredictionBatch) -> Result<FairnessReport, MetricsError> {
    let pm = prediction_metrics(batch)?;
    let dp = demographic_parity(batch)?;
    let eo = equalized_odds(batch)?;
    let t = batch.tally();
    let cell = |z: usize, y: usize| t.count(Some(z), Some(y), None);
    Ok(FairnessReport {
        accuracy: pm.accuracy,
        precision: pm.precision,
        recall: pm.recall,
        f_score: pm.f_score,
        precision_undefined: pm.precision_undefined,
        dp0: dp.dp0,
        dp1: dp.dp1,
        delta_dp: dp.delta_dp,
        r_dp: dp.r_dp,
        tpr0: eo.tpr0,
        tpr1: eo.tpr1,
        fpr0: eo.fpr0,
        fpr1: eo.fpr1,
        delta_tpr: eo.delta_tpr,
        delta_fpr: eo.delta_fpr,
        delta_eo: eo.delta_eo,
        r_eo: eo.r_eo,
        r_eo_clamped: eo.r_eo_clamped,
        epsilon: EPSILON,
        n_rows: batch.len(),
        n_abstained: batch.abstained(),
        subgroup_counts: [cell(1, 0), cell(1, 1), cell(0, 0), cell(0, 1)],
    })
}
