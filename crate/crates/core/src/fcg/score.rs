use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FairMetric, FcgConfig, FcgError, PredMetric};
use crate::metrics::FairnessReport;
use crate::tabular::Subgroup;

fn pick(report: &FairnessReport, config: &FcgConfig) -> Result<(f64, f64), FcgError> {
    let (pred_name, pred) = match config.pred_metric {
        PredMetric::Accuracy => ("accuracy", report.accuracy),
        PredMetric::FScore => ("f_score", report.f_score),
    };
    let (fair_name, fair) = match config.fair_metric {
        FairMetric::RDp => ("r_dp", report.r_dp),
        FairMetric::REo => ("r_eo", report.r_eo),
    };
    if !pred.is_finite() {
        return Err(FcgError::MetricUndefined(pred_name));
    }
    if !fair.is_finite() {
        return Err(FcgError::MetricUndefined(fair_name));
    }
    Ok((pred, fair))
}

/// `α·max(Δpred, p) + (1 − α)·max(Δfair, p)` where each Δ is the gain over
/// the zero-shot baseline on the same dev set.
pub fn compute_evol_score(
    baseline: &FairnessReport,
    icl: &FairnessReport,
    config: &FcgConfig,
) -> Result<f64, FcgError> {
    let (base_pred, base_fair) = pick(baseline, config)?;
    let (pred, fair) = pick(icl, config)?;
    let d_pred = (pred - base_pred).max(config.p);
    let d_fair = (fair - base_fair).max(config.p);
    Ok(config.alpha * d_pred + (1.0 - config.alpha) * d_fair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: u64,
    /// Scores of the iterations that selected this candidate.
    pub history: Vec<f64>,
    /// Mean of `history`, or the initial score when it is empty.
    pub score: f64,
}

impl CandidateScore {
    pub fn selections(&self) -> usize {
        self.history.len()
    }
}

/// Per-candidate scores of one subgroup pool, kept in pool (ascending id) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolScoreTable {
    pub subgroup: Subgroup,
    pub initial: f64,
    entries: Vec<CandidateScore>,
}

impl EvolScoreTable {
    pub fn new(subgroup: Subgroup, ids: &[u64], initial: f64) -> Self {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        EvolScoreTable {
            subgroup,
            initial,
            entries: ids
                .into_iter()
                .map(|id| CandidateScore {
                    id,
                    history: Vec::new(),
                    score: initial,
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[CandidateScore] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&CandidateScore> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Append `score` to each selected candidate and recompute its mean.
    pub fn record(&mut self, ids: &[u64], score: f64) {
        for id in ids {
            if let Ok(i) = self.entries.binary_search_by_key(id, |e| e.id) {
                let e = &mut self.entries[i];
                e.history.push(score);
                e.score = e.history.iter().sum::<f64>() / e.history.len() as f64;
            }
        }
    }

    /// Highest score first; equal scores by more selections, then ascending id.
    pub fn ranked(&self) -> Vec<&CandidateScore> {
        let mut out: Vec<&CandidateScore> = self.entries.iter().collect();
        out.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.selections().cmp(&a.selections()))
                .then(a.id.cmp(&b.id))
        });
        out
    }

    pub fn ranked_ids(&self) -> Vec<u64> {
        self.ranked().into_iter().map(|e| e.id).collect()
    }
}

/// Draw `k` distinct candidates, each draw proportional to the current scores
/// of those still available.
pub fn roulette_select<R: Rng + ?Sized>(table: &EvolScoreTable, k: usize, rng: &mut R) -> Result<Vec<u64>, FcgError> {
    if k > table.len() {
        return Err(FcgError::PoolTooSmall { k, pool: table.len() });
    }
    let mut remaining: Vec<(u64, f64)> = table.entries.iter().map(|e| (e.id, e.score)).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut target = rng.gen::<f64>() * total;
        let mut idx = remaining.len() - 1;
        for (i, (_, w)) in remaining.iter().enumerate() {
            if target < *w {
                idx = i;
                break;
            }
            target -= w;
        }
        out.push(remaining.remove(idx).0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn report(f_score: f64, r_eo: f64) -> FairnessReport {
        FairnessReport {
            accuracy: 0.7,
            precision: 0.7,
            recall: 0.7,
            f_score,
            precision_undefined: false,
            dp0: 0.3,
            dp1: 0.4,
            delta_dp: 0.1,
            r_dp: 0.75,
            tpr0: 0.5,
            tpr1: 0.6,
            fpr0: 0.1,
            fpr1: 0.2,
            delta_tpr: 0.1,
            delta_fpr: 0.1,
            delta_eo: 0.1,
            r_eo,
            r_eo_clamped: r_eo.clamp(0.0, 1.0),
            epsilon: 1e-6,
            n_rows: 60,
            n_abstained: 0,
            subgroup_counts: [15; 4],
        }
    }

    #[test]
    fn score_from_published_baseline_and_fcg_values() {
        let s = compute_evol_score(&report(0.5882, 0.1111), &report(0.7979, 0.7021), &FcgConfig::default()).unwrap();
        let oracle = 0.5 * (0.7979 - 0.5882) + 0.5 * (0.7021 - 0.1111);
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 0.40035).abs() < 1e-9);
    }

    #[test]
    fn worse_than_baseline_scores_p() {
        let s = compute_evol_score(&report(0.8, 0.8), &report(0.5, 0.3), &FcgConfig::default()).unwrap();
        assert!((s - 0.05).abs() < 1e-15);
    }

    #[test]
    fn alpha_one_is_pure_prediction_gain() {
        let c = FcgConfig {
            alpha: 1.0,
            ..FcgConfig::default()
        };
        let s = compute_evol_score(&report(0.5, 0.1), &report(0.8, 0.9), &c).unwrap();
        assert!((s - 0.3).abs() < 1e-12);
    }

    #[test]
    fn non_finite_metric_is_an_error() {
        let r = compute_evol_score(&report(0.5, 0.1), &report(f64::NAN, 0.9), &FcgConfig::default());
        assert!(matches!(r, Err(FcgError::MetricUndefined("f_score"))));
    }

    #[test]
    fn table_mean_and_ranking() {
        let mut t = EvolScoreTable::new(Subgroup::G3, &[5, 1, 3], 0.05);
        t.record(&[3, 5], 0.2);
        t.record(&[3], 0.4);
        assert_eq!(t.get(3).unwrap().history, vec![0.2, 0.4]);
        assert!((t.get(3).unwrap().score - 0.3).abs() < 1e-15);
        assert_eq!(t.get(1).unwrap().score, 0.05);
        assert_eq!(t.ranked_ids(), vec![3, 5, 1]);
        t.record(&[1], 0.2);
        assert_eq!(t.ranked_ids(), vec![3, 1, 5]);
        // same mean, more evidence
        t.record(&[5], 0.2);
        assert_eq!(t.ranked_ids(), vec![3, 5, 1]);
    }

    #[test]
    fn fresh_table_ranks_in_pool_order() {
        let t = EvolScoreTable::new(Subgroup::G1, &[9, 2, 4], 0.05);
        assert_eq!(t.ranked_ids(), vec![2, 4, 9]);
    }

    #[test]
    fn roulette_whole_pool_and_too_small() {
        let t = EvolScoreTable::new(Subgroup::G1, &[1, 2, 3], 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut all = roulette_select(&t, 3, &mut rng).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![1, 2, 3]);
        assert!(matches!(
            roulette_select(&t, 4, &mut rng),
            Err(FcgError::PoolTooSmall { k: 4, pool: 3 })
        ));
    }

    #[test]
    fn roulette_uniform_when_scores_equal() {
        let t = EvolScoreTable::new(Subgroup::G1, &[0, 1, 2, 3], 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[roulette_select(&t, 1, &mut rng).unwrap()[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn score_at_least_p(bp in 0.0..1.0f64, bf in 0.0..1.5f64, ip in 0.0..1.0f64, if_ in 0.0..1.5f64, alpha in 0.01..0.99f64, p in 0.001..0.5f64) {
            let c = FcgConfig { alpha, p, ..FcgConfig::default() };
            let s = compute_evol_score(&report(bp, bf), &report(ip, if_), &c).unwrap();
            prop_assert!(s >= p - 1e-15);
        }

        #[test]
        fn roulette_draws_distinct_members(n in 1usize..30, seed: u64, scores in prop::collection::vec(0.01..1.0f64, 30)) {
            let ids: Vec<u64> = (0..n as u64).map(|i| i * 3).collect();
            let mut t = EvolScoreTable::new(Subgroup::G2, &ids, 0.05);
            for (id, s) in ids.iter().zip(&scores) {
                t.record(&[*id], *s);
            }
            let k = n.div_ceil(2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = roulette_select(&t, k, &mut rng).unwrap();
            let mut sorted = picks.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
            prop_assert!(picks.iter().all(|p| ids.contains(p)));
        }
    }
}
