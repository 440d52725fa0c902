//! Fairness-aware demonstration selection: cluster each (z, y) subgroup down
//! to a candidate pool, then score candidates over repeated roulette-wheel
//! draws evaluated against a zero-shot baseline.

mod kmeans;
mod run;
mod score;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalError;
use crate::strategies::StrategyError;
use crate::tabular::Subgroup;

pub use kmeans::{cluster_subgroup, kmeans, CandidatePool, KMeans, SubgroupPool, MAX_ITER, TOL};
pub use run::{build_pool, pick_top, run_fcg, run_fcg_with_pool, CellFill, FcgOutcome, FcgTables, IterationRecord};
pub use score::{compute_evol_score, roulette_select, CandidateScore, EvolScoreTable};

#[derive(Debug, Error)]
pub enum FcgError {
    #[error("invalid FCG configuration: {0}")]
    Config(String),
    #[error("subgroup {subgroup:?} has {size} records, fewer than {n} clusters")]
    SubgroupTooSmall {
        subgroup: Option<Subgroup>,
        size: usize,
        n: usize,
    },
    #[error("records passed for clustering span several subgroups")]
    MixedSubgroup,
    #[error("cannot draw {k} candidates from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("metric {0} is not finite")]
    MetricUndefined(&'static str),
    #[error("{skipped} of {total} iterations were skipped")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("zero-shot baseline failed: {0}")]
    Baseline(EvalError),
    #[error("no ranked table for {0}")]
    MissingTable(Subgroup),
    #[error("candidate {0} is not in the training records")]
    UnknownCandidate(u64),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredMetric {
    Accuracy,
    FScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairMetric {
    RDp,
    REo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcgConfig {
    /// Clusters per subgroup.
    pub n: usize,
    /// Records kept around each centroid.
    pub m: usize,
    /// Shots per evaluated set.
    pub k: usize,
    pub iters: usize,
    /// Initial score and improvement floor.
    pub p: f64,
    /// Weight of the prediction term against the fairness term.
    pub alpha: f64,
    pub pred_metric: PredMetric,
    pub fair_metric: FairMetric,
    pub seed: u64,
}

impl Default for FcgConfig {
    fn default() -> Self {
        FcgConfig {
            n: 8,
            m: 5,
            k: 8,
            iters: 10,
            p: 0.05,
            alpha: 0.5,
            pred_metric: PredMetric::FScore,
            fair_metric: FairMetric::REo,
            seed: 42,
        }
    }
}

impl FcgConfig {
    pub fn validate(&self) -> Result<(), FcgError> {
        let bad = |m: String| Err(FcgError::Config(m));
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return bad("n, m and k must be positive".into());
        }
        if self.n * self.m < self.k {
            return bad(format!("n·m = {} is smaller than K = {}", self.n * self.m, self.k));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return bad(format!("p must be positive, got {}", self.p));
        }
        Ok(())
    }
}
