use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    cluster_subgroup, compute_evol_score, roulette_select, CandidatePool, EvolScoreTable, FcgConfig, FcgError,
};
use crate::backend::Backend;
use crate::evaluation::{evaluate_demonstrations, EvalError};
use crate::metrics::{evaluate, FairnessReport};
use crate::prompt::PromptTemplate;
use crate::strategies::{interleave, DemonstrationSet, Provenance, Selection, StrategySpec};
use crate::tabular::{SampleRecord, Subgroup};

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub subgroup: Subgroup,
    pub iteration: usize,
    pub selected: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<FairnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcgOutcome {
    pub config: FcgConfig,
    pub baseline: FairnessReport,
    pub pool: CandidatePool,
    /// Ranked score tables in g1..g4 order.
    pub tables: Vec<EvolScoreTable>,
    pub log: Vec<IterationRecord>,
}

/// The reusable result of a run, without the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcgTables {
    pub config: FcgConfig,
    pub baseline: FairnessReport,
    pub pool: CandidatePool,
    pub tables: Vec<EvolScoreTable>,
}

impl FcgTables {
    pub fn table(&self, g: Subgroup) -> Option<&EvolScoreTable> {
        self.tables.iter().find(|t| t.subgroup == g)
    }
}

impl From<&FcgOutcome> for FcgTables {
    fn from(o: &FcgOutcome) -> Self {
        FcgTables {
            config: o.config,
            baseline: o.baseline.clone(),
            pool: o.pool.clone(),
            tables: o.tables.clone(),
        }
    }
}

fn cluster_seed(seed: u64, g: Subgroup) -> u64 {
    seed.wrapping_add(g.index() as u64)
}

fn roulette_rng(seed: u64, g: Subgroup) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + g.index() as u64);
    rng
}

/// Candidate pools for all four subgroups of `train`.
pub fn build_pool(train: &[SampleRecord], config: &FcgConfig) -> Result<CandidatePool, FcgError> {
    let mut cells = Vec::with_capacity(4);
    for g in Subgroup::ALL {
        let members: Vec<SampleRecord> = train.iter().filter(|r| r.subgroup() == g).cloned().collect();
        if members.is_empty() {
            return Err(FcgError::SubgroupTooSmall {
                subgroup: Some(g),
                size: 0,
                n: config.n,
            });
        }
        cells.push(cluster_subgroup(
            &members,
            config.n,
            config.m,
            cluster_seed(config.seed, g),
        )?);
    }
    Ok(CandidatePool { cells })
}

fn by_id(train: &[SampleRecord]) -> HashMap<u64, &SampleRecord> {
    train.iter().map(|r| (r.id, r)).collect()
}

fn lookup(index: &HashMap<u64, &SampleRecord>, ids: &[u64]) -> Result<Vec<SampleRecord>, FcgError> {
    ids.iter()
        .map(|id| {
            index
                .get(id)
                .map(|r| (*r).clone())
                .ok_or(FcgError::UnknownCandidate(*id))
        })
        .collect()
}

pub fn run_fcg<B: Backend + ?Sized>(
    train: &[SampleRecord],
    dev: &[SampleRecord],
    backend: &B,
    template: &PromptTemplate,
    config: &FcgConfig,
    max_in_flight: usize,
) -> Result<FcgOutcome, FcgError> {
    config.validate()?;
    let pool = build_pool(train, config)?;
    run_fcg_with_pool(pool, train, dev, backend, template, config, max_in_flight)
}

/// Score candidates of an existing pool. Subgroups are processed one after
/// another; iterations within a subgroup feed each other through the scores.
pub fn run_fcg_with_pool<B: Backend + ?Sized>(
    pool: CandidatePool,
    train: &[SampleRecord],
    dev: &[SampleRecord],
    backend: &B,
    template: &PromptTemplate,
    config: &FcgConfig,
    max_in_flight: usize,
) -> Result<FcgOutcome, FcgError> {
    config.validate()?;
    let baseline = evaluate_demonstrations(backend, template, &[], dev, max_in_flight)
        .and_then(|e| evaluate(&e.batch).map_err(EvalError::from))
        .map_err(FcgError::Baseline)?;
    let index = by_id(train);

    let mut tables = Vec::with_capacity(pool.cells.len());
    let mut log = Vec::new();
    for cell in &pool.cells {
        let g = cell.subgroup;
        let mut table = EvolScoreTable::new(g, &cell.ids, config.p);
        let mut rng = roulette_rng(config.seed, g);
        for iteration in 0..config.iters {
            let selected = roulette_select(&table, config.k, &mut rng)?;
            let demos = lookup(&index, &selected)?;
            let outcome = evaluate_demonstrations(backend, template, &demos, dev, max_in_flight)
                .and_then(|e| evaluate(&e.batch).map_err(EvalError::from))
                .map_err(|e| e.to_string())
                .and_then(|report| {
                    compute_evol_score(&baseline, &report, config)
                        .map(|s| (report, s))
                        .map_err(|e| e.to_string())
                });
            let record = match outcome {
                Ok((report, score)) => {
                    table.record(&selected, score);
                    IterationRecord {
                        subgroup: g,
                        iteration,
                        selected,
                        report: Some(report),
                        score: Some(score),
                        skipped: None,
                    }
                }
                Err(reason) => {
                    log::warn!("{g} iteration {iteration} skipped: {reason}");
                    IterationRecord {
                        subgroup: g,
                        iteration,
                        selected,
                        report: None,
                        score: None,
                        skipped: Some(reason),
                    }
                }
            };
            log.push(record);
        }
        tables.push(table);
    }

    let skipped = log.iter().filter(|r| r.skipped.is_some()).count();
    if skipped * 2 > log.len() {
        return Err(FcgError::TooManySkipped {
            skipped,
            total: log.len(),
        });
    }
    Ok(FcgOutcome {
        config: *config,
        baseline,
        pool,
        tables,
        log,
    })
}

/// How a strategy cell is filled from its ranked table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFill {
    /// Highest scores first.
    Top,
    /// Seeded uniform draw from the candidate pool, ignoring scores.
    PoolRandom,
}

/// Fill each cell quota of `spec` from the ranked tables. Cells are indexed
/// g1..g4 in `fills`.
pub fn pick_top(
    tables: &[EvolScoreTable],
    train: &[SampleRecord],
    spec: &StrategySpec,
    fills: [CellFill; 4],
    variant: &str,
) -> Result<DemonstrationSet, FcgError> {
    let quotas = spec.quotas()?;
    let index = by_id(train);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cells = Vec::with_capacity(4);
    for g in Subgroup::ALL {
        let need = quotas.get(g);
        if need == 0 {
            cells.push(Vec::new());
            continue;
        }
        let table = tables
            .iter()
            .find(|t| t.subgroup == g)
            .ok_or(FcgError::MissingTable(g))?;
        if need > table.len() {
            return Err(FcgError::PoolTooSmall {
                k: need,
                pool: table.len(),
            });
        }
        let ids: Vec<u64> = match fills[g.index()] {
            CellFill::Top => table.ranked_ids().into_iter().take(need).collect(),
            CellFill::PoolRandom => rand::seq::index::sample(&mut rng, table.len(), need)
                .into_iter()
                .map(|i| table.entries()[i].id)
                .collect(),
        };
        cells.push(lookup(&index, &ids)?);
    }
    Ok(DemonstrationSet::new(
        interleave(cells),
        Provenance {
            selection: Selection::Fcg {
                r_z: spec.r_z,
                r_y: spec.r_y,
                k: spec.k,
                variant: variant.to_string(),
                seed: spec.seed,
            },
            perturbations: Vec::new(),
        },
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, z: u8, y: u8) -> SampleRecord {
        SampleRecord {
            id,
            features: vec![],
            y,
            z,
        }
    }

    fn tables() -> (Vec<EvolScoreTable>, Vec<SampleRecord>) {
        let mut train = Vec::new();
        let mut tables = Vec::new();
        for g in Subgroup::ALL {
            let ids: Vec<u64> = (0..10).map(|i| g.index() as u64 * 100 + i).collect();
            train.extend(ids.iter().map(|&id| rec(id, g.z(), g.y())));
            let mut t = EvolScoreTable::new(g, &ids, 0.05);
            for (rank, id) in ids.iter().rev().enumerate() {
                t.record(&[*id], 1.0 - rank as f64 * 0.05);
            }
            tables.push(t);
        }
        (tables, train)
    }

    #[test]
    fn s2_takes_top_four_of_each_minority_cell() {
        let (tables, train) = tables();
        let d = pick_top(&tables, &train, &StrategySpec::s2(8, 1), [CellFill::Top; 4], "fcg").unwrap();
        let mut ids = d.ids();
        ids.sort_unstable();
        assert_eq!(ids, vec![206, 207, 208, 209, 306, 307, 308, 309]);
        assert_eq!(d.ids()[..2], [209, 309]);
    }

    #[test]
    fn balanced_takes_top_two_everywhere() {
        let (tables, train) = tables();
        let d = pick_top(&tables, &train, &StrategySpec::s1(8, 1), [CellFill::Top; 4], "fcg").unwrap();
        let mut ids = d.ids();
        ids.sort_unstable();
        assert_eq!(ids, vec![8, 9, 108, 109, 208, 209, 308, 309]);
    }

    #[test]
    fn ablation_mixes_top_and_random() {
        let (tables, train) = tables();
        let fills = [CellFill::Top, CellFill::Top, CellFill::Top, CellFill::PoolRandom];
        let a = pick_top(&tables, &train, &StrategySpec::s2(8, 5), fills, "fcg_y0_top").unwrap();
        let b = pick_top(&tables, &train, &StrategySpec::s2(8, 5), fills, "fcg_y0_top").unwrap();
        assert_eq!(a, b);
        let g3: Vec<u64> = a.ids().into_iter().filter(|id| (200..300).contains(id)).collect();
        assert_eq!(g3, vec![209, 208, 207, 206]);
        assert_eq!(a.ids().iter().filter(|id| (300..400).contains(*id)).count(), 4);
    }

    #[test]
    fn quota_beyond_pool() {
        let (tables, train) = tables();
        let spec = StrategySpec {
            r_z: 1.0,
            r_y: 1.0,
            k: 12,
            seed: 0,
        };
        assert!(matches!(
            pick_top(&tables, &train, &spec, [CellFill::Top; 4], "fcg"),
            Err(FcgError::PoolTooSmall { k: 12, pool: 10 })
        ));
    }
}
