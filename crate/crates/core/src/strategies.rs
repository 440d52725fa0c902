//! Seeded demonstration selection with target (r_z, r_y) ratios, and label /
//! sensitive-attribute perturbation of an existing demonstration set.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{SampleRecord, Subgroup};

const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("invalid strategy: {0}")]
    InvalidSpec(String),
    #[error("{axis} ratio {ratio} cannot be met exactly with K={k}")]
    Unattainable { axis: &'static str, ratio: f64, k: usize },
    #[error("cell {cell} needs {needed} records, only {available} available")]
    InsufficientCell {
        cell: Subgroup,
        needed: usize,
        available: usize,
    },
    #[error("perturbation expects source ratio {expected}, demonstrations have {actual}")]
    SourceMismatch { expected: f64, actual: f64 },
    #[error("demonstration set repeats record id {0}")]
    DuplicateId(u64),
    #[error("demonstration set is empty")]
    Empty,
}

/// Target minority share `r_z`, label-0 share `r_y`, shot count and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub r_z: f64,
    pub r_y: f64,
    pub k: usize,
    pub seed: u64,
}

impl StrategySpec {
    /// Balanced groups, balanced labels.
    pub fn s1(k: usize, seed: u64) -> Self {
        StrategySpec {
            r_z: 0.5,
            r_y: 0.5,
            k,
            seed,
        }
    }

    /// Minority only, balanced labels.
    pub fn s2(k: usize, seed: u64) -> Self {
        StrategySpec {
            r_z: 1.0,
            r_y: 0.5,
            k,
            seed,
        }
    }

    /// Minority only, one label. `r_y = 1` (all y = 0) is the usual choice.
    pub fn s3(k: usize, seed: u64, r_y: f64) -> Self {
        StrategySpec { r_z: 1.0, r_y, k, seed }
    }

    pub fn quotas(&self) -> Result<CellQuotas, StrategyError> {
        CellQuotas::allocate(self.r_z, self.r_y, self.k)
    }
}

/// Record counts per (z, y) cell, indexed in g1..g4 order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellQuotas(pub [usize; 4]);

impl CellQuotas {
    /// Exact marginals `r_z·K` minority and `r_y·K` label-0 records; the joint
    /// (z=0, y=0) cell gets `round(r_z·r_y·K)` and the other cells follow from
    /// the marginals.
    pub fn allocate(r_z: f64, r_y: f64, k: usize) -> Result<CellQuotas, StrategyError> {
        if k == 0 {
            return Err(StrategyError::InvalidSpec("K must be at least 1".into()));
        }
        let minority = exact_count("r_z", r_z, k)?;
        let negative = exact_count("r_y", r_y, k)?;
        let both = (2 * minority * negative + k) / (2 * k);
        let mut q = [0; 4];
        q[Subgroup::G3.index()] = both;
        q[Subgroup::G4.index()] = minority - both;
        q[Subgroup::G1.index()] = negative - both;
        q[Subgroup::G2.index()] = k + both - minority - negative;
        Ok(CellQuotas(q))
    }

    pub fn get(&self, g: Subgroup) -> usize {
        self.0[g.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

fn exact_count(axis: &'static str, ratio: f64, k: usize) -> Result<usize, StrategyError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(StrategyError::InvalidSpec(format!("{axis}={ratio} is outside [0, 1]")));
    }
    let x = ratio * k as f64;
    if (x - x.round()).abs() > RATIO_TOL {
        return Err(StrategyError::Unattainable { axis, ratio, k });
    }
    Ok(x.round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Label,
    Sensitive,
}

impl Axis {
    fn get(self, r: &SampleRecord) -> u8 {
        match self {
            Axis::Label => r.y,
            Axis::Sensitive => r.z,
        }
    }

    fn set(self, r: &mut SampleRecord, v: u8) {
        match self {
            Axis::Label => r.y = v,
            Axis::Sensitive => r.z = v,
        }
    }
}

/// Move the share of zeros on `axis` from `source` to `target` by flipping
/// values of seeded, uniformly drawn records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub axis: Axis,
    pub source: f64,
    pub target: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Random {
        r_z: f64,
        r_y: f64,
        k: usize,
        seed: u64,
    },
    Fcg {
        r_z: f64,
        r_y: f64,
        k: usize,
        variant: String,
        seed: u64,
    },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub selection: Selection,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSpec>,
}

/// Ordered demonstrations with their realised ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    records: Vec<SampleRecord>,
    r_z: f64,
    r_y: f64,
    provenance: Provenance,
}

impl DemonstrationSet {
    pub fn new(records: Vec<SampleRecord>, provenance: Provenance) -> Result<Self, StrategyError> {
        if records.is_empty() {
            return Err(StrategyError::Empty);
        }
        let mut seen = HashSet::new();
        if let Some(r) = records.iter().find(|r| !seen.insert(r.id)) {
            return Err(StrategyError::DuplicateId(r.id));
        }
        let k = records.len() as f64;
        let r_z = records.iter().filter(|r| r.z == 0).count() as f64 / k;
        let r_y = records.iter().filter(|r| r.y == 0).count() as f64 / k;
        Ok(DemonstrationSet {
            records,
            r_z,
            r_y,
            provenance,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn r_z(&self) -> f64 {
        self.r_z
    }

    pub fn r_y(&self) -> f64 {
        self.r_y
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Round-robin over the cells in g1..g4 order.
pub(crate) fn interleave(mut cells: Vec<Vec<SampleRecord>>) -> Vec<SampleRecord> {
    let total = cells.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    for c in &mut cells {
        c.reverse();
    }
    while out.len() < total {
        for c in &mut cells {
            if let Some(r) = c.pop() {
                out.push(r);
            }
        }
    }
    out
}

/// Records of one cell, ascending by id.
pub(crate) fn cell_records(train: &[SampleRecord], g: Subgroup) -> Vec<&SampleRecord> {
    let mut cell: Vec<&SampleRecord> = train.iter().filter(|r| r.subgroup() == g).collect();
    cell.sort_by_key(|r| r.id);
    cell
}

/// Uniform sampling without replacement inside each (z, y) cell.
pub fn select_random(spec: &StrategySpec, train: &[SampleRecord]) -> Result<DemonstrationSet, StrategyError> {
    let quotas = spec.quotas()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cells = Vec::with_capacity(4);
    for g in Subgroup::ALL {
        let need = quotas.get(g);
        let pool = cell_records(train, g);
        if pool.len() < need {
            return Err(StrategyError::InsufficientCell {
                cell: g,
                needed: need,
                available: pool.len(),
            });
        }
        let picks = rand::seq::index::sample(&mut rng, pool.len(), need);
        cells.push(picks.into_iter().map(|i| pool[i].clone()).collect());
    }
    DemonstrationSet::new(
        interleave(cells),
        Provenance {
            selection: Selection::Random {
                r_z: spec.r_z,
                r_y: spec.r_y,
                k: spec.k,
                seed: spec.seed,
            },
            perturbations: Vec::new(),
        },
    )
}

pub fn perturb(demos: &DemonstrationSet, spec: &PerturbationSpec) -> Result<DemonstrationSet, StrategyError> {
    let current = match spec.axis {
        Axis::Label => demos.r_y,
        Axis::Sensitive => demos.r_z,
    };
    if (current - spec.source).abs() > RATIO_TOL {
        return Err(StrategyError::SourceMismatch {
            expected: spec.source,
            actual: current,
        });
    }
    let axis_name = match spec.axis {
        Axis::Label => "r_y",
        Axis::Sensitive => "r_z",
    };
    let k = demos.len();
    let target_zeros = exact_count(axis_name, spec.target, k)?;
    let zeros = demos.records.iter().filter(|r| spec.axis.get(r) == 0).count();

    let (from, to, flips) = if target_zeros >= zeros {
        (1, 0, target_zeros - zeros)
    } else {
        (0, 1, zeros - target_zeros)
    };
    let eligible: Vec<usize> = (0..k).filter(|&i| spec.axis.get(&demos.records[i]) == from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = demos.records.clone();
    for pick in rand::seq::index::sample(&mut rng, eligible.len(), flips) {
        spec.axis.set(&mut records[eligible[pick]], to);
    }

    let mut provenance = demos.provenance.clone();
    provenance.perturbations.push(*spec);
    DemonstrationSet::new(records, provenance)
}

/// The two raw sets used by the perturbation study: minority-only and
/// majority-only, both with balanced labels, drawn with the same seed.
pub fn build_dataf_datam(
    train: &[SampleRecord],
    k: usize,
    seed: u64,
) -> Result<(DemonstrationSet, DemonstrationSet), StrategyError> {
    let data_f = select_random(
        &StrategySpec {
            r_z: 1.0,
            r_y: 0.5,
            k,
            seed,
        },
        train,
    )?;
    let data_m = select_random(
        &StrategySpec {
            r_z: 0.0,
            r_y: 0.5,
            k,
            seed,
        },
        train,
    )?;
    Ok((data_f, data_m))
}
