use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, SampleRecord, Subgroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub dev: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 9,
            dev: 1,
            test: 10,
        }
    }
}

impl SplitRatio {
    fn parts(&self) -> [u32; 3] {
        [self.train, self.dev, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SampleRecord>,
    pub dev: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub seed: u64,
    pub ratio: SplitRatio,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

/// Seeded shuffle, then contiguous train/dev/test slices. Slice boundaries are
/// the cumulative ratio shares rounded half-up, so each size is within one of
/// its exact proportion.
pub fn split_dataset(records: &[SampleRecord], seed: u64, ratio: SplitRatio) -> Result<DatasetSplit, DataError> {
    if ratio.parts().contains(&0) {
        return Err(DataError::BadRatio(ratio.parts()));
    }
    let n = records.len();
    if n < 3 {
        return Err(DataError::TooFewRecords(n));
    }
    let mut shuffled = records.to_vec();
    shuffled.sort_by_key(|r| r.id);
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total: u64 = ratio.parts().iter().map(|&c| c as u64).sum();
    let boundary = |cum: u64| ((2 * n as u64 * cum + total) / (2 * total)) as usize;
    let b1 = boundary(ratio.train as u64);
    let b2 = boundary((ratio.train + ratio.dev) as u64);

    let test = shuffled.split_off(b2);
    let dev = shuffled.split_off(b1);
    Ok(DatasetSplit {
        train: shuffled,
        dev,
        test,
        seed,
        ratio,
    })
}

/// Draw `size` records with exactly `size / 4` in each (z, y) cell. Returned in
/// ascending id order.
pub fn extract_balanced(records: &[SampleRecord], size: usize, seed: u64) -> Result<Vec<SampleRecord>, DataError> {
    if !size.is_multiple_of(4) {
        return Err(DataError::UnbalancedSize(size));
    }
    let per_cell = size / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for g in Subgroup::ALL {
        let mut cell: Vec<&SampleRecord> = records.iter().filter(|r| r.subgroup() == g).collect();
        if cell.len() < per_cell {
            return Err(DataError::InsufficientCell {
                size,
                cell: g,
                needed: per_cell,
                available: cell.len(),
            });
        }
        cell.sort_by_key(|r| r.id);
        let picks = rand::seq::index::sample(&mut rng, cell.len(), per_cell);
        out.extend(picks.into_iter().map(|i| cell[i].clone()));
    }
    out.sort_by_key(|r| r.id);
    Ok(out)
}
