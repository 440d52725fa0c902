use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DataError, SampleRecord};

/// The four (z, y) cells. Numbering follows g1(Z=1,Y=0), g2(Z=1,Y=1),
/// g3(Z=0,Y=0), g4(Z=0,Y=1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subgroup {
    G1,
    G2,
    G3,
    G4,
}

impl Subgroup {
    pub const ALL: [Subgroup; 4] = [Subgroup::G1, Subgroup::G2, Subgroup::G3, Subgroup::G4];

    pub fn of(z: u8, y: u8) -> Subgroup {
        match (z, y) {
            (1, 0) => Subgroup::G1,
            (1, 1) => Subgroup::G2,
            (0, 0) => Subgroup::G3,
            (0, 1) => Subgroup::G4,
            _ => panic!("z and y must be binary, got z={z} y={y}"),
        }
    }

    pub fn z(self) -> u8 {
        match self {
            Subgroup::G1 | Subgroup::G2 => 1,
            Subgroup::G3 | Subgroup::G4 => 0,
        }
    }

    pub fn y(self) -> u8 {
        match self {
            Subgroup::G1 | Subgroup::G3 => 0,
            Subgroup::G2 | Subgroup::G4 => 1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subgroup::G1 => "g1",
            Subgroup::G2 => "g2",
            Subgroup::G3 => "g3",
            Subgroup::G4 => "g4",
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(z={},y={})", self.name(), self.z(), self.y())
    }
}

/// Record ids of a slice split by (z, y) cell, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    cells: [Vec<u64>; 4],
}

impl SubgroupPartition {
    pub fn get(&self, g: Subgroup) -> &[u64] {
        &self.cells[g.index()]
    }

    pub fn counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.cells[i].len())
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Subgroup, &[u64])> {
        Subgroup::ALL.into_iter().map(move |g| (g, self.get(g)))
    }
}

pub fn partition_subgroups(records: &[SampleRecord]) -> SubgroupPartition {
    let mut part = SubgroupPartition::default();
    for r in records {
        part.cells[r.subgroup().index()].push(r.id);
    }
    part
}

/// `r_z` is the share of minority (z = 0) records, `r_y` the share of y = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub r_z: f64,
    pub r_y: f64,
}

pub fn compute_ratios(subset: &[SampleRecord]) -> Result<Ratios, DataError> {
    if subset.is_empty() {
        return Err(DataError::EmptySubset);
    }
    let n = subset.len() as f64;
    let minority = subset.iter().filter(|r| r.z == 0).count() as f64;
    let negative = subset.iter().filter(|r| r.y == 0).count() as f64;
    Ok(Ratios {
        r_z: minority / n,
        r_y: negative / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: u64, z: u8, y: u8) -> SampleRecord {
        SampleRecord {
            id,
            features: vec![],
            y,
            z,
        }
    }

    #[test]
    fn all_minority_positive_lands_in_g4() {
        let recs: Vec<_> = (0..5).map(|i| rec(i, 0, 1)).collect();
        let p = partition_subgroups(&recs);
        assert_eq!(p.counts(), [0, 0, 0, 5]);
    }

    #[test]
    fn one_of_each() {
        let recs = vec![rec(0, 1, 0), rec(1, 1, 1), rec(2, 0, 0), rec(3, 0, 1)];
        let p = partition_subgroups(&recs);
        assert_eq!(p.counts(), [1, 1, 1, 1]);
        assert_eq!(p.get(Subgroup::G3), &[2]);
    }

    #[test]
    fn ratio_extremes() {
        let minority: Vec<_> = (0..4).map(|i| rec(i, 0, i as u8 % 2)).collect();
        assert_eq!(compute_ratios(&minority).unwrap().r_z, 1.0);
        let majority: Vec<_> = (0..4).map(|i| rec(i, 1, 1)).collect();
        assert_eq!(compute_ratios(&majority).unwrap().r_z, 0.0);
        assert!(matches!(compute_ratios(&[]), Err(DataError::EmptySubset)));
    }

    #[test]
    fn three_of_eight_negative() {
        let recs: Vec<_> = (0..8).map(|i| rec(i, 1, u8::from(i >= 3))).collect();
        assert_eq!(compute_ratios(&recs).unwrap().r_y, 0.375);
    }

    proptest! {
        #[test]
        fn partition_matches_direct_counts(cells in prop::collection::vec((0u8..2, 0u8..2), 0..100)) {
            let recs: Vec<_> = cells.iter().enumerate().map(|(i, &(z, y))| rec(i as u64, z, y)).collect();
            let p = partition_subgroups(&recs);
            let mut expected = [0usize; 4];
            for &(z, y) in &cells {
                let idx = match (z, y) { (1, 0) => 0, (1, 1) => 1, (0, 0) => 2, _ => 3 };
                expected[idx] += 1;
            }
            prop_assert_eq!(p.counts(), expected);

            let mut ids: Vec<u64> = p.iter().flat_map(|(_, ids)| ids.to_vec()).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..recs.len() as u64).collect::<Vec<_>>());
            for (g, ids) in p.iter() {
                for id in ids {
                    let r = &recs[*id as usize];
                    prop_assert_eq!((r.z, r.y), (g.z(), g.y()));
                }
            }

            let minority: Vec<_> = recs.iter().filter(|r| r.z == 0).cloned().collect();
            if !minority.is_empty() {
                prop_assert_eq!(compute_ratios(&minority).unwrap().r_z, 1.0);
            }
        }
    }
}
