//! Deterministic 3:2:5 dataset split.
//!
//! Ids are sorted before the seeded shuffle, so the split depends only on
//! the id set and the seed, never on input ordering. Sizes are
//! floor(3n/10) / floor(2n/10) / remainder.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::input(format!(
                "split: expected one of train, val, test; got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn ids(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        let dup = ids
            .iter()
            .find(|id| ids.iter().filter(|x| x == id).count() > 1)
            .expect("a duplicate exists");
        return Err(Error::input(format!("duplicate id {dup:?} in split input")));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n = sorted.len();
    let n_train = 3 * n / 10;
    let n_val = 2 * n / 10;
    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    Ok(DatasetSplit {
        train: sorted,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:05}")).collect()
    }

    #[test]
    fn ratio_sizes_for_reference_counts() {
        for (n, want) in [(100, (30, 20, 50)), (10, (3, 2, 5)), (10000, (3000, 2000, 5000))] {
            let s = split_dataset(&ids(n), 1).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), want, "n={n}");
        }
    }

    #[test]
    fn remainder_goes_to_test() {
        let s = split_dataset(&ids(7), 1).unwrap();
        // floor(21/10)=2, floor(14/10)=1, remainder 4
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2, 1, 4));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_dataset(&ids(50), 9).unwrap();
        let b = split_dataset(&ids(50), 9).unwrap();
        let c = split_dataset(&ids(50), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invariant_to_input_ordering() {
        let mut shuffled = ids(40);
        shuffled.reverse();
        shuffled.swap(0, 17);
        let a = split_dataset(&ids(40), 3).unwrap();
        let b = split_dataset(&shuffled, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicates_are_an_error() {
        let mut xs = ids(5);
        xs.push("id00002".to_string());
        let err = split_dataset(&xs, 1).unwrap_err().to_string();
        assert!(err.contains("id00002"), "{err}");
    }

    proptest! {
        #[test]
        fn prop_disjoint_cover_and_sizes(n in 1usize..300, seed in 0u64..50) {
            let input = ids(n);
            let s = split_dataset(&input, seed).unwrap();
            prop_assert_eq!(s.train.len(), 3 * n / 10);
            prop_assert_eq!(s.val.len(), 2 * n / 10);
            prop_assert_eq!(s.total(), n);
            let mut all: Vec<&String> =
                s.train.iter().chain(&s.val).chain(&s.test).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            let input_set: std::collections::BTreeSet<_> = input.iter().collect();
            prop_assert!(all.iter().all(|id| input_set.contains(id)));
        }
    }
}
