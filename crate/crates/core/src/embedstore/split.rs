use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, StoreView};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    Train,
    Test,
}

/// A train/test assignment for every row of a store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub assignment: Vec<SplitSide>,
}

impl Split {
    pub fn train_rows(&self) -> Vec<usize> {
        self.rows_on(SplitSide::Train)
    }

    pub fn test_rows(&self) -> Vec<usize> {
        self.rows_on(SplitSide::Test)
    }

    fn rows_on(&self, side: SplitSide) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == side).then_some(i))
            .collect()
    }

    pub fn train<'a>(&self, store: &'a EmbeddingStore) -> StoreView<'a> {
        StoreView::from_rows(store, self.train_rows())
    }

    pub fn test<'a>(&self, store: &'a EmbeddingStore) -> StoreView<'a> {
        StoreView::from_rows(store, self.test_rows())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Assigns each row to train or test.
///
/// Every row gets a key `hash(seed, row)`; the `round(fraction * count)` rows
/// with the smallest keys (ties by row index) form the training side. The
/// result depends only on `(seed, count, fraction)`.
pub fn split(store: &EmbeddingStore, spec: SplitSpec) -> Result<Split> {
    assign(store.len(), spec)
}

pub(crate) fn assign(count: usize, spec: SplitSpec) -> Result<Split> {
    if count == 0 {
        return Err(Error::EmptyStore);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n_train = (spec.train_fraction * count as f64).round() as usize;
    let mut keyed: Vec<(u64, usize)> =
        (0..count).map(|r| (splitmix64(spec.seed ^ splitmix64(r as u64)), r)).collect();
    keyed.sort_unstable();
    let mut assignment = vec![SplitSide::Test; count];
    for &(_, r) in &keyed[..n_train] {
        assignment[r] = SplitSide::Train;
    }
    Ok(Split { assignment })
}
