//! Interaction data: raw logs, binarized positives, train/val/test splits
//! and the train-graph adjacency used by the encoder.

mod io;
mod noise;
mod split;
pub mod synthetic;

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HdrmError, Result};

pub use io::{
    load_interactions, read_id_map, read_manifest, write_id_map, write_manifest, Format, IdMap,
    RawLog, RawRecord,
};
pub use split::{split, SplitOutcome, SplitSpec};

/// Ratings at or above this value are positive interactions.
pub const DEFAULT_RATING_THRESHOLD: f64 = 4.0;

/// A `(user, item)` pair with dense ids.
pub type Pair = (usize, usize);

/// Positives and the natural-noise pool produced by [`binarize`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binarized {
    pub positives: Vec<Pair>,
    /// Pairs rated below the threshold, retained for the noisy setting.
    pub natural_noise: Vec<Pair>,
}

/// Keeps records rated `>= threshold` as positives. Lower-rated records go
/// to the natural-noise pool.
pub fn binarize(records: &[RawRecord], threshold: f64) -> Binarized {
    let mut out = Binarized::default();
    for r in records {
        if r.rating >= threshold {
            out.positives.push((r.user, r.item));
        } else {
            out.natural_noise.push((r.user, r.item));
        }
    }
    out
}

/// Table-1 style counts for a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub interactions: usize,
    pub natural_noise: usize,
    pub density: f64,
}

/// An immutable, split interaction dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    train: Vec<Pair>,
    val: Vec<Pair>,
    test: Vec<Pair>,
    natural_noise: Vec<Pair>,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
    user_val: Vec<Vec<usize>>,
    user_test: Vec<Vec<usize>>,
}

fn check_pairs(name: &str, pairs: &[Pair], num_users: usize, num_items: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(pairs.len());
    for &(u, i) in pairs {
        if u >= num_users || i >= num_items {
            return Err(HdrmError::Data(format!(
                "{name} pair ({u}, {i}) outside id space {num_users}x{num_items}"
            )));
        }
        if !seen.insert((u, i)) {
            return Err(HdrmError::Data(format!("{name} pair ({u}, {i}) appears twice")));
        }
    }
    Ok(())
}

fn group(pairs: &[Pair], n: usize, by_item: bool) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n];
    for &(u, i) in pairs {
        if by_item {
            out[i].push(u);
        } else {
            out[u].push(i);
        }
    }
    for list in &mut out {
        list.sort_unstable();
    }
    out
}

impl InteractionDataset {
    /// Builds a dataset, checking id ranges, per-split uniqueness and split
    /// disjointness. Adjacency comes from `train` only.
    pub fn from_splits(
        num_users: usize,
        num_items: usize,
        train: Vec<Pair>,
        val: Vec<Pair>,
        test: Vec<Pair>,
        natural_noise: Vec<Pair>,
    ) -> Result<Self> {
        check_pairs("train", &train, num_users, num_items)?;
        check_pairs("val", &val, num_users, num_items)?;
        check_pairs("test", &test, num_users, num_items)?;
        check_pairs("natural-noise", &natural_noise, num_users, num_items)?;
        let train_set: HashSet<Pair> = train.iter().copied().collect();
        let val_set: HashSet<Pair> = val.iter().copied().collect();
        if let Some(p) = val.iter().find(|p| train_set.contains(p)) {
            return Err(HdrmError::Data(format!("pair {p:?} is in both train and val")));
        }
        if let Some(p) = test
            .iter()
            .find(|p| train_set.contains(p) || val_set.contains(p))
        {
            return Err(HdrmError::Data(format!("test pair {p:?} overlaps another split")));
        }
        let test_set: HashSet<Pair> = test.iter().copied().collect();
        if let Some(p) = natural_noise
            .iter()
            .find(|p| train_set.contains(p) || val_set.contains(p) || test_set.contains(p))
        {
            return Err(HdrmError::Data(format!("natural-noise pair {p:?} is also a positive")));
        }
        Ok(InteractionDataset {
            user_items: group(&train, num_users, false),
            item_users: group(&train, num_items, true),
            user_val: group(&val, num_users, false),
            user_test: group(&test, num_users, false),
            num_users,
            num_items,
            train,
            val,
            test,
            natural_noise,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn train(&self) -> &[Pair] {
        &self.train
    }

    pub fn val(&self) -> &[Pair] {
        &self.val
    }

    pub fn test(&self) -> &[Pair] {
        &self.test
    }

    pub fn natural_noise(&self) -> &[Pair] {
        &self.natural_noise
    }

    /// Train neighbours `N_u` of a user, sorted.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.user_items[user]
    }

    /// Train neighbours `N_i` of an item, sorted.
    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.item_users[item]
    }

    pub fn user_adjacency(&self) -> &[Vec<usize>] {
        &self.user_items
    }

    pub fn item_adjacency(&self) -> &[Vec<usize>] {
        &self.item_users
    }

    pub fn user_val(&self, user: usize) -> &[usize] {
        &self.user_val[user]
    }

    pub fn user_test(&self, user: usize) -> &[usize] {
        &self.user_test[user]
    }

    pub fn is_train_positive(&self, user: usize, item: usize) -> bool {
        self.user_items[user].binary_search(&item).is_ok()
    }

    /// Train interaction count per item.
    pub fn popularity(&self) -> Vec<usize> {
        self.item_users.iter().map(Vec::len).collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let interactions = self.train.len() + self.val.len() + self.test.len();
        DatasetStats {
            users: self.num_users,
            items: self.num_items,
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
            interactions,
            natural_noise: self.natural_noise.len(),
            density: interactions as f64 / (self.num_users.max(1) * self.num_items.max(1)) as f64,
        }
    }

    /// Draws an item uniformly from the complement of the user's train
    /// positives.
    pub fn sample_negative<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Result<usize> {
        let positives = &self.user_items[user];
        let free = self.num_items - positives.len();
        if free == 0 {
            return Err(HdrmError::Sampling(format!(
                "user {user} interacted with every item"
            )));
        }
        // Rejection is cheap unless the user covers most of the catalogue.
        if free * 4 >= self.num_items {
            loop {
                let j = rng.random_range(0..self.num_items);
                if positives.binary_search(&j).is_err() {
                    return Ok(j);
                }
            }
        }
        let mut k = rng.random_range(0..free);
        let mut cursor = 0;
        for j in 0..self.num_items {
            if cursor < positives.len() && positives[cursor] == j {
                cursor += 1;
                continue;
            }
            if k == 0 {
                return Ok(j);
            }
            k -= 1;
        }
        unreachable!("complement is non-empty")
    }
}
