use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Binarized, InteractionDataset, Pair};
use crate::error::{HdrmError, Result};

/// Users with fewer positives than this are dropped before splitting.
pub const MIN_USER_POSITIVES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub per_user: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
            per_user: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(HdrmError::Config(format!(
                "split ratios must be in [0,1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for a user with `n` positives: floor for
    /// val and test with a floor of one each, remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = ((self.test * n as f64).floor() as usize).max(usize::from(self.test > 0.0));
        let val = ((self.val * n as f64).floor() as usize).max(usize::from(self.val > 0.0));
        let val = val.min(n.saturating_sub(test + 1));
        (n - test - val, val, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub dataset: InteractionDataset,
    /// Original dense user ids kept, in their new order.
    pub kept_users: Vec<usize>,
    pub dropped_users: usize,
}

/// Splits binarized positives 7:1:2 (per user by default) and renumbers the
/// surviving users densely. Item ids are left untouched.
pub fn split(data: &Binarized, num_users: usize, num_items: usize, spec: &SplitSpec) -> Result<SplitOutcome> {
    spec.validate()?;
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for &(u, i) in &data.positives {
        if u >= num_users || i >= num_items {
            return Err(HdrmError::Data(format!("pair ({u}, {i}) outside id space")));
        }
        per_user[u].push(i);
    }
    let mut new_id = vec![usize::MAX; num_users];
    let mut kept_users = Vec::new();
    for (u, items) in per_user.iter().enumerate() {
        if items.len() >= MIN_USER_POSITIVES {
            new_id[u] = kept_users.len();
            kept_users.push(u);
        }
    }
    let dropped_users = per_user.iter().filter(|v| !v.is_empty()).count() - kept_users.len();
    if dropped_users > 0 {
        log::warn!("dropped {dropped_users} users with fewer than {MIN_USER_POSITIVES} positives");
    }
    if kept_users.is_empty() {
        return Err(HdrmError::EmptyDataset(
            "no user has enough positive interactions to split".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    if spec.per_user {
        for &old in &kept_users {
            let mut items = per_user[old].clone();
            items.sort_unstable();
            items.shuffle(&mut rng);
            let (_, n_val, n_test) = spec.sizes(items.len());
            let u = new_id[old];
            for (k, &i) in items.iter().enumerate() {
                let bucket = if k < n_test {
                    &mut test
                } else if k < n_test + n_val {
                    &mut val
                } else {
                    &mut train
                };
                bucket.push((u, i));
            }
        }
    } else {
        let mut pairs: Vec<Pair> = data
            .positives
            .iter()
            .filter(|(u, _)| new_id[*u] != usize::MAX)
            .map(|&(u, i)| (new_id[u], i))
            .collect();
        pairs.sort_unstable();
        pairs.shuffle(&mut rng);
        let n = pairs.len();
        let n_test = (spec.test * n as f64).floor() as usize;
        let n_val = (spec.val * n as f64).floor() as usize;
        test = pairs[..n_test].to_vec();
        val = pairs[n_test..n_test + n_val].to_vec();
        train = pairs[n_test + n_val..].to_vec();
    }
    let natural = data
        .natural_noise
        .iter()
        .filter(|(u, _)| *u < num_users && new_id[*u] != usize::MAX)
        .map(|&(u, i)| (new_id[u], i))
        .collect();
    let dataset = InteractionDataset::from_splits(kept_users.len(), num_items, train, val, test, natural)?;
    Ok(SplitOutcome {
        dataset,
        kept_users,
        dropped_users,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positives(counts: &[usize]) -> Binarized {
        let mut b = Binarized::default();
        for (u, &c) in counts.iter().enumerate() {
            for i in 0..c {
                b.positives.push((u, i));
            }
        }
        b
    }

    #[test]
    fn rounding_rule() {
        let s = SplitSpec::default();
        assert_eq!(s.sizes(10), (7, 1, 2));
        // floor gives 0 val / 0 test at n=4; each is raised to one
        assert_eq!(s.sizes(4), (2, 1, 1));
        assert_eq!(s.sizes(3), (1, 1, 1));
        assert_eq!(s.sizes(20), (14, 2, 4));
        assert_eq!(s.sizes(33), (24, 3, 6));
    }

    #[test]
    fn ten_positives_split_seven_one_two() {
        let out = split(&positives(&[10]), 1, 10, &SplitSpec::default()).unwrap();
        let ds = &out.dataset;
        assert_eq!((ds.train().len(), ds.val().len(), ds.test().len()), (7, 1, 2));
    }

    #[test]
    fn small_users_are_dropped_and_renumbered() {
        let mut data = positives(&[2, 5, 0, 4]);
        data.natural_noise = vec![(0, 7), (1, 8), (3, 9)];
        let out = split(&data, 4, 10, &SplitSpec::default()).unwrap();
        assert_eq!(out.kept_users, vec![1, 3]);
        assert_eq!(out.dropped_users, 1);
        assert_eq!(out.dataset.num_users(), 2);
        assert_eq!(out.dataset.natural_noise(), &[(0, 8), (1, 9)]);
    }

    #[test]
    fn same_seed_same_split() {
        let data = positives(&[12, 7, 30, 5]);
        let spec = SplitSpec { seed: 42, ..Default::default() };
        let a = split(&data, 4, 40, &spec).unwrap();
        let b = split(&data, 4, 40, &spec).unwrap();
        assert_eq!(a, b);
        let c = split(&data, 4, 40, &SplitSpec { seed: 43, ..Default::default() }).unwrap();
        assert_ne!(a.dataset.test(), c.dataset.test());
    }

    #[test]
    fn global_split_uses_floor_counts() {
        let spec = SplitSpec { per_user: false, ..Default::default() };
        let out = split(&positives(&[10, 10, 10]), 3, 10, &spec).unwrap();
        let ds = out.dataset;
        assert_eq!((ds.train().len(), ds.val().len(), ds.test().len()), (21, 3, 6));
    }

    #[test]
    fn rejects_bad_ratios() {
        let spec = SplitSpec { train: 0.8, ..Default::default() };
        assert!(split(&positives(&[10]), 1, 10, &spec).is_err());
    }

    #[test]
    fn everyone_too_small_is_empty() {
        assert!(matches!(
            split(&positives(&[1, 2]), 2, 5, &SplitSpec::default()),
            Err(HdrmError::EmptyDataset(_))
        ));
    }
}
