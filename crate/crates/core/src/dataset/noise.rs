use std::collections::HashSet;

use rand::Rng;

use super::{InteractionDataset, Pair};
use crate::error::{HdrmError, Result};

impl InteractionDataset {
    /// Noisy-training protocol: the natural-noise pool (low-rated pairs) is
    /// moved into train together with the same number of uniformly random
    /// fake pairs. Val and test are untouched.
    pub fn inject_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<InteractionDataset> {
        let natural = self.natural_noise().to_vec();
        let mut taken: HashSet<Pair> = self
            .train()
            .iter()
            .chain(self.val())
            .chain(self.test())
            .chain(&natural)
            .copied()
            .collect();
        let capacity = self.num_users() * self.num_items();
        let want = natural.len();
        if taken.len() + want > capacity {
            return Err(HdrmError::Sampling(format!(
                "cannot place {want} random pairs: only {} free (user, item) cells",
                capacity - taken.len()
            )));
        }
        let mut fake = Vec::with_capacity(want);
        while fake.len() < want {
            let pair = (rng.random_range(0..self.num_users()), rng.random_range(0..self.num_items()));
            if taken.insert(pair) {
                fake.push(pair);
            }
        }
        let mut train = self.train().to_vec();
        train.extend(natural);
        train.extend(fake);
        InteractionDataset::from_splits(
            self.num_users(),
            self.num_items(),
            train,
            self.val().to_vec(),
            self.test().to_vec(),
            Vec::new(),
        )
    }
}
