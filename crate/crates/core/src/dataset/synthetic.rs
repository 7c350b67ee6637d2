//! Planted block-structure interaction logs for tests and benchmarks.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Pair, RawLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Probability that a user rates an item of its own block highly.
    pub in_block_prob: f64,
    /// Out-of-block high ratings, as a fraction of the in-block positives.
    pub noise_rate: f64,
    /// Low ratings (natural noise), as a fraction of the in-block positives.
    pub natural_rate: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 200,
            items: 100,
            blocks: 2,
            in_block_prob: 0.3,
            noise_rate: 0.05,
            natural_rate: 0.1,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn user_block(&self, u: usize) -> usize {
        u * self.blocks / self.users
    }

    pub fn item_block(&self, i: usize) -> usize {
        i * self.blocks / self.items
    }
}

/// Generates a raw log where users mostly like items of their own block.
/// Ids are the strings `u<k>` / `i<k>`; positives are rated 4 or 5, natural
/// noise 1 to 3.
pub fn planted_blocks(cfg: &PlantedConfig) -> RawLog {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = RawLog::default();
    // intern in index order so dense id == numeric suffix
    for u in 0..cfg.users {
        log.users.intern(&format!("u{u}"));
    }
    for i in 0..cfg.items {
        log.items.intern(&format!("i{i}"));
    }
    let mut seen = HashMap::new();
    let mut used: HashSet<Pair> = HashSet::new();
    for u in 0..cfg.users {
        for i in 0..cfg.items {
            if cfg.user_block(u) == cfg.item_block(i) && rng.random_bool(cfg.in_block_prob) {
                let rating = if rng.random_bool(0.5) { 5.0 } else { 4.0 };
                log.push(&format!("u{u}"), &format!("i{i}"), rating, &mut seen);
                used.insert((u, i));
            }
        }
    }
    let positives = used.len();
    let capacity = cfg.users * cfg.items;
    let mut add = |n: usize, out_of_block: bool, low: bool, log: &mut RawLog, rng: &mut ChaCha8Rng| {
        let mut added = 0;
        let mut attempts = 0;
        while added < n && used.len() < capacity && attempts < 100 * (n + 1) {
            attempts += 1;
            let (u, i) = (rng.random_range(0..cfg.users), rng.random_range(0..cfg.items));
            if out_of_block && cfg.user_block(u) == cfg.item_block(i) {
                continue;
            }
            if !used.insert((u, i)) {
                continue;
            }
            let rating = if low {
                rng.random_range(1..=3) as f64
            } else if rng.random_bool(0.5) {
                5.0
            } else {
                4.0
            };
            log.push(&format!("u{u}"), &format!("i{i}"), rating, &mut seen);
            added += 1;
        }
    };
    let noise = (cfg.noise_rate * positives as f64).round() as usize;
    let natural = (cfg.natural_rate * positives as f64).round() as usize;
    add(noise, cfg.blocks > 1, false, &mut log, &mut rng);
    add(natural, false, true, &mut log, &mut rng);
    log
}
