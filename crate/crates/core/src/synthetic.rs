//! Planted-preference interaction generator for desk-scale experiments.
//!
//! Users and items are assigned to latent groups. Each user draws most of its
//! items from its own group and the rest from a popularity-skewed background,
//! so a low-rank model can recover the structure while random rankings cannot.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::data::Interactions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_groups: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Probability that an interaction comes from the user's own group.
    pub in_group_prob: f64,
    /// Zipf exponent of the background item popularity.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_users: 600,
            num_items: 900,
            num_groups: 12,
            min_interactions: 15,
            max_interactions: 45,
            in_group_prob: 0.8,
            popularity_exponent: 0.8,
            seed: 7,
        }
    }
}

impl PlantedConfig {
    /// The 50-user preset used in quick training checks.
    pub fn tiny() -> Self {
        Self {
            num_users: 50,
            num_items: 120,
            num_groups: 5,
            min_interactions: 10,
            max_interactions: 20,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.num_groups == 0 {
            return Err(Error::InvalidConfig("planted dataset needs users, items and groups".into()));
        }
        if self.num_groups > self.num_items {
            return Err(Error::InvalidConfig("more groups than items".into()));
        }
        if self.min_interactions == 0 || self.min_interactions > self.max_interactions {
            return Err(Error::InvalidConfig("bad interaction range".into()));
        }
        if self.max_interactions > self.num_items {
            return Err(Error::InvalidConfig("max_interactions exceeds item count".into()));
        }
        if !(0.0..=1.0).contains(&self.in_group_prob) {
            return Err(Error::InvalidConfig("in_group_prob must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Interactions> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let item_group: Vec<usize> = (0..self.num_items).map(|i| i % self.num_groups).collect();
        let mut group_items: Vec<Vec<usize>> = vec![Vec::new(); self.num_groups];
        for (i, &g) in item_group.iter().enumerate() {
            group_items[g].push(i);
        }
        let popularity: Vec<f64> = (0..self.num_items)
            .map(|i| 1.0 / ((i + 1) as f64).powf(self.popularity_exponent))
            .collect();
        let background = WeightedIndex::new(&popularity).expect("positive weights");
        let group_weights: Vec<WeightedIndex<f64>> = group_items
            .iter()
            .map(|items| WeightedIndex::new(items.iter().map(|&i| popularity[i].sqrt())).expect("nonempty group"))
            .collect();

        let mut pairs = Vec::new();
        let mut chosen = vec![false; self.num_items];
        for u in 0..self.num_users {
            let group = rng.random_range(0..self.num_groups);
            let target = rng
                .random_range(self.min_interactions..=self.max_interactions)
                .min(self.num_items);
            let mut picked = Vec::with_capacity(target);
            let mut attempts = 0usize;
            while picked.len() < target && attempts < 100 * self.num_items {
                attempts += 1;
                let item = if rng.random_bool(self.in_group_prob) {
                    group_items[group][group_weights[group].sample(&mut rng)]
                } else {
                    background.sample(&mut rng)
                };
                if !chosen[item] {
                    chosen[item] = true;
                    picked.push(item);
                }
            }
            for &i in &picked {
                chosen[i] = false;
                pairs.push((u as u64, i as u64));
            }
        }
        Ok(Interactions::from_original_pairs(pairs))
    }

    /// Writes the generated interactions in edge-list layout.
    pub fn write_edge_list(&self, path: &std::path::Path) -> Result<Interactions> {
        use std::fmt::Write as _;
        let data = self.generate()?;
        let mut out = String::new();
        for &(u, i) in &data.edges {
            let _ = writeln!(out, "{} {}", data.user_ids[u], data.item_ids[i]);
        }
        std::fs::write(path, out)?;
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_within_bounds() {
        let cfg = PlantedConfig::tiny();
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a, b);
        let mut counts = vec![0usize; a.num_users()];
        for &(u, _) in &a.edges {
            counts[u] += 1;
        }
        assert!(counts.iter().all(|&c| (10..=20).contains(&c)));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PlantedConfig {
            min_interactions: 0,
            ..PlantedConfig::tiny()
        };
        assert!(cfg.generate().is_err());
    }
}
