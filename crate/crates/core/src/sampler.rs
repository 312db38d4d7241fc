//! Negative item sampling.
//!
//! Social mode draws negatives from the eligible pool
//! `E_u = I \ (I+_u ∪ ⋃_a I+_a ∪ ⋃_b I+_b)` over all friends and foes of
//! `u`, so a sampled negative is never an item somebody in the user's
//! signed neighborhood has observed. Unconditional mode (used by
//! pretraining) draws from the plain unobserved set `I-_u`.

use crate::data::{ObservedSets, SignedSocialGraph};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Social,
    Unconditional,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub negatives_per_positive: usize,
    pub mode: SamplerMode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            negatives_per_positive: 5,
            mode: SamplerMode::Social,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_positive == 0 {
            return Err(Error::Validation(
                "negatives_per_positive must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// The social-mode eligible pool for one user: every item not observed by
/// the user, any of their friends, or any of their foes. Sorted.
pub fn eligible_negatives(
    u: u32,
    observed: &ObservedSets,
    graph: &SignedSocialGraph,
) -> Vec<u32> {
    let mut blocked = vec![false; observed.n_items()];
    let mut mark = |items: &[u32]| {
        for &i in items {
            blocked[i as usize] = true;
        }
    };
    mark(observed.observed(u));
    for &a in graph.friends(u) {
        mark(observed.observed(a));
    }
    for &b in graph.foes(u) {
        mark(observed.observed(b));
    }
    (0..observed.n_items() as u32)
        .filter(|&i| !blocked[i as usize])
        .collect()
}

/// Draw `min(positives_count * negatives_per_positive, |pool|)` distinct
/// items uniformly without replacement. An empty pool yields an empty draw.
pub fn draw_negatives(
    pool: &[u32],
    positives_count: usize,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Vec<u32> {
    let want = positives_count.saturating_mul(cfg.negatives_per_positive);
    sample_without_replacement(pool, want, rng)
}

/// Uniform without-replacement sample of up to `want` items from `pool`.
/// Consumes no randomness when the pool is empty.
pub fn sample_without_replacement(pool: &[u32], want: usize, rng: &mut Rng) -> Vec<u32> {
    if pool.is_empty() || want == 0 {
        return Vec::new();
    }
    let k = want.min(pool.len());
    rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|ix| pool[ix])
        .collect()
}

/// Per-epoch cache of eligible pools plus fallback bookkeeping.
///
/// When a user's social pool is exhausted (their neighborhood covers every
/// unobserved item) the draw falls back to the unconditional pool for that
/// step instead of starving the user; the fallback is counted.
#[derive(Debug)]
pub struct NegativeSampler {
    cfg: SamplerConfig,
    pools: Vec<Vec<u32>>,       // social: E_u; unconditional: I-_u
    fallbacks: Vec<Vec<u32>>,   // I-_u, social mode only
    pub fallback_draws: usize,
    pub skipped_users: usize,
}

/// Outcome of one per-positive negative draw.
pub enum Draw {
    /// Items drawn from the social pool (or the unconditional pool in
    /// unconditional mode).
    Social(Vec<u32>),
    /// Social pool empty; items drawn from the unconditional pool instead.
    /// Friend/foe criteria must be skipped for this step because the draw
    /// no longer honors the disjointness contract.
    Fallback(Vec<u32>),
    /// Nothing to draw from at all.
    Skip,
}

impl NegativeSampler {
    pub fn new(
        cfg: SamplerConfig,
        observed: &ObservedSets,
        graph: &SignedSocialGraph,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = observed.n_users();
        let mut pools = Vec::with_capacity(n);
        let mut fallbacks = Vec::with_capacity(n);
        for u in 0..n as u32 {
            match cfg.mode {
                SamplerMode::Social => {
                    pools.push(eligible_negatives(u, observed, graph));
                    fallbacks.push(observed.unobserved(u));
                }
                SamplerMode::Unconditional => {
                    pools.push(observed.unobserved(u));
                    fallbacks.push(Vec::new());
                }
            }
        }
        Ok(NegativeSampler {
            cfg,
            pools,
            fallbacks,
            fallback_draws: 0,
            skipped_users: 0,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn pool(&self, u: u32) -> &[u32] {
        &self.pools[u as usize]
    }

    /// Draw the negative set for one positive of user `u`.
    pub fn draw_for_positive(&mut self, u: u32, rng: &mut Rng) -> Draw {
        let pool = &self.pools[u as usize];
        if !pool.is_empty() {
            let items = sample_without_replacement(pool, self.cfg.negatives_per_positive, rng);
            return Draw::Social(items);
        }
        let fallback = &self.fallbacks[u as usize];
        if self.cfg.mode == SamplerMode::Social && !fallback.is_empty() {
            self.fallback_draws += 1;
            let items = sample_without_replacement(fallback, self.cfg.negatives_per_positive, rng);
            return Draw::Fallback(items);
        }
        self.skipped_users += 1;
        Draw::Skip
    }
}
