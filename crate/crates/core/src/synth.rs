//! Planted synthetic data for desk-scale validation.
//!
//! Users and items are assigned to preference clusters. Interactions land
//! mostly within a user's own cluster and carry higher ratings there, with
//! a per-item quality offset so rankings inside a cluster are learnable.
//! Friends are drawn within clusters (shared affinity), foes across
//! clusters (anti-shared). A fraction of users is generated with low
//! activity to populate the cold-start slice.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, FeedbackKind, SignedSocialGraph};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    /// Mean interaction probability per (user, item) pair; expected record
    /// count is `users * items * density`.
    pub density: f64,
    pub friends_per_user: usize,
    pub foes_per_user: usize,
    /// Fraction of users generated with low activity (the cold slice).
    pub cold_fraction: f64,
    /// Activity multiplier of a low-activity user; the rest are scaled up
    /// so the expected record count is unchanged.
    pub cold_activity: f64,
    /// Same-cluster to cross-cluster interaction odds.
    pub affinity: f64,
    pub feedback: FeedbackKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 500,
            clusters: 4,
            density: 0.02,
            friends_per_user: 5,
            foes_per_user: 5,
            cold_fraction: 0.4,
            cold_activity: 0.2,
            affinity: 8.0,
            feedback: FeedbackKind::Explicit,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.clusters == 0 {
            return Err(Error::Validation(
                "users, items and clusters must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Validation(format!(
                "density {} outside [0, 1]",
                self.density
            )));
        }
        if !(0.0..=1.0).contains(&self.cold_fraction) {
            return Err(Error::Validation("cold_fraction outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.cold_activity) {
            return Err(Error::Validation("cold_activity outside [0, 1]".into()));
        }
        if self.affinity < 1.0 {
            return Err(Error::Validation("affinity must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub graph: SignedSocialGraph,
    pub user_clusters: Vec<usize>,
    pub item_clusters: Vec<usize>,
}

/// Balanced random cluster assignment: shuffle, then deal round-robin.
fn assign_clusters(count: usize, clusters: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let mut out = vec![0usize; count];
    for (pos, &ix) in order.iter().enumerate() {
        out[ix] = pos % clusters;
    }
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, "synth", 0);
    let c = cfg.clusters;
    let user_clusters = assign_clusters(cfg.users, c, &mut rng);
    let item_clusters = assign_clusters(cfg.items, c, &mut rng);

    // activity multipliers, mean-normalized so the expected record count
    // stays at users * items * density
    let low = cfg.cold_activity;
    let high = if cfg.cold_fraction < 1.0 {
        (1.0 - cfg.cold_fraction * low) / (1.0 - cfg.cold_fraction)
    } else {
        low
    };
    let activity: Vec<f64> = (0..cfg.users)
        .map(|_| {
            if rng.random::<f64>() < cfg.cold_fraction {
                low
            } else {
                high
            }
        })
        .collect();
    // normalize the realized mix exactly
    let mean_act = activity.iter().sum::<f64>() / cfg.users as f64;

    // same/cross-cluster interaction odds with overall mean 1
    let odd_out = c as f64 / (cfg.affinity + (c as f64 - 1.0));
    let odd_in = cfg.affinity * odd_out;

    let quality: Vec<f64> = (0..cfg.items)
        .map(|_| rng.random::<f64>() * 1.6 - 0.8)
        .collect();
    let noise = Normal::new(0.0, 0.4).expect("valid normal");

    let mut records = Vec::new();
    for u in 0..cfg.users {
        for i in 0..cfg.items {
            let same = user_clusters[u] == item_clusters[i];
            let odds = if same { odd_in } else { odd_out };
            // item quality skews popularity: quality is in [-0.8, 0.8]
            let pull = 1.0 + 0.45 * quality[i];
            let p = (cfg.density * activity[u] / mean_act * odds * pull).min(1.0);
            if rng.random::<f64>() >= p {
                continue;
            }
            let value = match cfg.feedback {
                FeedbackKind::Explicit => {
                    let base = if same { 4.3 } else { 1.7 };
                    (base + quality[i] + noise.sample(&mut rng)).round().clamp(1.0, 5.0)
                }
                FeedbackKind::Implicit => {
                    if same {
                        1.0 + rng.random_range(0..3) as f64
                    } else {
                        1.0
                    }
                }
            };
            records.push((u as u64, i as u64, value));
        }
    }
    let dataset = Dataset::from_records(records, cfg.feedback)?;

    // friends inside the cluster, foes across clusters
    let mut by_cluster: Vec<Vec<u32>> = vec![Vec::new(); c];
    for (u, &cl) in user_clusters.iter().enumerate() {
        by_cluster[cl].push(u as u32);
    }
    let mut trust = Vec::new();
    let mut distrust = Vec::new();
    for u in 0..cfg.users as u32 {
        let cl = user_clusters[u as usize];
        let mut friends = draw_peers(&by_cluster[cl], u, cfg.friends_per_user, &mut rng, None);
        let foe_pool: Vec<u32> = if c > 1 {
            (0..cfg.users as u32)
                .filter(|&v| user_clusters[v as usize] != cl)
                .collect()
        } else {
            (0..cfg.users as u32).filter(|&v| v != u).collect()
        };
        let foes = draw_peers(&foe_pool, u, cfg.foes_per_user, &mut rng, Some(&friends));
        for a in friends.drain(..) {
            trust.push((u, a));
        }
        for b in foes {
            distrust.push((u, b));
        }
    }
    // external user ids of the graph must map through the dataset, which
    // only knows users that have at least one interaction; drop the rest
    let users = dataset.user_ids();
    let map_edges = |edges: Vec<(u32, u32)>| -> Vec<(u32, u32)> {
        edges
            .into_iter()
            .filter_map(|(a, b)| {
                match (users.internal(a as u64), users.internal(b as u64)) {
                    (Some(x), Some(y)) => Some((x, y)),
                    _ => None,
                }
            })
            .collect()
    };
    let graph = SignedSocialGraph::from_edges(
        &map_edges(trust),
        &map_edges(distrust),
        dataset.n_users(),
    )?;
    Ok(SynthData {
        dataset,
        graph,
        user_clusters,
        item_clusters,
    })
}

fn draw_peers(
    pool: &[u32],
    user: u32,
    want: usize,
    rng: &mut Rng,
    exclude: Option<&Vec<u32>>,
) -> Vec<u32> {
    let candidates: Vec<u32> = pool
        .iter()
        .copied()
        .filter(|&v| v != user && exclude.map_or(true, |ex| !ex.contains(&v)))
        .collect();
    crate::sampler::sample_without_replacement(&candidates, want, rng)
}
