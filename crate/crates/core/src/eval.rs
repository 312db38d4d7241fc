//! Top-k ranking evaluation: Recall@k and NDCG@k with binary relevance,
//! cold-start slicing, and multi-run aggregation.
//!
//! Relevance on explicit feedback follows the rating-bias rule: a test item
//! is relevant iff its rating is strictly above that user's *training*
//! mean (users without train ratings fall back to the global train mean).
//! On implicit feedback every test interaction is relevant. Users with no
//! relevant test items are excluded from the averages.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{Dataset, FeedbackKind, Split};
use crate::error::{Error, Result};
use crate::model::RankingModel;

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub repeats: usize,
    /// Users with fewer train interactions than this are the cold slice.
    pub cold_start_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![10, 20],
            repeats: 5,
            cold_start_threshold: 10,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0) {
            return Err(Error::Validation("k values must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Validation("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slice {
    All,
    ColdStart,
}

impl Slice {
    pub fn as_str(self) -> &'static str {
        match self {
            Slice::All => "all",
            Slice::ColdStart => "cold_start",
        }
    }
}

/// Relevant test items for one user.
pub fn relevance_labels(ds: &Dataset, split: &Split, u: u32) -> HashSet<u32> {
    let test_items: Vec<(u32, f64)> = split
        .test()
        .iter()
        .filter(|&&(tu, _)| tu == u)
        .map(|&(_, i)| (i, ds.value(u, i).expect("split key exists")))
        .collect();
    if test_items.is_empty() {
        return HashSet::new();
    }
    match ds.kind() {
        FeedbackKind::Implicit => test_items.into_iter().map(|(i, _)| i).collect(),
        FeedbackKind::Explicit => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &(tu, ti) in split.train() {
                if tu == u {
                    sum += ds.value(tu, ti).expect("split key exists");
                    count += 1;
                }
            }
            let mean = if count > 0 {
                sum / count as f64
            } else {
                global_train_mean(ds, split)
            };
            test_items
                .into_iter()
                .filter(|&(_, r)| r > mean)
                .map(|(i, _)| i)
                .collect()
        }
    }
}

fn global_train_mean(ds: &Dataset, split: &Split) -> f64 {
    let mut sum = 0.0;
    for &(u, i) in split.train() {
        sum += ds.value(u, i).expect("split key exists");
    }
    if split.train().is_empty() {
        0.0
    } else {
        sum / split.train().len() as f64
    }
}

/// `|top-k ∩ relevant| / |relevant|`. Caller must exclude users with an
/// empty relevant set.
pub fn recall_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary NDCG: `DCG@k = sum_{j=1..k} (2^rel_j - 1) / log2(j + 1)` over the
/// ranked list, normalized by the ideal ordering truncated at k.
pub fn ndcg_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let mut dcg = 0.0;
    for (ix, i) in ranked.iter().take(k).enumerate() {
        if relevant.contains(i) {
            // rel = 1, so 2^rel - 1 = 1
            dcg += 1.0 / ((ix + 2) as f64).log2();
        }
    }
    let ideal_hits = relevant.len().min(k);
    let idcg: f64 = (0..ideal_hits).map(|j| 1.0 / ((j + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Metric means over one user slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMetrics {
    pub users: usize,
    /// `(metric, k) -> mean over users`; empty when the slice has no users.
    pub values: Vec<((Metric, usize), f64)>,
}

impl SliceMetrics {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.values
            .iter()
            .find(|((m, kk), _)| *m == metric && *kk == k)
            .map(|(_, v)| *v)
    }
}

/// Evaluation of one trained model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub all: SliceMetrics,
    pub cold: SliceMetrics,
    pub eligible_users: usize,
}

/// Evaluate a scorer: rank the full catalog minus each user's train items,
/// then average per-user metrics over the eligible users of each slice.
pub fn evaluate_model(
    model: &(dyn RankingModel + Sync),
    ds: &Dataset,
    split: &Split,
    cfg: &EvalConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    let mut train_items: Vec<Vec<u32>> = vec![Vec::new(); ds.n_users()];
    for &(u, i) in split.train() {
        train_items[u as usize].push(i);
    }
    for t in &mut train_items {
        t.sort_unstable();
    }

    let per_user: Vec<Option<(bool, Vec<f64>)>> = (0..ds.n_users() as u32)
        .into_par_iter()
        .map(|u| {
            let relevant = relevance_labels(ds, split, u);
            if relevant.is_empty() {
                return None;
            }
            let train = &train_items[u as usize];
            let candidates: Vec<u32> = (0..ds.n_items() as u32)
                .filter(|i| train.binary_search(i).is_err())
                .collect();
            if candidates.is_empty() {
                return None;
            }
            let ranked: Vec<u32> = model
                .rank_items(u, &candidates)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            let mut vals = Vec::with_capacity(cfg.ks.len() * 2);
            for &k in &cfg.ks {
                vals.push(recall_at_k(&ranked, &relevant, k));
            }
            for &k in &cfg.ks {
                vals.push(ndcg_at_k(&ranked, &relevant, k));
            }
            let cold = train.len() < cfg.cold_start_threshold;
            Some((cold, vals))
        })
        .collect();

    let keys: Vec<(Metric, usize)> = cfg
        .ks
        .iter()
        .map(|&k| (Metric::Recall, k))
        .chain(cfg.ks.iter().map(|&k| (Metric::Ndcg, k)))
        .collect();
    let mut all_sum = vec![0.0; keys.len()];
    let mut cold_sum = vec![0.0; keys.len()];
    let (mut n_all, mut n_cold) = (0usize, 0usize);
    for entry in per_user.into_iter().flatten() {
        let (cold, vals) = entry;
        n_all += 1;
        for (acc, v) in all_sum.iter_mut().zip(&vals) {
            *acc += v;
        }
        if cold {
            n_cold += 1;
            for (acc, v) in cold_sum.iter_mut().zip(&vals) {
                *acc += v;
            }
        }
    }
    if n_all == 0 {
        return Err(Error::Validation(
            "no users with relevant test items to evaluate".into(),
        ));
    }
    let fold = |sums: Vec<f64>, n: usize| SliceMetrics {
        users: n,
        values: if n == 0 {
            Vec::new()
        } else {
            keys.iter()
                .copied()
                .zip(sums.into_iter().map(|s| s / n as f64))
                .collect()
        },
    };
    Ok(RunMetrics {
        all: fold(all_sum, n_all),
        cold: fold(cold_sum, n_cold),
        eligible_users: n_all,
    })
}

/// One aggregated report line.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub model: String,
    pub ratio: f64,
    pub slice: Slice,
    pub metric: Metric,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

/// Aggregate per-repeat runs into mean and sample standard deviation.
pub fn aggregate_runs(model: &str, ratio: f64, runs: &[RunMetrics]) -> Vec<MetricRecord> {
    assert!(!runs.is_empty());
    let mut records = Vec::new();
    for (slice, pick) in [
        (Slice::All, (|r: &RunMetrics| &r.all) as fn(&RunMetrics) -> &SliceMetrics),
        (Slice::ColdStart, |r: &RunMetrics| &r.cold),
    ] {
        let keys: Vec<(Metric, usize)> = pick(&runs[0]).values.iter().map(|(k, _)| *k).collect();
        for key in keys {
            let samples: Vec<f64> = runs
                .iter()
                .filter_map(|r| pick(r).get(key.0, key.1))
                .collect();
            if samples.is_empty() {
                continue;
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let std = if samples.len() > 1 {
                let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (samples.len() - 1) as f64;
                var.sqrt()
            } else {
                0.0
            };
            records.push(MetricRecord {
                model: model.to_string(),
                ratio,
                slice,
                metric: key.0,
                k: key.1,
                mean,
                std,
            });
        }
    }
    records
}

/// Machine-readable lines: `model,split_ratio,slice,metric,k,mean,std`.
pub fn write_machine_records(records: &[MetricRecord]) -> String {
    let mut out = String::from("model,split_ratio,slice,metric,k,mean,std\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6}",
            r.model,
            r.ratio,
            r.slice.as_str(),
            r.metric.as_str(),
            r.k,
            r.mean,
            r.std
        )
        .expect("string write");
    }
    out
}

/// Human-readable comparison table, one block per split ratio: metric rows,
/// model columns, plus the relative improvement of the best model over the
/// second best, and the cold-start drop per model.
pub fn render_table(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    let mut ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ratios.dedup();
    let mut models: Vec<String> = records.iter().map(|r| r.model.clone()).collect();
    models.sort();
    models.dedup();

    for &ratio in &ratios {
        let _ = writeln!(out, "== training ratio {:.0}% ==", ratio * 100.0);
        let _ = write!(out, "{:<22}", "measure");
        for m in &models {
            let _ = write!(out, "{m:>12}");
        }
        let _ = writeln!(out, "{:>12}", "improv_%");
        let mut keys: Vec<(Metric, usize)> = records
            .iter()
            .filter(|r| r.ratio == ratio && r.slice == Slice::All)
            .map(|r| (r.metric, r.k))
            .collect();
        keys.sort();
        keys.dedup();
        let lookup = |slice: Slice, model: &str, key: (Metric, usize)| -> Option<f64> {
            records
                .iter()
                .find(|r| {
                    r.ratio == ratio
                        && r.slice == slice
                        && r.model == model
                        && (r.metric, r.k) == key
                })
                .map(|r| r.mean)
        };
        for slice in [Slice::All, Slice::ColdStart] {
            if slice == Slice::ColdStart
                && !records
                    .iter()
                    .any(|r| r.ratio == ratio && r.slice == Slice::ColdStart)
            {
                continue;
            }
            if slice == Slice::ColdStart {
                let _ = writeln!(out, "-- cold-start users --");
            }
            for &key in &keys {
                let label = format!("{}@{}{}", key.0.as_str(), key.1, match slice {
                    Slice::All => "",
                    Slice::ColdStart => " (cold)",
                });
                let _ = write!(out, "{label:<22}");
                let mut vals = Vec::new();
                for m in &models {
                    match lookup(slice, m, key) {
                        Some(v) => {
                            let _ = write!(out, "{v:>12.4}");
                            vals.push(v);
                        }
                        None => {
                            let _ = write!(out, "{:>12}", "-");
                        }
                    }
                }
                // improvement of the best over the second best
                if vals.len() >= 2 {
                    let mut sorted = vals.clone();
                    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if sorted[1] > 0.0 {
                        let imp = (sorted[0] - sorted[1]) / sorted[1] * 100.0;
                        let _ = write!(out, "{imp:>12.2}");
                    }
                }
                let _ = writeln!(out);
                if slice == Slice::ColdStart {
                    // relative drop vs the all-users row, Table-2 style
                    let _ = write!(out, "{:<22}", "  delta_%");
                    for m in &models {
                        match (lookup(Slice::All, m, key), lookup(Slice::ColdStart, m, key)) {
                            (Some(all), Some(cold)) if all > 0.0 => {
                                let _ = write!(out, "{:>12.2}", (cold - all) / all * 100.0);
                            }
                            _ => {
                                let _ = write!(out, "{:>12}", "-");
                            }
                        }
                    }
                    let _ = writeln!(out);
                }
            }
        }
        let _ = writeln!(out);
    }
    out
}
