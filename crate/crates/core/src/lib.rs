//! Core library for a trust/distrust-aware top-k recommender.
//!
//! The pipeline: ingest interactions and a signed social graph, pretrain
//! user/item embeddings by matrix factorization, then train a pairwise
//! ranking scorer (a three-branch tower network or a bilinear model) with
//! six friend/foe ranking criteria and social negative sampling, and
//! finally evaluate top-k recall and NDCG.

pub mod adam;
mod binio;
pub mod criteria;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linear;
pub mod mf;
pub mod model;
pub mod rng;
pub mod sampler;
mod sets;
pub mod synth;
pub mod tower;
pub mod trainer;

pub use data::{
    ingest_interactions, ingest_signed_graph, observed_sets, split_ratings, Dataset, FeedbackKind,
    IdMap, Interaction, ObservedSets, SignedSocialGraph, Split,
};
pub use error::{Error, Result};
pub use model::{Checkpoint, CheckpointMeta, RankingModel, TrainStage};

/// Numerically stable `-ln σ(z)` = `softplus(-z)`.
pub(crate) fn neg_log_sigmoid(z: f64) -> f64 {
    softplus(-z)
}

pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
