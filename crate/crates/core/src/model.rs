//! Scorer abstraction shared by the tower network and the bilinear model,
//! plus the on-disk checkpoint format.

use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::binio;
use crate::criteria::PartialRelation;
use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::sigmoid;
use crate::tower::TowerModel;

/// Per-tensor gradients, flattened and aligned with the model's parameter
/// order (see [`RankingModel::param_slices_mut`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(layout: &[(String, usize)]) -> Self {
        Gradients {
            tensors: layout.iter().map(|(_, len)| vec![0.0; *len]).collect(),
        }
    }
}

/// A trainable pairwise ranking scorer over (user, item) pairs.
///
/// Parameter access is by flat slices in a fixed, documented order so the
/// optimizer and the gradient checker stay model-agnostic.
pub trait RankingModel {
    /// Raw score `s_ui`; rankings by logit and by probability agree because
    /// the sigmoid is monotone.
    fn logit(&self, user: u32, item: u32) -> f64;

    /// Ranking loss of a batch plus `lambda * ||theta||^2`, with the exact
    /// gradient for every parameter.
    fn loss_and_gradients(
        &self,
        batch: &[PartialRelation],
        lambda: f64,
    ) -> Result<(f64, Gradients)>;

    /// Mutable views of every parameter tensor, in the same order as
    /// [`RankingModel::param_layout`] and [`Gradients::tensors`].
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// (name, length) of each parameter tensor, for diagnostics.
    fn param_layout(&self) -> Vec<(String, usize)>;

    /// Predicted interaction probability `x_ui = σ(s_ui)`.
    fn probability(&self, user: u32, item: u32) -> f64 {
        sigmoid(self.logit(user, item))
    }

    /// Probability of the partial relation `i > j`: `(x_ui - x_uj)/2 + 0.5`.
    fn relation_probability(&self, user: u32, i: u32, j: u32) -> f64 {
        (self.probability(user, i) - self.probability(user, j)) / 2.0 + 0.5
    }

    /// Logits for a candidate list; models may override to hoist per-user
    /// work out of the loop.
    fn logits_for(&self, user: u32, items: &[u32]) -> Vec<f64> {
        items.iter().map(|&i| self.logit(user, i)).collect()
    }

    /// Candidates ranked by probability descending, ties broken by
    /// ascending item id. Returns (item, probability) pairs.
    fn rank_items(&self, user: u32, candidates: &[u32]) -> Vec<(u32, f64)> {
        let logits = self.logits_for(user, candidates);
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            logits[b]
                .partial_cmp(&logits[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(candidates[a].cmp(&candidates[b]))
        });
        order
            .into_iter()
            .map(|ix| (candidates[ix], sigmoid(logits[ix])))
            .collect()
    }
}

/// Training stage recorded in a checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Pretrain,
    Finetune,
    Single,
}

impl TrainStage {
    fn code(self) -> u64 {
        match self {
            TrainStage::Pretrain => 0,
            TrainStage::Finetune => 1,
            TrainStage::Single => 2,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(TrainStage::Pretrain),
            1 => Ok(TrainStage::Finetune),
            2 => Ok(TrainStage::Single),
            other => Err(Error::Incompatible(format!("unknown stage code {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainStage::Pretrain => "pretrain",
            TrainStage::Finetune => "finetune",
            TrainStage::Single => "single",
        }
    }
}

/// A trained scorer ready to save, load, or evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Tower(TowerModel),
    Linear(LinearModel),
}

/// Header carried alongside the parameter tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub stage: TrainStage,
}

const CKPT_MAGIC: &[u8; 8] = b"SOCRCKP1";

impl Checkpoint {
    pub fn as_model(&self) -> &(dyn RankingModel + Sync) {
        match self {
            Checkpoint::Tower(m) => m,
            Checkpoint::Linear(m) => m,
        }
    }

    pub fn n_users(&self) -> usize {
        match self {
            Checkpoint::Tower(m) => m.net.n_users(),
            Checkpoint::Linear(m) => m.n_users(),
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            Checkpoint::Tower(m) => m.net.n_items(),
            Checkpoint::Linear(m) => m.n_items(),
        }
    }

    /// Binary checkpoint: magic, kind, (d, h, n, m, seed, stage), then every
    /// parameter tensor. Floats round-trip bit-exactly.
    pub fn save(&self, path: &Path, meta: CheckpointMeta) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        binio::write_magic(&mut w, CKPT_MAGIC).map_err(io)?;
        match self {
            Checkpoint::Tower(m) => {
                binio::write_u64(&mut w, 0).map_err(io)?;
                Self::write_header(&mut w, m.net.d(), m.net.h(), m.net.n_users(), m.net.n_items(), meta)
                    .map_err(io)?;
                m.write_tensors(&mut w).map_err(io)?;
            }
            Checkpoint::Linear(m) => {
                binio::write_u64(&mut w, 1).map_err(io)?;
                Self::write_header(&mut w, m.d(), 0, m.n_users(), m.n_items(), meta).map_err(io)?;
                m.write_tensors(&mut w).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    fn write_header<W: std::io::Write>(
        w: &mut W,
        d: usize,
        h: usize,
        n: usize,
        m: usize,
        meta: CheckpointMeta,
    ) -> std::io::Result<()> {
        binio::write_u64(w, d as u64)?;
        binio::write_u64(w, h as u64)?;
        binio::write_u64(w, n as u64)?;
        binio::write_u64(w, m as u64)?;
        binio::write_u64(w, meta.seed)?;
        binio::write_u64(w, meta.stage.code())
    }

    pub fn load(path: &Path) -> Result<(Checkpoint, CheckpointMeta)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        binio::expect_magic(&mut r, CKPT_MAGIC, "checkpoint")?;
        let bad = |e| Error::Incompatible(format!("checkpoint: {e}"));
        let kind = binio::read_u64(&mut r).map_err(bad)?;
        let d = binio::read_u64(&mut r).map_err(bad)? as usize;
        let h = binio::read_u64(&mut r).map_err(bad)? as usize;
        let n = binio::read_u64(&mut r).map_err(bad)? as usize;
        let m = binio::read_u64(&mut r).map_err(bad)? as usize;
        let seed = binio::read_u64(&mut r).map_err(bad)?;
        let stage = TrainStage::from_code(binio::read_u64(&mut r).map_err(bad)?)?;
        let meta = CheckpointMeta { seed, stage };
        let ckpt = match kind {
            0 => Checkpoint::Tower(TowerModel::read_tensors(&mut r, d, h, n, m)?),
            1 => Checkpoint::Linear(LinearModel::read_tensors(&mut r, d, n, m)?),
            other => return Err(Error::Incompatible(format!("unknown checkpoint kind {other}"))),
        };
        Ok((ckpt, meta))
    }
}
