//! Training pipeline.
//!
//! Four modes share one stage runner:
//!
//! * `bpr`  — bilinear scorer, unconditional negatives, criterion 1 only
//! * `dpl`  — tower scorer, unconditional negatives, criterion 1 only;
//!   this is also the pretraining stage
//! * `spl`  — bilinear scorer, social negatives, all six criteria
//! * `sdpl` — tower scorer pretrained as `dpl`, then fine-tuned with social
//!   negatives and all six criteria
//!
//! An epoch is one shuffled pass where every train positive contributes a
//! step: the step draws the per-positive negative set, samples one friend
//! and one foe (when the stage is social and the neighborhood is
//! non-empty), and draws `negatives_per_positive` case-weighted relations
//! into the minibatch stream.
//!
//! The degenerate reductions (an empty graph makes `spl` behave exactly
//! like `bpr`, and a social stage like an unconditional one) hold at the
//! bitwise level: the sampling pools coincide, and no randomness is
//! consumed for empty neighborhoods or single-candidate case draws.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::adam::{AdamConfig, AdamState};
use crate::criteria::{
    sample_relation, CaseWeights, CriterionContext, PartialRelation, CASE1_ONLY, UNIFORM_WEIGHTS,
};
use crate::data::{ObservedSets, SignedSocialGraph};
use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::mf::{EmbeddingTable, InteractionFrequencies};
use crate::model::{Checkpoint, RankingModel, TrainStage};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{Draw, NegativeSampler, SamplerConfig, SamplerMode};
use crate::tower::{TowerModel, TowerNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Bpr,
    Dpl,
    Spl,
    Sdpl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bpr => "bpr",
            Mode::Dpl => "dpl",
            Mode::Spl => "spl",
            Mode::Sdpl => "sdpl",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "bpr" => Ok(Mode::Bpr),
            "dpl" => Ok(Mode::Dpl),
            "spl" => Ok(Mode::Spl),
            "sdpl" => Ok(Mode::Sdpl),
            other => Err(Error::Validation(format!(
                "unknown mode {other:?} (expected bpr, dpl, spl or sdpl)"
            ))),
        }
    }

    pub fn needs_graph(self) -> bool {
        matches!(self, Mode::Spl | Mode::Sdpl)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    /// Epochs for the single-stage modes (bpr, spl).
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub negatives_per_positive: usize,
    /// Tower depth; the width comes from the embedding table.
    pub hidden_layers: usize,
    /// Unfreeze U and V inside the tower model.
    pub train_embeddings: bool,
    /// Multiplier on the ReLU weight-init std of a fresh tower.
    pub init_scale: f64,
    /// Use the geometry-preserving pooling init instead of Gaussian.
    pub pooling_init: bool,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Sdpl,
            batch_size: 512,
            learning_rate: 1e-4,
            lambda: 1e-4,
            epochs: 60,
            pretrain_epochs: 30,
            finetune_epochs: 30,
            negatives_per_positive: 5,
            hidden_layers: 4,
            train_embeddings: false,
            init_scale: 1.0,
            pooling_init: false,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.lambda < 0.0
            || self.negatives_per_positive == 0
            || self.hidden_layers == 0
        {
            return Err(Error::Validation(
                "batch_size, learning_rate, negatives_per_positive and hidden_layers must be \
                 positive; lambda must be non-negative"
                    .into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One training stage: sampler mode, criteria weights, epoch budget and the
/// seed all stochastic stage decisions derive from.
#[derive(Debug, Clone)]
pub struct StageOpts {
    pub stage: TrainStage,
    pub sampler_mode: SamplerMode,
    pub case_weights: CaseWeights,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub stage: TrainStage,
    /// Mean per-relation batch loss (ranking term plus regularization).
    pub epoch_loss: Vec<f64>,
    pub wall_secs: f64,
    pub skipped_steps: usize,
    pub fallback_steps: usize,
    pub relations_seen: usize,
    pub diverged: bool,
}

/// Run one optimization stage over `model` in place. Adam state is fresh:
/// stage boundaries reset the moments.
pub fn run_stage<M: RankingModel + Clone>(
    model: &mut M,
    observed: &ObservedSets,
    graph: &SignedSocialGraph,
    cfg: &TrainConfig,
    opts: &StageOpts,
) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut sampler = NegativeSampler::new(
        SamplerConfig {
            negatives_per_positive: cfg.negatives_per_positive,
            mode: opts.sampler_mode,
            seed: opts.seed,
        },
        observed,
        graph,
    )?;
    let social_stage = opts.sampler_mode == SamplerMode::Social;

    let mut positives: Vec<(u32, u32)> = Vec::new();
    for u in 0..observed.n_users() as u32 {
        for &i in observed.observed(u) {
            positives.push((u, i));
        }
    }

    let mut adam = AdamState::new();
    let adam_cfg = cfg.adam();
    let mut report = TrainReport {
        stage: opts.stage,
        epoch_loss: Vec::with_capacity(opts.epochs),
        wall_secs: 0.0,
        skipped_steps: 0,
        fallback_steps: 0,
        relations_seen: 0,
        diverged: false,
    };
    let mut snapshot = model.clone();

    for epoch in 0..opts.epochs {
        let mut rng = stream_rng(opts.seed, "train-epoch", epoch as u64);
        let mut shuffled = positives.clone();
        shuffled.shuffle(&mut rng);

        let mut batch: Vec<PartialRelation> = Vec::with_capacity(cfg.batch_size);
        let mut loss_sum = 0.0;
        let mut relations = 0usize;

        let flush = |model: &mut M,
                         adam: &mut AdamState,
                         batch: &mut Vec<PartialRelation>,
                         loss_sum: &mut f64|
         -> Result<()> {
            if batch.is_empty() {
                return Ok(());
            }
            let (loss, grads) = model.loss_and_gradients(batch, cfg.lambda)?;
            *loss_sum += loss;
            let mut params = model.param_slices_mut();
            adam.step(&mut params, &grads, &adam_cfg)?;
            batch.clear();
            Ok(())
        };

        for &(u, _) in &shuffled {
            let (negatives, social_ok) = match sampler.draw_for_positive(u, &mut rng) {
                Draw::Social(items) => (items, true),
                Draw::Fallback(items) => {
                    report.fallback_steps += 1;
                    (items, false)
                }
                Draw::Skip => {
                    report.skipped_steps += 1;
                    continue;
                }
            };
            // friend/foe only on social stages; a fallback draw loses them
            // because its negatives no longer honor the disjointness the
            // criteria context demands
            let (friend, foe) = if social_stage && social_ok {
                let pick = |peers: &[u32], rng: &mut crate::rng::Rng| -> Option<u32> {
                    if peers.is_empty() {
                        None
                    } else {
                        Some(peers[rng.random_range(0..peers.len())])
                    }
                };
                (pick(graph.friends(u), &mut rng), pick(graph.foes(u), &mut rng))
            } else {
                (None, None)
            };
            let ctx = CriterionContext::new(
                u,
                observed.observed(u),
                negatives,
                friend.map(|a| (a, observed.observed(a))),
                foe.map(|b| (b, observed.observed(b))),
            )?;
            for _ in 0..cfg.negatives_per_positive {
                match sample_relation(&ctx, &opts.case_weights, &mut rng) {
                    Some(rel) => {
                        if !ctx.validates(&rel) {
                            return Err(Error::Contract(format!(
                                "sampled relation fails its case predicate: {rel:?}"
                            )));
                        }
                        batch.push(rel);
                        relations += 1;
                        if batch.len() == cfg.batch_size {
                            flush(model, &mut adam, &mut batch, &mut loss_sum)?;
                        }
                    }
                    None => {
                        report.skipped_steps += 1;
                        break;
                    }
                }
            }
        }
        flush(model, &mut adam, &mut batch, &mut loss_sum)?;

        let epoch_loss = if relations > 0 {
            loss_sum / relations as f64
        } else {
            0.0
        };
        if !epoch_loss.is_finite() {
            // diverged: fall back to the last finite epoch's parameters
            *model = snapshot;
            report.diverged = true;
            break;
        }
        report.epoch_loss.push(epoch_loss);
        report.relations_seen += relations;
        snapshot = model.clone();
    }
    report.wall_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Case-1, unconditionally-sampled training of a fresh tower from random
/// init. The result is both the `dpl` model and the initialization for
/// `sdpl` fine-tuning.
pub fn pretrain_dpl(
    observed: &ObservedSets,
    freqs: &InteractionFrequencies,
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(TowerModel, TrainReport)> {
    cfg.validate()?;
    let mut init_rng = stream_rng(cfg.seed, "net-init", 0);
    let net = if cfg.pooling_init {
        TowerNetwork::init_pooling(emb.d, cfg.hidden_layers, freqs, 0.03, &mut init_rng)?
    } else {
        TowerNetwork::init(emb.d, cfg.hidden_layers, freqs, cfg.init_scale, &mut init_rng)?
    };
    let mut model = TowerModel::new(net, emb.clone())?;
    model.train_embeddings = cfg.train_embeddings;
    let graph = SignedSocialGraph::empty(observed.n_users());
    let report = run_stage(
        &mut model,
        observed,
        &graph,
        cfg,
        &StageOpts {
            stage: TrainStage::Pretrain,
            sampler_mode: SamplerMode::Unconditional,
            case_weights: CASE1_ONLY,
            epochs: cfg.pretrain_epochs,
            seed: derive_seed(cfg.seed, "stage-pretrain", 0),
        },
    )?;
    Ok((model, report))
}

/// Social fine-tuning from a pretrained tower. Adam moments restart at the
/// stage boundary; the incoming parameters are exactly the stage-1 result.
pub fn train_sdpl(
    observed: &ObservedSets,
    graph: &SignedSocialGraph,
    cfg: &TrainConfig,
    init: TowerModel,
) -> Result<(TowerModel, TrainReport)> {
    cfg.validate()?;
    if init.net.n_users() != observed.n_users() || init.net.n_items() != observed.n_items() {
        return Err(Error::Incompatible(format!(
            "init checkpoint is {}x{} but the data is {}x{}",
            init.net.n_users(),
            init.net.n_items(),
            observed.n_users(),
            observed.n_items()
        )));
    }
    let mut model = init;
    let report = run_stage(
        &mut model,
        observed,
        graph,
        cfg,
        &StageOpts {
            stage: TrainStage::Finetune,
            sampler_mode: SamplerMode::Social,
            case_weights: UNIFORM_WEIGHTS,
            epochs: cfg.finetune_epochs,
            seed: derive_seed(cfg.seed, "stage-finetune", 0),
        },
    )?;
    Ok((model, report))
}

/// Bilinear scorer with the full social pipeline (six criteria, social
/// negatives), latent matrices trained by the ranking loss.
pub fn train_spl(
    observed: &ObservedSets,
    graph: &SignedSocialGraph,
    freqs: &InteractionFrequencies,
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    cfg.validate()?;
    let mut model = LinearModel::from_embeddings(emb, freqs);
    let report = run_stage(
        &mut model,
        observed,
        graph,
        cfg,
        &StageOpts {
            stage: TrainStage::Single,
            sampler_mode: SamplerMode::Social,
            case_weights: UNIFORM_WEIGHTS,
            epochs: cfg.epochs,
            seed: derive_seed(cfg.seed, "stage-single", 0),
        },
    )?;
    Ok((model, report))
}

/// Plain pairwise baseline: bilinear scorer, unconditional negatives,
/// criterion 1 only. Identical to [`train_spl`] on an edgeless graph.
pub fn train_bpr(
    observed: &ObservedSets,
    freqs: &InteractionFrequencies,
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    cfg.validate()?;
    let mut model = LinearModel::from_embeddings(emb, freqs);
    let graph = SignedSocialGraph::empty(observed.n_users());
    let report = run_stage(
        &mut model,
        observed,
        &graph,
        cfg,
        &StageOpts {
            stage: TrainStage::Single,
            sampler_mode: SamplerMode::Unconditional,
            case_weights: CASE1_ONLY,
            epochs: cfg.epochs,
            seed: derive_seed(cfg.seed, "stage-single", 0),
        },
    )?;
    Ok((model, report))
}

/// Train whatever `cfg.mode` asks for and wrap the result as a checkpoint.
/// `sdpl` runs its pretraining stage internally (reports: pretrain, then
/// fine-tune).
pub fn train_mode(
    observed: &ObservedSets,
    graph: &SignedSocialGraph,
    freqs: &InteractionFrequencies,
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<TrainReport>)> {
    match cfg.mode {
        Mode::Bpr => {
            let (m, r) = train_bpr(observed, freqs, emb, cfg)?;
            Ok((Checkpoint::Linear(m), vec![r]))
        }
        Mode::Spl => {
            let (m, r) = train_spl(observed, graph, freqs, emb, cfg)?;
            Ok((Checkpoint::Linear(m), vec![r]))
        }
        Mode::Dpl => {
            let (m, r) = pretrain_dpl(observed, freqs, emb, cfg)?;
            Ok((Checkpoint::Tower(m), vec![r]))
        }
        Mode::Sdpl => {
            let (pre, r1) = pretrain_dpl(observed, freqs, emb, cfg)?;
            let (m, r2) = train_sdpl(observed, graph, cfg, pre)?;
            Ok((Checkpoint::Tower(m), vec![r1, r2]))
        }
    }
}
