//! Training loop: batching with padding masks, AdamW with decoupled weight
//! decay and global-norm clipping, per-epoch logging, and inference-time
//! entity prediction via legality-restricted argmax plus the grid decoder.

use crate::codec::{decode_grid, encode_grid, CodecError, DecodeOptions};
use crate::data::Vocabulary;
use crate::eval::micro_prf;
use crate::model::{forward, forward_backward, ModelConfig, ModelError, ModelParams};
use crate::numerics::{Rng, Tensor};
use crate::types::{Entity, LabelSet, RelationGrid, Sentence, REL_NNW, REL_NONE, REL_THW_BASE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid training config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Table-9-style ablation: collapse NNW cells to NONE in the gold
    /// grids at training time.
    pub ablate_nnw: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 20,
            grad_clip_norm: 5.0,
            seed: 0,
            ablate_nnw: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.learning_rate <= 0.0 {
            return Err("learning_rate must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err("batch_size and epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("betas must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// First/second moment buffers, aligned with the fixed parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// State for a free-standing tensor list (used with
    /// `adamw_step_tensors` outside a full model).
    pub fn for_tensors(tensors: &[&mut Tensor]) -> Self {
        Self {
            step: 0,
            m: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }
}

/// One AdamW update over an ordered tensor list. Weight decay is
/// decoupled (p *= 1 − ηλ before the moment update); gradients are
/// clipped to `grad_clip_norm` by global norm when that norm is finite
/// and positive.
pub fn adamw_step_tensors(
    tensors: &mut [&mut Tensor],
    names: &[&str],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let mut sq_norm = 0.0;
    for (k, t) in tensors.iter_mut().enumerate() {
        let g = t.grad_mut();
        for &v in g.iter() {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteGradient(names[k].to_string()));
            }
            sq_norm += v * v;
        }
    }
    let norm = sq_norm.sqrt();
    let clip = if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, tensor) in tensors.iter_mut().enumerate() {
        let grad: Vec<f64> =
            tensor.grad_mut().iter().map(|&g| g * clip).collect();
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for (i, p) in tensor.data.iter_mut().enumerate() {
            *p *= 1.0 - cfg.learning_rate * cfg.weight_decay;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

pub fn adamw_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let mut named = params.named_mut();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut tensors: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
    adamw_step_tensors(&mut tensors, &name_refs, state, cfg)
}

/// Sentences padded to the batch maximum, with true lengths and per-cell
/// validity masks (true exactly where both indices are within length).
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub grids: Vec<RelationGrid>,
    pub masks: Vec<Vec<bool>>,
}

impl Batch {
    pub fn new(
        sentences: &[&Sentence],
        vocab: &Vocabulary,
        labels: &LabelSet,
    ) -> Result<Self, TrainError> {
        let n_max = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(sentences.len());
        let mut lengths = Vec::with_capacity(sentences.len());
        let mut grids = Vec::with_capacity(sentences.len());
        let mut masks = Vec::with_capacity(sentences.len());
        for s in sentences {
            let mut row = vocab.encode(&s.tokens);
            row.resize(n_max, crate::data::PAD_ID);
            ids.push(row);
            lengths.push(s.len());
            grids.push(encode_grid(s, labels)?);
            let n = s.len();
            masks.push(
                (0..n_max * n_max)
                    .map(|c| c / n_max < n && c % n_max < n)
                    .collect(),
            );
        }
        Ok(Self { ids, lengths, grids, masks })
    }
}

/// Replaces every NNW cell with NONE.
pub fn ablate_nnw(grid: &RelationGrid) -> RelationGrid {
    let mut out = RelationGrid::new(grid.n());
    for (i, j, r) in grid.tagged_cells() {
        if r != REL_NNW {
            out.set(i, j, r);
        }
    }
    out
}

/// Accumulates gradients over the batch (averaged loss) and returns the
/// per-sentence losses. Padding is excluded exactly: each sentence is
/// sliced to its true length before the forward pass, so masked-out cells
/// contribute nothing to the loss or the gradients.
pub fn train_step(
    batch: &Batch,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    rng: &mut Rng,
    ablate: bool,
) -> Result<Vec<f64>, TrainError> {
    let scale = 1.0 / batch.ids.len() as f64;
    let mut losses = Vec::with_capacity(batch.ids.len());
    for (k, row) in batch.ids.iter().enumerate() {
        let n = batch.lengths[k];
        let gold = if ablate { ablate_nnw(&batch.grids[k]) } else { batch.grids[k].clone() };
        let loss = forward_backward(&row[..n], &gold, params, cfg, rng, true, scale)?;
        losses.push(loss);
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: f64,
}

impl EpochLog {
    /// The line format the CLI emits: `epoch<TAB>loss<TAB>dev_f1`.
    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{:.4}", self.epoch, self.loss, self.dev_f1)
    }
}

/// Full training run. Deterministic given the seeds in the configs: one
/// stream drives initialization, a second drives shuffling and dropout.
/// Dev micro-F1 falls back to the training set when `dev` is empty.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    train: &[Sentence],
    dev: &[Sentence],
    labels: &LabelSet,
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>), TrainError> {
    train_cfg.validate().map_err(TrainError::BadConfig)?;
    model_cfg.validate().map_err(TrainError::BadConfig)?;
    let mut params = ModelParams::init(model_cfg, &mut Rng::new(train_cfg.seed));
    let mut state = AdamState::new(&params);
    let mut rng = Rng::new(train_cfg.seed.wrapping_add(1));
    let mut logs = Vec::with_capacity(train_cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let sentences: Vec<&Sentence> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&sentences, vocab, labels)?;
            params.zero_grads();
            let losses = train_step(&batch, &mut params, model_cfg, &mut rng, train_cfg.ablate_nnw)?;
            epoch_loss += losses.iter().sum::<f64>();
            adamw_step(&mut params, &mut state, train_cfg)?;
        }
        let eval_set = if dev.is_empty() { train } else { dev };
        let dev_f1 = corpus_f1(eval_set, &params, model_cfg, labels, vocab)?;
        let log = EpochLog { epoch, loss: epoch_loss / train.len().max(1) as f64, dev_f1 };
        log::info!("{}", log.line());
        logs.push(log);
    }
    Ok((params, logs))
}

fn corpus_f1(
    sentences: &[Sentence],
    params: &ModelParams,
    cfg: &ModelConfig,
    labels: &LabelSet,
    vocab: &Vocabulary,
) -> Result<f64, TrainError> {
    let mut pred = Vec::with_capacity(sentences.len());
    let mut gold = Vec::with_capacity(sentences.len());
    for s in sentences {
        pred.push(predict_entities(&s.tokens, params, cfg, labels, vocab)?);
        gold.push(s.entities.clone());
    }
    Ok(micro_prf(&pred, &gold).expect("aligned by construction").f1())
}

/// Restricted per-cell argmax: above the diagonal only {NONE, NNW} are
/// legal, on/below it only {NONE, THW-*}; ties go to the lowest id.
pub fn grid_from_probs(y: &Tensor, relation_count: usize) -> RelationGrid {
    let n = y.shape[0];
    let mut grid = RelationGrid::new(n);
    for i in 0..n {
        for j in 0..n {
            let cell = &y.data[(i * n + j) * relation_count..(i * n + j + 1) * relation_count];
            let legal: &mut dyn Iterator<Item = usize> = if i < j {
                &mut [REL_NONE as usize, REL_NNW as usize].into_iter()
            } else {
                &mut std::iter::once(REL_NONE as usize)
                    .chain(REL_THW_BASE as usize..relation_count)
            };
            let mut best = REL_NONE as usize;
            let mut best_p = f64::NEG_INFINITY;
            for r in legal {
                if cell[r] > best_p {
                    best_p = cell[r];
                    best = r;
                }
            }
            grid.set(i, j, best as u16);
        }
    }
    grid
}

/// Tokens in, entities out: forward pass without dropout, restricted
/// argmax, then the grid decoder.
pub fn predict_entities(
    tokens: &[String],
    params: &ModelParams,
    cfg: &ModelConfig,
    labels: &LabelSet,
    vocab: &Vocabulary,
) -> Result<Vec<Entity>, TrainError> {
    let ids = vocab.encode(tokens);
    let mut rng = Rng::new(0); // inference never consumes randomness
    let out = forward(&ids, params, cfg, &mut rng, false)?;
    let grid = grid_from_probs(&out.y, cfg.relation_count);
    Ok(decode_grid(&grid, labels, &DecodeOptions::default())?)
}
