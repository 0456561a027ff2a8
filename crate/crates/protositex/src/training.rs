//! Alternating dual-phase training: each epoch runs i1 batch steps that move
//! only the prototype/attention parameters, then i2 steps that move only the
//! classifier (and encoder projection). Early stopping tracks a validation
//! metric; checkpoints store f32 tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, TaskKind};
use crate::encoder::{EncoderConfig, ExternalEncoder};
use crate::error::{Error, Result};
use crate::hierarchy::Activation;
use crate::losses::LossWeights;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{
    doc_loss_and_grads, init_model, partition_parameters, predict_doc, prepare_document, DocData,
    LossKind, Mode, ModelConfig, ModelParams, Phase,
};
use crate::optim::AdamW;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

fn d_q() -> usize { 48 }
fn d_heads() -> usize { 4 }
fn d_dim() -> usize { 64 }
fn d_hidden1() -> usize { 256 }
fn d_hidden2() -> usize { 64 }
fn d_buckets() -> usize { 4096 }
fn d_true() -> bool { true }
fn d_activation() -> Activation { Activation::Softmax }
fn d_threshold() -> f64 { 0.5 }
fn d_alpha() -> [f64; 3] { [0.01, 0.98, 0.01] }
fn d_lambda() -> [f64; 3] { [0.6, 0.2, 0.2] }
fn d_epsilon() -> f64 { 1e-8 }
fn d_i1() -> usize { 10 }
fn d_i2() -> usize { 100 }
fn d_lr() -> f64 { 2e-5 }
fn d_decay() -> f64 { 0.01 }
fn d_batch() -> usize { 64 }
fn d_epochs() -> usize { 100 }
fn d_patience() -> usize { 3 }
fn d_dropout() -> f64 { 0.1 }

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_q")]
    pub q: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_dim")]
    pub d: usize,
    #[serde(default = "d_hidden1")]
    pub hidden1: usize,
    #[serde(default = "d_hidden2")]
    pub hidden2: usize,
    #[serde(default = "d_buckets")]
    pub vocab_buckets: usize,
    #[serde(default = "d_true")]
    pub encoder_trainable: bool,
    #[serde(default)]
    pub scale_full_d: bool,
    #[serde(default = "d_activation")]
    pub head_activation: Activation,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_alpha")]
    pub alpha: [f64; 3],
    #[serde(default = "d_lambda")]
    pub lambda: [f64; 3],
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    /// Clustering-phase steps per epoch.
    #[serde(default = "d_i1")]
    pub i1: usize,
    /// Classification-phase steps per epoch.
    #[serde(default = "d_i2")]
    pub i2: usize,
    #[serde(default = "d_lr")]
    pub lr_clustering: f64,
    #[serde(default = "d_lr")]
    pub lr_classification: f64,
    #[serde(default = "d_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.i1 == 0 && self.i2 == 0 {
            return Err(Error::Config("at least one of i1/i2 must be nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.lr_clustering <= 0.0 || self.lr_classification <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, lambda: self.lambda, epsilon: self.epsilon }
    }

    pub fn model_config(&self, num_labels: usize, task_kind: TaskKind) -> ModelConfig {
        let mut encoder = EncoderConfig::hashed(self.d, self.vocab_buckets, self.seed);
        encoder.trainable = self.encoder_trainable;
        ModelConfig {
            q: self.q,
            h: self.heads,
            d: self.d,
            num_labels,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            activation: self.head_activation,
            scale_full_d: self.scale_full_d,
            encoder,
            task_kind,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub clustering_loss: f64,
    pub classification_loss: f64,
    pub val_metric: f64,
    pub improved: bool,
}

/// Hooks around each optimizer step; used for instrumentation such as
/// verifying that frozen parameters never move.
pub trait TrainObserver {
    fn before_step(&mut self, _phase: Phase, _epoch: usize, _step: usize, _params: &ModelParams) {}
    fn after_step(&mut self, _phase: Phase, _epoch: usize, _step: usize, _params: &ModelParams) {}
}

pub struct NoopObserver;
impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub label_names: Vec<String>,
    pub history: Vec<EpochStats>,
    pub inactive_prototypes: Vec<usize>,
    pub params: ModelParams,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub steps_clustering: u64,
    pub steps_classification: u64,
    pub initial_params: ModelParams,
    pub val_report: EvalReport,
}

/// Snap every parameter to the nearest f32, so the in-memory model and its
/// serialized form produce identical outputs.
pub fn round_params_f32(params: &mut ModelParams) {
    for (_, t) in params.named_tensors_mut() {
        t.mapv_inplace(|v| f64::from(v as f32));
    }
}

fn batch_mean_metric(report: &EvalReport, task: TaskKind) -> f64 {
    match task {
        TaskKind::Multilabel => report.macro_f1,
        _ => report.accuracy,
    }
}

/// Predict every document and score against its stored labels.
pub fn evaluate_docs(
    params: &ModelParams,
    cfg: &ModelConfig,
    docs: &[DocData],
    label_names: &[String],
) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(docs.len());
    let mut truths = Vec::with_capacity(docs.len());
    for doc in docs {
        let (labels, _) = predict_doc(params, cfg, doc)?;
        let mut row = vec![0u8; cfg.num_labels];
        for i in labels {
            row[i] = 1;
        }
        preds.push(row);
        truths.push(doc.doc_labels.iter().map(|&v| v as u8).collect());
    }
    evaluate(&preds, &truths, label_names, cfg.task_kind)
}

/// Prototypes that no training sub-sentence is assigned to.
pub fn inactive_prototypes(
    params: &ModelParams,
    cfg: &ModelConfig,
    docs: &[DocData],
) -> Result<Vec<usize>> {
    let mut used = vec![false; cfg.q];
    for doc in docs {
        let fwd = crate::model::forward_doc(params, cfg, doc, &mut Mode::Eval)?;
        for j in 0..fwd.y.ncols() {
            for i in 0..cfg.q {
                if fwd.y[[i, j]] != 0.0 {
                    used[i] = true;
                }
            }
        }
    }
    Ok((0..cfg.q).filter(|&i| !used[i]).collect())
}

pub fn prepare_split(
    docs: &[crate::corpus::Document],
    cfg: &ModelConfig,
    adapter: Option<&dyn ExternalEncoder>,
) -> Result<Vec<DocData>> {
    docs.iter().map(|d| prepare_document(d, cfg, adapter)).collect()
}

pub fn train(
    dataset: &DatasetSplit,
    config: &TrainConfig,
    adapter: Option<&dyn ExternalEncoder>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if dataset.validation.is_empty() {
        return Err(Error::Config("validation split is empty; early stopping needs one".into()));
    }

    let cfg = config.model_config(dataset.num_labels(), dataset.task_kind);
    cfg.validate()?;
    let weights = config.loss_weights();

    let train_docs = prepare_split(&dataset.train, &cfg, adapter)?;
    let val_docs = prepare_split(&dataset.validation, &cfg, adapter)?;

    let mut params = init_model(&cfg, config.seed)?;
    let initial_params = params.clone();
    let (clustering_names, classification_names) = partition_parameters(&params, cfg.encoder.trainable);
    let mut opt_clu = AdamW::new(&params, &clustering_names, config.lr_clustering, config.weight_decay);
    let mut opt_cls = AdamW::new(&params, &classification_names, config.lr_classification, config.weight_decay);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut cursor = 0usize;

    let mut history = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        cursor = 0;

        let mut next_batch = |order: &Vec<usize>, cursor: &mut usize| -> Vec<usize> {
            let mut batch = Vec::with_capacity(config.batch_size.min(order.len()));
            for _ in 0..config.batch_size.min(order.len()) {
                if *cursor >= order.len() {
                    *cursor = 0;
                }
                batch.push(order[*cursor]);
                *cursor += 1;
            }
            batch
        };

        let mut run_phase = |phase: Phase,
                             steps: usize,
                             params: &mut ModelParams,
                             opt: &mut AdamW,
                             rng: &mut ChaCha8Rng,
                             cursor: &mut usize|
         -> Result<f64> {
            let kind = match phase {
                Phase::Clustering => LossKind::Clustering,
                Phase::Classification => LossKind::Classification,
            };
            let mut loss_sum = 0.0;
            for step in 0..steps {
                let batch = next_batch(&order, cursor);
                let scale = 1.0 / batch.len() as f64;
                let mut grads = params.zeros_like();
                let mut batch_loss = 0.0;
                for &idx in &batch {
                    let mut mode = Mode::Train { dropout: config.dropout, rng };
                    batch_loss += scale
                        * doc_loss_and_grads(params, &cfg, &train_docs[idx], kind, &weights, &mut mode, &mut grads, scale)?;
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence {
                        context: format!("epoch {epoch}, {phase:?} step {step}: loss is not finite"),
                    });
                }
                observer.before_step(phase, epoch, step, params);
                opt.step(params, &grads);
                observer.after_step(phase, epoch, step, params);
                loss_sum += batch_loss;
            }
            Ok(if steps == 0 { 0.0 } else { loss_sum / steps as f64 })
        };

        let clustering_loss = run_phase(Phase::Clustering, config.i1, &mut params, &mut opt_clu, &mut rng, &mut cursor)?;
        let classification_loss =
            run_phase(Phase::Classification, config.i2, &mut params, &mut opt_cls, &mut rng, &mut cursor)?;

        let report = evaluate_docs(&params, &cfg, &val_docs, &dataset.label_names)?;
        let metric = batch_mean_metric(&report, cfg.task_kind);
        let improved = metric > best_metric;
        if improved {
            best_metric = metric;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(EpochStats { epoch, clustering_loss, classification_loss, val_metric: metric, improved });
        log::info!(
            "epoch {epoch}: clustering {clustering_loss:.5}, classification {classification_loss:.5}, val {metric:.4}{}",
            if improved { " *" } else { "" }
        );
        if stale >= config.patience {
            break;
        }
    }

    round_params_f32(&mut best_params);
    let inactive = inactive_prototypes(&best_params, &cfg, &train_docs)?;
    let val_report = evaluate_docs(&best_params, &cfg, &val_docs, &dataset.label_names)?;

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: cfg,
            train: config.clone(),
            label_names: dataset.label_names.clone(),
            history,
            inactive_prototypes: inactive,
            params: best_params,
        },
        best_epoch,
        steps_clustering: opt_clu.steps_taken(),
        steps_classification: opt_cls.steps_taken(),
        initial_params,
        val_report,
    })
}

#[derive(Serialize, Deserialize)]
struct TensorBlob {
    shape: [usize; 2],
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    label_names: Vec<String>,
    history: Vec<EpochStats>,
    inactive_prototypes: Vec<usize>,
    tensors: BTreeMap<String, TensorBlob>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut snapshot = checkpoint.params.clone();
    round_params_f32(&mut snapshot);
    let mut tensors = BTreeMap::new();
    for (name, t) in snapshot.named_tensors() {
        tensors.insert(
            name,
            TensorBlob {
                shape: [t.nrows(), t.ncols()],
                data: t.iter().map(|&v| v as f32).collect(),
            },
        );
    }
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: checkpoint.model.clone(),
        train: checkpoint.train.clone(),
        label_names: checkpoint.label_names.clone(),
        history: checkpoint.history.clone(),
        inactive_prototypes: checkpoint.inactive_prototypes.clone(),
        tensors,
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CheckpointFile = serde_json::from_str(&raw).map_err(|e| Error::Deserialization {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::IncompatibleCheckpoint {
            found: file.format_version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    file.model.validate()?;
    // seed an identically-shaped parameter set, then overwrite every tensor
    let mut params = init_model(&file.model, 0)?;
    for (name, t) in params.named_tensors_mut() {
        let blob = file.tensors.get(&name).ok_or_else(|| Error::Deserialization {
            path: path.display().to_string(),
            detail: format!("missing tensor {name}"),
        })?;
        if blob.shape != [t.nrows(), t.ncols()] || blob.data.len() != t.len() {
            return Err(Error::Deserialization {
                path: path.display().to_string(),
                detail: format!(
                    "tensor {name}: stored shape {:?} with {} values, expected {:?}",
                    blob.shape,
                    blob.data.len(),
                    [t.nrows(), t.ncols()]
                ),
            });
        }
        *t = Array2::from_shape_vec(
            (blob.shape[0], blob.shape[1]),
            blob.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked above");
    }
    Ok(Checkpoint {
        model: file.model,
        train: file.train,
        label_names: file.label_names,
        history: file.history,
        inactive_prototypes: file.inactive_prototypes,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};

    fn tiny_dataset() -> DatasetSplit {
        generate_synthetic_corpus(3, 40, 3, &SynthConfig::default()).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            q: 6,
            heads: 2,
            d: 16,
            hidden1: 12,
            hidden2: 8,
            vocab_buckets: 128,
            i1: 2,
            i2: 3,
            lr_clustering: 1e-3,
            lr_classification: 1e-3,
            batch_size: 8,
            max_epochs: 2,
            patience: 3,
            dropout: 0.1,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::default().i1, 10);
        assert_eq!(TrainConfig::default().i2, 100);
        assert_eq!(TrainConfig::default().patience, 3);
        assert_eq!(TrainConfig::default().batch_size, 64);
        assert_eq!(TrainConfig::default().lr_clustering, 2e-5);
    }

    #[test]
    fn step_counts_match_schedule() {
        let outcome = train(&tiny_dataset(), &tiny_config(), None, &mut NoopObserver).unwrap();
        let epochs = outcome.checkpoint.history.len() as u64;
        assert_eq!(outcome.steps_clustering, 2 * epochs);
        assert_eq!(outcome.steps_classification, 3 * epochs);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let a = train(&ds, &cfg, None, &mut NoopObserver).unwrap();
        let b = train(&ds, &cfg, None, &mut NoopObserver).unwrap();
        for ((name, ta), (_, tb)) in a
            .checkpoint
            .params
            .named_tensors()
            .into_iter()
            .zip(b.checkpoint.params.named_tensors())
        {
            assert_eq!(ta, tb, "{name} differs across reruns");
        }
        assert_eq!(
            a.checkpoint.history.last().unwrap().val_metric,
            b.checkpoint.history.last().unwrap().val_metric
        );
    }

    #[test]
    fn frozen_parameters_never_move() {
        struct FreezeCheck {
            snapshot: Option<Vec<(String, ndarray::Array2<f64>)>>,
            violations: usize,
        }
        impl TrainObserver for FreezeCheck {
            fn before_step(&mut self, _p: Phase, _e: usize, _s: usize, params: &ModelParams) {
                self.snapshot =
                    Some(params.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect());
            }
            fn after_step(&mut self, phase: Phase, _e: usize, _s: usize, params: &ModelParams) {
                let before = self.snapshot.take().unwrap();
                for ((name, now), (_, prev)) in params.named_tensors().into_iter().zip(before) {
                    let frozen = match phase {
                        Phase::Clustering => !(name == "prototypes" || name.starts_with("attn.")),
                        Phase::Classification => name == "prototypes" || name.starts_with("attn."),
                    };
                    if frozen && now != &prev {
                        self.violations += 1;
                    }
                }
            }
        }
        let mut obs = FreezeCheck { snapshot: None, violations: 0 };
        train(&tiny_dataset(), &tiny_config(), None, &mut obs).unwrap();
        assert_eq!(obs.violations, 0);
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let ds = tiny_dataset();
        let outcome = train(&ds, &tiny_config(), None, &mut NoopObserver).unwrap();
        let cp = &outcome.checkpoint;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, cp).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        for ((name, a), (_, b)) in cp.params.named_tensors().into_iter().zip(loaded.params.named_tensors()) {
            assert_eq!(a, b, "{name} changed across save/load");
        }
        // forward outputs must agree bit-for-bit
        let doc = prepare_document(&ds.test[0], &cp.model, None).unwrap();
        let before = crate::model::forward_doc(&cp.params, &cp.model, &doc, &mut Mode::Eval).unwrap();
        let after = crate::model::forward_doc(&loaded.params, &loaded.model, &doc, &mut Mode::Eval).unwrap();
        assert_eq!(before.pred.g3, after.pred.g3);
        assert_eq!(loaded.label_names, cp.label_names);
        assert_eq!(loaded.history.len(), cp.history.len());
    }

    #[test]
    fn version_mismatch_rejected() {
        let ds = tiny_dataset();
        let outcome = train(&ds, &tiny_config(), None, &mut NoopObserver).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &outcome.checkpoint).unwrap();

        let mut raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        raw["format_version"] = serde_json::json!(99);
        fs::write(&path, raw.to_string()).unwrap();
        match load_checkpoint(&path) {
            Err(Error::IncompatibleCheckpoint { found: 99, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn empty_validation_rejected() {
        let mut ds = tiny_dataset();
        ds.validation.clear();
        let err = train(&ds, &tiny_config(), None, &mut NoopObserver).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn learning_improves_over_init() {
        let ds = generate_synthetic_corpus(5, 60, 3, &SynthConfig::default()).unwrap();
        let cfg = TrainConfig {
            max_epochs: 8,
            lr_clustering: 5e-3,
            lr_classification: 5e-3,
            i1: 2,
            i2: 8,
            ..tiny_config()
        };
        let outcome = train(&ds, &cfg, None, &mut NoopObserver).unwrap();
        let model_cfg = &outcome.checkpoint.model;
        let val = prepare_split(&ds.validation, model_cfg, None).unwrap();
        let init_report = evaluate_docs(&outcome.initial_params, model_cfg, &val, &ds.label_names).unwrap();
        let best_report = evaluate_docs(&outcome.checkpoint.params, model_cfg, &val, &ds.label_names).unwrap();
        assert!(
            best_report.macro_f1 >= init_report.macro_f1,
            "training regressed: {} < {}",
            best_report.macro_f1,
            init_report.macro_f1
        );
    }
}
