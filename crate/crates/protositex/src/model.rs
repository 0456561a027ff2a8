//! Model assembly: parameter container, per-document forward pass
//! (encode -> attend -> assign -> classify -> aggregate), loss/gradient
//! composition for both training phases, and the parameter partition
//! between them.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, attend_backward, init_heads, AttendCache, AttentionHeads};
use crate::corpus::{build_label_matrix, build_mappings, Document, TaskKind};
use crate::encoder::{
    encode_hashed, encode_hashed_backward, featurize, init_projection, EncoderConfig, EncoderKind,
    ExternalEncoder, SparseFeatures,
};
use crate::error::{Error, Result};
use crate::hierarchy::{
    aggregate, aggregate_backward, dynamic_ground_truth, init_classifier, proto_label_scores,
    proto_label_scores_backward, Activation, AggregateCache, ClassifierCache, ClassifierParams,
    GroundTruthTriple, ScoreTriple,
};
use crate::losses::{
    classification_loss_with_grads, proximity_loss_with_grads, regularization_loss_with_grads,
    LossWeights,
};
use crate::prototypes::{assign, init_prototypes, similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Clustering,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Proximity,
    Regularization,
    Classification,
    Clustering,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub q: usize,
    pub h: usize,
    pub d: usize,
    pub num_labels: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub activation: Activation,
    /// Scale attention scores by sqrt(d) instead of sqrt(d/h).
    pub scale_full_d: bool,
    pub encoder: EncoderConfig,
    pub task_kind: TaskKind,
    pub threshold: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::Config("q must be >= 1".into()));
        }
        if self.h == 0 || self.d % self.h != 0 {
            return Err(Error::Config(format!("h = {} must divide d = {}", self.h, self.d)));
        }
        if self.num_labels < 1 {
            return Err(Error::Config("at least one label required".into()));
        }
        self.encoder.validate()?;
        if self.encoder.d != self.d {
            return Err(Error::Dimension(format!(
                "encoder dimension {} differs from model dimension {}",
                self.encoder.d, self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub prototypes: Array2<f64>,
    pub attn: AttentionHeads,
    pub cls: ClassifierParams,
    /// Hashed-encoder projection; absent for external encoders.
    pub encoder: Option<Array2<f64>>,
}

impl ModelParams {
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            prototypes: Array2::zeros(self.prototypes.raw_dim()),
            attn: self.attn.zeros_like(),
            cls: self.cls.zeros_like(),
            encoder: self.encoder.as_ref().map(|w| Array2::zeros(w.raw_dim())),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![("prototypes".into(), &self.prototypes)];
        for i in 0..self.attn.num_heads() {
            out.push((format!("attn.h{i}.wq"), &self.attn.wq[i]));
            out.push((format!("attn.h{i}.wk"), &self.attn.wk[i]));
            out.push((format!("attn.h{i}.wv"), &self.attn.wv[i]));
        }
        out.push(("attn.w_out".into(), &self.attn.w_out));
        out.push(("cls.w1".into(), &self.cls.w1));
        out.push(("cls.b1".into(), &self.cls.b1));
        out.push(("cls.w2".into(), &self.cls.w2));
        out.push(("cls.b2".into(), &self.cls.b2));
        out.push(("cls.w3".into(), &self.cls.w3));
        out.push(("cls.b3".into(), &self.cls.b3));
        if let Some(w) = &self.encoder {
            out.push(("enc.projection".into(), w));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![("prototypes".into(), &mut self.prototypes)];
        for (i, ((wq, wk), wv)) in self
            .attn
            .wq
            .iter_mut()
            .zip(self.attn.wk.iter_mut())
            .zip(self.attn.wv.iter_mut())
            .enumerate()
        {
            out.push((format!("attn.h{i}.wq"), wq));
            out.push((format!("attn.h{i}.wk"), wk));
            out.push((format!("attn.h{i}.wv"), wv));
        }
        out.push(("attn.w_out".into(), &mut self.attn.w_out));
        out.push(("cls.w1".into(), &mut self.cls.w1));
        out.push(("cls.b1".into(), &mut self.cls.b1));
        out.push(("cls.w2".into(), &mut self.cls.w2));
        out.push(("cls.b2".into(), &mut self.cls.b2));
        out.push(("cls.w3".into(), &mut self.cls.w3));
        out.push(("cls.b3".into(), &mut self.cls.b3));
        if let Some(w) = &mut self.encoder {
            out.push(("enc.projection".into(), w));
        }
        out
    }

    pub fn parameter_count(&self, names: &[String]) -> usize {
        self.named_tensors()
            .into_iter()
            .filter(|(name, _)| names.contains(name))
            .map(|(_, t)| t.len())
            .sum()
    }
}

pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let prototypes = init_prototypes(cfg.q, cfg.d, seed)?.values;
    let attn = init_heads(cfg.d, cfg.h, seed.wrapping_add(1), cfg.scale_full_d)?;
    let cls = init_classifier(cfg.d, cfg.hidden1, cfg.hidden2, cfg.num_labels, cfg.activation, seed.wrapping_add(2));
    let encoder = match cfg.encoder.kind {
        EncoderKind::Hashed => Some(init_projection(&cfg.encoder)),
        EncoderKind::External => None,
    };
    Ok(ModelParams { prototypes, attn, cls, encoder })
}

/// Clustering set = prototypes + attention; classification set = classifier
/// head + encoder projection (when trainable). Disjoint and exhaustive.
pub fn partition_parameters(params: &ModelParams, encoder_trainable: bool) -> (Vec<String>, Vec<String>) {
    let mut clustering = Vec::new();
    let mut classification = Vec::new();
    for (name, _) in params.named_tensors() {
        if name == "prototypes" || name.starts_with("attn.") {
            clustering.push(name);
        } else if name.starts_with("enc.") {
            if encoder_trainable {
                classification.push(name);
            }
        } else {
            classification.push(name);
        }
    }
    (clustering, classification)
}

/// Preprocessed per-document state: hashed features (or fixed external
/// embeddings), structural matrices, annotations.
#[derive(Debug, Clone)]
pub struct DocData {
    pub id: String,
    pub texts: Vec<String>,
    pub features: Option<SparseFeatures>,
    pub fixed_embeddings: Option<Array2<f64>>,
    pub m1: Array2<f64>,
    pub m2: Array2<f64>,
    pub c: Option<Array2<f64>>,
    pub doc_labels: Array2<f64>,
    pub subsentence_sentence: Vec<usize>,
}

pub fn prepare_document(
    doc: &Document,
    cfg: &ModelConfig,
    adapter: Option<&dyn ExternalEncoder>,
) -> Result<DocData> {
    let mappings = build_mappings(doc);
    let c = build_label_matrix(doc, cfg.num_labels)?.map(|m| m.values);
    let texts = doc.subsentence_texts();
    let (features, fixed_embeddings) = match cfg.encoder.kind {
        EncoderKind::Hashed => (Some(featurize(&texts, cfg.encoder.vocab_buckets)), None),
        EncoderKind::External => {
            let adapter = adapter.ok_or_else(|| Error::Config("external encoder adapter not configured".into()))?;
            let e = crate::encoder::encode_external(&texts, &cfg.encoder, adapter)?;
            (None, Some(e.values))
        }
    };
    let mut doc_labels = Array2::zeros((1, cfg.num_labels));
    for (i, &v) in doc.doc_labels.iter().enumerate() {
        doc_labels[[0, i]] = f64::from(v);
    }
    Ok(DocData {
        id: doc.id.clone(),
        texts,
        features,
        fixed_embeddings,
        m1: mappings.m1,
        m2: mappings.m2,
        c,
        doc_labels,
        subsentence_sentence: doc.subsentences.iter().map(|s| s.sentence_index).collect(),
    })
}

pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

#[derive(Debug, Clone)]
pub struct DocForward {
    pub enc: Option<crate::encoder::EncodeCache>,
    pub embeddings: Array2<f64>,
    pub attend: AttendCache,
    pub cls: ClassifierCache,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub agg: AggregateCache,
    pub pred: ScoreTriple,
    pub gt: GroundTruthTriple,
}

pub fn forward_doc(
    params: &ModelParams,
    cfg: &ModelConfig,
    doc: &DocData,
    mode: &mut Mode,
) -> Result<DocForward> {
    let (enc, embeddings) = match (&doc.features, &doc.fixed_embeddings) {
        (Some(features), _) => {
            let projection = params
                .encoder
                .as_ref()
                .ok_or_else(|| Error::Config("hashed encoder projection missing".into()))?;
            let cache = encode_hashed(features, projection)?;
            let e = cache.embeddings.clone();
            (Some(cache), e)
        }
        (None, Some(e)) => (None, e.clone()),
        (None, None) => return Err(Error::Config("document carries neither features nor embeddings".into())),
    };

    let attend_cache = match mode {
        Mode::Train { dropout, rng } if *dropout > 0.0 => {
            attend(&params.prototypes, &embeddings, &params.attn, Some((*dropout, rng)))?
        }
        _ => attend(&params.prototypes, &embeddings, &params.attn, None)?,
    };

    let cls_cache = match mode {
        Mode::Train { dropout, rng } if *dropout > 0.0 => {
            proto_label_scores(&attend_cache.output, &params.cls, Some((*dropout, rng)))
        }
        _ => proto_label_scores(&attend_cache.output, &params.cls, None),
    };

    let x = similarity(&params.prototypes, &embeddings)?;
    let y = assign(&x);
    let agg = aggregate(&cls_cache.scores, &y, &doc.m2, &doc.m1)?;

    let gt = match &doc.c {
        Some(c) => dynamic_ground_truth(&y, Some(c), &doc.m2, &doc.doc_labels)?,
        None => GroundTruthTriple {
            g1: Array2::zeros((cfg.q, cfg.num_labels)),
            g2: Array2::zeros((doc.m2.nrows(), cfg.num_labels)),
            g3: doc.doc_labels.clone(),
        },
    };

    let pred = ScoreTriple {
        g1: cls_cache.scores.clone(),
        g2: agg.g2.clone(),
        g3: agg.g3.clone(),
    };

    Ok(DocForward { enc, embeddings, attend: attend_cache, cls: cls_cache, x, y, agg, pred, gt })
}

/// Effective lambda triple: document-only documents force the annotated
/// terms to zero and move their mass to the document term.
fn effective_lambda(doc: &DocData, weights: &LossWeights) -> [f64; 3] {
    if doc.c.is_some() {
        weights.lambda
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Compute one document's loss for `kind` and accumulate `scale` times its
/// parameter gradients into `grads`.
pub fn doc_loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    doc: &DocData,
    kind: LossKind,
    weights: &LossWeights,
    mode: &mut Mode,
    grads: &mut ModelParams,
    scale: f64,
) -> Result<f64> {
    let fwd = forward_doc(params, cfg, doc, mode)?;
    let lambda = effective_lambda(doc, weights);

    // classification path weight within the requested objective
    let cls_weight = match kind {
        LossKind::Classification => 1.0,
        LossKind::Clustering => weights.alpha[2],
        _ => 0.0,
    };

    let mut total = 0.0;
    let mut d_embeddings = Array2::zeros(fwd.embeddings.raw_dim());

    if cls_weight > 0.0 || matches!(kind, LossKind::Classification | LossKind::Clustering) {
        let (loss_cs, d_g1_direct, d_g2_direct, d_g3) =
            classification_loss_with_grads(&fwd.gt, &fwd.pred, &lambda)?;
        total += cls_weight * loss_cs;
        if cls_weight > 0.0 {
            let mut d_g1 = aggregate_backward(&fwd.agg, &fwd.y, &doc.m2, &doc.m1, &d_g2_direct, &d_g3);
            d_g1 += &d_g1_direct;
            d_g1.mapv_inplace(|v| v * cls_weight);

            let cls_grads = proto_label_scores_backward(&fwd.cls, &params.cls, &d_g1);
            accumulate_cls(&mut grads.cls, &cls_grads.d_params, scale);

            let attn_grads = attend_backward(&fwd.attend, &params.prototypes, &fwd.embeddings, &params.attn, &cls_grads.d_input);
            grads.prototypes.scaled_add(scale, &attn_grads.d_prototypes);
            accumulate_attn(&mut grads.attn, &attn_grads.d_heads, scale);
            d_embeddings += &attn_grads.d_embeddings;
        }
    }

    let prox_weight = match kind {
        LossKind::Proximity => 1.0,
        LossKind::Clustering => weights.alpha[0],
        _ => 0.0,
    };
    if prox_weight > 0.0 {
        let (loss, d_e, d_p) = proximity_loss_with_grads(&fwd.embeddings, &params.prototypes)?;
        total += prox_weight * loss;
        grads.prototypes.scaled_add(scale * prox_weight, &d_p);
        d_embeddings.scaled_add(prox_weight, &d_e);
    }

    let reg_weight = match kind {
        LossKind::Regularization => 1.0,
        LossKind::Clustering => weights.alpha[1],
        _ => 0.0,
    };
    if reg_weight > 0.0 {
        let (loss, d_e, d_p) = regularization_loss_with_grads(&fwd.embeddings, &params.prototypes, weights.epsilon)?;
        total += reg_weight * loss;
        grads.prototypes.scaled_add(scale * reg_weight, &d_p);
        d_embeddings.scaled_add(reg_weight, &d_e);
    }

    if let (Some(enc_cache), Some(features), Some(d_projection)) =
        (&fwd.enc, &doc.features, grads.encoder.as_mut())
    {
        if d_embeddings.iter().any(|&v| v != 0.0) {
            let scaled = d_embeddings.mapv(|v| v * scale);
            encode_hashed_backward(enc_cache, features, &scaled, d_projection);
        }
    }

    Ok(total)
}

fn accumulate_cls(into: &mut ClassifierParams, from: &ClassifierParams, scale: f64) {
    into.w1.scaled_add(scale, &from.w1);
    into.b1.scaled_add(scale, &from.b1);
    into.w2.scaled_add(scale, &from.w2);
    into.b2.scaled_add(scale, &from.b2);
    into.w3.scaled_add(scale, &from.w3);
    into.b3.scaled_add(scale, &from.b3);
}

fn accumulate_attn(into: &mut AttentionHeads, from: &AttentionHeads, scale: f64) {
    for i in 0..into.num_heads() {
        into.wq[i].scaled_add(scale, &from.wq[i]);
        into.wk[i].scaled_add(scale, &from.wk[i]);
        into.wv[i].scaled_add(scale, &from.wv[i]);
    }
    into.w_out.scaled_add(scale, &from.w_out);
}

/// Eval-mode loss value; the finite-difference oracle evaluates this.
pub fn loss_value(
    params: &ModelParams,
    cfg: &ModelConfig,
    doc: &DocData,
    kind: LossKind,
    weights: &LossWeights,
) -> Result<f64> {
    let mut scratch = params.zeros_like();
    doc_loss_and_grads(params, cfg, doc, kind, weights, &mut Mode::Eval, &mut scratch, 0.0)
}

/// Eval-mode loss and full gradients.
pub fn loss_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    doc: &DocData,
    kind: LossKind,
    weights: &LossWeights,
) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let loss = doc_loss_and_grads(params, cfg, doc, kind, weights, &mut Mode::Eval, &mut grads, 1.0)?;
    Ok((loss, grads))
}

/// Run the decision rule on a forward pass.
pub fn predict_doc(params: &ModelParams, cfg: &ModelConfig, doc: &DocData) -> Result<(Vec<usize>, DocForward)> {
    let fwd = forward_doc(params, cfg, doc, &mut Mode::Eval)?;
    let labels = crate::hierarchy::decide_labels(&fwd.agg.g3, cfg.task_kind, cfg.threshold);
    Ok((labels, fwd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::segment_document;
    use rand::Rng;
    use rand::SeedableRng;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            q: 4,
            h: 2,
            d: 8,
            num_labels: 3,
            hidden1: 6,
            hidden2: 5,
            activation: Activation::Softmax,
            scale_full_d: false,
            encoder: EncoderConfig::hashed(8, 32, 7),
            task_kind: TaskKind::Multilabel,
            threshold: 0.5,
        }
    }

    pub(crate) fn fixture_doc(cfg: &ModelConfig, seed: u64) -> DocData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];
        let mut sentences = Vec::new();
        for _ in 0..rng.random_range(2..=3) {
            let mut frags = Vec::new();
            for _ in 0..rng.random_range(1..=3) {
                let n = rng.random_range(2..=4);
                let frag: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
                frags.push(frag.join(" "));
            }
            sentences.push(format!("{}.", frags.join(", ")));
        }
        let text = sentences.join(" ");
        let (sents, mut subs) = segment_document(&text).unwrap();
        let mut doc_labels = vec![0u8; cfg.num_labels];
        for sub in subs.iter_mut() {
            let mut v = vec![0u8; cfg.num_labels];
            let label = rng.random_range(0..cfg.num_labels);
            v[label] = 1;
            doc_labels[label] = 1;
            sub.labels = Some(v);
        }
        let doc = Document { id: format!("fix{seed}"), text, sentences: sents, subsentences: subs, doc_labels };
        prepare_document(&doc, cfg, None).unwrap()
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let cfg = small_config();
        let params = init_model(&cfg, 1).unwrap();
        let (clustering, classification) = partition_parameters(&params, true);
        let all: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for name in &all {
            let in_c = clustering.contains(name);
            let in_s = classification.contains(name);
            assert!(in_c ^ in_s, "{name} must be in exactly one set");
        }
        assert!(classification.contains(&"enc.projection".to_string()));
        let (_, frozen_enc) = partition_parameters(&params, false);
        assert!(!frozen_enc.contains(&"enc.projection".to_string()));
        // union of set sizes equals total trainable count
        let total: usize = params.named_tensors().iter().map(|(_, t)| t.len()).sum();
        assert_eq!(
            params.parameter_count(&clustering) + params.parameter_count(&classification),
            total
        );
        assert_eq!(
            params.parameter_count(&["enc.projection".to_string()]),
            crate::encoder::encoder_parameter_count(&cfg.encoder, None)
        );
    }

    #[test]
    fn forward_shapes_consistent() {
        let cfg = small_config();
        let params = init_model(&cfg, 3).unwrap();
        let doc = fixture_doc(&cfg, 5);
        let fwd = forward_doc(&params, &cfg, &doc, &mut Mode::Eval).unwrap();
        let t = doc.texts.len();
        let n = doc.m2.nrows();
        assert_eq!(fwd.embeddings.shape(), &[t, cfg.d]);
        assert_eq!(fwd.attend.output.shape(), &[cfg.q, cfg.d]);
        assert_eq!(fwd.pred.g1.shape(), &[cfg.q, cfg.num_labels]);
        assert_eq!(fwd.pred.g2.shape(), &[n, cfg.num_labels]);
        assert_eq!(fwd.pred.g3.shape(), &[1, cfg.num_labels]);
        for j in 0..t {
            let col: f64 = (0..cfg.q).map(|i| fwd.y[[i, j]]).sum();
            assert_eq!(col, 1.0);
        }
    }

    #[test]
    fn deterministic_forward() {
        let cfg = small_config();
        let params = init_model(&cfg, 3).unwrap();
        let doc = fixture_doc(&cfg, 5);
        let a = forward_doc(&params, &cfg, &doc, &mut Mode::Eval).unwrap();
        let b = forward_doc(&params, &cfg, &doc, &mut Mode::Eval).unwrap();
        assert_eq!(a.pred.g3, b.pred.g3);
    }

    #[test]
    fn gradients_match_finite_differences_all_kinds() {
        let cfg = small_config();
        let params = init_model(&cfg, 11).unwrap();
        let doc = fixture_doc(&cfg, 13);
        let weights = LossWeights::default();

        for kind in [
            LossKind::Proximity,
            LossKind::Regularization,
            LossKind::Classification,
            LossKind::Clustering,
        ] {
            let (_, grads) = loss_grads(&params, &cfg, &doc, kind, &weights).unwrap();
            let step = 1e-5;
            // spot-check a handful of coordinates in every tensor
            for (name, tensor) in params.named_tensors() {
                let grad_tensor = grads
                    .named_tensors()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1
                    .clone();
                let len = tensor.len();
                for probe in 0..len.min(5) {
                    let idx = probe * (len / 5).max(1) % len;
                    let (r, c) = (idx / tensor.ncols(), idx % tensor.ncols());
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    for (n, t) in plus.named_tensors_mut() {
                        if n == name {
                            t[[r, c]] += step;
                        }
                    }
                    for (n, t) in minus.named_tensors_mut() {
                        if n == name {
                            t[[r, c]] -= step;
                        }
                    }
                    let fp = loss_value(&plus, &cfg, &doc, kind, &weights).unwrap();
                    let fm = loss_value(&minus, &cfg, &doc, kind, &weights).unwrap();
                    let fd = (fp - fm) / (2.0 * step);
                    let analytic = grad_tensor[[r, c]];
                    let denom = analytic.abs().max(fd.abs()).max(1e-4);
                    assert!(
                        (analytic - fd).abs() / denom < 1e-3,
                        "{kind:?} {name}[{r},{c}]: analytic {analytic} vs fd {fd}"
                    );
                }
            }
        }
    }
}
