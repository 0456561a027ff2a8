//! Prototype-to-label classifier head and the hierarchical score path:
//! prototype scores are routed through the assignment matrix and the
//! structural mappings up to sentence and document level, with dynamic
//! ground truths built the same way from sub-sentence annotations.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softmax,
    Sigmoid,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Activation::Softmax),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation: {other}"))),
        }
    }
}

/// Two hidden ReLU layers (default widths 256 and 64) and an output layer.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub w3: Array2<f64>,
    pub b3: Array2<f64>,
    pub activation: Activation,
}

impl ClassifierParams {
    pub fn zeros_like(&self) -> ClassifierParams {
        ClassifierParams {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array2::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array2::zeros(self.b2.raw_dim()),
            w3: Array2::zeros(self.w3.raw_dim()),
            b3: Array2::zeros(self.b3.raw_dim()),
            activation: self.activation,
        }
    }
}

pub fn init_classifier(
    d: usize,
    hidden1: usize,
    hidden2: usize,
    num_labels: usize,
    activation: Activation,
    seed: u64,
) -> ClassifierParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636c_7366);
    let mut sample = |rows: usize, cols: usize| {
        let scale = (2.0 / rows as f64).sqrt();
        let mut w = Array2::zeros((rows, cols));
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * scale;
        }
        w
    };
    ClassifierParams {
        w1: sample(d, hidden1),
        b1: Array2::zeros((1, hidden1)),
        w2: sample(hidden1, hidden2),
        b2: Array2::zeros((1, hidden2)),
        w3: sample(hidden2, num_labels),
        b3: Array2::zeros((1, num_labels)),
        activation,
    }
}

/// Elementwise clipping to [0, 1].
pub fn clamp(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v.clamp(0.0, 1.0))
}

/// 1 where clamp passes gradients through, 0 where it saturates.
fn clamp_mask(pre: &Array2<f64>) -> Array2<f64> {
    pre.mapv(|v| if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 })
}

fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    pub input: Array2<f64>,
    pub z1_pre: Array2<f64>,
    pub z1: Array2<f64>,
    pub mask1: Option<Array2<f64>>,
    pub z2_pre: Array2<f64>,
    pub z2: Array2<f64>,
    pub mask2: Option<Array2<f64>>,
    pub logits: Array2<f64>,
    pub scores: Array2<f64>,
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    use rand::Rng;
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Row-wise two-hidden-layer MLP producing prototype label scores g1.
pub fn proto_label_scores(
    input: &Array2<f64>,
    params: &ClassifierParams,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> ClassifierCache {
    let z1_pre = input.dot(&params.w1) + &params.b1;
    let mut z1 = z1_pre.mapv(|v| v.max(0.0));
    let mut mask1 = None;
    let mut mask2 = None;
    let mut dropout = dropout;
    if let Some((rate, rng)) = &mut dropout {
        if *rate > 0.0 {
            let m = dropout_mask((z1.nrows(), z1.ncols()), *rate, rng);
            z1 *= &m;
            mask1 = Some(m);
        }
    }
    let z2_pre = z1.dot(&params.w2) + &params.b2;
    let mut z2 = z2_pre.mapv(|v| v.max(0.0));
    if let Some((rate, rng)) = &mut dropout {
        if *rate > 0.0 {
            let m = dropout_mask((z2.nrows(), z2.ncols()), *rate, rng);
            z2 *= &m;
            mask2 = Some(m);
        }
    }
    let logits = z2.dot(&params.w3) + &params.b3;
    let scores = match params.activation {
        Activation::Softmax => {
            let mut s = logits.clone();
            softmax_rows_inplace(&mut s);
            s
        }
        Activation::Sigmoid => logits.mapv(|v| 1.0 / (1.0 + (-v).exp())),
    };
    ClassifierCache { input: input.clone(), z1_pre, z1, mask1, z2_pre, z2, mask2, logits, scores }
}

#[derive(Debug, Clone)]
pub struct ClassifierGrads {
    pub d_params: ClassifierParams,
    pub d_input: Array2<f64>,
}

/// Backward through the head given dL/dg1.
pub fn proto_label_scores_backward(
    cache: &ClassifierCache,
    params: &ClassifierParams,
    d_scores: &Array2<f64>,
) -> ClassifierGrads {
    let d_logits = match params.activation {
        Activation::Softmax => {
            let mut d = Array2::zeros(cache.scores.raw_dim());
            for r in 0..cache.scores.nrows() {
                let dot: f64 = d_scores
                    .row(r)
                    .iter()
                    .zip(cache.scores.row(r).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                for c in 0..cache.scores.ncols() {
                    d[[r, c]] = cache.scores[[r, c]] * (d_scores[[r, c]] - dot);
                }
            }
            d
        }
        Activation::Sigmoid => {
            let s = &cache.scores;
            d_scores * &s.mapv(|v| v * (1.0 - v))
        }
    };

    let d_w3 = cache.z2.t().dot(&d_logits);
    let d_b3 = d_logits.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
    let mut d_z2 = d_logits.dot(&params.w3.t());
    if let Some(m) = &cache.mask2 {
        d_z2 *= m;
    }
    let d_z2_pre = &d_z2 * &cache.z2_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });

    let d_w2 = cache.z1.t().dot(&d_z2_pre);
    let d_b2 = d_z2_pre.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
    let mut d_z1 = d_z2_pre.dot(&params.w2.t());
    if let Some(m) = &cache.mask1 {
        d_z1 *= m;
    }
    let d_z1_pre = &d_z1 * &cache.z1_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });

    let d_w1 = cache.input.t().dot(&d_z1_pre);
    let d_b1 = d_z1_pre.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
    let d_input = d_z1_pre.dot(&params.w1.t());

    ClassifierGrads {
        d_params: ClassifierParams {
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
            w3: d_w3,
            b3: d_b3,
            activation: params.activation,
        },
        d_input,
    }
}

/// Predicted scores at the three levels of the hierarchy.
#[derive(Debug, Clone)]
pub struct ScoreTriple {
    pub g1: Array2<f64>,
    pub g2: Array2<f64>,
    pub g3: Array2<f64>,
}

/// Ground truths: prototype-level counts, sentence- and document-level
/// binary matrices.
#[derive(Debug, Clone)]
pub struct GroundTruthTriple {
    pub g1: Array2<f64>,
    pub g2: Array2<f64>,
    pub g3: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AggregateCache {
    pub g2_pre: Array2<f64>,
    pub g2: Array2<f64>,
    pub g3_pre: Array2<f64>,
    pub g3: Array2<f64>,
}

/// g2 = Clamp(M2 . Y^T . g1); g3 = Clamp(M1 . g2). Y is a constant here;
/// gradients never flow through the assignment.
pub fn aggregate(
    g1: &Array2<f64>,
    y: &Array2<f64>,
    m2: &Array2<f64>,
    m1: &Array2<f64>,
) -> Result<AggregateCache> {
    if y.nrows() != g1.nrows() || m2.ncols() != y.ncols() || m1.ncols() != m2.nrows() {
        return Err(Error::Dimension(format!(
            "aggregate: g1 {}x{}, Y {}x{}, M2 {}x{}, M1 {}x{}",
            g1.nrows(),
            g1.ncols(),
            y.nrows(),
            y.ncols(),
            m2.nrows(),
            m2.ncols(),
            m1.nrows(),
            m1.ncols()
        )));
    }
    let g2_pre = m2.dot(&y.t()).dot(g1);
    let g2 = clamp(&g2_pre);
    let g3_pre = m1.dot(&g2);
    let g3 = clamp(&g3_pre);
    Ok(AggregateCache { g2_pre, g2, g3_pre, g3 })
}

/// Backward through both clamps and mappings; returns dL/dg1 given the
/// direct gradients on g2 and g3.
pub fn aggregate_backward(
    cache: &AggregateCache,
    y: &Array2<f64>,
    m2: &Array2<f64>,
    m1: &Array2<f64>,
    d_g2_direct: &Array2<f64>,
    d_g3: &Array2<f64>,
) -> Array2<f64> {
    let d_g3_pre = d_g3 * &clamp_mask(&cache.g3_pre);
    let d_g2 = d_g2_direct + &m1.t().dot(&d_g3_pre);
    let d_g2_pre = &d_g2 * &clamp_mask(&cache.g2_pre);
    y.dot(&m2.t().dot(&d_g2_pre))
}

/// G1 = Y . C (per-prototype label occurrence counts), G2 = Clamp(M2 . C),
/// G3 = document labels verbatim.
pub fn dynamic_ground_truth(
    y: &Array2<f64>,
    c: Option<&Array2<f64>>,
    m2: &Array2<f64>,
    doc_labels: &Array2<f64>,
) -> Result<GroundTruthTriple> {
    let c = c.ok_or(Error::AnnotationRequired)?;
    if c.nrows() != y.ncols() {
        return Err(Error::Dimension(format!(
            "label matrix has {} rows for {} sub-sentences",
            c.nrows(),
            y.ncols()
        )));
    }
    Ok(GroundTruthTriple {
        g1: y.dot(c),
        g2: clamp(&m2.dot(c)),
        g3: doc_labels.clone(),
    })
}

/// Final decision rule. Multi-label thresholds g3 with an argmax fallback
/// for empty sets; single-label tasks take the argmax, ties to the lowest
/// index.
pub fn decide_labels(g3: &Array2<f64>, task: TaskKind, threshold: f64) -> Vec<usize> {
    let row = g3.row(0);
    match task {
        TaskKind::Multilabel => {
            let chosen: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v >= threshold)
                .map(|(i, _)| i)
                .collect();
            if chosen.is_empty() {
                vec![argmax(row.iter())]
            } else {
                chosen
            }
        }
        TaskKind::Binary | TaskKind::Multiclass => vec![argmax(row.iter())],
    }
}

fn argmax<'a>(iter: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in iter.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
