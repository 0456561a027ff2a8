//! Clustering-phase losses (prototype matching + interpretability,
//! sparsity + diversity) and the hierarchical binary cross entropy
//! classification loss, each with hand-written gradients.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{clamp, GroundTruthTriple, ScoreTriple};
use crate::prototypes::row_norms;

/// Prediction clipping for the BCE log terms.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    /// Clustering-phase weights (proximity, regularization, classification).
    pub alpha: [f64; 3],
    /// Classification-phase weights (prototype, sentence, document BCE).
    pub lambda: [f64; 3],
    /// Additive constant inside the sparsity log.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // the reported optimum for both weight triples
        LossWeights { alpha: [0.01, 0.98, 0.01], lambda: [0.6, 0.2, 0.2], epsilon: 1e-8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, triple) in [("alpha", &self.alpha), ("lambda", &self.lambda)] {
            if triple.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("{name} weights must be nonnegative")));
            }
            let sum: f64 = triple.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} weights must sum to 1, got {sum}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn check_rows(m: &Array2<f64>, what: &str) -> Result<Vec<f64>> {
    let norms = row_norms(m);
    if let Some(i) = norms.iter().position(|&n| n < 1e-12) {
        return Err(Error::DegenerateVector(format!("{what} row {i} has zero norm")));
    }
    Ok(norms)
}

/// Gradient of cos(a_row, b_row) with respect to a_row.
fn add_cos_grad(
    coeff: f64,
    a: ndarray::ArrayView1<f64>,
    b: ndarray::ArrayView1<f64>,
    na: f64,
    nb: f64,
    cos: f64,
    out: &mut ndarray::ArrayViewMut1<f64>,
) {
    for c in 0..a.len() {
        out[c] += coeff * (b[c] / (na * nb) - cos * a[c] / (na * na));
    }
}

/// Prototype matching + interpretability loss with gradients.
///
/// term1 pulls each sub-sentence toward its nearest prototype; term2 pulls
/// each prototype toward its best-covered sub-sentence.
pub fn proximity_loss_with_grads(
    embeddings: &Array2<f64>,
    prototypes: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let t = embeddings.nrows();
    let q = prototypes.nrows();
    if t == 0 || q == 0 {
        return Err(Error::EmptyBatch);
    }
    let e_norms = check_rows(embeddings, "embedding")?;
    let p_norms = check_rows(prototypes, "prototype")?;

    let mut cos = Array2::zeros((q, t));
    for i in 0..q {
        for j in 0..t {
            let dot: f64 = prototypes.row(i).iter().zip(embeddings.row(j).iter()).map(|(a, b)| a * b).sum();
            cos[[i, j]] = dot / (p_norms[i] * e_norms[j]);
        }
    }

    let mut d_e = Array2::zeros(embeddings.raw_dim());
    let mut d_p = Array2::zeros(prototypes.raw_dim());

    let mut term1 = 0.0;
    for j in 0..t {
        let mut nearest = 0;
        for i in 1..q {
            if cos[[i, j]] > cos[[nearest, j]] {
                nearest = i;
            }
        }
        term1 -= cos[[nearest, j]];
        let coeff = -1.0 / t as f64;
        add_cos_grad(coeff, embeddings.row(j), prototypes.row(nearest), e_norms[j], p_norms[nearest], cos[[nearest, j]], &mut d_e.row_mut(j));
        add_cos_grad(coeff, prototypes.row(nearest), embeddings.row(j), p_norms[nearest], e_norms[j], cos[[nearest, j]], &mut d_p.row_mut(nearest));
    }
    term1 /= t as f64;

    let mut term2 = 0.0;
    for i in 0..q {
        let mut best = 0;
        for j in 1..t {
            if cos[[i, j]] > cos[[i, best]] {
                best = j;
            }
        }
        term2 += 1.0 - cos[[i, best]];
        let coeff = -1.0 / q as f64;
        add_cos_grad(coeff, prototypes.row(i), embeddings.row(best), p_norms[i], e_norms[best], cos[[i, best]], &mut d_p.row_mut(i));
        add_cos_grad(coeff, embeddings.row(best), prototypes.row(i), e_norms[best], p_norms[i], cos[[i, best]], &mut d_e.row_mut(best));
    }
    term2 /= q as f64;

    Ok((term1 + term2, d_e, d_p))
}

pub fn proximity_loss(embeddings: &Array2<f64>, prototypes: &Array2<f64>) -> Result<f64> {
    proximity_loss_with_grads(embeddings, prototypes).map(|(v, _, _)| v)
}

/// Sparsity (peaked Euclidean responsibilities) + diversity (squared
/// pairwise prototype cosine) regularization with gradients.
pub fn regularization_loss_with_grads(
    embeddings: &Array2<f64>,
    prototypes: &Array2<f64>,
    epsilon: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let t = embeddings.nrows();
    let q = prototypes.nrows();
    if q == 0 {
        return Err(Error::Config("regularization needs at least one prototype".into()));
    }
    if t == 0 {
        return Err(Error::EmptyBatch);
    }
    let d = embeddings.ncols();

    // responsibilities: per sub-sentence j, softmax over prototypes of -|E_j - P_i|
    let mut dist = Array2::zeros((t, q));
    for j in 0..t {
        for i in 0..q {
            let sq: f64 = (0..d).map(|c| (embeddings[[j, c]] - prototypes[[i, c]]).powi(2)).sum();
            dist[[j, i]] = sq.sqrt();
        }
    }
    let mut resp = Array2::zeros((t, q));
    for j in 0..t {
        let max = (0..q).map(|i| -dist[[j, i]]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..q {
            let v = (-dist[[j, i]] - max).exp();
            resp[[j, i]] = v;
            sum += v;
        }
        for i in 0..q {
            resp[[j, i]] /= sum;
        }
    }
    let totals: Vec<f64> = (0..q).map(|i| (0..t).map(|j| resp[[j, i]]).sum()).collect();
    let sparsity = -(1.0 / q as f64) * totals.iter().map(|r| (r + epsilon).ln()).sum::<f64>();

    let mut d_e = Array2::zeros(embeddings.raw_dim());
    let mut d_p = Array2::zeros(prototypes.raw_dim());

    // dL/dresp[j][i] = -(1/q) / (totals[i] + eps); softmax backward per j
    for j in 0..t {
        let a: Vec<f64> = (0..q).map(|i| -(1.0 / q as f64) / (totals[i] + epsilon)).collect();
        let dot: f64 = (0..q).map(|i| a[i] * resp[[j, i]]).sum();
        for m in 0..q {
            let d_u = resp[[j, m]] * (a[m] - dot);
            let d_dist = -d_u;
            if dist[[j, m]] < 1e-12 {
                continue; // gradient of the norm is undefined at zero
            }
            let inv = d_dist / dist[[j, m]];
            for c in 0..d {
                let diff = embeddings[[j, c]] - prototypes[[m, c]];
                d_e[[j, c]] += inv * diff;
                d_p[[m, c]] -= inv * diff;
            }
        }
    }

    // diversity over unordered pairs, each counted twice in the paper's sum
    let mut diversity = 0.0;
    if q > 1 {
        let p_norms = check_rows(prototypes, "prototype")?;
        let denom = (q * (q - 1)) as f64;
        for i in 0..q {
            for k in (i + 1)..q {
                let dot: f64 = prototypes.row(i).iter().zip(prototypes.row(k).iter()).map(|(a, b)| a * b).sum();
                let cos = dot / (p_norms[i] * p_norms[k]);
                diversity += 2.0 * cos * cos / denom;
                let coeff = 4.0 * cos / denom;
                add_cos_grad(coeff, prototypes.row(i), prototypes.row(k), p_norms[i], p_norms[k], cos, &mut d_p.row_mut(i));
                add_cos_grad(coeff, prototypes.row(k), prototypes.row(i), p_norms[k], p_norms[i], cos, &mut d_p.row_mut(k));
            }
        }
    }

    Ok((sparsity + diversity, d_e, d_p))
}

pub fn regularization_loss(embeddings: &Array2<f64>, prototypes: &Array2<f64>, epsilon: f64) -> Result<f64> {
    regularization_loss_with_grads(embeddings, prototypes, epsilon).map(|(v, _, _)| v)
}

/// Mean binary cross entropy with predictions clipped to [delta, 1-delta].
pub fn bce_mean(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if pred.raw_dim() != target.raw_dim() {
        return Err(Error::Dimension(format!(
            "bce: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total / n)
}

/// dL/dpred of `bce_mean`, zero where the clip saturates.
pub fn bce_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    let n = pred.len() as f64;
    let mut grad = Array2::zeros(pred.raw_dim());
    for ((g, &p), &t) in grad.iter_mut().zip(pred.iter()).zip(target.iter()) {
        if p <= BCE_CLIP || p >= 1.0 - BCE_CLIP {
            continue;
        }
        *g = (p - t) / (p * (1.0 - p)) / n;
    }
    grad
}

/// Hierarchical classification loss. Prototype-level count targets are
/// clamped to [0, 1] so BCE stays defined.
pub fn classification_loss(gt: &GroundTruthTriple, pred: &ScoreTriple, lambda: &[f64; 3]) -> Result<f64> {
    let g1_target = clamp(&gt.g1);
    let l1 = if lambda[0] > 0.0 { bce_mean(&pred.g1, &g1_target)? } else { 0.0 };
    let l2 = if lambda[1] > 0.0 { bce_mean(&pred.g2, &gt.g2)? } else { 0.0 };
    let l3 = bce_mean(&pred.g3, &gt.g3)?;
    Ok(lambda[0] * l1 + lambda[1] * l2 + lambda[2] * l3)
}

/// Loss plus the direct gradients on (g1, g2, g3).
pub fn classification_loss_with_grads(
    gt: &GroundTruthTriple,
    pred: &ScoreTriple,
    lambda: &[f64; 3],
) -> Result<(f64, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let loss = classification_loss(gt, pred, lambda)?;
    let g1_target = clamp(&gt.g1);
    let d_g1 = if lambda[0] > 0.0 {
        bce_grad(&pred.g1, &g1_target) * lambda[0]
    } else {
        Array2::zeros(pred.g1.raw_dim())
    };
    let d_g2 = if lambda[1] > 0.0 {
        bce_grad(&pred.g2, &gt.g2) * lambda[1]
    } else {
        Array2::zeros(pred.g2.raw_dim())
    };
    let d_g3 = bce_grad(&pred.g3, &gt.g3) * lambda[2];
    Ok((loss, d_g1, d_g2, d_g3))
}

/// Clustering-phase objective.
pub fn clustering_loss(
    embeddings: &Array2<f64>,
    prototypes: &Array2<f64>,
    gt: &GroundTruthTriple,
    pred: &ScoreTriple,
    weights: &LossWeights,
) -> Result<f64> {
    let prox = if weights.alpha[0] > 0.0 { proximity_loss(embeddings, prototypes)? } else { 0.0 };
    let reg = if weights.alpha[1] > 0.0 {
        regularization_loss(embeddings, prototypes, weights.epsilon)?
    } else {
        0.0
    };
    let cls = if weights.alpha[2] > 0.0 { classification_loss(gt, pred, &weights.lambda)? } else { 0.0 };
    Ok(weights.alpha[0] * prox + weights.alpha[1] * reg + weights.alpha[2] * cls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights { alpha: [0.5, 0.5, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
        let negative = LossWeights { lambda: [-0.1, 0.6, 0.5], ..Default::default() };
        assert!(negative.validate().is_err());
    }

    #[test]
    fn proximity_perfect_alignment() {
        let e = array![[1.0, 0.0], [0.0, 2.0]];
        let p = e.clone();
        let (loss, _, _) = proximity_loss_with_grads(&e, &p).unwrap();
        assert!((loss - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn proximity_orthogonal_single_pair() {
        let e = array![[1.0, 0.0]];
        let p = array![[0.0, 1.0]];
        let loss = proximity_loss(&e, &p).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proximity_matches_pair_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let e = random_matrix(5, 4, &mut rng);
            let p = random_matrix(3, 4, &mut rng);
            let loss = proximity_loss(&e, &p).unwrap();

            let cos = |a: &[f64], b: &[f64]| {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                dot / (na * nb)
            };
            let mut term1 = 0.0;
            for j in 0..5 {
                let row_e: Vec<f64> = e.row(j).to_vec();
                let best = (0..3)
                    .map(|i| cos(&row_e, &p.row(i).to_vec()))
                    .fold(f64::NEG_INFINITY, f64::max);
                term1 -= best;
            }
            term1 /= 5.0;
            let mut term2 = 0.0;
            for i in 0..3 {
                let row_p: Vec<f64> = p.row(i).to_vec();
                let best = (0..5)
                    .map(|j| cos(&e.row(j).to_vec(), &row_p))
                    .fold(f64::NEG_INFINITY, f64::max);
                term2 += 1.0 - best;
            }
            term2 /= 3.0;
            assert!((loss - (term1 + term2)).abs() < 1e-6);
        }
    }

    #[test]
    fn proximity_invariant_to_positive_row_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e = random_matrix(4, 6, &mut rng);
        let p = random_matrix(3, 6, &mut rng);
        let before = proximity_loss(&e, &p).unwrap();
        e.row_mut(1).mapv_inplace(|v| v * 9.0);
        let after = proximity_loss(&e, &p).unwrap();
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn regularization_single_prototype_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_matrix(5, 4, &mut rng);
        let p = random_matrix(1, 4, &mut rng);
        let eps = 1e-8;
        let loss = regularization_loss(&e, &p, eps).unwrap();
        // single prototype: every responsibility is 1, total = t, diversity = 0
        assert!((loss - (-(5.0f64 + eps).ln())).abs() < 1e-9);
    }

    #[test]
    fn diversity_zero_for_orthogonal_prototypes() {
        let e = array![[0.3, 0.4, 0.1]];
        let p = array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5]];
        let (loss, _, _) = regularization_loss_with_grads(&e, &p, 1e-8).unwrap();
        // remaining value is pure sparsity
        let sparsity_only = {
            let d = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
                a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            };
            let dists: Vec<f64> = (0..3).map(|i| d(e.row(0), p.row(i))).collect();
            let sum: f64 = dists.iter().map(|&x| (-x).exp()).sum();
            -(1.0 / 3.0)
                * dists
                    .iter()
                    .map(|&x| ((-x).exp() / sum + 1e-8).ln())
                    .sum::<f64>()
        };
        assert!((loss - sparsity_only).abs() < 1e-9);
    }

    #[test]
    fn regularization_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let e = random_matrix(6, 5, &mut rng);
            let p = random_matrix(4, 5, &mut rng);
            let eps = 1e-8;
            let loss = regularization_loss(&e, &p, eps).unwrap();

            let mut totals = vec![0.0; 4];
            for j in 0..6 {
                let dists: Vec<f64> = (0..4)
                    .map(|i| {
                        (0..5)
                            .map(|c| (e[[j, c]] - p[[i, c]]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let denom: f64 = dists.iter().map(|&x| (-x).exp()).sum();
                for i in 0..4 {
                    totals[i] += (-dists[i]).exp() / denom;
                }
            }
            let sparsity = -(1.0 / 4.0) * totals.iter().map(|r| (r + eps).ln()).sum::<f64>();
            let mut diversity = 0.0;
            for i in 0..4 {
                for k in 0..4 {
                    if i == k {
                        continue;
                    }
                    let dot: f64 = (0..5).map(|c| p[[i, c]] * p[[k, c]]).sum();
                    let ni: f64 = (0..5).map(|c| p[[i, c]].powi(2)).sum::<f64>().sqrt();
                    let nk: f64 = (0..5).map(|c| p[[k, c]].powi(2)).sum::<f64>().sqrt();
                    diversity += (dot / (ni * nk)).powi(2);
                }
            }
            diversity /= 12.0;
            assert!((loss - (sparsity + diversity)).abs() < 1e-6);
        }
    }

    #[test]
    fn diversity_invariant_to_permutation_and_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_matrix(1, 4, &mut rng);
        let p = random_matrix(3, 4, &mut rng);
        let diversity_of = |p: &Array2<f64>| {
            // isolate the diversity term by subtracting the sparsity term
            let full = regularization_loss(&e, p, 1e-8).unwrap();
            let mut dists = vec![0.0; 3];
            for i in 0..3 {
                dists[i] = (0..4).map(|c| (e[[0, c]] - p[[i, c]]).powi(2)).sum::<f64>().sqrt();
            }
            let denom: f64 = dists.iter().map(|&x| (-x).exp()).sum();
            let sparsity = -(1.0 / 3.0)
                * dists
                    .iter()
                    .map(|&x| ((-x).exp() / denom + 1e-8).ln())
                    .sum::<f64>();
            full - sparsity
        };
        let base = diversity_of(&p);
        let mut permuted = Array2::zeros((3, 4));
        for (new, &old) in [1usize, 2, 0].iter().enumerate() {
            permuted.row_mut(new).assign(&p.row(old));
        }
        assert!((diversity_of(&permuted) - base).abs() < 1e-9);
        let mut negated = p.clone();
        negated.row_mut(1).mapv_inplace(|v| -v);
        assert!((diversity_of(&negated) - base).abs() < 1e-9);
    }

    fn fixture_triples(rng: &mut ChaCha8Rng) -> (GroundTruthTriple, ScoreTriple) {
        let gt = GroundTruthTriple {
            g1: Array2::from_shape_fn((3, 2), |_| f64::from(rng.random_range(0..3u8))),
            g2: Array2::from_shape_fn((2, 2), |_| f64::from(rng.random::<bool>())),
            g3: Array2::from_shape_fn((1, 2), |_| f64::from(rng.random::<bool>())),
        };
        let pred = ScoreTriple {
            g1: Array2::from_shape_fn((3, 2), |_| rng.random::<f64>()),
            g2: Array2::from_shape_fn((2, 2), |_| rng.random::<f64>()),
            g3: Array2::from_shape_fn((1, 2), |_| rng.random::<f64>()),
        };
        (gt, pred)
    }

    #[test]
    fn bce_perfect_predictions_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (gt, _) = fixture_triples(&mut rng);
        let pred = ScoreTriple { g1: clamp(&gt.g1), g2: gt.g2.clone(), g3: gt.g3.clone() };
        let loss = classification_loss(&gt, &pred, &[0.4, 0.3, 0.3]).unwrap();
        assert!(loss <= 1e-6);
    }

    #[test]
    fn bce_half_predictions_are_ln_two() {
        let gt = GroundTruthTriple {
            g1: array![[1.0, 0.0]],
            g2: array![[0.0, 1.0]],
            g3: array![[1.0, 1.0]],
        };
        let half = ScoreTriple {
            g1: array![[0.5, 0.5]],
            g2: array![[0.5, 0.5]],
            g3: array![[0.5, 0.5]],
        };
        let loss = classification_loss(&gt, &half, &[0.6, 0.2, 0.2]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn classification_matches_scalar_bce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (gt, pred) = fixture_triples(&mut rng);
        let lambda = [0.6, 0.2, 0.2];
        let loss = classification_loss(&gt, &pred, &lambda).unwrap();

        let bce = |pred: &Array2<f64>, target: &Array2<f64>| {
            let mut total = 0.0;
            for (&p, &t) in pred.iter().zip(target.iter()) {
                let t = t.clamp(0.0, 1.0);
                let p = p.clamp(1e-7, 1.0 - 1e-7);
                total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
            total / pred.len() as f64
        };
        let expected = 0.6 * bce(&pred.g1, &gt.g1) + 0.2 * bce(&pred.g2, &gt.g2) + 0.2 * bce(&pred.g3, &gt.g3);
        assert!((loss - expected).abs() < 1e-6);
    }

    #[test]
    fn clustering_weight_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = random_matrix(5, 4, &mut rng);
        let p = random_matrix(3, 4, &mut rng);
        let (gt, pred) = fixture_triples(&mut rng);

        let only_prox = LossWeights { alpha: [1.0, 0.0, 0.0], ..Default::default() };
        assert!(
            (clustering_loss(&e, &p, &gt, &pred, &only_prox).unwrap() - proximity_loss(&e, &p).unwrap()).abs()
                < 1e-12
        );
        let only_reg = LossWeights { alpha: [0.0, 1.0, 0.0], ..Default::default() };
        assert!(
            (clustering_loss(&e, &p, &gt, &pred, &only_reg).unwrap()
                - regularization_loss(&e, &p, only_reg.epsilon).unwrap())
            .abs()
                < 1e-12
        );
        let mixed = LossWeights::default();
        let combined = clustering_loss(&e, &p, &gt, &pred, &mixed).unwrap();
        let expected = 0.01 * proximity_loss(&e, &p).unwrap()
            + 0.98 * regularization_loss(&e, &p, mixed.epsilon).unwrap()
            + 0.01 * classification_loss(&gt, &pred, &mixed.lambda).unwrap();
        assert!((combined - expected).abs() < 1e-9);
    }

    #[test]
    fn losses_finite_on_extreme_predictions() {
        let gt = GroundTruthTriple {
            g1: array![[1.0, 0.0]],
            g2: array![[1.0, 0.0]],
            g3: array![[1.0, 0.0]],
        };
        let pred = ScoreTriple {
            g1: array![[0.0, 1.0]],
            g2: array![[0.0, 1.0]],
            g3: array![[0.0, 1.0]],
        };
        let loss = classification_loss(&gt, &pred, &[0.4, 0.3, 0.3]).unwrap();
        assert!(loss.is_finite());
    }
}
