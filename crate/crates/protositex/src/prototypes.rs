//! Learnable prototype bank, cosine similarity against sub-sentence
//! embeddings, and the column-argmax binarized assignment.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// q x d bank of prototype vectors. Prototypes are not norm-constrained;
/// cosine similarity absorbs scale.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    pub values: Array2<f64>,
}

impl PrototypeBank {
    pub fn q(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }
}

/// Random init: independent N(0, 1) entries scaled by 1/sqrt(d).
pub fn init_prototypes(q: usize, d: usize, seed: u64) -> Result<PrototypeBank> {
    if q < 1 {
        return Err(Error::Config(format!("prototype count must be >= 1, got {q}")));
    }
    if d < 2 {
        return Err(Error::Config(format!("prototype dimension must be >= 2, got {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f74_6f73);
    let scale = 1.0 / (d as f64).sqrt();
    let mut values = Array2::zeros((q, d));
    for v in values.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z * scale;
    }
    Ok(PrototypeBank { values })
}

pub fn row_norms(m: &Array2<f64>) -> Vec<f64> {
    m.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// X[i][j] = cos(P_i, E_j).
pub fn similarity(prototypes: &Array2<f64>, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    if prototypes.ncols() != embeddings.ncols() {
        return Err(Error::Dimension(format!(
            "prototype dim {} vs embedding dim {}",
            prototypes.ncols(),
            embeddings.ncols()
        )));
    }
    let p_norms = row_norms(prototypes);
    let e_norms = row_norms(embeddings);
    if let Some(i) = p_norms.iter().position(|&n| n < 1e-12) {
        return Err(Error::DegenerateVector(format!("prototype {i} has zero norm")));
    }
    if let Some(j) = e_norms.iter().position(|&n| n < 1e-12) {
        return Err(Error::DegenerateVector(format!("embedding row {j} has zero norm")));
    }
    let mut x = prototypes.dot(&embeddings.t());
    for ((i, j), v) in x.indexed_iter_mut() {
        *v /= p_norms[i] * e_norms[j];
    }
    Ok(x)
}

/// Column-argmax index per sub-sentence, ties to the lowest prototype index.
pub fn assign_indices(x: &Array2<f64>) -> Vec<usize> {
    let (q, t) = (x.nrows(), x.ncols());
    (0..t)
        .map(|j| {
            let mut best = 0;
            for i in 1..q {
                if x[[i, j]] > x[[best, j]] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Binarized assignment matrix Y: exactly one 1 per column.
pub fn assign(x: &Array2<f64>) -> Array2<f64> {
    let (q, t) = (x.nrows(), x.ncols());
    let mut y = Array2::zeros((q, t));
    for (j, i) in assign_indices(x).into_iter().enumerate() {
        y[[i, j]] = 1.0;
    }
    y
}
