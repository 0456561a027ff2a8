//! Multi-head scaled dot-product attention aligning prototypes (queries)
//! with sub-sentence embeddings (keys/values), with a hand-written backward
//! pass verified against finite differences.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AttentionHeads {
    /// Per-head d x d_h projections, d_h = d / h.
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    /// Output projection, (h * d_h) x d = d x d.
    pub w_out: Array2<f64>,
    /// Scale scores by sqrt(d) instead of sqrt(d_h).
    pub scale_full_d: bool,
}

impl AttentionHeads {
    pub fn num_heads(&self) -> usize {
        self.wq.len()
    }

    pub fn head_dim(&self) -> usize {
        self.wq[0].ncols()
    }

    pub fn d(&self) -> usize {
        self.wq[0].nrows()
    }

    fn scale(&self) -> f64 {
        if self.scale_full_d {
            (self.d() as f64).sqrt()
        } else {
            (self.head_dim() as f64).sqrt()
        }
    }

    pub fn zeros_like(&self) -> AttentionHeads {
        AttentionHeads {
            wq: self.wq.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            wk: self.wk.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            wv: self.wv.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            w_out: Array2::zeros(self.w_out.raw_dim()),
            scale_full_d: self.scale_full_d,
        }
    }
}

pub fn init_heads(d: usize, h: usize, seed: u64, scale_full_d: bool) -> Result<AttentionHeads> {
    if h == 0 || d % h != 0 {
        return Err(Error::Config(format!("head count {h} must divide dimension {d}")));
    }
    let dh = d / h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6174_746e);
    let mut sample = |rows: usize, cols: usize, scale: f64| {
        let mut w = Array2::zeros((rows, cols));
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * scale;
        }
        w
    };
    let proj_scale = 1.0 / (d as f64).sqrt();
    let mut wq = Vec::new();
    let mut wk = Vec::new();
    let mut wv = Vec::new();
    for _ in 0..h {
        wq.push(sample(d, dh, proj_scale));
        wk.push(sample(d, dh, proj_scale));
        wv.push(sample(d, dh, proj_scale));
    }
    let w_out = sample(d, d, proj_scale);
    Ok(AttentionHeads { wq, wk, wv, w_out, scale_full_d })
}

fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
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
    out
}

#[derive(Debug, Clone)]
pub struct AttendCache {
    pub q: Vec<Array2<f64>>,
    pub k: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Row-softmax attention weights, q x t per head.
    pub attn: Vec<Array2<f64>>,
    /// Attention weights actually applied (after dropout, if any).
    pub attn_used: Vec<Array2<f64>>,
    /// Inverted-dropout masks, present only in training mode.
    pub drop_masks: Option<Vec<Array2<f64>>>,
    /// Concatenated per-head outputs, q x d.
    pub concat: Array2<f64>,
    /// Final prototype-aware representations H, q x d.
    pub output: Array2<f64>,
}

/// Forward pass. `dropout` applies inverted dropout to the attention
/// weights during training.
pub fn attend(
    prototypes: &Array2<f64>,
    embeddings: &Array2<f64>,
    heads: &AttentionHeads,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<AttendCache> {
    let (q_count, d) = (prototypes.nrows(), prototypes.ncols());
    let t = embeddings.nrows();
    if t == 0 {
        return Err(Error::EmptyBatch);
    }
    if embeddings.ncols() != d || heads.d() != d {
        return Err(Error::Dimension(format!(
            "attend: prototypes {}x{}, embeddings {}x{}, heads expect d={}",
            q_count,
            d,
            t,
            embeddings.ncols(),
            heads.d()
        )));
    }
    let h = heads.num_heads();
    let dh = heads.head_dim();
    let scale = heads.scale();

    let mut cache = AttendCache {
        q: Vec::with_capacity(h),
        k: Vec::with_capacity(h),
        v: Vec::with_capacity(h),
        attn: Vec::with_capacity(h),
        attn_used: Vec::with_capacity(h),
        drop_masks: None,
        concat: Array2::zeros((q_count, h * dh)),
        output: Array2::zeros((q_count, d)),
    };
    let mut masks = Vec::new();
    let mut dropout = dropout;

    for i in 0..h {
        let qi = prototypes.dot(&heads.wq[i]);
        let ki = embeddings.dot(&heads.wk[i]);
        let vi = embeddings.dot(&heads.wv[i]);
        let scores = qi.dot(&ki.t()) / scale;
        let attn = softmax_rows(&scores);
        let attn_used = match &mut dropout {
            Some((rate, rng)) if *rate > 0.0 => {
                let keep = 1.0 - *rate;
                let mask = Array2::from_shape_fn(attn.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let used = &attn * &mask;
                masks.push(mask);
                used
            }
            _ => attn.clone(),
        };
        let hi = attn_used.dot(&vi);
        cache.concat.slice_mut(ndarray::s![.., i * dh..(i + 1) * dh]).assign(&hi);
        cache.q.push(qi);
        cache.k.push(ki);
        cache.v.push(vi);
        cache.attn.push(attn);
        cache.attn_used.push(attn_used);
    }
    if !masks.is_empty() {
        cache.drop_masks = Some(masks);
    }
    cache.output = cache.concat.dot(&heads.w_out);
    Ok(cache)
}

#[derive(Debug, Clone)]
pub struct AttendGrads {
    pub d_prototypes: Array2<f64>,
    pub d_embeddings: Array2<f64>,
    pub d_heads: AttentionHeads,
}

/// Backward pass given dL/dH.
pub fn attend_backward(
    cache: &AttendCache,
    prototypes: &Array2<f64>,
    embeddings: &Array2<f64>,
    heads: &AttentionHeads,
    d_output: &Array2<f64>,
) -> AttendGrads {
    let h = heads.num_heads();
    let dh = heads.head_dim();
    let scale = heads.scale();

    let mut grads = AttendGrads {
        d_prototypes: Array2::zeros(prototypes.raw_dim()),
        d_embeddings: Array2::zeros(embeddings.raw_dim()),
        d_heads: heads.zeros_like(),
    };

    grads.d_heads.w_out = cache.concat.t().dot(d_output);
    let d_concat = d_output.dot(&heads.w_out.t());

    for i in 0..h {
        let d_hi = d_concat.slice(ndarray::s![.., i * dh..(i + 1) * dh]).to_owned();
        let mut d_attn = d_hi.dot(&cache.v[i].t());
        let d_vi = cache.attn_used[i].t().dot(&d_hi);
        if let Some(masks) = &cache.drop_masks {
            d_attn *= &masks[i];
        }
        // softmax rows: dS = A .* (dA - rowsum(dA .* A))
        let attn = &cache.attn[i];
        let mut d_scores = Array2::zeros(attn.raw_dim());
        for r in 0..attn.nrows() {
            let dot: f64 = d_attn.row(r).iter().zip(attn.row(r).iter()).map(|(a, b)| a * b).sum();
            for c in 0..attn.ncols() {
                d_scores[[r, c]] = attn[[r, c]] * (d_attn[[r, c]] - dot);
            }
        }
        d_scores /= scale;
        let d_qi = d_scores.dot(&cache.k[i]);
        let d_ki = d_scores.t().dot(&cache.q[i]);

        grads.d_heads.wq[i] = prototypes.t().dot(&d_qi);
        grads.d_heads.wk[i] = embeddings.t().dot(&d_ki);
        grads.d_heads.wv[i] = embeddings.t().dot(&d_vi);
        grads.d_prototypes += &d_qi.dot(&heads.wq[i].t());
        grads.d_embeddings += &d_ki.dot(&heads.wk[i].t());
        grads.d_embeddings += &d_vi.dot(&heads.wv[i].t());
    }
    grads
}
