//! Sub-sentence encoders. The hashed encoder (token hashing, mean pooling,
//! trainable linear projection, L2 row normalization) is the deterministic
//! desk-scale default; an adapter trait covers external pretrained encoders.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashed,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Embedding dimension d.
    pub d: usize,
    pub seed: u64,
    pub trainable: bool,
    /// Hash bucket count (hashed kind). Bucket 0 is reserved for
    /// token-free sub-sentences and acts as a learned bias row.
    pub vocab_buckets: usize,
}

impl EncoderConfig {
    pub fn hashed(d: usize, vocab_buckets: usize, seed: u64) -> Self {
        EncoderConfig { kind: EncoderKind::Hashed, d, seed, trainable: true, vocab_buckets }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("embedding dimension must be >= 2, got {}", self.d)));
        }
        if self.kind == EncoderKind::Hashed && self.vocab_buckets < self.d {
            return Err(Error::Config(format!(
                "vocab_buckets ({}) must be >= d ({})",
                self.vocab_buckets, self.d
            )));
        }
        Ok(())
    }
}

/// Adapter for an out-of-process encoder (e.g. a fine-tuned LM behind an
/// HTTP endpoint). Implementations declare their dimension up front.
pub trait ExternalEncoder {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Array2<f64>>;
    fn parameter_count(&self) -> usize {
        0
    }
}

/// t x d embedding matrix, rows aligned with the sub-sentence order.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub values: Array2<f64>,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Mean-pooled hashed token features, stored sparsely as (bucket, weight)
/// pairs per sub-sentence. Token-free inputs get the reserved bias bucket.
#[derive(Debug, Clone)]
pub struct SparseFeatures {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn featurize(texts: &[String], vocab_buckets: usize) -> SparseFeatures {
    let rows = texts
        .iter()
        .map(|text| {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return vec![(0usize, 1.0)];
            }
            let weight = 1.0 / tokens.len() as f64;
            let mut counts: std::collections::BTreeMap<usize, f64> = Default::default();
            for token in &tokens {
                let bucket = 1 + (fnv1a(token.as_bytes()) % (vocab_buckets as u64 - 1)) as usize;
                *counts.entry(bucket).or_insert(0.0) += weight;
            }
            counts.into_iter().collect()
        })
        .collect();
    SparseFeatures { rows }
}

/// Seeded N(0, 1/sqrt(buckets)) init for the projection map.
pub fn init_projection(config: &EncoderConfig) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x656e_636f_6465);
    let scale = 1.0 / (config.vocab_buckets as f64).sqrt();
    let mut w = Array2::zeros((config.vocab_buckets, config.d));
    for v in w.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z * scale;
    }
    w
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    /// Pre-normalization rows F . W.
    pub raw: Array2<f64>,
    /// Row L2 norms of `raw`.
    pub norms: Array1<f64>,
    /// Normalized embeddings.
    pub embeddings: Array2<f64>,
}

/// Forward pass of the hashed encoder given precomputed features.
pub fn encode_hashed(features: &SparseFeatures, projection: &Array2<f64>) -> Result<EncodeCache> {
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let t = features.len();
    let d = projection.ncols();
    let mut raw = Array2::zeros((t, d));
    for (j, row) in features.rows.iter().enumerate() {
        for &(bucket, weight) in row {
            for c in 0..d {
                raw[[j, c]] += weight * projection[[bucket, c]];
            }
        }
    }
    let mut norms = Array1::zeros(t);
    let mut embeddings = raw.clone();
    for j in 0..t {
        let norm = raw.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateVector(format!("encoder produced a zero row for sub-sentence {j}")));
        }
        norms[j] = norm;
        embeddings.row_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(EncodeCache { raw, norms, embeddings })
}

/// Backward through normalization and projection; accumulates into
/// `d_projection`.
pub fn encode_hashed_backward(
    cache: &EncodeCache,
    features: &SparseFeatures,
    d_embeddings: &Array2<f64>,
    d_projection: &mut Array2<f64>,
) {
    let (t, d) = (cache.embeddings.nrows(), cache.embeddings.ncols());
    for j in 0..t {
        let e = cache.embeddings.row(j);
        let de = d_embeddings.row(j);
        let dot: f64 = de.iter().zip(e.iter()).map(|(a, b)| a * b).sum();
        let inv_norm = 1.0 / cache.norms[j];
        // d raw = (dE - (dE . E) E) / |raw|
        let mut d_raw = vec![0.0; d];
        for c in 0..d {
            d_raw[c] = (de[c] - dot * e[c]) * inv_norm;
        }
        for &(bucket, weight) in &features.rows[j] {
            for c in 0..d {
                d_projection[[bucket, c]] += weight * d_raw[c];
            }
        }
    }
}

/// Convenience entry point matching the encoder contract: hash, pool,
/// project, normalize.
pub fn encode(texts: &[String], config: &EncoderConfig, projection: &Array2<f64>) -> Result<EmbeddingMatrix> {
    config.validate()?;
    if texts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match config.kind {
        EncoderKind::Hashed => {
            if projection.nrows() != config.vocab_buckets || projection.ncols() != config.d {
                return Err(Error::Dimension(format!(
                    "projection is {}x{}, expected {}x{}",
                    projection.nrows(),
                    projection.ncols(),
                    config.vocab_buckets,
                    config.d
                )));
            }
            let features = featurize(texts, config.vocab_buckets);
            Ok(EmbeddingMatrix { values: encode_hashed(&features, projection)?.embeddings })
        }
        EncoderKind::External => Err(Error::Config(
            "external encoder requires an adapter; use encode_external".into(),
        )),
    }
}

/// Delegate to an external adapter and check shape and finiteness only.
pub fn encode_external(texts: &[String], config: &EncoderConfig, adapter: &dyn ExternalEncoder) -> Result<EmbeddingMatrix> {
    if texts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if adapter.dimension() != config.d {
        return Err(Error::Dimension(format!(
            "adapter declares dimension {}, config expects {}",
            adapter.dimension(),
            config.d
        )));
    }
    let values = adapter.embed(texts)?;
    if values.nrows() != texts.len() || values.ncols() != config.d {
        return Err(Error::Dimension(format!(
            "adapter returned {}x{}, expected {}x{}",
            values.nrows(),
            values.ncols(),
            texts.len(),
            config.d
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateVector("adapter returned non-finite embeddings".into()));
    }
    Ok(EmbeddingMatrix { values })
}

/// Exact count of trainable scalars.
pub fn encoder_parameter_count(config: &EncoderConfig, adapter: Option<&dyn ExternalEncoder>) -> usize {
    if !config.trainable {
        return 0;
    }
    match config.kind {
        EncoderKind::Hashed => config.vocab_buckets * config.d,
        EncoderKind::External => adapter.map_or(0, |a| a.parameter_count()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, buckets: usize, seed: u64) -> EncoderConfig {
        EncoderConfig::hashed(d, buckets, seed)
    }

    #[test]
    fn identical_strings_identical_rows() {
        let config = cfg(8, 64, 1);
        let w = init_projection(&config);
        let e = encode(&["same words here".into(), "same words here".into()], &config, &w).unwrap();
        assert_eq!(e.values.row(0), e.values.row(1));
    }

    #[test]
    fn rows_are_unit_norm() {
        let config = cfg(8, 64, 2);
        let w = init_projection(&config);
        let e = encode(&["a single sub sentence".into()], &config, &w).unwrap();
        assert_eq!(e.values.shape(), &[1, 8]);
        let norm: f64 = e.values.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_straight_line_oracle() {
        // hash -> mean-pool -> project -> normalize, recomputed without the
        // sparse representation
        let config = cfg(8, 32, 3);
        let w = init_projection(&config);
        let texts: Vec<String> = [
            "great room and view",
            "rude staff",
            "the pool was closed",
            "lovely breakfast, truly",
            "ok",
            "never again",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let e = encode(&texts, &config, &w).unwrap();

        for (j, text) in texts.iter().enumerate() {
            let tokens = tokenize(text);
            let mut dense = vec![0.0f64; 32];
            for token in &tokens {
                let bucket = 1 + (fnv1a(token.as_bytes()) % 31) as usize;
                dense[bucket] += 1.0 / tokens.len() as f64;
            }
            let mut raw = vec![0.0f64; 8];
            for (b, f) in dense.iter().enumerate() {
                for c in 0..8 {
                    raw[c] += f * w[[b, c]];
                }
            }
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..8 {
                assert!((e.values[[j, c]] - raw[c] / norm).abs() < 1e-9, "row {j} col {c}");
            }
        }
    }

    #[test]
    fn token_free_input_uses_bias_bucket() {
        let config = cfg(4, 16, 5);
        let w = init_projection(&config);
        let e = encode(&["---".into()], &config, &w).unwrap();
        let row0_norm: f64 = w.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..4 {
            assert!((e.values[[0, c]] - w[[0, c]] / row0_norm).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let config = cfg(4, 16, 5);
        let w = init_projection(&config);
        assert!(matches!(encode(&[], &config, &w), Err(Error::EmptyBatch)));
    }

    #[test]
    fn parameter_counts() {
        let mut config = cfg(8, 64, 0);
        assert_eq!(encoder_parameter_count(&config, None), 512);
        config.trainable = false;
        assert_eq!(encoder_parameter_count(&config, None), 0);

        struct Fake;
        impl ExternalEncoder for Fake {
            fn dimension(&self) -> usize {
                8
            }
            fn embed(&self, _: &[String]) -> crate::error::Result<Array2<f64>> {
                unimplemented!()
            }
            fn parameter_count(&self) -> usize {
                1000
            }
        }
        let config = EncoderConfig { kind: EncoderKind::External, d: 8, seed: 0, trainable: true, vocab_buckets: 0 };
        assert_eq!(encoder_parameter_count(&config, Some(&Fake)), 1000);
    }

    #[test]
    fn external_adapter_dimension_checked() {
        struct Fixed(usize);
        impl ExternalEncoder for Fixed {
            fn dimension(&self) -> usize {
                self.0
            }
            fn embed(&self, texts: &[String]) -> crate::error::Result<Array2<f64>> {
                Ok(Array2::ones((texts.len(), self.0)))
            }
        }
        let config = EncoderConfig { kind: EncoderKind::External, d: 8, seed: 0, trainable: false, vocab_buckets: 0 };
        assert!(encode_external(&["x".into()], &config, &Fixed(8)).is_ok());
        assert!(matches!(
            encode_external(&["x".into()], &config, &Fixed(4)),
            Err(Error::Dimension(_))
        ));
    }
}
