//! Document ingestion: segmentation into sentences and sub-sentences,
//! structural matrices (C, M1, M2), dataset splits, JSONL wire format,
//! and the seeded synthetic corpus generator.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Multilabel,
}

impl TaskKind {
    pub fn is_single_label(self) -> bool {
        !matches!(self, TaskKind::Multilabel)
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "multiclass" => Ok(TaskKind::Multiclass),
            "multilabel" => Ok(TaskKind::Multilabel),
            other => Err(Error::Config(format!("unknown task kind: {other}"))),
        }
    }
}

/// One clause-level unit, the model's finest granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSentenceRecord {
    pub index: usize,
    pub sentence_index: usize,
    pub text: String,
    /// Binary label vector of length l, when sub-sentence annotations exist.
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub sentences: Vec<String>,
    pub subsentences: Vec<SubSentenceRecord>,
    pub doc_labels: Vec<u8>,
}

impl Document {
    pub fn num_subsentences(&self) -> usize {
        self.subsentences.len()
    }

    pub fn subsentence_texts(&self) -> Vec<String> {
        self.subsentences.iter().map(|s| s.text.clone()).collect()
    }

    pub fn validate(&self, num_labels: usize, task: TaskKind, training: bool) -> Result<()> {
        if self.subsentences.is_empty() {
            return Err(Error::InconsistentAnnotation {
                doc_id: self.id.clone(),
                detail: "document has no sub-sentences".into(),
            });
        }
        let n = self.sentences.len();
        for s in &self.subsentences {
            if s.sentence_index >= n {
                return Err(Error::InconsistentAnnotation {
                    doc_id: self.id.clone(),
                    detail: format!("sub-sentence {} points past sentence count {n}", s.index),
                });
            }
            if let Some(labels) = &s.labels {
                if labels.len() != num_labels {
                    return Err(Error::InconsistentAnnotation {
                        doc_id: self.id.clone(),
                        detail: format!(
                            "sub-sentence {} has {} labels, expected {num_labels}",
                            s.index,
                            labels.len()
                        ),
                    });
                }
            }
        }
        if self.doc_labels.len() != num_labels {
            return Err(Error::InconsistentAnnotation {
                doc_id: self.id.clone(),
                detail: format!(
                    "document label vector has length {}, expected {num_labels}",
                    self.doc_labels.len()
                ),
            });
        }
        let active = self.doc_labels.iter().filter(|&&v| v != 0).count();
        if training {
            match task {
                TaskKind::Multilabel if active == 0 => {
                    return Err(Error::InconsistentAnnotation {
                        doc_id: self.id.clone(),
                        detail: "training document has no active label".into(),
                    });
                }
                TaskKind::Binary | TaskKind::Multiclass if active != 1 => {
                    return Err(Error::InconsistentAnnotation {
                        doc_id: self.id.clone(),
                        detail: format!("single-label document has {active} active labels"),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// t x l binary sub-sentence label matrix (C), or absent in document-only mode.
#[derive(Debug, Clone)]
pub struct LabelMatrix {
    pub values: Array2<f64>,
}

/// M1 (1 x n, all ones) and M2 (n x t, one-hot columns).
#[derive(Debug, Clone)]
pub struct MappingMatrices {
    pub m1: Array2<f64>,
    pub m2: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
    pub label_names: Vec<String>,
    pub task_kind: TaskKind,
}

impl DatasetSplit {
    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_labels();
        let mut seen = BTreeSet::new();
        for (docs, training) in [(&self.train, true), (&self.validation, false), (&self.test, false)] {
            for doc in docs {
                doc.validate(l, self.task_kind, training)?;
                if !seen.insert(doc.id.clone()) {
                    return Err(Error::Config(format!("document id {} appears in more than one split", doc.id)));
                }
            }
        }
        Ok(())
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Split raw text into sentences (on `.` `!` `?` followed by whitespace or
/// end of text) and sub-sentences (within a sentence, on `,` and `;`).
/// Whitespace runs are collapsed first; empty fragments are dropped.
pub fn segment_document(text: &str) -> Result<(Vec<String>, Vec<SubSentenceRecord>)> {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        return Err(Error::EmptyDocument);
    }

    let chars: Vec<char> = normalized.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if is_terminal(chars[i]) {
            // absorb the whole punctuation run
            let mut j = i;
            while j + 1 < chars.len() && is_terminal(chars[j + 1]) {
                j += 1;
            }
            let at_end = j + 1 >= chars.len();
            if at_end || chars[j + 1].is_whitespace() {
                let sentence: String = chars[start..=j].iter().collect();
                let sentence = sentence.trim().to_string();
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
                start = j + 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim().to_string();
        if !tail.is_empty() {
            sentences.push(tail);
        }
    }

    let mut subsentences = Vec::new();
    for (sentence_index, sentence) in sentences.iter().enumerate() {
        let mut found = false;
        for fragment in sentence.split([',', ';']) {
            let fragment = fragment.trim();
            if fragment.is_empty() {
                continue;
            }
            found = true;
            subsentences.push(SubSentenceRecord {
                index: subsentences.len(),
                sentence_index,
                text: fragment.to_string(),
                labels: None,
            });
        }
        if !found {
            // all-delimiter sentence still flows through as one unit
            subsentences.push(SubSentenceRecord {
                index: subsentences.len(),
                sentence_index,
                text: sentence.clone(),
                labels: None,
            });
        }
    }
    Ok((sentences, subsentences))
}

/// M1 = all-ones 1 x n; M2[i][j] = 1 iff sub-sentence j belongs to sentence i.
pub fn build_mappings(doc: &Document) -> MappingMatrices {
    let n = doc.sentences.len();
    let t = doc.subsentences.len();
    let m1 = Array2::ones((1, n));
    let mut m2 = Array2::zeros((n, t));
    for (j, sub) in doc.subsentences.iter().enumerate() {
        m2[[sub.sentence_index, j]] = 1.0;
    }
    MappingMatrices { m1, m2 }
}

/// Stack per-sub-sentence label vectors into the t x l matrix C. Returns
/// `None` when no sub-sentence carries annotations (document-only mode);
/// mixed annotated/unannotated documents are rejected.
pub fn build_label_matrix(doc: &Document, num_labels: usize) -> Result<Option<LabelMatrix>> {
    let annotated = doc.subsentences.iter().filter(|s| s.labels.is_some()).count();
    if annotated == 0 {
        return Ok(None);
    }
    if annotated != doc.subsentences.len() {
        return Err(Error::InconsistentAnnotation {
            doc_id: doc.id.clone(),
            detail: format!(
                "{annotated} of {} sub-sentences annotated; all or none required",
                doc.subsentences.len()
            ),
        });
    }
    let t = doc.subsentences.len();
    let mut values = Array2::zeros((t, num_labels));
    for (j, sub) in doc.subsentences.iter().enumerate() {
        let labels = sub.labels.as_ref().unwrap();
        if labels.len() != num_labels {
            return Err(Error::InconsistentAnnotation {
                doc_id: doc.id.clone(),
                detail: format!("sub-sentence {j} has {} labels, expected {num_labels}", labels.len()),
            });
        }
        for (c, &v) in labels.iter().enumerate() {
            values[[j, c]] = f64::from(v);
        }
    }
    Ok(Some(LabelMatrix { values }))
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Tokens per label pool.
    pub pool_size: usize,
    pub max_sentences: usize,
    pub max_subs_per_sentence: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a non-leading sub-sentence keeps the document's
    /// primary label rather than drawing a secondary one.
    pub primary_bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pool_size: 20,
            max_sentences: 6,
            max_subs_per_sentence: 3,
            min_tokens: 3,
            max_tokens: 6,
            primary_bias: 0.7,
        }
    }
}

pub fn synth_label_name(label: usize) -> String {
    format!("label{label:02}")
}

fn synth_token(label: usize, slot: usize) -> String {
    format!("l{label:02}w{slot:03}")
}

/// Label owned by a synthetic token, if it follows the generator's naming.
pub fn synth_token_label(token: &str) -> Option<usize> {
    let rest = token.strip_prefix('l')?;
    let (num, _) = rest.split_once('w')?;
    num.parse().ok()
}

/// Deterministic separable corpus: each label owns a disjoint token pool,
/// each sub-sentence draws from exactly one pool and carries that label,
/// document labels are the union. Documents are assigned a primary label
/// round-robin so every label is guaranteed coverage in every split.
pub fn generate_synthetic_corpus(
    seed: u64,
    num_docs: usize,
    num_labels: usize,
    spec: &SynthConfig,
) -> Result<DatasetSplit> {
    if num_labels < 2 {
        return Err(Error::Config(format!("need at least 2 labels, got {num_labels}")));
    }
    if num_docs < 10 * num_labels {
        return Err(Error::Config(format!(
            "need at least {} documents for {num_labels} labels, got {num_docs}",
            10 * num_labels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_primary: Vec<Vec<Document>> = vec![Vec::new(); num_labels];

    for doc_idx in 0..num_docs {
        let primary = doc_idx % num_labels;
        let num_sentences = rng.random_range(1..=spec.max_sentences);
        let mut sentence_texts = Vec::new();
        let mut sub_labels: Vec<usize> = Vec::new();
        for s in 0..num_sentences {
            let num_subs = rng.random_range(1..=spec.max_subs_per_sentence);
            let mut fragments = Vec::new();
            for u in 0..num_subs {
                let label = if s == 0 && u == 0 {
                    primary
                } else if rng.random::<f64>() < spec.primary_bias {
                    primary
                } else {
                    rng.random_range(0..num_labels)
                };
                let num_tokens = rng.random_range(spec.min_tokens..=spec.max_tokens);
                let tokens: Vec<String> = (0..num_tokens)
                    .map(|_| synth_token(label, rng.random_range(0..spec.pool_size)))
                    .collect();
                fragments.push(tokens.join(" "));
                sub_labels.push(label);
            }
            sentence_texts.push(format!("{}.", fragments.join(", ")));
        }
        let text = sentence_texts.join(" ");
        let (sentences, mut subsentences) = segment_document(&text)?;
        debug_assert_eq!(subsentences.len(), sub_labels.len());
        let mut doc_labels = vec![0u8; num_labels];
        for (sub, &label) in subsentences.iter_mut().zip(&sub_labels) {
            let mut v = vec![0u8; num_labels];
            v[label] = 1;
            doc_labels[label] = 1;
            sub.labels = Some(v);
        }
        by_primary[primary].push(Document {
            id: format!("synth-{doc_idx:05}"),
            text,
            sentences,
            subsentences,
            doc_labels,
        });
    }

    // 7:2:1 split, stratified by primary label so coverage holds by construction
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for group in by_primary {
        let g = group.len();
        let n_train = ((g as f64) * 0.7).round() as usize;
        let n_val = ((g as f64) * 0.2).round() as usize;
        for (i, doc) in group.into_iter().enumerate() {
            if i < n_train {
                train.push(doc);
            } else if i < n_train + n_val {
                validation.push(doc);
            } else {
                test.push(doc);
            }
        }
    }

    let split = DatasetSplit {
        train,
        validation,
        test,
        label_names: (0..num_labels).map(synth_label_name).collect(),
        task_kind: TaskKind::Multilabel,
    };
    split.validate()?;
    Ok(split)
}

// ---------------------------------------------------------------------------
// JSONL wire format and dataset directories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonDocument {
    pub id: String,
    pub text: String,
    pub doc_labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsentence_labels: Option<Vec<Vec<String>>>,
}

fn names_to_vec(names: &[String], label_names: &[String], doc_id: &str) -> Result<Vec<u8>> {
    let mut v = vec![0u8; label_names.len()];
    for name in names {
        let idx = label_names.iter().position(|n| n == name).ok_or_else(|| Error::InconsistentAnnotation {
            doc_id: doc_id.to_string(),
            detail: format!("unknown label name {name:?}"),
        })?;
        v[idx] = 1;
    }
    Ok(v)
}

fn vec_to_names(v: &[u8], label_names: &[String]) -> Vec<String> {
    v.iter()
        .zip(label_names)
        .filter(|(&b, _)| b != 0)
        .map(|(_, n)| n.clone())
        .collect()
}

/// Segment a wire record and attach annotations. Sub-sentence annotations
/// must align one-to-one with this segmenter's output; mismatches are
/// rejected rather than realigned.
pub fn document_from_json(record: &JsonDocument, label_names: &[String]) -> Result<Document> {
    let (sentences, mut subsentences) = segment_document(&record.text)?;
    if let Some(per_sub) = &record.subsentence_labels {
        if per_sub.len() != subsentences.len() {
            return Err(Error::InconsistentAnnotation {
                doc_id: record.id.clone(),
                detail: format!(
                    "{} sub-sentence label sets for {} segmented sub-sentences",
                    per_sub.len(),
                    subsentences.len()
                ),
            });
        }
        for (sub, names) in subsentences.iter_mut().zip(per_sub) {
            sub.labels = Some(names_to_vec(names, label_names, &record.id)?);
        }
    }
    Ok(Document {
        id: record.id.clone(),
        text: record.text.clone(),
        sentences,
        subsentences,
        doc_labels: names_to_vec(&record.doc_labels, label_names, &record.id)?,
    })
}

pub fn document_to_json(doc: &Document, label_names: &[String]) -> JsonDocument {
    let subsentence_labels = if doc.subsentences.iter().all(|s| s.labels.is_some()) {
        Some(
            doc.subsentences
                .iter()
                .map(|s| vec_to_names(s.labels.as_ref().unwrap(), label_names))
                .collect(),
        )
    } else {
        None
    };
    JsonDocument {
        id: doc.id.clone(),
        text: doc.text.clone(),
        doc_labels: vec_to_names(&doc.doc_labels, label_names),
        subsentence_labels,
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<JsonDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonDocument = serde_json::from_str(&line).map_err(|e| Error::Deserialization {
            path: format!("{}:{}", path.display(), lineno + 1),
            detail: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, docs: &[JsonDocument]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for doc in docs {
        let line = serde_json::to_string(doc).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    task_kind: TaskKind,
}

/// Layout: labels.txt, meta.json, {train,validation,test}.jsonl under `dir`.
pub fn save_split(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let labels_path = dir.join("labels.txt");
    fs::write(&labels_path, split.label_names.join("\n") + "\n")
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&DatasetMeta { task_kind: split.task_kind }).unwrap();
    fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    for (name, docs) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        let records: Vec<JsonDocument> = docs.iter().map(|d| document_to_json(d, &split.label_names)).collect();
        write_jsonl(&dir.join(format!("{name}.jsonl")), &records)?;
    }
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<DatasetSplit> {
    let labels_path = dir.join("labels.txt");
    let raw = fs::read_to_string(&labels_path).map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    let label_names: Vec<String> = raw.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect();
    let meta_path = dir.join("meta.json");
    let meta_raw = fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_raw).map_err(|e| Error::Deserialization {
        path: meta_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut parts = Vec::new();
    for name in ["train", "validation", "test"] {
        let records = read_jsonl(&dir.join(format!("{name}.jsonl")))?;
        let docs: Vec<Document> = records
            .iter()
            .map(|r| document_from_json(r, &label_names))
            .collect::<Result<_>>()?;
        parts.push(docs);
    }
    let mut parts = parts.into_iter();
    let split = DatasetSplit {
        train: parts.next().unwrap(),
        validation: parts.next().unwrap(),
        test: parts.next().unwrap(),
        label_names,
        task_kind: meta.task_kind,
    };
    split.validate()?;
    Ok(split)
}
