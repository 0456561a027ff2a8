//! Grounds each prototype in its nearest training sub-sentences and builds
//! per-document explanations from a single forward pass, so the cited
//! prototypes and the predicted labels come from the same computation.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;
use std::time::Duration;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::attend;
use crate::corpus::Document;
use crate::encoder::ExternalEncoder;
use crate::error::{Error, Result};
use crate::hierarchy::proto_label_scores;
use crate::model::{predict_doc, prepare_document, DocData, ModelConfig, ModelParams};
use crate::prototypes::similarity;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub document_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrototypeCard {
    pub prototype_id: usize,
    /// Nearest training sub-sentences, scores non-increasing.
    pub exemplars: Vec<Exemplar>,
    /// The prototype's label scores from a corpus-wide attention pass.
    pub label_profile: Vec<f64>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubSentenceExplanation {
    pub text: String,
    pub prototype_id: usize,
    pub score: f64,
    pub label_profile: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub document_id: String,
    pub predicted_labels: Vec<usize>,
    pub predicted_label_names: Vec<String>,
    pub records: Vec<SubSentenceExplanation>,
    pub sentence_scores: Vec<Vec<f64>>,
    pub document_scores: Vec<f64>,
}

/// Embed every training sub-sentence, rank them against each prototype by
/// cosine similarity, and read the prototypes' label scores off one
/// corpus-wide attention pass.
pub fn project_prototypes(
    params: &ModelParams,
    cfg: &ModelConfig,
    train_docs: &[DocData],
    k: usize,
) -> Result<Vec<PrototypeCard>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if train_docs.is_empty() {
        return Err(Error::EmptyBatch);
    }

    // embeddings and provenance for the entire training corpus
    let mut rows: Vec<Array2<f64>> = Vec::new();
    let mut texts: Vec<(String, String)> = Vec::new();
    for doc in train_docs {
        let fwd = crate::model::forward_doc(params, cfg, doc, &mut crate::model::Mode::Eval)?;
        rows.push(fwd.embeddings);
        for text in &doc.texts {
            texts.push((text.clone(), doc.id.clone()));
        }
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let all = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?;

    let sims = similarity(&params.prototypes, &all)?;
    let attn = attend(&params.prototypes, &all, &params.attn, None)?;
    let scores = proto_label_scores(&attn.output, &params.cls, None).scores;

    let mut cards = Vec::with_capacity(cfg.q);
    for i in 0..cfg.q {
        // stable sort keeps earliest corpus order among equal scores
        let mut order: Vec<usize> = (0..texts.len()).collect();
        order.sort_by(|&a, &b| sims[[i, b]].partial_cmp(&sims[[i, a]]).unwrap());
        let mut seen = HashSet::new();
        let mut exemplars = Vec::new();
        for j in order {
            if exemplars.len() >= k {
                break;
            }
            let (text, doc_id) = &texts[j];
            if seen.insert(text.clone()) {
                exemplars.push(Exemplar {
                    text: text.clone(),
                    document_id: doc_id.clone(),
                    score: sims[[i, j]],
                });
            }
        }
        cards.push(PrototypeCard {
            prototype_id: i,
            exemplars,
            label_profile: scores.row(i).to_vec(),
            summary: None,
        });
    }
    Ok(cards)
}

/// Explain one document with the forward pass that also decides its labels.
pub fn explain_document(
    doc: &Document,
    params: &ModelParams,
    cfg: &ModelConfig,
    cards: &[PrototypeCard],
    label_names: &[String],
    adapter: Option<&dyn ExternalEncoder>,
) -> Result<Explanation> {
    let data = prepare_document(doc, cfg, adapter)?;
    let (labels, fwd) = predict_doc(params, cfg, &data)?;

    let mut records = Vec::with_capacity(data.texts.len());
    for (j, text) in data.texts.iter().enumerate() {
        let assigned = (0..cfg.q)
            .find(|&i| fwd.y[[i, j]] != 0.0)
            .expect("assignment column is one-hot");
        let profile = cards
            .get(assigned)
            .map(|c| c.label_profile.clone())
            .unwrap_or_else(|| fwd.pred.g1.row(assigned).to_vec());
        records.push(SubSentenceExplanation {
            text: text.clone(),
            prototype_id: assigned,
            score: fwd.x[[assigned, j]],
            label_profile: profile,
        });
    }

    Ok(Explanation {
        document_id: doc.id.clone(),
        predicted_label_names: labels.iter().map(|&i| label_names[i].clone()).collect(),
        predicted_labels: labels,
        records,
        sentence_scores: fwd.pred.g2.rows().into_iter().map(|r| r.to_vec()).collect(),
        document_scores: fwd.pred.g3.row(0).to_vec(),
    })
}

/// Text summarization backend; failures surface as strings so the caller can
/// degrade to the deterministic fallback.
pub trait SummarizerClient: Send + Sync {
    fn summarize(&self, texts: &[String]) -> std::result::Result<String, String>;
}

/// POST {"texts": [...]} to an endpoint that answers {"summary": "..."}.
pub struct HttpSummarizer {
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpSummarizer {
    pub fn new(endpoint: String) -> std::result::Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpSummarizer {
            endpoint,
            token: std::env::var("PROTOSITEX_SUMMARIZER_TOKEN").ok(),
            client,
        })
    }
}

#[derive(Serialize)]
struct SummaryRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct SummaryResponse {
    summary: String,
}

impl SummarizerClient for HttpSummarizer {
    fn summarize(&self, texts: &[String]) -> std::result::Result<String, String> {
        let mut req = self.client.post(&self.endpoint).json(&SummaryRequest { texts });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("summarizer returned {}", resp.status()));
        }
        let body: SummaryResponse = resp.json().map_err(|e| e.to_string())?;
        Ok(body.summary)
    }
}

/// Top-3 exemplar texts joined with " | ".
pub fn fallback_summary(card: &PrototypeCard) -> String {
    card.exemplars
        .iter()
        .take(3)
        .map(|e| e.text.as_str())
        .collect::<Vec<_>>()
        .join(" | ")
}

fn card_content_hash(card: &PrototypeCard) -> String {
    let mut hasher = Sha256::new();
    for e in &card.exemplars {
        hasher.update(e.text.as_bytes());
        hasher.update([0u8]);
    }
    format!("{:x}", hasher.finalize())
}

/// Optional external naming with a content-hash cache; never fails — client
/// errors degrade to the deterministic fallback with a logged warning.
pub struct Summarizer {
    client: Option<Box<dyn SummarizerClient>>,
    cache: Mutex<HashMap<String, String>>,
}

impl Summarizer {
    pub fn offline() -> Self {
        Summarizer { client: None, cache: Mutex::new(HashMap::new()) }
    }

    pub fn with_client(client: Box<dyn SummarizerClient>) -> Self {
        Summarizer { client: Some(client), cache: Mutex::new(HashMap::new()) }
    }

    pub fn summarize_prototype(&self, card: &PrototypeCard) -> Result<String> {
        if card.exemplars.is_empty() {
            return Err(Error::Config(format!(
                "prototype {} has no exemplars to summarize",
                card.prototype_id
            )));
        }
        let Some(client) = &self.client else {
            return Ok(fallback_summary(card));
        };
        let key = card_content_hash(card);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let texts: Vec<String> = card.exemplars.iter().map(|e| e.text.clone()).collect();
        match client.summarize(&texts) {
            Ok(summary) => {
                self.cache.lock().unwrap().insert(key, summary.clone());
                Ok(summary)
            }
            Err(err) => {
                log::warn!("summarizer failed for prototype {}: {err}; using fallback", card.prototype_id);
                Ok(fallback_summary(card))
            }
        }
    }
}

pub fn explanation_json(explanation: &Explanation) -> String {
    serde_json::to_string_pretty(explanation).expect("explanation serializes")
}

pub fn explanation_markdown(explanation: &Explanation) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Explanation for document {}\n\n", explanation.document_id));
    out.push_str(&format!(
        "Predicted labels: {}\n\n",
        if explanation.predicted_label_names.is_empty() {
            "(none)".to_string()
        } else {
            explanation.predicted_label_names.join(", ")
        }
    ));
    out.push_str("| sub-sentence | prototype | similarity |\n|---|---|---|\n");
    for r in &explanation.records {
        out.push_str(&format!("| {} | {} | {:.4} |\n", r.text, r.prototype_id, r.score));
    }
    out.push_str("\nDocument scores: ");
    out.push_str(
        &explanation
            .document_scores
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    out.push('\n');
    out
}

pub fn cards_markdown(cards: &[PrototypeCard]) -> String {
    let mut out = String::from("# Prototype cards\n");
    for card in cards {
        out.push_str(&format!("\n## Prototype {}\n", card.prototype_id));
        if let Some(summary) = &card.summary {
            out.push_str(&format!("Summary: {summary}\n"));
        }
        for e in &card.exemplars {
            out.push_str(&format!("- {:.4} `{}` ({})\n", e.score, e.text, e.document_id));
        }
    }
    out
}
