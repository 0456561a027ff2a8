//! Loader for the aclImdb sentiment corpus: either the original directory
//! layout (train|test/pos|neg/*.txt) or a JSONL file with {"text", "label"}
//! records. Produces a balanced, seeded subsample as a document-labeled
//! binary dataset.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::corpus::{segment_document, DatasetSplit, Document, TaskKind};
use crate::error::{Error, Result};

pub const IMDB_ENV: &str = "PROTOSITEX_IMDB";

/// Candidate locations checked in order when the env var is unset.
const DEFAULT_PATHS: &[&str] = &["data/aclImdb", "data/imdb.jsonl", "/root/data/aclImdb", "/root/data/imdb.jsonl"];

#[derive(Debug, Clone)]
pub struct RawReview {
    pub text: String,
    pub positive: bool,
    pub from_test_dir: bool,
}

/// Where the loader should look; env override first, then defaults.
pub fn locate() -> Option<PathBuf> {
    if let Ok(p) = std::env::var(IMDB_ENV) {
        let p = PathBuf::from(p);
        if p.exists() {
            return Some(p);
        }
        return None;
    }
    DEFAULT_PATHS.iter().map(PathBuf::from).find(|p| p.exists())
}

fn read_dir_reviews(dir: &Path, positive: bool, from_test_dir: bool, out: &mut Vec<RawReview>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    entries.sort();
    for path in entries {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let text = text.replace("<br />", " ");
        out.push(RawReview { text, positive, from_test_dir });
    }
    Ok(())
}

#[derive(Deserialize)]
struct JsonReview {
    text: String,
    label: serde_json::Value,
    #[serde(default)]
    split: Option<String>,
}

fn parse_label(v: &serde_json::Value) -> Result<bool> {
    match v {
        serde_json::Value::Number(n) => Ok(n.as_i64() == Some(1)),
        serde_json::Value::String(s) => match s.as_str() {
            "pos" | "positive" | "1" => Ok(true),
            "neg" | "negative" | "0" => Ok(false),
            other => Err(Error::Config(format!("unrecognized sentiment label {other:?}"))),
        },
        other => Err(Error::Config(format!("unrecognized sentiment label {other}"))),
    }
}

/// Read every review under `path` (directory layout or JSONL).
pub fn load_reviews(path: &Path) -> Result<Vec<RawReview>> {
    let mut reviews = Vec::new();
    if path.is_dir() {
        for (split, from_test) in [("train", false), ("test", true)] {
            for (polarity, positive) in [("pos", true), ("neg", false)] {
                let dir = path.join(split).join(polarity);
                if dir.is_dir() {
                    read_dir_reviews(&dir, positive, from_test, &mut reviews)?;
                }
            }
        }
    } else {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonReview = serde_json::from_str(line).map_err(|e| Error::Deserialization {
                path: format!("{}:{}", path.display(), i + 1),
                detail: e.to_string(),
            })?;
            reviews.push(RawReview {
                text: rec.text.replace("<br />", " "),
                positive: parse_label(&rec.label)?,
                from_test_dir: rec.split.as_deref() == Some("test"),
            });
        }
    }
    if reviews.is_empty() {
        return Err(Error::Config(format!("no reviews found under {}", path.display())));
    }
    Ok(reviews)
}

fn to_document(id: String, review: &RawReview) -> Result<Document> {
    let (sentences, subsentences) = segment_document(&review.text)?;
    let doc_labels = if review.positive { vec![0, 1] } else { vec![1, 0] };
    Ok(Document { id, text: review.text.clone(), sentences, subsentences, doc_labels })
}

/// Balanced subsample: `train_n` training and `test_n` test reviews, half
/// positive and half negative each, drawn with a seeded shuffle. A tenth of
/// the training half is held out for validation.
pub fn subsample(reviews: &[RawReview], train_n: usize, test_n: usize, seed: u64) -> Result<DatasetSplit> {
    if train_n % 2 != 0 || test_n % 2 != 0 {
        return Err(Error::Config("balanced subsample needs even sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..reviews.len()).filter(|&i| reviews[i].positive).collect();
    let mut neg: Vec<usize> = (0..reviews.len()).filter(|&i| !reviews[i].positive).collect();
    // prefer the corpus's own test documents for the test half when present
    pos.sort_by_key(|&i| (reviews[i].from_test_dir, i));
    neg.sort_by_key(|&i| (reviews[i].from_test_dir, i));
    let need = train_n / 2 + test_n / 2;
    if pos.len() < need || neg.len() < need {
        return Err(Error::Config(format!(
            "need {need} reviews per polarity, found {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let test_pos: Vec<usize> = pos.split_off(pos.len() - test_n / 2);
    let test_neg: Vec<usize> = neg.split_off(neg.len() - test_n / 2);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let train_pool: Vec<usize> = pos.iter().take(train_n / 2).chain(neg.iter().take(train_n / 2)).copied().collect();

    let val_n = (train_n / 10).max(2);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (k, &i) in train_pool.iter().enumerate() {
        let doc = to_document(format!("imdb-train-{k}"), &reviews[i])?;
        // alternating polarity pools keep both splits balanced
        if k % (train_n / val_n).max(1) == 0 && validation.len() < val_n {
            validation.push(doc);
        } else {
            train.push(doc);
        }
    }
    let mut test = Vec::new();
    for (k, &i) in test_pos.iter().chain(test_neg.iter()).enumerate() {
        test.push(to_document(format!("imdb-test-{k}"), &reviews[i])?);
    }

    let split = DatasetSplit {
        train,
        validation,
        test,
        label_names: vec!["negative".into(), "positive".into()],
        task_kind: TaskKind::Binary,
    };
    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn synthetic_reviews(n: usize) -> Vec<RawReview> {
        (0..n)
            .map(|i| RawReview {
                text: if i % 2 == 0 {
                    format!("wonderful film number {i}, truly great acting. loved it.")
                } else {
                    format!("terrible film number {i}, awful plot. hated it.")
                },
                positive: i % 2 == 0,
                from_test_dir: i >= n - n / 4,
            })
            .collect()
    }

    #[test]
    fn subsample_is_balanced_and_deterministic() {
        let reviews = synthetic_reviews(120);
        let a = subsample(&reviews, 40, 20, 3).unwrap();
        let b = subsample(&reviews, 40, 20, 3).unwrap();
        assert_eq!(a.train.len() + a.validation.len(), 40);
        assert_eq!(a.test.len(), 20);
        let pos = a.test.iter().filter(|d| d.doc_labels == vec![0, 1]).count();
        assert_eq!(pos, 10);
        let ids_a: Vec<&String> = a.train.iter().map(|d| &d.id).collect();
        let ids_b: Vec<&String> = b.train.iter().map(|d| &d.id).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(a.train[0].text, b.train[0].text);
    }

    #[test]
    fn insufficient_reviews_rejected() {
        let reviews = synthetic_reviews(10);
        assert!(matches!(subsample(&reviews, 40, 20, 0), Err(Error::Config(_))));
        assert!(matches!(subsample(&reviews, 3, 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imdb.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"text": "great movie. loved the cast.", "label": "pos"}}"#).unwrap();
        writeln!(f, r#"{{"text": "dull and slow. fell asleep.", "label": 0, "split": "test"}}"#).unwrap();
        let reviews = load_reviews(&path).unwrap();
        assert_eq!(reviews.len(), 2);
        assert!(reviews[0].positive);
        assert!(!reviews[1].positive);
        assert!(reviews[1].from_test_dir);
    }

    #[test]
    fn directory_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (split, polarity, text) in [
            ("train", "pos", "lovely film. <br /> a joy."),
            ("train", "neg", "dreadful pacing. no thanks."),
            ("test", "pos", "superb acting. bravo."),
        ] {
            let d = dir.path().join(split).join(polarity);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("0_1.txt"), text).unwrap();
        }
        let reviews = load_reviews(dir.path()).unwrap();
        assert_eq!(reviews.len(), 3);
        assert!(reviews.iter().any(|r| r.from_test_dir));
        assert!(reviews[0].text.contains("  a joy") || !reviews[0].text.contains("<br />"));
    }

    #[test]
    fn missing_corpus_is_an_error() {
        assert!(load_reviews(Path::new("/nonexistent/imdb")).is_err());
    }
}
