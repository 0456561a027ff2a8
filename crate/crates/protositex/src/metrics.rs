//! Label-wise evaluation: per-label precision/recall/F1/accuracy, macro F1,
//! macro balanced accuracy, Hamming loss and its percentage complement.

use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Set when a denominator vanished and the zero-division convention
    /// (score = 0) was applied.
    pub undefined_by_convention: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_kind: TaskKind,
    pub num_documents: usize,
    pub per_label: Vec<LabelStats>,
    pub macro_f1: f64,
    pub balanced_accuracy_macro: f64,
    pub hamming_loss: f64,
    /// (1 - hamming_loss) * 100, exactly.
    pub hamming_complement: f64,
    /// Argmax-decision accuracy; meaningful for single-label tasks.
    pub accuracy: f64,
    pub overall_f1: f64,
}

fn safe_div(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// Tally per-cell confusion counts and derive every reported quantity.
pub fn evaluate(
    predictions: &[Vec<u8>],
    truths: &[Vec<u8>],
    label_names: &[String],
    task_kind: TaskKind,
) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let l = label_names.len();
    for (row, name) in [(predictions, "prediction"), (truths, "truth")] {
        if let Some(bad) = row.iter().find(|v| v.len() != l) {
            return Err(Error::Dimension(format!("{name} vector has arity {}, expected {l}", bad.len())));
        }
    }

    let n = predictions.len();
    let mut per_label = Vec::with_capacity(l);
    let mut wrong_cells = 0usize;
    for c in 0..l {
        let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for (pred, truth) in predictions.iter().zip(truths) {
            match (pred[c] != 0, truth[c] != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        wrong_cells += fp + fn_;
        let (precision, p_undef) = safe_div(tp as f64, (tp + fp) as f64);
        let (recall, r_undef) = safe_div(tp as f64, (tp + fn_) as f64);
        let (f1, f_undef) = safe_div(2.0 * precision * recall, precision + recall);
        let accuracy = (tp + tn) as f64 / n as f64;
        let (tpr, tpr_undef) = safe_div(tp as f64, (tp + fn_) as f64);
        let (tnr, tnr_undef) = safe_div(tn as f64, (tn + fp) as f64);
        per_label.push(LabelStats {
            label: label_names[c].clone(),
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy,
            balanced_accuracy: (tpr + tnr) / 2.0,
            undefined_by_convention: p_undef || r_undef || f_undef || tpr_undef || tnr_undef,
        });
    }

    let macro_f1 = per_label.iter().map(|s| s.f1).sum::<f64>() / l as f64;
    let balanced_accuracy_macro = per_label.iter().map(|s| s.balanced_accuracy).sum::<f64>() / l as f64;
    let hamming_loss = wrong_cells as f64 / (n * l) as f64;
    let hamming_complement = (1.0 - hamming_loss) * 100.0;

    // exact-vector accuracy; for single-label tasks this is argmax accuracy
    let exact = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    let accuracy = exact as f64 / n as f64;

    Ok(EvalReport {
        task_kind,
        num_documents: n,
        per_label,
        macro_f1,
        balanced_accuracy_macro,
        hamming_loss,
        hamming_complement,
        accuracy,
        overall_f1: macro_f1,
    })
}

/// One row per label, mirroring the report's per-label quantities.
pub fn aspect_breakdown(report: &EvalReport) -> Vec<(String, f64, f64, f64, f64, bool)> {
    report
        .per_label
        .iter()
        .map(|s| (s.label.clone(), s.precision, s.recall, s.f1, s.accuracy, s.undefined_by_convention))
        .collect()
}

/// Fixed-width text table of the aspect breakdown plus the aggregates.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>9} {:>9} {:>9} {:>9}\n",
        "label", "precision", "recall", "f1", "accuracy"
    ));
    for s in &report.per_label {
        let flag = if s.undefined_by_convention { "*" } else { "" };
        out.push_str(&format!(
            "{:<20} {:>9.4} {:>9.4} {:>9.4} {:>9.4}{}\n",
            s.label, s.precision, s.recall, s.f1, s.accuracy, flag
        ));
    }
    out.push_str(&format!(
        "macro_f1={:.4} balanced_accuracy={:.4} hamming_loss={:.4} hamming_complement={:.2} accuracy={:.4}\n",
        report.macro_f1,
        report.balanced_accuracy_macro,
        report.hamming_loss,
        report.hamming_complement,
        report.accuracy
    ));
    out.push_str("(* = zero denominator, score 0 by convention)\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(l: usize) -> Vec<String> {
        (0..l).map(|i| format!("lab{i}")).collect()
    }

    #[test]
    fn single_wrong_cell_hamming() {
        let truths = vec![vec![1, 0, 0, 0, 0, 0, 0, 0]];
        let mut preds = truths.clone();
        preds[0][3] = 1;
        let report = evaluate(&preds, &truths, &names(8), TaskKind::Multilabel).unwrap();
        assert_eq!(report.hamming_loss, 0.125);
        assert_eq!(report.hamming_complement, 87.5);
    }

    #[test]
    fn perfect_predictions() {
        let truths = vec![vec![1, 0], vec![0, 1], vec![1, 1]];
        let report = evaluate(&truths, &truths, &names(2), TaskKind::Multilabel).unwrap();
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.balanced_accuracy_macro, 1.0);
        assert_eq!(report.hamming_loss, 0.0);
        assert_eq!(report.hamming_complement, 100.0);
    }

    #[test]
    fn matches_brute_force_tallies() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        let (n, l) = (50, 4);
        let preds: Vec<Vec<u8>> = (0..n).map(|_| (0..l).map(|_| u8::from(rng.random::<bool>())).collect()).collect();
        let truths: Vec<Vec<u8>> = (0..n).map(|_| (0..l).map(|_| u8::from(rng.random::<bool>())).collect()).collect();
        let report = evaluate(&preds, &truths, &names(l), TaskKind::Multilabel).unwrap();

        let mut wrong = 0usize;
        for c in 0..l {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for i in 0..n {
                match (preds[i][c], truths[i][c]) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fn_ += 1,
                    _ => tn += 1,
                }
            }
            wrong += fp + fn_;
            let s = &report.per_label[c];
            assert_eq!((s.tp, s.fp, s.fn_, s.tn), (tp, fp, fn_, tn));
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            assert_eq!(s.precision, precision);
            assert_eq!(s.recall, recall);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            assert_eq!(s.f1, f1);
        }
        assert_eq!(report.hamming_loss, wrong as f64 / (n * l) as f64);
        assert_eq!(report.hamming_complement, (1.0 - report.hamming_loss) * 100.0);
    }

    #[test]
    fn unobserved_label_flagged() {
        let truths = vec![vec![1, 0], vec![1, 0]];
        let preds = vec![vec![1, 0], vec![1, 0]];
        let report = evaluate(&preds, &truths, &names(2), TaskKind::Multilabel).unwrap();
        assert!(report.per_label[1].undefined_by_convention);
        assert_eq!(report.per_label[1].f1, 0.0);
    }

    #[test]
    fn binary_task_label_accuracies_equal() {
        let truths = vec![vec![1, 0], vec![0, 1], vec![1, 0]];
        let preds = vec![vec![1, 0], vec![1, 0], vec![0, 1]];
        let report = evaluate(&preds, &truths, &names(2), TaskKind::Binary).unwrap();
        assert_eq!(report.per_label[0].accuracy, report.per_label[1].accuracy);
    }

    #[test]
    fn macro_aggregates_invariant_under_label_permutation() {
        let truths = vec![vec![1, 0, 1], vec![0, 1, 0], vec![1, 1, 0]];
        let preds = vec![vec![1, 0, 0], vec![0, 1, 1], vec![1, 0, 0]];
        let a = evaluate(&preds, &truths, &names(3), TaskKind::Multilabel).unwrap();
        let perm = [2usize, 0, 1];
        let permute = |rows: &[Vec<u8>]| -> Vec<Vec<u8>> {
            rows.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect()
        };
        let b = evaluate(&permute(&preds), &permute(&truths), &names(3), TaskKind::Multilabel).unwrap();
        assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        assert!((a.hamming_loss - b.hamming_loss).abs() < 1e-12);
        assert!((a.balanced_accuracy_macro - b.balanced_accuracy_macro).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let res = evaluate(&[vec![1]], &[], &names(1), TaskKind::Binary);
        assert!(matches!(res, Err(Error::Dimension(_))));
    }

    #[test]
    fn table_is_stable() {
        let truths = vec![vec![1, 0], vec![0, 1]];
        let report = evaluate(&truths, &truths, &names(2), TaskKind::Multilabel).unwrap();
        let table = render_table(&report);
        let expected = "\
label                precision    recall        f1  accuracy
lab0                    1.0000    1.0000    1.0000    1.0000
lab1                    1.0000    1.0000    1.0000    1.0000
macro_f1=1.0000 balanced_accuracy=1.0000 hamming_loss=0.0000 hamming_complement=100.00 accuracy=1.0000
(* = zero denominator, score 0 by convention)
";
        assert_eq!(table, expected);
    }
}
