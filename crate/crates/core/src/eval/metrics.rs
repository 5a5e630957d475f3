use serde::Serialize;

use crate::error::EvalError;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// P(s⁺ > s⁻) + ½ P(s⁺ = s⁻), from midrank sums.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean. Twice the midrank is an
        // integer, so the sum stays exact.
        let twice_mid = (i + j + 2) as f64;
        let pos_in_tie = idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    let u = rank_sum / 2.0 - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores ≥ threshold are called positive. The (0, 0) anchor uses +∞.
    pub threshold: f64,
}

/// ROC points for every distinct threshold, from (0, 0) to (1, 1).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let thr = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == thr {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: thr,
        });
    }
    Ok(out)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// F1 of the rule `score ≥ threshold`.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1(tp, fp, fn_))
}

/// Best F1 over all distinct-score thresholds. Among equal F1 values the
/// highest threshold wins.
pub fn f1_sweep(scores: &[f64], labels: &[bool]) -> Result<(f64, f64), EvalError> {
    let (pos, _) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut i = 0;
    while i < idx.len() {
        let thr = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == thr {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f = f1(tp, fp, pos - tp);
        if f > best.0 {
            best = (f, thr);
        }
    }
    Ok(best)
}
