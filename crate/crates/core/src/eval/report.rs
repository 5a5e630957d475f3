use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{auroc, f1_at, f1_sweep, roc_points, RocPoint};
use crate::error::EvalError;
use crate::pipeline::{score_sequence, LabeledSequence, Pooling};
use crate::recurrent::RecurrentModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSequence {
    pub sequence_id: String,
    pub score: f64,
    pub label: u8,
    /// Every scored step came from an underfull window.
    pub warm_up_only: bool,
}

/// Scores sequences in parallel; output is sorted by sequence_id.
pub fn score_sequences(
    model: &RecurrentModel,
    seqs: &[LabeledSequence],
    pooling: Pooling,
) -> Result<Vec<ScoredSequence>, EvalError> {
    let mut out = seqs
        .par_iter()
        .map(|s| {
            let score = score_sequence(model, &s.steps, pooling)?.ok_or_else(|| {
                EvalError::InvalidArgument(format!("{}: no feature steps", s.sequence_id))
            })?;
            Ok(ScoredSequence {
                sequence_id: s.sequence_id.clone(),
                score,
                label: u8::from(s.label),
                warm_up_only: s.steps.iter().all(|st| st.warm_up),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    out.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
    Ok(out)
}

pub(crate) fn scores_and_labels(s: &[ScoredSequence]) -> (Vec<f64>, Vec<bool>) {
    (
        s.iter().map(|x| x.score).collect(),
        s.iter().map(|x| x.label == 1).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub sequences: usize,
    pub feature_seconds: f64,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub f1: f64,
    pub f1_threshold: f64,
    /// Split on which the F1 threshold was chosen.
    pub threshold_split: String,
    pub pooling: Pooling,
    pub roc_points: Vec<RocPoint>,
    pub per_sequence: Vec<ScoredSequence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeStats>,
}

/// AUROC and ROC on `test`; F1 on `test` at the threshold that maximizes
/// F1 on `val`. Without a two-class validation split the threshold is
/// chosen on `test` and the report says so.
pub fn evaluate(
    model: &RecurrentModel,
    val: &[LabeledSequence],
    test: &[LabeledSequence],
    pooling: Pooling,
) -> Result<EvalReport, EvalError> {
    let scored = score_sequences(model, test, pooling)?;
    let (s, l) = scores_and_labels(&scored);
    let val_scored = score_sequences(model, val, pooling)?;
    let (vs, vl) = scores_and_labels(&val_scored);
    let (threshold, split) = match f1_sweep(&vs, &vl) {
        Ok((_, thr)) => (thr, "val"),
        Err(EvalError::SingleClass) => (f1_sweep(&s, &l)?.1, "test"),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        auroc: auroc(&s, &l)?,
        f1: f1_at(&s, &l, threshold)?,
        f1_threshold: threshold,
        threshold_split: split.into(),
        pooling,
        roc_points: roc_points(&s, &l)?,
        per_sequence: scored,
        runtime: None,
    })
}

impl EvalReport {
    pub fn write_scores_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sequence_id,score,label,warm_up_only")?;
        for s in &self.per_sequence {
            writeln!(
                w,
                "{},{},{},{}",
                s.sequence_id,
                s.score,
                s.label,
                u8::from(s.warm_up_only)
            )?;
        }
        w.flush()
    }

    pub fn write_roc_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fpr,tpr,threshold")?;
        for p in &self.roc_points {
            writeln!(w, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
        }
        w.flush()
    }

    /// Summary without per-sequence rows or timing.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "auroc": self.auroc,
            "f1": self.f1,
            "f1_threshold": self.f1_threshold,
            "threshold_split": self.threshold_split,
            "pooling": self.pooling,
            "sequences": self.per_sequence.len(),
        })
    }
}
