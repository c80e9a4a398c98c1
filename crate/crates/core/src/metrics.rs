//! Attack scoring: token-level success rate and span-exact PII recovery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::TokenSequence;

/// Half-open token ranges marking PII strings in a clean sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiAnnotation {
    pub seq_id: String,
    pub spans: Vec<(usize, usize)>,
}

impl PiiAnnotation {
    pub fn new(seq_id: impl Into<String>, spans: Vec<(usize, usize)>) -> Self {
        Self {
            seq_id: seq_id.into(),
            spans,
        }
    }

    /// Spans must satisfy `start < end <= len` and not overlap.
    pub fn validate(&self, len: usize) -> Result<()> {
        let mut spans = self.spans.clone();
        spans.sort_unstable();
        for &(s, e) in &spans {
            if s >= e || e > len {
                return Err(Error::invalid(format!(
                    "PII span [{s}, {e}) is invalid for a sequence of length {len}"
                )));
            }
        }
        if let Some(w) = spans.windows(2).find(|w| w[0].1 > w[1].0) {
            return Err(Error::invalid(format!(
                "PII spans [{}, {}) and [{}, {}) overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
        Ok(())
    }
}

fn check_lengths(decoded: &TokenSequence, truth: &TokenSequence) -> Result<()> {
    if decoded.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: decoded.len(),
        });
    }
    Ok(())
}

/// Percentage of positions where the decoded id equals the true id.
pub fn asr(decoded: &TokenSequence, truth: &TokenSequence) -> Result<f64> {
    check_lengths(decoded, truth)?;
    if truth.is_empty() {
        return Err(Error::invalid("cannot score an empty sequence"));
    }
    let hits = decoded.ids().iter().zip(truth.ids()).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Percentage of annotated spans decoded exactly. `None` when the annotation
/// has no spans, so the sequence can be left out of dataset means.
pub fn pii_recovery(decoded: &TokenSequence, truth: &TokenSequence, ann: &PiiAnnotation) -> Result<Option<f64>> {
    check_lengths(decoded, truth)?;
    ann.validate(truth.len())?;
    if ann.spans.is_empty() {
        return Ok(None);
    }
    let recovered = ann
        .spans
        .iter()
        .filter(|&&(s, e)| decoded.ids()[s..e] == truth.ids()[s..e])
        .count();
    Ok(Some(100.0 * recovered as f64 / ann.spans.len() as f64))
}

/// Unweighted mean over the values present; `None` when there are none.
pub fn dataset_mean<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
