//! Word error rate.

use crate::error::{Error, Result};
use crate::vocab::SILENCE;

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

fn strip_silence<S: AsRef<str>>(words: &[S]) -> Vec<&str> {
    words.iter().map(AsRef::as_ref).filter(|w| *w != SILENCE).collect()
}

/// Total edits and total reference words, silence tokens removed.
pub fn error_counts<S: AsRef<str>, T: AsRef<str>>(
    references: &[Vec<S>],
    hypotheses: &[Vec<T>],
) -> Result<(usize, usize)> {
    if references.len() != hypotheses.len() {
        return Err(Error::Invalid(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let mut edits = 0;
    let mut words = 0;
    for (r, h) in references.iter().zip(hypotheses) {
        let r = strip_silence(r);
        let h = strip_silence(h);
        edits += edit_distance(&r, &h);
        words += r.len();
    }
    if words == 0 {
        return Err(Error::Invalid("reference set has no words".into()));
    }
    Ok((edits, words))
}

/// Summed per-utterance edit distance over total reference words, in percent.
pub fn evaluate_wer<S: AsRef<str>, T: AsRef<str>>(references: &[Vec<S>], hypotheses: &[Vec<T>]) -> Result<f64> {
    let (edits, words) = error_counts(references, hypotheses)?;
    Ok(100.0 * edits as f64 / words as f64)
}

/// `1 - edits / reference length` over label sequences.
pub fn token_accuracy<T: PartialEq>(references: &[Vec<T>], hypotheses: &[Vec<T>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::Invalid("reference and hypothesis counts differ".into()));
    }
    let total: usize = references.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Invalid("references are empty".into()));
    }
    let edits: usize = references
        .iter()
        .zip(hypotheses)
        .map(|(r, h)| edit_distance(r, h))
        .sum();
    Ok(1.0 - edits as f64 / total as f64)
}
