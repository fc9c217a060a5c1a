use super::{OOV_UNIT, SEPARATOR};
use crate::error::{shape_err, Result};

/// Words (or units) with inclusive frame intervals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentedHypothesis {
    pub words: Vec<String>,
    pub intervals: Vec<(usize, usize)>,
}

impl SegmentedHypothesis {
    pub fn new(words: Vec<String>, intervals: Vec<(usize, usize)>) -> Result<Self> {
        if words.len() != intervals.len() {
            return shape_err(
                "segmented_hypothesis",
                format!("{} words with {} intervals", words.len(), intervals.len()),
            );
        }
        if let Some(&(s, e)) = intervals.iter().find(|(s, e)| s > e) {
            return shape_err("segmented_hypothesis", format!("interval [{s}, {e}] is reversed"));
        }
        if let Some(w) = intervals.windows(2).find(|w| w[1].0 <= w[0].1) {
            return shape_err(
                "segmented_hypothesis",
                format!("intervals {:?} and {:?} overlap or are out of order", w[0], w[1]),
            );
        }
        Ok(Self { words, intervals })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Frames shared by two inclusive intervals.
pub fn interval_overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    let start = a.0.max(b.0);
    let end = a.1.min(b.1);
    if end >= start {
        end - start + 1
    } else {
        0
    }
}

/// Groups letter units into words at `$`; each word spans from its first
/// unit's start to its last unit's end.
pub fn letter_words(letters: &SegmentedHypothesis) -> SegmentedHypothesis {
    let mut out = SegmentedHypothesis::default();
    let mut cur: Option<(String, (usize, usize))> = None;
    for (u, &(s, e)) in letters.words.iter().zip(&letters.intervals) {
        if u == SEPARATOR {
            if let Some((w, span)) = cur.take() {
                out.words.push(w);
                out.intervals.push(span);
            }
            continue;
        }
        match &mut cur {
            Some((w, span)) => {
                w.push_str(u);
                span.1 = e;
            }
            None => cur = Some((u.clone(), (s, e))),
        }
    }
    if let Some((w, span)) = cur {
        out.words.push(w);
        out.intervals.push(span);
    }
    out
}

/// Result of [`hybrid_replace_oov`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Replacement {
    pub words: Vec<String>,
    /// Positions whose OOV had no letter word to replace it.
    pub unresolved: Vec<usize>,
}

/// Replaces each OOV of the word hypothesis by the letter word overlapping
/// it most in time (ties go to the earlier letter word). Other words pass
/// through unchanged.
pub fn hybrid_replace_oov(word_hyp: &SegmentedHypothesis, letter_hyp: &SegmentedHypothesis) -> Replacement {
    let letters = letter_words(letter_hyp);
    let mut out = Replacement::default();
    for (i, (w, &span)) in word_hyp.words.iter().zip(&word_hyp.intervals).enumerate() {
        if w != OOV_UNIT {
            out.words.push(w.clone());
            continue;
        }
        let mut best: Option<(usize, usize)> = None;
        for (j, &lspan) in letters.intervals.iter().enumerate() {
            let ov = interval_overlap(span, lspan);
            if best.is_none_or(|(_, b)| ov > b) {
                best = Some((j, ov));
            }
        }
        match best {
            Some((j, _)) => out.words.push(letters.words[j].clone()),
            None => {
                out.words.push(String::new());
                out.unresolved.push(i);
            }
        }
    }
    out
}
