//! CTC loss, its gradient, a brute-force path enumeration oracle and greedy
//! decoding.
//!
//! The blank label is always index [`BLANK`]. All lattice arithmetic happens
//! in log space.

use crate::autodiff::{log_softmax, log_sum_exp, Tensor};
use crate::error::{Error, Result};

pub const BLANK: usize = 0;

/// Largest `K^T` that [`enumerate_paths_oracle`] will walk.
pub const ENUMERATION_GUARD: u64 = 1_000_000;

/// Label inventory: blank plus named tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    names: Vec<String>,
    blank: usize,
}

impl LabelSet {
    pub fn new(names: Vec<String>, blank: usize) -> Result<Self> {
        if blank >= names.len() {
            return Err(Error::Invalid(format!(
                "blank index {blank} outside {} labels",
                names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Invalid(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Self { names, blank })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Per-frame label log-probabilities, `frames x labels`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorLattice {
    log_probs: Tensor,
}

impl PosteriorLattice {
    /// Wraps a matrix whose rows are already normalized log-probabilities.
    pub fn new(log_probs: Tensor) -> Result<Self> {
        if log_probs.rank() != 2 {
            return Err(Error::Lattice(format!(
                "expected a matrix, got {:?}",
                log_probs.shape()
            )));
        }
        for t in 0..log_probs.rows() {
            let row = log_probs.row(t);
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Lattice(format!("frame {t} has invalid values")));
            }
            let lse = log_sum_exp(row);
            if lse.abs() > 1e-9 {
                return Err(Error::Lattice(format!("frame {t} log-sum-exp is {lse}, expected 0")));
            }
        }
        Ok(Self { log_probs })
    }

    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        if logits.rank() != 2 {
            return Err(Error::Lattice(format!("expected a matrix, got {:?}", logits.shape())));
        }
        Self::new(log_softmax(logits))
    }

    /// Builds a lattice from rows of plain probabilities.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows)?;
        Self::new(t.map(f64::ln))
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    pub fn labels(&self) -> usize {
        self.log_probs.cols()
    }

    pub fn log_probs(&self) -> &Tensor {
        &self.log_probs
    }

    pub fn into_log_probs(self) -> Tensor {
        self.log_probs
    }
}

/// Greedy decoding result: tokens and the inclusive frame interval of the
/// argmax run that produced each one.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub segments: Vec<(usize, usize)>,
}

/// Frames needed to align `target`: one per label plus a blank between each
/// pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Merges repeated labels, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in path {
        if Some(l) != prev && l != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

fn check_target(target: &[usize], labels: usize, frames: usize, blank: usize) -> Result<()> {
    for &l in target {
        if l == blank {
            return Err(Error::BlankInTarget(l));
        }
        if l >= labels {
            return Err(Error::LabelOutOfRange { label: l, labels });
        }
    }
    let needed = min_frames(target);
    if needed > frames {
        return Err(Error::NoValidAlignment { needed, frames });
    }
    Ok(())
}

struct ForwardBackward {
    log_likelihood: f64,
    /// Posterior occupancy per frame and label.
    occupancy: Vec<Vec<f64>>,
}

fn forward_backward(lp: &Tensor, target: &[usize], blank: usize) -> ForwardBackward {
    let (frames, labels) = (lp.rows(), lp.cols());
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    // skip transition s-2 -> s is allowed onto a label differing from the previous label
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![vec![neg; s_len]; frames];
    alpha[0][0] = lp.at(0, ext[0]);
    if s_len > 1 {
        alpha[0][1] = lp.at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut terms = [alpha[t - 1][s], neg, neg];
            if s >= 1 {
                terms[1] = alpha[t - 1][s - 1];
            }
            if can_skip(s) {
                terms[2] = alpha[t - 1][s - 2];
            }
            alpha[t][s] = log_sum_exp(&terms) + lp.at(t, ext[s]);
        }
    }

    // beta excludes the emission at its own frame
    let mut beta = vec![vec![neg; s_len]; frames];
    beta[frames - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[frames - 1][s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut terms = [neg, neg, neg];
            terms[0] = beta[t + 1][s] + lp.at(t + 1, ext[s]);
            if s + 1 < s_len {
                terms[1] = beta[t + 1][s + 1] + lp.at(t + 1, ext[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                terms[2] = beta[t + 1][s + 2] + lp.at(t + 1, ext[s + 2]);
            }
            beta[t][s] = log_sum_exp(&terms);
        }
    }

    let last = &alpha[frames - 1];
    let log_likelihood = if s_len > 1 {
        log_sum_exp(&[last[s_len - 1], last[s_len - 2]])
    } else {
        last[0]
    };

    let mut occupancy = vec![vec![0.0; labels]; frames];
    for t in 0..frames {
        for s in 0..s_len {
            let v = alpha[t][s] + beta[t][s] - log_likelihood;
            if v > neg {
                occupancy[t][ext[s]] += v.exp();
            }
        }
    }
    ForwardBackward {
        log_likelihood,
        occupancy,
    }
}

/// `-ln p(target | x)` summed over every alignment, via forward-backward.
pub fn ctc_loss(lattice: &PosteriorLattice, target: &[usize]) -> Result<f64> {
    check_target(target, lattice.labels(), lattice.frames(), BLANK)?;
    let fb = forward_backward(&lattice.log_probs, target, BLANK);
    Ok((-fb.log_likelihood).max(0.0))
}

/// Gradient of [`ctc_loss`] with respect to the pre-softmax logits that
/// produced `lattice`: `softmax - occupancy` per frame.
pub fn ctc_grad(lattice: &PosteriorLattice, target: &[usize]) -> Result<Tensor> {
    check_target(target, lattice.labels(), lattice.frames(), BLANK)?;
    let fb = forward_backward(&lattice.log_probs, target, BLANK);
    Ok(logit_grad(&lattice.log_probs, &fb.occupancy))
}

fn logit_grad(lp: &Tensor, occupancy: &[Vec<f64>]) -> Tensor {
    let mut g = lp.map(f64::exp);
    for (t, occ) in occupancy.iter().enumerate() {
        for (v, o) in g.row_mut(t).iter_mut().zip(occ) {
            *v -= o;
        }
    }
    g
}

/// Loss and logit gradient from raw logits; used by the graph primitive.
pub(crate) fn loss_and_logit_grad(logits: &Tensor, target: &[usize], blank: usize) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::Shape {
            op: "ctc_loss",
            detail: format!("logits must be [frames, labels], got {:?}", logits.shape()),
        });
    }
    if blank >= logits.cols() {
        return Err(Error::LabelOutOfRange {
            label: blank,
            labels: logits.cols(),
        });
    }
    check_target(target, logits.cols(), logits.rows(), blank)?;
    let lp = log_softmax(logits);
    let fb = forward_backward(&lp, target, blank);
    Ok(((-fb.log_likelihood).max(0.0), logit_grad(&lp, &fb.occupancy)))
}

/// Exhaustive reference: walks all `K^T` frame labelings, keeps those that
/// collapse to `target` and sums their probabilities. Returns `+inf` when
/// no labeling collapses to `target`.
pub fn enumerate_paths_oracle(lattice: &PosteriorLattice, target: &[usize]) -> Result<f64> {
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let total = (labels as u64)
        .checked_pow(frames as u32)
        .filter(|&n| n <= ENUMERATION_GUARD)
        .ok_or(Error::SearchSpace {
            labels,
            frames,
            guard: ENUMERATION_GUARD,
        })?;
    let lp = lattice.log_probs();
    let mut path = vec![0usize; frames];
    let mut prob = 0.0;
    for _ in 0..total {
        if collapse(&path, BLANK) == target {
            let log_p: f64 = path.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum();
            prob += log_p.exp();
        }
        for slot in path.iter_mut().rev() {
            *slot += 1;
            if *slot < labels {
                break;
            }
            *slot = 0;
        }
    }
    Ok(if prob > 0.0 { -prob.ln() } else { f64::INFINITY })
}

/// Per-frame argmax (lowest index wins ties), repeats merged, blanks removed.
pub fn greedy_decode(lattice: &PosteriorLattice) -> Hypothesis {
    let lp = lattice.log_probs();
    let best: Vec<usize> = (0..lattice.frames())
        .map(|t| {
            let row = lp.row(t);
            let mut arg = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = k;
                }
            }
            arg
        })
        .collect();

    let mut hyp = Hypothesis::default();
    let mut t = 0;
    while t < best.len() {
        let label = best[t];
        let start = t;
        while t + 1 < best.len() && best[t + 1] == label {
            t += 1;
        }
        if label != BLANK {
            hyp.tokens.push(label);
            hyp.segments.push((start, t));
        }
        t += 1;
    }
    hyp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(rows: &[&[f64]]) -> PosteriorLattice {
        PosteriorLattice::from_probs(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let l = lattice(&[&[0.5, 0.5]]);
        let loss = ctc_loss(&l, &[1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert!((enumerate_paths_oracle(&l, &[1]).unwrap() - loss).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_paths() {
        let l = lattice(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let loss = ctc_loss(&l, &[1]).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separating_blank() {
        let l = lattice(&[&[0.5, 0.5]]);
        assert!(matches!(
            ctc_loss(&l, &[1, 1]),
            Err(Error::NoValidAlignment { needed: 3, frames: 1 })
        ));
        assert!(matches!(ctc_loss(&l, &[0]), Err(Error::BlankInTarget(0))));
        assert_eq!(enumerate_paths_oracle(&l, &[1, 1]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_target_is_all_blank() {
        let l = lattice(&[&[0.25, 0.75], &[0.5, 0.5]]);
        let loss = ctc_loss(&l, &[]).unwrap();
        assert!((loss + (0.125f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_single_frame_is_softmax_minus_onehot() {
        let logits = Tensor::matrix(1, 3, vec![0.2, -1.0, 0.7]).unwrap();
        let l = PosteriorLattice::from_logits(&logits).unwrap();
        let g = ctc_grad(&l, &[2]).unwrap();
        let p = crate::autodiff::softmax(&logits, 1);
        let expected = [p.data()[0], p.data()[1], p.data()[2] - 1.0];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::matrix(
            4,
            3,
            vec![0.1, 0.4, -0.3, 1.2, 0.0, 0.5, -0.7, 0.2, 0.9, 0.3, 0.3, -1.1],
        )
        .unwrap();
        let l = PosteriorLattice::from_logits(&logits).unwrap();
        let g = ctc_grad(&l, &[1, 2]).unwrap();
        for t in 0..4 {
            assert!(g.row(t).iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn lattice_rejects_unnormalized_rows() {
        let t = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(PosteriorLattice::new(t).is_err());
    }

    #[test]
    fn oracle_guard() {
        let rows = vec![vec![0.5, 0.5]; 21];
        let l = PosteriorLattice::from_probs(&rows).unwrap();
        assert!(matches!(
            enumerate_paths_oracle(&l, &[1]),
            Err(Error::SearchSpace { .. })
        ));
    }

    fn onehot_lattice(best: &[usize], labels: usize) -> PosteriorLattice {
        let rows: Vec<Vec<f64>> = best
            .iter()
            .map(|&b| {
                (0..labels)
                    .map(|k| if k == b { 0.9 } else { 0.1 / (labels - 1) as f64 })
                    .collect()
            })
            .collect();
        PosteriorLattice::from_probs(&rows).unwrap()
    }

    #[test]
    fn greedy_keeps_repeat_split_by_blank() {
        let h = greedy_decode(&onehot_lattice(&[1, 1, 0, 1], 3));
        assert_eq!(h.tokens, vec![1, 1]);
        assert_eq!(h.segments, vec![(0, 1), (3, 3)]);
    }

    #[test]
    fn greedy_all_blank_is_empty() {
        let h = greedy_decode(&onehot_lattice(&[0, 0, 0], 3));
        assert!(h.tokens.is_empty() && h.segments.is_empty());
    }

    #[test]
    fn greedy_segments_follow_runs() {
        let h = greedy_decode(&onehot_lattice(&[0, 2, 2, 0, 0, 3], 4));
        assert_eq!(h.tokens, vec![2, 3]);
        assert_eq!(h.segments, vec![(1, 2), (5, 5)]);
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        let l = lattice(&[&[0.25, 0.375, 0.375]]);
        assert_eq!(greedy_decode(&l).tokens, vec![1]);
    }

    #[test]
    fn label_set_validation() {
        assert!(LabelSet::new(vec!["<b>".into(), "a".into()], 0).is_ok());
        assert!(LabelSet::new(vec!["a".into(), "a".into()], 0).is_err());
        assert!(LabelSet::new(vec!["a".into()], 1).is_err());
    }
}
