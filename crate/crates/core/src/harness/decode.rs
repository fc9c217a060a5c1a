//! Greedy decoding of a trained model into words.

use super::checkpoint::Checkpoint;
use super::config::DecodeMode;
use super::model::Model;
use crate::autodiff::Tensor;
use crate::ctc::{greedy_decode, Hypothesis, PosteriorLattice};
use crate::error::{Error, Result};
use crate::vocab::{hybrid_replace_oov, merge_mixed_tokens, Scheme, SegmentedHypothesis, TokenVocabulary};

fn greedy(logits: &Tensor) -> Result<Hypothesis> {
    Ok(greedy_decode(&PosteriorLattice::from_logits(logits)?))
}

fn segmented(hyp: &Hypothesis, vocab: &TokenVocabulary) -> Result<SegmentedHypothesis> {
    SegmentedHypothesis::new(vocab.names(&hyp.tokens)?, hyp.segments.clone())
}

/// Decodes `features` with `model` under `mode`.
pub fn decode_with(
    model: &Model,
    vocab: &TokenVocabulary,
    letter_vocab: Option<&TokenVocabulary>,
    features: &Tensor,
    mode: DecodeMode,
) -> Result<Vec<String>> {
    if !mode.accepts(vocab.scheme()) {
        return Err(Error::Config(format!(
            "mode {} cannot decode a {} vocabulary",
            mode.as_str(),
            vocab.scheme()
        )));
    }
    match mode {
        DecodeMode::Word => {
            let hyp = greedy(&model.word_logits(features)?)?;
            vocab.names(&hyp.tokens)
        }
        DecodeMode::Letters => {
            let hyp = greedy(&model.word_logits(features)?)?;
            Ok(merge_mixed_tokens(&vocab.names(&hyp.tokens)?))
        }
        DecodeMode::Mixed => {
            let hyp = greedy(&model.word_logits(features)?)?;
            Ok(vocab.words_from_units(&vocab.names(&hyp.tokens)?))
        }
        DecodeMode::Hybrid => {
            let letters = letter_vocab
                .filter(|l| l.scheme() == Scheme::Letters(1))
                .ok_or_else(|| Error::Config("hybrid decoding needs a single-letter vocabulary".into()))?;
            let words = segmented(&greedy(&model.word_logits(features)?)?, vocab)?;
            let spelled = segmented(&greedy(&model.letter_logits(features)?)?, letters)?;
            let r = hybrid_replace_oov(&words, &spelled);
            if !r.unresolved.is_empty() {
                log::warn!("{} OOV tokens had no letter word to replace them", r.unresolved.len());
            }
            Ok(r.words.into_iter().filter(|w| !w.is_empty()).collect())
        }
    }
}

/// Decodes `features` with the checkpoint's model, greedy per frame.
pub fn decode_utterance(ckpt: &Checkpoint, features: &Tensor, mode: DecodeMode) -> Result<Vec<String>> {
    decode_with(&ckpt.model, &ckpt.vocab, ckpt.letter_vocab.as_ref(), features, mode)
}
