//! Synthetic data, training, decoding, WER and checkpoints, composed into
//! whole runs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod model;
pub mod train;
pub mod wer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RawCheckpoint};
pub use config::{DecodeMode, HeadKind, RunConfig};
pub use data::{generate, generate_dataset, read_dataset, write_dataset, SyntheticSpec, Utterance};
pub use decode::{decode_utterance, decode_with};
pub use model::Model;
pub use train::{dataset_loss, train_stage, Example, Optimizer, Stage};
pub use wer::{edit_distance, evaluate_wer, token_accuracy};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::{train_wordpieces, Scheme, TokenVocabulary};

/// Output inventory for the configured scheme and, in hybrid mode, the
/// single-letter inventory of the letter branch.
pub fn build_vocabularies<S: AsRef<str>>(
    cfg: &RunConfig,
    corpus: &[Vec<S>],
) -> Result<(TokenVocabulary, Option<TokenVocabulary>)> {
    let vocab = match cfg.scheme {
        Scheme::Wordpiece => TokenVocabulary::from_wordpieces(train_wordpieces(corpus, cfg.wordpiece_size)?),
        s => TokenVocabulary::build(corpus, s, cfg.min_count)?,
    };
    let letters = match cfg.mode {
        DecodeMode::Hybrid => Some(TokenVocabulary::build(corpus, Scheme::Letters(1), cfg.min_count)?),
        _ => None,
    };
    Ok((vocab, letters))
}

/// Label targets for each utterance.
pub fn make_examples(
    vocab: &TokenVocabulary,
    letter_vocab: Option<&TokenVocabulary>,
    utterances: &[Utterance],
) -> Result<Vec<Example>> {
    utterances
        .iter()
        .map(|u| {
            let target = vocab.ids(&vocab.encode_sentence(&u.words)?)?;
            let letter_target = letter_vocab.map(|l| l.ids(&l.encode_sentence(&u.words)?)).transpose()?;
            Ok(Example {
                features: u.features.clone(),
                target,
                letter_target,
            })
        })
        .collect()
}

/// A finished run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
    /// Losses of the letter-branch stage in hybrid runs.
    pub letter_losses: Vec<f64>,
}

/// Builds vocabularies and a model from `cfg`, then trains it on `train`.
/// Hybrid runs add a second stage that trains the letter branch on top of
/// the frozen bottom layers. `on_epoch(stage, epoch, loss, model)` may stop
/// a stage early by returning `false`.
pub fn train_run(
    cfg: &RunConfig,
    train: &[Utterance],
    on_epoch: &mut dyn FnMut(Stage, usize, f64, &Model) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Dataset("empty training set".into()))?;
    let dim = first.features.cols();
    if let Some(u) = train
        .iter()
        .find(|u| u.features.rank() != 2 || u.features.cols() != dim)
    {
        return Err(Error::Dataset(format!(
            "feature shape {:?} differs from width {dim}",
            u.features.shape()
        )));
    }
    let corpus: Vec<Vec<String>> = train.iter().map(|u| u.words.clone()).collect();
    let (vocab, letter_vocab) = build_vocabularies(cfg, &corpus)?;
    let examples = make_examples(&vocab, letter_vocab.as_ref(), train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(
        cfg,
        dim,
        vocab.len(),
        letter_vocab.as_ref().map(TokenVocabulary::len),
        &mut rng,
    )?;
    log::info!(
        "training {} utterances, {} output units, {} parameters",
        examples.len(),
        vocab.len(),
        parameter_count(&model)
    );
    let opt = Optimizer::from_config(cfg);
    let losses = train_stage(
        &mut model,
        opt.clone(),
        &examples,
        Stage::Main,
        cfg.epochs,
        &mut rng,
        &mut |e, l, m| on_epoch(Stage::Main, e, l, m),
    )?;
    let mut letter_losses = Vec::new();
    if model.letters.is_some() {
        let stage = if cfg.tune_word_head {
            Stage::LettersAndHead
        } else {
            Stage::Letters
        };
        letter_losses = train_stage(
            &mut model,
            opt,
            &examples,
            stage,
            cfg.letter_epochs,
            &mut rng,
            &mut |e, l, m| on_epoch(stage, e, l, m),
        )?;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            vocab,
            letter_vocab,
            model,
        },
        losses,
        letter_losses,
    })
}

pub fn parameter_count(model: &Model) -> usize {
    use crate::params::Parameterized;
    let mut n = 0;
    model.visit("", &mut |_, t| n += t.len());
    n
}

/// Decoded word sequences for `utterances`.
pub fn decode_all(ckpt: &Checkpoint, utterances: &[Utterance], mode: DecodeMode) -> Result<Vec<Vec<String>>> {
    utterances
        .iter()
        .map(|u| decode_utterance(ckpt, &u.features, mode))
        .collect()
}

/// WER of the checkpoint over `utterances`, in percent.
pub fn evaluate(ckpt: &Checkpoint, utterances: &[Utterance], mode: DecodeMode) -> Result<f64> {
    let hyps = decode_all(ckpt, utterances, mode)?;
    let refs: Vec<Vec<String>> = utterances.iter().map(|u| u.words.clone()).collect();
    evaluate_wer(&refs, &hyps)
}
