//! Mini-batch SGD with momentum and global-norm clipping over CTC losses.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::RunConfig;
use super::model::{Model, LETTER_PREFIX};
use crate::autodiff::{Session, Tensor};
use crate::ctc::min_frames;
use crate::error::{Error, Result};
use crate::params::Parameterized;

/// One training utterance with its label targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Tensor,
    pub target: Vec<usize>,
    /// Letter-branch target of hybrid runs.
    pub letter_target: Option<Vec<usize>>,
}

/// Which losses drive the update and which tensors move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Word (or unit) loss; every tensor except the letter branch trains.
    Main,
    /// Letter loss; only the letter branch trains, the encoder layers it
    /// reads from stay frozen.
    Letters,
    /// Letter plus word loss; the letter branch, the top encoder layer and
    /// the word head train.
    LettersAndHead,
}

impl Stage {
    fn trains(self, model: &Model, name: &str) -> bool {
        let letters = name.starts_with(LETTER_PREFIX);
        match self {
            Stage::Main => !letters,
            Stage::Letters => letters,
            Stage::LettersAndHead => letters || !model.is_bottom_encoder_tensor(name),
        }
    }

    fn uses_words(self) -> bool {
        matches!(self, Stage::Main | Stage::LettersAndHead)
    }

    fn uses_letters(self) -> bool {
        matches!(self, Stage::Letters | Stage::LettersAndHead)
    }
}

/// Optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
}

impl Optimizer {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            clip_norm: cfg.clip_norm,
            batch_size: cfg.batch_size,
        }
    }
}

/// Loss and per-tensor gradients of one example, in visit order.
struct ExampleGrad {
    loss: f64,
    grads: Vec<Option<Tensor>>,
}

fn example_grad(model: &Model, ex: &Example, stage: Stage, trainable: &[bool]) -> Result<ExampleGrad> {
    let mut sess = Session::new();
    let out = model.forward(&mut sess, &ex.features, stage.uses_words(), stage.uses_letters())?;
    let mut loss = None;
    if let Some(logits) = out.words {
        loss = Some(sess.ctc_loss(logits, &ex.target, 0)?);
    }
    if let Some(logits) = out.letters {
        let target = ex
            .letter_target
            .as_deref()
            .ok_or_else(|| Error::Config("letter stage needs letter targets".into()))?;
        let l = sess.ctc_loss(logits, target, 0)?;
        loss = Some(match loss {
            Some(w) => sess.add(w, l)?,
            None => l,
        });
    }
    let loss = loss.ok_or_else(|| Error::Config("stage computes no loss".into()))?;
    let value = sess.value(loss).item();
    if !value.is_finite() {
        return Ok(ExampleGrad {
            loss: value,
            grads: Vec::new(),
        });
    }
    let g = sess.backward(loss)?;
    let mut grads = Vec::with_capacity(trainable.len());
    let mut i = 0;
    model.visit("", &mut |_, t| {
        grads.push(if trainable[i] {
            sess.bound(t).and_then(|v| g.get_ref(v).cloned())
        } else {
            None
        });
        i += 1;
    });
    Ok(ExampleGrad { loss: value, grads })
}

/// Drops examples whose targets cannot fit their frame count.
pub fn feasible_examples<'a>(model: &Model, examples: &'a [Example], stage: Stage) -> Vec<&'a Example> {
    let mut kept = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let frames = model.stack.output_frames(ex.features.rows());
        let mut needed = 0;
        if stage.uses_words() {
            needed = min_frames(&ex.target);
        }
        if stage.uses_letters() {
            needed = needed.max(ex.letter_target.as_deref().map_or(usize::MAX, min_frames));
        }
        if needed > frames {
            log::warn!("skipping utterance {i}: target needs {needed} frames, only {frames} available");
        } else {
            kept.push(ex);
        }
    }
    kept
}

/// Per-example gradients of a batch, computed on scoped threads and
/// returned in batch order.
fn batch_grads(model: &Model, batch: &[&Example], stage: Stage, trainable: &[bool]) -> Vec<Result<ExampleGrad>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(batch.len());
    if workers <= 1 {
        return batch
            .iter()
            .map(|ex| example_grad(model, ex, stage, trainable))
            .collect();
    }
    let chunk = batch.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|ex| example_grad(model, ex, stage, trainable))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    })
}

/// Training state that persists across epochs.
pub struct Trainer {
    pub optimizer: Optimizer,
    pub stage: Stage,
    velocity: Vec<Option<Tensor>>,
    trainable: Vec<bool>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: &Model, optimizer: Optimizer, stage: Stage) -> Self {
        let mut trainable = Vec::new();
        model.visit("", &mut |name, _| trainable.push(stage.trains(model, name)));
        let velocity = vec![None; trainable.len()];
        Self {
            optimizer,
            stage,
            velocity,
            trainable,
            epoch: 0,
        }
    }

    /// Whether the tensor at visit position `i` is updated.
    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    /// One pass over `examples` in a freshly shuffled order. Returns the
    /// mean per-utterance loss.
    pub fn epoch<R: Rng + ?Sized>(&mut self, model: &mut Model, examples: &[&Example], rng: &mut R) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Dataset("no trainable utterances".into()));
        }
        self.epoch += 1;
        let mut order: Vec<&Example> = examples.to_vec();
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(self.optimizer.batch_size.max(1)) {
            let results = batch_grads(model, batch, self.stage, &self.trainable);
            let mut sum: Vec<Option<Tensor>> = vec![None; self.trainable.len()];
            for r in results {
                let ex = match r {
                    Ok(ex) => ex,
                    Err(Error::Domain { op, detail }) => {
                        return Err(Error::Diverged {
                            epoch: self.epoch,
                            detail: format!("{op}: {detail}"),
                        })
                    }
                    Err(e) => return Err(e),
                };
                if !ex.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch: self.epoch,
                        detail: format!("loss became {}", ex.loss),
                    });
                }
                total += ex.loss;
                for (acc, g) in sum.iter_mut().zip(ex.grads) {
                    let Some(g) = g else { continue };
                    match acc {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                        None => *acc = Some(g),
                    }
                }
            }
            self.apply(model, sum, batch.len())?;
        }
        Ok(total / examples.len() as f64)
    }

    fn apply(&mut self, model: &mut Model, mut grads: Vec<Option<Tensor>>, batch: usize) -> Result<()> {
        let inv = 1.0 / batch as f64;
        let mut sq = 0.0;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= inv;
                sq += *x * *x;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                detail: format!("gradient norm became {norm}"),
            });
        }
        let clip = if norm > self.optimizer.clip_norm {
            self.optimizer.clip_norm / norm
        } else {
            1.0
        };
        let (lr, mu) = (self.optimizer.learning_rate, self.optimizer.momentum);
        let mut i = 0;
        let velocity = &mut self.velocity;
        model.visit_mut("", &mut |_, t| {
            if let Some(g) = &grads[i] {
                let v = velocity[i].get_or_insert_with(|| Tensor::zeros(t.shape()));
                for ((p, vj), gj) in t.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vj = mu * *vj + clip * gj;
                    *p -= lr * *vj;
                }
            }
            i += 1;
        });
        Ok(())
    }
}

/// Mean CTC loss of the word (or unit) output over the feasible examples,
/// with the parameters held fixed.
pub fn dataset_loss(model: &Model, examples: &[Example]) -> Result<f64> {
    let kept = feasible_examples(model, examples, Stage::Main);
    if kept.is_empty() {
        return Err(Error::Dataset("no feasible utterances".into()));
    }
    let mut total = 0.0;
    for ex in &kept {
        let mut sess = Session::new();
        let out = model.forward(&mut sess, &ex.features, true, false)?;
        let loss = sess.ctc_loss(out.words.expect("requested"), &ex.target, 0)?;
        total += sess.value(loss).item();
    }
    Ok(total / kept.len() as f64)
}

/// Trains for `epochs` epochs, calling `on_epoch(epoch, mean_loss, model)`
/// after each; returning `false` stops early. Returns the per-epoch losses.
pub fn train_stage<R: Rng + ?Sized>(
    model: &mut Model,
    optimizer: Optimizer,
    examples: &[Example],
    stage: Stage,
    epochs: usize,
    rng: &mut R,
    on_epoch: &mut dyn FnMut(usize, f64, &Model) -> bool,
) -> Result<Vec<f64>> {
    let kept = feasible_examples(model, examples, stage);
    if kept.len() < examples.len() {
        log::warn!(
            "{} of {} utterances skipped as infeasible",
            examples.len() - kept.len(),
            examples.len()
        );
    }
    let mut trainer = Trainer::new(model, optimizer, stage);
    let mut losses = Vec::with_capacity(epochs);
    for e in 1..=epochs {
        let loss = trainer.epoch(model, &kept, rng)?;
        log::info!("stage {stage:?} epoch {e}: mean loss {loss:.6}");
        losses.push(loss);
        if !on_epoch(e, loss, model) {
            break;
        }
    }
    Ok(losses)
}
