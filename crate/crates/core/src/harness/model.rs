//! Encoder plus output head, and the optional letter branch of hybrid runs.

use rand::Rng;

use super::config::{HeadKind, RunConfig};
use crate::attention::{AttentionCtc, SelfAttentionCtc};
use crate::autodiff::{Session, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{join, Linear, Parameterized};
use crate::rnn::{run_layer, stack_and_skip, LayerParams, LstmParams, StackConfig, StackParams};

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Plain(Linear),
    Attention(AttentionCtc),
    SelfAttention(SelfAttentionCtc),
}

impl Head {
    pub fn forward(&self, sess: &mut Session, hidden: Var) -> Result<Var> {
        match self {
            Head::Plain(l) => l.apply(sess, hidden),
            Head::Attention(a) => a.forward(sess, hidden),
            Head::SelfAttention(s) => s.forward(sess, hidden),
        }
    }
}

impl Parameterized for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            Head::Plain(l) => l.visit(prefix, f),
            Head::Attention(a) => a.visit(prefix, f),
            Head::SelfAttention(s) => s.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Head::Plain(l) => l.visit_mut(prefix, f),
            Head::Attention(a) => a.visit_mut(prefix, f),
            Head::SelfAttention(s) => s.visit_mut(prefix, f),
        }
    }
}

/// Extra LSTM layer and softmax on top of the bottom `L-1` encoder layers.
#[derive(Clone, Debug, PartialEq)]
pub struct LetterBranch {
    pub layer: LayerParams,
    pub output: Linear,
}

impl Parameterized for LetterBranch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.layer.visit(&join(prefix, "layer"), f);
        self.output.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.layer.visit_mut(&join(prefix, "layer"), f);
        self.output.visit_mut(&join(prefix, "out"), f);
    }
}

pub const ENCODER_PREFIX: &str = "enc";
pub const HEAD_PREFIX: &str = "head";
pub const LETTER_PREFIX: &str = "letters";

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub stack: StackConfig,
    pub encoder: StackParams,
    pub head: Head,
    pub letters: Option<LetterBranch>,
}

/// Logits of one forward pass.
pub struct ModelOutput {
    pub words: Option<Var>,
    pub letters: Option<Var>,
}

impl Model {
    /// `feature_dim` is the raw per-frame width; `letter_labels` adds a
    /// letter branch.
    pub fn new<R: Rng + ?Sized>(
        cfg: &RunConfig,
        feature_dim: usize,
        labels: usize,
        letter_labels: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let stack = cfg.stack.clone();
        let encoder = StackParams::new(&stack, feature_dim * stack.frame_stack, rng)?;
        let hidden = stack.projection_dim;
        let head = match cfg.head {
            HeadKind::Plain => Head::Plain(Linear::new(hidden, labels, rng)),
            HeadKind::Attention => Head::Attention(AttentionCtc::new(cfg.attention.clone(), hidden, labels, rng)?),
            HeadKind::SelfAttention => {
                Head::SelfAttention(SelfAttentionCtc::new(cfg.self_attention.clone(), hidden, labels, rng)?)
            }
        };
        let letters = letter_labels.map(|k| {
            let input = Self::branch_input_width(&stack, feature_dim);
            let forward = LstmParams::new(input, stack.cells, rng);
            let backward = stack.bidirectional.then(|| LstmParams::new(input, stack.cells, rng));
            LetterBranch {
                layer: LayerParams { forward, backward },
                output: Linear::new(stack.layer_width(), k, rng),
            }
        });
        Ok(Self {
            stack,
            encoder,
            head,
            letters,
        })
    }

    /// Width of the sequence leaving the bottom `L-1` layers.
    fn branch_input_width(stack: &StackConfig, feature_dim: usize) -> usize {
        if stack.layers == 1 {
            feature_dim * stack.frame_stack
        } else if stack.project_every_layer {
            stack.projection_dim
        } else {
            stack.layer_width()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim() / self.stack.frame_stack
    }

    /// Runs the first `layers` encoder layers, returning the sequence fed to
    /// layer `layers`.
    fn encode(&self, sess: &mut Session, input: Var, layers: usize) -> Result<Var> {
        let mut x = input;
        let mut proj = self.encoder.projections.iter();
        for (l, layer) in self.encoder.layers.iter().enumerate().take(layers) {
            x = run_layer(sess, x, layer)?;
            if self.stack.project_every_layer || l + 1 == self.stack.layers {
                let p = proj
                    .next()
                    .ok_or_else(|| Error::Config("missing projection parameters".into()))?;
                x = p.apply(sess, x)?;
            }
        }
        Ok(x)
    }

    /// Forward pass producing the requested logits, each `[frames', labels]`.
    pub fn forward(&self, sess: &mut Session, features: &Tensor, words: bool, letters: bool) -> Result<ModelOutput> {
        if features.rank() != 2 || features.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "model",
                detail: format!("features {:?} for input width {}", features.shape(), self.input_dim()),
            });
        }
        let stacked = stack_and_skip(features, self.stack.frame_stack, self.stack.frame_skip)?;
        let input = sess.leaf(stacked);
        let letters = match (&self.letters, letters) {
            (Some(branch), true) => Some(branch),
            (None, true) => return Err(Error::Config("model has no letter branch".into())),
            _ => None,
        };
        let bottom = self.stack.layers - 1;
        let (lower, word_logits) = if words {
            let lower = self.encode(sess, input, bottom)?;
            let top = self.encoder.layers[bottom..]
                .iter()
                .try_fold(lower, |x, layer| run_layer(sess, x, layer))?;
            let hidden = match self.encoder.projections.last() {
                Some(p) => p.apply(sess, top)?,
                None => return Err(Error::Config("missing projection parameters".into())),
            };
            (lower, Some(self.head.forward(sess, hidden)?))
        } else {
            (self.encode(sess, input, bottom)?, None)
        };
        let letter_logits = match letters {
            Some(branch) => {
                let h = run_layer(sess, lower, &branch.layer)?;
                Some(branch.output.apply(sess, h)?)
            }
            None => None,
        };
        Ok(ModelOutput {
            words: word_logits,
            letters: letter_logits,
        })
    }

    /// Word logits as a plain tensor.
    pub fn word_logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut sess = Session::new();
        let out = self.forward(&mut sess, features, true, false)?;
        Ok(sess.value(out.words.expect("requested")).clone())
    }

    pub fn letter_logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut sess = Session::new();
        let out = self.forward(&mut sess, features, false, true)?;
        Ok(sess.value(out.letters.expect("requested")).clone())
    }

    /// Names of the encoder tensors shared with the letter branch.
    pub fn is_bottom_encoder_tensor(&self, name: &str) -> bool {
        let Some(rest) = name.strip_prefix(ENCODER_PREFIX).and_then(|r| r.strip_prefix('/')) else {
            return false;
        };
        let bottom = self.stack.layers - 1;
        let index = |p: &str| {
            rest.strip_prefix(p)
                .and_then(|r| r.split('/').next()?.parse::<usize>().ok())
        };
        match (index("l"), index("proj")) {
            (Some(l), _) => l < bottom,
            // With per-layer projections, projection i follows layer i.
            (_, Some(p)) => self.stack.project_every_layer && p < bottom,
            _ => false,
        }
    }
}

impl Parameterized for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit(&join(prefix, ENCODER_PREFIX), f);
        self.head.visit(&join(prefix, HEAD_PREFIX), f);
        if let Some(b) = &self.letters {
            b.visit(&join(prefix, LETTER_PREFIX), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_mut(&join(prefix, ENCODER_PREFIX), f);
        self.head.visit_mut(&join(prefix, HEAD_PREFIX), f);
        if let Some(b) = &mut self.letters {
            b.visit_mut(&join(prefix, LETTER_PREFIX), f);
        }
    }
}
