use rand::Rng;

use crate::autodiff::{Session, Tensor, Var, INIT_SCALE};
use crate::error::{shape_err, Error, Result};
use crate::params::{join, Linear, Parameterized};

#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttentionConfig {
    pub tau: usize,
    pub heads: usize,
    /// Total query/key width over all heads.
    pub d_k: usize,
    /// Model width; also the total value width.
    pub d_v: usize,
}

impl Default for SelfAttentionConfig {
    fn default() -> Self {
        Self {
            tau: 4,
            heads: 1,
            d_k: 32,
            d_v: 32,
        }
    }
}

impl SelfAttentionConfig {
    pub fn window(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_k == 0 || self.d_v == 0 {
            return Err(Error::Config(
                "self-attention widths and head count must be positive".into(),
            ));
        }
        if !self.d_k.is_multiple_of(self.heads) || !self.d_v.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide key width {} and value width {}",
                self.heads, self.d_k, self.d_v
            )));
        }
        Ok(())
    }

    pub fn ffn_width(&self) -> usize {
        4 * self.d_v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttentionParams {
    pub heads: usize,
    /// Input projection `[d_v, n]`.
    pub input: Tensor,
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub norm1_gain: Tensor,
    pub norm1_bias: Tensor,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm2_gain: Tensor,
    pub norm2_bias: Tensor,
}

impl SelfAttentionParams {
    pub fn new<R: Rng + ?Sized>(cfg: &SelfAttentionConfig, hidden: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if hidden == 0 {
            return shape_err("self_attention", "zero hidden width");
        }
        // Wider init than the recurrent layers so the dot products are not flat.
        let scale = (1.0 / cfg.d_v as f64).sqrt();
        Ok(Self {
            heads: cfg.heads,
            input: Tensor::uniform(&[cfg.d_v, hidden], (1.0 / hidden as f64).sqrt(), rng),
            query: Tensor::uniform(&[cfg.d_k, cfg.d_v], scale, rng),
            key: Tensor::uniform(&[cfg.d_k, cfg.d_v], scale, rng),
            value: Tensor::uniform(&[cfg.d_v, cfg.d_v], scale, rng),
            norm1_gain: Tensor::full(&[cfg.d_v], 1.0),
            norm1_bias: Tensor::zeros(&[cfg.d_v]),
            ffn_in: Linear {
                weight: Tensor::uniform(&[cfg.ffn_width(), cfg.d_v], scale, rng),
                bias: Tensor::uniform(&[cfg.ffn_width()], INIT_SCALE, rng),
            },
            ffn_out: Linear {
                weight: Tensor::uniform(&[cfg.d_v, cfg.ffn_width()], (1.0 / cfg.ffn_width() as f64).sqrt(), rng),
                bias: Tensor::uniform(&[cfg.d_v], INIT_SCALE, rng),
            },
            norm2_gain: Tensor::full(&[cfg.d_v], 1.0),
            norm2_bias: Tensor::zeros(&[cfg.d_v]),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.shape()[1]
    }

    pub fn model_dim(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn key_dim(&self) -> usize {
        self.query.shape()[0]
    }

    fn check(&self) -> Result<()> {
        let (dk, dv) = (self.key_dim(), self.model_dim());
        if self.heads == 0 || dk % self.heads != 0 || dv % self.heads != 0 {
            return Err(Error::Config(format!("{} heads for widths {dk}/{dv}", self.heads)));
        }
        if self.query.shape() != [dk, dv] || self.key.shape() != [dk, dv] || self.value.shape() != [dv, dv] {
            return shape_err(
                "self_attention",
                format!(
                    "Q {:?}, K {:?}, V {:?} for model width {dv}",
                    self.query.shape(),
                    self.key.shape(),
                    self.value.shape()
                ),
            );
        }
        Ok(())
    }
}

impl Parameterized for SelfAttentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "W_p"), &self.input);
        f(&join(prefix, "Q"), &self.query);
        f(&join(prefix, "K"), &self.key);
        f(&join(prefix, "V"), &self.value);
        f(&join(prefix, "ln1/g"), &self.norm1_gain);
        f(&join(prefix, "ln1/b"), &self.norm1_bias);
        self.ffn_in.visit(&join(prefix, "ffn1"), f);
        self.ffn_out.visit(&join(prefix, "ffn2"), f);
        f(&join(prefix, "ln2/g"), &self.norm2_gain);
        f(&join(prefix, "ln2/b"), &self.norm2_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "W_p"), &mut self.input);
        f(&join(prefix, "Q"), &mut self.query);
        f(&join(prefix, "K"), &mut self.key);
        f(&join(prefix, "V"), &mut self.value);
        f(&join(prefix, "ln1/g"), &mut self.norm1_gain);
        f(&join(prefix, "ln1/b"), &mut self.norm1_bias);
        self.ffn_in.visit_mut(&join(prefix, "ffn1"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn2"), f);
        f(&join(prefix, "ln2/g"), &mut self.norm2_gain);
        f(&join(prefix, "ln2/b"), &mut self.norm2_bias);
    }
}

/// Output of one self-attention block.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    /// `[d_v]` block output.
    pub output: Var,
    /// Per-head window weights, each `[C]`.
    pub weights: Vec<Var>,
}

/// Core of the block given projected queries/keys/values.
/// `keys` is `[C, d_k]`, `values` `[C, d_v]`, `center` the projected centre frame.
fn block_from_projections(
    sess: &mut Session,
    query: Var,
    keys: Var,
    values: Var,
    center: Var,
    params: &SelfAttentionParams,
) -> Result<BlockOutput> {
    let heads = params.heads;
    let dkh = params.key_dim() / heads;
    let dvh = params.model_dim() / heads;
    let inv = 1.0 / (dkh as f64).sqrt();
    let mut contexts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = sess.slice(query, 0, h * dkh, dkh)?;
        let k = sess.slice(keys, 1, h * dkh, dkh)?;
        let v = sess.slice(values, 1, h * dvh, dvh)?;
        let e = sess.matmul(k, q)?;
        let e = sess.scale(e, inv)?;
        let a = sess.softmax(e, 0)?;
        let vt = sess.transpose(v)?;
        contexts.push(sess.matmul(vt, a)?);
        weights.push(a);
    }
    let c = if heads == 1 {
        contexts[0]
    } else {
        sess.concat(&contexts, 0)?
    };
    let g1 = sess.param(&params.norm1_gain);
    let b1 = sess.param(&params.norm1_bias);
    let res = sess.add(c, center)?;
    let y = sess.layer_norm(res, g1, b1)?;
    let hdn = params.ffn_in.apply(sess, y)?;
    let hdn = sess.tanh(hdn)?;
    let ff = params.ffn_out.apply(sess, hdn)?;
    let g2 = sess.param(&params.norm2_gain);
    let b2 = sess.param(&params.norm2_bias);
    let res = sess.add(ff, y)?;
    let output = sess.layer_norm(res, g2, b2)?;
    Ok(BlockOutput { output, weights })
}

/// One self-attention block: the frame `window[center]` queries every frame
/// of `window` (each `[n]`).
pub fn self_attention_block(
    sess: &mut Session,
    window: &[Var],
    center: usize,
    params: &SelfAttentionParams,
) -> Result<BlockOutput> {
    params.check()?;
    if center >= window.len() {
        return shape_err(
            "self_attention",
            format!("centre {center} outside window of {}", window.len()),
        );
    }
    let h = sess.stack(window)?;
    if sess.shape(h)[1] != params.hidden_dim() {
        return shape_err(
            "self_attention",
            format!(
                "frame width {}, block expects {}",
                sess.shape(h)[1],
                params.hidden_dim()
            ),
        );
    }
    let wp = sess.param(&params.input);
    let wpt = sess.transpose(wp)?;
    let b = sess.matmul(h, wpt)?;
    let qm = sess.param(&params.query);
    let km = sess.param(&params.key);
    let vm = sess.param(&params.value);
    let kt = sess.transpose(km)?;
    let vt = sess.transpose(vm)?;
    let keys = sess.matmul(b, kt)?;
    let values = sess.matmul(b, vt)?;
    let b_c = sess.row(b, center)?;
    let query = sess.matmul(qm, b_c)?;
    block_from_projections(sess, query, keys, values, b_c, params)
}

/// Self-attention head: one block per output frame over a window of
/// `2τ + 1` hidden frames, then the label softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttentionCtc {
    pub config: SelfAttentionConfig,
    pub params: SelfAttentionParams,
    pub output: Linear,
}

impl SelfAttentionCtc {
    pub fn new<R: Rng + ?Sized>(
        config: SelfAttentionConfig,
        hidden: usize,
        labels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let params = SelfAttentionParams::new(&config, hidden, rng)?;
        let output = Linear::new(config.d_v, labels, rng);
        Ok(Self { config, params, output })
    }

    /// Logits `[frames, labels]` for a `[frames, n]` hidden sequence.
    pub fn forward(&self, sess: &mut Session, hidden: Var) -> Result<Var> {
        let p = &self.params;
        p.check()?;
        let (frames, width) = match sess.shape(hidden) {
            [t, w] => (*t, *w),
            other => {
                return shape_err(
                    "self_attention",
                    format!("hidden sequence must be [T, n], got {other:?}"),
                )
            }
        };
        if width != p.hidden_dim() {
            return shape_err(
                "self_attention",
                format!("hidden width {width}, head expects {}", p.hidden_dim()),
            );
        }
        let tau = self.config.tau;
        let wp = sess.param(&p.input);
        let wpt = sess.transpose(wp)?;
        let b_all = sess.matmul(hidden, wpt)?;
        let qm = sess.param(&p.query);
        let km = sess.param(&p.key);
        let vm = sess.param(&p.value);
        let qt = sess.transpose(qm)?;
        let kt = sess.transpose(km)?;
        let vt = sess.transpose(vm)?;
        let q_all = sess.matmul(b_all, qt)?;
        let k_all = sess.matmul(b_all, kt)?;
        let v_all = sess.matmul(b_all, vt)?;
        let zero_k = sess.leaf(Tensor::zeros(&[p.key_dim()]));
        let zero_v = sess.leaf(Tensor::zeros(&[p.model_dim()]));
        let mut logits = Vec::with_capacity(frames);
        for u in 0..frames {
            let mut krows = Vec::with_capacity(2 * tau + 1);
            let mut vrows = Vec::with_capacity(2 * tau + 1);
            for j in 0..2 * tau + 1 {
                let t = u as isize - tau as isize + j as isize;
                if t < 0 || t >= frames as isize {
                    krows.push(zero_k);
                    vrows.push(zero_v);
                } else {
                    krows.push(sess.row(k_all, t as usize)?);
                    vrows.push(sess.row(v_all, t as usize)?);
                }
            }
            let keys = sess.stack(&krows)?;
            let values = sess.stack(&vrows)?;
            let query = sess.row(q_all, u)?;
            let center = sess.row(b_all, u)?;
            let block = block_from_projections(sess, query, keys, values, center, p)?;
            logits.push(self.output.apply(sess, block.output)?);
        }
        sess.stack(&logits)
    }
}

impl Parameterized for SelfAttentionCtc {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.params.visit(prefix, f);
        self.output.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.params.visit_mut(prefix, f);
        self.output.visit_mut(&join(prefix, "out"), f);
    }
}
