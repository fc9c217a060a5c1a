use rand::Rng;

use super::ops::{attend_with, coma_with, output_head, plm_step};
use super::{AttentionConfig, Scoring};
use crate::autodiff::{Session, Tensor, Var, INIT_SCALE};
use crate::error::{shape_err, Result};
use crate::params::{join, Linear, Parameterized};
use crate::rnn::LstmParams;

/// Location-feature kernel `[channels, width]` and its projection `[n, channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationParams {
    pub kernel: Tensor,
    pub projection: Tensor,
}

/// Parameters of [`AttentionCtc`].
///
/// `u` is `[n, labels]` when the query is the previous logit vector and
/// `[n, n]` when the pseudo-LM produces the query.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// One `[n, n]` time-convolution kernel per window position.
    pub kernels: Vec<Tensor>,
    pub u: Tensor,
    pub w: Tensor,
    pub b: Tensor,
    pub v: Tensor,
    pub location: Option<LocationParams>,
    /// Pseudo-LM with input `labels + n` and `n` cells.
    pub plm: Option<LstmParams>,
    pub output: Linear,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(cfg: &AttentionConfig, hidden: usize, labels: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if hidden == 0 || labels == 0 {
            return shape_err("attention", format!("hidden {hidden}, labels {labels}"));
        }
        // The centre kernel starts near identity and the others near zero,
        // so with uniform weights and the default gamma the context starts
        // close to the centre frame's hidden vector.
        let kernels = (0..cfg.window())
            .map(|j| {
                let mut k = Tensor::uniform(&[hidden, hidden], INIT_SCALE, rng);
                if j == cfg.tau {
                    for i in 0..hidden {
                        k.data_mut()[i * hidden + i] += 1.0;
                    }
                }
                k
            })
            .collect();
        let query = if cfg.plm { hidden } else { labels };
        let location = (cfg.scoring == Scoring::Hybrid).then(|| LocationParams {
            kernel: Tensor::uniform(&[cfg.location_channels, cfg.location_width], INIT_SCALE, rng),
            projection: Tensor::uniform(&[hidden, cfg.location_channels], INIT_SCALE, rng),
        });
        let u = Tensor::uniform(&[hidden, query], INIT_SCALE, rng);
        let w = Tensor::uniform(&[hidden, hidden], INIT_SCALE, rng);
        let b = Tensor::uniform(&[hidden], INIT_SCALE, rng);
        let v = Tensor::uniform(&[hidden], INIT_SCALE, rng);
        let plm = cfg.plm.then(|| LstmParams::new(labels + hidden, hidden, rng));
        let output = Linear::new(hidden, labels, rng);
        Ok(Self {
            kernels,
            u,
            w,
            b,
            v,
            location,
            plm,
            output,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn labels(&self) -> usize {
        self.output.output_dim()
    }
}

impl Parameterized for AttentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (j, k) in self.kernels.iter().enumerate() {
            f(&join(prefix, &format!("kernel{j}")), k);
        }
        f(&join(prefix, "U"), &self.u);
        f(&join(prefix, "W"), &self.w);
        f(&join(prefix, "b"), &self.b);
        f(&join(prefix, "v"), &self.v);
        if let Some(loc) = &self.location {
            f(&join(prefix, "loc/F"), &loc.kernel);
            f(&join(prefix, "loc/V"), &loc.projection);
        }
        if let Some(plm) = &self.plm {
            plm.visit(&join(prefix, "plm"), f);
        }
        self.output.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (j, k) in self.kernels.iter_mut().enumerate() {
            f(&join(prefix, &format!("kernel{j}")), k);
        }
        f(&join(prefix, "U"), &mut self.u);
        f(&join(prefix, "W"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
        f(&join(prefix, "v"), &mut self.v);
        if let Some(loc) = &mut self.location {
            f(&join(prefix, "loc/F"), &mut loc.kernel);
            f(&join(prefix, "loc/V"), &mut loc.projection);
        }
        if let Some(plm) = &mut self.plm {
            plm.visit_mut(&join(prefix, "plm"), f);
        }
        self.output.visit_mut(&join(prefix, "out"), f);
    }
}

/// Pseudo-LM recurrent state.
#[derive(Clone, Copy, Debug)]
pub struct PlmState {
    pub h: Var,
    pub c: Var,
}

/// Per-frame attention traces of one forward pass.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// Logits `[frames, labels]`.
    pub logits: Var,
    /// Window weights per output frame: `[C]`, or `[C, n]` with component attention.
    pub weights: Vec<Var>,
}

/// Attention head over a `[frames, n]` hidden sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCtc {
    pub config: AttentionConfig,
    pub params: AttentionParams,
}

impl AttentionCtc {
    pub fn new<R: Rng + ?Sized>(config: AttentionConfig, hidden: usize, labels: usize, rng: &mut R) -> Result<Self> {
        let params = AttentionParams::new(&config, hidden, labels, rng)?;
        Ok(Self { config, params })
    }

    /// Logits `[frames, labels]`.
    pub fn forward(&self, sess: &mut Session, hidden: Var) -> Result<Var> {
        Ok(self.trace(sess, hidden)?.logits)
    }

    pub fn trace(&self, sess: &mut Session, hidden: Var) -> Result<AttentionTrace> {
        let cfg = &self.config;
        let p = &self.params;
        cfg.validate()?;
        let n = p.hidden_dim();
        let labels = p.labels();
        let (frames, width) = match sess.shape(hidden) {
            [t, w] => (*t, *w),
            other => return shape_err("attention", format!("hidden sequence must be [T, n], got {other:?}")),
        };
        if width != n {
            return shape_err("attention", format!("hidden width {width}, head expects {n}"));
        }
        let c_len = cfg.window();
        if p.kernels.len() != c_len {
            return shape_err("attention", format!("{} kernels for window {c_len}", p.kernels.len()));
        }
        let gamma = cfg.gamma();
        let scored = cfg.scoring != Scoring::Uniform;

        // Filter every frame with every kernel once; window rows are then
        // picked out per output frame.
        let mut filtered = Vec::with_capacity(c_len);
        let mut filtered_w = Vec::with_capacity(c_len);
        let w = sess.param(&p.w);
        let wt = sess.transpose(w)?;
        for k in &p.kernels {
            let kv = sess.param(k);
            let kt = sess.transpose(kv)?;
            let f = sess.matmul(hidden, kt)?;
            filtered.push(f);
            if scored {
                filtered_w.push(sess.matmul(f, wt)?);
            }
        }
        let zero_row = sess.leaf(Tensor::zeros(&[n]));

        let mut z_prev = sess.leaf(Tensor::zeros(&[labels]));
        let mut c_prev = sess.leaf(Tensor::zeros(&[n]));
        let mut alpha_prev = sess.leaf(Tensor::full(&[c_len], 1.0 / c_len as f64));
        let mut plm_state = match &p.plm {
            Some(_) => {
                let h = sess.leaf(Tensor::zeros(&[n]));
                let c = sess.leaf(Tensor::zeros(&[n]));
                Some(PlmState { h, c })
            }
            None => None,
        };

        let mut logits = Vec::with_capacity(frames);
        let mut weights = Vec::with_capacity(frames);
        for u in 0..frames {
            let mut rows = Vec::with_capacity(c_len);
            let mut rows_w = Vec::with_capacity(c_len);
            for j in 0..c_len {
                let t = u as isize - cfg.tau as isize + j as isize;
                if t < 0 || t >= frames as isize {
                    rows.push(zero_row);
                    if scored {
                        rows_w.push(zero_row);
                    }
                } else {
                    rows.push(sess.row(filtered[j], t as usize)?);
                    if scored {
                        rows_w.push(sess.row(filtered_w[j], t as usize)?);
                    }
                }
            }
            let g = sess.stack(&rows)?;
            let c = if !scored {
                let s = sess.sum_axis(g, 0)?;
                weights.push(alpha_prev);
                sess.scale(s, gamma / c_len as f64)?
            } else {
                let gw = sess.stack(&rows_w)?;
                let query = match (&p.plm, plm_state) {
                    (Some(lstm), Some(state)) => {
                        let next = plm_step(sess, z_prev, c_prev, state, lstm)?;
                        plm_state = Some(next);
                        next.h
                    }
                    _ => z_prev,
                };
                if cfg.coma {
                    let (a, c) = coma_with(sess, query, alpha_prev, g, Some(gw), p, cfg.scoring, gamma)?;
                    weights.push(a);
                    // Location features follow the weights averaged over dimensions.
                    let s = sess.sum_axis(a, 1)?;
                    alpha_prev = sess.scale(s, 1.0 / n as f64)?;
                    c
                } else {
                    let alpha = attend_with(sess, query, alpha_prev, g, Some(gw), p, cfg.scoring)?;
                    weights.push(alpha);
                    alpha_prev = alpha;
                    let gt = sess.transpose(g)?;
                    let c = sess.matmul(gt, alpha)?;
                    sess.scale(c, gamma)?
                }
            };
            let out = output_head(sess, c, &p.output)?;
            logits.push(out.logits);
            z_prev = out.logits;
            c_prev = c;
        }
        let logits = sess.stack(&logits)?;
        Ok(AttentionTrace { logits, weights })
    }
}

impl Parameterized for AttentionCtc {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.params.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.params.visit_mut(prefix, f);
    }
}
