//! LSTM cells, uni/bidirectional stacks with an affine output projection, and
//! input frame stacking/skipping.

use rand::{Rng, SeedableRng};

use crate::autodiff::{Session, Tensor, Var, INIT_SCALE};
use crate::error::{shape_err, Error, Result};
use crate::params::{join, Linear, Parameterized};

/// Encoder topology.
#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub layers: usize,
    /// Memory cells per direction.
    pub cells: usize,
    pub bidirectional: bool,
    pub projection_dim: usize,
    /// Project every layer's output instead of only the top layer's.
    pub project_every_layer: bool,
    pub frame_stack: usize,
    pub frame_skip: usize,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            cells: 32,
            bidirectional: false,
            projection_dim: 32,
            project_every_layer: false,
            frame_stack: 1,
            frame_skip: 1,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.cells == 0 || self.projection_dim == 0 {
            return Err(Error::Config(
                "layers, cells and projection_dim must be positive".into(),
            ));
        }
        if self.frame_stack == 0 || self.frame_skip == 0 {
            return Err(Error::Config("frame_stack and frame_skip must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of one layer's (unprojected) output.
    pub fn layer_width(&self) -> usize {
        if self.bidirectional {
            2 * self.cells
        } else {
            self.cells
        }
    }

    /// Number of output frames for `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.frame_skip)
    }
}

/// Concatenates `stack` consecutive frames starting every `skip` frames.
/// Windows running past the end repeat the last frame.
pub fn stack_and_skip(features: &Tensor, stack: usize, skip: usize) -> Result<Tensor> {
    if features.rank() != 2 {
        return shape_err(
            "stack_and_skip",
            format!("features must be a matrix, got {:?}", features.shape()),
        );
    }
    if stack == 0 || skip == 0 {
        return Err(Error::Config("frame stack and skip must be at least 1".into()));
    }
    let frames = features.rows();
    if frames < stack {
        return shape_err(
            "stack_and_skip",
            format!("{frames} frames cannot fill a stack of {stack}"),
        );
    }
    let dim = features.cols();
    let out_frames = frames.div_ceil(skip);
    let mut data = Vec::with_capacity(out_frames * dim * stack);
    for o in 0..out_frames {
        for j in 0..stack {
            let src = (o * skip + j).min(frames - 1);
            data.extend_from_slice(features.row(src));
        }
    }
    Tensor::matrix(out_frames, dim * stack, data)
}

/// One LSTM cell. Gate blocks are stacked in the order input, forget, cell
/// candidate, output; each block is `cells` rows of `w_x`, `w_h` and `bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(input: usize, cells: usize, rng: &mut R) -> Self {
        Self {
            w_x: Tensor::uniform(&[4 * cells, input], INIT_SCALE, rng),
            w_h: Tensor::uniform(&[4 * cells, cells], INIT_SCALE, rng),
            bias: Tensor::uniform(&[4 * cells], INIT_SCALE, rng),
        }
    }

    pub fn zeros(input: usize, cells: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[4 * cells, input]),
            w_h: Tensor::zeros(&[4 * cells, cells]),
            bias: Tensor::zeros(&[4 * cells]),
        }
    }

    pub fn cells(&self) -> usize {
        self.w_h.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[1]
    }

    /// Mutable view of one gate's bias block.
    pub fn gate_bias_mut(&mut self, gate: usize) -> &mut [f64] {
        let n = self.cells();
        &mut self.bias.data_mut()[gate * n..(gate + 1) * n]
    }
}

impl Parameterized for LstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "W_x"), &self.w_x);
        f(&join(prefix, "W_h"), &self.w_h);
        f(&join(prefix, "b"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "W_x"), &mut self.w_x);
        f(&join(prefix, "W_h"), &mut self.w_h);
        f(&join(prefix, "b"), &mut self.bias);
    }
}

/// Hidden and cell state of one LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(sess: &mut Session, cells: usize) -> Self {
        let h = sess.leaf(Tensor::zeros(&[cells]));
        let c = sess.leaf(Tensor::zeros(&[cells]));
        Self { h, c }
    }
}

/// Gate update given the input contribution `W_x x` already computed.
fn cell_update(sess: &mut Session, x_proj: Var, prev: LstmState, params: &LstmParams) -> Result<LstmState> {
    let n = params.cells();
    if sess.shape(prev.h) != [n] || sess.shape(prev.c) != [n] {
        return shape_err(
            "lstm_step",
            format!("state {:?}/{:?} for {n} cells", sess.shape(prev.h), sess.shape(prev.c)),
        );
    }
    let w_h = sess.param(&params.w_h);
    let b = sess.param(&params.bias);
    let rec = sess.matmul(w_h, prev.h)?;
    let pre = sess.add(x_proj, rec)?;
    let pre = sess.add(pre, b)?;
    let gate = |sess: &mut Session, k: usize| sess.slice(pre, 0, k * n, n);
    let i = gate(sess, GATE_INPUT)?;
    let i = sess.sigmoid(i)?;
    let f = gate(sess, GATE_FORGET)?;
    let f = sess.sigmoid(f)?;
    let g = gate(sess, GATE_CELL)?;
    let g = sess.tanh(g)?;
    let o = gate(sess, GATE_OUTPUT)?;
    let o = sess.sigmoid(o)?;
    let keep = sess.mul(f, prev.c)?;
    let write = sess.mul(i, g)?;
    let c = sess.add(keep, write)?;
    let tc = sess.tanh(c)?;
    let h = sess.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// One LSTM step without peepholes.
pub fn lstm_step(sess: &mut Session, x: Var, prev: LstmState, params: &LstmParams) -> Result<LstmState> {
    if sess.shape(x) != [params.input_dim()] {
        return shape_err(
            "lstm_step",
            format!("input {:?} for input width {}", sess.shape(x), params.input_dim()),
        );
    }
    let w_x = sess.param(&params.w_x);
    let x_proj = sess.matmul(w_x, x)?;
    cell_update(sess, x_proj, prev, params)
}

/// Runs one direction over all rows of `inputs` (`[frames, in]`) from zero
/// state. Returned hidden states are indexed by input frame.
pub fn run_direction(sess: &mut Session, inputs: Var, params: &LstmParams, reverse: bool) -> Result<Vec<Var>> {
    let shape = sess.shape(inputs).to_vec();
    if shape.len() != 2 || shape[1] != params.input_dim() {
        return shape_err(
            "lstm",
            format!("inputs {shape:?} for input width {}", params.input_dim()),
        );
    }
    let frames = shape[0];
    let w_x = sess.param(&params.w_x);
    let wt = sess.transpose(w_x)?;
    let projected = sess.matmul(inputs, wt)?;
    let mut state = LstmState::zeros(sess, params.cells());
    let mut out = vec![state.h; frames];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..frames).rev())
    } else {
        Box::new(0..frames)
    };
    for t in order {
        let xp = sess.row(projected, t)?;
        state = cell_update(sess, xp, state, params)?;
        out[t] = state.h;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub forward: LstmParams,
    pub backward: Option<LstmParams>,
}

impl LayerParams {
    pub fn width(&self) -> usize {
        self.forward.cells() * if self.backward.is_some() { 2 } else { 1 }
    }
}

impl Parameterized for LayerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.forward.visit(&join(prefix, "fw"), f);
        if let Some(b) = &self.backward {
            b.visit(&join(prefix, "bw"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "fw"), f);
        if let Some(b) = &mut self.backward {
            b.visit_mut(&join(prefix, "bw"), f);
        }
    }
}

/// Runs one (possibly bidirectional) layer; output is `[frames, width]`.
pub fn run_layer(sess: &mut Session, inputs: Var, layer: &LayerParams) -> Result<Var> {
    let fw = run_direction(sess, inputs, &layer.forward, false)?;
    let rows = match &layer.backward {
        None => fw,
        Some(bp) => {
            let bw = run_direction(sess, inputs, bp, true)?;
            fw.iter()
                .zip(&bw)
                .map(|(&f, &b)| sess.concat(&[f, b], 0))
                .collect::<Result<Vec<_>>>()?
        }
    };
    sess.stack(&rows)
}

/// Parameters of a full encoder stack.
#[derive(Clone, Debug, PartialEq)]
pub struct StackParams {
    pub layers: Vec<LayerParams>,
    /// One projection per layer, or a single top projection.
    pub projections: Vec<Linear>,
}

impl StackParams {
    /// `input_dim` is the width after frame stacking.
    pub fn new<R: Rng + ?Sized>(cfg: &StackConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut projections = Vec::new();
        let mut width = input_dim;
        for l in 0..cfg.layers {
            let forward = LstmParams::new(width, cfg.cells, rng);
            let backward = cfg.bidirectional.then(|| LstmParams::new(width, cfg.cells, rng));
            layers.push(LayerParams { forward, backward });
            width = cfg.layer_width();
            if cfg.project_every_layer || l + 1 == cfg.layers {
                projections.push(Linear::new(width, cfg.projection_dim, rng));
                width = cfg.projection_dim;
            }
        }
        Ok(Self { layers, projections })
    }

    pub fn zeros(cfg: &StackConfig, input_dim: usize) -> Result<Self> {
        let mut p = Self::new(cfg, input_dim, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        p.visit_mut("", &mut |_, t| t.data_mut().fill(0.0));
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].forward.input_dim()
    }
}

impl Parameterized for StackParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("l{i}")), f);
        }
        for (i, p) in self.projections.iter().enumerate() {
            p.visit(&join(prefix, &format!("proj{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("l{i}")), f);
        }
        for (i, p) in self.projections.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &format!("proj{i}")), f);
        }
    }
}

/// Intermediate values of [`run_stack`].
pub struct StackOutput {
    /// Stacked and skipped features fed to the first layer.
    pub input: Var,
    /// Each layer's output before any projection.
    pub layer_outputs: Vec<Var>,
    /// `layer_inputs[l]` feeds layer `l`; the last entry equals `hidden`.
    pub layer_inputs: Vec<Var>,
    /// Top projected hidden sequence `[frames', projection_dim]`.
    pub hidden: Var,
}

/// Runs frame stacking/skipping followed by every layer and the projection.
pub fn run_stack(
    sess: &mut Session,
    features: &Tensor,
    cfg: &StackConfig,
    params: &StackParams,
) -> Result<StackOutput> {
    let stacked = stack_and_skip(features, cfg.frame_stack, cfg.frame_skip)?;
    let input = sess.leaf(stacked);
    run_stack_from(sess, input, cfg, params)
}

/// [`run_stack`] on already stacked input.
pub fn run_stack_from(sess: &mut Session, input: Var, cfg: &StackConfig, params: &StackParams) -> Result<StackOutput> {
    if params.layers.len() != cfg.layers {
        return Err(Error::Config(format!(
            "config has {} layers, parameters have {}",
            cfg.layers,
            params.layers.len()
        )));
    }
    let mut x = input;
    let mut layer_outputs = Vec::with_capacity(cfg.layers);
    let mut layer_inputs = vec![input];
    let mut proj = params.projections.iter();
    for (l, layer) in params.layers.iter().enumerate() {
        let y = run_layer(sess, x, layer)?;
        layer_outputs.push(y);
        x = y;
        if cfg.project_every_layer || l + 1 == cfg.layers {
            let p = proj
                .next()
                .ok_or_else(|| Error::Config("missing projection parameters".into()))?;
            x = p.apply(sess, x)?;
        }
        layer_inputs.push(x);
    }
    Ok(StackOutput {
        input,
        layer_outputs,
        layer_inputs,
        hidden: x,
    })
}
