use super::head::{AttentionParams, PlmState};
use super::Scoring;
use crate::autodiff::{Session, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::params::Linear;
use crate::rnn::{lstm_step, LstmParams, LstmState};

/// Filters each window vector with its own kernel: `g_j = kernels[j] h_j`.
///
/// Returns the filtered window as a `[C, n]` matrix and the uniform-weight
/// context `Σ_j g_j`.
pub fn time_convolution(sess: &mut Session, window: &[Var], kernels: &[Tensor]) -> Result<(Var, Var)> {
    if window.len() != kernels.len() {
        return shape_err(
            "time_convolution",
            format!("{} kernels for a window of {}", kernels.len(), window.len()),
        );
    }
    let mut rows = Vec::with_capacity(window.len());
    for (&h, k) in window.iter().zip(kernels) {
        let kv = sess.param(k);
        rows.push(sess.matmul(kv, h)?);
    }
    let g = sess.stack(&rows)?;
    let c = sess.sum_axis(g, 0)?;
    Ok((g, c))
}

/// Same-length convolution of the previous weights with the location
/// kernel `[channels, width]`; output is `[C, channels]`.
pub fn location_features(sess: &mut Session, alpha_prev: Var, kernel: &Tensor) -> Result<Var> {
    let k = sess.param(kernel);
    sess.conv1d(alpha_prev, k)
}

/// Pre-activation scores `U z + W g_t (+ V f_t) + b` for every window row.
/// `gw` is `g Wᵀ` when the caller has it precomputed.
pub(crate) fn score_preactivation(
    sess: &mut Session,
    z: Var,
    alpha_prev: Var,
    g: Var,
    gw: Option<Var>,
    params: &AttentionParams,
    scoring: Scoring,
) -> Result<Var> {
    let n = params.hidden_dim();
    let (c_len, gn) = match sess.shape(g) {
        [c, gn] => (*c, *gn),
        other => return shape_err("attend", format!("window must be [C, n], got {other:?}")),
    };
    if gn != n {
        return shape_err("attend", format!("window width {gn}, parameters expect {n}"));
    }
    if sess.shape(alpha_prev) != [c_len] {
        return shape_err(
            "attend",
            format!("previous weights {:?} for window {c_len}", sess.shape(alpha_prev)),
        );
    }
    if sess.shape(z) != [params.u.shape()[1]] {
        return shape_err(
            "attend",
            format!("query {:?} but U is {:?}", sess.shape(z), params.u.shape()),
        );
    }
    let u = sess.param(&params.u);
    let b = sess.param(&params.b);
    let uz = sess.matmul(u, z)?;
    let q = sess.add(uz, b)?;
    let gw = match gw {
        Some(v) => v,
        None => {
            let w = sess.param(&params.w);
            let wt = sess.transpose(w)?;
            sess.matmul(g, wt)?
        }
    };
    let mut pre = sess.add(gw, q)?;
    if scoring == Scoring::Hybrid {
        let loc = params
            .location
            .as_ref()
            .ok_or_else(|| Error::Config("hybrid scoring needs location parameters".into()))?;
        let f = location_features(sess, alpha_prev, &loc.kernel)?;
        let v = sess.param(&loc.projection);
        let vt = sess.transpose(v)?;
        let vf = sess.matmul(f, vt)?;
        pre = sess.add(pre, vf)?;
    }
    Ok(pre)
}

/// Window weights `α = softmax_t(vᵀ tanh(U z + W g_t [+ V f_t] + b))`.
///
/// `z` is the previous logit vector (content query) or the pseudo-LM output.
/// `Scoring::Uniform` returns `1/C` everywhere.
pub fn attend(
    sess: &mut Session,
    z: Var,
    alpha_prev: Var,
    g: Var,
    params: &AttentionParams,
    scoring: Scoring,
) -> Result<Var> {
    attend_with(sess, z, alpha_prev, g, None, params, scoring)
}

pub(crate) fn attend_with(
    sess: &mut Session,
    z: Var,
    alpha_prev: Var,
    g: Var,
    gw: Option<Var>,
    params: &AttentionParams,
    scoring: Scoring,
) -> Result<Var> {
    if scoring == Scoring::Uniform {
        let c = sess.shape(g)[0];
        return Ok(sess.leaf(Tensor::full(&[c], 1.0 / c as f64)));
    }
    let pre = score_preactivation(sess, z, alpha_prev, g, gw, params, scoring)?;
    let act = sess.tanh(pre)?;
    let v = sess.param(&params.v);
    let e = sess.matmul(act, v)?;
    sess.softmax(e, 0)
}

/// `γ Σ_t α_t g_t`.
pub fn context(sess: &mut Session, alpha: Var, g: Var, gamma: f64) -> Result<Var> {
    let gt = sess.transpose(g)?;
    let c = sess.matmul(gt, alpha)?;
    sess.scale(c, gamma)
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// Pre-softmax logits `z = W_soft c + b_soft`.
    pub logits: Var,
    pub log_probs: Var,
}

pub fn output_head(sess: &mut Session, c: Var, output: &Linear) -> Result<HeadOutput> {
    if sess.shape(c).last() != Some(&output.input_dim()) {
        return shape_err(
            "output_head",
            format!("context {:?} for W_soft {:?}", sess.shape(c), output.weight.shape()),
        );
    }
    let logits = output.apply(sess, c)?;
    let log_probs = sess.log_softmax(logits)?;
    Ok(HeadOutput { logits, log_probs })
}

/// Pseudo-LM step: feeds `[z_prev ; c_prev]` through the LSTM. The new
/// hidden state is the query that replaces `z` in [`attend`].
pub fn plm_step(
    sess: &mut Session,
    z_prev: Var,
    c_prev: Var,
    state: PlmState,
    params: &LstmParams,
) -> Result<PlmState> {
    let x = sess.concat(&[z_prev, c_prev], 0)?;
    let next = lstm_step(sess, x, LstmState { h: state.h, c: state.c }, params)?;
    Ok(PlmState { h: next.h, c: next.c })
}

/// Component attention: per-dimension weights. Returns `(A, c)` where `A`
/// is `[n, C]` with rows summing to one and `c = γ Σ_t A[:, t] ⊙ g_t`.
pub fn coma(
    sess: &mut Session,
    z: Var,
    alpha_prev: Var,
    g: Var,
    params: &AttentionParams,
    scoring: Scoring,
    gamma: f64,
) -> Result<(Var, Var)> {
    let (a_tn, c) = coma_with(sess, z, alpha_prev, g, None, params, scoring, gamma)?;
    let a = sess.transpose(a_tn)?;
    Ok((a, c))
}

/// [`coma`] with the weights left as `[C, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn coma_with(
    sess: &mut Session,
    z: Var,
    alpha_prev: Var,
    g: Var,
    gw: Option<Var>,
    params: &AttentionParams,
    scoring: Scoring,
    gamma: f64,
) -> Result<(Var, Var)> {
    if scoring == Scoring::Uniform {
        return Err(Error::Config(
            "component attention needs content or hybrid scoring".into(),
        ));
    }
    let pre = score_preactivation(sess, z, alpha_prev, g, gw, params, scoring)?;
    let e = sess.tanh(pre)?;
    let a = sess.softmax(e, 0)?;
    let weighted = sess.mul(a, g)?;
    let c = sess.sum_axis(weighted, 0)?;
    let c = sess.scale(c, gamma)?;
    Ok((a, c))
}
