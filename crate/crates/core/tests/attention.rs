mod common;

use common::{check_model, random_tensor, rng};
use mxctc::attention::{
    attend, coma, context, location_features, output_head, plm_step, self_attention_block, time_convolution,
    AttentionConfig, AttentionCtc, AttentionParams, PlmState, Scoring, SelfAttentionConfig, SelfAttentionCtc,
    SelfAttentionParams,
};
use mxctc::autodiff::{Session, Tensor, Var};
use mxctc::params::{Linear, Parameterized};
use mxctc::rnn::{run_stack, LstmParams, StackConfig, StackParams};
use proptest::prelude::*;

fn leaves(sess: &mut Session, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| sess.leaf(t.clone())).collect()
}

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn params(scoring: Scoring, tau: usize, n: usize, k: usize, plm: bool, seed: u64) -> AttentionParams {
    let cfg = AttentionConfig {
        tau,
        scoring,
        plm,
        ..AttentionConfig::default()
    };
    let mut p = AttentionParams::new(&cfg, n, k, &mut rng(seed)).unwrap();
    // Larger weights than the default init so scores are far from uniform.
    p.visit_mut("", &mut |_, t| {
        let r = random_tensor(t.shape(), 0.8, seed ^ t.len() as u64);
        *t = r;
    });
    p
}

#[test]
fn identity_kernel_single_frame_passes_through() {
    let mut sess = Session::new();
    let h = random_tensor(&[3], 1.0, 1);
    let w = leaves(&mut sess, std::slice::from_ref(&h));
    let (_, c) = time_convolution(&mut sess, &w, &[Tensor::identity(3)]).unwrap();
    assert_eq!(sess.value(c), &h);
}

#[test]
fn identity_kernels_over_constant_window_scale_by_window() {
    let mut sess = Session::new();
    let h = random_tensor(&[4], 1.0, 2);
    let window = leaves(&mut sess, &vec![h.clone(); 5]);
    let kernels = vec![Tensor::identity(4); 5];
    let (_, c) = time_convolution(&mut sess, &window, &kernels).unwrap();
    assert!(sess.value(c).max_abs_diff(&h.map(|v| 5.0 * v)) < 1e-12);
}

#[test]
fn time_convolution_matches_direct_sum() {
    let mut sess = Session::new();
    let hs: Vec<Tensor> = (0..3).map(|i| random_tensor(&[3], 1.0, 10 + i)).collect();
    let ks: Vec<Tensor> = (0..3).map(|i| random_tensor(&[3, 3], 1.0, 20 + i)).collect();
    let window = leaves(&mut sess, &hs);
    let (g, c) = time_convolution(&mut sess, &window, &ks).unwrap();
    let mut expect = [0.0; 3];
    for j in 0..3 {
        let gj = matvec(&ks[j], hs[j].data());
        assert_eq!(sess.value(g).row(j), gj.as_slice());
        for d in 0..3 {
            expect[d] += gj[d];
        }
    }
    for d in 0..3 {
        assert!((sess.value(c).data()[d] - expect[d]).abs() < 1e-12);
    }
}

#[test]
fn time_convolution_rejects_kernel_count() {
    let mut sess = Session::new();
    let w = leaves(&mut sess, &[Tensor::zeros(&[2]), Tensor::zeros(&[2])]);
    assert!(time_convolution(&mut sess, &w, &[Tensor::identity(2)]).is_err());
}

#[test]
fn location_feature_examples() {
    let alpha = Tensor::vector(&[0.2, 0.5, 0.3]);
    let mut sess = Session::new();
    let a = sess.leaf(alpha.clone());
    let ident = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let f = location_features(&mut sess, a, &ident).unwrap();
    assert_eq!(sess.value(f).data(), alpha.data());
    let f = location_features(&mut sess, a, &Tensor::zeros(&[1, 3])).unwrap();
    assert!(sess.value(f).data().iter().all(|&v| v == 0.0));
    // Taps [k0, k1, k2] centred on k1 with zeros past both ends.
    let kernel = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let f = location_features(&mut sess, a, &kernel).unwrap();
    let a = alpha.data();
    let expect = [
        2.0 * a[0] + 3.0 * a[1],
        1.0 * a[0] + 2.0 * a[1] + 3.0 * a[2],
        1.0 * a[1] + 2.0 * a[2],
    ];
    for (x, y) in sess.value(f).data().iter().zip(expect) {
        assert!((x - y).abs() < 1e-15);
    }
}

/// Score transcription: e_t = vᵀ tanh(U z + W g_t + V f_t + b), f = F ∗ α_prev.
fn literal_scores(p: &AttentionParams, z: &[f64], alpha_prev: &[f64], g: &[Vec<f64>], hybrid: bool) -> Vec<Vec<f64>> {
    let c = g.len();
    let n = p.hidden_dim();
    let uz = matvec(&p.u, z);
    let mut f = vec![vec![0.0; 1]; c];
    if hybrid {
        let loc = p.location.as_ref().unwrap();
        let (ch, width) = (loc.kernel.rows(), loc.kernel.cols());
        f = vec![vec![0.0; ch]; c];
        for (t, ft) in f.iter_mut().enumerate() {
            for (o, fo) in ft.iter_mut().enumerate() {
                for j in 0..width {
                    let src = t as isize + j as isize - (width as isize - 1) / 2;
                    if src >= 0 && (src as usize) < c {
                        *fo += loc.kernel.at(o, j) * alpha_prev[src as usize];
                    }
                }
            }
        }
    }
    (0..c)
        .map(|t| {
            let wg = matvec(&p.w, &g[t]);
            let vf = if hybrid {
                matvec(&p.location.as_ref().unwrap().projection, &f[t])
            } else {
                vec![0.0; n]
            };
            (0..n).map(|d| (uz[d] + wg[d] + vf[d] + p.b.data()[d]).tanh()).collect()
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn run_attend(p: &AttentionParams, scoring: Scoring, z: &Tensor, alpha_prev: &Tensor, g: &Tensor) -> Tensor {
    let mut sess = Session::new();
    let zv = sess.leaf(z.clone());
    let av = sess.leaf(alpha_prev.clone());
    let gv = sess.leaf(g.clone());
    let a = attend(&mut sess, zv, av, gv, p, scoring).unwrap();
    sess.value(a).clone()
}

#[test]
fn zero_v_gives_uniform_weights() {
    let mut p = params(Scoring::Content, 2, 3, 4, false, 1);
    p.v = Tensor::zeros(&[3]);
    let a = run_attend(
        &p,
        Scoring::Content,
        &random_tensor(&[4], 1.0, 2),
        &Tensor::full(&[5], 0.2),
        &random_tensor(&[5, 3], 1.0, 3),
    );
    for v in a.data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
}

#[test]
fn hybrid_with_zero_location_projection_equals_content() {
    let mut p = params(Scoring::Hybrid, 1, 3, 4, false, 4);
    p.location.as_mut().unwrap().projection = Tensor::zeros(&[3, 1]);
    let z = random_tensor(&[4], 1.0, 5);
    let prev = Tensor::vector(&[0.1, 0.6, 0.3]);
    let g = random_tensor(&[3, 3], 1.0, 6);
    let a = run_attend(&p, Scoring::Hybrid, &z, &prev, &g);
    let b = run_attend(&p, Scoring::Content, &z, &prev, &g);
    assert_eq!(a, b);
}

#[test]
fn hybrid_without_location_params_is_an_error() {
    let p = params(Scoring::Content, 1, 3, 4, false, 7);
    let mut sess = Session::new();
    let z = sess.leaf(Tensor::zeros(&[4]));
    let a = sess.leaf(Tensor::full(&[3], 1.0 / 3.0));
    let g = sess.leaf(Tensor::zeros(&[3, 3]));
    assert!(attend(&mut sess, z, a, g, &p, Scoring::Hybrid).is_err());
}

#[test]
fn attend_matches_literal_transcription() {
    for scoring in [Scoring::Content, Scoring::Hybrid] {
        let p = params(scoring, 1, 3, 4, false, 8);
        let z = random_tensor(&[4], 1.0, 9);
        let prev = Tensor::vector(&[0.5, 0.3, 0.2]);
        let g = random_tensor(&[3, 3], 1.0, 10);
        let got = run_attend(&p, scoring, &z, &prev, &g);
        let rows: Vec<Vec<f64>> = (0..3).map(|t| g.row(t).to_vec()).collect();
        let act = literal_scores(&p, z.data(), prev.data(), &rows, scoring == Scoring::Hybrid);
        let e: Vec<f64> = act
            .iter()
            .map(|a| a.iter().zip(p.v.data()).map(|(x, y)| x * y).sum())
            .collect();
        let expect = softmax(&e);
        for (x, y) in got.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12, "{scoring:?}: {x} vs {y}");
        }
    }
}

#[test]
fn context_examples() {
    let g = random_tensor(&[3, 4], 1.0, 11);
    let mut sess = Session::new();
    let gv = sess.leaf(g.clone());
    let uniform = sess.leaf(Tensor::full(&[3], 1.0 / 3.0));
    let c = context(&mut sess, uniform, gv, 3.0).unwrap();
    let plain: Vec<f64> = (0..4).map(|d| (0..3).map(|t| g.at(t, d)).sum()).collect();
    for (x, y) in sess.value(c).data().iter().zip(&plain) {
        assert!((x - y).abs() < 1e-12);
    }
    let onehot = sess.leaf(Tensor::vector(&[0.0, 1.0, 0.0]));
    let c = context(&mut sess, onehot, gv, 1.0).unwrap();
    assert_eq!(sess.value(c).data(), g.row(1));
    let alpha = [0.2, 0.5, 0.3];
    let av = sess.leaf(Tensor::vector(&alpha));
    let c = context(&mut sess, av, gv, 3.0).unwrap();
    for d in 0..4 {
        let expect: f64 = 3.0 * (0..3).map(|t| alpha[t] * g.at(t, d)).sum::<f64>();
        assert!((sess.value(c).data()[d] - expect).abs() < 1e-12);
    }
}

#[test]
fn output_head_examples() {
    let mut sess = Session::new();
    let c = sess.leaf(random_tensor(&[3], 1.0, 12));
    let out = output_head(&mut sess, c, &Linear::zeros(3, 4)).unwrap();
    for v in sess.value(out.log_probs).data() {
        assert!((v.exp() - 0.25).abs() < 1e-15);
    }
    let target = [0.1, 0.2, 0.3, 0.4];
    let mut head = Linear::zeros(3, 4);
    head.bias = Tensor::vector(&target.map(f64::ln));
    let out = output_head(&mut sess, c, &head).unwrap();
    for (v, t) in sess.value(out.log_probs).data().iter().zip(target) {
        assert!((v.exp() - t).abs() < 1e-12);
    }
    let out = output_head(&mut sess, c, &Linear::new(3, 4, &mut rng(13))).unwrap();
    let s: f64 = sess.value(out.log_probs).data().iter().map(|v| v.exp()).sum();
    assert!((s - 1.0).abs() < 1e-12);
    assert!(output_head(&mut sess, c, &Linear::zeros(5, 4)).is_err());
}

fn plm_zero_state(sess: &mut Session, n: usize) -> PlmState {
    PlmState {
        h: sess.leaf(Tensor::zeros(&[n])),
        c: sess.leaf(Tensor::zeros(&[n])),
    }
}

#[test]
fn plm_with_zero_params_outputs_zero() {
    let lstm = LstmParams::zeros(4 + 3, 3);
    let mut sess = Session::new();
    let z = sess.leaf(random_tensor(&[4], 1.0, 14));
    let c = sess.leaf(random_tensor(&[3], 1.0, 15));
    let st = plm_zero_state(&mut sess, 3);
    let next = plm_step(&mut sess, z, c, st, &lstm).unwrap();
    assert!(sess.value(next.h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn plm_input_width_is_labels_plus_hidden() {
    let cfg = AttentionConfig {
        plm: true,
        ..AttentionConfig::default()
    };
    let p = AttentionParams::new(&cfg, 6, 9, &mut rng(16)).unwrap();
    let lstm = p.plm.as_ref().unwrap();
    assert_eq!(lstm.input_dim(), 9 + 6);
    assert_eq!(lstm.cells(), 6);
    assert_eq!(p.u.shape(), &[6, 6]);
    let mut sess = Session::new();
    let z = sess.leaf(Tensor::zeros(&[8]));
    let c = sess.leaf(Tensor::zeros(&[6]));
    let st = plm_zero_state(&mut sess, 6);
    assert!(plm_step(&mut sess, z, c, st, lstm).is_err());
}

#[derive(Clone)]
struct Plm(LstmParams);

impl Parameterized for Plm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.0.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.0.visit_mut(prefix, f)
    }
}

#[test]
fn two_chained_plm_steps_match_finite_differences() {
    let model = Plm(LstmParams::new(3 + 2, 2, &mut rng(17)));
    let inputs: Vec<Tensor> = (0..4)
        .map(|i| random_tensor(&[if i % 2 == 0 { 3 } else { 2 }], 1.0, 18 + i))
        .collect();
    check_model(&model, usize::MAX, |m, sess| {
        let v = leaves(sess, &inputs);
        let st = plm_zero_state(sess, 2);
        let s1 = plm_step(sess, v[0], v[1], st, &m.0).unwrap();
        let s2 = plm_step(sess, v[2], v[3], s1, &m.0).unwrap();
        let x = sess.sum(s2.h).unwrap();
        let y = sess.sum(s1.h).unwrap();
        let y = sess.scale(y, 0.3).unwrap();
        sess.add(x, y).unwrap()
    })
    .assert_ok();
}

fn run_coma(
    p: &AttentionParams,
    scoring: Scoring,
    z: &Tensor,
    prev: &Tensor,
    g: &Tensor,
    gamma: f64,
) -> (Tensor, Tensor) {
    let mut sess = Session::new();
    let zv = sess.leaf(z.clone());
    let av = sess.leaf(prev.clone());
    let gv = sess.leaf(g.clone());
    let (a, c) = coma(&mut sess, zv, av, gv, p, scoring, gamma).unwrap();
    (sess.value(a).clone(), sess.value(c).clone())
}

#[test]
fn coma_in_one_dimension_equals_attend_and_context() {
    for scoring in [Scoring::Content, Scoring::Hybrid] {
        let mut p = params(scoring, 2, 1, 3, false, 19);
        p.v = Tensor::vector(&[1.0]);
        let z = random_tensor(&[3], 1.0, 20);
        let prev = Tensor::vector(&[0.1, 0.2, 0.3, 0.25, 0.15]);
        let g = random_tensor(&[5, 1], 1.0, 21);
        let (a, c) = run_coma(&p, scoring, &z, &prev, &g, 5.0);
        let mut sess = Session::new();
        let zv = sess.leaf(z);
        let av = sess.leaf(prev);
        let gv = sess.leaf(g);
        let alpha = attend(&mut sess, zv, av, gv, &p, scoring).unwrap();
        let c2 = context(&mut sess, alpha, gv, 5.0).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(sess.value(alpha).data())
            .all(|(x, y)| (x - y).abs() < 1e-12));
        assert!((c.item() - sess.value(c2).item()).abs() < 1e-12);
    }
}

#[test]
fn coma_row_with_equal_scores_is_uniform() {
    // With W = 0 and no location term every window position scores alike.
    let mut p = params(Scoring::Content, 1, 3, 4, false, 22);
    p.w = Tensor::zeros(&[3, 3]);
    let (a, _) = run_coma(
        &p,
        Scoring::Content,
        &random_tensor(&[4], 1.0, 23),
        &Tensor::full(&[3], 1.0 / 3.0),
        &random_tensor(&[3, 3], 1.0, 24),
        3.0,
    );
    for v in a.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn coma_matches_literal_transcription() {
    for scoring in [Scoring::Content, Scoring::Hybrid] {
        let p = params(scoring, 1, 3, 4, false, 25);
        let z = random_tensor(&[4], 1.0, 26);
        let prev = Tensor::vector(&[0.3, 0.3, 0.4]);
        let g = random_tensor(&[3, 3], 1.0, 27);
        let (a, c) = run_coma(&p, scoring, &z, &prev, &g, 3.0);
        assert_eq!(a.shape(), &[3, 3]);
        let rows: Vec<Vec<f64>> = (0..3).map(|t| g.row(t).to_vec()).collect();
        let e = literal_scores(&p, z.data(), prev.data(), &rows, scoring == Scoring::Hybrid);
        for j in 0..3 {
            let row: Vec<f64> = (0..3).map(|t| e[t][j]).collect();
            let w = softmax(&row);
            let cj: f64 = 3.0 * (0..3).map(|t| w[t] * rows[t][j]).sum::<f64>();
            for t in 0..3 {
                assert!((a.at(j, t) - w[t]).abs() < 1e-12);
            }
            assert!((c.data()[j] - cj).abs() < 1e-12);
        }
    }
}

fn sa_params(heads: usize, dk: usize, dv: usize, n: usize, seed: u64) -> SelfAttentionParams {
    let cfg = SelfAttentionConfig {
        tau: 1,
        heads,
        d_k: dk,
        d_v: dv,
    };
    SelfAttentionParams::new(&cfg, n, &mut rng(seed)).unwrap()
}

fn layer_norm_ref(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .zip(g)
        .zip(b)
        .map(|((v, g), b)| (v - mean) / (var + 1e-5).sqrt() * g + b)
        .collect()
}

#[test]
fn single_frame_self_attention() {
    let p = sa_params(2, 4, 4, 3, 28);
    let h = random_tensor(&[3], 1.0, 29);
    let mut sess = Session::new();
    let hv = sess.leaf(h.clone());
    let out = self_attention_block(&mut sess, &[hv], 0, &p).unwrap();
    for w in &out.weights {
        assert_eq!(sess.value(*w).data(), &[1.0]);
    }
    let b = matvec(&p.input, h.data());
    let v = matvec(&p.value, &b);
    let sum: Vec<f64> = v.iter().zip(&b).map(|(x, y)| x + y).collect();
    let y = layer_norm_ref(&sum, p.norm1_gain.data(), p.norm1_bias.data());
    let hid: Vec<f64> = matvec(&p.ffn_in.weight, &y)
        .iter()
        .zip(p.ffn_in.bias.data())
        .map(|(a, b)| (a + b).tanh())
        .collect();
    let ff: Vec<f64> = matvec(&p.ffn_out.weight, &hid)
        .iter()
        .zip(p.ffn_out.bias.data())
        .map(|(a, b)| a + b)
        .collect();
    let res: Vec<f64> = ff.iter().zip(&y).map(|(a, b)| a + b).collect();
    let expect = layer_norm_ref(&res, p.norm2_gain.data(), p.norm2_bias.data());
    for (x, y) in sess.value(out.output).data().iter().zip(&expect) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let p = sa_params(2, 4, 6, 3, 30);
    let h = random_tensor(&[3], 1.0, 31);
    let mut sess = Session::new();
    let window = leaves(&mut sess, &vec![h; 5]);
    let out = self_attention_block(&mut sess, &window, 2, &p).unwrap();
    for w in &out.weights {
        for v in sess.value(*w).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }
}

#[test]
fn two_frame_scalar_self_attention_by_hand() {
    let mut p = sa_params(1, 1, 1, 1, 32);
    p.input = Tensor::matrix(1, 1, vec![2.0]).unwrap();
    p.query = Tensor::matrix(1, 1, vec![0.5]).unwrap();
    p.key = Tensor::matrix(1, 1, vec![1.5]).unwrap();
    p.value = Tensor::matrix(1, 1, vec![-1.0]).unwrap();
    p.norm1_bias = Tensor::vector(&[0.25]);
    p.norm2_gain = Tensor::vector(&[3.0]);
    p.norm2_bias = Tensor::vector(&[-0.75]);
    // h = [1, 2], centre frame 1: b = [2, 4], q = 2, k = [3, 6], v = [-2, -4].
    let e: [f64; 2] = [6.0, 12.0];
    let a0 = 1.0 / (1.0 + (e[1] - e[0]).exp());
    let a1 = 1.0 - a0;
    let mut sess = Session::new();
    let window = leaves(&mut sess, &[Tensor::vector(&[1.0]), Tensor::vector(&[2.0])]);
    let out = self_attention_block(&mut sess, &window, 1, &p).unwrap();
    let w = sess.value(out.weights[0]).data();
    assert!((w[0] - a0).abs() < 1e-15 && (w[1] - a1).abs() < 1e-15);
    // A one-wide layer norm maps everything to its bias.
    assert!((sess.value(out.output).item() + 0.75).abs() < 1e-15);
}

#[test]
fn head_count_must_divide_widths() {
    let cfg = SelfAttentionConfig {
        tau: 1,
        heads: 3,
        d_k: 4,
        d_v: 6,
    };
    assert!(SelfAttentionParams::new(&cfg, 2, &mut rng(1)).is_err());
    let mut p = sa_params(2, 4, 4, 3, 33);
    p.heads = 3;
    let mut sess = Session::new();
    let h = sess.leaf(Tensor::zeros(&[3]));
    assert!(self_attention_block(&mut sess, &[h], 0, &p).is_err());
}

#[derive(Clone)]
struct Chain {
    encoder: StackParams,
    head: AttentionCtc,
}

impl Parameterized for Chain {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit("enc", f);
        self.head.visit(&format!("{prefix}att"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_mut("enc", f);
        self.head.visit_mut(&format!("{prefix}att"), f);
    }
}

fn chain_check(scoring: Scoring, plm: bool, coma_on: bool) {
    let enc_cfg = StackConfig {
        layers: 1,
        cells: 4,
        projection_dim: 4,
        ..StackConfig::default()
    };
    let att_cfg = AttentionConfig {
        tau: 1,
        scoring,
        plm,
        coma: coma_on,
        ..AttentionConfig::default()
    };
    let mut r = rng(40);
    let mut model = Chain {
        encoder: StackParams::new(&enc_cfg, 3, &mut r).unwrap(),
        head: AttentionCtc::new(att_cfg, 4, 4, &mut r).unwrap(),
    };
    model.visit_mut("", &mut |_, t| {
        *t = random_tensor(t.shape(), 0.5, t.len() as u64 * 7 + 1);
    });
    let x = random_tensor(&[5, 3], 1.0, 41);
    check_model(&model, 5, |m, sess| {
        let out = run_stack(sess, &x, &enc_cfg, &m.encoder).unwrap();
        let logits = m.head.forward(sess, out.hidden).unwrap();
        sess.ctc_loss(logits, &[1, 2, 3], 0).unwrap()
    })
    .assert_ok();
}

#[test]
fn end_to_end_gradient_content() {
    chain_check(Scoring::Content, false, false);
}

#[test]
fn end_to_end_gradient_hybrid_plm() {
    chain_check(Scoring::Hybrid, true, false);
}

#[test]
fn end_to_end_gradient_hybrid_plm_coma() {
    chain_check(Scoring::Hybrid, true, true);
}

#[test]
fn end_to_end_gradient_uniform() {
    chain_check(Scoring::Uniform, false, false);
}

#[derive(Clone)]
struct SaHead(SelfAttentionCtc);

impl Parameterized for SaHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.0.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.0.visit_mut(prefix, f)
    }
}

#[test]
fn self_attention_head_gradient() {
    let cfg = SelfAttentionConfig {
        tau: 1,
        heads: 2,
        d_k: 4,
        d_v: 4,
    };
    let head = SaHead(SelfAttentionCtc::new(cfg, 3, 4, &mut rng(50)).unwrap());
    let h = random_tensor(&[5, 3], 1.0, 51);
    check_model(&head, 6, |m, sess| {
        let hv = sess.leaf(h.clone());
        let logits = m.0.forward(sess, hv).unwrap();
        sess.ctc_loss(logits, &[1, 3], 0).unwrap()
    })
    .assert_ok();
}

#[test]
fn zero_window_uniform_head_is_a_plain_softmax_layer() {
    let cfg = AttentionConfig {
        tau: 0,
        scoring: Scoring::Uniform,
        ..AttentionConfig::default()
    };
    let head = AttentionCtc::new(cfg, 3, 4, &mut rng(60)).unwrap();
    let h = random_tensor(&[6, 3], 1.0, 61);
    let mut sess = Session::new();
    let hv = sess.leaf(h.clone());
    let logits = head.forward(&mut sess, hv).unwrap();
    let k0 = &head.params.kernels[0];
    for t in 0..6 {
        let c = matvec(k0, h.row(t));
        let z: Vec<f64> = matvec(&head.params.output.weight, &c)
            .iter()
            .zip(head.params.output.bias.data())
            .map(|(a, b)| a + b)
            .collect();
        for (x, y) in sess.value(logits).row(t).iter().zip(&z) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn window_edges_are_zero_padded() {
    // A single frame with τ = 2: only the centre kernel sees data.
    let cfg = AttentionConfig {
        tau: 2,
        scoring: Scoring::Uniform,
        ..AttentionConfig::default()
    };
    let head = AttentionCtc::new(cfg, 2, 3, &mut rng(62)).unwrap();
    let h = random_tensor(&[1, 2], 1.0, 63);
    let mut sess = Session::new();
    let hv = sess.leaf(h.clone());
    let logits = head.forward(&mut sess, hv).unwrap();
    let c = matvec(&head.params.kernels[2], h.row(0));
    let z: Vec<f64> = matvec(&head.params.output.weight, &c)
        .iter()
        .zip(head.params.output.bias.data())
        .map(|(a, b)| a + b)
        .collect();
    for (x, y) in sess.value(logits).row(0).iter().zip(&z) {
        assert!((x - y).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_weights_are_distributions(seed in any::<u64>(), hybrid in any::<bool>(), coma_on in any::<bool>(), plm in any::<bool>()) {
        let cfg = AttentionConfig {
            tau: 2,
            scoring: if hybrid { Scoring::Hybrid } else { Scoring::Content },
            plm,
            coma: coma_on,
            ..AttentionConfig::default()
        };
        let head = AttentionCtc::new(cfg, 3, 4, &mut rng(seed)).unwrap();
        let mut sess = Session::new();
        let hv = sess.leaf(random_tensor(&[6, 3], 2.0, seed ^ 1));
        let trace = head.trace(&mut sess, hv).unwrap();
        for w in &trace.weights {
            let v = sess.value(*w);
            prop_assert!(v.data().iter().all(|&x| x >= 0.0));
            if coma_on {
                for j in 0..v.cols() {
                    let s: f64 = (0..v.rows()).map(|t| v.at(t, j)).sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                }
            } else {
                prop_assert!((v.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn self_attention_weights_are_distributions(seed in any::<u64>(), heads in 1usize..=2, c in 1usize..6) {
        let p = sa_params(heads, 4, 4, 3, seed);
        let mut sess = Session::new();
        let hs: Vec<Tensor> = (0..c).map(|i| random_tensor(&[3], 2.0, seed ^ i as u64)).collect();
        let window = leaves(&mut sess, &hs);
        let out = self_attention_block(&mut sess, &window, c / 2, &p).unwrap();
        prop_assert_eq!(out.weights.len(), heads);
        for w in &out.weights {
            let v = sess.value(*w);
            prop_assert!(v.data().iter().all(|&x| x >= 0.0));
            prop_assert!((v.sum() - 1.0).abs() < 1e-9);
        }
    }
}
