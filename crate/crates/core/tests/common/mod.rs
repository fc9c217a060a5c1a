#![allow(dead_code)]

use mxctc::autodiff::{Graph, Session, Tensor, Var};
use mxctc::params::Parameterized;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_RTOL: f64 = 1e-3;
/// Absolute floor for entries whose true gradient is near zero, where the
/// central difference is dominated by rounding.
pub const FD_ATOL: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_RTOL * analytic.abs().max(numeric.abs()) + FD_ATOL
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
}

impl GradReport {
    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-6 {
            self.worst_rel = self.worst_rel.max((analytic - numeric).abs() / scale);
        }
        if !close(analytic, numeric) {
            self.failures
                .push(format!("{what}: analytic {analytic:.9e}, numeric {numeric:.9e}"));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn assert_ok(&self) {
        assert!(self.checked > 0, "nothing checked");
        assert!(
            self.failures.is_empty(),
            "{} of {} entries off:\n{}",
            self.failures.len(),
            self.checked,
            self.failures.join("\n")
        );
    }
}

/// Compares backward against central differences for every element of
/// every input tensor. `f` builds a scalar loss from leaves of `inputs`.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> GradReport {
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).expect("backward");
    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v);
        for k in 0..work[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + FD_STEP;
            let up = eval(&work);
            work[i].data_mut()[k] = orig - FD_STEP;
            let down = eval(&work);
            work[i].data_mut()[k] = orig;
            report.record(
                format!("input {i}[{k}]"),
                analytic.data()[k],
                (up - down) / (2.0 * FD_STEP),
            );
        }
    }
    report
}

/// Same check over the named parameters of a model. At most `per_tensor`
/// entries of each tensor are probed, spread evenly.
pub fn check_model<M: Parameterized + Clone>(
    model: &M,
    per_tensor: usize,
    f: impl Fn(&M, &mut Session) -> Var,
) -> GradReport {
    let mut sess = Session::new();
    let loss = f(model, &mut sess);
    let grads = sess.backward(loss).expect("backward");
    let mut analytic = Vec::new();
    model.visit("", &mut |name, t| {
        let g = sess
            .bound(t)
            .map(|v| grads.get(v))
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        analytic.push((name.to_string(), g));
    });
    let eval = |m: &M| {
        let mut s = Session::new();
        let l = f(m, &mut s);
        s.value(l).item()
    };
    let mut report = GradReport::default();
    for (idx, (name, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        let stride = len.div_ceil(per_tensor.max(1)).max(1);
        for k in (0..len).step_by(stride) {
            let numeric = {
                let mut m = model.clone();
                perturb(&mut m, idx, k, FD_STEP);
                let up = eval(&m);
                perturb(&mut m, idx, k, -2.0 * FD_STEP);
                let down = eval(&m);
                (up - down) / (2.0 * FD_STEP)
            };
            report.record(format!("{name}[{k}]"), grad.data()[k], numeric);
        }
    }
    report
}

fn perturb<M: Parameterized>(model: &mut M, tensor: usize, k: usize, delta: f64) {
    let mut i = 0;
    model.visit_mut("", &mut |_, t| {
        if i == tensor {
            t.data_mut()[k] += delta;
        }
        i += 1;
    });
}

pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, scale, &mut rng(seed))
}
