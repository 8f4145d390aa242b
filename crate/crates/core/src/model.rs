//! Classifiers and their losses. Two architectures are supported, a linear
//! map and a d-500-k ReLU network, both producing softmax probabilities in
//! double precision. Each loss returns the exact analytic gradient alongside
//! the value; the heavy lifting happens in batch form so training can use
//! matrix products throughout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{CandidateSet, LabelSpace, ModelSpec};

/// A differentiable classifier. Gradients are represented by a second value
/// of this same type with identical shapes, produced by the loss functions
/// and by `zeros_like`.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear {
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

impl Model {
    /// Fresh model with weights drawn from a centered uniform distribution
    /// scaled by 1/sqrt(fan_in) and zero biases. Draw order is fixed
    /// (row-major, first layer first) so equal seeds give equal models.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, d: usize, k: usize, rng: &mut R) -> Result<Self> {
        LabelSpace::new(k)?;
        if d == 0 {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        Ok(match spec {
            ModelSpec::Linear => Model::Linear {
                w: uniform_init(k, d, d, rng),
                b: Array1::zeros(k),
            },
            ModelSpec::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::Config("mlp hidden width must be positive".into()));
                }
                Model::Mlp {
                    w1: uniform_init(hidden, d, d, rng),
                    b1: Array1::zeros(hidden),
                    w2: uniform_init(k, hidden, hidden, rng),
                    b2: Array1::zeros(k),
                }
            }
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Linear { .. } => ModelSpec::Linear,
            Model::Mlp { w1, .. } => ModelSpec::Mlp { hidden: w1.nrows() },
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Model::Linear { w, .. } => w.ncols(),
            Model::Mlp { w1, .. } => w1.ncols(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Model::Linear { w, .. } => w.nrows(),
            Model::Mlp { w2, .. } => w2.nrows(),
        }
    }

    /// Same shapes, all parameters zero. The canonical gradient container.
    pub fn zeros_like(&self) -> Model {
        match self {
            Model::Linear { w, b } => Model::Linear {
                w: Array2::zeros(w.dim()),
                b: Array1::zeros(b.len()),
            },
            Model::Mlp { w1, b1, w2, b2 } => Model::Mlp {
                w1: Array2::zeros(w1.dim()),
                b1: Array1::zeros(b1.len()),
                w2: Array2::zeros(w2.dim()),
                b2: Array1::zeros(b2.len()),
            },
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter storage in a fixed order (layer by layer, weights before
    /// biases), for the optimizer and the checkpoint writer.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Model::Linear { w, b } => vec![
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ],
            Model::Mlp { w1, b1, w2, b2 } => vec![
                w1.as_slice().expect("standard layout"),
                b1.as_slice().expect("standard layout"),
                w2.as_slice().expect("standard layout"),
                b2.as_slice().expect("standard layout"),
            ],
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Linear { w, b } => vec![
                w.as_slice_mut().expect("standard layout"),
                b.as_slice_mut().expect("standard layout"),
            ],
            Model::Mlp { w1, b1, w2, b2 } => vec![
                w1.as_slice_mut().expect("standard layout"),
                b1.as_slice_mut().expect("standard layout"),
                w2.as_slice_mut().expect("standard layout"),
                b2.as_slice_mut().expect("standard layout"),
            ],
        }
    }

    /// Single-example forward pass with a numerically stable softmax.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Prediction> {
        if x.len() != self.d() {
            return Err(Error::ShapeMismatch {
                context: "forward input",
                expected: format!("{} features", self.d()),
                got: format!("{}", x.len()),
            });
        }
        let x2 = x.insert_axis(Axis(0));
        let fwd = self.forward_batch(x2)?;
        Ok(Prediction {
            logits: fwd.logits.row(0).to_owned(),
            probs: fwd.probs.row(0).to_owned(),
        })
    }

    /// Batch forward pass keeping the intermediates needed for gradients.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<BatchForward> {
        if x.ncols() != self.d() {
            return Err(Error::ShapeMismatch {
                context: "forward input",
                expected: format!("{} features", self.d()),
                got: format!("{}", x.ncols()),
            });
        }
        let (logits, hidden) = match self {
            Model::Linear { w, b } => (x.dot(&w.t()) + b, None),
            Model::Mlp { w1, b1, w2, b2 } => {
                let mut h = x.dot(&w1.t()) + b1;
                h.mapv_inplace(|v| v.max(0.0));
                (h.dot(&w2.t()) + b2, Some(h))
            }
        };
        let (probs, logprobs) = softmax_rows(&logits);
        Ok(BatchForward {
            logits,
            probs,
            logprobs,
            hidden,
        })
    }

    /// Backpropagates per-example logit gradients into parameter space.
    fn backward(&self, x: ArrayView2<f64>, fwd: &BatchForward, dlogits: &Array2<f64>) -> Model {
        match self {
            Model::Linear { .. } => Model::Linear {
                w: dlogits.t().dot(&x),
                b: dlogits.sum_axis(Axis(0)),
            },
            Model::Mlp { w2, .. } => {
                let h = fwd.hidden.as_ref().expect("mlp forward keeps activations");
                let dw2 = dlogits.t().dot(h);
                let db2 = dlogits.sum_axis(Axis(0));
                let mut dh = dlogits.dot(w2);
                dh.zip_mut_with(h, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                Model::Mlp {
                    w1: dh.t().dot(&x),
                    b1: dh.sum_axis(Axis(0)),
                    w2: dw2,
                    b2: db2,
                }
            }
        }
    }
}

/// One example's scores: raw logits f(x) and softmax probabilities g(x).
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Batch forward results plus the intermediates backward needs.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub logprobs: Array2<f64>,
    hidden: Option<Array2<f64>>,
}

fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut probs = logits.clone();
    let mut logprobs = logits.clone();
    for (mut prow, mut lrow) in probs.rows_mut().into_iter().zip(logprobs.rows_mut()) {
        let max = prow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in prow.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let ln_sum = sum.ln();
        for (p, l) in prow.iter_mut().zip(lrow.iter_mut()) {
            *p /= sum;
            *l = (*l - max) - ln_sum;
        }
    }
    (probs, logprobs)
}

fn check_batch(
    model: &Model,
    x: ArrayView2<f64>,
    targets: usize,
    what: &'static str,
) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            context: what,
            expected: "at least one example".into(),
            got: "an empty batch".into(),
        });
    }
    if targets != x.nrows() {
        return Err(Error::ShapeMismatch {
            context: what,
            expected: format!("{} targets for {} rows", x.nrows(), x.nrows()),
            got: format!("{targets}"),
        });
    }
    if x.ncols() != model.d() {
        return Err(Error::ShapeMismatch {
            context: what,
            expected: format!("{} features", model.d()),
            got: format!("{}", x.ncols()),
        });
    }
    Ok(())
}

fn check_candidates(model: &Model, cands: &[&CandidateSet]) -> Result<()> {
    if let Some(bad) = cands.iter().position(|c| c.k() != model.k()) {
        return Err(Error::ShapeMismatch {
            context: "candidate sets",
            expected: format!("k = {}", model.k()),
            got: format!("k = {} at batch row {bad}", cands[bad].k()),
        });
    }
    Ok(())
}

/// Mean cross-entropy against the true labels; per-example logit gradient is
/// g(x) - onehot(y), scaled by 1/B.
pub fn supervised_loss_and_grad(
    model: &Model,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Model)> {
    check_batch(model, x, labels.len(), "supervised loss")?;
    let k = model.k();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::OutOfRange { index: bad, k });
    }
    let b = labels.len();
    let scale = 1.0 / b as f64;
    let fwd = model.forward_batch(x)?;

    let mut loss = 0.0;
    let mut dlogits = fwd.probs.clone();
    for (o, &y) in labels.iter().enumerate() {
        loss += -fwd.logprobs[(o, y)];
        dlogits[(o, y)] -= 1.0;
    }
    loss *= scale;
    dlogits.mapv_inplace(|v| v * scale);
    Ok((loss, model.backward(x, &fwd, &dlogits)))
}

/// Confidence-reweighted cross-entropy over candidates:
/// (1/(2B)) sum_o sum_i w_oi (-ln g_i(x_o)) with w_o = conf row o
/// normalized over the candidate set. The weights are constants here; no
/// gradient flows through the confidence table, so the per-example logit
/// gradient is (g(x_o) - w_o) / (2B).
pub fn rc_loss_and_grad(
    model: &Model,
    x: ArrayView2<f64>,
    cands: &[&CandidateSet],
    conf: ArrayView2<f64>,
) -> Result<(f64, Model)> {
    check_batch(model, x, cands.len(), "rc loss")?;
    check_candidates(model, cands)?;
    let k = model.k();
    if conf.dim() != (x.nrows(), k) {
        return Err(Error::ShapeMismatch {
            context: "rc confidence rows",
            expected: format!("{} x {}", x.nrows(), k),
            got: format!("{} x {}", conf.nrows(), conf.ncols()),
        });
    }
    let b = x.nrows();
    let scale = 1.0 / (2.0 * b as f64);
    let fwd = model.forward_batch(x)?;

    let mut loss = 0.0;
    let mut dlogits = fwd.probs.clone();
    for (o, set) in cands.iter().enumerate() {
        let mass: f64 = set.iter().map(|i| conf[(o, i)]).sum();
        if mass <= 0.0 || mass.is_nan() {
            return Err(Error::ZeroConfidence { example: o });
        }
        for i in set.iter() {
            let w = conf[(o, i)] / mass;
            loss += w * -fwd.logprobs[(o, i)];
            dlogits[(o, i)] -= w;
        }
    }
    loss *= scale;
    dlogits.mapv_inplace(|v| v * scale);
    Ok((loss, model.backward(x, &fwd, &dlogits)))
}

/// Candidate-mass cross-entropy: (1/B) sum_o [ln(2^(k-1) - 1) -
/// ln(sum_{y in Y_o} g_y(x_o))]. The constant keeps the loss aligned with
/// the corrupted density it estimates and contributes no gradient; the
/// per-example logit gradient is g(x_o) minus g masked to Y_o and
/// renormalized, scaled by 1/B.
pub fn cc_loss_and_grad(
    model: &Model,
    x: ArrayView2<f64>,
    cands: &[&CandidateSet],
) -> Result<(f64, Model)> {
    check_batch(model, x, cands.len(), "cc loss")?;
    check_candidates(model, cands)?;
    let b = x.nrows();
    let scale = 1.0 / b as f64;
    let ln_sets = LabelSpace::new(model.k())?.ln_sets_containing_label();
    let fwd = model.forward_batch(x)?;

    let mut loss = 0.0;
    let mut dlogits = fwd.probs.clone();
    for (o, set) in cands.iter().enumerate() {
        // ln sum_{y in Y} g_y via a second log-sum-exp over the candidate
        // log-probabilities, stable even when every candidate prob
        // underflows.
        let max = set
            .iter()
            .map(|i| fwd.logprobs[(o, i)])
            .fold(f64::NEG_INFINITY, f64::max);
        let ln_mass = max
            + set
                .iter()
                .map(|i| (fwd.logprobs[(o, i)] - max).exp())
                .sum::<f64>()
                .ln();
        loss += ln_sets - ln_mass;
        for i in set.iter() {
            dlogits[(o, i)] -= (fwd.logprobs[(o, i)] - ln_mass).exp();
        }
    }
    loss *= scale;
    dlogits.mapv_inplace(|v| v * scale);
    Ok((loss, model.backward(x, &fwd, &dlogits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CandidateSet;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A linear model over a single constant feature whose bias realizes the
    /// given logits; softmax of ln(p) recovers p exactly when p sums to 1.
    fn model_with_logits(logits: &[f64]) -> (Model, Array2<f64>) {
        let k = logits.len();
        let model = Model::Linear {
            w: Array2::zeros((k, 1)),
            b: Array1::from_vec(logits.to_vec()),
        };
        (model, array![[0.0]])
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Model::new(ModelSpec::Linear, 4, 3, &mut rng).unwrap();
        if let Model::Linear { w, .. } = &mut m {
            w.fill(0.0);
        }
        let p = m.forward(array![1.0, -2.0, 0.5, 3.0].view()).unwrap();
        for &v in p.probs.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_direct_arithmetic() {
        let (m, x) = model_with_logits(&[2f64.ln(), 0.0, 0.0]);
        let p = m.forward(x.row(0)).unwrap();
        assert!((p.probs[0] - 0.5).abs() < 1e-15);
        assert!((p.probs[1] - 0.25).abs() < 1e-15);
        assert!((p.probs[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let (m1, x) = model_with_logits(&[1.0, -2.0, 0.3]);
        let (m2, _) = model_with_logits(&[1.0 + 500.0, -2.0 + 500.0, 0.3 + 500.0]);
        let p1 = m1.forward(x.row(0)).unwrap();
        let p2 = m2.forward(x.row(0)).unwrap();
        for (a, b) in p1.probs.iter().zip(p2.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Extreme logits must not produce NaN.
        let (m3, _) = model_with_logits(&[800.0, 0.0, -800.0]);
        let p3 = m3.forward(x.row(0)).unwrap();
        assert!(p3.probs.iter().all(|v| v.is_finite()));
        assert!((p3.probs.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::new(ModelSpec::Linear, 4, 3, &mut rng).unwrap();
        assert!(matches!(
            m.forward(array![1.0, 2.0].view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn init_scales_with_fan_in_and_zeroes_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::new(ModelSpec::Mlp { hidden: 16 }, 100, 5, &mut rng).unwrap();
        if let Model::Mlp { w1, b1, w2, b2 } = &m {
            assert!(w1.iter().all(|v| v.abs() <= 0.1));
            assert!(w2.iter().all(|v| v.abs() <= 0.25));
            assert!(b1.iter().all(|&v| v == 0.0));
            assert!(b2.iter().all(|&v| v == 0.0));
        } else {
            panic!("expected mlp");
        }
    }

    #[test]
    fn rc_loss_matches_hand_computed_example() {
        let (m, x) = model_with_logits(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]);
        let set = CandidateSet::from_indices(3, &[0, 1]).unwrap();
        let conf = array![[1.0, 1.0, 0.0]];
        let (loss, _) = rc_loss_and_grad(&m, x.view(), &[&set], conf.view()).unwrap();
        assert!((loss - 0.4742799962214703).abs() < 1e-12, "loss={loss}");
    }

    #[test]
    fn rc_loss_on_singleton_is_half_cross_entropy() {
        let (m, x) = model_with_logits(&[0.2, -1.0, 0.7]);
        let set = CandidateSet::from_indices(3, &[2]).unwrap();
        let conf = array![[0.0, 0.0, 4.2]];
        let (rc, rc_grads) = rc_loss_and_grad(&m, x.view(), &[&set], conf.view()).unwrap();
        let (ce, ce_grads) = supervised_loss_and_grad(&m, x.view(), &[2]).unwrap();
        assert!((rc - 0.5 * ce).abs() < 1e-12);
        for (a, b) in rc_grads
            .param_slices()
            .iter()
            .zip(ce_grads.param_slices().iter())
        {
            for (ga, gb) in a.iter().zip(b.iter()) {
                assert!((ga - 0.5 * gb).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rc_loss_rejects_zero_confidence_mass() {
        let (m, x) = model_with_logits(&[0.0, 0.0, 0.0]);
        let set = CandidateSet::from_indices(3, &[0, 1]).unwrap();
        let conf = array![[0.0, 0.0, 5.0]];
        assert!(matches!(
            rc_loss_and_grad(&m, x.view(), &[&set], conf.view()),
            Err(Error::ZeroConfidence { example: 0 })
        ));
    }

    #[test]
    fn cc_loss_matches_hand_computed_example() {
        let (m, x) = model_with_logits(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]);
        let set = CandidateSet::from_indices(3, &[0, 1]).unwrap();
        let (loss, _) = cc_loss_and_grad(&m, x.view(), &[&set]).unwrap();
        assert!((loss - 1.3217558399823195).abs() < 1e-12, "loss={loss}");
    }

    #[test]
    fn cc_loss_on_singleton_is_cross_entropy_plus_constant() {
        let (m, x) = model_with_logits(&[0.4, 1.2, -0.3]);
        let set = CandidateSet::from_indices(3, &[1]).unwrap();
        let (cc, cc_grads) = cc_loss_and_grad(&m, x.view(), &[&set]).unwrap();
        let (ce, ce_grads) = supervised_loss_and_grad(&m, x.view(), &[1]).unwrap();
        assert!((cc - (ce + 3f64.ln())).abs() < 1e-12);
        for (a, b) in cc_grads
            .param_slices()
            .iter()
            .zip(ce_grads.param_slices().iter())
        {
            for (ga, gb) in a.iter().zip(b.iter()) {
                assert_eq!(ga.to_bits(), gb.to_bits());
            }
        }
    }

    #[test]
    fn cc_loss_never_falls_below_the_set_count_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = 5;
        let ln_sets = LabelSpace::new(k).unwrap().ln_sets_containing_label();
        for _ in 0..50 {
            let m = Model::new(ModelSpec::Linear, 3, k, &mut rng).unwrap();
            let x = Array2::from_shape_vec(
                (1, 3),
                (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let size = rng.gen_range(1..k);
            let mut idx: Vec<usize> = (0..k).collect();
            // Take a random subset of the labels of the drawn size.
            for i in 0..size {
                let j = rng.gen_range(i..k);
                idx.swap(i, j);
            }
            let set = CandidateSet::from_indices(k, &idx[..size]).unwrap();
            let (loss, _) = cc_loss_and_grad(&m, x.view(), &[&set]).unwrap();
            assert!(loss >= ln_sets - 1e-12, "loss={loss} < {ln_sets}");
        }
    }

    #[test]
    fn supervised_loss_on_uniform_probs_is_ln_k() {
        let k = 10;
        let (m, x) = model_with_logits(&vec![0.0; k]);
        let (loss, _) = supervised_loss_and_grad(&m, x.view(), &[7]).unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn supervised_loss_vanishes_on_confident_correct_probs() {
        let (m, x) = model_with_logits(&[30.0, 0.0, 0.0]);
        let (loss, _) = supervised_loss_and_grad(&m, x.view(), &[0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn losses_reject_empty_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::new(ModelSpec::Linear, 2, 3, &mut rng).unwrap();
        let x = Array2::<f64>::zeros((0, 2));
        assert!(supervised_loss_and_grad(&m, x.view(), &[]).is_err());
        assert!(cc_loss_and_grad(&m, x.view(), &[]).is_err());
    }
}
