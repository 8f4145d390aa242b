// Helpers shared by the integration test binaries; each binary compiles its
// own copy, so not every helper is used everywhere.
#![allow(dead_code)]

use ndarray::Array2;
use pll_core::model::Model;
use pll_core::types::SupervisedDataset;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Reads the flat parameter at `idx` in `param_slices` order.
pub fn param_get(model: &Model, idx: usize) -> f64 {
    let mut at = idx;
    for s in model.param_slices() {
        if at < s.len() {
            return s[at];
        }
        at -= s.len();
    }
    panic!("parameter index {idx} out of range");
}

/// Writes the flat parameter at `idx` in `param_slices` order.
pub fn param_set(model: &mut Model, idx: usize, v: f64) {
    let mut at = idx;
    for s in model.param_slices_mut() {
        if at < s.len() {
            s[at] = v;
            return;
        }
        at -= s.len();
    }
    panic!("parameter index {idx} out of range");
}

/// Central-difference gradient check. Compares the analytic gradient of
/// `loss` against (L(p+h) - L(p-h)) / 2h coordinate by coordinate and
/// returns the worst relative error, with the denominator floored so a
/// near-zero coordinate is judged on absolute error.
pub fn gradcheck<F>(model: &Model, loss: F) -> f64
where
    F: Fn(&Model) -> (f64, Model),
{
    let (_, grad) = loss(model);
    let analytic: Vec<f64> = grad
        .param_slices()
        .into_iter()
        .flatten()
        .copied()
        .collect();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let orig = param_get(&probe, idx);
        param_set(&mut probe, idx, orig + h);
        let up = loss(&probe).0;
        param_set(&mut probe, idx, orig - h);
        let down = loss(&probe).0;
        param_set(&mut probe, idx, orig);
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

/// Equal-count Gaussian blobs: class c sits at radius `radius` and angle
/// 2*pi*c/k in the plane, unit variance in both coordinates.
pub fn make_blobs(n: usize, k: usize, radius: f64, seed: u64) -> SupervisedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        features[(i, 0)] = radius * angle.cos() + dx;
        features[(i, 1)] = radius * angle.sin() + dy;
        labels.push(c);
    }
    SupervisedDataset::new(features, labels, k).expect("blob construction is valid")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
