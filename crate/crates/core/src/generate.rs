//! Candidate-set generation. A fully labeled dataset is corrupted into a
//! partially labeled one by drawing, for each example, a set of labels that
//! always contains the true one.
//!
//! Two generation processes are provided. The uniform process draws each
//! candidate set Y with probability 1 / (2^(k-1) - 1) among the sets
//! containing the true label; it is realized exactly by including every other
//! label independently with probability 1/2 and rejecting the draw that
//! includes all of them. The transition-matrix process generalizes the coin
//! to a per-pair probability T[i][j] of including label j when the true label
//! is i, again rejecting the full set.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{CandidateSet, LabelSpace, PartialDataset, SupervisedDataset};

/// The uniform generation process over sets containing the true label.
#[derive(Debug, Clone, Copy)]
pub struct UniformGenerationModel {
    space: LabelSpace,
}

impl UniformGenerationModel {
    pub fn new(k: usize) -> Result<Self> {
        Ok(UniformGenerationModel {
            space: LabelSpace::new(k)?,
        })
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    pub fn sample<R: Rng + ?Sized>(&self, true_label: usize, rng: &mut R) -> Result<CandidateSet> {
        sample_uniform_candidate_set(self.k(), true_label, rng)
    }
}

/// Pairwise inclusion probabilities: entry (i, j) is the probability that
/// label j joins the candidate set when the true label is i. The diagonal is
/// 1 because the true label is always included.
#[derive(Debug, Clone)]
pub struct TransitionMatrixModel {
    t: Array2<f64>,
}

impl TransitionMatrixModel {
    pub fn new(t: Array2<f64>) -> Result<Self> {
        if t.nrows() != t.ncols() {
            return Err(Error::ShapeMismatch {
                context: "transition matrix",
                expected: "a square matrix".into(),
                got: format!("{} x {}", t.nrows(), t.ncols()),
            });
        }
        LabelSpace::new(t.nrows())?;
        for ((i, j), &v) in t.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "T[{i}][{j}] = {v} is not a probability"
                )));
            }
            if i == j && (v - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "T[{i}][{i}] = {v}; the true label must be included with probability 1"
                )));
            }
        }
        Ok(TransitionMatrixModel { t })
    }

    pub fn k(&self) -> usize {
        self.t.nrows()
    }

    pub fn t(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn sample<R: Rng + ?Sized>(&self, true_label: usize, rng: &mut R) -> Result<CandidateSet> {
        sample_tmatrix_candidate_set(self, true_label, rng)
    }

    /// Entropy of the row-normalized matrix; see `entropy_of_t`.
    pub fn normalized_entropy(&self) -> Result<NormalizedTransition> {
        entropy_of_t(&self.t)
    }
}

/// Either generation process, for call sites configured at runtime.
#[derive(Debug, Clone)]
pub enum GenerationModel {
    Uniform(UniformGenerationModel),
    Matrix(TransitionMatrixModel),
}

impl GenerationModel {
    pub fn k(&self) -> usize {
        match self {
            GenerationModel::Uniform(m) => m.k(),
            GenerationModel::Matrix(m) => m.k(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, true_label: usize, rng: &mut R) -> Result<CandidateSet> {
        match self {
            GenerationModel::Uniform(m) => m.sample(true_label, rng),
            GenerationModel::Matrix(m) => m.sample(true_label, rng),
        }
    }
}

/// Draws a candidate set uniformly among the 2^(k-1) - 1 sets containing
/// `true_label`.
///
/// Each other label joins independently with probability 1/2; the draw that
/// includes all of them (the full set) is rejected and retried, which happens
/// with probability 2^-(k-1) per attempt. Conditioned on acceptance every
/// admissible set is equally likely.
pub fn sample_uniform_candidate_set<R: Rng + ?Sized>(
    k: usize,
    true_label: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    LabelSpace::new(k)?;
    if true_label >= k {
        return Err(Error::OutOfRange { index: true_label, k });
    }
    let mut included = Vec::with_capacity(k);
    loop {
        included.clear();
        included.push(true_label);
        for j in (0..k).filter(|&j| j != true_label) {
            if rng.gen_bool(0.5) {
                included.push(j);
            }
        }
        if included.len() < k {
            return CandidateSet::from_indices(k, &included);
        }
    }
}

/// Draws a candidate set under the transition-matrix process: label j joins
/// with probability T[true_label][j], and the full set is rejected.
///
/// Fails with `DegenerateMatrix` when every off-diagonal entry of the row is
/// 1, because then every draw produces the full set.
pub fn sample_tmatrix_candidate_set<R: Rng + ?Sized>(
    model: &TransitionMatrixModel,
    true_label: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    let k = model.k();
    if true_label >= k {
        return Err(Error::OutOfRange { index: true_label, k });
    }
    let row = model.t.row(true_label);
    if (0..k).filter(|&j| j != true_label).all(|j| row[j] >= 1.0) {
        return Err(Error::DegenerateMatrix { row: true_label });
    }
    let mut included = Vec::with_capacity(k);
    loop {
        included.clear();
        included.push(true_label);
        for j in (0..k).filter(|&j| j != true_label) {
            if rng.gen_bool(row[j]) {
                included.push(j);
            }
        }
        if included.len() < k {
            return CandidateSet::from_indices(k, &included);
        }
    }
}

/// Corrupts a fully labeled dataset into a partially labeled one. The true
/// labels are kept as hidden labels for evaluation.
///
/// Example i is drawn from its own generator stream derived from
/// (seed, i), so the output is independent of iteration order.
pub fn generate_partial_dataset(
    ds: &SupervisedDataset,
    model: &GenerationModel,
    seed: u64,
) -> Result<PartialDataset> {
    if model.k() != ds.k() {
        return Err(Error::ShapeMismatch {
            context: "generation model",
            expected: format!("k = {}", ds.k()),
            got: format!("k = {}", model.k()),
        });
    }
    let mut candidates = Vec::with_capacity(ds.n());
    for (i, &y) in ds.labels().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        candidates.push(model.sample(y, &mut rng)?);
    }
    PartialDataset::new(
        ds.features().clone(),
        candidates,
        Some(ds.labels().to_vec()),
        ds.k(),
    )
}

/// A row-normalized transition matrix together with its entropy.
#[derive(Debug, Clone)]
pub struct NormalizedTransition {
    p: Array2<f64>,
    entropy: f64,
}

impl NormalizedTransition {
    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn entropy(&self) -> f64 {
        self.entropy
    }
}

/// Normalizes each row of T to a distribution and returns the mean row
/// entropy, -(1/k) sum_ij P[i][j] ln P[i][j], with 0 ln 0 taken as 0.
///
/// This is the scalar used to compare how concentrated different generation
/// processes are; a diagonal matrix scores exactly 0.
pub fn entropy_of_t(t: &Array2<f64>) -> Result<NormalizedTransition> {
    if t.nrows() != t.ncols() || t.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            context: "entropy of T",
            expected: "a nonempty square matrix".into(),
            got: format!("{} x {}", t.nrows(), t.ncols()),
        });
    }
    for ((i, j), &v) in t.indexed_iter() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "T[{i}][{j}] = {v} must be finite and nonnegative"
            )));
        }
    }
    let k = t.nrows();
    let mut p = t.clone();
    for (i, mut row) in p.rows_mut().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if sum <= 0.0 {
            return Err(Error::ZeroRow { row: i });
        }
        row.mapv_inplace(|v| v / sum);
    }
    let mut entropy = 0.0;
    for &v in p.iter() {
        if v > 0.0 {
            entropy -= v * v.ln();
        }
    }
    entropy /= k as f64;
    Ok(NormalizedTransition { p, entropy })
}

/// Probability that a fixed other label is included under the uniform
/// process: (2^(k-2) - 1) / (2^(k-1) - 1). Exact for k <= 54.
pub fn uniform_marginal_inclusion(k: usize) -> Result<f64> {
    LabelSpace::new(k)?;
    if k - 1 <= 53 {
        Ok((((1u64 << (k - 2)) - 1) as f64) / (((1u64 << (k - 1)) - 1) as f64))
    } else {
        Ok(0.5)
    }
}

/// Expected candidate-set size under the uniform process:
/// 1 + (k-1) (2^(k-2) - 1) / (2^(k-1) - 1).
pub fn uniform_mean_set_size(k: usize) -> Result<f64> {
    Ok(1.0 + (k as f64 - 1.0) * uniform_marginal_inclusion(k)?)
}

/// The transition matrix whose off-diagonal entries equal the uniform
/// process's marginal inclusion probability. Useful for entropy comparisons
/// between the two generation processes.
pub fn uniform_marginal_tmatrix(k: usize) -> Result<TransitionMatrixModel> {
    let m = uniform_marginal_inclusion(k)?;
    let mut t = Array2::from_elem((k, k), m);
    for i in 0..k {
        t[(i, i)] = 1.0;
    }
    TransitionMatrixModel::new(t)
}
