//! Core vocabulary: label spaces, candidate label sets, datasets, and run
//! configuration. Everything here is validated on construction and immutable
//! afterwards, so downstream code can rely on the invariants instead of
//! re-checking them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest k for which the full family of candidate sets (2^k - 2 of them)
/// may be enumerated explicitly.
pub const ENUMERATION_LIMIT: usize = 20;

/// A validated number of classes, k >= 2.
///
/// Carries the combinatorial constants of the candidate-set family so the
/// formulas live in one place: a label y admits 2^(k-1) - 1 candidate sets
/// containing it, out of 2^k - 2 admissible sets overall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSpace {
    k: usize,
}

impl LabelSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::KTooSmall { k });
        }
        Ok(LabelSpace { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// 2^(k-1) - 1, the number of admissible candidate sets containing a
    /// fixed label. Exact as an f64 for k <= 53.
    pub fn sets_containing_label(&self) -> f64 {
        if self.k - 1 <= 53 {
            ((1u64 << (self.k - 1)) - 1) as f64
        } else {
            2f64.powi(self.k as i32 - 1)
        }
    }

    /// ln(2^(k-1) - 1), evaluated in log space for large k so it never
    /// overflows: (k-1) ln 2 + ln(1 - 2^-(k-1)).
    pub fn ln_sets_containing_label(&self) -> f64 {
        if self.k - 1 <= 60 {
            (((1u64 << (self.k - 1)) - 1) as f64).ln()
        } else {
            (self.k as f64 - 1.0) * std::f64::consts::LN_2
                + (-(2f64.powi(-(self.k as i32 - 1)))).ln_1p()
        }
    }
}

/// A set of candidate labels attached to one training example: at least one
/// label, never all k. Bit i of the packed words is set iff label i is a
/// candidate.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CandidateSet {
    k: usize,
    words: Vec<u64>,
}

impl CandidateSet {
    /// Builds a set from label indices. Duplicates are harmless; the result
    /// must contain at least one label and exclude at least one.
    pub fn from_indices(k: usize, indices: &[usize]) -> Result<Self> {
        let space = LabelSpace::new(k)?;
        let mut words = vec![0u64; k.div_ceil(64)];
        for &i in indices {
            if i >= k {
                return Err(Error::OutOfRange { index: i, k });
            }
            words[i / 64] |= 1u64 << (i % 64);
        }
        let set = CandidateSet { k: space.k(), words };
        match set.len() {
            0 => Err(Error::EmptySet),
            n if n == k => Err(Error::FullSet { k }),
            _ => Ok(set),
        }
    }

    /// Builds a set from the low k bits of `mask`. Only meaningful for
    /// k <= 64; used by the enumeration of the whole family.
    pub(crate) fn from_mask(k: usize, mask: u64) -> Result<Self> {
        debug_assert!(k <= 64);
        if mask == 0 {
            return Err(Error::EmptySet);
        }
        if k < 64 && mask >> k != 0 {
            return Err(Error::OutOfRange {
                index: 63 - mask.leading_zeros() as usize,
                k,
            });
        }
        if mask.count_ones() as usize == k {
            return Err(Error::FullSet { k });
        }
        Ok(CandidateSet { k, words: vec![mask] })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.k && self.words[label / 64] >> (label % 64) & 1 == 1
    }

    /// Number of candidate labels in the set; always in [1, k-1], so there
    /// is deliberately no `is_empty`.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_singleton(&self) -> bool {
        self.len() == 1
    }

    /// Candidate labels in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(move |&i| self.contains(i))
    }

    /// The packed bitmask, for k <= 64.
    pub fn mask_u64(&self) -> u64 {
        debug_assert!(self.k <= 64);
        self.words[0]
    }
}

impl std::fmt::Debug for CandidateSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Pipe-separated indices, the on-disk syntax: {0, 3, 7} prints as "0|3|7".
impl std::fmt::Display for CandidateSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for i in self.iter() {
            if !first {
                write!(f, "|")?;
            }
            write!(f, "{i}")?;
            first = false;
        }
        Ok(())
    }
}

/// All 2^k - 2 admissible candidate sets for k classes, in ascending bitmask
/// order, so set j corresponds to mask j + 1. Capped at k = 20 to keep the
/// family enumerable.
pub fn enumerate_candidate_sets(k: usize) -> Result<Vec<CandidateSet>> {
    LabelSpace::new(k)?;
    if k > ENUMERATION_LIMIT {
        return Err(Error::KTooLarge {
            k,
            max: ENUMERATION_LIMIT,
        });
    }
    (1..(1u64 << k) - 1)
        .map(|mask| CandidateSet::from_mask(k, mask))
        .collect()
}

fn ensure_finite(features: &Array2<f64>) -> Result<()> {
    for ((row, col), &v) in features.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { row, col });
        }
    }
    Ok(())
}

/// Fully labeled data: an n x d feature matrix plus one true label per row.
#[derive(Debug, Clone)]
pub struct SupervisedDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl SupervisedDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        LabelSpace::new(k)?;
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch {
                context: "supervised dataset",
                expected: format!("{} labels", features.nrows()),
                got: format!("{}", labels.len()),
            });
        }
        ensure_finite(&features)?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::OutOfRange { index: bad, k });
        }
        Ok(SupervisedDataset { features, labels, k })
    }

    /// Like `new` but with k taken as max(label) + 1 (at least 2).
    pub fn with_inferred_k(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
        Self::new(features, labels, k)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Partially labeled data: each row carries a candidate set, and optionally
/// the hidden true label (kept only for evaluation, never shown to training).
/// When hidden labels are present each one lies inside its candidate set.
#[derive(Debug, Clone)]
pub struct PartialDataset {
    features: Array2<f64>,
    candidates: Vec<CandidateSet>,
    hidden_labels: Option<Vec<usize>>,
    k: usize,
}

impl PartialDataset {
    pub fn new(
        features: Array2<f64>,
        candidates: Vec<CandidateSet>,
        hidden_labels: Option<Vec<usize>>,
        k: usize,
    ) -> Result<Self> {
        LabelSpace::new(k)?;
        if features.nrows() != candidates.len() {
            return Err(Error::ShapeMismatch {
                context: "partial dataset",
                expected: format!("{} candidate sets", features.nrows()),
                got: format!("{}", candidates.len()),
            });
        }
        ensure_finite(&features)?;
        if let Some(bad) = candidates.iter().position(|c| c.k() != k) {
            return Err(Error::ShapeMismatch {
                context: "candidate set width",
                expected: format!("k = {k}"),
                got: format!("k = {} at example {bad}", candidates[bad].k()),
            });
        }
        if let Some(hidden) = &hidden_labels {
            if hidden.len() != candidates.len() {
                return Err(Error::ShapeMismatch {
                    context: "hidden labels",
                    expected: format!("{}", candidates.len()),
                    got: format!("{}", hidden.len()),
                });
            }
            for (i, (&y, c)) in hidden.iter().zip(&candidates).enumerate() {
                if y >= k {
                    return Err(Error::OutOfRange { index: y, k });
                }
                if !c.contains(y) {
                    return Err(Error::Config(format!(
                        "hidden label {y} of example {i} is not among its candidates"
                    )));
                }
            }
        }
        Ok(PartialDataset {
            features,
            candidates,
            hidden_labels,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn candidates(&self) -> &[CandidateSet] {
        &self.candidates
    }

    pub fn hidden_labels(&self) -> Option<&[usize]> {
        self.hidden_labels.as_deref()
    }

    /// Average candidate-set size, the usual difficulty summary for a
    /// partially labeled sample.
    pub fn avg_candidates(&self) -> f64 {
        if self.candidates.is_empty() {
            return 0.0;
        }
        self.candidates.iter().map(|c| c.len() as f64).sum::<f64>() / self.n() as f64
    }
}

/// Which training objective to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Risk-consistent: confidence-reweighted cross-entropy over candidates.
    Rc,
    /// Classifier-consistent: cross-entropy against the summed candidate mass.
    Cc,
    /// Ordinary cross-entropy on the hidden true labels (skyline).
    Supervised,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Rc => "rc",
            Method::Cc => "cc",
            Method::Supervised => "supervised",
        })
    }
}

/// Model architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ModelSpec {
    Linear,
    Mlp { hidden: usize },
}

pub const DEFAULT_MLP_HIDDEN: usize = 500;

/// Everything a training run needs beyond the data itself. Construct with
/// struct syntax over `RunConfig::default()` and call `validate` before use;
/// the train entry points do so as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub model: ModelSpec,
    pub method: Method,
    pub trials: usize,
    pub validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 250,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            model: ModelSpec::Linear,
            method: Method::Rc,
            trials: 5,
            validation_fraction: 0.1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "validation fraction must lie in [0, 1)".into(),
            ));
        }
        if let ModelSpec::Mlp { hidden } = self.model {
            if hidden == 0 {
                return Err(Error::Config("mlp hidden width must be positive".into()));
            }
        }
        Ok(())
    }
}
