//! Executable checks of the distributional identities behind the training
//! objectives. Instead of sampling, everything here enumerates: instances
//! range over a small discrete toy problem and candidate sets over the full
//! family, so each identity is evaluated as an exact finite sum and the
//! deviation reported is pure floating-point noise.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{enumerate_candidate_sets, CandidateSet, LabelSpace};

/// A finite distribution over (instance, label) pairs: m instance values
/// with prior p(x), and a row-stochastic m x k conditional p(y|x).
#[derive(Debug, Clone)]
pub struct DiscreteToyProblem {
    prior: Vec<f64>,
    cond: Array2<f64>,
}

impl DiscreteToyProblem {
    pub fn new(prior: Vec<f64>, cond: Array2<f64>) -> Result<Self> {
        if prior.len() != cond.nrows() || prior.is_empty() {
            return Err(Error::ShapeMismatch {
                context: "toy problem",
                expected: format!("{} conditional rows", prior.len()),
                got: format!("{}", cond.nrows()),
            });
        }
        LabelSpace::new(cond.ncols())?;
        if prior.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Config("prior entries must be nonnegative".into()));
        }
        let psum: f64 = prior.iter().sum();
        if (psum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("prior sums to {psum}, not 1")));
        }
        for (i, row) in cond.rows().into_iter().enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::Config(format!(
                    "conditional row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "conditional row {i} sums to {s}, not 1"
                )));
            }
        }
        Ok(DiscreteToyProblem { prior, cond })
    }

    pub fn m(&self) -> usize {
        self.prior.len()
    }

    pub fn k(&self) -> usize {
        self.cond.ncols()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn cond(&self) -> &Array2<f64> {
        &self.cond
    }

    /// Joint mass p(x = xi, y).
    fn joint(&self, xi: usize, y: usize) -> f64 {
        self.prior[xi] * self.cond[(xi, y)]
    }

    /// Candidate mass sum_{j in Y} p(y = j | x = xi).
    fn cond_mass(&self, xi: usize, set: &CandidateSet) -> f64 {
        set.iter().map(|j| self.cond[(xi, j)]).sum()
    }
}

/// Draws a toy problem with strictly positive prior and conditionals, the
/// regime every check below is defined on.
pub fn random_toy<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<DiscreteToyProblem> {
    if m == 0 {
        return Err(Error::Config("toy problem needs at least one instance".into()));
    }
    LabelSpace::new(k)?;
    let mut prior: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    let mut cond = Array2::zeros((m, k));
    for mut row in cond.rows_mut() {
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen::<f64>() + 0.05;
            s += *v;
        }
        row.mapv_inplace(|v| v / s);
    }
    DiscreteToyProblem::new(prior, cond)
}

fn guard_k(k: usize, max: usize) -> Result<()> {
    if k > max {
        return Err(Error::KTooLarge { k, max });
    }
    Ok(())
}

/// Total corrupted mass: sums p~(x, Y) = (1 / (2^(k-1) - 1)) sum_{y in Y}
/// p(x, y) over every instance and every admissible candidate set. A valid
/// density must total 1.
pub fn check_theorem1(toy: &DiscreteToyProblem) -> Result<f64> {
    let k = toy.k();
    guard_k(k, 12)?;
    let q = 1.0 / LabelSpace::new(k)?.sets_containing_label();
    let family = enumerate_candidate_sets(k)?;
    let mut total = 0.0;
    for xi in 0..toy.m() {
        for set in &family {
            total += q * set.iter().map(|y| toy.joint(xi, y)).sum::<f64>();
        }
    }
    Ok(total)
}

/// Probability that a candidate set drawn uniformly from the whole family
/// contains a fixed label: (2^(k-1) - 1) / (2^k - 2), which is exactly 1/2.
/// Counted by enumeration, not by the closed form.
pub fn check_lemma1(k: usize) -> Result<f64> {
    guard_k(k, 12)?;
    let family = enumerate_candidate_sets(k)?;
    let containing = family.iter().filter(|c| c.contains(0)).count();
    Ok(containing as f64 / family.len() as f64)
}

/// Compares the labeling process "draw Y uniformly over the family, keep it
/// iff the true label landed inside" against the closed-form corrupted
/// density p~(x, Y), cell by cell. Returns the largest absolute difference.
pub fn check_theorem3(toy: &DiscreteToyProblem) -> Result<f64> {
    let k = toy.k();
    guard_k(k, 10)?;
    let family = enumerate_candidate_sets(k)?;
    let space = LabelSpace::new(k)?;
    let q = 1.0 / space.sets_containing_label();
    let uniform_c = 1.0 / family.len() as f64;

    // Kept mass per (x, Y) cell, and its total for the conditioning step.
    let mut kept = Array2::zeros((toy.m(), family.len()));
    let mut total = 0.0;
    for xi in 0..toy.m() {
        for (j, set) in family.iter().enumerate() {
            let mass: f64 = set.iter().map(|y| toy.joint(xi, y)).sum::<f64>() * uniform_c;
            kept[(xi, j)] = mass;
            total += mass;
        }
    }

    let mut max_dev: f64 = 0.0;
    for xi in 0..toy.m() {
        for (j, set) in family.iter().enumerate() {
            let conditioned = kept[(xi, j)] / total;
            let tilde = q * set.iter().map(|y| toy.joint(xi, y)).sum::<f64>();
            max_dev = max_dev.max((conditioned - tilde).abs());
        }
    }
    Ok(max_dev)
}

/// The label-to-candidate-set transition matrix: row i puts mass
/// 1 / (2^(k-1) - 1) on every set containing label i. Column order follows
/// `enumerate_candidate_sets`.
#[derive(Debug, Clone)]
pub struct TransitionMatrixQ {
    q: Array2<f64>,
}

impl TransitionMatrixQ {
    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    /// Rank by Gaussian elimination with partial pivoting at tolerance 1e-9.
    pub fn rank(&self) -> usize {
        matrix_rank(self.q.view(), 1e-9)
    }
}

/// Builds Q for k classes (k x (2^k - 2)).
pub fn build_q(k: usize) -> Result<TransitionMatrixQ> {
    guard_k(k, 12)?;
    let family = enumerate_candidate_sets(k)?;
    let q_entry = 1.0 / LabelSpace::new(k)?.sets_containing_label();
    let mut q = Array2::zeros((k, family.len()));
    for (j, set) in family.iter().enumerate() {
        for i in set.iter() {
            q[(i, j)] = q_entry;
        }
    }
    Ok(TransitionMatrixQ { q })
}

/// Row rank by elimination with partial pivoting; pivots at or below `tol`
/// in absolute value are treated as zero.
pub fn matrix_rank(a: ArrayView2<f64>, tol: f64) -> usize {
    let mut m = a.to_owned();
    let (rows, cols) = m.dim();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows)
            .max_by(|&r, &s| {
                m[(r, col)]
                    .abs()
                    .partial_cmp(&m[(s, col)].abs())
                    .expect("rank input must be finite")
            })
            .unwrap();
        if m[(pivot, col)].abs() <= tol {
            continue;
        }
        if pivot != rank {
            for c in col..cols {
                m.swap((pivot, c), (rank, c));
            }
        }
        for r in rank + 1..rows {
            let factor = m[(r, col)] / m[(rank, col)];
            if factor != 0.0 {
                for c in col..cols {
                    m[(r, c)] -= factor * m[(rank, c)];
                }
            }
        }
        rank += 1;
    }
    rank
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

/// Evaluates the fully supervised risk R(f) and its reweighted counterpart
/// R_rc(f) as exact expectations on the toy problem, using the true
/// conditional p(y|x) as the reweighting confidence. The two are equal by
/// construction of the corrupted density; the returned pair exposes the
/// floating-point gap.
///
/// `logits` fixes an arbitrary classifier: row x holds the scores whose
/// softmax is g(x).
pub fn check_rc_equivalence(
    toy: &DiscreteToyProblem,
    logits: ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let k = toy.k();
    guard_k(k, 10)?;
    if logits.dim() != (toy.m(), k) {
        return Err(Error::ShapeMismatch {
            context: "classifier logits",
            expected: format!("{} x {}", toy.m(), k),
            got: format!("{} x {}", logits.nrows(), logits.ncols()),
        });
    }
    let family = enumerate_candidate_sets(k)?;
    let q = 1.0 / LabelSpace::new(k)?.sets_containing_label();

    let mut r = 0.0;
    let mut r_rc = 0.0;
    for xi in 0..toy.m() {
        let logp = log_softmax_row(logits.row(xi).as_slice().expect("contiguous row"));
        let losses: Vec<f64> = logp.iter().map(|&lp| -lp).collect();

        // Fully supervised risk: E_x E_{y|x} loss(f(x), y).
        let expected_loss: f64 = (0..k).map(|i| toy.cond[(xi, i)] * losses[i]).sum();
        r += toy.prior[xi] * expected_loss;

        // Reweighted risk: (1/2) E_{p~(x,Y)} sum_i w_i(x,Y) loss(f(x), i)
        // with w_i = p(y=i|x) / sum_{j in Y} p(y=j|x).
        for set in &family {
            let mass = toy.cond_mass(xi, set);
            if mass == 0.0 {
                continue;
            }
            let tilde = q * toy.prior[xi] * mass;
            r_rc += 0.5 * tilde * expected_loss / mass;
        }
    }
    Ok((r, r_rc))
}

/// Result of minimizing the exact expected classifier-consistent risk over a
/// free probability table.
#[derive(Debug, Clone)]
pub struct CcFixedPointReport {
    /// max over instances and labels of |g_i(x) - p(y=i|x)| at the end.
    pub max_deviation: f64,
    /// Norm of the full risk gradient at the last iterate.
    pub final_grad_norm: f64,
    /// Exact expected risk before each descent step.
    pub risk_trace: Vec<f64>,
}

/// Minimizes the exact expected candidate-level cross-entropy risk by
/// full-gradient descent on a free softmax logit table, one row per instance
/// value, and reports how far the recovered g lands from the true
/// conditional. The minimizer is the true conditional, so the deviation
/// should vanish.
///
/// Fails with `NonConvergence` if the gradient norm is still above 1e-6
/// after `steps` iterations.
pub fn check_cc_fixed_point(
    toy: &DiscreteToyProblem,
    steps: usize,
    lr: f64,
) -> Result<CcFixedPointReport> {
    let k = toy.k();
    guard_k(k, 8)?;
    if toy.cond.iter().any(|&p| p <= 0.0) {
        return Err(Error::Config(
            "fixed-point check needs strictly positive conditionals".into(),
        ));
    }
    let family = enumerate_candidate_sets(k)?;
    let space = LabelSpace::new(k)?;
    let q = 1.0 / space.sets_containing_label();
    let ln_sets = space.ln_sets_containing_label();
    let m = toy.m();

    // p(Y | x) under the corrupted density, fixed throughout.
    let mut p_y_given_x = Array2::zeros((m, family.len()));
    for xi in 0..m {
        for (j, set) in family.iter().enumerate() {
            p_y_given_x[(xi, j)] = q * toy.cond_mass(xi, set);
        }
    }

    let mut z = Array2::<f64>::zeros((m, k));
    let mut g = Array2::<f64>::zeros((m, k));
    let mut grad = Array2::<f64>::zeros((m, k));
    let mut risk_trace = Vec::with_capacity(steps);
    let mut grad_norm = f64::INFINITY;

    for _ in 0..steps {
        for xi in 0..m {
            let row: Vec<f64> = z.row(xi).to_vec();
            let logp = log_softmax_row(&row);
            for i in 0..k {
                g[(xi, i)] = logp[i].exp();
            }
        }

        grad.fill(0.0);
        let mut risk = 0.0;
        for xi in 0..m {
            for (j, set) in family.iter().enumerate() {
                let weight = toy.prior[xi] * p_y_given_x[(xi, j)];
                let s_y: f64 = set.iter().map(|i| g[(xi, i)]).sum();
                risk += weight * (-(s_y.ln()) + ln_sets);
                // d/dz of -ln(sum_{y in Y} g_y) is g - (g masked to Y,
                // renormalized by its candidate mass).
                for i in 0..k {
                    let masked = if set.contains(i) { g[(xi, i)] / s_y } else { 0.0 };
                    grad[(xi, i)] += weight * (g[(xi, i)] - masked);
                }
            }
        }
        risk_trace.push(risk);
        grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        z.zip_mut_with(&grad, |zi, &gi| *zi -= lr * gi);
    }

    if grad_norm > 1e-6 {
        return Err(Error::NonConvergence {
            grad_norm,
            tol: 1e-6,
            steps,
        });
    }

    for xi in 0..m {
        let row: Vec<f64> = z.row(xi).to_vec();
        let logp = log_softmax_row(&row);
        for i in 0..k {
            g[(xi, i)] = logp[i].exp();
        }
    }
    let max_deviation = g
        .indexed_iter()
        .map(|((xi, i), &gi)| (gi - toy.cond[(xi, i)]).abs())
        .fold(0.0f64, f64::max);

    Ok(CcFixedPointReport {
        max_deviation,
        final_grad_norm: grad_norm,
        risk_trace,
    })
}
