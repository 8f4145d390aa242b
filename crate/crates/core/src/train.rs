//! Mini-batch training for the three objectives, the adaptive optimizer, and
//! the confidence table that the risk-consistent method alternates with its
//! gradient steps.
//!
//! A training run is strictly sequential over batches because the confidence
//! refresh feeds later batches in the same epoch. Determinism contract:
//! identical `RunConfig` (seed included) yields an identical model and an
//! identical `TrainLog` on a single thread.

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{split_partial, SplitSpec};
use crate::model::{cc_loss_and_grad, rc_loss_and_grad, supervised_loss_and_grad, Model};
use crate::types::{CandidateSet, Method, PartialDataset, RunConfig, SupervisedDataset};

/// Per-example label confidences for the risk-consistent method: row o holds
/// the model's (unnormalized) belief over the candidates of example o and
/// exact zeros elsewhere. Initialized to 1 on candidates, refreshed from the
/// post-update model after each batch step.
#[derive(Debug, Clone)]
pub struct ConfidenceTable {
    conf: Array2<f64>,
}

impl ConfidenceTable {
    /// Starting table: 1 on every candidate, 0 elsewhere.
    pub fn init_ones(pds: &PartialDataset) -> Self {
        let mut conf = Array2::zeros((pds.n(), pds.k()));
        for (o, set) in pds.candidates().iter().enumerate() {
            for i in set.iter() {
                conf[(o, i)] = 1.0;
            }
        }
        ConfidenceTable { conf }
    }

    pub fn conf(&self) -> &Array2<f64> {
        &self.conf
    }

    /// Copies the rows for a batch, in batch order.
    pub fn rows_for(&self, idx: &[usize]) -> Array2<f64> {
        self.conf.select(Axis(0), idx)
    }

    /// Overwrites the batch rows with the model's candidate probabilities:
    /// conf[o][i] = g_i(x_o) for candidates, 0 elsewhere.
    pub fn refresh_rows(&mut self, idx: &[usize], probs: &Array2<f64>, cands: &[&CandidateSet]) {
        for ((&o, row), set) in idx.iter().zip(probs.rows()).zip(cands) {
            let mut target = self.conf.row_mut(o);
            target.fill(0.0);
            for i in set.iter() {
                target[i] = row[i];
            }
        }
    }

    /// True when every row is zero off its candidates and carries positive
    /// mass on them.
    pub fn holds_invariants(&self, pds: &PartialDataset) -> bool {
        self.conf
            .rows()
            .into_iter()
            .zip(pds.candidates())
            .all(|(row, set)| {
                let mut mass = 0.0;
                for (i, &v) in row.iter().enumerate() {
                    if set.contains(i) {
                        mass += v;
                    } else if v != 0.0 {
                        return false;
                    }
                }
                mass > 0.0
            })
    }
}

/// Adaptive moment estimation state: one first- and one second-moment
/// accumulator per parameter, plus the step counter the bias correction
/// needs. Weight decay enters as an L2 term added to the gradient before
/// the moment updates; reported losses never include it.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Model,
    v: Model,
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
}

impl OptimizerState {
    pub fn new(model: &Model, learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerState {
            m: model.zeros_like(),
            v: model.zeros_like(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected moment update of `params` in place.
pub fn optimizer_step(state: &mut OptimizerState, params: &mut Model, grads: &Model) -> Result<()> {
    let shapes_match = |a: &Model, b: &Model| {
        let sa = a.param_slices();
        let sb = b.param_slices();
        sa.len() == sb.len() && sa.iter().zip(&sb).all(|(x, y)| x.len() == y.len())
    };
    if !shapes_match(params, grads) || !shapes_match(params, &state.m) {
        return Err(Error::ShapeMismatch {
            context: "optimizer step",
            expected: "params, grads, and state with identical shapes".into(),
            got: "mismatched parameter shapes".into(),
        });
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr, wd) = (
        state.beta1,
        state.beta2,
        state.epsilon,
        state.learning_rate,
        state.weight_decay,
    );

    let mut pslices = params.param_slices_mut();
    let gslices = grads.param_slices();
    let mut mslices = state.m.param_slices_mut();
    let mut vslices = state.v.param_slices_mut();
    for (((ps, gs), ms), vs) in pslices
        .iter_mut()
        .zip(gslices)
        .zip(mslices.iter_mut())
        .zip(vslices.iter_mut())
    {
        for (((p, &g0), m), v) in ps.iter_mut().zip(gs).zip(ms.iter_mut()).zip(vs.iter_mut()) {
            let g = g0 + wd * *p;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One epoch's worth of measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub transductive_accuracy: Option<f64>,
    pub validation_score: Option<f64>,
}

/// One record per completed epoch, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    fn tail_mean(&self, pick: impl Fn(&EpochRecord) -> Option<f64>) -> Option<f64> {
        let tail = &self.records[self.records.len().saturating_sub(10)..];
        if tail.is_empty() {
            return None;
        }
        let vals: Vec<f64> = tail.iter().filter_map(&pick).collect();
        if vals.len() != tail.len() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// The reported trial metric: mean test accuracy over the last (up to)
    /// ten epochs.
    pub fn final_metric(&self) -> Option<f64> {
        self.tail_mean(|r| r.test_accuracy)
    }

    /// Same averaging applied to the transductive accuracy.
    pub fn final_transductive(&self) -> Option<f64> {
        self.tail_mean(|r| r.transductive_accuracy)
    }

    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EpochRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: "<train log>".into(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(TrainLog { records })
    }
}

/// Per-trial summary emitted next to the epoch log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub method: Method,
    pub seed: u64,
    pub final_metric: Option<f64>,
    pub transductive: Option<f64>,
    pub config: RunConfig,
}

enum Objective {
    Rc(ConfidenceTable),
    Cc,
    Supervised(Vec<usize>),
}

/// Risk-consistent training: alternates an optimizer step on the
/// confidence-reweighted loss with a refresh of the batch's confidence rows
/// from the post-update model.
pub fn train_rc(
    pds: &PartialDataset,
    test: Option<&SupervisedDataset>,
    cfg: &RunConfig,
    transductive: bool,
) -> Result<(Model, TrainLog)> {
    expect_method(cfg, Method::Rc)?;
    run_training(pds, test, cfg, transductive)
}

/// Classifier-consistent training: plain mini-batch descent on the
/// candidate-mass cross-entropy; no confidence table.
pub fn train_cc(
    pds: &PartialDataset,
    test: Option<&SupervisedDataset>,
    cfg: &RunConfig,
    transductive: bool,
) -> Result<(Model, TrainLog)> {
    expect_method(cfg, Method::Cc)?;
    run_training(pds, test, cfg, transductive)
}

/// Fully supervised skyline on the hidden true labels; fails if the dataset
/// does not carry them.
pub fn train_supervised(
    pds: &PartialDataset,
    test: Option<&SupervisedDataset>,
    cfg: &RunConfig,
    transductive: bool,
) -> Result<(Model, TrainLog)> {
    expect_method(cfg, Method::Supervised)?;
    run_training(pds, test, cfg, transductive)
}

fn expect_method(cfg: &RunConfig, want: Method) -> Result<()> {
    if cfg.method != want {
        return Err(Error::Config(format!(
            "config selects method {}, but train entry point is {}",
            cfg.method, want
        )));
    }
    Ok(())
}

fn run_training(
    pds: &PartialDataset,
    test: Option<&SupervisedDataset>,
    cfg: &RunConfig,
    transductive: bool,
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if let Some(t) = test {
        if t.d() != pds.d() || t.k() != pds.k() {
            return Err(Error::ShapeMismatch {
                context: "test set",
                expected: format!("d = {}, k = {}", pds.d(), pds.k()),
                got: format!("d = {}, k = {}", t.d(), t.k()),
            });
        }
    }

    let (train, val) = split_partial(
        pds,
        &SplitSpec {
            fraction: cfg.validation_fraction,
            seed: cfg.seed,
        },
    )?;
    let n = train.n();
    if cfg.batch_size > n {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training examples left after the validation split",
            cfg.batch_size, n
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg.model, train.d(), train.k(), &mut rng)?;
    let mut opt = OptimizerState::new(&model, cfg.learning_rate, cfg.weight_decay);

    let mut objective = match cfg.method {
        Method::Rc => Objective::Rc(ConfidenceTable::init_ones(&train)),
        Method::Cc => Objective::Cc,
        Method::Supervised => {
            let labels = train
                .hidden_labels()
                .ok_or_else(|| {
                    Error::Config("supervised training needs the hidden true labels".into())
                })?
                .to_vec();
            Objective::Supervised(labels)
        }
    };

    let mut perm: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        perm.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, idx) in perm.chunks(cfg.batch_size).enumerate() {
            let x = train.features().select(Axis(0), idx);
            let cands: Vec<&CandidateSet> = idx.iter().map(|&o| &train.candidates()[o]).collect();

            let (loss, grads) = match &objective {
                Objective::Rc(table) => {
                    let conf = table.rows_for(idx);
                    rc_loss_and_grad(&model, x.view(), &cands, conf.view())?
                }
                Objective::Cc => cc_loss_and_grad(&model, x.view(), &cands)?,
                Objective::Supervised(labels) => {
                    let batch_labels: Vec<usize> = idx.iter().map(|&o| labels[o]).collect();
                    supervised_loss_and_grad(&model, x.view(), &batch_labels)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            optimizer_step(&mut opt, &mut model, &grads)?;

            if let Objective::Rc(table) = &mut objective {
                let fwd = model.forward_batch(x.view())?;
                table.refresh_rows(idx, &fwd.probs, &cands);
            }
            epoch_loss += loss * idx.len() as f64;
        }

        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            test_accuracy: test.map(|t| evaluate(&model, t)),
            transductive_accuracy: match (transductive, train.hidden_labels()) {
                (true, Some(labels)) => Some(accuracy_on(&model, train.features(), labels)),
                _ => None,
            },
            validation_score: (val.n() > 0).then(|| validate_partial(&model, &val)),
        };
        log::debug!(
            "epoch {:>4}: loss {:.6} test {:?} val {:?}",
            record.epoch,
            record.train_loss,
            record.test_accuracy,
            record.validation_score
        );
        log.records.push(record);
    }
    Ok((model, log))
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn accuracy_on(model: &Model, features: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for (chunk_start, chunk) in features
        .axis_chunks_iter(Axis(0), 4096)
        .enumerate()
        .map(|(i, c)| (i * 4096, c))
    {
        let fwd = model.forward_batch(chunk).expect("widths already checked");
        for (o, row) in fwd.logits.rows().into_iter().enumerate() {
            if argmax(row) == labels[chunk_start + o] {
                correct += 1;
            }
        }
    }
    correct as f64 / n as f64
}

/// Fraction of examples whose top-scoring label (ties to the lowest index)
/// equals the true label.
pub fn evaluate(model: &Model, ds: &SupervisedDataset) -> f64 {
    accuracy_on(model, ds.features(), ds.labels())
}

/// Fraction of examples whose top-scoring label lands inside the candidate
/// set. True labels are unavailable at validation time, so containment
/// stands in for accuracy; it upper-bounds it.
pub fn validate_partial(model: &Model, pds: &PartialDataset) -> f64 {
    let n = pds.n();
    if n == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for (chunk_start, chunk) in pds
        .features()
        .axis_chunks_iter(Axis(0), 4096)
        .enumerate()
        .map(|(i, c)| (i * 4096, c))
    {
        let fwd = model.forward_batch(chunk).expect("widths already checked");
        for (o, row) in fwd.logits.rows().into_iter().enumerate() {
            if pds.candidates()[chunk_start + o].contains(argmax(row)) {
                hits += 1;
            }
        }
    }
    hits as f64 / n as f64
}
