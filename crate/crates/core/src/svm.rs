//! Class-weighted linear SVM.
//!
//! The trained problem is the L2-regularised, L1-hinge primal
//!
//! ```text
//! min  ½‖w̃‖² + C Σᵢ cᵢ · max(0, 1 − yᵢ (w·xᵢ + b))
//! ```
//!
//! where `w̃ = (w, b)`: the bias is an extra weight on a constant feature of
//! value 1 and is regularised together with `w`. It is solved in the dual by
//! a working-set method with box constraints `0 ≤ αᵢ ≤ C·cᵢ`, starting from
//! `α = 0`. Restricted problems are solved by a primal active-set method,
//! falling back to coordinate sweeps in an order drawn from a seeded RNG.
//! Training stops once the relative duality gap drops below the tolerance.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::N_CHANNELS;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Solver statistics stored with a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub c: f64,
    pub tolerance: f64,
    pub shuffle_seed: u64,
    pub epochs: usize,
    pub converged: bool,
    pub n_samples: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

/// A linear window classifier over flattened channel features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// Window size in pixels, `(width, height)`.
    pub window: (usize, usize),
    pub shrink: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub metadata: TrainingMetadata,
}

/// Feature dimension of a `window` (pixels) at `shrink`.
pub fn window_feature_dim(window: (usize, usize), shrink: usize) -> usize {
    (window.0 / shrink) * (window.1 / shrink) * N_CHANNELS
}

impl LinearModel {
    pub fn new(window: (usize, usize), shrink: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if shrink == 0 || window.0 % shrink != 0 || window.1 % shrink != 0 {
            return Err(Error::InvalidInput(format!(
                "window {}x{} is not divisible by shrink {shrink}",
                window.0, window.1
            )));
        }
        let expected = window_feature_dim(window, shrink);
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: weights.len(),
            });
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("model weights must be finite".into()));
        }
        Ok(LinearModel {
            window,
            shrink,
            weights,
            bias,
            metadata: TrainingMetadata::default(),
        })
    }

    /// A constant classifier scoring every window at `bias`.
    pub fn constant(window: (usize, usize), shrink: usize, bias: f64) -> Result<Self> {
        Self::new(window, shrink, vec![0.0; window_feature_dim(window, shrink)], bias)
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    /// Window size in cells.
    pub fn window_cells(&self) -> (usize, usize) {
        (self.window.0 / self.shrink, self.window.1 / self.shrink)
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features) + self.bias
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelRecord::from(self)).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: ModelRecord = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("malformed model record: {e}")))?;
        record.into_model()
    }
}

/// On-disk model layout. Field order is part of the format:
/// `format_version, window, shrink, feature_dim, weights, bias,
/// training_metadata`. Weights are flattened channel-major, then row, then
/// column.
#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format_version: u32,
    window: (usize, usize),
    shrink: usize,
    feature_dim: usize,
    weights: Vec<f64>,
    bias: f64,
    training_metadata: TrainingMetadata,
}

impl From<&LinearModel> for ModelRecord {
    fn from(m: &LinearModel) -> Self {
        ModelRecord {
            format_version: MODEL_FORMAT_VERSION,
            window: m.window,
            shrink: m.shrink,
            feature_dim: m.feature_dim(),
            weights: m.weights.clone(),
            bias: m.bias,
            training_metadata: m.metadata.clone(),
        }
    }
}

impl ModelRecord {
    fn into_model(self) -> Result<LinearModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        if self.feature_dim != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: self.weights.len(),
            });
        }
        let mut model = LinearModel::new(self.window, self.shrink, self.weights, self.bias)?;
        model.metadata = self.training_metadata;
        Ok(model)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorise the loop.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Labelled samples with per-sample loss weights `cᵢ`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSet {
    dim: usize,
    samples: Vec<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
}

impl TrainSet {
    pub fn new(dim: usize) -> Self {
        TrainSet {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, features: &[f64], label: i8, weight: f64) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.len(),
            });
        }
        if label != 1 && label != -1 {
            return Err(Error::InvalidInput(format!("label {label} is not ±1")));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidInput(format!("sample weight {weight} is not positive")));
        }
        self.samples.extend_from_slice(features);
        self.labels.push(label as f64);
        self.weights.push(weight);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn count_label(&self, label: i8) -> usize {
        self.labels.iter().filter(|&&y| y == label as f64).count()
    }

    /// Samples whose sign under `model` disagrees with the label (a zero
    /// score counts as an error).
    pub fn training_errors(&self, weights: &[f64], bias: f64) -> usize {
        (0..self.len())
            .filter(|&i| self.label(i) * (dot(weights, self.sample(i)) + bias) <= 0.0)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// Relative duality-gap target.
    pub tolerance: f64,
    pub max_epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 100.0,
            tolerance: 1e-4,
            max_epochs: 2000,
            shuffle_seed: 0,
        }
    }
}

/// Primal objective `½(‖w‖² + b²) + C Σ cᵢ max(0, 1 − yᵢ(w·xᵢ + b))`.
pub fn objective(weights: &[f64], bias: f64, set: &TrainSet, c: f64) -> Result<f64> {
    if weights.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            actual: weights.len(),
        });
    }
    Ok(primal(weights, bias, set, c))
}

fn primal(weights: &[f64], bias: f64, set: &TrainSet, c: f64) -> f64 {
    let reg = 0.5 * (dot(weights, weights) + bias * bias);
    let loss: f64 = (0..set.len())
        .map(|i| {
            let margin = set.label(i) * (dot(weights, set.sample(i)) + bias);
            set.weight(i) * (1.0 - margin).max(0.0)
        })
        .sum();
    reg + c * loss
}

/// Per-class weights with `pos·n_pos = neg·n_neg` and
/// `pos·n_pos + neg·n_neg = n_pos + n_neg`.
pub fn balance_weights(n_pos: usize, n_neg: usize) -> Result<(f64, f64)> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateData(format!(
            "cannot balance {n_pos} positives against {n_neg} negatives"
        )));
    }
    let total = (n_pos + n_neg) as f64;
    Ok((total / (2.0 * n_pos as f64), total / (2.0 * n_neg as f64)))
}

/// A trained model together with the solver's per-epoch trace.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Dual objective `½‖w̃‖² − Σαᵢ` after each epoch; the negative of a
    /// lower bound on the primal optimum. Coordinate descent never increases it.
    pub dual_trace: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub epochs: usize,
    pub converged: bool,
}

/// Samples added to the working set per outer iteration.
const CHUNK: usize = 100;

/// Coordinate sweeps of the fallback restricted solver per outer iteration.
const MAX_SWEEPS: usize = 400;

fn dual(w: &[f64], b: f64, alpha: &[f64]) -> f64 {
    0.5 * (dot(w, w) + b * b) - alpha.iter().sum::<f64>()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yj, xj) in y.iter_mut().zip(x) {
        *yj += a * xj;
    }
}

/// Dual solver state that can grow between solves, so hard negative mining
/// can add samples and continue from the previous optimum.
///
/// Each outer iteration (an epoch) adds the samples that violate the
/// optimality conditions most to a working set and minimises the dual over
/// that set with every other variable held fixed. Variables strictly inside
/// their box always stay in the set; variables at a bound leave it once they
/// satisfy the optimality conditions there.
#[derive(Clone, Debug)]
pub struct DualSolver {
    set: TrainSet,
    config: SvmConfig,
    alpha: Vec<f64>,
    w: Vec<f64>,
    b: f64,
    rng: ChaCha8Rng,
    /// Signed Gram entries `yᵢyⱼ(xᵢ·xⱼ + 1)` keyed by the ordered index pair.
    gram: HashMap<u64, f64>,
}

impl DualSolver {
    /// Starts from `α = 0`.
    pub fn new(set: TrainSet, config: &SvmConfig) -> Result<Self> {
        if !(config.c > 0.0) {
            return Err(Error::InvalidInput(format!("C must be positive, got {}", config.c)));
        }
        if set.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(DualSolver {
            alpha: vec![0.0; set.len()],
            w: vec![0.0; set.dim()],
            b: 0.0,
            rng: ChaCha8Rng::seed_from_u64(config.shuffle_seed),
            gram: HashMap::new(),
            config: config.clone(),
            set,
        })
    }

    pub fn set(&self) -> &TrainSet {
        &self.set
    }

    /// Adds a sample with `α = 0`; the current solution is unchanged.
    pub fn push(&mut self, features: &[f64], label: i8, weight: f64) -> Result<()> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        self.set.push(features, label, weight)?;
        self.alpha.push(0.0);
        Ok(())
    }

    /// Replaces every sample weight by its class weight, clipping the dual
    /// variables into the new boxes.
    pub fn reweight(&mut self, positive: f64, negative: f64) -> Result<()> {
        for (name, v) in [("positive", positive), ("negative", negative)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} class weight {v} is not positive")));
            }
        }
        for i in 0..self.set.len() {
            self.set.weights[i] = if self.set.labels[i] > 0.0 { positive } else { negative };
            self.alpha[i] = self.alpha[i].min(self.config.c * self.set.weights[i]);
        }
        self.rebuild_w();
        Ok(())
    }

    fn rebuild_w(&mut self) {
        self.w.iter_mut().for_each(|v| *v = 0.0);
        self.b = 0.0;
        for i in 0..self.alpha.len() {
            let a = self.alpha[i] * self.set.labels[i];
            if a != 0.0 {
                axpy(a, self.set.sample(i), &mut self.w);
                self.b += a;
            }
        }
    }

    fn gram_entry(&mut self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let set = &self.set;
        *self.gram.entry(((lo as u64) << 32) | hi as u64).or_insert_with(|| {
            set.label(lo) * set.label(hi) * (dot(set.sample(lo), set.sample(hi)) + 1.0)
        })
    }

    /// `yᵢ(w·xᵢ + b) − 1` for every sample.
    fn gradient(&self) -> Vec<f64> {
        (0..self.set.len())
            .map(|i| self.set.label(i) * (dot(&self.w, self.set.sample(i)) + self.b) - 1.0)
            .collect()
    }

    /// Continues from the current dual point until the relative duality gap
    /// reaches the tolerance or `max_epochs` outer iterations pass.
    pub fn solve(&mut self) -> Result<TrainOutcome> {
        if self.set.count_label(1) == 0 || self.set.count_label(-1) == 0 {
            return Err(Error::DegenerateData(
                "training needs at least one sample of each label".into(),
            ));
        }
        let n = self.set.len();
        let c = self.config.c;
        let upper: Vec<f64> = (0..n).map(|i| c * self.set.weight(i)).collect();

        let mut working: Vec<usize> = Vec::new();
        let mut in_working = vec![false; n];

        let mut eps = 1e-6;
        let mut dual_trace = Vec::new();
        let mut converged = false;
        let mut epochs = 0;
        let mut grad = self.gradient();
        let mut primal_obj;
        let mut dual_obj;
        loop {
            let hinge: f64 = (0..n).map(|i| upper[i] * (-grad[i]).max(0.0)).sum();
            primal_obj = 0.5 * (dot(&self.w, &self.w) + self.b * self.b) + hinge;
            dual_obj = dual(&self.w, self.b, &self.alpha);
            if primal_obj + dual_obj <= self.config.tolerance * primal_obj.abs().max(1e-12) {
                converged = true;
                break;
            }
            if epochs >= self.config.max_epochs {
                break;
            }

            let violation: Vec<f64> = (0..n).map(|i| kkt_term(self.alpha[i], upper[i], grad[i])).collect();
            let is_free = |i: usize| self.alpha[i] > 0.0 && self.alpha[i] < upper[i];
            working.retain(|&i| {
                let keep = is_free(i) || violation[i] > 0.0;
                in_working[i] = keep;
                keep
            });
            for i in 0..n {
                if !in_working[i] && is_free(i) {
                    in_working[i] = true;
                    working.push(i);
                }
            }
            let mut candidates: Vec<usize> = (0..n).filter(|&i| !in_working[i] && violation[i] > eps).collect();
            candidates.sort_by(|&i, &j| violation[j].total_cmp(&violation[i]).then(i.cmp(&j)));
            candidates.truncate(CHUNK);
            if candidates.is_empty() {
                // The working set holds every violator, so the restricted
                // solve was not accurate enough.
                if eps < 1e-13 {
                    break;
                }
                eps *= 0.01;
            }
            for &i in &candidates {
                in_working[i] = true;
                working.push(i);
            }

            let m = working.len();
            let mut q = vec![0.0; m * m];
            for p in 0..m {
                for r in 0..=p {
                    let v = self.gram_entry(working[p], working[r]);
                    q[p * m + r] = v;
                    q[r * m + p] = v;
                }
            }
            let ub: Vec<f64> = working.iter().map(|&i| upper[i]).collect();
            let mut a: Vec<f64> = working.iter().map(|&i| self.alpha[i]).collect();
            let g: Vec<f64> = working.iter().map(|&i| grad[i]).collect();
            solve_box_qp(&q, &ub, &mut a, g, eps, &mut self.rng);
            for (p, &i) in working.iter().enumerate() {
                let delta = (a[p] - self.alpha[i]) * self.set.label(i);
                if delta != 0.0 {
                    axpy(delta, self.set.sample(i), &mut self.w);
                    self.b += delta;
                    self.alpha[i] = a[p];
                }
            }
            epochs += 1;
            grad = self.gradient();
            dual_trace.push(dual(&self.w, self.b, &self.alpha));
        }

        Ok(TrainOutcome {
            weights: self.w.clone(),
            bias: self.b,
            dual_trace,
            primal_objective: primal_obj,
            dual_objective: dual_obj,
            epochs,
            converged,
        })
    }
}

/// Projected-gradient magnitude of one variable of a box-constrained
/// minimisation.
fn kkt_term(alpha: f64, upper: f64, g: f64) -> f64 {
    if alpha <= 0.0 {
        (-g).max(0.0)
    } else if alpha >= upper {
        g.max(0.0)
    } else {
        g.abs()
    }
}

fn kkt_violation(alpha: &[f64], upper: &[f64], g: &[f64]) -> f64 {
    (0..alpha.len()).map(|i| kkt_term(alpha[i], upper[i], g[i])).fold(0.0, f64::max)
}

/// Minimises `½αᵀQα − Σα` over `0 ≤ α ≤ upper` from a feasible start with
/// gradient `g = Qα − 1`. A primal active-set method does the work; if its
/// reduced systems break down, coordinate sweeps take over. Every accepted
/// move lowers the objective.
fn solve_box_qp(q: &[f64], upper: &[f64], alpha: &mut [f64], mut g: Vec<f64>, eps: f64, rng: &mut ChaCha8Rng) {
    if active_set_qp(q, upper, alpha, &mut g, eps) {
        return;
    }
    let m = alpha.len();
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..MAX_SWEEPS {
        if kkt_violation(alpha, upper, &g) <= eps {
            return;
        }
        order.shuffle(rng);
        for &i in &order {
            let a_new = (alpha[i] - g[i] / q[i * m + i]).clamp(0.0, upper[i]);
            let delta = a_new - alpha[i];
            if delta != 0.0 {
                alpha[i] = a_new;
                axpy(delta, &q[i * m..(i + 1) * m], &mut g);
            }
        }
    }
}

/// Primal active-set iterations. The free variables move to the minimiser
/// of the objective with the bound variables held fixed, stopping at the
/// first bound they reach; once that minimiser is feasible, bound variables
/// whose gradient points into the box are released. Returns whether the
/// optimality conditions hold to `eps`.
fn active_set_qp(q: &[f64], upper: &[f64], alpha: &mut [f64], g: &mut [f64], eps: f64) -> bool {
    let m = alpha.len();
    let mut free: Vec<bool> = (0..m).map(|i| alpha[i] > 0.0 && alpha[i] < upper[i]).collect();
    let ridge = 1e-12 * (0..m).map(|i| q[i * m + i]).fold(0.0, f64::max);
    // After a release that was immediately undone, release one at a time.
    let mut single = false;
    let mut released: Vec<usize> = Vec::new();
    for _ in 0..(4 * m + 20) {
        let subspace_done = (0..m).all(|i| !free[i] || g[i].abs() <= eps);
        if subspace_done {
            let mut violators: Vec<usize> =
                (0..m).filter(|&i| !free[i] && kkt_term(alpha[i], upper[i], g[i]) > eps).collect();
            if violators.is_empty() {
                return true;
            }
            if single {
                let worst = violators
                    .iter()
                    .copied()
                    .max_by(|&i, &j| kkt_term(alpha[i], upper[i], g[i]).total_cmp(&kkt_term(alpha[j], upper[j], g[j])))
                    .expect("non-empty");
                violators = vec![worst];
            }
            violators.iter().for_each(|&i| free[i] = true);
            released = violators;
        }

        let open: Vec<usize> = (0..m).filter(|&i| free[i]).collect();
        let k = open.len();
        let sub = nalgebra::DMatrix::from_fn(k, k, |r, c| q[open[r] * m + open[c]] + if r == c { ridge } else { 0.0 });
        let rhs = nalgebra::DVector::from_fn(k, |r, _| -g[open[r]]);
        let Some(chol) = sub.cholesky() else {
            return false;
        };
        let d = chol.solve(&rhs);
        if d.iter().any(|v| !v.is_finite()) {
            return false;
        }

        let mut t = 1.0f64;
        for (r, &i) in open.iter().enumerate() {
            if d[r] < 0.0 {
                t = t.min(-alpha[i] / d[r]);
            } else if d[r] > 0.0 {
                t = t.min((upper[i] - alpha[i]) / d[r]);
            }
        }
        let t = t.max(0.0);
        if t > 0.0 {
            for (r, &i) in open.iter().enumerate() {
                let step = t * d[r];
                if step != 0.0 {
                    alpha[i] = (alpha[i] + step).clamp(0.0, upper[i]);
                    axpy(step, &q[i * m..(i + 1) * m], g);
                }
            }
        }
        if t < 1.0 {
            // Pin every free variable that reached a bound.
            let mut pinned = Vec::new();
            for (r, &i) in open.iter().enumerate() {
                let to_zero = d[r] < 0.0 && alpha[i] <= 1e-14 * upper[i];
                let to_upper = d[r] > 0.0 && alpha[i] >= upper[i] * (1.0 - 1e-14);
                if to_zero || to_upper {
                    let snapped = if to_zero { 0.0 } else { upper[i] };
                    let delta = snapped - alpha[i];
                    if delta != 0.0 {
                        alpha[i] = snapped;
                        axpy(delta, &q[i * m..(i + 1) * m], g);
                    }
                    free[i] = false;
                    pinned.push(i);
                }
            }
            single = t == 0.0 && pinned.iter().any(|i| released.contains(i));
            if pinned.is_empty() {
                return false;
            }
        }
        released.clear();
    }
    false
}

/// Trains on `set` from `α = 0` and returns the raw solution and solver
/// trace.
pub fn train_raw(set: &TrainSet, config: &SvmConfig) -> Result<TrainOutcome> {
    DualSolver::new(set.clone(), config)?.solve()
}

/// Trains a window classifier for `window` at `shrink`.
pub fn train(
    set: &TrainSet,
    config: &SvmConfig,
    window: (usize, usize),
    shrink: usize,
) -> Result<LinearModel> {
    let expected = window_feature_dim(window, shrink);
    if set.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: set.dim(),
        });
    }
    let outcome = train_raw(set, config)?;
    model_from_outcome(outcome, config, set.len(), window, shrink)
}

/// Wraps a solver outcome as a model, recording the solver statistics.
pub fn model_from_outcome(
    outcome: TrainOutcome,
    config: &SvmConfig,
    n_samples: usize,
    window: (usize, usize),
    shrink: usize,
) -> Result<LinearModel> {
    let mut model = LinearModel::new(window, shrink, outcome.weights, outcome.bias)?;
    model.metadata = TrainingMetadata {
        c: config.c,
        tolerance: config.tolerance,
        shuffle_seed: config.shuffle_seed,
        epochs: outcome.epochs,
        converged: outcome.converged,
        n_samples,
        primal_objective: outcome.primal_objective,
        dual_objective: outcome.dual_objective,
    };
    Ok(model)
}
