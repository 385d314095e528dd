//! Training engines.
//!
//! * [`train_svm`]: Pegasos-style linear SVM, used per cluster.
//! * [`subgrad_j`] / [`train_mtl`]: stochastic subgradient descent on the
//!   multitask objective with the cooldown cache.
//! * [`train_lsm_alternating`]: alternating minimization of the LSM objective
//!   through the assignment-fixed convex objective `F`.
//!
//! Every run is sequential and fully determined by its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, DatasetCollection};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, axpy_aug, dot_aug};
use crate::model::{LsmModel, MultiTaskModel};
use crate::objective::{self, LsmHyper, MtlHyper, Partition, Regularizer};

/// How the multitask trainer draws its next example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Uniform over all examples of all datasets.
    Pooled,
    /// Uniform dataset, then uniform example within it.
    DatasetUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub eta0: f64,
    pub seed: u64,
    /// Stop once no weight moves by more than this over a whole epoch.
    pub tol_weight_change: f64,
    pub cooldown_len: u32,
    pub cooldown_enabled: bool,
    pub sampling: Sampling,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            eta0: 1.0,
            seed: 0,
            tol_weight_change: 1e-6,
            cooldown_len: 5,
            cooldown_enabled: true,
            sampling: Sampling::Pooled,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.eta0 > 0.0) {
            return Err(Error::invalid("need epochs >= 1 and eta0 > 0"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// `eta0 / (1 + n * eta0 * sigma)`
    fn rate(&self, n: u64, sigma: f64) -> f64 {
        self.eta0 / (1.0 + n as f64 * self.eta0 * sigma)
    }
}

/// One line of a training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub objective: f64,
    pub max_change: f64,
    pub skipped: usize,
}

/// Renders a trace as `epoch objective max_change skipped` lines.
pub fn format_trace(trace: &[TraceRecord]) -> String {
    let mut out = String::from("epoch objective max_change skipped\n");
    for r in trace {
        out.push_str(&format!(
            "{} {} {} {}\n",
            r.epoch, r.objective, r.max_change, r.skipped
        ));
    }
    out
}

/// Per-example skip counters. A point that is handled well gets a cooldown
/// and is skipped the next `len` times it is drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooldownCache {
    counters: Vec<Vec<u32>>,
}

impl CooldownCache {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            counters: sizes.into_iter().map(|n| vec![0; n]).collect(),
        }
    }

    /// Consumes one unit of cooldown; true when the draw must be skipped.
    pub fn try_skip(&mut self, t: usize, i: usize) -> bool {
        let c = &mut self.counters[t][i];
        if *c > 0 {
            *c -= 1;
            true
        } else {
            false
        }
    }

    pub fn grant(&mut self, t: usize, i: usize, len: u32) {
        self.counters[t][i] = len;
    }

    pub fn remaining(&self, t: usize, i: usize) -> u32 {
        self.counters[t][i]
    }
}

/// Trains `min_w lambda ||w||^2 + (1/m) sum_i L(y_i <w, (x_i,1)>)` with
/// Pegasos: stochastic subgradient steps, rate `1/(2 lambda n)` and projection
/// onto the ball of radius `1/sqrt(2 lambda)`. Returns the average of the
/// iterates of the final epoch.
pub fn train_svm(pos: &[&[f64]], neg: &[&[f64]], lambda: f64, cfg: &SgdConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("SVM training needs both classes"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("SVM lambda must be positive"));
    }
    let d = pos[0].len();
    for x in pos.iter().chain(neg) {
        check_dim(d, x.len())?;
    }
    let m = pos.len() + neg.len();
    let sample = |i: usize| -> (&[f64], f64) {
        if i < pos.len() {
            (pos[i], 1.0)
        } else {
            (neg[i - pos.len()], -1.0)
        }
    };
    let strong = 2.0 * lambda;
    let radius = 1.0 / strong.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut n = 0u64;
    for epoch in 0..cfg.epochs {
        let last = epoch + 1 == cfg.epochs;
        for _ in 0..m {
            let (x, y) = sample(rng.random_range(0..m));
            let eta = cfg.rate(n, strong);
            let active = y * dot_aug(&w, x) < 1.0;
            linalg::scale(1.0 / (1.0 + eta * strong), &mut w);
            if active {
                axpy_aug(eta * y / (1.0 + eta * strong), x, &mut w);
            }
            let nw = linalg::norm(&w);
            if nw > radius {
                linalg::scale(radius / nw, &mut w);
            }
            n += 1;
            if last {
                linalg::axpy(1.0 / m as f64, &w, &mut avg);
            }
        }
    }
    Ok(avg)
}

/// Case coefficients of the multitask subgradient for one example: the data
/// part of the shared-vector subgradient is `-shared[k] * y * (x,1)` and of the
/// bias subgradient `-bias[k] * y * (x,1)`.
#[derive(Debug, Clone, PartialEq)]
struct SubgradCases {
    shared: Vec<f64>,
    bias: Vec<f64>,
    /// `y <w0^k, x>` and `y <w0^k + v_t^k, x>` per component.
    margin_shared: Vec<f64>,
    margin_composed: Vec<f64>,
}

fn subgrad_cases(mt: &MultiTaskModel, x: &[f64], y: f64, t: usize, h: &MtlHyper) -> SubgradCases {
    let k_count = mt.k();
    let shared_scores: Vec<f64> = mt.shared.iter().map(|w| dot_aug(w, x)).collect();
    let composed_scores: Vec<f64> = shared_scores
        .iter()
        .zip(&mt.bias[t])
        .map(|(s, v)| s + dot_aug(v, x))
        .collect();
    let (k_shared, _) = linalg::argmax(shared_scores.iter().copied()).expect("K >= 1");
    let (k_composed, _) = linalg::argmax(composed_scores.iter().copied()).expect("K >= 1");
    let mut cases = SubgradCases {
        shared: vec![0.0; k_count],
        bias: vec![0.0; k_count],
        margin_shared: shared_scores.iter().map(|s| y * s).collect(),
        margin_composed: composed_scores.iter().map(|s| y * s).collect(),
    };
    for k in 0..k_count {
        let shared_active = k == k_shared && cases.margin_shared[k] <= 1.0;
        let composed_active = k == k_composed && cases.margin_composed[k] <= 1.0;
        cases.shared[k] = if shared_active && composed_active {
            h.c1 + h.c2
        } else if shared_active {
            h.c2
        } else if composed_active {
            h.c1
        } else {
            0.0
        };
        if composed_active {
            cases.bias[k] = h.c1;
        }
    }
    cases
}

/// Subgradient of the single-example multitask objective with respect to the
/// shared vectors and the bias vectors of dataset `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlSubgradient {
    pub shared: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

/// Subgradient of
/// `C1 L(y max_k <w0^k+v_t^k,x>) + C2 L(y max_k <w0^k,x>) + sum_k (||w0^k||^2 + rho ||v_t^k||^2)`
/// at one example `(x, y)` of dataset `t`.
///
/// For each component the data term is chosen by a four-way case split on
/// whether `k` attains the shared and/or composed maximum with margin at most
/// one. Ties in the maxima go to the lowest component.
pub fn subgrad_j(
    mt: &MultiTaskModel,
    x: &[f64],
    y: f64,
    t: usize,
    h: &MtlHyper,
) -> Result<MtlSubgradient> {
    check_dim(mt.feature_dim(), x.len())?;
    if t >= mt.t() {
        return Err(Error::IndexOutOfRange {
            what: "dataset",
            index: t,
            len: mt.t(),
        });
    }
    let cases = subgrad_cases(mt, x, y, t, h);
    let shared = mt
        .shared
        .iter()
        .zip(&cases.shared)
        .map(|(w, &a)| {
            let mut g: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
            axpy_aug(-a * y, x, &mut g);
            g
        })
        .collect();
    let bias = mt.bias[t]
        .iter()
        .zip(&cases.bias)
        .map(|(v, &b)| {
            let mut g: Vec<f64> = v.iter().map(|e| 2.0 * h.rho * e).collect();
            axpy_aug(-b * y, x, &mut g);
            g
        })
        .collect();
    Ok(MtlSubgradient { shared, bias })
}

fn max_abs_change(before: &MultiTaskModel, after: &MultiTaskModel) -> f64 {
    before
        .shared
        .iter()
        .chain(before.bias.iter().flatten())
        .zip(after.shared.iter().chain(after.bias.iter().flatten()))
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Stochastic subgradient descent on the multitask objective.
///
/// Each step draws an example, skips it while its cooldown lasts, and
/// otherwise applies [`subgrad_j`]: the data term explicitly and the
/// quadratic penalty as an implicit (proximal) shrink, so large `rho` stays
/// stable. The shared and bias blocks decay their rates with their own
/// penalty curvature (2 and `2 rho`). A point is given a cooldown when enough
/// (shared, composed) pairs already classify it with margin above one: both
/// pairs for `K = 1`, at least two components otherwise.
///
/// The returned trace has one record per epoch with the full objective.
pub fn train_mtl(
    coll: &DatasetCollection,
    h: &MtlHyper,
    init: &MultiTaskModel,
    cfg: &SgdConfig,
) -> Result<(MultiTaskModel, Vec<TraceRecord>)> {
    h.validate()?;
    cfg.validate()?;
    check_dim(coll.len(), init.t())?;
    check_dim(coll.dim, init.feature_dim())?;
    check_dim(h.k, init.k())?;
    let sizes: Vec<usize> = coll.datasets.iter().map(|d| d.len()).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = CooldownCache::new(sizes.iter().copied());
    let mut mt = init.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut n = 0u64;
    let k_count = mt.k();
    let needed = if k_count == 1 { 1 } else { 2 };
    for epoch in 0..cfg.epochs {
        let start = mt.clone();
        let mut skipped = 0;
        for _ in 0..total {
            let (t, i) = match cfg.sampling {
                Sampling::Pooled => {
                    let g = rng.random_range(0..total);
                    let t = offsets.partition_point(|&o| o <= g) - 1;
                    (t, g - offsets[t])
                }
                Sampling::DatasetUniform => {
                    let t = rng.random_range(0..sizes.len());
                    (t, rng.random_range(0..sizes[t]))
                }
            };
            if cfg.cooldown_enabled && cache.try_skip(t, i) {
                skipped += 1;
                continue;
            }
            let ex = &coll.datasets[t].examples[i];
            let (x, y) = (ex.features.as_slice(), ex.label.sign());
            let cases = subgrad_cases(&mt, x, y, t, h);
            let eta_w = cfg.rate(n, 2.0);
            let eta_v = cfg.rate(n, 2.0 * h.rho);
            for k in 0..k_count {
                let shrink = 1.0 / (1.0 + 2.0 * eta_w);
                let w = &mut mt.shared[k];
                linalg::scale(shrink, w);
                if cases.shared[k] != 0.0 {
                    axpy_aug(eta_w * cases.shared[k] * y * shrink, x, w);
                }
                let shrink_v = 1.0 / (1.0 + 2.0 * h.rho * eta_v);
                let v = &mut mt.bias[t][k];
                linalg::scale(shrink_v, v);
                if cases.bias[k] != 0.0 {
                    axpy_aug(eta_v * cases.bias[k] * y * shrink_v, x, v);
                }
            }
            n += 1;
            if cfg.cooldown_enabled {
                let good = (0..k_count)
                    .filter(|&k| cases.margin_shared[k] > 1.0 && cases.margin_composed[k] > 1.0)
                    .count();
                if good >= needed {
                    cache.grant(t, i, cfg.cooldown_len);
                }
            }
        }
        let max_change = max_abs_change(&start, &mt);
        trace.push(TraceRecord {
            epoch,
            objective: objective::eval_j(&mt, coll, h)?,
            max_change,
            skipped,
        });
        if max_change < cfg.tol_weight_change {
            break;
        }
    }
    if mt
        .shared
        .iter()
        .chain(mt.bias.iter().flatten())
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numerical("multitask SGD diverged".into()));
    }
    Ok((mt, trace))
}

/// Single-dataset specialization of [`train_mtl`]: an LSM trained with
/// hinge weight `c` (equivalent to the multitask trainer with `C1 = 0`).
pub fn train_lsm_sgd(
    data: &Dataset,
    c: f64,
    init: &LsmModel,
    cfg: &SgdConfig,
) -> Result<(LsmModel, Vec<TraceRecord>)> {
    let coll = DatasetCollection::new(vec![data.clone()])?;
    let h = MtlHyper {
        k: init.k(),
        c1: 0.0,
        c2: c,
        rho: 1.0,
    };
    let mt = MultiTaskModel::new(
        init.weights().to_vec(),
        vec![vec![vec![0.0; init.feature_dim() + 1]; init.k()]],
    )?;
    let (mt, trace) = train_mtl(&coll, &h, &mt, cfg)?;
    Ok((mt.shared_model(), trace))
}

/// Minimizes the convex assignment-fixed objective `F` by stochastic
/// subgradient steps on the per-example split
/// `loss_i + (lambda/m) Omega(w)`. The result is the best of the warm start,
/// the zero model and every epoch-end iterate, so `F` never increases over
/// `init`.
pub fn minimize_f(
    data: &Dataset,
    part: &Partition,
    h: &LsmHyper,
    init: &LsmModel,
    cfg: &SgdConfig,
) -> Result<LsmModel> {
    h.validate()?;
    cfg.validate()?;
    let pos: Vec<&[f64]> = data.positives().collect();
    let neg: Vec<&[f64]> = data.negatives().collect();
    let m = pos.len() + neg.len();
    let k_count = init.k();
    let reg_weight = h.lambda / m as f64;
    let sigma = match h.reg {
        Regularizer::SumSq | Regularizer::MaxSq => 2.0 * reg_weight,
        Regularizer::MaxNorm => reg_weight,
    };
    let mut best = init.clone();
    let mut best_f = objective::eval_f(init, data, part, h)?;
    let zero = LsmModel::zeros(k_count, init.feature_dim());
    let zero_f = objective::eval_f(&zero, data, part, h)?;
    if zero_f < best_f {
        best = zero;
        best_f = zero_f;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = init.clone();
    let mut n = 0u64;
    let mut grad_coef = vec![0.0; k_count];
    for _ in 0..cfg.epochs {
        for _ in 0..m {
            let i = rng.random_range(0..m);
            let eta = cfg.rate(n, sigma);
            grad_coef.iter_mut().for_each(|g| *g = 0.0);
            let x = if i < pos.len() {
                let k = part.assignment[i];
                if dot_aug(&w.weights()[k], pos[i]) < 1.0 {
                    grad_coef[k] = 1.0;
                }
                pos[i]
            } else {
                let x = neg[i - pos.len()];
                if h.neg_variant {
                    for (k, wk) in w.weights().iter().enumerate() {
                        if -dot_aug(wk, x) < 1.0 {
                            grad_coef[k] = -1.0;
                        }
                    }
                } else {
                    let (s, k) = w.score_raw(x);
                    if -s < 1.0 {
                        grad_coef[k] = -1.0;
                    }
                }
                x
            };
            regularizer_step(w.weights_mut(), h.reg, eta * reg_weight);
            for (wk, &g) in w.weights_mut().iter_mut().zip(&grad_coef) {
                if g != 0.0 {
                    axpy_aug(eta * g, x, wk);
                }
            }
            n += 1;
        }
        let f = objective::eval_f(&w, data, part, h)?;
        if f < best_f {
            best_f = f;
            best = w.clone();
        }
    }
    Ok(best)
}

/// Proximal-style step on `step * Omega(w)`.
fn regularizer_step(weights: &mut [Vec<f64>], reg: Regularizer, step: f64) {
    if step == 0.0 {
        return;
    }
    match reg {
        Regularizer::SumSq => {
            for w in weights.iter_mut() {
                linalg::scale(1.0 / (1.0 + 2.0 * step), w);
            }
        }
        Regularizer::MaxSq | Regularizer::MaxNorm => {
            let (k, sq) = linalg::argmax(weights.iter().map(|w| linalg::sq_norm(w)))
                .expect("K >= 1");
            if reg == Regularizer::MaxSq {
                linalg::scale(1.0 / (1.0 + 2.0 * step), &mut weights[k]);
            } else if sq > 0.0 {
                let nrm = sq.sqrt();
                linalg::scale((1.0 - step / nrm).max(0.0), &mut weights[k]);
            }
        }
    }
}

/// One outer iteration of alternating minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltRecord {
    pub outer: usize,
    /// `F` after the weight update, under the assignment it was fitted to.
    pub objective_f: f64,
    /// `E` at the updated weights.
    pub objective_e: f64,
    /// Positives whose argmax component changed after the update.
    pub reassigned: usize,
}

/// Alternating minimization: assign positives to their argmax component, then
/// refit the weights on the convex objective `F` for that assignment. With the
/// per-negative penalty and the sum-of-squares regularizer the refit splits
/// into one SVM per cluster; otherwise [`minimize_f`] is used. A refit that
/// would raise `F` is discarded, which makes `F` nonincreasing across outer
/// iterations. Stops when the assignment is stable or after `max_outer`
/// iterations.
pub fn train_lsm_alternating(
    data: &Dataset,
    h: &LsmHyper,
    init: &LsmModel,
    max_outer: usize,
    cfg: &SgdConfig,
) -> Result<(LsmModel, Vec<AltRecord>)> {
    h.validate()?;
    check_dim(h.k, init.k())?;
    check_dim(init.feature_dim(), data.dim())?;
    data.require_both_classes()?;
    let mut w = init.clone();
    let mut assignment = w.assign_features(data.positives());
    let mut trace = Vec::new();
    for outer in 0..max_outer.max(1) {
        let part = Partition::new(w.k(), assignment.clone())?;
        let current = objective::eval_f(&w, data, &part, h)?;
        let cfg_outer = cfg.with_seed(cfg.seed.wrapping_add(outer as u64));
        let candidate = if h.neg_variant && h.reg == Regularizer::SumSq {
            per_cluster_svms(data, &part, h, &w, &cfg_outer)?
        } else {
            minimize_f(data, &part, h, &w, &cfg_outer)?
        };
        let f_new = objective::eval_f(&candidate, data, &part, h)?;
        if f_new <= current {
            w = candidate;
        }
        let objective_f = f_new.min(current);
        let next = w.assign_features(data.positives());
        let reassigned = next.iter().zip(&assignment).filter(|(a, b)| a != b).count();
        trace.push(AltRecord {
            outer,
            objective_f,
            objective_e: objective::eval_e(&w, data, h)?,
            reassigned,
        });
        assignment = next;
        if reassigned == 0 {
            break;
        }
    }
    Ok((w, trace))
}

fn per_cluster_svms(
    data: &Dataset,
    part: &Partition,
    h: &LsmHyper,
    warm: &LsmModel,
    cfg: &SgdConfig,
) -> Result<LsmModel> {
    let pos: Vec<&[f64]> = data.positives().collect();
    let neg: Vec<&[f64]> = data.negatives().collect();
    let mut weights = warm.weights().to_vec();
    for (k, members) in part.members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let cluster: Vec<&[f64]> = members.iter().map(|&i| pos[i]).collect();
        let m = (cluster.len() + neg.len()) as f64;
        let lambda = (h.lambda / m).max(f64::MIN_POSITIVE);
        weights[k] = train_svm(&cluster, &neg, lambda, &cfg.with_seed(cfg.seed ^ (k as u64 + 1)))?;
    }
    LsmModel::new(weights)
}
