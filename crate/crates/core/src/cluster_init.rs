//! Clustering-based initialization of latent subcategory models.
//!
//! K-means (or K-medians) on the positives gives a partition whose distortion
//! `epsilon = sum_i ||x_i - mu_{k_i}||` controls how far the assignment-fixed
//! objective can be from the true LSM optimum:
//!
//! ```text
//! min F_{K, lambda - 2 eps} <= min E_{K, lambda} <= min F_{K, lambda}
//! ```
//!
//! [`check_bound`] verifies this numerically on a dataset. Besides the
//! Euclidean clusterings, positives can be grouped by exemplar-LDA similarity
//! (score- or rank-based) with K-medoids.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, DatasetCollection, LabeledExample};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::model::{LsmModel, MultiTaskModel};
use crate::objective::{
    self, hinge, BoundInputs, LsmHyper, MtlHyper, Partition, Regularizer,
};
use crate::optim::{self, SgdConfig};

const LLOYD_MAX_ITERS: usize = 200;
const WEISZFELD_TOL: f64 = 1e-8;
const WEISZFELD_MAX_ITERS: usize = 500;
const KMEDOIDS_MAX_ITERS: usize = 100;

/// Result of a Euclidean clustering of the positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInit {
    pub means: Vec<Vec<f64>>,
    /// Nearest centre of every point (lowest index on ties).
    pub assignment: Vec<usize>,
    /// `sum_i min_k ||mu_k - x_i||^2`
    pub distortion_sq: f64,
    /// `sum_i ||x_i - mu_{k_i}||`
    pub epsilon: f64,
}

impl ClusterInit {
    fn from_centres(points: &[&[f64]], means: Vec<Vec<f64>>) -> Self {
        let assignment = nearest(points, &means);
        let (mut distortion_sq, mut epsilon) = (0.0, 0.0);
        for (x, &k) in points.iter().zip(&assignment) {
            let sq = linalg::sq_dist(x, &means[k]);
            distortion_sq += sq;
            epsilon += sq.sqrt();
        }
        Self {
            means,
            assignment,
            distortion_sq,
            epsilon,
        }
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn partition(&self) -> Partition {
        Partition {
            k: self.k(),
            assignment: self.assignment.clone(),
        }
    }

    pub fn bound_inputs(&self, points: &[&[f64]]) -> Result<BoundInputs> {
        BoundInputs::new(self.means.clone(), self.assignment.clone(), points, 1.0)
    }
}

fn nearest(points: &[&[f64]], centres: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|x| {
            linalg::argmin(centres.iter().map(|c| linalg::sq_dist(x, c)))
                .expect("at least one centre")
                .0
        })
        .collect()
}

fn check_points(points: &[&[f64]], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let d = points[0].len();
    for p in points {
        check_dim(d, p.len())?;
    }
    Ok(())
}

/// k-means++ seeding; falls back to unchosen points when all remaining mass
/// is zero (duplicated data).
fn plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|x| linalg::sq_dist(x, points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, x) in points.iter().enumerate() {
            d2[i] = d2[i].min(linalg::sq_dist(x, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Moves the point farthest from its centre into each empty cluster, taking
/// only from clusters with more than one member.
fn repair_empty(points: &[&[f64]], centres: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centres.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = linalg::argmax(points.iter().zip(assignment.iter()).map(|(x, &a)| {
            if sizes[a] > 1 {
                linalg::sq_dist(x, &centres[a])
            } else {
                f64::NEG_INFINITY
            }
        }));
        let Some((i, v)) = donor else { return };
        if v == f64::NEG_INFINITY {
            return;
        }
        assignment[i] = empty;
        centres[empty] = points[i].to_vec();
    }
}

fn centroids(points: &[&[f64]], assignment: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); previous.len()];
    for (x, &a) in points.iter().zip(assignment) {
        members[a].push(x);
    }
    members
        .iter()
        .zip(previous)
        .map(|(m, prev)| if m.is_empty() { prev.clone() } else { linalg::mean(m) })
        .collect()
}

/// Lloyd iterations from the given centres until the assignment stops
/// changing (or 200 iterations). Also returns the squared distortion after
/// every assignment step.
pub fn lloyd(points: &[&[f64]], init: Vec<Vec<f64>>) -> (ClusterInit, Vec<f64>) {
    let mut centres = init;
    let mut previous: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    for _ in 0..LLOYD_MAX_ITERS {
        let mut assignment = nearest(points, &centres);
        history.push(
            points
                .iter()
                .zip(&assignment)
                .map(|(x, &a)| linalg::sq_dist(x, &centres[a]))
                .sum(),
        );
        if previous.as_ref() == Some(&assignment) {
            break;
        }
        repair_empty(points, &mut centres, &mut assignment);
        centres = centroids(points, &assignment, &centres);
        previous = Some(assignment);
    }
    (ClusterInit::from_centres(points, centres), history)
}

/// Seeded K-means with k-means++ starts; keeps the restart with the lowest
/// squared distortion.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64, restarts: usize) -> Result<ClusterInit> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterInit> = None;
    for _ in 0..restarts.max(1) {
        let (ci, _) = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| ci.distortion_sq < b.distortion_sq) {
            best = Some(ci);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Geometric median by Weiszfeld iterations with the Vardi-Zhang correction
/// for iterates that land on a data point. Starts from `start`; every
/// iteration does not increase `sum_i ||x_i - y||`.
pub fn geometric_median(points: &[&[f64]], start: &[f64]) -> Vec<f64> {
    let d = start.len();
    let mut y = start.to_vec();
    for _ in 0..WEISZFELD_MAX_ITERS {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut coincident = 0usize;
        let mut r = vec![0.0; d];
        for x in points {
            let dist = linalg::dist(x, &y);
            if dist < 1e-300 {
                coincident += 1;
                continue;
            }
            linalg::axpy(1.0 / dist, x, &mut num);
            den += 1.0 / dist;
            for j in 0..d {
                r[j] += (x[j] - y[j]) / dist;
            }
        }
        if den == 0.0 {
            break;
        }
        let t: Vec<f64> = num.iter().map(|v| v / den).collect();
        let next = if coincident == 0 {
            t
        } else {
            let rn = linalg::norm(&r);
            let eta = coincident as f64;
            if rn <= eta {
                break;
            }
            let a = (1.0 - eta / rn).max(0.0);
            let b = (eta / rn).min(1.0);
            t.iter().zip(&y).map(|(ti, yi)| a * ti + b * yi).collect()
        };
        let step = linalg::dist(&next, &y);
        y = next;
        if step < WEISZFELD_TOL {
            break;
        }
    }
    y
}

fn median_pass(points: &[&[f64]], init: Vec<Vec<f64>>) -> ClusterInit {
    let mut centres = init;
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..LLOYD_MAX_ITERS {
        let mut assignment = nearest(points, &centres);
        if previous.as_ref() == Some(&assignment) {
            break;
        }
        repair_empty(points, &mut centres, &mut assignment);
        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); centres.len()];
        for (x, &a) in points.iter().zip(&assignment) {
            members[a].push(x);
        }
        for (c, m) in centres.iter_mut().zip(&members) {
            if !m.is_empty() {
                *c = geometric_median(m, c);
            }
        }
        previous = Some(assignment);
    }
    ClusterInit::from_centres(points, centres)
}

/// K-medians with geometric-median centres, which minimizes `epsilon`
/// directly. The first run starts from the K-means solution (same seed), so
/// the returned `epsilon` never exceeds the K-means one by more than the
/// Weiszfeld tolerance; the remaining runs use k-means++ starts.
pub fn kmedians(points: &[&[f64]], k: usize, seed: u64, restarts: usize) -> Result<ClusterInit> {
    check_points(points, k)?;
    let warm = kmeans(points, k, seed, restarts)?;
    let mut best = median_pass(points, warm.means);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    for _ in 1..restarts.max(1) {
        let ci = median_pass(points, plus_plus(points, k, &mut rng));
        if ci.epsilon < best.epsilon {
            best = ci;
        }
    }
    Ok(best)
}

/// Gaussian statistics of the negatives for exemplar-LDA.
#[derive(Debug, Clone)]
pub struct NegStats {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub ridge: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl NegStats {
    /// Factorizes `cov + ridge * I`.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        let reg = &cov + DMatrix::<f64>::identity(d, d) * ridge;
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance not positive definite after ridge".into()))?;
        Ok(Self {
            mean,
            cov,
            ridge,
            chol,
        })
    }

    /// Sample mean and covariance of the negatives with ridge
    /// `1e-3 * trace / d` unless given.
    pub fn from_negatives(negs: &[&[f64]], ridge: Option<f64>) -> Result<Self> {
        let Some(first) = negs.first() else {
            return Err(Error::invalid("exemplar-LDA needs negatives"));
        };
        let d = first.len();
        let mean = linalg::mean(negs);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for x in negs {
            check_dim(d, x.len())?;
            let c = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
            cov += &c * c.transpose();
        }
        cov /= (negs.len().max(2) - 1) as f64;
        let ridge = ridge.unwrap_or_else(|| {
            let r = 1e-3 * cov.trace() / d as f64;
            if r > 0.0 {
                r
            } else {
                1e-3
            }
        });
        Self::new(mean, cov, ridge)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Exemplar-LDA weights `(Sigma + tau I)^{-1} (x_pos - mu_N)`.
pub fn exemplar_lda(x_pos: &[f64], stats: &NegStats) -> Result<Vec<f64>> {
    check_dim(stats.dim(), x_pos.len())?;
    let rhs = DVector::from_iterator(stats.dim(), x_pos.iter().zip(&stats.mean).map(|(a, b)| a - b));
    let w = stats.chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("exemplar-LDA solve produced non-finite weights".into()));
    }
    Ok(w.iter().copied().collect())
}

/// Symmetric similarities between positives, normalized so the largest
/// off-diagonal entry is one; the diagonal is one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub sim: Vec<Vec<f64>>,
}

impl SimilarityGraph {
    fn from_symmetric(mut sim: Vec<Vec<f64>>) -> Result<Self> {
        let n = sim.len();
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        for (i, row) in sim.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    max = max.max(v);
                    min = min.min(v);
                }
            }
        }
        if n > 1 && (!(max > 0.0) || max == min) {
            return Err(Error::Numerical("degenerate similarity scores".into()));
        }
        for (i, row) in sim.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 1.0 } else { *v / max };
            }
        }
        Ok(Self { sim })
    }

    pub fn len(&self) -> usize {
        self.sim.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sim.is_empty()
    }

    /// `1 - similarity`; zero on the diagonal.
    pub fn distances(&self) -> Vec<Vec<f64>> {
        self.sim
            .iter()
            .map(|row| row.iter().map(|s| 1.0 - s).collect())
            .collect()
    }
}

/// Directed exemplar scores `s[i][j] = <w_i, x_j>`.
pub fn exemplar_scores(positives: &[&[f64]], stats: &NegStats) -> Result<Vec<Vec<f64>>> {
    let ws = positives
        .iter()
        .map(|x| exemplar_lda(x, stats))
        .collect::<Result<Vec<_>>>()?;
    Ok(ws
        .iter()
        .map(|w| positives.iter().map(|x| linalg::dot(w, x)).collect())
        .collect())
}

/// Score-based similarity: the two directed exemplar scores averaged.
pub fn score_similarity(positives: &[&[f64]], stats: &NegStats) -> Result<SimilarityGraph> {
    let s = exemplar_scores(positives, stats)?;
    let n = s.len();
    let sym = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (s[i][j] + s[j][i])).collect())
        .collect();
    SimilarityGraph::from_symmetric(sym)
}

/// Indices of the `n_top` highest-scoring other positives for every exemplar
/// (descending score, ties by index).
pub fn top_ranked(scores: &[Vec<f64>], n_top: usize) -> Vec<Vec<usize>> {
    scores
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut others: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            others.truncate(n_top);
            others
        })
        .collect()
}

/// Rank-based similarity: overlap fraction of two exemplars' top-`n_top`
/// lists.
pub fn rank_similarity(
    positives: &[&[f64]],
    stats: &NegStats,
    n_top: usize,
) -> Result<SimilarityGraph> {
    if n_top == 0 || n_top >= positives.len() {
        return Err(Error::invalid(format!(
            "N_top must lie in 1..={} for {} positives",
            positives.len().saturating_sub(1),
            positives.len()
        )));
    }
    let tops = top_ranked(&exemplar_scores(positives, stats)?, n_top);
    SimilarityGraph::from_symmetric(overlap_matrix(&tops, n_top))
}

pub fn overlap_matrix(tops: &[Vec<usize>], n_top: usize) -> Vec<Vec<f64>> {
    tops.iter()
        .map(|a| {
            tops.iter()
                .map(|b| a.iter().filter(|i| b.contains(i)).count() as f64 / n_top as f64)
                .collect()
        })
        .collect()
}

/// Partition produced by K-medoids on a distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidPartition {
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub cost: f64,
}

impl MedoidPartition {
    pub fn partition(&self) -> Partition {
        Partition {
            k: self.medoids.len(),
            assignment: self.assignment.clone(),
        }
    }
}

fn medoid_assign(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignment = (0..dist.len())
        .map(|i| {
            let (k, d) = linalg::argmin(medoids.iter().map(|&m| dist[i][m])).expect("K >= 1");
            cost += d;
            k
        })
        .collect();
    (assignment, cost)
}

/// K-medoids with seeded random medoids refined by best-improvement swaps
/// (at most 100 swaps).
pub fn kmedoids(dist: &[Vec<f64>], k: usize, seed: u64) -> Result<MedoidPartition> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot pick {k} medoids from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
    medoids.sort_unstable();
    let (_, mut cost) = medoid_assign(dist, &medoids);
    for _ in 0..KMEDOIDS_MAX_ITERS {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for cand in 0..n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let (_, c) = medoid_assign(dist, &trial);
                if c < best.map_or(cost, |b| b.2) - 1e-12 {
                    best = Some((slot, cand, c));
                }
            }
        }
        match best {
            Some((slot, cand, c)) => {
                medoids[slot] = cand;
                cost = c;
            }
            None => break,
        }
    }
    let (assignment, cost) = medoid_assign(dist, &medoids);
    Ok(MedoidPartition {
        medoids,
        assignment,
        cost,
    })
}

/// Exemplar-LDA score similarity followed by K-medoids.
pub fn score_based_init(
    positives: &[&[f64]],
    stats: &NegStats,
    k: usize,
    seed: u64,
) -> Result<MedoidPartition> {
    check_points(positives, k)?;
    kmedoids(&score_similarity(positives, stats)?.distances(), k, seed)
}

/// Exemplar-LDA top-N overlap similarity followed by K-medoids.
pub fn rank_based_init(
    positives: &[&[f64]],
    stats: &NegStats,
    k: usize,
    n_top: usize,
    seed: u64,
) -> Result<MedoidPartition> {
    check_points(positives, k)?;
    kmedoids(&rank_similarity(positives, stats, n_top)?.distances(), k, seed)
}

/// One SVM per cluster (cluster positives against all negatives), stacked
/// into an LSM. Each SVM minimizes the cluster's share of
/// `sum hinge + lambda ||w_k||^2`, i.e. Pegasos with `lambda / m_k`. All
/// clusters use the same seed.
pub fn init_lsm_from_clusters(
    part: &Partition,
    data: &Dataset,
    h: &LsmHyper,
    cfg: &SgdConfig,
) -> Result<LsmModel> {
    let pos: Vec<&[f64]> = data.positives().collect();
    let neg: Vec<&[f64]> = data.negatives().collect();
    check_dim(pos.len(), part.assignment.len())?;
    let mut weights = Vec::with_capacity(part.k);
    for (k, members) in part.members().iter().enumerate() {
        if members.is_empty() {
            return Err(Error::invalid(format!("cluster {k} is empty")));
        }
        let cluster: Vec<&[f64]> = members.iter().map(|&i| pos[i]).collect();
        let lambda = h.lambda / (cluster.len() + neg.len()) as f64;
        weights.push(optim::train_svm(&cluster, &neg, lambda, cfg)?);
    }
    LsmModel::new(weights)
}

/// Multitask initialization: for every cluster `k` of the pooled positives
/// (dataset order), solve the single-template multitask problem on the
/// per-dataset training sets `P_{t,k} ∪ N_t` and use its solution as
/// `w0^k, v_1^k..v_T^k`.
pub fn init_mtl_from_clusters(
    part: &Partition,
    coll: &DatasetCollection,
    h: &MtlHyper,
    cfg: &SgdConfig,
) -> Result<MultiTaskModel> {
    let n_pos: usize = coll.datasets.iter().map(|d| d.n_pos()).sum();
    check_dim(n_pos, part.assignment.len())?;
    let t_count = coll.len();
    let mut shared = Vec::with_capacity(part.k);
    let mut bias = vec![Vec::with_capacity(part.k); t_count];
    for k in 0..part.k {
        let mut datasets = Vec::with_capacity(t_count);
        let mut cursor = 0;
        let mut found = 0;
        for ds in &coll.datasets {
            let mut examples: Vec<LabeledExample> = Vec::new();
            for ex in &ds.examples {
                if ex.label.is_pos() {
                    if part.assignment[cursor] == k {
                        examples.push(ex.clone());
                        found += 1;
                    }
                    cursor += 1;
                } else {
                    examples.push(ex.clone());
                }
            }
            datasets.push(Dataset::new(ds.id.clone(), examples)?);
        }
        if found == 0 {
            return Err(Error::invalid(format!("cluster {k} has no positives")));
        }
        let sub = DatasetCollection::new(datasets)?;
        let h1 = MtlHyper { k: 1, ..*h };
        let zero = MultiTaskModel::zeros(1, t_count, coll.dim);
        let (mt, _) = optim::train_mtl(&sub, &h1, &zero, cfg)?;
        shared.push(mt.shared[0].clone());
        for (t, bt) in mt.bias.into_iter().enumerate() {
            bias[t].push(bt.into_iter().next().expect("K = 1"));
        }
    }
    MultiTaskModel::new(shared, bias)
}

/// Counts of pointwise inequality violations over random weight draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PointwiseReport {
    pub draws: usize,
    /// `S_{lambda - eps}(w) <= E_lambda(w)`
    pub lower_s_violations: usize,
    /// `E_lambda(w) <= S_{lambda + eps}(w)`
    pub upper_s_violations: usize,
    /// `F_{lambda - 2 eps}(w) <= S_{lambda - eps}(w)`
    pub f_vs_s_violations: usize,
    /// Either side of [`objective::pino_gap_min_form`].
    pub min_form_violations: usize,
}

/// Numerical check of the clustering sandwich bound on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub lambda_prime: f64,
    /// `min F_{K, lambda - 2 eps}`; absent when `lambda - 2 eps < 0`.
    pub f_prime_star: Option<f64>,
    /// `E_{K, lambda}` at the minimizer of `F_{K, lambda}`.
    pub e_at_wf: f64,
    /// `min F_{K, lambda}`
    pub f_star: f64,
    pub left_holds: Option<bool>,
    pub right_holds: bool,
    pub pointwise: PointwiseReport,
}

pub const BOUND_TOL: f64 = 1e-6;

/// Transports `w` onto the clusters: component `k` becomes the component of
/// `w` with the smallest loss at the cluster mean `mu_k`. For
/// `lambda >= 2 eps` this satisfies `F_{lambda - 2eps}(w') <= E_lambda(w)`.
pub fn transport_to_clusters(w: &LsmModel, means: &[Vec<f64>]) -> LsmModel {
    let weights = means
        .iter()
        .map(|mu| {
            let (j, _) = linalg::argmin(w.weights().iter().map(|wj| hinge(linalg::dot_aug(wj, mu))))
                .expect("K >= 1");
            w.weights()[j].clone()
        })
        .collect();
    LsmModel::new(weights).expect("copied weights are valid")
}

/// Runs K-means on the positives, minimizes `F_{K,lambda}` and
/// `F_{K,lambda-2eps}` (max-norm regularizer) for that assignment, evaluates
/// `E_{K,lambda}` at the first minimizer and checks
/// `F'* <= E(w_F) <= F* + 1e-6`. Also samples `draws` random models and
/// counts pointwise violations of the surrogate inequalities.
pub fn check_bound(
    data: &Dataset,
    k: usize,
    lambda: f64,
    seed: u64,
    draws: usize,
    cfg: &SgdConfig,
) -> Result<BoundReport> {
    data.require_both_classes()?;
    let pos: Vec<&[f64]> = data.positives().collect();
    let ci = kmeans(&pos, k, seed, 10)?;
    let bi = ci.bound_inputs(&pos)?;
    let eps = bi.epsilon;
    let part = ci.partition();
    let h = LsmHyper::new(k, lambda, Regularizer::MaxNorm);
    let zero = LsmModel::zeros(k, data.dim());
    let w_f = optim::minimize_f(data, &part, &h, &zero, cfg)?;
    let f_star = objective::eval_f(&w_f, data, &part, &h)?;
    let e_at_wf = objective::eval_e(&w_f, data, &h)?;
    let lambda_prime = lambda - 2.0 * eps;
    let f_prime_star = if lambda_prime >= 0.0 {
        let hp = LsmHyper::new(k, lambda_prime, Regularizer::MaxNorm);
        let moved = transport_to_clusters(&w_f, &ci.means);
        let warm = if objective::eval_f(&moved, data, &part, &hp)?
            <= objective::eval_f(&w_f, data, &part, &hp)?
        {
            moved
        } else {
            w_f.clone()
        };
        let w_p = optim::minimize_f(data, &part, &hp, &warm, &cfg.with_seed(cfg.seed ^ 1))?;
        Some(objective::eval_f(&w_p, data, &part, &hp)?)
    } else {
        None
    };
    let pointwise = pointwise_sandwich(data, &ci, lambda, draws, seed)?;
    Ok(BoundReport {
        k,
        lambda,
        epsilon: eps,
        lambda_prime,
        f_prime_star,
        e_at_wf,
        f_star,
        left_holds: f_prime_star.map(|fp| fp <= e_at_wf),
        right_holds: e_at_wf <= f_star + BOUND_TOL,
        pointwise,
    })
}

/// Draws random models at several scales and counts violations of the
/// pointwise surrogate inequalities for the clustering `ci`.
pub fn pointwise_sandwich(
    data: &Dataset,
    ci: &ClusterInit,
    lambda: f64,
    draws: usize,
    seed: u64,
) -> Result<PointwiseReport> {
    let pos: Vec<&[f64]> = data.positives().collect();
    let neg: Vec<&[f64]> = data.negatives().collect();
    let bi = ci.bound_inputs(&pos)?;
    let eps = bi.epsilon;
    let part = ci.partition();
    let k = ci.k();
    let h = LsmHyper::new(k, lambda, Regularizer::MaxNorm);
    let h2 = LsmHyper::new(k, lambda - 2.0 * eps, Regularizer::MaxNorm);
    let rms = (data
        .examples
        .iter()
        .map(|e| linalg::sq_norm(&e.features) + 1.0)
        .sum::<f64>()
        / data.len() as f64)
        .sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut rep = PointwiseReport {
        draws,
        ..Default::default()
    };
    let d = data.dim();
    for _ in 0..draws {
        let scale = 10f64.powf(rng.random_range(-2.0..1.0)) / rms;
        let weights = (0..k)
            .map(|_| {
                (0..=d)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let w = LsmModel::new(weights)?;
        let e = objective::eval_e(&w, data, &h)?;
        let s_lo = objective::eval_s(&w, &bi, &neg, lambda - eps)?;
        let s_hi = objective::eval_s(&w, &bi, &neg, lambda + eps)?;
        let f2 = objective::eval_f(&w, data, &part, &h2)?;
        let tol = 1e-9 * (1.0 + e.abs());
        rep.lower_s_violations += usize::from(s_lo > e + tol);
        rep.upper_s_violations += usize::from(e > s_hi + tol);
        rep.f_vs_s_violations += usize::from(f2 > s_lo + tol);
        let (lo, mid, hi) = objective::pino_gap_min_form(&w, &bi, &pos)?;
        rep.min_form_violations += usize::from(lo > mid + tol || mid > hi + tol);
    }
    Ok(rep)
}
