//! Exact evaluators for the LSM objective `E`, the assignment-fixed objective
//! `F`, the cluster-mean surrogate `S`, the multitask objective `J` and the
//! clustering sandwich bound.
//!
//! Every sum runs in example order so values are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, DatasetCollection};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, dot_aug};
use crate::model::{LsmModel, MultiTaskModel};

/// Hinge loss `max(0, 1 - z)`.
#[inline]
pub fn hinge(z: f64) -> f64 {
    (1.0 - z).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularizer {
    /// `sum_k ||w_k||^2`
    SumSq,
    /// `max_k ||w_k||^2`
    MaxSq,
    /// `max_k ||w_k||`
    MaxNorm,
}

impl Regularizer {
    pub fn value(self, weights: &[Vec<f64>]) -> f64 {
        let sq = weights.iter().map(|w| linalg::sq_norm(w));
        match self {
            Regularizer::SumSq => sq.sum(),
            Regularizer::MaxSq => sq.fold(0.0, f64::max),
            Regularizer::MaxNorm => sq.fold(0.0, f64::max).sqrt(),
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sum_sq" | "sumsq" => Ok(Regularizer::SumSq),
            "max_sq" | "maxsq" => Ok(Regularizer::MaxSq),
            "max_norm" | "maxnorm" => Ok(Regularizer::MaxNorm),
            _ => Err(Error::invalid(format!("unknown regularizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsmHyper {
    pub k: usize,
    pub lambda: f64,
    pub reg: Regularizer,
    /// Penalize every component on every negative instead of only the
    /// highest-scoring one.
    pub neg_variant: bool,
}

impl LsmHyper {
    pub fn new(k: usize, lambda: f64, reg: Regularizer) -> Self {
        Self {
            k,
            lambda,
            reg,
            neg_variant: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || !(self.lambda >= 0.0) {
            return Err(Error::invalid("need K >= 1 and lambda >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlHyper {
    pub k: usize,
    /// Weight of the per-dataset (composed) loss.
    pub c1: f64,
    /// Weight of the shared-model loss on all data.
    pub c2: f64,
    /// Penalty on the bias vectors.
    pub rho: f64,
}

impl MtlHyper {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.rho >= 0.0) {
            return Err(Error::invalid("need K >= 1 and C1, C2, rho >= 0"));
        }
        Ok(())
    }
}

/// Assignment of each positive (in dataset order) to one of `k` components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&a| a >= k) {
            return Err(Error::IndexOutOfRange {
                what: "component",
                index: bad,
                len: k,
            });
        }
        Ok(Self { k, assignment })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// Member indices of every cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignment.iter().enumerate() {
            m[a].push(i);
        }
        m
    }

    fn check(&self, n_pos: usize, k: usize) -> Result<()> {
        if self.assignment.len() != n_pos {
            return Err(Error::invalid(format!(
                "partition covers {} points, dataset has {n_pos} positives",
                self.assignment.len()
            )));
        }
        check_dim(k, self.k)
    }
}

fn neg_term(m: &LsmModel, x: &[f64], neg_variant: bool) -> f64 {
    if neg_variant {
        m.weights().iter().map(|w| hinge(-dot_aug(w, x))).sum()
    } else {
        hinge(-m.score_raw(x).0)
    }
}

fn negatives_loss(m: &LsmModel, data: &Dataset, neg_variant: bool) -> f64 {
    data.negatives().map(|x| neg_term(m, x, neg_variant)).sum()
}

/// `E_{K,lambda}`: positives pay the smallest component loss, negatives the
/// largest (or, with `neg_variant`, every component's loss).
pub fn eval_e(m: &LsmModel, data: &Dataset, h: &LsmHyper) -> Result<f64> {
    check_dim(m.feature_dim(), data.dim())?;
    let pos: f64 = data.positives().map(|x| hinge(m.score_raw(x).0)).sum();
    Ok(pos + negatives_loss(m, data, h.neg_variant) + h.lambda * h.reg.value(m.weights()))
}

/// `F_{K,lambda}`: like [`eval_e`] but each positive pays the loss of the
/// component it is assigned to.
pub fn eval_f(m: &LsmModel, data: &Dataset, part: &Partition, h: &LsmHyper) -> Result<f64> {
    check_dim(m.feature_dim(), data.dim())?;
    part.check(data.n_pos(), m.k())?;
    let pos: f64 = data
        .positives()
        .zip(&part.assignment)
        .map(|(x, &k)| hinge(dot_aug(&m.weights()[k], x)))
        .sum();
    Ok(pos + negatives_loss(m, data, h.neg_variant) + h.lambda * h.reg.value(m.weights()))
}

/// Cluster summary used by the surrogate `S` and the sandwich bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Cluster means over raw features.
    pub means: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// `phi * sum_i ||x_i - mu_{k_i}||`
    pub epsilon: f64,
    pub sizes: Vec<usize>,
}

impl BoundInputs {
    /// Builds the summary for `positives` clustered by `assignment` around
    /// `means`, with Lipschitz constant `lipschitz` for the loss (1 for the
    /// hinge).
    pub fn new(
        means: Vec<Vec<f64>>,
        assignment: Vec<usize>,
        positives: &[&[f64]],
        lipschitz: f64,
    ) -> Result<Self> {
        check_dim(positives.len(), assignment.len())?;
        let part = Partition::new(means.len(), assignment)?;
        let epsilon = lipschitz
            * positives
                .iter()
                .zip(&part.assignment)
                .map(|(x, &k)| linalg::dist(x, &means[k]))
                .sum::<f64>();
        Ok(Self {
            sizes: part.sizes(),
            means,
            assignment: part.assignment,
            epsilon,
        })
    }

    fn check(&self, m: &LsmModel) -> Result<()> {
        check_dim(m.k(), self.means.len())?;
        for mu in &self.means {
            check_dim(m.feature_dim(), mu.len())?;
        }
        Ok(())
    }

    /// `sum_k p_k L(<w_k, mu_k>)`
    fn cluster_loss(&self, m: &LsmModel) -> f64 {
        m.weights()
            .iter()
            .zip(&self.means)
            .zip(&self.sizes)
            .map(|((w, mu), &p)| p as f64 * hinge(dot_aug(w, mu)))
            .sum()
    }
}

/// Surrogate `S_{K,lambda}`: cluster-mean positive loss, max-component
/// negative loss and `lambda * max_k ||w_k||`.
pub fn eval_s(m: &LsmModel, bi: &BoundInputs, negs: &[&[f64]], lambda: f64) -> Result<f64> {
    bi.check(m)?;
    let mut neg = 0.0;
    for x in negs {
        check_dim(m.feature_dim(), x.len())?;
        neg += hinge(-m.score_raw(x).0);
    }
    Ok(bi.cluster_loss(m) + neg + lambda * Regularizer::MaxNorm.value(m.weights()))
}

/// The three sides of the pointwise positive-loss sandwich:
/// `(sum_k p_k L(<w_k,mu_k>) - eps*M, sum_i min_k L(<w_k,x_i>), sum_k p_k L(<w_k,mu_k>) + eps*M)`
/// with `M = max_k ||w_k||`.
///
/// The right inequality always holds. The left one can fail when a positive
/// is fitted better by a component other than its cluster's; see
/// [`pino_gap_min_form`] for the variant that holds for every model.
pub fn pino_gap(m: &LsmModel, bi: &BoundInputs, positives: &[&[f64]]) -> Result<(f64, f64, f64)> {
    bi.check(m)?;
    let middle = min_component_loss(m, positives)?;
    let centre = bi.cluster_loss(m);
    let slack = bi.epsilon * Regularizer::MaxNorm.value(m.weights());
    Ok((centre - slack, middle, centre + slack))
}

/// Sandwich with the cluster term `sum_k p_k min_j L(<w_j, mu_k>)`, which
/// bounds `sum_i min_k L(<w_k,x_i>)` from both sides by `eps * max_k ||w_k||`.
pub fn pino_gap_min_form(
    m: &LsmModel,
    bi: &BoundInputs,
    positives: &[&[f64]],
) -> Result<(f64, f64, f64)> {
    bi.check(m)?;
    let middle = min_component_loss(m, positives)?;
    let centre: f64 = bi
        .means
        .iter()
        .zip(&bi.sizes)
        .map(|(mu, &p)| p as f64 * hinge(m.score_raw(mu).0))
        .sum();
    let slack = bi.epsilon * Regularizer::MaxNorm.value(m.weights());
    Ok((centre - slack, middle, centre + slack))
}

fn min_component_loss(m: &LsmModel, positives: &[&[f64]]) -> Result<f64> {
    let mut total = 0.0;
    for x in positives {
        check_dim(m.feature_dim(), x.len())?;
        total += hinge(m.score_raw(x).0);
    }
    Ok(total)
}

/// Multitask objective `J`: composed-model loss on each dataset (weight
/// `C1`), shared-model loss on all data (weight `C2`) and
/// `sum_k (||w0^k||^2 + rho sum_t ||v_t^k||^2)`.
pub fn eval_j(mt: &MultiTaskModel, coll: &DatasetCollection, h: &MtlHyper) -> Result<f64> {
    check_dim(mt.feature_dim(), coll.dim)?;
    check_dim(mt.t(), coll.len())?;
    let shared = mt.shared_model();
    let mut composed_loss = 0.0;
    let mut shared_loss = 0.0;
    for (t, ds) in coll.datasets.iter().enumerate() {
        let composed = mt.compose(t)?;
        for ex in &ds.examples {
            let y = ex.label.sign();
            composed_loss += hinge(y * composed.score_raw(&ex.features).0);
            shared_loss += hinge(y * shared.score_raw(&ex.features).0);
        }
    }
    Ok(h.c1 * composed_loss + h.c2 * shared_loss + mtl_regularizer(mt, h.rho))
}

pub fn mtl_regularizer(mt: &MultiTaskModel, rho: f64) -> f64 {
    (0..mt.k())
        .map(|k| {
            linalg::sq_norm(&mt.shared[k])
                + rho * mt.bias.iter().map(|bt| linalg::sq_norm(&bt[k])).sum::<f64>()
        })
        .sum()
}

/// Single-template undoing-bias objective over per-dataset training sets:
/// `sum_t sum_i [C1 L(y<w0+v_t,x>) + C2 L(y<w0,x>)] + ||w0||^2 + rho sum_t ||v_t||^2`.
pub fn eval_single_template(
    shared: &[f64],
    bias: &[Vec<f64>],
    coll: &DatasetCollection,
    c1: f64,
    c2: f64,
    rho: f64,
) -> Result<f64> {
    check_dim(coll.len(), bias.len())?;
    check_dim(coll.dim + 1, shared.len())?;
    let mut loss = 0.0;
    let mut reg = linalg::sq_norm(shared);
    for (ds, v) in coll.datasets.iter().zip(bias) {
        check_dim(shared.len(), v.len())?;
        let wt = linalg::add(shared, v);
        for ex in &ds.examples {
            let y = ex.label.sign();
            loss += c1 * hinge(y * dot_aug(&wt, &ex.features))
                + c2 * hinge(y * dot_aug(shared, &ex.features));
        }
        reg += rho * linalg::sq_norm(v);
    }
    Ok(loss + reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Label, LabeledExample};

    fn ds(pos: &[f64], neg: &[f64]) -> Dataset {
        let ex = pos
            .iter()
            .map(|&x| (x, Label::Pos))
            .chain(neg.iter().map(|&x| (x, Label::Neg)))
            .map(|(x, label)| LabeledExample {
                features: vec![x],
                label,
            })
            .collect();
        Dataset::new("t", ex).unwrap()
    }

    fn two_sided() -> LsmModel {
        LsmModel::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap()
    }

    #[test]
    fn hinge_values() {
        assert_eq!(hinge(0.0), 1.0);
        assert_eq!(hinge(2.0), 0.0);
        assert_eq!(hinge(-0.5), 1.5);
    }

    #[test]
    fn regularizer_values() {
        let w = vec![vec![3.0, 4.0], vec![1.0, 0.0]];
        assert_eq!(Regularizer::SumSq.value(&w), 26.0);
        assert_eq!(Regularizer::MaxSq.value(&w), 25.0);
        assert_eq!(Regularizer::MaxNorm.value(&w), 5.0);
        assert_eq!(Regularizer::MaxNorm.value(&[vec![0.0; 3]]), 0.0);
    }

    #[test]
    fn e_at_zero_counts_examples() {
        let h = LsmHyper::new(2, 1.0, Regularizer::SumSq);
        let data = ds(&[1.0, 2.0], &[0.5, -3.0, 4.0]);
        assert_eq!(eval_e(&LsmModel::zeros(2, 1), &data, &h).unwrap(), 5.0);
    }

    #[test]
    fn e_two_sided_example() {
        // positives at +1 and -1, each fitted exactly by one component
        let h = LsmHyper::new(2, 1.0, Regularizer::SumSq);
        assert_eq!(eval_e(&two_sided(), &ds(&[1.0, -1.0], &[]), &h).unwrap(), 2.0);
        let with_neg = ds(&[1.0, -1.0], &[0.0]);
        assert_eq!(eval_e(&two_sided(), &with_neg, &h).unwrap(), 3.0);
        let hv = LsmHyper {
            neg_variant: true,
            ..h
        };
        assert_eq!(eval_e(&two_sided(), &with_neg, &hv).unwrap(), 4.0);
    }

    #[test]
    fn f_matches_e_at_argmax_assignment() {
        let h = LsmHyper::new(2, 1.0, Regularizer::SumSq);
        let data = ds(&[1.0, -1.0], &[]);
        let m = two_sided();
        let own = Partition::new(2, m.assign_features(data.positives())).unwrap();
        assert_eq!(eval_f(&m, &data, &own, &h).unwrap(), eval_e(&m, &data, &h).unwrap());
        let swapped = Partition::new(2, vec![1, 0]).unwrap();
        assert_eq!(eval_f(&m, &data, &swapped, &h).unwrap(), 6.0);
        assert!(eval_f(&m, &data, &Partition::new(2, vec![0]).unwrap(), &h).is_err());
    }

    #[test]
    fn s_at_zero() {
        let pos: Vec<&[f64]> = vec![&[1.0], &[2.0], &[3.0]];
        let bi = BoundInputs::new(vec![vec![2.0]], vec![0, 0, 0], &pos, 1.0).unwrap();
        assert_eq!(bi.epsilon, 2.0);
        let negs: Vec<&[f64]> = vec![&[0.0], &[-1.0]];
        assert_eq!(eval_s(&LsmModel::zeros(1, 1), &bi, &negs, 3.0).unwrap(), 5.0);
        let (lo, mid, hi) = pino_gap(&LsmModel::zeros(1, 1), &bi, &pos).unwrap();
        assert_eq!((lo, mid, hi), (3.0, 3.0, 3.0));
    }

    #[test]
    fn pino_collapses_when_points_sit_on_means() {
        let pos: Vec<&[f64]> = vec![&[1.0], &[1.0], &[-2.0]];
        let bi = BoundInputs::new(vec![vec![1.0], vec![-2.0]], vec![0, 0, 1], &pos, 1.0).unwrap();
        assert_eq!(bi.epsilon, 0.0);
        let m = LsmModel::new(vec![vec![0.5, 0.1], vec![-0.2, 0.3]]).unwrap();
        let (lo, mid, hi) = pino_gap(&m, &bi, &pos).unwrap();
        assert_eq!(lo, hi);
        assert!((lo - mid).abs() < 1e-12);
    }

    #[test]
    fn j_at_zero_and_single_template_reduction() {
        let coll = DatasetCollection::new(vec![
            ds(&[1.0, 2.0], &[0.0]),
            Dataset {
                id: "u".into(),
                ..ds(&[3.0], &[-1.0, -2.0])
            },
        ])
        .unwrap();
        let h = MtlHyper {
            k: 2,
            c1: 0.5,
            c2: 2.0,
            rho: 3.0,
        };
        assert_eq!(eval_j(&MultiTaskModel::zeros(2, 2, 1), &coll, &h).unwrap(), 0.5 * 6.0 + 2.0 * 6.0);

        let mt = MultiTaskModel::new(
            vec![vec![0.3, -0.1]],
            vec![vec![vec![0.2, 0.4]], vec![vec![-0.5, 0.1]]],
        )
        .unwrap();
        let h1 = MtlHyper { k: 1, ..h };
        let j = eval_j(&mt, &coll, &h1).unwrap();
        let bias: Vec<Vec<f64>> = mt.bias().iter().map(|b| b[0].clone()).collect();
        let single = eval_single_template(&mt.shared()[0], &bias, &coll, 0.5, 2.0, 3.0).unwrap();
        assert!((j - single).abs() < 1e-12);
    }
}
