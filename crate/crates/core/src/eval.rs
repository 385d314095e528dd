//! Average precision and the experiment protocols.
//!
//! Seen protocol: every dataset is split into train and test halves; the
//! multitask model is trained on all training halves and its composed
//! models, its shared (visual-world) model and two baselines are evaluated on
//! every test half. Unseen protocol: train on all datasets but one and test
//! the visual-world model on the held-out dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster_init;
use crate::dataio::{split_train_val, Dataset, DatasetCollection, Label, SplitSpec};
use crate::error::{check_dim, Error, Result};
use crate::model::{LsmModel, MultiTaskModel};
use crate::objective::{self, LsmHyper, MtlHyper, Partition};
use crate::optim::{self, SgdConfig};

/// All-points average precision together with the precision/recall value at
/// every rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Ranks by descending score (ties by ascending input index) and averages
/// the precision at the rank of every positive.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<ApResult> {
    check_dim(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|l| l.is_pos()).count();
    if n_pos == 0 {
        return Err(Error::invalid("average precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut sum = 0.0;
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        let p_at = |tp: usize| tp as f64 / (rank + 1) as f64;
        if labels[i].is_pos() {
            tp += 1;
            sum += p_at(tp);
        }
        precision.push(p_at(tp));
        recall.push(tp as f64 / n_pos as f64);
    }
    Ok(ApResult {
        ap: sum / n_pos as f64,
        precision,
        recall,
    })
}

/// AP of an LSM's max-component score on a dataset.
pub fn model_ap(model: &LsmModel, data: &Dataset) -> Result<f64> {
    check_dim(model.feature_dim(), data.dim())?;
    let scores: Vec<f64> = data
        .examples
        .iter()
        .map(|e| model.score_raw(&e.features).0)
        .collect();
    let labels: Vec<Label> = data.examples.iter().map(|e| e.label).collect();
    Ok(average_precision(&scores, &labels)?.ap)
}

/// `(new - base) / base`, or 0 when `base` is 0.
pub fn relative_improvement(new: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (new - base) / base
    }
}

/// Hyperparameters and solver settings shared by the protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub h: MtlHyper,
    pub sgd: SgdConfig,
    pub split: SplitSpec,
    /// K-means restarts for the clustering initialization.
    pub restarts: usize,
}

impl ProtocolConfig {
    pub fn new(h: MtlHyper, sgd: SgdConfig) -> Self {
        Self {
            split: SplitSpec {
                seed: sgd.seed,
                ..SplitSpec::default()
            },
            h,
            sgd,
            restarts: 10,
        }
    }
}

/// Trains the multitask model from a K-means initialization of the pooled
/// positives.
pub fn fit_mtl(coll: &DatasetCollection, h: &MtlHyper, pc: &ProtocolConfig) -> Result<MultiTaskModel> {
    let pooled = coll.pooled_positives();
    let ci = cluster_init::kmeans(&pooled, h.k, pc.sgd.seed, pc.restarts)?;
    let init = cluster_init::init_mtl_from_clusters(&ci.partition(), coll, h, &pc.sgd)?;
    Ok(optim::train_mtl(coll, h, &init, &pc.sgd)?.0)
}

/// The aggregate baseline: the same trainer with `C1 = 0` and all of the
/// hinge weight `C1 + C2` on the shared model, which is a single LSM fitted
/// to the concatenated data.
pub fn fit_aggregate(coll: &DatasetCollection, pc: &ProtocolConfig) -> Result<LsmModel> {
    let h = MtlHyper {
        c1: 0.0,
        c2: pc.h.c1 + pc.h.c2,
        ..pc.h
    };
    Ok(fit_mtl(coll, &h, pc)?.shared_model())
}

/// Splits every dataset into (train, test) halves; dataset `t` uses seed
/// `split.seed + t`.
pub fn split_collection(
    coll: &DatasetCollection,
    split: SplitSpec,
) -> Result<(DatasetCollection, DatasetCollection)> {
    let mut train = Vec::with_capacity(coll.len());
    let mut test = Vec::with_capacity(coll.len());
    for (t, ds) in coll.datasets.iter().enumerate() {
        let (a, b) = split_train_val(
            ds,
            SplitSpec {
                seed: split.seed.wrapping_add(t as u64),
                ..split
            },
        )?;
        train.push(a);
        test.push(b);
    }
    Ok((DatasetCollection::new(train)?, DatasetCollection::new(test)?))
}

/// AP table of the seen protocol. Row `t` is test dataset `t`; the columns
/// are the composed models `w_1..w_T`, then the visual-world model, the
/// aggregate baseline and the independent per-dataset model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub dataset_ids: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub column_means: Vec<f64>,
}

impl ProtocolReport {
    pub fn t(&self) -> usize {
        self.dataset_ids.len()
    }

    /// AP of the composed model of dataset `t` on its own test split.
    pub fn own_composed(&self, t: usize) -> f64 {
        self.rows[t][t]
    }

    pub fn visual_world(&self, t: usize) -> f64 {
        self.rows[t][self.t()]
    }

    pub fn aggregate(&self, t: usize) -> f64 {
        self.rows[t][self.t() + 1]
    }

    pub fn independent(&self, t: usize) -> f64 {
        self.rows[t][self.t() + 2]
    }
}

/// Seen-dataset protocol on the 75/25 split of every dataset.
pub fn run_seen(coll: &DatasetCollection, pc: &ProtocolConfig) -> Result<ProtocolReport> {
    let (train, test) = split_collection(coll, pc.split)?;
    run_seen_split(&train, &test, pc)
}

/// Seen-dataset protocol with explicit train and test collections.
pub fn run_seen_split(
    train: &DatasetCollection,
    test: &DatasetCollection,
    pc: &ProtocolConfig,
) -> Result<ProtocolReport> {
    check_dim(train.len(), test.len())?;
    let t_count = train.len();
    let mt = fit_mtl(train, &pc.h, pc)?;
    let vw = mt.shared_model();
    let agg = fit_aggregate(train, pc)?;
    let mut indep = Vec::with_capacity(t_count);
    for t in 0..t_count {
        indep.push(fit_aggregate(&train.subset(&[t])?, pc)?);
    }
    let composed = (0..t_count)
        .map(|t| mt.compose(t))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(t_count);
    for (t, ds) in test.datasets.iter().enumerate() {
        let mut row = Vec::with_capacity(t_count + 3);
        for m in &composed {
            row.push(model_ap(m, ds)?);
        }
        row.push(model_ap(&vw, ds)?);
        row.push(model_ap(&agg, ds)?);
        row.push(model_ap(&indep[t], ds)?);
        rows.push(row);
    }
    let mut columns: Vec<String> = train.datasets.iter().map(|d| format!("w_{}", d.id)).collect();
    columns.extend(["visual_world", "aggregate", "independent"].map(String::from));
    let column_means = (0..columns.len())
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / t_count as f64)
        .collect();
    Ok(ProtocolReport {
        dataset_ids: test.datasets.iter().map(|d| d.id.clone()).collect(),
        columns,
        rows,
        column_means,
    })
}

/// Result of the unseen-dataset protocol for one held-out dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenReport {
    pub heldout: usize,
    pub heldout_id: String,
    pub trained_on: Vec<usize>,
    pub ap_visual_world: f64,
    pub ap_aggregate: f64,
    /// Visual-world model of the single-template (`K = 1`) multitask method.
    pub ap_single_template: f64,
    pub improvement_over_aggregate: f64,
    pub improvement_over_single_template: f64,
}

/// Trains on every dataset except `heldout` and tests on all of `heldout`.
pub fn run_unseen(coll: &DatasetCollection, heldout: usize, pc: &ProtocolConfig) -> Result<UnseenReport> {
    if coll.len() < 2 {
        return Err(Error::invalid("the unseen protocol needs at least two datasets"));
    }
    if heldout >= coll.len() {
        return Err(Error::IndexOutOfRange {
            what: "dataset",
            index: heldout,
            len: coll.len(),
        });
    }
    let trained_on: Vec<usize> = (0..coll.len()).filter(|&t| t != heldout).collect();
    let train = coll.subset(&trained_on)?;
    let test = &coll.datasets[heldout];
    let vw = fit_mtl(&train, &pc.h, pc)?.shared_model();
    let agg = fit_aggregate(&train, pc)?;
    let single = fit_mtl(&train, &MtlHyper { k: 1, ..pc.h }, pc)?.shared_model();
    let ap_visual_world = model_ap(&vw, test)?;
    let ap_aggregate = model_ap(&agg, test)?;
    let ap_single_template = model_ap(&single, test)?;
    Ok(UnseenReport {
        heldout,
        heldout_id: test.id.clone(),
        trained_on,
        ap_visual_world,
        ap_aggregate,
        ap_single_template,
        improvement_over_aggregate: relative_improvement(ap_visual_world, ap_aggregate),
        improvement_over_single_template: relative_improvement(ap_visual_world, ap_single_template),
    })
}

/// Hyperparameter grid: `rho = 10^r`, `C1 = 10^a`, `C2 = 10^b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rho_exponents: Vec<f64>,
    pub c_exponents: Vec<f64>,
    pub k_values: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rho_exponents: (-9..=4).map(f64::from).collect(),
            c_exponents: (-18..=8).map(|i| f64::from(i) * 0.5).collect(),
            k_values: (1..=10).collect(),
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.rho_exponents.len() * self.c_exponents.len().pow(2) * self.k_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in sweep order (K, rho, C1, C2 ascending as given).
    pub fn points(&self) -> Vec<MtlHyper> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.k_values {
            for &r in &self.rho_exponents {
                for &a in &self.c_exponents {
                    for &b in &self.c_exponents {
                        out.push(MtlHyper {
                            k,
                            c1: 10f64.powf(a),
                            c2: 10f64.powf(b),
                            rho: 10f64.powf(r),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Which classifier the grid search scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridTarget {
    /// Mean over datasets of the composed model's AP on its own split.
    Composed,
    /// Mean over datasets of the visual-world model's AP.
    VisualWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub h: MtlHyper,
    pub validation_ap: f64,
    /// Filled only when K is selected on a test collection.
    pub test_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: MtlHyper,
    pub table: Vec<GridCell>,
}

fn mean_ap(mt: &MultiTaskModel, eval: &DatasetCollection, target: GridTarget) -> Result<f64> {
    let vw = mt.shared_model();
    let mut sum = 0.0;
    for (t, ds) in eval.datasets.iter().enumerate() {
        sum += match target {
            GridTarget::Composed => model_ap(&mt.compose(t)?, ds)?,
            GridTarget::VisualWorld => model_ap(&vw, ds)?,
        };
    }
    Ok(sum / eval.len() as f64)
}

/// `a` beats `b` when it has higher AP, or equal AP with smaller K, then
/// smaller rho. Remaining ties keep the earlier point.
fn better(a: (f64, &MtlHyper), b: (f64, &MtlHyper)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1.k, a.1.rho) < (b.1.k, b.1.rho))
}

/// Picks the best cell under the tie rules of [`grid_search`].
pub fn select_best(cells: &[(MtlHyper, f64)]) -> Option<MtlHyper> {
    let mut best: Option<&(MtlHyper, f64)> = None;
    for c in cells {
        if best.is_none_or(|b| better((c.1, &c.0), (b.1, &b.0))) {
            best = Some(c);
        }
    }
    best.map(|b| b.0)
}

/// Exhaustive sweep: trains on the 75% split of every dataset and scores the
/// target classifier on the 25% validation split. With `test`, C1, C2 and rho
/// are chosen per K on validation and K itself by mean test AP.
pub fn grid_search(
    coll: &DatasetCollection,
    grid: &GridSpec,
    target: GridTarget,
    test: Option<&DatasetCollection>,
    pc: &ProtocolConfig,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    if let Some(t) = test {
        check_dim(coll.len(), t.len())?;
    }
    let (train, val) = split_collection(coll, pc.split)?;
    let mut table = Vec::with_capacity(grid.len());
    let mut per_k: Vec<(MtlHyper, f64)> = Vec::new();
    for &k in &grid.k_values {
        let mut cells = Vec::new();
        for h in grid.points().into_iter().filter(|h| h.k == k) {
            let mt = fit_mtl(&train, &h, pc)?;
            let v = mean_ap(&mt, &val, target)?;
            cells.push((h, v));
            table.push(GridCell {
                h,
                validation_ap: v,
                test_ap: None,
            });
        }
        if let Some(test) = test {
            let hk = select_best(&cells).expect("nonempty");
            let mt = fit_mtl(&train, &hk, pc)?;
            let ta = mean_ap(&mt, test, target)?;
            if let Some(cell) = table.iter_mut().find(|c| c.h == hk) {
                cell.test_ap = Some(ta);
            }
            per_k.push((hk, ta));
        } else {
            per_k.extend(cells);
        }
    }
    let best = select_best(&per_k).expect("nonempty grid");
    Ok(GridResult { best, table })
}

/// Test AP and final training objective of one initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    /// AP of the initial model.
    pub init_ap: f64,
    /// AP after alternating minimization.
    pub final_ap: f64,
    /// `E` on the training split after alternating minimization.
    pub final_objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitComparison {
    pub random: InitOutcome,
    pub kmeans: InitOutcome,
}

/// Balanced random partition: a seeded shuffle dealt round-robin, so every
/// cluster is nonempty when `n >= k`.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || n < k {
        return Err(Error::invalid(format!("cannot split {n} positives into {k} clusters")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        assignment[i] = slot % k;
    }
    Partition::new(k, assignment)
}

/// Random versus K-means clustering as the starting point of alternating
/// minimization. Both start from per-cluster SVMs on their partition and
/// share the split, seeds and solver settings.
pub fn compare_inits(
    data: &Dataset,
    h: &LsmHyper,
    max_outer: usize,
    seed: u64,
    cfg: &SgdConfig,
) -> Result<InitComparison> {
    let (train, test) = split_train_val(data, SplitSpec { train_fraction: 0.75, seed })?;
    let pos: Vec<&[f64]> = train.positives().collect();
    let run = |part: Partition| -> Result<InitOutcome> {
        let init = cluster_init::init_lsm_from_clusters(&part, &train, h, cfg)?;
        let (w, _) = optim::train_lsm_alternating(&train, h, &init, max_outer, cfg)?;
        Ok(InitOutcome {
            init_ap: model_ap(&init, &test)?,
            final_ap: model_ap(&w, &test)?,
            final_objective: objective::eval_e(&w, &train, h)?,
        })
    };
    let random = run(random_partition(pos.len(), h.k, seed)?)?;
    let kmeans = run(cluster_init::kmeans(&pos, h.k, seed, 10)?.partition())?;
    Ok(InitComparison { random, kmeans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Neg, Pos};

    #[test]
    fn ap_examples() {
        let s = [3.0, 2.0, 1.0];
        assert_eq!(average_precision(&s, &[Pos, Neg, Neg]).unwrap().ap, 1.0);
        assert_eq!(average_precision(&s, &[Neg, Pos, Neg]).unwrap().ap, 0.5);
        let r = average_precision(&s, &[Pos, Neg, Pos]).unwrap();
        assert!((r.ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.recall, vec![0.5, 0.5, 1.0]);
        assert!(average_precision(&s, &[Neg, Neg, Neg]).is_err());
    }

    #[test]
    fn ap_ties_follow_input_order() {
        assert_eq!(average_precision(&[1.0, 1.0], &[Pos, Neg]).unwrap().ap, 1.0);
        assert_eq!(average_precision(&[1.0, 1.0], &[Neg, Pos]).unwrap().ap, 0.5);
    }

    #[test]
    fn default_grid_dimensions() {
        let g = GridSpec::default();
        assert_eq!(g.rho_exponents.len(), 14);
        assert_eq!(g.c_exponents.len(), 27);
        assert_eq!(g.k_values, (1..=10).collect::<Vec<_>>());
        assert_eq!(g.c_exponents[0], -9.0);
        assert_eq!(g.c_exponents[26], 4.0);
    }

    #[test]
    fn tie_rule_prefers_small_k_then_small_rho() {
        let h = |k, rho| MtlHyper {
            k,
            c1: 1.0,
            c2: 1.0,
            rho,
        };
        let cells = [(h(3, 0.1), 0.8), (h(2, 10.0), 0.8), (h(2, 1.0), 0.8), (h(5, 0.1), 0.7)];
        assert_eq!(select_best(&cells), Some(h(2, 1.0)));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn relative_improvement_basic() {
        assert!((relative_improvement(0.55, 0.5) - 0.1).abs() < 1e-12);
        assert_eq!(relative_improvement(0.3, 0.0), 0.0);
    }
}
