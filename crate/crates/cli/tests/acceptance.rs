//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lsm_core::cluster_init::{self, kmeans};
use lsm_core::dataio::{synth_biased_collection, Dataset, DatasetCollection, Label, LabeledExample};
use lsm_core::eval::{self, average_precision, ProtocolConfig};
use lsm_core::objective::{self, hinge, BoundInputs};
use lsm_core::optim::{self, SgdConfig};
use lsm_core::patchsel::{self, BBox, Candidate, DetectionRecord, PatchModel};
use lsm_core::{linalg, LsmHyper, LsmModel, MtlHyper, MultiTaskModel, Regularizer, SynthConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * gauss(rng)).collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, n_pos: usize, n_neg: usize, d: usize) -> Dataset {
    let mut ex = Vec::new();
    for _ in 0..n_pos {
        ex.push(LabeledExample::new(random_vec(rng, d, 1.0), Label::Pos).unwrap());
    }
    for _ in 0..n_neg {
        ex.push(LabeledExample::new(random_vec(rng, d, 1.0), Label::Neg).unwrap());
    }
    Dataset::new("r", ex).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, k: usize, d: usize, scale: f64) -> LsmModel {
    LsmModel::new((0..k).map(|_| random_vec(rng, d + 1, scale)).collect()).unwrap()
}

fn quick_sgd(epochs: usize, seed: u64) -> SgdConfig {
    SgdConfig {
        epochs,
        seed,
        ..SgdConfig::default()
    }
}

// 1. Pointwise sandwich bound on tiny random instances.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut pino_bad, mut s_bad, mut min_form_bad) = (0, 0, 0);
    for _ in 0..1000 {
        let d = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let n_pos = rng.random_range(k..=k + 4);
        let n_neg = rng.random_range(1..=4);
        let data = random_dataset(&mut rng, n_pos, n_neg, d);
        let pos: Vec<&[f64]> = data.positives().collect();
        let neg: Vec<&[f64]> = data.negatives().collect();
        let ci = kmeans(&pos, k, rng.random(), 3).unwrap();
        let bi = BoundInputs::new(ci.means.clone(), ci.assignment.clone(), &pos, 1.0).unwrap();
        let scale = rng.random_range(0.1..3.0);
        let w = random_model(&mut rng, k, d, scale);
        let lambda = rng.random_range(0.0..5.0);
        let h = LsmHyper::new(k, lambda, Regularizer::MaxNorm);
        let tol = 1e-9;
        let (lo, mid, hi) = objective::pino_gap(&w, &bi, &pos).unwrap();
        if lo > mid + tol || mid > hi + tol {
            pino_bad += 1;
        }
        let (lo, mid, hi) = objective::pino_gap_min_form(&w, &bi, &pos).unwrap();
        if lo > mid + tol || mid > hi + tol {
            min_form_bad += 1;
        }
        let e = objective::eval_e(&w, &data, &h).unwrap();
        let s_lo = objective::eval_s(&w, &bi, &neg, lambda - bi.epsilon).unwrap();
        let s_hi = objective::eval_s(&w, &bi, &neg, lambda + bi.epsilon).unwrap();
        if s_lo > e + tol || e > s_hi + tol {
            s_bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pino_bad == 0 && s_bad == 0 && secs < 30.0,
        format!("sandwich violated in {pino_bad}/1000 draws, S-bound in {s_bad}/1000 (min-form variant: {min_form_bad}/1000), {secs:.1}s"),
    )
}

// 2. Optimized bound with lambda = 10 eps and eps monotone in K.
fn criterion_2() -> Outcome {
    let mut failures = 0;
    let mut eps_bad = 0;
    let cfg = quick_sgd(30, 0);
    for seed in 0..20u64 {
        let coll = synth_biased_collection(&SynthConfig {
            datasets: 1,
            clusters: 3,
            pos_per_cluster: 15,
            neg_per_dataset: 40,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let data = &coll.datasets[0];
        let pos: Vec<&[f64]> = data.positives().collect();
        let k = 3;
        let eps = kmeans(&pos, k, seed, 10).unwrap().epsilon;
        let rep = cluster_init::check_bound(data, k, 10.0 * eps, seed, 0, &cfg.with_seed(seed)).unwrap();
        if rep.left_holds != Some(true) || !rep.right_holds {
            failures += 1;
        }
        let eps_k: Vec<f64> = (1..=6).map(|k| kmeans(&pos, k, seed, 10).unwrap().epsilon).collect();
        if eps_k.windows(2).any(|w| w[1] > w[0] + 1e-9) {
            eps_bad += 1;
        }
    }
    outcome(
        failures == 0 && eps_bad == 0,
        format!("bound failed on {failures}/20 instances; eps increased with K on {eps_bad}/20"),
    )
}

fn per_sample_j(mt: &MultiTaskModel, x: &[f64], y: f64, t: usize, h: &MtlHyper) -> f64 {
    let score = |ws: &[Vec<f64>]| ws.iter().map(|w| linalg::dot_aug(w, x)).fold(f64::NEG_INFINITY, f64::max);
    let composed: Vec<Vec<f64>> = mt
        .shared()
        .iter()
        .zip(&mt.bias()[t])
        .map(|(w, v)| w.iter().zip(v).map(|(a, b)| a + b).collect())
        .collect();
    let reg: f64 = mt
        .shared()
        .iter()
        .zip(&mt.bias()[t])
        .map(|(w, v)| linalg::sq_norm(w) + h.rho * linalg::sq_norm(v))
        .sum();
    h.c1 * hinge(y * score(&composed)) + h.c2 * hinge(y * score(mt.shared())) + reg
}

/// Distance of the example from every kink of the per-sample objective.
fn kink_distance(mt: &MultiTaskModel, x: &[f64], y: f64, t: usize) -> f64 {
    let shared: Vec<f64> = mt.shared().iter().map(|w| linalg::dot_aug(w, x)).collect();
    let composed: Vec<f64> = mt
        .shared()
        .iter()
        .zip(&mt.bias()[t])
        .map(|(w, v)| linalg::dot_aug(w, x) + linalg::dot_aug(v, x))
        .collect();
    let mut dist = f64::INFINITY;
    for s in [&shared, &composed] {
        let mut sorted = s.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted.len() > 1 {
            dist = dist.min(sorted[0] - sorted[1]);
        }
        dist = dist.min((y * sorted[0] - 1.0).abs());
    }
    dist
}

// 3. Subgradient against central finite differences at smooth points.
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut checked, mut worst) = (0, 0.0f64);
    let step = 1e-6;
    while checked < 250 {
        let k = rng.random_range(1..=3);
        let t_count = rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        let shared = (0..k).map(|_| random_vec(&mut rng, d + 1, 1.0)).collect();
        let bias = (0..t_count)
            .map(|_| (0..k).map(|_| random_vec(&mut rng, d + 1, 0.5)).collect())
            .collect();
        let mt = MultiTaskModel::new(shared, bias).unwrap();
        let x = random_vec(&mut rng, d, 1.0);
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let t = rng.random_range(0..t_count);
        let h = MtlHyper {
            k,
            c1: rng.random_range(0.1..3.0),
            c2: rng.random_range(0.1..3.0),
            rho: rng.random_range(0.1..3.0),
        };
        if kink_distance(&mt, &x, y, t) < 1e-3 {
            continue;
        }
        let g = optim::subgrad_j(&mt, &x, y, t, &h).unwrap();
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for kk in 0..k {
            for j in 0..=d {
                for bias_block in [false, true] {
                    let f = |delta: f64| {
                        let mut m = mt.clone();
                        let (mut sh, mut bi) = (m.shared().to_vec(), m.bias().to_vec());
                        if bias_block {
                            bi[t][kk][j] += delta;
                        } else {
                            sh[kk][j] += delta;
                        }
                        m = MultiTaskModel::new(sh, bi).unwrap();
                        per_sample_j(&m, &x, y, t, &h)
                    };
                    num.push((f(step) - f(-step)) / (2.0 * step));
                    ana.push(if bias_block { g.bias[kk][j] } else { g.shared[kk][j] });
                }
            }
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = linalg::norm(&num).max(1e-8);
        worst = worst.max(diff / scale);
        checked += 1;
    }
    outcome(worst < 1e-4, format!("{checked} smooth points, worst relative error {worst:.2e}"))
}

// 4. Monotone F across alternating-minimization iterations.
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut bad = 0;
    let mut iters = 0;
    for inst in 0..50u64 {
        let d = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let (n_pos, n_neg) = (rng.random_range(k + 2..=12), rng.random_range(3..=12));
        let data = random_dataset(&mut rng, n_pos, n_neg, d);
        let reg = [Regularizer::SumSq, Regularizer::MaxSq, Regularizer::MaxNorm][inst as usize % 3];
        let mut h = LsmHyper::new(k, rng.random_range(0.01..2.0), reg);
        h.neg_variant = inst % 2 == 0;
        let init = random_model(&mut rng, k, d, 0.5);
        let (_, trace) = optim::train_lsm_alternating(&data, &h, &init, 10, &quick_sgd(20, inst)).unwrap();
        iters += trace.len();
        if trace.windows(2).any(|w| w[1].objective_f > w[0].objective_f + 1e-9) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("F increased on {bad}/50 instances ({iters} outer iterations)"))
}

fn collection(seed: u64, bias_shift: f64, datasets: usize) -> DatasetCollection {
    synth_biased_collection(&SynthConfig {
        datasets,
        clusters: 2,
        pos_per_cluster: 30,
        neg_per_dataset: 60,
        bias_shift,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

// 5. Reductions.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_a = 0.0f64;
    for _ in 0..200 {
        let coll = collection(rng.random(), 1.0, 3);
        let shared = random_vec(&mut rng, coll.dim + 1, 1.0);
        let bias: Vec<Vec<f64>> = (0..coll.len()).map(|_| random_vec(&mut rng, coll.dim + 1, 0.5)).collect();
        let h = MtlHyper {
            k: 1,
            c1: rng.random_range(0.0..2.0),
            c2: rng.random_range(0.0..2.0),
            rho: rng.random_range(0.0..2.0),
        };
        let mt = MultiTaskModel::new(vec![shared.clone()], bias.iter().map(|v| vec![v.clone()]).collect()).unwrap();
        let j = objective::eval_j(&mt, &coll, &h).unwrap();
        let s = objective::eval_single_template(&shared, &bias, &coll, h.c1, h.c2, h.rho).unwrap();
        worst_a = worst_a.max((j - s).abs() / j.abs().max(1.0));
    }
    let coll = collection(5, 2.0, 3);
    let sgd = quick_sgd(50, 5);
    let h0 = MtlHyper {
        k: 2,
        c1: 0.0,
        c2: 1.0,
        rho: 1.0,
    };
    let pc = ProtocolConfig::new(h0, sgd.clone());
    let v_c1 = eval::fit_mtl(&coll, &h0, &pc).unwrap().max_bias_norm();
    let h_big = MtlHyper {
        k: 2,
        c1: 1.0,
        c2: 1.0,
        rho: 1e6,
    };
    let pc = ProtocolConfig::new(h_big, sgd);
    let (train, test) = eval::split_collection(&coll, pc.split).unwrap();
    let mt = eval::fit_mtl(&train, &h_big, &pc).unwrap();
    let agg = eval::fit_aggregate(&train, &pc).unwrap();
    let pooled_test = test.concatenated("test");
    let ap_vw = eval::model_ap(&mt.shared_model(), &pooled_test).unwrap();
    let ap_agg = eval::model_ap(&agg, &pooled_test).unwrap();
    let v_rho = mt.max_bias_norm();
    let pass = worst_a < 1e-12 && v_c1 < 1e-3 && v_rho < 1e-3 && (ap_vw - ap_agg).abs() * 100.0 <= 1.0;
    outcome(
        pass,
        format!(
            "(a) max rel diff {worst_a:.1e}; (b) max|v| {v_c1:.1e}; (c) max|v| {v_rho:.1e}, AP vw {:.2} vs agg {:.2}",
            ap_vw * 100.0,
            ap_agg * 100.0
        ),
    )
}

// 6. K-means initialization beats random initialization.
fn criterion_6() -> Outcome {
    let mut wins = 0;
    let (mut obj_km, mut obj_rand) = (0.0, 0.0);
    for seed in 0..30u64 {
        let coll = synth_biased_collection(&SynthConfig {
            datasets: 1,
            clusters: 2,
            pos_per_cluster: 40,
            neg_per_dataset: 80,
            bias_shift: 1.0,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let h = LsmHyper::new(2, 1.0, Regularizer::MaxNorm);
        let c = eval::compare_inits(&coll.datasets[0], &h, 10, seed, &quick_sgd(30, seed)).unwrap();
        if c.kmeans.final_ap >= c.random.final_ap {
            wins += 1;
        }
        obj_km += c.kmeans.final_objective / 30.0;
        obj_rand += c.random.final_objective / 30.0;
    }
    outcome(
        wins >= 24 && obj_km <= obj_rand,
        format!("K-means AP >= random AP in {wins}/30 seeds; mean objective {obj_km:.3} vs {obj_rand:.3}"),
    )
}

// 7. Leave-one-out visual-world model versus the aggregate baseline.
fn criterion_7() -> Outcome {
    let mut wins = 0;
    let mut gains = Vec::new();
    for seed in 0..10u64 {
        let coll = collection(seed, 3.0, 4);
        let h = MtlHyper {
            k: 2,
            c1: 1.0,
            c2: 1.0,
            rho: 1.0,
        };
        let pc = ProtocolConfig::new(h, quick_sgd(30, seed));
        let r = eval::run_unseen(&coll, (seed % 4) as usize, &pc).unwrap();
        if r.ap_visual_world >= r.ap_aggregate {
            wins += 1;
        }
        gains.push(r.improvement_over_aggregate);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    outcome(
        wins >= 8,
        format!("visual-world AP >= aggregate AP in {wins}/10 seeds, mean relative change {:+.2}%", mean * 100.0),
    )
}

fn ap_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let n = scores.len();
    let rank = |i: usize| 1 + (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let mut terms: Vec<(usize, f64)> = (0..n)
        .filter(|&i| labels[i].is_pos())
        .map(|i| {
            let r = rank(i);
            let hits = (0..n).filter(|&j| labels[j].is_pos() && rank(j) <= r).count();
            (r, hits as f64 / r as f64)
        })
        .collect();
    terms.sort_by_key(|t| t.0);
    terms.iter().map(|t| t.1).sum::<f64>() / terms.len() as f64
}

// 8. Average precision against a brute-force oracle.
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut mismatches = 0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.random::<bool>() { Label::Pos } else { Label::Neg })
            .collect();
        if !labels.iter().any(|l| l.is_pos()) {
            continue;
        }
        if average_precision(&scores, &labels).unwrap().ap != ap_oracle(&scores, &labels) {
            mismatches += 1;
        }
        done += 1;
    }
    outcome(mismatches == 0, format!("{mismatches}/1000 mismatches"))
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0..8) as f64 * 0.5,
        rng.random_range(0..8) as f64 * 0.5,
        rng.random_range(1..6) as f64 * 0.5,
        rng.random_range(1..6) as f64 * 0.5,
    )
    .unwrap()
}

fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = ix.max(0.0) * iy.max(0.0);
    inter / (a.w * a.h + b.w * b.h - inter)
}

fn random_record(rng: &mut ChaCha8Rng, d: usize, img: usize) -> DetectionRecord {
    let n = rng.random_range(1..=4);
    DetectionRecord::new(
        format!("img{img}"),
        random_box(rng),
        (0..n)
            .map(|_| Candidate {
                bbox: random_box(rng),
                features: random_vec(rng, d, 1.0),
            })
            .collect(),
    )
    .unwrap()
}

fn random_patch(rng: &mut ChaCha8Rng, d: usize) -> PatchModel {
    let w = rng.random_range(0.1..=1.0);
    let h = rng.random_range(0.1..=1.0);
    PatchModel::new(
        random_vec(rng, d, 1.0),
        BBox::new(rng.random_range(0.0..=1.0 - w), rng.random_range(0.0..=1.0 - h), w, h).unwrap(),
    )
    .unwrap()
}

/// (appearance, spatial) of a patch, recomputed from the definitions.
fn raw_oracle(rec: &DetectionRecord, p: &PatchModel) -> (f64, f64) {
    let dots: Vec<f64> = rec
        .candidates
        .iter()
        .map(|c| c.features.iter().zip(&p.weights).map(|(a, b)| a * b).sum())
        .collect();
    let mut z = 0;
    for (i, &s) in dots.iter().enumerate() {
        if s > dots[z] {
            z = i;
        }
    }
    let b = rec.object;
    let l = BBox {
        x: b.x + p.rel_pos.x * b.w,
        y: b.y + p.rel_pos.y * b.h,
        w: p.rel_pos.w * b.w,
        h: p.rel_pos.h * b.h,
    };
    (dots[z], iou_oracle(&rec.candidates[z].bbox, &l))
}

fn combined_oracle(recs: &[DetectionRecord], p: &PatchModel) -> Vec<f64> {
    let raw: Vec<(f64, f64)> = recs.iter().map(|r| raw_oracle(r, p)).collect();
    let lo = raw.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|&(a, s)| if hi > lo { (a - lo) / (hi - lo) } else { 0.5 } + s)
        .collect()
}

fn disc_oracle(p: &PatchModel, pos: &[DetectionRecord], neg: &[DetectionRecord]) -> f64 {
    let mixed: Vec<DetectionRecord> = pos.iter().chain(neg).cloned().collect();
    let c = combined_oracle(&mixed, p);
    let mut ranks: Vec<f64> = (0..pos.len())
        .map(|i| 1.0 + (0..mixed.len()).filter(|&j| c[j] > c[i] || (c[j] == c[i] && j < i)).count() as f64)
        .collect();
    ranks.sort_by(f64::total_cmp);
    let m = ranks.len();
    let med = if m % 2 == 1 { ranks[m / 2] } else { (ranks[m / 2 - 1] + ranks[m / 2]) / 2.0 };
    med / pos.len() as f64
}

/// Checks that `kept` is exactly what greedy suppression must produce.
fn nms_valid(boxes: &[(BBox, f64)], kept: &[usize]) -> bool {
    let n = boxes.len();
    let before = |a: usize, b: usize| boxes[a].1 > boxes[b].1 || (boxes[a].1 == boxes[b].1 && a < b);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n - 1 - i {
            if before(order[j + 1], order[j]) {
                order.swap(j, j + 1);
            }
        }
    }
    let mut expect = Vec::new();
    for &i in &order {
        if expect.iter().all(|&j: &usize| iou_oracle(&boxes[i].0, &boxes[j].0) < 0.5) {
            expect.push(i);
        }
    }
    let top_kept = kept.first() == Some(&order[0]);
    let pairwise = kept.iter().all(|&a| kept.iter().all(|&b| a == b || iou_oracle(&boxes[a].0, &boxes[b].0) < 0.5));
    let covered = (0..n).filter(|i| !kept.contains(i)).all(|i| {
        kept.iter().any(|&j| before(j, i) && iou_oracle(&boxes[i].0, &boxes[j].0) >= 0.5)
    });
    expect == kept && top_kept && pairwise && covered
}

// 9. Patch math against independent reimplementations.
fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let tol = 1e-12;
    let mut bad = [0usize; 5];
    for inst in 0..500 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        if (patchsel::iou(&a, &b) - iou_oracle(&a, &b)).abs() > tol {
            bad[0] += 1;
        }
        let r = random_patch(&mut rng, 1).rel_pos;
        let l = patchsel::project_rel_pos(&r, &a);
        let expect = [a.x + r.x * a.w, a.y + r.y * a.h, r.w * a.w, r.h * a.h];
        if [l.x, l.y, l.w, l.h].iter().zip(expect).any(|(u, v)| (u - v).abs() > tol) {
            bad[1] += 1;
        }
        let d = rng.random_range(1..=3);
        let p = random_patch(&mut rng, d);
        let pos: Vec<_> = (0..rng.random_range(1..=5)).map(|i| random_record(&mut rng, d, i)).collect();
        let neg: Vec<_> = (0..rng.random_range(1..=5)).map(|i| random_record(&mut rng, d, 100 + i)).collect();
        let got = patchsel::score_set(&pos, &p).unwrap();
        let want = combined_oracle(&pos, &p);
        if got.iter().zip(&want).any(|(g, w)| (g.combined - w).abs() > tol) {
            bad[2] += 1;
        }
        let disc = patchsel::discrimination_measure(&p, &pos, &neg).unwrap();
        if (disc - disc_oracle(&p, &pos, &neg)).abs() > tol {
            bad[3] += 1;
        }
        let n = 1 + inst % 10;
        let boxes: Vec<(BBox, f64)> = (0..n)
            .map(|_| (random_box(&mut rng), rng.random_range(0..4) as f64))
            .collect();
        if !nms_valid(&boxes, &patchsel::nms(&boxes, 0.5)) {
            bad[4] += 1;
        }
    }
    outcome(
        bad.iter().all(|&b| b == 0),
        format!(
            "mismatches over 500: iou {}, project {}, score {}, disc {}, nms {}",
            bad[0], bad[1], bad[2], bad[3], bad[4]
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_lsm"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

// 10. Byte-identical results for identical seeds.
fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = root.join("data");
    if !run_cli(&["synth", "--out", &s(&data), "--seed", "3", "--pos-per-cluster", "20", "--neg-per-dataset", "40"]) {
        return outcome(false, "synth failed");
    }
    let commands: [(&str, &[&str]); 4] = [
        ("train-lsm", &["--k", "2", "--lambda", "0.5", "--epochs", "20", "--max-outer", "5"]),
        ("train-debias", &["--k", "2", "--epochs", "20"]),
        ("eval-seen", &["--k", "2", "--epochs", "10"]),
        ("eval-unseen", &["--k", "2", "--epochs", "10", "--heldout", "1"]),
    ];
    let mut differing = Vec::new();
    for (cmd, extra) in commands {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = root.join(format!("{cmd}-{run}"));
            let mut args = vec![cmd.to_string(), "--data".into(), s(&data), "--seed".into(), "11".into(), "--out".into(), s(&out)];
            args.extend(extra.iter().map(|a| a.to_string()));
            let refs: Vec<&str> = args.iter().map(|a| a.as_str()).collect();
            if !run_cli(&refs) {
                return outcome(false, format!("{cmd} failed"));
            }
            let mut files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            outputs.push(files.iter().map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap())).collect::<Vec<_>>());
        }
        if outputs[0] != outputs[1] {
            differing.push(cmd);
        }
    }
    outcome(differing.is_empty(), format!("4 subcommands run twice; differing: {differing:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 sandwich bound, 1000 random draws", criterion_1),
        ("2 optimized bound, lambda = 10 eps", criterion_2),
        ("3 subgradient vs finite differences", criterion_3),
        ("4 monotone F in alternating minimization", criterion_4),
        ("5 reductions (K=1, C1=0, rho=1e6)", criterion_5),
        ("6 K-means init vs random init", criterion_6),
        ("7 unseen visual-world vs aggregate", criterion_7),
        ("8 AP oracle", criterion_8),
        ("9 patch math oracles", criterion_9),
        ("10 CLI determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.split(' ').next() == Some(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        println!(
            "{} criterion {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
