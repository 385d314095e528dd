//! Patch selection over abstract detection records.
//!
//! A patch `p = (omega, r)` fires at the candidate placement `z` with the
//! highest appearance response `omega . phi(i, z)`. Its spatial consistency is
//! the IoU between `z` and the box `l` that `r` predicts inside the object
//! box. Patches are ranked by how representative they are for a subcategory
//! and how well they retrieve its images from a negative pool.
//!
//! Appearance is min-max normalized per patch over the image set being
//! scored before it is added to the spatial score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster_init;
use crate::dataio::Label;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::optim::{self, SgdConfig};

/// Axis-aligned box: top-left corner and positive size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid("box coordinates must be finite"));
        }
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid(format!("box size must be positive, got {w} x {h}")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn centre(&self) -> [f64; 2] {
        [self.x + 0.5 * self.w, self.y + 0.5 * self.h]
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// Places the normalized box `r` inside the object box `b`.
pub fn project_rel_pos(r: &BBox, b: &BBox) -> BBox {
    BBox {
        x: b.x + r.x * b.w,
        y: b.y + r.y * b.h,
        w: r.w * b.w,
        h: r.h * b.h,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchModel {
    pub weights: Vec<f64>,
    /// Expected placement relative to the object box; corner in `[0,1]^2`,
    /// size in `(0,1]^2`.
    pub rel_pos: BBox,
}

impl PatchModel {
    pub fn new(weights: Vec<f64>, rel_pos: BBox) -> Result<Self> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(rel_pos.x) && unit(rel_pos.y) && unit(rel_pos.w) && unit(rel_pos.h)) {
            return Err(Error::invalid("relative position must lie in [0,1]^2 x (0,1]^2"));
        }
        if weights.is_empty() || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("patch weights must be nonempty and finite"));
        }
        Ok(Self { weights, rel_pos })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BBox,
    pub features: Vec<f64>,
}

/// One object instance: image, object box and candidate patch placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub object: BBox,
    pub candidates: Vec<Candidate>,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, object: BBox, candidates: Vec<Candidate>) -> Result<Self> {
        let Some(first) = candidates.first() else {
            return Err(Error::invalid("detection record needs a candidate"));
        };
        let d = first.features.len();
        for c in &candidates {
            check_dim(d, c.features.len())?;
        }
        Ok(Self {
            image_id: image_id.into(),
            object,
            candidates,
        })
    }
}

/// Raw response of a patch on one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    /// Index of the best-responding candidate.
    pub placement: usize,
    pub appearance: f64,
    /// IoU of the best placement with the expected box, in `[0,1]`.
    pub spatial: f64,
}

pub fn raw_score(rec: &DetectionRecord, p: &PatchModel) -> Result<RawScore> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in rec.candidates.iter().enumerate() {
        check_dim(p.weights.len(), c.features.len())?;
        let s = linalg::dot(&p.weights, &c.features);
        if best.is_none_or(|b| s > b.1) {
            best = Some((i, s));
        }
    }
    let (placement, appearance) = best.ok_or_else(|| Error::invalid("record has no candidates"))?;
    let l = project_rel_pos(&p.rel_pos, &rec.object);
    Ok(RawScore {
        placement,
        appearance,
        spatial: iou(&rec.candidates[placement].bbox, &l),
    })
}

/// Min-max range used to normalize appearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceNorm {
    pub min: f64,
    pub max: f64,
}

impl AppearanceNorm {
    pub fn over(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self { min, max }
    }

    /// Maps `[min, max]` onto `[0, 1]`; a degenerate range maps to 0.5.
    pub fn apply(&self, a: f64) -> f64 {
        if self.max > self.min {
            (a - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchScores {
    pub appearance: f64,
    pub spatial: f64,
    /// Normalized appearance plus spatial score.
    pub combined: f64,
}

pub fn patch_score(rec: &DetectionRecord, p: &PatchModel, norm: &AppearanceNorm) -> Result<PatchScores> {
    let r = raw_score(rec, p)?;
    Ok(PatchScores {
        appearance: r.appearance,
        spatial: r.spatial,
        combined: norm.apply(r.appearance) + r.spatial,
    })
}

/// Scores of a patch on a set of records, normalized over that set.
pub fn score_set(recs: &[DetectionRecord], p: &PatchModel) -> Result<Vec<PatchScores>> {
    let raw = recs
        .iter()
        .map(|r| raw_score(r, p))
        .collect::<Result<Vec<_>>>()?;
    let norm = AppearanceNorm::over(raw.iter().map(|r| r.appearance));
    Ok(raw
        .iter()
        .map(|r| PatchScores {
            appearance: r.appearance,
            spatial: r.spatial,
            combined: norm.apply(r.appearance) + r.spatial,
        })
        .collect())
}

/// Mean combined score over the subcategory's images.
pub fn representation_measure(p: &PatchModel, recs: &[DetectionRecord]) -> Result<f64> {
    if recs.is_empty() {
        return Err(Error::invalid("representation measure needs at least one record"));
    }
    let s = score_set(recs, p)?;
    Ok(s.iter().map(|s| s.combined).sum::<f64>() / s.len() as f64)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median 1-based rank of the positives when positives and negatives are
/// ranked together by combined score (descending, ties by input order with
/// positives first), divided by the number of positives. Lower is better.
pub fn discrimination_measure(
    p: &PatchModel,
    pos: &[DetectionRecord],
    neg: &[DetectionRecord],
) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            "discrimination measure needs positive and negative records",
        ));
    }
    let mixed: Vec<DetectionRecord> = pos.iter().chain(neg).cloned().collect();
    let s = score_set(&mixed, p)?;
    let mut order: Vec<usize> = (0..mixed.len()).collect();
    order.sort_by(|&a, &b| s[b].combined.total_cmp(&s[a].combined).then(a.cmp(&b)));
    let mut ranks: Vec<f64> = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| i < pos.len())
        .map(|(r, _)| (r + 1) as f64)
        .collect();
    ranks.sort_by(f64::total_cmp);
    Ok(median(&ranks) / pos.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedPatch {
    /// Index into the candidate pool.
    pub index: usize,
    pub representation: f64,
    pub discrimination: f64,
    /// `representation - discrimination`
    pub score: f64,
}

/// The `n` patches with the highest `rep - disc`, ties by pool order.
pub fn select_patches(
    pool: &[PatchModel],
    pos: &[DetectionRecord],
    neg: &[DetectionRecord],
    n: usize,
) -> Result<Vec<SelectedPatch>> {
    if n > pool.len() {
        return Err(Error::invalid(format!(
            "cannot select {n} patches from a pool of {}",
            pool.len()
        )));
    }
    let mut all = pool
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let representation = representation_measure(p, pos)?;
            let discrimination = discrimination_measure(p, pos, neg)?;
            Ok(SelectedPatch {
                index,
                representation,
                discrimination,
                score: representation - discrimination,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    all.truncate(n);
    Ok(all)
}

/// Linear rescoring over score channels `[monolithic, patch_1..patch_n]`;
/// the last weight is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub weights: Vec<f64>,
}

impl CalibrationModel {
    pub fn score(&self, channels: &[f64]) -> Result<f64> {
        check_dim(self.weights.len() - 1, channels.len())?;
        Ok(linalg::dot_aug(&self.weights, channels))
    }
}

/// Trains a linear SVM on held-out score vectors.
pub fn calibrate(
    scores: &[Vec<f64>],
    labels: &[Label],
    lambda: f64,
    cfg: &SgdConfig,
) -> Result<CalibrationModel> {
    check_dim(scores.len(), labels.len())?;
    let Some(first) = scores.first() else {
        return Err(Error::invalid("calibration needs scores"));
    };
    for s in scores {
        check_dim(first.len(), s.len())?;
    }
    let pick = |want: bool| -> Vec<&[f64]> {
        scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.is_pos() == want)
            .map(|(s, _)| s.as_slice())
            .collect()
    };
    let (pos, neg) = (pick(true), pick(false));
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("calibration needs both classes"));
    }
    Ok(CalibrationModel {
        weights: optim::train_svm(&pos, &neg, lambda, cfg)?,
    })
}

/// How predicted boxes are merged into final detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pooling {
    /// Greedy non-maximum suppression at the given IoU threshold.
    Nms { threshold: f64 },
    /// Coordinate-wise (lower) median box.
    Median,
    /// K-means on box centres, one median box per cluster.
    KMeans { k: usize, seed: u64 },
}

impl Pooling {
    pub const NMS_DEFAULT: Pooling = Pooling::Nms { threshold: 0.5 };
}

/// Coordinate-wise median of `(x, y, w, h)`; even counts take the lower
/// middle value.
pub fn median_box(boxes: &[BBox]) -> Result<BBox> {
    if boxes.is_empty() {
        return Err(Error::invalid("median of no boxes"));
    }
    let lower = |f: fn(&BBox) -> f64| {
        let mut v: Vec<f64> = boxes.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v[(v.len() - 1) / 2]
    };
    Ok(BBox {
        x: lower(|b| b.x),
        y: lower(|b| b.y),
        w: lower(|b| b.w),
        h: lower(|b| b.h),
    })
}

/// Indices kept by greedy NMS: visit by descending score (ties by index) and
/// keep a box unless its IoU with an already kept box reaches `threshold`.
pub fn nms(predicted: &[(BBox, f64)], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[b].1.total_cmp(&predicted[a].1).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&j| iou(&predicted[i].0, &predicted[j].0) < threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn pool_boxes(predicted: &[(BBox, f64)], method: Pooling) -> Result<Vec<BBox>> {
    if predicted.is_empty() {
        return Err(Error::invalid("no boxes to pool"));
    }
    let boxes: Vec<BBox> = predicted.iter().map(|p| p.0).collect();
    match method {
        Pooling::Nms { threshold } => {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::invalid("NMS threshold must lie in (0, 1]"));
            }
            Ok(nms(predicted, threshold).into_iter().map(|i| boxes[i]).collect())
        }
        Pooling::Median => Ok(vec![median_box(&boxes)?]),
        Pooling::KMeans { k, seed } => {
            if k == 0 || k > boxes.len() {
                return Err(Error::invalid(format!(
                    "KMEANS pooling needs 1 <= k <= {}",
                    boxes.len()
                )));
            }
            let centres: Vec<Vec<f64>> = boxes.iter().map(|b| b.centre().to_vec()).collect();
            let refs: Vec<&[f64]> = centres.iter().map(|c| c.as_slice()).collect();
            let ci = cluster_init::kmeans(&refs, k, seed, 10)?;
            let mut out: Vec<BBox> = Vec::with_capacity(k);
            for members in ci.partition().members() {
                if members.is_empty() {
                    continue;
                }
                let group: Vec<BBox> = members.iter().map(|&i| boxes[i]).collect();
                let m = median_box(&group)?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            Ok(out)
        }
    }
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats(file: &Path, line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(parse_err(file, line, format!("bad number {t:?}"))),
        })
        .collect()
}

/// Parses a detection-record file.
///
/// Each non-comment line is `image_id candidate_id f_1 .. f_d x y w h`. The
/// candidate id `object` (with no features) gives the object box of the
/// image. Records come out in order of first appearance of their image id.
pub fn parse_detections(text: &str, file: &Path) -> Result<Vec<DetectionRecord>> {
    struct Pending {
        id: String,
        object: Option<BBox>,
        candidates: Vec<Candidate>,
        line: usize,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 6 {
            return Err(parse_err(file, line, "expected `image_id candidate_id ... x y w h`"));
        }
        let nums = parse_floats(file, line, &toks[2..])?;
        let (feat, geo) = nums.split_at(nums.len() - 4);
        let bbox = BBox::new(geo[0], geo[1], geo[2], geo[3]).map_err(|e| parse_err(file, line, e.to_string()))?;
        let idx = match pending.iter().position(|p| p.id == toks[0]) {
            Some(i) => i,
            None => {
                pending.push(Pending {
                    id: toks[0].to_string(),
                    object: None,
                    candidates: Vec::new(),
                    line,
                });
                pending.len() - 1
            }
        };
        let p = &mut pending[idx];
        if toks[1] == "object" {
            if !feat.is_empty() || p.object.is_some() {
                return Err(parse_err(file, line, "object line must be unique and featureless"));
            }
            p.object = Some(bbox);
        } else {
            if feat.is_empty() {
                return Err(parse_err(file, line, "candidate without features"));
            }
            if let Some(c) = p.candidates.first() {
                if c.features.len() != feat.len() {
                    return Err(parse_err(file, line, "feature dimension differs within image"));
                }
            }
            p.candidates.push(Candidate {
                bbox,
                features: feat.to_vec(),
            });
        }
    }
    if pending.is_empty() {
        return Err(parse_err(file, 0, "no detection records"));
    }
    pending
        .into_iter()
        .map(|p| {
            let object = p
                .object
                .ok_or_else(|| parse_err(file, p.line, format!("image {} has no object box", p.id)))?;
            DetectionRecord::new(p.id.clone(), object, p.candidates)
                .map_err(|e| parse_err(file, p.line, format!("image {}: {e}", p.id)))
        })
        .collect()
}

/// Parses a patch metadata file: lines `patch_id rx ry rw rh w_1 .. w_d`.
pub fn parse_patches(text: &str, file: &Path) -> Result<Vec<(String, PatchModel)>> {
    let mut out: Vec<(String, PatchModel)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 6 {
            return Err(parse_err(file, line, "expected `patch_id rx ry rw rh w_1 .. w_d`"));
        }
        let nums = parse_floats(file, line, &toks[1..])?;
        let rel = BBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(|e| parse_err(file, line, e.to_string()))?;
        let p = PatchModel::new(nums[4..].to_vec(), rel).map_err(|e| parse_err(file, line, e.to_string()))?;
        if let Some((_, q)) = out.first() {
            if q.weights.len() != p.weights.len() {
                return Err(parse_err(file, line, "patch weight dimension differs"));
            }
        }
        if out.iter().any(|(id, _)| id == toks[0]) {
            return Err(parse_err(file, line, format!("duplicate patch id {}", toks[0])));
        }
        out.push((toks[0].to_string(), p));
    }
    if out.is_empty() {
        return Err(parse_err(file, 0, "no patches"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn rec(id: &str, object: BBox, cands: &[(BBox, f64)]) -> DetectionRecord {
        DetectionRecord::new(
            id,
            object,
            cands
                .iter()
                .map(|&(bbox, f)| Candidate {
                    bbox,
                    features: vec![f],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &b(1.0, 0.0, 2.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let obj = b(3.0, 4.0, 5.0, 6.0);
        assert_eq!(project_rel_pos(&b(0.0, 0.0, 1.0, 1.0), &obj), obj);
        assert_eq!(
            project_rel_pos(&b(0.25, 0.25, 0.5, 0.5), &b(0.0, 0.0, 4.0, 4.0)),
            b(1.0, 1.0, 2.0, 2.0)
        );
    }

    #[test]
    fn score_uses_argmax_placement() {
        let obj = b(0.0, 0.0, 4.0, 4.0);
        let p = PatchModel::new(vec![1.0], b(0.25, 0.25, 0.5, 0.5)).unwrap();
        let r = rec("a", obj, &[(b(1.0, 1.0, 2.0, 2.0), 0.7)]);
        let s = raw_score(&r, &p).unwrap();
        assert_eq!((s.appearance, s.spatial), (0.7, 1.0));
        let r = rec("a", obj, &[(b(1.0, 1.0, 2.0, 2.0), 0.1), (b(10.0, 10.0, 2.0, 2.0), 0.9)]);
        let s = raw_score(&r, &p).unwrap();
        assert_eq!((s.placement, s.spatial), (1, 0.0));
    }

    #[test]
    fn discrimination_examples() {
        let obj = b(0.0, 0.0, 1.0, 1.0);
        let p = PatchModel::new(vec![1.0], b(0.9, 0.9, 0.1, 0.1)).unwrap();
        let far = b(5.0, 5.0, 1.0, 1.0);
        let pos: Vec<_> = [3.0, 2.0, 1.5].iter().map(|&f| rec("p", obj, &[(far, f)])).collect();
        let neg: Vec<_> = [0.0, -1.0].iter().map(|&f| rec("n", obj, &[(far, f)])).collect();
        assert!((discrimination_measure(&p, &pos, &neg).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let pos2 = &neg[..];
        let neg2 = &pos[..2];
        assert!((discrimination_measure(&p, pos2, neg2).unwrap() - 1.75).abs() < 1e-15);
        assert!(discrimination_measure(&p, &pos, &[]).is_err());
    }

    #[test]
    fn pooling_examples() {
        let boxes = [
            (b(0.0, 0.0, 2.0, 2.0), 0.1),
            (b(2.0, 0.0, 2.0, 2.0), 0.5),
            (b(4.0, 0.0, 2.0, 2.0), 0.3),
        ];
        assert_eq!(pool_boxes(&boxes, Pooling::Median).unwrap(), vec![b(2.0, 0.0, 2.0, 2.0)]);
        assert_eq!(pool_boxes(&boxes, Pooling::NMS_DEFAULT).unwrap().len(), 3);
        let same = [(b(1.0, 1.0, 3.0, 3.0), 0.2); 4];
        for m in [Pooling::NMS_DEFAULT, Pooling::Median, Pooling::KMeans { k: 2, seed: 0 }] {
            assert_eq!(pool_boxes(&same, m).unwrap(), vec![b(1.0, 1.0, 3.0, 3.0)]);
        }
        assert!(pool_boxes(&[], Pooling::Median).is_err());
        assert!(pool_boxes(&boxes, Pooling::KMeans { k: 4, seed: 0 }).is_err());
    }

    #[test]
    fn parse_round() {
        let text = "# demo\nimg1 object 0 0 4 4\nimg1 c0 0.5 1.0 1 1 2 2\nimg1 c1 0.1 0.2 0 0 1 1\n";
        let recs = parse_detections(text, Path::new("d.txt")).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].candidates.len(), 2);
        assert!(parse_detections("img1 c0 1 0 0 1 1\n", Path::new("d.txt")).is_err());
        let ps = parse_patches("p1 0 0 1 1 0.5 0.5\n", Path::new("p.txt")).unwrap();
        assert_eq!(ps[0].1.weights, vec![0.5, 0.5]);
        assert!(parse_patches("p1 0 0 2 1 0.5\n", Path::new("p.txt")).is_err());
    }
}
