//! Multi-dataset feature collections: the sparse text format, stratified
//! train/validation splits and a biased synthetic generator.
//!
//! A dataset file holds one example per line,
//!
//! ```text
//! #dim 4
//! # comment
//! +1 1:0.5 3:-2
//! -1 2:1
//! ```
//!
//! with 1-based feature indices and omitted indices meaning zero. The optional
//! `#dim D` header fixes the dimension of the file (it must be at least the
//! largest index used). A collection is a directory of `*.ds` files loaded in
//! lexicographic order; the dataset id is the file stem.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Pos),
            -1 => Some(Label::Neg),
            _ => None,
        }
    }

    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn is_pos(self) -> bool {
        self == Label::Pos
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: Label) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self { features, label })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, examples: Vec<LabeledExample>) -> Result<Self> {
        let ds = Self {
            id: id.into(),
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.examples.first() else {
            return Err(Error::invalid(format!("dataset {} is empty", self.id)));
        };
        let d = first.features.len();
        for ex in &self.examples {
            crate::error::check_dim(d, ex.features.len())?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.examples
            .iter()
            .filter(|e| e.label.is_pos())
            .map(|e| e.features.as_slice())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.examples
            .iter()
            .filter(|e| !e.label.is_pos())
            .map(|e| e.features.as_slice())
    }

    pub fn n_pos(&self) -> usize {
        self.examples.iter().filter(|e| e.label.is_pos()).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Errors unless the dataset holds both classes.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.n_pos() == 0 || self.n_neg() == 0 {
            return Err(Error::invalid(format!(
                "dataset {} needs at least one positive and one negative",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCollection {
    pub datasets: Vec<Dataset>,
    pub dim: usize,
}

impl DatasetCollection {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        let Some(first) = datasets.first() else {
            return Err(Error::invalid("collection has no datasets"));
        };
        let dim = first.dim();
        for (i, ds) in datasets.iter().enumerate() {
            crate::error::check_dim(dim, ds.dim())?;
            if datasets[..i].iter().any(|o| o.id == ds.id) {
                return Err(Error::invalid(format!("duplicate dataset id {}", ds.id)));
            }
        }
        Ok(Self { datasets, dim })
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    /// All datasets concatenated in order into one dataset.
    pub fn concatenated(&self, id: &str) -> Dataset {
        Dataset {
            id: id.to_string(),
            examples: self
                .datasets
                .iter()
                .flat_map(|d| d.examples.iter().cloned())
                .collect(),
        }
    }

    /// Positive feature vectors pooled across datasets, in dataset order.
    pub fn pooled_positives(&self) -> Vec<&[f64]> {
        self.datasets.iter().flat_map(|d| d.positives()).collect()
    }

    /// Sub-collection made of the given dataset indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let ds = self.datasets.get(i).ok_or(Error::IndexOutOfRange {
                what: "dataset",
                index: i,
                len: self.len(),
            })?;
            out.push(ds.clone());
        }
        Self::new(out)
    }
}

struct ParsedFile {
    examples: Vec<(Label, Vec<(usize, f64)>)>,
    max_index: usize,
    declared_dim: Option<usize>,
}

fn parse_file(path: &Path, text: &str) -> Result<ParsedFile> {
    let err = |line: usize, msg: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        msg,
    };
    let mut examples = Vec::new();
    let mut max_index = 0;
    let mut declared_dim = None;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(dim) = rest.trim_start().strip_prefix("dim") {
                let dim = dim
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| err(lineno, format!("bad #dim header: {line}")))?;
                declared_dim = Some(dim);
            }
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label_val: i64 = label_tok
            .parse()
            .map_err(|_| err(lineno, format!("bad label {label_tok:?}")))?;
        let label = Label::from_int(label_val)
            .ok_or_else(|| err(lineno, format!("label not ±1: {label_tok}")))?;
        let mut feats = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(err(lineno, "feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(err(lineno, format!("non-finite value {val}")));
            }
            if feats.iter().any(|&(i, _)| i == idx) {
                return Err(err(lineno, format!("duplicate index {idx}")));
            }
            max_index = max_index.max(idx);
            feats.push((idx, val));
        }
        examples.push((label, feats));
    }
    if examples.is_empty() {
        return Err(err(0, "empty file".into()));
    }
    if let Some(dim) = declared_dim {
        if dim < max_index {
            return Err(err(
                0,
                format!("#dim {dim} smaller than max index {max_index}"),
            ));
        }
    }
    Ok(ParsedFile {
        examples,
        max_index,
        declared_dim,
    })
}

/// Loads every `*.ds` file of a directory into a collection.
///
/// The collection dimension is the largest (declared or used) dimension over
/// all files; shorter vectors are zero-padded.
pub fn load_collection(dir: impl AsRef<Path>) -> Result<DatasetCollection> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "ds"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no .ds files in {}",
            dir.display()
        )));
    }
    let mut parsed = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p)?;
        parsed.push(parse_file(p, &text)?);
    }
    let dim = parsed
        .iter()
        .map(|f| f.declared_dim.unwrap_or(0).max(f.max_index))
        .max()
        .unwrap_or(0);
    let datasets = paths
        .iter()
        .zip(parsed)
        .map(|(p, f)| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let examples = f
                .examples
                .into_iter()
                .map(|(label, feats)| {
                    let mut x = vec![0.0; dim];
                    for (i, v) in feats {
                        x[i - 1] = v;
                    }
                    LabeledExample { features: x, label }
                })
                .collect();
            Dataset { id, examples }
        })
        .collect();
    DatasetCollection::new(datasets)
}

/// Renders one dataset in the sparse text format. Zero entries are omitted and
/// values use the shortest representation that parses back to the same `f64`.
pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#dim {}", ds.dim());
    for ex in &ds.examples {
        out.push_str(match ex.label {
            Label::Pos => "+1",
            Label::Neg => "-1",
        });
        for (i, v) in ex.features.iter().enumerate() {
            if *v != 0.0 || v.is_sign_negative() {
                let _ = write!(out, " {}:{}", i + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `<id>.ds` for every dataset into `dir`, creating it if needed.
pub fn save_collection(coll: &DatasetCollection, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for ds in &coll.datasets {
        fs::write(dir.join(format!("{}.ds", ds.id)), format_dataset(ds))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Stratified split into (train, validation).
///
/// Each class contributes `round(train_fraction * n_class)` examples to the
/// training half, chosen by a seeded shuffle; both halves keep the original
/// example order.
pub fn split_train_val(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    let pos: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.examples[i].label.is_pos())
        .collect();
    let neg: Vec<usize> = (0..ds.len())
        .filter(|&i| !ds.examples[i].label.is_pos())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; ds.len()];
    for (class, idx) in [("positive", pos), ("negative", neg)] {
        let n_train = (spec.train_fraction * idx.len() as f64).round() as usize;
        if n_train == 0 || n_train >= idx.len() {
            return Err(Error::invalid(format!(
                "dataset {}: {} {class} examples cannot fill both split halves",
                ds.id,
                idx.len()
            )));
        }
        let mut shuffled = idx;
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..n_train] {
            in_train[i] = true;
        }
    }
    let pick = |keep: bool, suffix: &str| Dataset {
        id: format!("{}{suffix}", ds.id),
        examples: ds
            .examples
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == keep)
            .map(|(e, _)| e.clone())
            .collect(),
    };
    Ok((pick(true, ""), pick(false, "")))
}

/// Parameters of the biased Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of datasets `T`.
    pub datasets: usize,
    /// Number of true positive subcategories.
    pub clusters: usize,
    pub dim: usize,
    /// Positives per cluster per dataset.
    pub pos_per_cluster: usize,
    pub neg_per_dataset: usize,
    /// Distance of each cluster centre from the origin.
    pub separation: f64,
    /// Norm of the per-dataset shift added to every positive mean.
    pub bias_shift: f64,
    /// Standard deviation of positives around their (shifted) mean.
    pub noise: f64,
    /// Standard deviation of the background negatives around the origin.
    pub neg_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            datasets: 3,
            clusters: 2,
            dim: 2,
            pos_per_cluster: 50,
            neg_per_dataset: 100,
            separation: 4.0,
            bias_shift: 1.0,
            noise: 0.5,
            neg_scale: 1.0,
            seed: 0,
        }
    }
}

/// Generator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Unshifted cluster centres.
    pub base_means: Vec<Vec<f64>>,
    /// Per-dataset shift vectors, each of norm `bias_shift`.
    pub shifts: Vec<Vec<f64>>,
    /// For every dataset and example, the generating cluster of a positive.
    pub cluster_of: Vec<Vec<Option<usize>>>,
}

pub fn synth_biased_collection(cfg: &SynthConfig) -> Result<DatasetCollection> {
    synth_with_truth(cfg).map(|(c, _)| c)
}

/// Cluster centres sit on a circle of radius `separation` in the first two
/// coordinates (on the first axis at `±separation` when `dim == 1`); each
/// dataset draws one random shift direction applied to all of its positives.
/// Negatives come from an isotropic Gaussian at the origin.
pub fn synth_with_truth(cfg: &SynthConfig) -> Result<(DatasetCollection, SynthTruth)> {
    if cfg.datasets == 0
        || cfg.clusters == 0
        || cfg.dim == 0
        || cfg.pos_per_cluster == 0
        || cfg.neg_per_dataset == 0
    {
        return Err(Error::invalid("synth counts must be positive"));
    }
    if !(cfg.noise > 0.0 && cfg.neg_scale > 0.0) || cfg.separation < 0.0 || cfg.bias_shift < 0.0
    {
        return Err(Error::invalid(
            "synth scales must be positive (separation and shift nonnegative)",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_means: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|k| {
            let mut m = vec![0.0; cfg.dim];
            if cfg.dim == 1 {
                m[0] = if k % 2 == 0 { cfg.separation } else { -cfg.separation };
            } else {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / cfg.clusters as f64;
                m[0] = cfg.separation * angle.cos();
                m[1] = cfg.separation * angle.sin();
            }
            m
        })
        .collect();
    let shifts: Vec<Vec<f64>> = (0..cfg.datasets)
        .map(|_| {
            let mut u: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = linalg::norm(&u);
            linalg::scale(if n > 0.0 { cfg.bias_shift / n } else { 0.0 }, &mut u);
            u
        })
        .collect();
    let width = cfg.datasets.to_string().len().max(2);
    let mut datasets = Vec::with_capacity(cfg.datasets);
    let mut cluster_of = Vec::with_capacity(cfg.datasets);
    for (t, shift) in shifts.iter().enumerate() {
        let mut examples = Vec::new();
        let mut truth = Vec::new();
        for (k, base) in base_means.iter().enumerate() {
            let centre = linalg::add(base, shift);
            for _ in 0..cfg.pos_per_cluster {
                let x = centre
                    .iter()
                    .map(|c| c + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                examples.push(LabeledExample {
                    features: x,
                    label: Label::Pos,
                });
                truth.push(Some(k));
            }
        }
        for _ in 0..cfg.neg_per_dataset {
            let x = (0..cfg.dim)
                .map(|_| cfg.neg_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            examples.push(LabeledExample {
                features: x,
                label: Label::Neg,
            });
            truth.push(None);
        }
        datasets.push(Dataset {
            id: format!("ds{t:0width$}"),
            examples,
        });
        cluster_of.push(truth);
    }
    let coll = DatasetCollection::new(datasets)?;
    Ok((
        coll,
        SynthTruth {
            base_means,
            shifts,
            cluster_of,
        },
    ))
}
