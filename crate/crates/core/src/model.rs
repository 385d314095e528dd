//! Parameter containers for latent subcategory models.
//!
//! Biases are folded into the weights: every weight vector has length `d + 1`
//! and is applied to the augmented input `(x, 1)`.

use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// An input vector `(x, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented(Vec<f64>);

impl Augmented {
    pub fn new(x: &[f64]) -> Self {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.extend_from_slice(x);
        v.push(1.0);
        Augmented(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The original, non-augmented features.
    pub fn features(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `K` subclassifiers over augmented inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LsmModel {
    weights: Vec<Vec<f64>>,
}

impl LsmModel {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = weights.first() else {
            return Err(Error::invalid("model needs at least one component"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("weight vectors must include the bias"));
        }
        for w in &weights {
            check_dim(dim, w.len())?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite weight".into()));
            }
        }
        Ok(Self { weights })
    }

    /// All-zero model with `k` components over `d` features.
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: vec![vec![0.0; d + 1]; k.max(1)],
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Number of (non-augmented) features.
    pub fn feature_dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<Vec<f64>> {
        self.weights
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|w| w.iter().map(|v| v * c).collect())
                .collect(),
        }
    }

    /// `(max_k <w_k, (x,1)>, argmax)` for raw features `x`.
    pub(crate) fn score_raw(&self, x: &[f64]) -> (f64, usize) {
        let (k, s) = linalg::argmax(self.weights.iter().map(|w| linalg::dot_aug(w, x)))
            .expect("model has at least one component");
        (s, k)
    }

    pub fn score_features(&self, x: &[f64]) -> Result<(f64, usize)> {
        check_dim(self.feature_dim(), x.len())?;
        Ok(self.score_raw(x))
    }

    /// Maximum component response and the component attaining it.
    pub fn score(&self, x: &Augmented) -> Result<(f64, usize)> {
        check_dim(self.weights[0].len(), x.len())?;
        self.score_features(x.features())
    }

    /// `+1` when some component fires strictly above zero, else `-1`.
    pub fn predict(&self, x: &Augmented) -> Result<i8> {
        let (s, _) = self.score(x)?;
        Ok(if s > 0.0 { 1 } else { -1 })
    }

    /// Hard argmax assignment of positives to components; returns one
    /// component index per input.
    pub fn assign_clusters(&self, positives: &[Augmented]) -> Result<Vec<usize>> {
        positives
            .iter()
            .map(|x| self.score(x).map(|(_, k)| k))
            .collect()
    }

    /// [`assign_clusters`](Self::assign_clusters) over raw feature vectors.
    pub fn assign_features<'a>(&self, xs: impl IntoIterator<Item = &'a [f64]>) -> Vec<usize> {
        xs.into_iter().map(|x| self.score_raw(x).1).collect()
    }
}

/// Shared vectors `w0^k` plus per-dataset bias vectors `v_t^k`; the classifier
/// of dataset `t` uses `w0^k + v_t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel {
    pub(crate) shared: Vec<Vec<f64>>,
    /// Indexed `[t][k]`.
    pub(crate) bias: Vec<Vec<Vec<f64>>>,
}

impl MultiTaskModel {
    pub fn new(shared: Vec<Vec<f64>>, bias: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let shared_model = LsmModel::new(shared)?;
        let dim = shared_model.weights[0].len();
        let k = shared_model.k();
        for bt in &bias {
            check_dim(k, bt.len())?;
            for v in bt {
                check_dim(dim, v.len())?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical("non-finite bias weight".into()));
                }
            }
        }
        Ok(Self {
            shared: shared_model.weights,
            bias,
        })
    }

    pub fn zeros(k: usize, t: usize, d: usize) -> Self {
        let k = k.max(1);
        Self {
            shared: vec![vec![0.0; d + 1]; k],
            bias: vec![vec![vec![0.0; d + 1]; k]; t],
        }
    }

    pub fn k(&self) -> usize {
        self.shared.len()
    }

    pub fn t(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.shared[0].len() - 1
    }

    pub fn shared(&self) -> &[Vec<f64>] {
        &self.shared
    }

    pub fn bias(&self) -> &[Vec<Vec<f64>>] {
        &self.bias
    }

    /// The visual-world model `w0^1..w0^K`.
    pub fn shared_model(&self) -> LsmModel {
        LsmModel {
            weights: self.shared.clone(),
        }
    }

    /// The dataset-`t` model `w0^k + v_t^k`.
    pub fn compose(&self, t: usize) -> Result<LsmModel> {
        let bt = self.bias.get(t).ok_or(Error::IndexOutOfRange {
            what: "dataset",
            index: t,
            len: self.t(),
        })?;
        Ok(LsmModel {
            weights: self
                .shared
                .iter()
                .zip(bt)
                .map(|(w, v)| linalg::add(w, v))
                .collect(),
        })
    }

    /// Largest bias-vector norm, `max_{t,k} ||v_t^k||`.
    pub fn max_bias_norm(&self) -> f64 {
        self.bias
            .iter()
            .flatten()
            .map(|v| linalg::norm(v))
            .fold(0.0, f64::max)
    }
}

/// Model file text: a `K T d` header line (T = 0 for a single-dataset model,
/// `d` the feature dimension) followed by one weight vector of `d + 1` values
/// per line: the `K` shared vectors, then the bias vectors in `t`-major order.
pub fn format_lsm(m: &LsmModel) -> String {
    format_vectors(m.k(), 0, m.feature_dim(), m.weights.iter())
}

pub fn format_mtl(m: &MultiTaskModel) -> String {
    format_vectors(
        m.k(),
        m.t(),
        m.feature_dim(),
        m.shared.iter().chain(m.bias.iter().flatten()),
    )
}

fn format_vectors<'a>(
    k: usize,
    t: usize,
    d: usize,
    vectors: impl Iterator<Item = &'a Vec<f64>>,
) -> String {
    let mut out = format!("{k} {t} {d}\n");
    for v in vectors {
        let line: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Either kind of model, as read back from a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Single(LsmModel),
    MultiTask(MultiTaskModel),
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::invalid("empty model file"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::invalid("bad model header")))
        .collect::<Result<_>>()?;
    let [k, t, d] = header[..] else {
        return Err(Error::invalid("model header must be `K T d`"));
    };
    let mut vectors = Vec::new();
    for l in lines {
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::invalid(format!("bad weight {t:?}"))))
            .collect::<Result<_>>()?;
        check_dim(d + 1, v.len())?;
        vectors.push(v);
    }
    check_dim(k * (t + 1), vectors.len())?;
    let bias_vecs = vectors.split_off(k);
    if t == 0 {
        return LsmModel::new(vectors).map(ModelFile::Single);
    }
    let mut it = bias_vecs.into_iter();
    let bias = (0..t).map(|_| it.by_ref().take(k).collect()).collect();
    MultiTaskModel::new(vectors, bias).map(ModelFile::MultiTask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(ws: &[&[f64]]) -> LsmModel {
        LsmModel::new(ws.iter().map(|w| w.to_vec()).collect()).unwrap()
    }

    #[test]
    fn score_examples() {
        let model = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(model.score(&Augmented::new(&[2.0])).unwrap(), (2.0, 0));
        let zero = m(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(zero.score(&Augmented::new(&[7.0])).unwrap(), (0.0, 0));
        let bias_only = m(&[&[0.0, 1.0]]);
        assert_eq!(bias_only.score(&Augmented::new(&[5.0])).unwrap(), (1.0, 0));
        assert!(model.score(&Augmented::new(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn predict_is_strict() {
        assert_eq!(m(&[&[1.0, 0.0]]).predict(&Augmented::new(&[2.0])).unwrap(), 1);
        assert_eq!(m(&[&[0.0, 0.0]]).predict(&Augmented::new(&[2.0])).unwrap(), -1);
        assert_eq!(m(&[&[0.0, -0.3]]).predict(&Augmented::new(&[2.0])).unwrap(), -1);
    }

    #[test]
    fn compose_adds_bias() {
        let mut mt = MultiTaskModel::zeros(1, 2, 1);
        mt.shared[0] = vec![1.0, 0.0];
        assert_eq!(mt.compose(0).unwrap(), mt.shared_model());
        mt.bias[1][0] = vec![0.0, 1.0];
        assert_eq!(mt.compose(1).unwrap().weights()[0], vec![1.0, 1.0]);
        assert!(matches!(
            mt.compose(5),
            Err(Error::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn assignment_follows_argmax() {
        let model = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let pts = [Augmented::new(&[1.0]), Augmented::new(&[-1.0])];
        assert_eq!(model.assign_clusters(&pts).unwrap(), vec![0, 1]);
        assert_eq!(LsmModel::zeros(2, 1).assign_clusters(&pts).unwrap(), vec![0, 0]);
    }

    #[test]
    fn model_file_round_trips() {
        let mut mt = MultiTaskModel::zeros(2, 3, 2);
        mt.shared[1] = vec![0.1, -2.5e-17, 3.0];
        mt.bias[2][1] = vec![1.0 / 3.0, 0.0, -7.0];
        assert_eq!(
            parse_model(&format_mtl(&mt)).unwrap(),
            ModelFile::MultiTask(mt.clone())
        );
        let single = mt.shared_model();
        let text = format_lsm(&single);
        assert!(text.starts_with("2 0 2\n"));
        assert_eq!(parse_model(&text).unwrap(), ModelFile::Single(single));
    }
}
