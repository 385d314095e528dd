//! Dense vector helpers on plain slices.
//!
//! All reductions run in index order so results are bit-stable.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<w, (x, 1)>` for a weight vector of length `x.len() + 1`.
#[inline]
pub fn dot_aug(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len() + 1);
    dot(&w[..x.len()], x) + w[x.len()]
}

#[inline]
pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    sq_norm(a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += alpha * (x, 1)`
#[inline]
pub fn axpy_aug(alpha: f64, x: &[f64], y: &mut [f64]) {
    let d = x.len();
    axpy(alpha, x, &mut y[..d]);
    y[d] += alpha;
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Index and value of the maximum; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Index and value of the minimum; ties go to the lowest index.
pub fn argmin(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    argmax(values.into_iter().map(|v| -v)).map(|(i, v)| (i, -v))
}

pub fn mean(points: &[&[f64]]) -> Vec<f64> {
    let d = points.first().map_or(0, |p| p.len());
    let mut m = vec![0.0; d];
    for p in points {
        axpy(1.0, p, &mut m);
    }
    scale(1.0 / points.len() as f64, &mut m);
    m
}
