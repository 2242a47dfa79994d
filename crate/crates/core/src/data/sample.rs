use crate::data::FeatureBag;
use crate::math::Matrix;

/// Row indices kept when shrinking `t_len` snippets to `t_max`:
/// `round(m·(T−1)/(t_max−1))` for `m = 0..t_max`. Identity when `T ≤ t_max`.
pub fn uniform_sample_indices(t_len: usize, t_max: usize) -> Vec<usize> {
    if t_len <= t_max || t_max < 2 {
        return (0..t_len).collect();
    }
    let span = (t_len - 1) as f64 / (t_max - 1) as f64;
    (0..t_max)
        .map(|m| (m as f64 * span).round() as usize)
        .collect()
}

/// Uniformly subsamples a bag to at most `t_max` snippets, keeping the first
/// and last snippet and the original order.
pub fn uniform_sample(bag: &FeatureBag, t_max: usize) -> FeatureBag {
    let idx = uniform_sample_indices(bag.len(), t_max);
    if idx.len() == bag.len() {
        return bag.clone();
    }
    let mut features = Matrix::zeros(idx.len(), bag.dim());
    for (r, &src) in idx.iter().enumerate() {
        features.row_mut(r).copy_from_slice(bag.features.row(src));
    }
    FeatureBag {
        features,
        ..bag.clone()
    }
}
