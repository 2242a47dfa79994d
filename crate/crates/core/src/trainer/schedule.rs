use std::f64::consts::PI;

/// Cosine decay from `base_lr` at epoch 0 to 0 at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    let progress = epoch.min(total_epochs) as f64 / total_epochs as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 50, 5e-4), 5e-4);
        assert!(cosine_lr(50, 50, 5e-4).abs() < 1e-20);
        assert!((cosine_lr(25, 50, 5e-4) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn nonincreasing_and_bounded() {
        let lrs: Vec<f64> = (0..=37).map(|e| cosine_lr(e, 37, 1e-3)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| (0.0..=1e-3).contains(&l)));
    }
}
