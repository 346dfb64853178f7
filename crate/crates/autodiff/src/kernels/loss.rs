//! Per-element loss kernels: sigmoid focal loss and smooth L1.

/// Numerically stable softplus: log(1 + exp(x)).
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss for one anchor. `target` is 1 for positive, 0 for
/// negative. Returns (loss, d_loss/d_logit).
#[inline]
pub fn focal(logit: f64, target: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if target {
        // loss = alpha * (1-p)^gamma * softplus(-z)
        let q = 1.0 - p;
        let sp = softplus(-logit);
        let loss = alpha * q.powf(gamma) * sp;
        let grad = -alpha * q.powf(gamma) * (gamma * p * sp + q);
        (loss, grad)
    } else {
        // loss = (1-alpha) * p^gamma * softplus(z)
        let sp = softplus(logit);
        let loss = (1.0 - alpha) * p.powf(gamma) * sp;
        let grad = (1.0 - alpha) * p.powf(gamma) * (gamma * (1.0 - p) * sp + p);
        (loss, grad)
    }
}

/// Smooth L1 on a residual. Returns (loss, d_loss/d_residual).
#[inline]
pub fn smooth_l1(residual: f64, beta: f64) -> (f64, f64) {
    let a = residual.abs();
    if a < beta {
        (0.5 * residual * residual / beta, residual / beta)
    } else {
        (a - 0.5 * beta, residual.signum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_matches_finite_difference() {
        let h = 1e-6;
        for &t in &[true, false] {
            for &z in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
                let (_, g) = focal(z, t, 0.25, 2.0);
                let (lp, _) = focal(z + h, t, 0.25, 2.0);
                let (lm, _) = focal(z - h, t, 0.25, 2.0);
                let fd = (lp - lm) / (2.0 * h);
                assert!((g - fd).abs() < 1e-6, "z={z} t={t}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn focal_saturates_for_confident_correct_predictions() {
        let (l_pos, _) = focal(12.0, true, 0.25, 2.0);
        let (l_neg, _) = focal(-12.0, false, 0.25, 2.0);
        assert!(l_pos < 1e-9 && l_neg < 1e-9);
    }

    #[test]
    fn smooth_l1_branches() {
        let (l, g) = smooth_l1(0.5, 1.0);
        assert!((l - 0.125).abs() < 1e-12 && (g - 0.5).abs() < 1e-12);
        let (l, g) = smooth_l1(-2.0, 1.0);
        assert!((l - 1.5).abs() < 1e-12 && (g + 1.0).abs() < 1e-12);
    }
}
