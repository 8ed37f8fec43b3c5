//! Mean-reduced losses returning `(loss, d loss / d prediction)`.

use super::Tensor;

/// Binary cross-entropy on raw logits against a constant target.
pub fn bce_with_logits(logits: &Tensor, target: f32) -> (f32, Tensor) {
    let n = logits.len() as f32;
    let mut grad = logits.clone();
    let mut loss = 0.0f64;
    for (g, &z) in grad.data.iter_mut().zip(&logits.data) {
        loss += (z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()) as f64;
        *g = (1.0 / (1.0 + (-z).exp()) - target) / n;
    }
    ((loss / n as f64) as f32, grad)
}

pub fn l1_loss(pred: &Tensor, target: &Tensor) -> (f32, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "l1 shapes");
    let n = pred.len() as f32;
    let mut grad = pred.clone();
    let mut loss = 0.0f64;
    for (g, (&p, &t)) in grad.data.iter_mut().zip(pred.data.iter().zip(&target.data)) {
        let d = p - t;
        loss += d.abs() as f64;
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    ((loss / n as f64) as f32, grad)
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> (f32, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "mse shapes");
    let n = pred.len() as f32;
    let mut grad = pred.clone();
    let mut loss = 0.0f64;
    for (g, (&p, &t)) in grad.data.iter_mut().zip(pred.data.iter().zip(&target.data)) {
        let d = p - t;
        loss += (d * d) as f64;
        *g = 2.0 * d / n;
    }
    ((loss / n as f64) as f32, grad)
}
