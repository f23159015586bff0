use super::tensor::Tensor;
use crate::{Error, Result};

/// Additive RMSE + MAE loss with its analytic gradient w.r.t. predictions.
///
/// `value = sqrt(mean((p-t)^2)) + mean(|p-t|)`. The MAE subgradient at an
/// exact tie is 0, and so is the RMSE gradient when all residuals vanish.
///
/// ```
/// use mvre::numkit::{composite_loss, Tensor};
///
/// let pred = Tensor::vector(vec![2.0, 2.0]);
/// let target = Tensor::vector(vec![0.0, 0.0]);
/// let (value, grad) = composite_loss(&pred, &target)?;
/// assert!((value - 4.0).abs() < 1e-12); // RMSE 2 + MAE 2
/// assert_eq!(grad.len(), 2);
/// # Ok::<(), mvre::Error>(())
/// ```
pub fn composite_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let n = pred.len();
    if n == 0 {
        return Err(Error::EmptyInput("composite_loss".into()));
    }
    if target.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "pred length {n} != target length {}",
            target.len()
        )));
    }
    let nf = n as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let r = p - t;
        sq += r * r;
        abs += r.abs();
    }
    let rmse = (sq / nf).sqrt();
    let mae = abs / nf;
    let mut grad = vec![0.0; n];
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let r = p - t;
        let g_rmse = if rmse > 0.0 { r / (nf * rmse) } else { 0.0 };
        let g_mae = r.signum() * (if r == 0.0 { 0.0 } else { 1.0 }) / nf;
        grad[i] = g_rmse + g_mae;
    }
    let value = rmse + mae;
    if !value.is_finite() {
        return Err(Error::NonFinite("composite_loss".into()));
    }
    Ok((value, Tensor::vector(grad)))
}
