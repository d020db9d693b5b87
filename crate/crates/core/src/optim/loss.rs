use super::OptimError;
use crate::scalar::Real;

/// Squared L2 error of one ray and its gradient, both multiplied by `scale`.
#[inline]
pub fn ray_sq_error<T: Real>(pred: [T; 3], gt: [T; 3], scale: T) -> (T, [T; 3]) {
    let two = T::lit(2.0);
    let mut err = T::zero();
    let mut grad = [T::zero(); 3];
    for k in 0..3 {
        let d = pred[k] - gt[k];
        err += d * d;
        grad[k] = two * d * scale;
    }
    (err * scale, grad)
}

/// Sum over rays of the squared L2 color error, divided by the ray count.
pub fn mse_loss<T: Real>(pred: &[[T; 3]], gt: &[[T; 3]]) -> Result<(T, Vec<[T; 3]>), OptimError> {
    if pred.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    if pred.len() != gt.len() {
        return Err(OptimError::ShapeMismatch(format!("{} predictions vs {} targets", pred.len(), gt.len())));
    }
    let scale = T::one() / T::lit(pred.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &g) in pred.iter().zip(gt) {
        let (e, d) = ray_sq_error(p, g, scale);
        loss += e;
        grad.push(d);
    }
    Ok((loss, grad))
}
