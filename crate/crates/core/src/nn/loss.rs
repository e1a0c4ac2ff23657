use crate::error::Result;
use crate::nn::{Scalar, Tensor4};

/// Mean of squared differences, accumulated in double precision.
pub fn mse_loss<T: Scalar>(prediction: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    prediction.check_same_dims(target)?;
    let n = prediction.data().len() as f64;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.to_f64() - t.to_f64()).powi(2))
        .sum::<f64>()
        / n)
}

/// `2 (p − t) / N`.
pub fn mse_backward<T: Scalar>(prediction: &Tensor4<T>, target: &Tensor4<T>) -> Result<Tensor4<T>> {
    prediction.check_same_dims(target)?;
    let scale = T::from_f64(2.0 / prediction.data().len() as f64);
    let data = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| scale * (p - t))
        .collect();
    Tensor4::from_vec(prediction.dims(), data)
}
