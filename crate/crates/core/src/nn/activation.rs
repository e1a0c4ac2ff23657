use crate::error::Result;
use crate::nn::{Scalar, Tensor4};

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|x| if x > T::ZERO { x } else { T::ZERO })
}

/// Upstream gradient masked by `input > 0` (the subgradient at 0 is taken as 0).
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    input.check_same_dims(grad_out)?;
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if !(x > T::ZERO) {
            *d = T::ZERO;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor4::from_vec([1, 1, 1, 2], vec![0.5f32, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);

        let up = Tensor4::from_vec([1, 1, 1, 3], vec![7.0f32, 7.0, 7.0]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 7.0]);
    }
}
