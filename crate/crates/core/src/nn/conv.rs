//! Strided "same"-padded convolution and its transpose.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::kernels::{gemm_nn, gemm_nt, gemm_tn, Lowering};
use crate::nn::{Scalar, Tensor4};

/// Square-kernel convolution layer.
///
/// Weights are laid out `[out][in][k][k]` for a forward convolution and
/// `[in][out][k][k]` for a transposed one. A transposed layer therefore
/// shares its weight buffer verbatim with the forward convolution it is the
/// adjoint of (channels swapped, same kernel, stride and padding).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub transposed: bool,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients of one [`ConvLayer`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(layer: &ConvLayer<T>) -> Self {
        ConvGrads {
            weights: vec![T::ZERO; layer.weights.len()],
            bias: vec![T::ZERO; layer.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|g| *g *= factor);
    }
}

impl<T: Scalar> ConvLayer<T> {
    /// Zero-initialized layer.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, transposed: bool) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "channels and stride must be positive (in {in_channels}, out {out_channels}, stride {stride})"
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd for same padding, got {kernel}"
            )));
        }
        Ok(ConvLayer {
            in_channels,
            out_channels,
            kernel,
            stride,
            transposed,
            weights: vec![T::ZERO; kernel * kernel * in_channels * out_channels],
            bias: vec![T::ZERO; out_channels],
        })
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, kernel, stride, false)
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, kernel, stride, true)
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Spatial output size for an input of `h × w`.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if self.transposed {
            (h * self.stride, w * self.stride)
        } else {
            (h.div_ceil(self.stride), w.div_ceil(self.stride))
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn init_glorot_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k2 = (self.kernel * self.kernel) as f64;
        let limit = (6.0 / (k2 * (self.in_channels + self.out_channels) as f64)).sqrt();
        for w in &mut self.weights {
            *w = T::from_f64(rng.random_range(-limit..limit));
        }
        self.bias.fill(T::ZERO);
    }

    /// The layer whose linear part is this one's adjoint: same weight buffer,
    /// channels swapped, direction flipped, zero bias.
    pub fn adjoint(&self) -> ConvLayer<T> {
        ConvLayer {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            kernel: self.kernel,
            stride: self.stride,
            transposed: !self.transposed,
            weights: self.weights.clone(),
            bias: vec![T::ZERO; self.in_channels],
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            transposed: self.transposed,
            weights: self.weights.iter().map(|w| U::from_f64(w.to_f64())).collect(),
            bias: self.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
        }
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        if input.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {} input channels, tensor has {}",
                self.in_channels,
                input.channels()
            )));
        }
        Ok(())
    }

    /// Geometry for one batch item of spatial size `h × w`.
    fn lowering(&self, h: usize, w: usize) -> Lowering {
        let (oh, ow) = self.output_hw(h, w);
        let (channels, big, small) = if self.transposed {
            (self.out_channels, (oh, ow), (h, w))
        } else {
            (self.in_channels, (h, w), (oh, ow))
        };
        Lowering {
            channels,
            big_h: big.0,
            big_w: big.1,
            small_h: small.0,
            small_w: small.1,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.padding(),
        }
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let [n, _, h, w] = input.dims();
        let (oh, ow) = self.output_hw(h, w);
        let g = self.lowering(h, w);
        let mut out = Tensor4::zeros([n, self.out_channels, oh, ow]);
        let mut col = vec![T::ZERO; g.rows() * g.cols()];
        for b in 0..n {
            let x = input.item(b);
            let y = out.item_mut(b);
            if self.transposed {
                // col = Wᵀ x, then scatter onto the upsampled map
                col.fill(T::ZERO);
                gemm_tn(self.in_channels, g.rows(), g.cols(), &self.weights, x, &mut col);
                g.col2im(&col, y);
            } else {
                g.im2col(x, &mut col);
                gemm_nn(self.out_channels, g.rows(), g.cols(), &self.weights, &col, y);
            }
            let plane = oh * ow;
            for (c, &bias) in self.bias.iter().enumerate() {
                y[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(out)
    }

    /// Gradient with respect to `input`; parameter gradients are accumulated
    /// into `grads`.
    pub fn backward(&self, input: &Tensor4<T>, grad_out: &Tensor4<T>, grads: &mut ConvGrads<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let [n, _, h, w] = input.dims();
        let (oh, ow) = self.output_hw(h, w);
        if grad_out.dims() != [n, self.out_channels, oh, ow] {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?}, layer output is {:?}",
                grad_out.dims(),
                [n, self.out_channels, oh, ow]
            )));
        }
        let g = self.lowering(h, w);
        let mut grad_in = Tensor4::zeros(input.dims());
        let mut col = vec![T::ZERO; g.rows() * g.cols()];
        let plane = oh * ow;
        for b in 0..n {
            let x = input.item(b);
            let dy = grad_out.item(b);
            for (c, db) in grads.bias.iter_mut().enumerate() {
                *db += dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
            }
            let dx = grad_in.item_mut(b);
            if self.transposed {
                g.im2col(dy, &mut col);
                gemm_nn(self.in_channels, g.rows(), g.cols(), &self.weights, &col, dx);
                gemm_nt(self.in_channels, g.cols(), g.rows(), x, &col, &mut grads.weights);
            } else {
                g.im2col(x, &mut col);
                gemm_nt(self.out_channels, g.cols(), g.rows(), dy, &col, &mut grads.weights);
                col.fill(T::ZERO);
                gemm_tn(self.out_channels, g.rows(), g.cols(), &self.weights, dy, &mut col);
                g.col2im(&col, dx);
            }
        }
        Ok(grad_in)
    }
}

/// Forward convolution; rejects transposed layers.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    if layer.transposed {
        return Err(Error::InvalidArgument("conv2d called with a transposed layer".into()));
    }
    layer.forward(input)
}

/// Transposed convolution; rejects forward layers.
pub fn deconv2d<T: Scalar>(input: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    if !layer.transposed {
        return Err(Error::InvalidArgument("deconv2d called with a forward layer".into()));
    }
    layer.forward(input)
}
