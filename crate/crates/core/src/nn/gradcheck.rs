//! Central-difference verification of analytic gradients.

use crate::error::Result;
use crate::nn::activation::{relu, relu_backward};
use crate::nn::conv::{ConvGrads, ConvLayer};
use crate::nn::loss::{mse_backward, mse_loss};
use crate::nn::Tensor4;

/// Default finite-difference step (double precision).
pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely, not relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// A scalar loss over parameters and inputs, evaluated in double precision.
pub trait Differentiable {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);

    fn num_inputs(&self) -> usize;
    fn input(&self, i: usize) -> f64;
    fn set_input(&mut self, i: usize, value: f64);

    fn loss(&self) -> Result<f64>;

    /// Loss, plus whether some ReLU changed state relative to the
    /// unperturbed point. A central difference across such a kink does not
    /// estimate the derivative, so the slot is skipped.
    fn loss_and_kink(&self) -> Result<(f64, bool)> {
        Ok((self.loss()?, false))
    }

    /// Analytic `(dL/dparams, dL/dinputs)`.
    fn gradients(&self) -> Result<(Vec<f64>, Vec<f64>)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Param(usize),
    Input(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Slot>,
    pub checked: usize,
    /// Slots whose difference window straddled a ReLU kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare every parameter and input gradient with a central difference.
pub fn gradient_check<D: Differentiable + ?Sized>(f: &mut D, step: f64) -> Result<GradCheckReport> {
    let (g_params, g_inputs) = f.gradients()?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut record = |slot: Slot, analytic: f64, (up, up_kink): (f64, bool), (down, down_kink): (f64, bool)| {
        if up_kink || down_kink {
            report.skipped += 1;
            return;
        }
        let e = relative_error(analytic, (up - down) / (2.0 * step));
        report.checked += 1;
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            report.worst = Some(slot);
        }
    };
    for (i, &g) in g_params.iter().enumerate().take(f.num_params()) {
        let orig = f.param(i);
        f.set_param(i, orig + step);
        let up = f.loss_and_kink()?;
        f.set_param(i, orig - step);
        let down = f.loss_and_kink()?;
        f.set_param(i, orig);
        record(Slot::Param(i), g, up, down);
    }
    for (i, &g) in g_inputs.iter().enumerate().take(f.num_inputs()) {
        let orig = f.input(i);
        f.set_input(i, orig + step);
        let up = f.loss_and_kink()?;
        f.set_input(i, orig - step);
        let down = f.loss_and_kink()?;
        f.set_input(i, orig);
        record(Slot::Input(i), g, up, down);
    }
    Ok(report)
}

fn layer_param(layer: &ConvLayer<f64>, i: usize) -> f64 {
    let nw = layer.weights.len();
    if i < nw {
        layer.weights[i]
    } else {
        layer.bias[i - nw]
    }
}

fn set_layer_param(layer: &mut ConvLayer<f64>, i: usize, v: f64) {
    let nw = layer.weights.len();
    if i < nw {
        layer.weights[i] = v;
    } else {
        layer.bias[i - nw] = v;
    }
}

/// `mse(layer(x), target)` for a single conv or deconv layer.
#[derive(Clone, Debug)]
pub struct ConvProbe {
    pub layer: ConvLayer<f64>,
    pub input: Tensor4<f64>,
    pub target: Tensor4<f64>,
}

impl Differentiable for ConvProbe {
    fn num_params(&self) -> usize {
        self.layer.param_count()
    }

    fn param(&self, i: usize) -> f64 {
        layer_param(&self.layer, i)
    }

    fn set_param(&mut self, i: usize, value: f64) {
        set_layer_param(&mut self.layer, i, value)
    }

    fn num_inputs(&self) -> usize {
        self.input.data().len()
    }

    fn input(&self, i: usize) -> f64 {
        self.input.data()[i]
    }

    fn set_input(&mut self, i: usize, value: f64) {
        self.input.data_mut()[i] = value;
    }

    fn loss(&self) -> Result<f64> {
        mse_loss(&self.layer.forward(&self.input)?, &self.target)
    }

    fn gradients(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let y = self.layer.forward(&self.input)?;
        let dy = mse_backward(&y, &self.target)?;
        let mut grads = ConvGrads::zeros_like(&self.layer);
        let dx = self.layer.backward(&self.input, &dy, &mut grads)?;
        let mut params = grads.weights;
        params.extend(grads.bias);
        Ok((params, dx.into_data()))
    }
}

/// `mse(relu(x), target)`.
#[derive(Clone, Debug)]
pub struct ReluProbe {
    pub input: Tensor4<f64>,
    pub target: Tensor4<f64>,
}

impl Differentiable for ReluProbe {
    fn num_params(&self) -> usize {
        0
    }

    fn param(&self, _: usize) -> f64 {
        unreachable!("ReLU has no parameters")
    }

    fn set_param(&mut self, _: usize, _: f64) {
        unreachable!("ReLU has no parameters")
    }

    fn num_inputs(&self) -> usize {
        self.input.data().len()
    }

    fn input(&self, i: usize) -> f64 {
        self.input.data()[i]
    }

    fn set_input(&mut self, i: usize, value: f64) {
        self.input.data_mut()[i] = value;
    }

    fn loss(&self) -> Result<f64> {
        mse_loss(&relu(&self.input), &self.target)
    }

    fn gradients(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let y = relu(&self.input);
        let dy = mse_backward(&y, &self.target)?;
        Ok((Vec::new(), relu_backward(&self.input, &dy)?.into_data()))
    }
}

/// `mse(prediction, target)` differentiated with respect to the prediction.
#[derive(Clone, Debug)]
pub struct MseProbe {
    pub prediction: Tensor4<f64>,
    pub target: Tensor4<f64>,
}

impl Differentiable for MseProbe {
    fn num_params(&self) -> usize {
        0
    }

    fn param(&self, _: usize) -> f64 {
        unreachable!("MSE has no parameters")
    }

    fn set_param(&mut self, _: usize, _: f64) {
        unreachable!("MSE has no parameters")
    }

    fn num_inputs(&self) -> usize {
        self.prediction.data().len()
    }

    fn input(&self, i: usize) -> f64 {
        self.prediction.data()[i]
    }

    fn set_input(&mut self, i: usize, value: f64) {
        self.prediction.data_mut()[i] = value;
    }

    fn loss(&self) -> Result<f64> {
        mse_loss(&self.prediction, &self.target)
    }

    fn gradients(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((Vec::new(), mse_backward(&self.prediction, &self.target)?.into_data()))
    }
}
