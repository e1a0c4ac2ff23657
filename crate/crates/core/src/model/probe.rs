use std::collections::BTreeSet;

use rand::Rng;

use crate::error::Result;
use crate::model::network::{BranchTrace, Network};
use crate::nn::{mse_backward, mse_loss, Differentiable, Tensor4};
use crate::rng::{keyed_stream, Domain};

/// MSE of a whole network against a fixed target, for gradient checking.
///
/// Perturbing one parameter only changes its own branch from its layer
/// onward, so the loss reuses cached activations for everything upstream.
pub struct NetworkProbe {
    net: Network<f64>,
    input: Tensor4<f64>,
    target: Tensor4<f64>,
    /// Per layer in declared order: flat start offset, branch, layer index within the branch.
    layout: Vec<(usize, usize, usize)>,
    base_params: Vec<f64>,
    base_input: Vec<f64>,
    traces: Vec<BranchTrace<f64>>,
    changed_params: BTreeSet<usize>,
    changed_inputs: BTreeSet<usize>,
}

impl NetworkProbe {
    pub fn new(net: Network<f64>, input: Tensor4<f64>, target: Tensor4<f64>) -> Result<Self> {
        let mut layout = Vec::new();
        let mut start = 0;
        for (b, branch) in net.branches().iter().enumerate() {
            for (l, layer) in branch.encoder.iter().chain(&branch.decoder).enumerate() {
                layout.push((start, b, l));
                start += layer.param_count();
            }
        }
        let traces = (0..net.branches().len())
            .map(|b| net.trace_branch(b, &input))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkProbe {
            base_params: net.params(),
            base_input: input.data().to_vec(),
            net,
            input,
            target,
            layout,
            traces,
            changed_params: BTreeSet::new(),
            changed_inputs: BTreeSet::new(),
        })
    }

    /// Probe whose target is the network's own output plus a seeded offset of
    /// at most `residual` per pixel. Keeping the loss small keeps its rounding
    /// noise well below the finite-difference resolution.
    pub fn near_output(net: Network<f64>, input: Tensor4<f64>, residual: f64, seed: u64) -> Result<Self> {
        let out = net.forward(&input)?;
        let mut rng = keyed_stream(seed, Domain::Init, u64::MAX);
        let target = out.map(|v| v + residual * rng.random_range(-1.0..1.0));
        Self::new(net, input, target)
    }

    pub fn network(&self) -> &Network<f64> {
        &self.net
    }

    /// `(layer, branch, layer in branch, offset in layer)`
    fn locate(&self, i: usize) -> (usize, usize, usize, usize) {
        let pos = self.layout.partition_point(|&(s, _, _)| s <= i) - 1;
        let (start, b, l) = self.layout[pos];
        (pos, b, l, i - start)
    }

    fn slot(&mut self, i: usize) -> &mut f64 {
        let (layer, _, _, local) = self.locate(i);
        let l = self.net.layers_mut().nth(layer).unwrap();
        let n_w = l.weights.len();
        if local < n_w {
            &mut l.weights[local]
        } else {
            &mut l.bias[local - n_w]
        }
    }
}

impl Differentiable for NetworkProbe {
    fn num_params(&self) -> usize {
        self.base_params.len()
    }

    fn param(&self, i: usize) -> f64 {
        let (layer, _, _, local) = self.locate(i);
        let l = self.net.layers().nth(layer).unwrap();
        l.weights.get(local).copied().unwrap_or_else(|| l.bias[local - l.weights.len()])
    }

    fn set_param(&mut self, i: usize, value: f64) {
        *self.slot(i) = value;
        if value.to_bits() == self.base_params[i].to_bits() {
            self.changed_params.remove(&i);
        } else {
            self.changed_params.insert(i);
        }
    }

    fn num_inputs(&self) -> usize {
        self.input.data().len()
    }

    fn input(&self, i: usize) -> f64 {
        self.input.data()[i]
    }

    fn set_input(&mut self, i: usize, value: f64) {
        self.input.data_mut()[i] = value;
        if value.to_bits() == self.base_input[i].to_bits() {
            self.changed_inputs.remove(&i);
        } else {
            self.changed_inputs.insert(i);
        }
    }

    fn loss(&self) -> Result<f64> {
        self.loss_and_kink().map(|(l, _)| l)
    }

    fn loss_and_kink(&self) -> Result<(f64, bool)> {
        if !self.changed_inputs.is_empty() {
            let traces = (0..self.traces.len())
                .map(|b| self.net.trace_branch(b, &self.input))
                .collect::<Result<Vec<_>>>()?;
            let kink = traces.iter().zip(&self.traces).any(|(a, b)| a.relu_pattern_differs(b));
            let out = self.net.merge(traces.into_iter().map(|t| t.output))?;
            return Ok((mse_loss(&out, &self.target)?, kink));
        }
        let mut first_changed = vec![None::<usize>; self.traces.len()];
        for &i in &self.changed_params {
            let (_, b, l, _) = self.locate(i);
            first_changed[b] = Some(first_changed[b].map_or(l, |f: usize| f.min(l)));
        }
        let mut kink = false;
        let mut outputs = Vec::with_capacity(self.traces.len());
        for (b, start) in first_changed.iter().enumerate() {
            match start {
                None => outputs.push(self.traces[b].output.clone()),
                Some(s) => {
                    let (out, k) = self.net.resume_branch(b, &self.traces[b], *s)?;
                    kink |= k;
                    outputs.push(out);
                }
            }
        }
        Ok((mse_loss(&self.net.merge(outputs.into_iter())?, &self.target)?, kink))
    }

    fn gradients(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, grads, gx) = self.net.backward(&self.input, |y| mse_backward(y, &self.target))?;
        let mut flat = Vec::with_capacity(self.num_params());
        for g in grads {
            flat.extend(g.weights);
            flat.extend(g.bias);
        }
        Ok((flat, gx.into_data()))
    }
}
