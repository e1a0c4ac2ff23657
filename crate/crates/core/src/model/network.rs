use crate::error::{Error, Result};
use crate::model::config::NetworkConfig;
use crate::nn::{relu, relu_backward, ConvGrads, ConvLayer, OptimizerState, RmsPropConfig, Scalar, Tensor4};
use crate::rng::{keyed_stream, Domain};

/// Encoder convolutions and their mirrored decoder deconvolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch<T> {
    pub encoder: Vec<ConvLayer<T>>,
    /// `decoder[j]` mirrors `encoder[L-1-j]`.
    pub decoder: Vec<ConvLayer<T>>,
}

/// Activations kept by a forward pass for the backward pass.
pub(crate) struct BranchTrace<T> {
    /// Input to each encoder layer; `enc_inputs[i]` for i ≥ 1 is also the
    /// post-ReLU output of encoder layer i−1, the skip source.
    enc_inputs: Vec<Tensor4<T>>,
    enc_pre: Vec<Tensor4<T>>,
    dec_inputs: Vec<Tensor4<T>>,
    dec_pre: Vec<Tensor4<T>>,
    pub(crate) output: Tensor4<T>,
}

impl<T: Scalar> BranchTrace<T> {
    pub(crate) fn relu_pattern_differs(&self, other: &Self) -> bool {
        let pairs = self.enc_pre.iter().zip(&other.enc_pre).chain(self.dec_pre.iter().zip(&other.dec_pre));
        pairs.into_iter().any(|(a, b)| relu_pattern_differs(a, b))
    }
}

fn relu_pattern_differs<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> bool {
    a.data().iter().zip(b.data()).any(|(x, y)| (*x > T::ZERO) != (*y > T::ZERO))
}

/// Multi-branch convolutional autoencoder with symmetric skip connections.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    branches: Vec<Branch<T>>,
    trained_peak: Option<f64>,
    optimizer: Vec<OptimizerState<T>>,
}

/// Parameter gradients in declared layer order.
pub type NetworkGrads<T> = Vec<ConvGrads<T>>;

impl<T: Scalar> Network<T> {
    /// Build with Glorot-uniform weights drawn from `config.seed`.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let seed = net.config.seed;
        for (i, layer) in net.layers_mut().enumerate() {
            layer.init_glorot_uniform(&mut keyed_stream(seed, Domain::Init, i as u64));
        }
        Ok(net)
    }

    /// All weights and biases zero.
    pub fn zeroed(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut branches = Vec::with_capacity(config.branches.len());
        for spec in &config.branches {
            let mut encoder = Vec::with_capacity(spec.len());
            let mut in_ch = 1;
            for l in spec {
                encoder.push(ConvLayer::conv(in_ch, l.out_channels, l.kernel, l.stride)?);
                in_ch = l.out_channels;
            }
            let decoder = encoder
                .iter()
                .rev()
                .map(|c| ConvLayer::deconv(c.out_channels, c.in_channels, c.kernel, c.stride))
                .collect::<Result<Vec<_>>>()?;
            branches.push(Branch { encoder, decoder });
        }
        Ok(Network {
            config,
            branches,
            trained_peak: None,
            optimizer: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn trained_peak(&self) -> Option<f64> {
        self.trained_peak
    }

    pub fn set_trained_peak(&mut self, peak: Option<f64>) {
        self.trained_peak = peak;
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(ConvLayer::param_count).sum()
    }

    /// Layers in declared order: per branch, encoder then decoder.
    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.branches.iter().flat_map(|b| b.encoder.iter().chain(&b.decoder))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.encoder.iter_mut().chain(b.decoder.iter_mut()))
    }

    /// Flattened parameters: per layer, weights then bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut rest = values;
        for l in self.layers_mut() {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    encoder: b.encoder.iter().map(ConvLayer::cast).collect(),
                    decoder: b.decoder.iter().map(ConvLayer::cast).collect(),
                })
                .collect(),
            trained_peak: self.trained_peak,
            optimizer: Vec::new(),
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let p = self.config.patch_size;
        if x.channels() != 1 || x.height() != p || x.width() != p {
            return Err(Error::ShapeMismatch(format!(
                "network expects [n, 1, {p}, {p}] input, got {:?}",
                x.dims()
            )));
        }
        Ok(())
    }

    fn branch_forward(&self, branch: &Branch<T>, x: &Tensor4<T>) -> Result<BranchTrace<T>> {
        let depth = branch.encoder.len();
        let mut enc_inputs = Vec::with_capacity(depth);
        let mut enc_pre = Vec::with_capacity(depth);
        let mut a = x.clone();
        for layer in &branch.encoder {
            let z = layer.forward(&a)?;
            enc_inputs.push(a);
            a = relu(&z);
            enc_pre.push(z);
        }
        let mut dec_inputs = Vec::with_capacity(depth);
        let mut dec_pre = Vec::with_capacity(depth - 1);
        let mut h = a;
        for (j, layer) in branch.decoder.iter().enumerate() {
            let z = layer.forward(&h)?;
            dec_inputs.push(h);
            if j + 1 == depth {
                h = z;
            } else {
                h = relu(&z);
                if self.config.skip {
                    h.add_assign(&enc_inputs[depth - 1 - j])?;
                }
                dec_pre.push(z);
            }
        }
        Ok(BranchTrace {
            enc_inputs,
            enc_pre,
            dec_inputs,
            dec_pre,
            output: h,
        })
    }

    pub(crate) fn trace_branch(&self, b: usize, x: &Tensor4<T>) -> Result<BranchTrace<T>> {
        self.check_input(x)?;
        self.branch_forward(&self.branches[b], x)
    }

    /// Recompute branch `b` from layer `start` onward (encoder layers first,
    /// then decoder), reusing `trace` for everything upstream of it. The flag
    /// reports whether any recomputed ReLU changed state relative to `trace`.
    pub(crate) fn resume_branch(&self, b: usize, trace: &BranchTrace<T>, start: usize) -> Result<(Tensor4<T>, bool)> {
        let branch = &self.branches[b];
        let depth = branch.encoder.len();
        // fresh[k - start - 1] replaces trace.enc_inputs[k] for k > start
        let mut fresh: Vec<Tensor4<T>> = Vec::new();
        let mut kink = false;
        let (mut h, first_dec) = if start < depth {
            for i in start..depth {
                let a = if i == start { &trace.enc_inputs[i] } else { fresh.last().unwrap() };
                let z = branch.encoder[i].forward(a)?;
                kink |= relu_pattern_differs(&z, &trace.enc_pre[i]);
                fresh.push(relu(&z));
            }
            (fresh.pop().unwrap(), 0)
        } else {
            (trace.dec_inputs[start - depth].clone(), start - depth)
        };
        for j in first_dec..depth {
            let z = branch.decoder[j].forward(&h)?;
            if j + 1 == depth {
                h = z;
            } else {
                kink |= relu_pattern_differs(&z, &trace.dec_pre[j]);
                h = relu(&z);
                if self.config.skip {
                    let k = depth - 1 - j;
                    let src = if start < depth && k > start { &fresh[k - start - 1] } else { &trace.enc_inputs[k] };
                    h.add_assign(src)?;
                }
            }
        }
        Ok((h, kink))
    }

    /// Branch merge: elementwise mean.
    pub(crate) fn merge(&self, mut outputs: impl Iterator<Item = Tensor4<T>>) -> Result<Tensor4<T>> {
        let mut sum = outputs
            .next()
            .ok_or_else(|| Error::InvalidArgument("no branch outputs to merge".into()))?;
        for o in outputs {
            sum.add_assign(&o)?;
        }
        sum.scale(T::from_f64(1.0 / self.branches.len() as f64));
        Ok(sum)
    }

    /// Returns the input gradient; parameter gradients accumulate into `grads`
    /// (encoder then decoder, matching [`Network::layers`]).
    fn branch_backward(
        &self,
        branch: &Branch<T>,
        trace: &BranchTrace<T>,
        grad_out: Tensor4<T>,
        grads: &mut [ConvGrads<T>],
    ) -> Result<Tensor4<T>> {
        let depth = branch.encoder.len();
        let (enc_grads, dec_grads) = grads.split_at_mut(depth);
        let mut skip_grads: Vec<Option<Tensor4<T>>> = vec![None; depth];
        let mut g = grad_out;
        for j in (0..depth).rev() {
            if j + 1 < depth {
                if self.config.skip {
                    skip_grads[depth - 1 - j] = Some(g.clone());
                }
                g = relu_backward(&trace.dec_pre[j], &g)?;
            }
            g = branch.decoder[j].backward(&trace.dec_inputs[j], &g, &mut dec_grads[j])?;
        }
        for i in (0..depth).rev() {
            if let Some(s) = skip_grads.get(i + 1).and_then(Option::as_ref) {
                g.add_assign(s)?;
            }
            g = relu_backward(&trace.enc_pre[i], &g)?;
            g = branch.encoder[i].backward(&trace.enc_inputs[i], &g, &mut enc_grads[i])?;
        }
        Ok(g)
    }

    /// Raw network output on a `[n, 1, P, P]` batch, no clamping.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let outputs = self
            .branches
            .iter()
            .map(|b| Ok(self.branch_forward(b, x)?.output))
            .collect::<Result<Vec<_>>>()?;
        self.merge(outputs.into_iter())
    }

    /// Inference output: [`Network::forward`] clamped at zero.
    pub fn forward_full(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward(x)?.map(|v| v.max(T::ZERO)))
    }

    pub fn zero_grads(&self) -> NetworkGrads<T> {
        self.layers().map(ConvGrads::zeros_like).collect()
    }

    /// Backpropagate `grad_out` (dL/d output) through the network.
    /// Returns the output, parameter gradients, and dL/d input.
    pub fn backward(&self, x: &Tensor4<T>, grad_of: impl FnOnce(&Tensor4<T>) -> Result<Tensor4<T>>) -> Result<(Tensor4<T>, NetworkGrads<T>, Tensor4<T>)> {
        self.check_input(x)?;
        let traces = self
            .branches
            .iter()
            .map(|b| self.branch_forward(b, x))
            .collect::<Result<Vec<_>>>()?;
        let inv = T::from_f64(1.0 / self.branches.len() as f64);
        let out = self.merge(traces.iter().map(|t| t.output.clone()))?;
        let mut g_out = grad_of(&out)?;
        g_out.scale(inv);

        let mut grads = self.zero_grads();
        let mut grad_in = Tensor4::zeros(x.dims());
        let mut offset = 0;
        for (branch, trace) in self.branches.iter().zip(&traces) {
            let n = 2 * branch.encoder.len();
            let gx = self.branch_backward(branch, trace, g_out.clone(), &mut grads[offset..offset + n])?;
            grad_in.add_assign(&gx)?;
            offset += n;
        }
        Ok((out, grads, grad_in))
    }

    /// One RMSProp update per layer tensor. Optimizer state is created on
    /// first use and reset when the configuration changes.
    pub fn apply_gradients(&mut self, grads: &NetworkGrads<T>, config: RmsPropConfig) -> Result<()> {
        let n_layers = self.layers().count();
        if grads.len() != n_layers {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient sets for {n_layers} layers",
                grads.len()
            )));
        }
        if self.optimizer.len() != 2 * n_layers || self.optimizer.iter().any(|s| s.config != config) {
            self.optimizer = self
                .layers()
                .flat_map(|l| [l.weights.len(), l.bias.len()])
                .map(|len| OptimizerState::new(len, config))
                .collect();
        }
        let states = &mut self.optimizer;
        for (i, (layer, g)) in self
            .branches
            .iter_mut()
            .flat_map(|b| b.encoder.iter_mut().chain(b.decoder.iter_mut()))
            .zip(grads)
            .enumerate()
        {
            states[2 * i].step(&mut layer.weights, &g.weights)?;
            states[2 * i + 1].step(&mut layer.bias, &g.bias)?;
        }
        Ok(())
    }

    /// Drop RMSProp history.
    pub fn reset_optimizer(&mut self) {
        self.optimizer.clear();
    }
}
