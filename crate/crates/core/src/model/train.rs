use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::network::{Network, NetworkGrads};
use crate::nn::{mse_backward, mse_loss, RmsPropConfig, Tensor4};
use crate::patchwork::{PatchDataset, Split};
use crate::rng::{keyed_stream, Domain};

/// Samples per gradient work unit. Fixed so that the reduction order, and
/// therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 10;

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmsPropConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 100,
            optimizer: RmsPropConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    /// NaN when the dataset has no validation split.
    pub val_mse: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainReport {
    pub fn epochs_completed(&self) -> usize {
        self.train_mse.len()
    }
}

fn batch_tensors(ds: &PatchDataset, indices: &[usize]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let p = ds.patch_size();
    let mut x = Vec::with_capacity(indices.len() * p * p);
    let mut y = Vec::with_capacity(indices.len() * p * p);
    for &i in indices {
        x.extend_from_slice(ds.input(i));
        y.extend_from_slice(ds.target(i));
    }
    let dims = [indices.len(), 1, p, p];
    Ok((Tensor4::from_vec(dims, x)?, Tensor4::from_vec(dims, y)?))
}

/// Mean MSE and its gradient over `indices`, reduced chunk by chunk in order.
fn batch_gradient(net: &Network<f32>, ds: &PatchDataset, indices: &[usize]) -> Result<(f64, NetworkGrads<f32>)> {
    let parts = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let (x, y) = batch_tensors(ds, chunk)?;
            let mut loss = 0.0;
            let (_, grads, _) = net.backward(&x, |out| {
                loss = mse_loss(out, &y)?;
                mse_backward(out, &y)
            })?;
            Ok((loss, chunk.len(), grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = indices.len() as f64;
    let mut loss = 0.0;
    let mut acc = net.zero_grads();
    for (chunk_loss, n, mut grads) in parts {
        let w = n as f64 / total;
        loss += chunk_loss * w;
        for (a, g) in acc.iter_mut().zip(grads.iter_mut()) {
            g.scale(w as f32);
            a.add_assign(g);
        }
    }
    Ok((loss, acc))
}

/// Mean MSE over `indices` without touching the weights.
pub fn evaluate_mse(net: &Network<f32>, ds: &PatchDataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let parts = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let (x, y) = batch_tensors(ds, chunk)?;
            Ok(mse_loss(&net.forward(&x)?, &y)? * chunk.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / indices.len() as f64)
}

/// Train on the dataset's training split with RMSProp on the batch-mean MSE.
///
/// Each epoch visits the training split in a fresh seeded order; the last
/// batch of an epoch may be short. The dataset's peak is recorded on the
/// network.
pub fn train(net: &mut Network<f32>, ds: &PatchDataset, opts: &TrainOptions) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if opts.epochs == 0 {
        return Ok(report);
    }
    if ds.patch_size() != net.config().patch_size {
        return Err(Error::ShapeMismatch(format!(
            "dataset patches are {}px, network expects {}px",
            ds.patch_size(),
            net.config().patch_size
        )));
    }
    let mut train_idx = ds.indices(Split::Train);
    let val_idx = ds.indices(Split::Validation);
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training patches".into()));
    }
    if opts.batch_size == 0 || opts.batch_size > train_idx.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must be in 1..={} (training set size)",
            opts.batch_size,
            train_idx.len()
        )));
    }
    net.set_trained_peak(Some(ds.peak()));
    for epoch in 0..opts.epochs {
        let start = Instant::now();
        let mut rng = keyed_stream(opts.seed, Domain::Shuffle, epoch as u64);
        train_idx.sort_unstable();
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, batch) in train_idx.chunks(opts.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(net, ds, batch)?;
            let nan = || Error::NanLoss { epoch, batch: b };
            if !loss.is_finite() {
                return Err(nan());
            }
            net.apply_gradients(&grads, opts.optimizer).map_err(|e| match e {
                Error::NonFinite(_) => nan(),
                other => other,
            })?;
            sum += loss * batch.len() as f64;
        }
        let train_mse = sum / train_idx.len() as f64;
        let val_mse = evaluate_mse(net, ds, &val_idx)?;
        let secs = start.elapsed().as_secs_f64();
        log::info!("epoch {}: train mse {train_mse:.6}, val mse {val_mse:.6}, {secs:.1}s", epoch + 1);
        report.train_mse.push(train_mse);
        report.val_mse.push(val_mse);
        report.epoch_seconds.push(secs);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{LayerSpec, NetworkConfig};
    use crate::patchwork::{Manifest, ManifestHeader, PatchRecord};

    fn dataset(n: usize, p: usize, identity: bool) -> PatchDataset {
        let records = (0..n)
            .map(|i| PatchRecord {
                source: format!("s{i}"),
                row: 0,
                col: 0,
                split: if i % 5 == 4 { Split::Validation } else { Split::Train },
            })
            .collect();
        let manifest = Manifest {
            header: ManifestHeader {
                patch_size: p,
                peak: 4.0,
                seed: 0,
                train_fraction: 0.8,
            },
            records,
        };
        let inputs: Vec<f32> = (0..n * p * p).map(|i| ((i * 7919) % 97) as f32 / 97.0).collect();
        let targets = if identity {
            inputs.clone()
        } else {
            inputs.iter().map(|v| 0.5 * v + 0.1).collect()
        };
        PatchDataset::new(manifest, inputs, targets).unwrap()
    }

    fn small() -> NetworkConfig {
        NetworkConfig {
            patch_size: 8,
            branches: vec![vec![LayerSpec::new(4, 3, 2)], vec![LayerSpec::new(4, 3, 2), LayerSpec::new(2, 3, 2)]],
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_weights() {
        let ds = dataset(20, 8, true);
        let mut net = Network::<f32>::build(small()).unwrap();
        let before = net.params();
        let opts = TrainOptions {
            epochs: 0,
            ..Default::default()
        };
        let report = train(&mut net, &ds, &opts).unwrap();
        assert_eq!(report.epochs_completed(), 0);
        assert_eq!(net.params(), before);
    }

    #[test]
    fn training_decreases_loss() {
        let ds = dataset(50, 8, false);
        let mut net = Network::<f32>::build(small()).unwrap();
        let opts = TrainOptions {
            epochs: 5,
            batch_size: 40,
            ..Default::default()
        };
        let report = train(&mut net, &ds, &opts).unwrap();
        assert_eq!(report.epochs_completed(), 5);
        assert_eq!(report.val_mse.len(), 5);
        assert_eq!(report.epoch_seconds.len(), 5);
        assert!(report.train_mse[1] < report.train_mse[0], "{:?}", report.train_mse);
        assert!(report.train_mse[4] < report.train_mse[0]);
        assert_eq!(net.trained_peak(), Some(4.0));
    }

    #[test]
    fn training_is_reproducible() {
        let ds = dataset(30, 8, true);
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 7,
            ..Default::default()
        };
        let run = || {
            let mut net = Network::<f32>::build(small()).unwrap();
            let r = train(&mut net, &ds, &opts).unwrap();
            (r.train_mse, r.val_mse, net.params())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_batch_and_shape() {
        let ds = dataset(10, 8, true);
        let mut net = Network::<f32>::build(small()).unwrap();
        let big = TrainOptions {
            batch_size: 9,
            ..Default::default()
        };
        assert!(matches!(train(&mut net, &ds, &big), Err(Error::InvalidArgument(_))));
        let ds16 = dataset(10, 16, true);
        assert!(matches!(
            train(&mut net, &ds16, &TrainOptions { batch_size: 2, ..Default::default() }),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn nan_input_aborts_with_batch_index() {
        let mut ds = dataset(20, 8, true);
        let mut inputs: Vec<f32> = (0..20).flat_map(|i| ds.input(i).to_vec()).collect();
        inputs.iter_mut().for_each(|v| *v = f32::NAN);
        let targets: Vec<f32> = (0..20).flat_map(|i| ds.target(i).to_vec()).collect();
        ds = PatchDataset::new(ds.manifest.clone(), inputs, targets).unwrap();
        let mut net = Network::<f32>::build(small()).unwrap();
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        assert!(matches!(train(&mut net, &ds, &opts), Err(Error::NanLoss { epoch: 0, batch: 0 })));
    }
}
