//! Two-branch convolutional autoencoder: construction, training, weight
//! files and whole-image denoising.

mod config;
mod denoise;
mod network;
mod probe;
mod train;
mod weights;

pub use config::{parse_branch, BranchSpec, LayerSpec, Merge, NetworkConfig, MIN_BOTTLENECK};
pub use denoise::{denoise_image, denoise_image_counted, peak_mismatch_warning, NetworkDenoiser};
pub use network::{Branch, Network, NetworkGrads};
pub use probe::NetworkProbe;
pub use train::{train, TrainOptions, TrainReport};
pub use weights::{decode_weights, encode_weights, load_into, load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
