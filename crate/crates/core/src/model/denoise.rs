use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval_stats::Denoiser;
use crate::imageio::Image;
use crate::model::network::Network;
use crate::nn::Tensor4;
use crate::patchwork::{extract_grid, reconstruct_from_patches, Patch};

/// Patches per forward call.
const FORWARD_CHUNK: usize = 16;

/// Warning text when a network trained at one peak is applied at another.
pub fn peak_mismatch_warning(trained: Option<f64>, job: f64) -> Option<String> {
    match trained {
        Some(p) if p != job => Some(format!(
            "network was trained for peak {p} but the image has peak {job}; results may be poor"
        )),
        None => Some(format!("network has no recorded training peak; applying it at peak {job}")),
        _ => None,
    }
}

/// Denoise a whole image patch by patch and restitch with Gaussian weights.
pub fn denoise_image(net: &Network<f32>, img: &Image, stride: usize, sigma: f64) -> Result<Image> {
    denoise_image_counted(net, img, stride, sigma).map(|(out, _)| out)
}

/// As [`denoise_image`], also returning the number of patches sent through
/// the network.
pub fn denoise_image_counted(net: &Network<f32>, img: &Image, stride: usize, sigma: f64) -> Result<(Image, usize)> {
    let p = net.config().patch_size;
    if img.width() < p || img.height() < p {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than the {p}-pixel patch",
            img.width(),
            img.height()
        )));
    }
    if let Some(w) = peak_mismatch_warning(net.trained_peak(), img.peak()) {
        log::warn!("{w}");
    }
    let peak = img.peak();
    let (grid, patches) = extract_grid(img, p, stride)?;
    let denoised: Vec<Vec<Patch>> = patches
        .par_chunks(FORWARD_CHUNK)
        .map(|chunk| {
            let data = chunk.iter().flatten().map(|&v| (v / peak) as f32).collect();
            let x = Tensor4::from_vec([chunk.len(), 1, p, p], data)?;
            let y = net.forward_full(&x)?;
            Ok((0..chunk.len())
                .map(|b| y.item(b).iter().map(|&v| v as f64 * peak).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let denoised: Vec<Patch> = denoised.into_iter().flatten().collect();
    let count = denoised.len();
    let out = reconstruct_from_patches(&denoised, &grid, sigma, peak)?;
    let clamped = out.pixels().iter().map(|&v| v.clamp(0.0, peak)).collect();
    Ok((out.with_pixels(clamped)?, count))
}

/// A trained network packaged with its reconstruction settings.
pub struct NetworkDenoiser<'a> {
    pub net: &'a Network<f32>,
    pub stride: usize,
    pub sigma: f64,
}

impl Denoiser for NetworkDenoiser<'_> {
    fn denoise(&self, img: &Image) -> Result<Image> {
        denoise_image(self.net, img, self.stride, self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{LayerSpec, NetworkConfig};
    use crate::patchwork::default_sigma;

    /// One branch whose output is exactly its input: a 1×1 stride-1
    /// conv/deconv pair with unit weights.
    fn identity_net(p: usize) -> Network<f32> {
        let mut net = Network::zeroed(NetworkConfig {
            patch_size: p,
            branches: vec![vec![LayerSpec::new(1, 1, 1)]],
            ..Default::default()
        })
        .unwrap();
        net.set_params(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        net.set_trained_peak(Some(4.0));
        net
    }

    fn test_image(w: usize, h: usize) -> Image {
        let px = (0..w * h).map(|i| ((i * 31 + i / w * 7) % 17) as f64 / 4.25).collect();
        Image::new(w, h, px, 4.0).unwrap()
    }

    #[test]
    fn identity_network_reproduces_the_image() {
        let img = test_image(40, 36);
        for stride in [1, 3, 16] {
            let out = denoise_image(&identity_net(16), &img, stride, default_sigma(16)).unwrap();
            for (a, b) in out.pixels().iter().zip(img.pixels()) {
                assert!((a - b).abs() < 1e-5, "stride {stride}");
            }
        }
    }

    #[test]
    fn forward_pass_counts() {
        let img = Image::filled(512, 512, 1.0, 4.0).unwrap();
        let net = identity_net(64);
        let (_, n) = denoise_image_counted(&net, &img, 64, 16.0).unwrap();
        assert_eq!(n, 64);
        let (_, n) = denoise_image_counted(&net, &img, 32, 16.0).unwrap();
        assert_eq!(n, 225);
    }

    #[test]
    fn undersized_image_is_rejected() {
        let img = Image::filled(15, 40, 1.0, 4.0).unwrap();
        assert!(matches!(
            denoise_image(&identity_net(16), &img, 4, 4.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn output_is_clamped_to_peak() {
        let mut net = identity_net(16);
        net.set_params(&[3.0, 0.0, 1.0, 0.0]).unwrap();
        let img = test_image(16, 16);
        let out = denoise_image(&net, &img, 16, 4.0).unwrap();
        assert!(out.pixels().iter().all(|&v| (0.0..=4.0).contains(&v)));
        assert!(out.pixels().contains(&4.0));
    }

    #[test]
    fn peak_warning() {
        assert!(peak_mismatch_warning(Some(4.0), 4.0).is_none());
        assert!(peak_mismatch_warning(Some(4.0), 2.0).unwrap().contains("peak 4"));
        assert!(peak_mismatch_warning(None, 2.0).is_some());
    }
}
