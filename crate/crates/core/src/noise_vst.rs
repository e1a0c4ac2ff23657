//! Poisson corruption and the Anscombe variance-stabilizing transform.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::rng::{Domain, NoiseSeed, StreamFamily};
use crate::special::ln_factorial;

/// Below this rate samples come from sequential CDF inversion.
pub const INVERSION_LIMIT: f64 = 10.0;

/// Draw one Poisson variate with mean `lambda`. `lambda == 0` always yields 0.
pub fn poisson_sample<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "Poisson rate must be finite and non-negative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda < INVERSION_LIMIT {
        Ok(sample_by_inversion(lambda, rng))
    } else {
        Ok(sample_by_transformed_rejection(lambda, rng))
    }
}

fn sample_by_inversion<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0u64;
    // the tail beyond 200 has probability < 1e-150 for lambda < 10
    while u > cdf && k < 200 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Hörmann's PTRS transformed rejection with squeeze; exact for lambda >= 10.
fn sample_by_transformed_rejection<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Replace every pixel by a Poisson draw with that pixel as its rate.
///
/// Pixel `i` draws from its own stream `(seed, i)`, so the output does not
/// depend on the order (or thread) in which pixels are visited.
pub fn corrupt_image(img: &Image, seed: NoiseSeed) -> Result<Image> {
    let family = StreamFamily::new(seed.0, Domain::Noise);
    let pixels = img
        .pixels()
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut rng = family.at(i as u64);
            poisson_sample(lambda, &mut rng).map(|k| k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    img.with_pixels(pixels)
}

/// `2·sqrt(x + 3/8)`.
pub fn anscombe_forward(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Anscombe transform needs x >= 0, got {x}"
        )));
    }
    Ok(2.0 * (x + 0.375).sqrt())
}

/// Plain algebraic inverse `(y/2)² − 3/8`.
pub fn anscombe_inverse_naive(y: f64) -> Result<f64> {
    check_positive(y)?;
    Ok((y / 2.0).powi(2) - 0.375)
}

/// Closed-form approximation of the exact unbiased inverse.
pub fn anscombe_inverse_unbiased(y: f64) -> Result<f64> {
    check_positive(y)?;
    let s = 1.5f64.sqrt();
    Ok(0.25 * y * y - 0.125 + 0.25 * s / y - 1.375 / (y * y) + 0.625 * s / (y * y * y))
}

fn check_positive(y: f64) -> Result<()> {
    if y > 0.0 && y.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "inverse Anscombe needs finite y > 0, got {y}"
        )))
    }
}

/// A denoiser for (approximately) unit-variance Gaussian noise.
pub trait GaussianDenoiser {
    fn denoise(&self, img: &Image) -> Result<Image>;
}

impl<F> GaussianDenoiser for F
where
    F: Fn(&Image) -> Result<Image>,
{
    fn denoise(&self, img: &Image) -> Result<Image> {
        self(img)
    }
}

/// Separable Gaussian blur with mirrored borders.
///
/// This is a stand-in for a real Gaussian denoiser such as BM3D; it only
/// exercises the VST pipeline.
#[derive(Clone, Copy, Debug)]
pub struct GaussianBlur {
    pub sigma: f64,
}

impl Default for GaussianBlur {
    fn default() -> Self {
        GaussianBlur { sigma: 1.0 }
    }
}

impl GaussianBlur {
    fn kernel(&self) -> Vec<f64> {
        let radius = (3.0 * self.sigma).ceil() as isize;
        let raw: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

impl GaussianDenoiser for GaussianBlur {
    fn denoise(&self, img: &Image) -> Result<Image> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "blur sigma must be positive, got {}",
                self.sigma
            )));
        }
        let (w, h) = (img.width(), img.height());
        let kernel = self.kernel();
        let radius = (kernel.len() / 2) as isize;
        let src = img.pixels();
        let mut tmp = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * src[r * w + mirror(c as isize + k as isize - radius, w)])
                    .sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[mirror(r as isize + k as isize - radius, h) * w + c])
                    .sum::<f64>()
                    .max(0.0);
            }
        }
        img.with_pixels(out)
    }
}

/// Forward Anscombe, Gaussian denoise, unbiased inverse, clamp to >= 0.
///
/// Denoised values below `anscombe_forward(0)` are outside the range of the
/// forward transform; they are lifted to it before inversion, where the
/// unbiased inverse evaluates to zero.
pub fn vst_denoise_pipeline<D: GaussianDenoiser + ?Sized>(img: &Image, denoiser: &D) -> Result<Image> {
    let floor = anscombe_forward(0.0)?;
    let forward = img
        .pixels()
        .iter()
        .map(|&x| anscombe_forward(x))
        .collect::<Result<Vec<_>>>()?;
    let stabilized = Image::new(img.width(), img.height(), forward, anscombe_forward(img.peak())?)?;
    let denoised = denoiser.denoise(&stabilized)?;
    if (denoised.width(), denoised.height()) != (img.width(), img.height()) {
        return Err(Error::ShapeMismatch(format!(
            "denoiser returned {}x{} for a {}x{} input",
            denoised.width(),
            denoised.height(),
            img.width(),
            img.height()
        )));
    }
    let pixels = denoised
        .pixels()
        .iter()
        .map(|&y| anscombe_inverse_unbiased(y.max(floor)).map(|x| x.max(0.0)))
        .collect::<Result<Vec<_>>>()?;
    img.with_pixels(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_stream;

    fn moments(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn draws(lambda: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = keyed_stream(seed, Domain::Noise, 0);
        (0..n)
            .map(|_| poisson_sample(lambda, &mut rng).unwrap() as f64)
            .collect()
    }

    #[test]
    fn zero_rate_is_degenerate() {
        let mut rng = keyed_stream(3, Domain::Noise, 0);
        assert!((0..1000).all(|_| poisson_sample(0.0, &mut rng).unwrap() == 0));
    }

    #[test]
    fn bad_rates_are_rejected() {
        let mut rng = keyed_stream(3, Domain::Noise, 0);
        for bad in [-1.0, f64::NAN, f64::INFINITY] {
            assert!(poisson_sample(bad, &mut rng).is_err());
        }
    }

    #[test]
    fn rate_four_moments() {
        let (mean, var) = moments(&draws(4.0, 100_000, 11));
        assert!((3.95..=4.05).contains(&mean), "mean {mean}");
        assert!((3.8..=4.2).contains(&var), "var {var}");
    }

    #[test]
    fn rate_one_zero_frequency() {
        let d = draws(1.0, 100_000, 12);
        let zeros = d.iter().filter(|&&k| k == 0.0).count() as f64 / d.len() as f64;
        assert!((zeros - (-1.0f64).exp()).abs() < 0.005, "P(0) = {zeros}");
    }

    #[test]
    fn rejection_branch_moments() {
        for lambda in [10.0, 37.5, 255.0] {
            let (mean, var) = moments(&draws(lambda, 100_000, 13));
            let se_mean = (lambda / 100_000f64).sqrt();
            assert!((mean - lambda).abs() < 4.0 * se_mean, "lambda {lambda}: mean {mean}");
            assert!((var / lambda - 1.0).abs() < 0.03, "lambda {lambda}: var {var}");
        }
    }

    #[test]
    fn rejection_branch_matches_pmf() {
        let lambda = 12.0;
        let d = draws(lambda, 200_000, 14);
        for k in [6u64, 12, 18] {
            let freq = d.iter().filter(|&&x| x == k as f64).count() as f64 / d.len() as f64;
            let pmf = (-lambda + k as f64 * lambda.ln() - ln_factorial(k)).exp();
            assert!((freq - pmf).abs() < 0.004, "k = {k}: {freq} vs {pmf}");
        }
    }

    #[test]
    fn corrupting_zeros_gives_zeros() {
        let img = Image::filled(16, 16, 0.0, 4.0).unwrap();
        let noisy = corrupt_image(&img, NoiseSeed(1)).unwrap();
        assert!(noisy.pixels().iter().all(|&p| p == 0.0));
        assert_eq!(noisy.peak(), 4.0);
    }

    #[test]
    fn corrupt_constant_image_moments_and_determinism() {
        let img = Image::filled(64, 64, 4.0, 4.0).unwrap();
        let a = corrupt_image(&img, NoiseSeed(99)).unwrap();
        let b = corrupt_image(&img, NoiseSeed(99)).unwrap();
        assert_eq!(a, b);
        let (mean, var) = moments(a.pixels());
        // 4096 draws: standard error of the mean is 0.03125
        assert!((mean - 4.0).abs() < 0.1, "mean {mean}");
        assert!((var - 4.0).abs() < 0.4, "var {var}");
        assert_ne!(a, corrupt_image(&img, NoiseSeed(100)).unwrap());
    }

    #[test]
    fn corruption_is_independent_of_thread_count() {
        let img = Image::new(32, 32, (0..1024).map(|i| (i % 13) as f64).collect(), 12.0).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| corrupt_image(&img, NoiseSeed(5)).unwrap());
        let b = multi.install(|| corrupt_image(&img, NoiseSeed(5)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn anscombe_unit_values() {
        assert!((anscombe_forward(0.0).unwrap() - 1.224_744_87).abs() < 1e-8);
        assert!((anscombe_forward(1.0).unwrap() - 2.345_207_88).abs() < 1e-8);
        assert!(anscombe_forward(2.0).unwrap() > anscombe_forward(1.0).unwrap());
        assert!(anscombe_forward(-0.1).is_err());
        assert_eq!(anscombe_inverse_naive(2.0).unwrap(), 0.625);
        assert!((anscombe_inverse_unbiased(2.0).unwrap() - 0.780_026_30).abs() < 1e-8);
        assert!((anscombe_inverse_unbiased(10.0).unwrap() - 24.892_634_09).abs() < 1e-8);
        for y in [0.0, -1.0, f64::NAN] {
            assert!(anscombe_inverse_naive(y).is_err());
            assert!(anscombe_inverse_unbiased(y).is_err());
        }
    }

    #[test]
    fn naive_inverse_roundtrip() {
        for x in [0.0, 1.0, 7.5, 255.0] {
            let back = anscombe_inverse_naive(anscombe_forward(x).unwrap()).unwrap();
            assert!((back - x).abs() < 1e-12, "x = {x}: {back}");
        }
    }

    #[test]
    fn unbiased_inverse_tail() {
        let y = 100.0;
        let tail = anscombe_inverse_unbiased(y).unwrap() - (y * y / 4.0 - 0.125);
        assert!(tail.abs() < 0.004);
        for y in [1.0, 1.5, 3.0, 10.0, 50.0] {
            let diff = anscombe_inverse_unbiased(y).unwrap() - anscombe_inverse_naive(y).unwrap();
            assert!(diff < 1.25, "y = {y}");
        }
        let far = anscombe_inverse_unbiased(1e4).unwrap() - anscombe_inverse_naive(1e4).unwrap();
        assert!((far - 0.25).abs() < 1e-4);
    }

    #[test]
    fn identity_pipeline_on_constant_images() {
        let identity = |img: &Image| Ok(img.clone());
        // frozen from a 40-digit evaluation of the forward/unbiased-inverse composition
        let four = vst_denoise_pipeline(&Image::filled(4, 4, 4.0, 4.0).unwrap(), &identity).unwrap();
        assert!(four.pixels().iter().all(|&p| (p - 4.255_077_149_109_874).abs() < 1e-12));
        // the unbiased inverse of forward(0) cancels exactly
        let zero = vst_denoise_pipeline(&Image::filled(4, 4, 0.0, 4.0).unwrap(), &identity).unwrap();
        assert!(zero.pixels().iter().all(|&p| p.abs() < 1e-12));
    }

    #[test]
    fn shape_changing_denoiser_is_rejected() {
        let shrink = |img: &Image| Image::filled(img.width() - 1, img.height(), 1.0, img.peak());
        let img = Image::filled(4, 4, 1.0, 4.0).unwrap();
        assert!(matches!(
            vst_denoise_pipeline(&img, &shrink),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let img = Image::filled(9, 7, 3.0, 4.0).unwrap();
        let out = GaussianBlur::default().denoise(&img).unwrap();
        assert!(out.pixels().iter().all(|&p| (p - 3.0).abs() < 1e-12));
        assert!(GaussianBlur { sigma: 0.0 }.denoise(&img).is_err());
    }

    #[test]
    fn mirror_indexing() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(-9, 5), 1);
        assert_eq!(mirror(3, 1), 0);
    }

    #[test]
    fn anscombe_stabilizes_variance_above_rate_four() {
        for (i, lambda) in [1.0, 4.0, 8.0, 16.0].into_iter().enumerate() {
            let t: Vec<f64> = draws(lambda, 100_000, 20 + i as u64)
                .into_iter()
                .map(|k| anscombe_forward(k).unwrap())
                .collect();
            let sd = moments(&t).1.sqrt();
            if lambda == 1.0 {
                assert!(sd < 0.90, "lambda 1: sd {sd}");
            } else {
                assert!((0.90..=1.10).contains(&sd), "lambda {lambda}: sd {sd}");
            }
        }
    }
}
