//! PSNR, the paired t-test on PSNR gains, and suite evaluation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{scale_to_peak, Image};
use crate::noise_vst::corrupt_image;
use crate::rng::{derive_seed, sub_seed, Domain, NoiseSeed};
use crate::special::student_t_two_tailed;

pub const MAX_8BIT: f64 = 255.0;

/// Anything that maps a noisy image to an estimate of the clean one.
pub trait Denoiser {
    fn denoise(&self, img: &Image) -> Result<Image>;
}

impl<F> Denoiser for F
where
    F: Fn(&Image) -> Result<Image>,
{
    fn denoise(&self, img: &Image) -> Result<Image> {
        self(img)
    }
}

/// `10·log10(max² / MSE)` over raw samples; `+∞` when they are equal.
pub fn psnr_raw(reference: &[f64], candidate: &[f64], max_intensity: f64) -> Result<f64> {
    if reference.len() != candidate.len() || reference.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "cannot compare {} samples with {}",
            reference.len(),
            candidate.len()
        )));
    }
    let mse = reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_intensity * max_intensity / mse).log10())
}

/// PSNR in dB after rescaling both images from their peak to [0, 255].
pub fn psnr(reference: &Image, candidate: &Image) -> Result<f64> {
    if reference.width() != candidate.width() || reference.height() != candidate.height() {
        return Err(Error::ShapeMismatch(format!(
            "reference is {}x{}, candidate is {}x{}",
            reference.width(),
            reference.height(),
            candidate.width(),
            candidate.height()
        )));
    }
    psnr_raw(&reference.to_8bit_scale(), &candidate.to_8bit_scale(), MAX_8BIT)
}

/// Rough SNR `√λ` of a Poisson count with mean λ.
pub fn snr_theoretical(mean_count: f64) -> Result<f64> {
    if !(mean_count >= 0.0) || !mean_count.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mean count must be finite and non-negative, got {mean_count}"
        )));
    }
    Ok(mean_count.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std_dev: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_tailed: f64,
}

/// Two-tailed one-sample t-test of `diffs` against zero mean.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("t-test needs at least 2 values, got {n}")));
    }
    if let Some(bad) = diffs.iter().find(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("t-test input contains {bad}")));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate(format!(
            "all {n} differences equal {mean}; the t statistic is undefined"
        )));
    }
    let std_dev = var.sqrt();
    let t = mean / (std_dev / nf.sqrt());
    let df = nf - 1.0;
    Ok(TTest {
        n,
        mean,
        std_dev,
        t,
        df,
        p_two_tailed: student_t_two_tailed(t, df),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub baseline_psnr: f64,
    pub candidate_psnr: f64,
    pub gain: f64,
}

impl EvalRecord {
    pub fn new(image_id: impl Into<String>, baseline_psnr: f64, candidate_psnr: f64) -> Self {
        EvalRecord {
            image_id: image_id.into(),
            baseline_psnr,
            candidate_psnr,
            gain: candidate_psnr - baseline_psnr,
        }
    }

    /// Records with an infinite PSNR are kept in the table but left out of
    /// every aggregate.
    pub fn is_finite(&self) -> bool {
        self.baseline_psnr.is_finite() && self.candidate_psnr.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub mean_gain: f64,
    pub mean_baseline_psnr: f64,
    pub mean_candidate_psnr: f64,
    /// `None` when fewer than two finite records remain or all gains are equal.
    pub t_test: Option<TTest>,
    pub win_rate: f64,
    pub stride: usize,
    pub peak: f64,
}

impl EvalReport {
    pub fn summarize(records: Vec<EvalRecord>, stride: usize, peak: f64) -> Result<Self> {
        let finite: Vec<&EvalRecord> = records.iter().filter(|r| r.is_finite()).collect();
        let excluded = records.len() - finite.len();
        if excluded > 0 {
            log::info!("{excluded} record(s) with infinite PSNR left out of the summary statistics");
        }
        if finite.is_empty() {
            return Err(Error::InvalidArgument("no finite PSNR records to summarize".into()));
        }
        let n = finite.len() as f64;
        let mean = |f: fn(&EvalRecord) -> f64| finite.iter().map(|r| f(r)).sum::<f64>() / n;
        let gains: Vec<f64> = finite.iter().map(|r| r.gain).collect();
        let t_test = match paired_t_test(&gains) {
            Ok(t) => Some(t),
            Err(Error::Degenerate(msg)) | Err(Error::InvalidArgument(msg)) => {
                log::info!("t-test not reported: {msg}");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            mean_gain: mean(|r| r.gain),
            mean_baseline_psnr: mean(|r| r.baseline_psnr),
            mean_candidate_psnr: mean(|r| r.candidate_psnr),
            win_rate: gains.iter().filter(|&&g| g > 0.0).count() as f64 / n,
            t_test,
            records,
            stride,
            peak,
        })
    }
}

/// A clean reference and its corrupted observation.
#[derive(Clone, Debug)]
pub struct EvalImage {
    pub id: String,
    pub clean: Image,
    pub noisy: Image,
}

impl EvalImage {
    /// Scale `clean` to `peak` and corrupt it with the evaluation noise
    /// stream for item `index`.
    pub fn corrupted(id: impl Into<String>, clean: &Image, peak: f64, seed: u64, index: u64) -> Result<Self> {
        let clean = scale_to_peak(clean, peak)?;
        let noise = NoiseSeed(sub_seed(derive_seed(seed, Domain::Evaluation), index));
        let noisy = corrupt_image(&clean, noise)?;
        Ok(EvalImage {
            id: id.into(),
            clean,
            noisy,
        })
    }
}

/// [`EvalImage::corrupted`] over a named list.
pub fn prepare_suite(sources: &[(String, Image)], peak: f64, seed: u64) -> Result<Vec<EvalImage>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(i, (id, img))| EvalImage::corrupted(id.clone(), img, peak, seed, i as u64))
        .collect()
}

/// Run both denoisers on every image and compare their PSNR against the clean
/// reference.
pub fn evaluate_suite(
    images: &[EvalImage],
    baseline: &(dyn Denoiser + Sync),
    candidate: &(dyn Denoiser + Sync),
    stride: usize,
    peak: f64,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let records = images
        .par_iter()
        .map(|im| {
            if im.clean.width() != im.noisy.width() || im.clean.height() != im.noisy.height() {
                return Err(Error::ShapeMismatch(format!("{}: clean and noisy sizes differ", im.id)));
            }
            let b = psnr(&im.clean, &baseline.denoise(&im.noisy)?)?;
            let c = psnr(&im.clean, &candidate.denoise(&im.noisy)?)?;
            Ok(EvalRecord::new(im.id.clone(), b, c))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::summarize(records, stride, peak)
}
