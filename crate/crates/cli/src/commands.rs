use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pdn_core::config::RunConfig;
use pdn_core::eval_stats::{evaluate_suite, prepare_suite, psnr, EvalImage, EvalRecord, EvalReport};
use pdn_core::imageio::{load_counts, load_grayscale, save_counts, save_grayscale, scale_to_peak};
use pdn_core::model::{self, Network, NetworkConfig, NetworkDenoiser, TrainOptions};
use pdn_core::noise_vst::{corrupt_image, vst_denoise_pipeline, GaussianBlur};
use pdn_core::patchwork::{grid_patch_count, DatasetOptions, PatchDataset};
use pdn_core::report::{self, StrideRow};
use pdn_core::rng::NoiseSeed;
use pdn_core::{Error, Image};

pub const SWEEP_STRIDES: [usize; 6] = [1, 2, 4, 8, 16, 32];
pub const SWEEP_PEAKS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit code 1.
    Usage(String),
    /// Failure while running: exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required for this command")))
}

/// Clean PGM/PNG images of a directory, sorted by file name, keyed by stem.
fn load_corpus(dir: &Path) -> CliResult<Vec<(String, Image)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .pgm or .png images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, load_grayscale(p)?))
        })
        .collect()
}

fn emit(config: &RunConfig, csv: &str) -> CliResult {
    match &config.report {
        Some(path) => {
            report::write_report(path, csv)?;
            log::info!("report written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn load_network(path: &Path) -> CliResult<Network<f32>> {
    Ok(model::load_weights(path)?)
}

fn vst_blur(img: &Image) -> pdn_core::Result<Image> {
    vst_denoise_pipeline(img, &GaussianBlur::default())
}

pub fn corrupt(config: &RunConfig, input: &Path, output: &Path) -> CliResult {
    let clean = scale_to_peak(&load_grayscale(input)?, config.peak)?;
    let noisy = corrupt_image(&clean, NoiseSeed(config.seed))?;
    save_counts(&noisy, output)?;
    Ok(())
}

pub fn train(config: &RunConfig) -> CliResult {
    let corpus = load_corpus(required(&config.corpus_dir, "corpus-dir")?)?;
    let weights = required(&config.weights, "weights")?;
    let dataset = PatchDataset::build(
        &corpus,
        &DatasetOptions {
            patch_size: config.patch_size,
            patches_per_image: config.patches_per_image,
            peak: config.peak,
            train_fraction: config.train_fraction,
            seed: config.seed,
        },
    )?;
    if dataset.is_empty() {
        return Err(CliError::Usage(format!(
            "no corpus image is at least {0}x{0}",
            config.patch_size
        )));
    }
    log::info!("{} patches from {} images", dataset.len(), corpus.len());
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        dataset.save(&dir.join("patches.manifest"), &dir.join("patches.bin"))?;
    }
    let net_config = NetworkConfig {
        patch_size: config.patch_size,
        seed: config.seed,
        ..Default::default()
    };
    let mut net = Network::<f32>::build(net_config).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut opts = TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        ..Default::default()
    };
    opts.optimizer.learning_rate = config.learning_rate;
    let train_report = model::train(&mut net, &dataset, &opts)?;
    net.set_trained_peak(Some(config.peak));
    model::save_weights(&net, weights)?;
    log::info!("weights written to {}", weights.display());
    emit(config, &report::train_csv(&train_report, config))
}

pub fn denoise(config: &RunConfig, input: &Path, output: &Path) -> CliResult {
    let net = load_network(required(&config.weights, "weights")?)?;
    let noisy = load_counts(input, config.peak)?;
    let out = model::denoise_image(&net, &noisy, config.stride, config.sigma())?;
    save_grayscale(&out, output)?;
    Ok(())
}

fn suite(config: &RunConfig, peak: f64) -> CliResult<Vec<EvalImage>> {
    let corpus = load_corpus(required(&config.corpus_dir, "corpus-dir")?)?;
    Ok(prepare_suite(&corpus, peak, config.seed)?)
}

pub fn evaluate(config: &RunConfig) -> CliResult {
    let net = load_network(required(&config.weights, "weights")?)?;
    let images = suite(config, config.peak)?;
    let candidate = NetworkDenoiser {
        net: &net,
        stride: config.stride,
        sigma: config.sigma(),
    };
    let r = evaluate_suite(&images, &vst_blur, &candidate, config.stride, config.peak)?;
    emit(config, &report::eval_csv(&r, config))
}

pub fn sweep_stride(config: &RunConfig) -> CliResult {
    let net = load_network(required(&config.weights, "weights")?)?;
    let images = suite(config, config.peak)?;
    let baselines: Vec<f64> = images
        .iter()
        .map(|im| psnr(&im.clean, &vst_blur(&im.noisy)?))
        .collect::<pdn_core::Result<_>>()?;
    let p = net.config().patch_size;
    let mut rows = Vec::new();
    for stride in SWEEP_STRIDES {
        let mut records = Vec::with_capacity(images.len());
        let mut seconds = 0.0;
        let mut patches = 0;
        for (im, &base) in images.iter().zip(&baselines) {
            patches += grid_patch_count(im.noisy.height(), im.noisy.width(), p, stride)?;
            let start = Instant::now();
            let out = model::denoise_image(&net, &im.noisy, stride, config.sigma())?;
            seconds += start.elapsed().as_secs_f64();
            records.push(EvalRecord::new(im.id.clone(), base, psnr(&im.clean, &out)?));
        }
        let n = images.len() as f64;
        log::info!("stride {stride}: {:.2}s per image", seconds / n);
        rows.push(StrideRow {
            stride,
            patches_per_image: (patches as f64 / n).round() as usize,
            time_per_image_s: seconds / n,
            report: EvalReport::summarize(records, stride, config.peak)?,
        });
    }
    emit(config, &report::stride_csv(&rows, config))
}

/// `{peak}` in the weights template replaced by the peak value.
pub fn weights_for_peak(template: &Path, peak: f64) -> CliResult<PathBuf> {
    let text = template.to_string_lossy();
    if !text.contains("{peak}") {
        return Err(CliError::Usage(format!(
            "--weights for sweep-peak must contain {{peak}}, got {text}"
        )));
    }
    Ok(PathBuf::from(text.replace("{peak}", &peak.to_string())))
}

pub fn sweep_peak(config: &RunConfig) -> CliResult {
    let template = required(&config.weights, "weights")?;
    let paths = SWEEP_PEAKS
        .iter()
        .map(|&p| weights_for_peak(template, p))
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (&peak, path) in SWEEP_PEAKS.iter().zip(&paths) {
        let net = load_network(path)?;
        let images = suite(config, peak)?;
        let candidate = NetworkDenoiser {
            net: &net,
            stride: config.stride,
            sigma: config.sigma(),
        };
        rows.push(evaluate_suite(&images, &vst_blur, &candidate, config.stride, peak)?);
    }
    emit(config, &report::peak_csv(&rows, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_template() {
        let p = weights_for_peak(Path::new("w/net_{peak}.pdnw"), 4.0).unwrap();
        assert_eq!(p, PathBuf::from("w/net_4.pdnw"));
        let p = weights_for_peak(Path::new("net_{peak}.pdnw"), 0.5).unwrap();
        assert_eq!(p, PathBuf::from("net_0.5.pdnw"));
        assert!(matches!(weights_for_peak(Path::new("net.pdnw"), 1.0), Err(CliError::Usage(_))));
    }
}
