//! Run configuration shared by every subcommand.
//!
//! Values are resolved in layers: defaults, then a `key=value` config file,
//! then the `PDN_SEED` / `PDN_THREADS` environment variables, then
//! command-line flags (applied by the caller).

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::kv::{parse_pairs, parse_value};

pub const ENV_SEED: &str = "PDN_SEED";
pub const ENV_THREADS: &str = "PDN_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub peak: f64,
    pub seed: u64,
    pub stride: usize,
    pub patch_size: usize,
    /// Reconstruction weight σ; `None` means patch_size / 4.
    pub sigma: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patches_per_image: usize,
    pub train_fraction: f64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub corpus_dir: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            peak: 4.0,
            seed: 0,
            stride: 4,
            patch_size: 64,
            sigma: None,
            epochs: 10,
            batch_size: 100,
            learning_rate: 1e-3,
            patches_per_image: 64,
            train_fraction: 0.8,
            threads: None,
            corpus_dir: None,
            weights: None,
            output_dir: None,
            report: None,
        }
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.patch_size as f64 / 4.0)
    }

    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "command" => self.command = value.to_string(),
            "peak" => self.peak = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "stride" => self.stride = parse_value(key, value)?,
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "sigma" => self.sigma = if value == "auto" { None } else { Some(parse_value(key, value)?) },
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "patches_per_image" => self.patches_per_image = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "threads" => self.threads = if value == "auto" { None } else { Some(parse_value(key, value)?) },
            "corpus_dir" => self.corpus_dir = opt_path(value),
            "weights" => self.weights = opt_path(value),
            "output_dir" => self.output_dir = opt_path(value),
            "report" => self.report = opt_path(value),
            _ => return Err(Error::Malformed(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.apply_pair(&k, &v)?;
        }
        Ok(())
    }

    /// Apply `PDN_SEED` and `PDN_THREADS` as returned by `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get(ENV_SEED) {
            self.seed = parse_value(ENV_SEED, v.trim())?;
        }
        if let Some(v) = get(ENV_THREADS) {
            self.threads = Some(parse_value(ENV_THREADS, v.trim())?);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return bad(format!("peak must be positive, got {}", self.peak));
        }
        if self.stride == 0 || self.patch_size == 0 || self.batch_size == 0 || self.patches_per_image == 0 {
            return bad("stride, patch_size, batch_size and patches_per_image must be positive".into());
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("sigma must be positive, got {s}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Every field as `key=value` lines; parses back through [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "command={}", self.command).unwrap();
        writeln!(w, "peak={}", self.peak).unwrap();
        writeln!(w, "seed={}", self.seed).unwrap();
        writeln!(w, "stride={}", self.stride).unwrap();
        writeln!(w, "patch_size={}", self.patch_size).unwrap();
        match self.sigma {
            Some(v) => writeln!(w, "sigma={v}").unwrap(),
            None => writeln!(w, "sigma=auto").unwrap(),
        }
        writeln!(w, "epochs={}", self.epochs).unwrap();
        writeln!(w, "batch_size={}", self.batch_size).unwrap();
        writeln!(w, "learning_rate={}", self.learning_rate).unwrap();
        writeln!(w, "patches_per_image={}", self.patches_per_image).unwrap();
        writeln!(w, "train_fraction={}", self.train_fraction).unwrap();
        match self.threads {
            Some(v) => writeln!(w, "threads={v}").unwrap(),
            None => writeln!(w, "threads=auto").unwrap(),
        }
        writeln!(w, "corpus_dir={}", path(&self.corpus_dir)).unwrap();
        writeln!(w, "weights={}", path(&self.weights)).unwrap();
        writeln!(w, "output_dir={}", path(&self.output_dir)).unwrap();
        writeln!(w, "report={}", path(&self.report)).unwrap();
        s
    }

    /// [`RunConfig::to_text`] as `#` comment lines for report headers.
    pub fn to_comment_lines(&self) -> String {
        self.to_text().lines().map(|l| format!("# {l}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig {
            command: "train".into(),
            peak: 2.5,
            seed: 9,
            sigma: Some(3.0),
            threads: Some(2),
            weights: Some("w.pdnw".into()),
            ..Default::default()
        };
        c.learning_rate = 5e-4;
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let mut d = RunConfig::default();
        d.apply_text(&RunConfig::default().to_text()).unwrap();
        assert_eq!(d, RunConfig::default());
    }

    #[test]
    fn env_overrides_file() {
        let mut c = RunConfig::default();
        c.apply_text("seed=3\nthreads=4\n").unwrap();
        c.apply_env(|k| (k == ENV_SEED).then(|| "11".to_string())).unwrap();
        assert_eq!((c.seed, c.threads), (11, Some(4)));
        assert!(c.apply_env(|_| Some("x".into())).is_err());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::default().apply_text("bogus=1").is_err());
        assert!(RunConfig::default().apply_text("peak=abc").is_err());
        let c = RunConfig {
            peak: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
        assert_eq!(RunConfig::default().sigma(), 16.0);
    }

    #[test]
    fn comment_lines() {
        let text = RunConfig::default().to_comment_lines();
        assert!(text.lines().all(|l| l.starts_with("# ")));
        assert!(text.contains("# peak=4\n"));
    }
}
