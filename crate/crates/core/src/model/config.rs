use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kv::{parse_bool, parse_value};

/// Smallest spatial size a conv chain may reach.
pub const MIN_BOTTLENECK: usize = 2;

/// One encoder layer; the decoder mirrors it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            out_channels,
            kernel,
            stride,
        }
    }
}

pub type BranchSpec = Vec<LayerSpec>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Merge {
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub patch_size: usize,
    pub branches: Vec<BranchSpec>,
    pub skip: bool,
    pub merge: Merge,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            patch_size: 64,
            branches: vec![
                vec![LayerSpec::new(32, 5, 2), LayerSpec::new(16, 5, 2)],
                vec![LayerSpec::new(32, 5, 2), LayerSpec::new(16, 5, 2), LayerSpec::new(8, 5, 2)],
            ],
            skip: true,
            merge: Merge::Mean,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Spatial sizes along a branch's encoder: `[patch, after layer 0, ...]`.
    fn spatial_chain(&self, branch: &[LayerSpec]) -> Vec<usize> {
        let mut sizes = vec![self.patch_size];
        for l in branch {
            let s = *sizes.last().unwrap();
            sizes.push(s.div_ceil(l.stride));
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if self.branches.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one branch".into()));
        }
        for (b, branch) in self.branches.iter().enumerate() {
            if branch.is_empty() {
                return Err(Error::InvalidArgument(format!("branch {b} has no layers")));
            }
            let mut size = self.patch_size;
            for (i, l) in branch.iter().enumerate() {
                if l.out_channels == 0 || l.stride == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "branch {b} layer {i}: channels and stride must be positive"
                    )));
                }
                if l.kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "branch {b} layer {i}: kernel {} must be odd",
                        l.kernel
                    )));
                }
                if size % l.stride != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "branch {b} layer {i}: size {size} is not divisible by stride {}, the mirror deconv could not restore it",
                        l.stride
                    )));
                }
                size /= l.stride;
                if size < MIN_BOTTLENECK {
                    return Err(Error::ShapeMismatch(format!(
                        "branch {b} layer {i}: spatial size {size} is below the {MIN_BOTTLENECK}x{MIN_BOTTLENECK} floor"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(channels, size)` after every layer of branch `b`, input first, output last.
    pub fn shape_chain(&self, b: usize) -> Vec<(usize, usize)> {
        let branch = &self.branches[b];
        let sizes = self.spatial_chain(branch);
        let mut chain = vec![(1, self.patch_size)];
        for (l, &s) in branch.iter().zip(&sizes[1..]) {
            chain.push((l.out_channels, s));
        }
        for i in (0..branch.len()).rev() {
            let ch = if i == 0 { 1 } else { branch[i - 1].out_channels };
            chain.push((ch, sizes[i]));
        }
        chain
    }

    /// Σ k²·in·out + out over every conv and deconv layer.
    pub fn param_count(&self) -> usize {
        self.branches
            .iter()
            .map(|branch| {
                let mut in_ch = 1;
                let mut total = 0;
                for l in branch {
                    let k2 = l.kernel * l.kernel;
                    total += k2 * in_ch * l.out_channels + l.out_channels; // conv
                    total += k2 * l.out_channels * in_ch + in_ch; // mirror deconv
                    in_ch = l.out_channels;
                }
                total
            })
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "patch_size={}", self.patch_size).unwrap();
        writeln!(s, "skip={}", self.skip).unwrap();
        writeln!(s, "merge=mean").unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        for branch in &self.branches {
            let layers: Vec<String> = branch
                .iter()
                .map(|l| format!("{}:{}:{}", l.out_channels, l.kernel, l.stride))
                .collect();
            writeln!(s, "branch={}", layers.join(",")).unwrap();
        }
        s
    }

    /// Apply one `key=value` pair. Returns `false` for keys it does not own.
    pub fn apply_pair(&mut self, key: &str, value: &str, branches_seen: &mut bool) -> Result<bool> {
        match key {
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "skip" => self.skip = parse_bool(key, value)?,
            "merge" => {
                self.merge = match value {
                    "mean" => Merge::Mean,
                    other => return Err(Error::Malformed(format!("unknown merge rule {other:?}"))),
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "branch" => {
                if !*branches_seen {
                    self.branches.clear();
                    *branches_seen = true;
                }
                self.branches.push(parse_branch(value)?);
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// `"32:5:2,16:5:2"` → layer specs.
pub fn parse_branch(text: &str) -> Result<BranchSpec> {
    text.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let [c, k, s] = parts[..] else {
                return Err(Error::Malformed(format!(
                    "layer spec {item:?} must be out_channels:kernel:stride"
                )));
            };
            Ok(LayerSpec::new(
                parse_value("out_channels", c)?,
                parse_value("kernel", k)?,
                parse_value("stride", s)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::parse_pairs;

    #[test]
    fn default_parameter_count() {
        assert_eq!(NetworkConfig::default().param_count(), 60_986);
    }

    #[test]
    fn default_upper_shape_chain() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.shape_chain(0), vec![(1, 64), (32, 32), (16, 16), (32, 32), (1, 64)]);
        assert_eq!(
            cfg.shape_chain(1),
            vec![(1, 64), (32, 32), (16, 16), (8, 8), (16, 16), (32, 32), (1, 64)]
        );
    }

    #[test]
    fn validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let toy = NetworkConfig {
            patch_size: 16,
            ..Default::default()
        };
        assert!(toy.validate().is_ok());
        let too_deep = NetworkConfig {
            patch_size: 8,
            ..Default::default()
        };
        assert!(matches!(too_deep.validate(), Err(Error::ShapeMismatch(_))));
        let odd = NetworkConfig {
            patch_size: 62,
            ..Default::default()
        };
        assert!(matches!(odd.validate(), Err(Error::ShapeMismatch(_))));
        let mut even_kernel = NetworkConfig::default();
        even_kernel.branches[0][0].kernel = 4;
        assert!(even_kernel.validate().is_err());
        let empty = NetworkConfig {
            branches: vec![vec![]],
            ..Default::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn text_roundtrip() {
        let cfg = NetworkConfig {
            seed: 99,
            skip: false,
            ..Default::default()
        };
        let mut back = NetworkConfig::default();
        let mut seen = false;
        for (k, v) in parse_pairs(&cfg.to_text()).unwrap() {
            assert!(back.apply_pair(&k, &v, &mut seen).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(parse_branch("32:5").is_err());
        assert!(parse_branch("a:5:2").is_err());
    }
}
