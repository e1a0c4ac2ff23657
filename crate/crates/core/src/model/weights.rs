//! Weight files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "PDNW" | version u32 | config length u32 | config text | crc32 u32 | f32 parameters
//! ```
//!
//! The config text is `key=value` lines: the network configuration plus
//! `peak` and `param_count`. The checksum covers the config text and the
//! parameter bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{parse_pairs, parse_value};
use crate::model::config::NetworkConfig;
use crate::model::network::Network;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PDNW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Config text over this size is rejected before allocation.
const MAX_CONFIG_LEN: usize = 1 << 16;

fn header_text(net: &Network<f32>, peak: f64) -> String {
    let mut text = net.config().to_text();
    writeln!(text, "peak={peak}").unwrap();
    writeln!(text, "param_count={}", net.param_count()).unwrap();
    text
}

pub fn encode_weights(net: &Network<f32>) -> Result<Vec<u8>> {
    let peak = net
        .trained_peak()
        .ok_or_else(|| Error::InvalidArgument("network has no training peak; train it or set one before saving".into()))?;
    let text = header_text(net, peak);
    let blob: Vec<u8> = net.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut crc = crc32fast::Hasher::new();
    crc.update(text.as_bytes());
    crc.update(&blob);
    let mut out = Vec::with_capacity(16 + text.len() + blob.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&crc.finalize().to_le_bytes());
    out.extend_from_slice(&blob);
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated(format!("weights header ends before byte {}", at + 4)))
}

/// Parse a weights file into a fresh network.
pub fn decode_weights(bytes: &[u8]) -> Result<Network<f32>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("weights file shorter than its magic".into()));
    }
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Malformed("not a weights file (bad magic)".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != WEIGHTS_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let text_len = read_u32(bytes, 8)? as usize;
    if text_len > MAX_CONFIG_LEN {
        return Err(Error::Malformed(format!("config block of {text_len} bytes")));
    }
    let text_end = 12 + text_len;
    let text_bytes = bytes
        .get(12..text_end)
        .ok_or_else(|| Error::Truncated("weights file ends inside the config block".into()))?;
    let stored = read_u32(bytes, text_end)?;
    let blob = &bytes[text_end + 4..];
    let mut crc = crc32fast::Hasher::new();
    crc.update(text_bytes);
    crc.update(blob);
    let computed = crc.finalize();
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let text = std::str::from_utf8(text_bytes).map_err(|_| Error::Malformed("config block is not UTF-8".into()))?;
    let mut config = NetworkConfig::default();
    let mut branches_seen = false;
    let mut peak = None;
    let mut param_count = None;
    for (key, value) in parse_pairs(text)? {
        match key.as_str() {
            "peak" => peak = Some(parse_value::<f64>(&key, &value)?),
            "param_count" => param_count = Some(parse_value::<usize>(&key, &value)?),
            _ => {
                if !config.apply_pair(&key, &value, &mut branches_seen)? {
                    return Err(Error::Malformed(format!("unknown weights header key {key:?}")));
                }
            }
        }
    }
    if !branches_seen {
        return Err(Error::Malformed("weights header lists no branches".into()));
    }
    let peak = peak
        .filter(|p| p.is_finite() && *p > 0.0)
        .ok_or_else(|| Error::Malformed("weights header lacks a positive peak".into()))?;
    let param_count = param_count.ok_or_else(|| Error::Malformed("weights header lacks param_count".into()))?;
    if config.param_count() != param_count {
        return Err(Error::Malformed(format!(
            "header says {param_count} parameters, the configuration has {}",
            config.param_count()
        )));
    }
    if blob.len() != 4 * param_count {
        return Err(Error::Malformed(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            4 * param_count
        )));
    }
    let params: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut net = Network::zeroed(config)?;
    net.set_params(&params)?;
    net.set_trained_peak(Some(peak));
    Ok(net)
}

pub fn save_weights(net: &Network<f32>, path: &Path) -> Result<()> {
    let bytes = encode_weights(net)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Network<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Load parameters into an existing network whose configuration must match
/// the file's exactly. On error `net` is untouched.
pub fn load_into(net: &mut Network<f32>, path: &Path) -> Result<()> {
    let loaded = load_weights(path)?;
    if loaded.config() != net.config() {
        return Err(Error::ConfigMismatch(format!(
            "file was written for\n{}network is\n{}",
            loaded.config().to_text(),
            net.config().to_text()
        )));
    }
    net.set_params(&loaded.params())?;
    net.set_trained_peak(loaded.trained_peak());
    net.reset_optimizer();
    Ok(())
}
