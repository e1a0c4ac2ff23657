//! Flat `key=value` text blocks, as used by config files and weight headers.

use crate::error::{Error, Result};

/// Parse `key=value` lines. Blank lines and `#` comments are skipped; keys
/// and values are trimmed. Duplicate keys are kept in order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Malformed(format!("line {}: expected key=value, got {line:?}", no + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Malformed(format!("line {}: empty key", no + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Malformed(format!("invalid value {value:?} for {key}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Malformed(format!("invalid boolean {value:?} for {key}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_skips_comments() {
        let pairs = parse_pairs("# hi\n a = 1 \n\nb=x=y\n").unwrap();
        assert_eq!(pairs, vec![("a".into(), "1".into()), ("b".into(), "x=y".into())]);
        assert!(parse_pairs("novalue\n").is_err());
        assert!(parse_pairs("=3\n").is_err());
        assert!(parse_bool("k", "maybe").is_err());
        assert_eq!(parse_value::<u64>("k", "42").unwrap(), 42);
    }
}
