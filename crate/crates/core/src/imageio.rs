//! Grayscale image container plus PGM (P5) and PNG codecs.
//!
//! Pixels are kept as `f64` on an arbitrary linear scale. The `peak` field
//! records the intensity the clean source was scaled to; files on disk are
//! always 8-bit and map `peak` to byte 255.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Largest pixel count a decoder will allocate for (16k x 16k).
const MAX_PIXELS: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    peak: f64,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, peak: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if !(peak.is_finite() && peak > 0.0) {
            return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
        }
        if let Some(bad) = pixels.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "pixel values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
            peak,
        })
    }

    /// Constant-valued image; handy for fixtures.
    pub fn filled(width: usize, height: usize, value: f64, peak: f64) -> Result<Self> {
        Image::new(width, height, vec![value; width * height], peak)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Same geometry and peak, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Image::new(self.width, self.height, pixels, self.peak)
    }

    /// Pixels rescaled so that `peak` maps to 255.
    pub fn to_8bit_scale(&self) -> Vec<f64> {
        let factor = 255.0 / self.peak;
        self.pixels.iter().map(|p| p * factor).collect()
    }

    /// Clamped, round-half-up byte quantization with `peak` mapped to 255.
    pub fn quantize(&self) -> Vec<u8> {
        let factor = 255.0 / self.peak;
        self.pixels
            .iter()
            .map(|p| ((p * factor).clamp(0.0, 255.0) + 0.5).floor() as u8)
            .collect()
    }
}

/// Largest photon count an 8-bit count image can hold.
pub const MAX_STORED_COUNT: f64 = 255.0;

/// Save a photon-count image with one gray level per count (counts above 255
/// are clamped with a warning).
pub fn save_counts(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let over = img.pixels.iter().filter(|&&p| p > MAX_STORED_COUNT).count();
    if over > 0 {
        log::warn!("{over} pixel(s) exceed {MAX_STORED_COUNT} counts and were clamped");
    }
    let pixels = img.pixels.iter().map(|p| p.min(MAX_STORED_COUNT)).collect();
    save_grayscale(&Image::new(img.width, img.height, pixels, MAX_STORED_COUNT)?, path)
}

/// Load a count image written by [`save_counts`]; gray levels are taken as
/// counts and the image is tagged with `peak`.
pub fn load_counts(path: impl AsRef<Path>, peak: f64) -> Result<Image> {
    let raw = load_grayscale(path)?;
    let scale = raw.peak / MAX_STORED_COUNT;
    let pixels = raw.pixels.iter().map(|p| (p / scale).round()).collect();
    Image::new(raw.width, raw.height, pixels, peak)
}

/// Rescale so the brightest pixel equals `peak`.
pub fn scale_to_peak(img: &Image, peak: f64) -> Result<Image> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let max = img.max_value();
    if max <= 0.0 {
        return Err(Error::InvalidArgument(
            "cannot scale an all-zero image to a peak".into(),
        ));
    }
    let factor = peak / max;
    let pixels = img.pixels.iter().map(|p| p * factor).collect();
    Image::new(img.width, img.height, pixels, peak)
}

pub fn load_grayscale(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grayscale(&bytes)
}

/// Decode PGM or PNG, sniffing the format from the leading bytes.
pub fn decode_grayscale(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only binary P5 is supported)",
            bytes[1] as char
        )))
    } else {
        Err(Error::UnsupportedFormat(
            "not a PGM (P5) or PNG stream".into(),
        ))
    }
}

pub fn save_grayscale(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("png") => encode_png(img)?,
        Some("pgm") | None => encode_pgm(img),
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "cannot infer output format from extension '.{other}' (use .pgm or .png)"
            )))
        }
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.quantize());
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return if self.pos >= self.bytes.len() {
                Err(Error::Truncated(format!("PGM header ends before {what}")))
            } else {
                Err(Error::Malformed(format!("PGM {what} is not a decimal number")))
            };
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        digits
            .parse()
            .map_err(|_| Error::Malformed(format!("PGM {what} out of range: {digits}")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::UnsupportedFormat("missing P5 magic".into()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.read_number("width")?;
    let height = cur.read_number("height")?;
    let maxval = cur.read_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Malformed(format!("PGM dimensions {width}x{height}")));
    }
    if maxval == 0 {
        return Err(Error::Malformed("PGM maxval 0".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval} implies 16-bit samples; only 8-bit is supported"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(Error::Malformed("no whitespace after PGM maxval".into())),
        None => return Err(Error::Truncated("PGM header ends after maxval".into())),
    }
    let count = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| Error::Malformed(format!("PGM dimensions {width}x{height} too large")))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < count {
        return Err(Error::Truncated(format!(
            "PGM raster has {} of {count} bytes",
            raster.len()
        )));
    }
    let scale = 255.0 / maxval as f64;
    let pixels = raster[..count]
        .iter()
        .map(|&b| if maxval == 255 { b as f64 } else { (b as f64 * scale).min(255.0) })
        .collect();
    Image::new(width, height, pixels, 255.0)
}

fn png_error(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated(format!("PNG stream: {io}"))
        }
        png::DecodingError::IoError(io) => Error::Truncated(format!("PNG stream: {io}")),
        png::DecodingError::LimitsExceeded => {
            Error::Malformed("PNG exceeds decoder memory limits".into())
        }
        other => Error::Malformed(format!("PNG: {other}")),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoder = png::Decoder::new_with_limits(
        Cursor::new(bytes),
        png::Limits {
            bytes: MAX_PIXELS * 3,
        },
    );
    let mut reader = decoder.read_info().map_err(png_error)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "PNG bit depth {depth:?}; only 8-bit is supported"
        )));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {other:?}; only grayscale and RGB are supported"
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Malformed("PNG dimensions too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_error)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let line = frame.line_size;
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(line).take(height) {
        let row = &row[..width * channels];
        if channels == 1 {
            pixels.extend(row.iter().map(|&b| b as f64));
        } else {
            pixels.extend(row.chunks_exact(3).map(|rgb| {
                LUMA_WEIGHTS[0] * rgb[0] as f64
                    + LUMA_WEIGHTS[1] * rgb[1] as f64
                    + LUMA_WEIGHTS[2] * rgb[2] as f64
            }));
        }
    }
    Image::new(width, height, pixels, 255.0)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let encode_err = |e: png::EncodingError| Error::Malformed(format!("PNG encoding: {e}"));
        let mut writer = encoder.write_header().map_err(encode_err)?;
        writer.write_image_data(&img.quantize()).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm(width: usize, height: usize, maxval: usize, raster: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
        v.extend_from_slice(raster);
        v
    }

    fn png_bytes(width: u32, height: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(data).unwrap();
        w.finish().unwrap();
        out
    }

    #[test]
    fn decodes_two_by_two_pgm() {
        let img = decode_grayscale(&pgm(2, 2, 255, &[0, 128, 255, 64])).unwrap();
        assert_eq!(img.pixels(), &[0.0, 128.0, 255.0, 64.0]);
        assert_eq!(img.peak(), 255.0);
        assert_eq!((img.width(), img.height()), (2, 2));
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let bytes = b"P5 # made by hand\n2 # w\n1\n# maxval next\n255\n\x07\x09";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.pixels(), &[7.0, 9.0]);
    }

    #[test]
    fn pgm_errors_are_distinct() {
        assert!(matches!(
            decode_pgm(&pgm(2, 2, 255, &[1, 2, 3])),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            decode_pgm(&pgm(2, 2, 65535, &[0; 8])),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(decode_pgm(b"P5\n2 "), Err(Error::Truncated(_))));
        assert!(matches!(decode_pgm(b"P5\nx 2 255\n"), Err(Error::Malformed(_))));
        assert!(matches!(
            decode_grayscale(b"P2\n1 1\n255\n0"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rgb_png_uses_bt601_luma() {
        let bytes = png_bytes(1, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[255, 0, 0]);
        let img = decode_grayscale(&bytes).unwrap();
        assert!((img.pixels()[0] - 76.245).abs() < 1e-12);
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let bytes = png_bytes(1, 1, png::ColorType::Grayscale, png::BitDepth::Sixteen, &[1, 2]);
        assert!(matches!(decode_grayscale(&bytes), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_png_is_reported() {
        let bytes = png_bytes(8, 8, png::ColorType::Grayscale, png::BitDepth::Eight, &[3; 64]);
        let cut = &bytes[..bytes.len() - 20];
        assert!(decode_grayscale(cut).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_grayscale("/nonexistent/definitely/missing.pgm"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        let img = Image::new(3, 1, vec![3.7, 4.9, 0.0], 4.0).unwrap();
        assert_eq!(img.quantize(), vec![236, 255, 0]);
    }

    #[test]
    fn save_then_load_roundtrips_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 2, vec![0.0, 128.0, 255.0, 64.0], 255.0).unwrap();
        for name in ["a.pgm", "a.png"] {
            let path = dir.path().join(name);
            save_grayscale(&img, &path).unwrap();
            assert_eq!(load_grayscale(&path).unwrap(), img);
        }
    }

    #[test]
    fn count_images_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(3, 2, vec![0.0, 1.0, 7.0, 12.0, 255.0, 300.0], 4.0).unwrap();
        for ext in ["pgm", "png"] {
            let path = dir.path().join(format!("c.{ext}"));
            save_counts(&img, &path).unwrap();
            let back = load_counts(&path, 4.0).unwrap();
            assert_eq!(back.pixels(), &[0.0, 1.0, 7.0, 12.0, 255.0, 255.0]);
            assert_eq!(back.peak(), 4.0);
        }
    }

    #[test]
    fn scale_to_peak_examples() {
        let img = Image::new(2, 1, vec![0.0, 255.0], 255.0).unwrap();
        assert_eq!(scale_to_peak(&img, 4.0).unwrap().pixels(), &[0.0, 4.0]);

        let img = Image::new(2, 1, vec![51.0, 255.0], 255.0).unwrap();
        let scaled = scale_to_peak(&img, 1.0).unwrap();
        assert!((scaled.pixels()[0] - 0.2).abs() < 1e-15);
        assert_eq!(scaled.pixels()[1], 1.0);
        assert_eq!(scaled.peak(), 1.0);

        let zero = Image::filled(3, 3, 0.0, 255.0).unwrap();
        assert!(scale_to_peak(&zero, 4.0).is_err());
    }

    #[test]
    fn image_rejects_bad_pixels() {
        assert!(Image::new(2, 1, vec![1.0], 1.0).is_err());
        assert!(Image::new(1, 1, vec![-1.0], 1.0).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN], 1.0).is_err());
        assert!(Image::new(1, 1, vec![1.0], 0.0).is_err());
    }

    fn pixels_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(0.0f64..1000.0, w * h))
        })
    }

    proptest! {
        #[test]
        fn save_load_is_identity_on_bytes(w in 1usize..10, h in 1usize..10, seed in any::<u64>()) {
            let raster: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let img = Image::new(w, h, raster.iter().map(|&b| b as f64).collect(), 255.0).unwrap();
            prop_assert_eq!(decode_grayscale(&encode_pgm(&img)).unwrap(), img.clone());
            prop_assert_eq!(decode_grayscale(&encode_png(&img).unwrap()).unwrap(), img);
        }

        #[test]
        fn scale_to_peak_hits_peak_and_is_homogeneous(
            (w, h, mut px) in pixels_strategy(),
            c in 0.01f64..100.0,
            a in 0.5f64..32.0,
            b in 0.5f64..32.0,
        ) {
            px[0] += 1.0;
            let img = Image::new(w, h, px.clone(), 255.0).unwrap();
            let scaled = scale_to_peak(&img, b).unwrap();
            prop_assert!((scaled.max_value() - b).abs() <= 1e-9 * b);

            let stretched = Image::new(w, h, px.iter().map(|p| p * c).collect(), 255.0).unwrap();
            let from_stretched = scale_to_peak(&stretched, b).unwrap();
            let twice = scale_to_peak(&scale_to_peak(&img, a).unwrap(), b).unwrap();
            for ((x, y), z) in scaled.pixels().iter().zip(from_stretched.pixels()).zip(twice.pixels()) {
                prop_assert!((x - y).abs() <= 1e-12 * b);
                prop_assert!((x - z).abs() <= 1e-12 * b);
            }
        }
    }
}
