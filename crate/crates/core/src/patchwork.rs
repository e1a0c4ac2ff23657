//! Patch extraction, training datasets and weighted reconstruction.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::imageio::{scale_to_peak, Image};
use crate::noise_vst::corrupt_image;
use crate::rng::{keyed_stream, sub_seed, Domain, NoiseSeed};

/// A square patch stored row-major.
pub type Patch = Vec<f64>;

/// Default Gaussian width for reconstruction weights.
pub fn default_sigma(patch_size: usize) -> f64 {
    patch_size as f64 / 4.0
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// Top-left `(row, col)` of every patch, row-major.
    pub anchors: Vec<(usize, usize)>,
    /// `(height, width)` of the source image.
    pub source_shape: (usize, usize),
}

/// Anchor offsets along one axis: multiples of `stride`, plus `len - patch`
/// when the stride does not land there exactly.
pub fn axis_anchors(len: usize, patch_size: usize, stride: usize) -> Vec<usize> {
    let last = len - patch_size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("0 is always an anchor") != last {
        out.push(last);
    }
    out
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size and stride must be positive (got {patch_size}, {stride})"
            )));
        }
        if stride > patch_size && (height > patch_size || width > patch_size) {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} exceeds the patch size {patch_size} and would leave gaps"
            )));
        }
        if patch_size > height || patch_size > width {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image is smaller than the {patch_size}-pixel patch"
            )));
        }
        let rows = axis_anchors(height, patch_size, stride);
        let cols = axis_anchors(width, patch_size, stride);
        let anchors = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .collect();
        Ok(PatchGrid {
            patch_size,
            stride,
            anchors,
            source_shape: (height, width),
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Number of grid patches without materializing anything.
pub fn grid_patch_count(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<usize> {
    Ok(PatchGrid::new(height, width, patch_size, stride)?.len())
}

pub fn copy_patch(img: &Image, row: usize, col: usize, patch_size: usize) -> Patch {
    let w = img.width();
    let px = img.pixels();
    let mut out = Vec::with_capacity(patch_size * patch_size);
    for r in row..row + patch_size {
        out.extend_from_slice(&px[r * w + col..r * w + col + patch_size]);
    }
    out
}

pub fn extract_grid(img: &Image, patch_size: usize, stride: usize) -> Result<(PatchGrid, Vec<Patch>)> {
    let grid = PatchGrid::new(img.height(), img.width(), patch_size, stride)?;
    let patches = grid
        .anchors
        .iter()
        .map(|&(r, c)| copy_patch(img, r, c, patch_size))
        .collect();
    Ok((grid, patches))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledPatch {
    pub row: usize,
    pub col: usize,
    pub pixels: Patch,
}

fn random_anchors(
    height: usize,
    width: usize,
    n: usize,
    patch_size: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<(usize, usize)>> {
    if patch_size == 0 || patch_size > height || patch_size > width {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} image cannot hold a {patch_size}-pixel patch"
        )));
    }
    let mut rng = keyed_stream(seed, Domain::PatchAnchors, stream);
    Ok((0..n)
        .map(|_| {
            (
                rng.random_range(0..=height - patch_size),
                rng.random_range(0..=width - patch_size),
            )
        })
        .collect())
}

/// `n` patches at uniformly random valid anchors.
pub fn sample_random_patches(img: &Image, n: usize, patch_size: usize, seed: u64) -> Result<Vec<SampledPatch>> {
    Ok(random_anchors(img.height(), img.width(), n, patch_size, seed, 0)?
        .into_iter()
        .map(|(row, col)| SampledPatch {
            row,
            col,
            pixels: copy_patch(img, row, col, patch_size),
        })
        .collect())
}

/// `w(i,j) = exp(-((i-c)² + (j-c)²) / (2σ²))`, `c = (patch_size - 1)/2`.
pub fn gaussian_weight_map(patch_size: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let c = (patch_size as f64 - 1.0) / 2.0;
    let denom = 2.0 * sigma * sigma;
    let mut w = Vec::with_capacity(patch_size * patch_size);
    for i in 0..patch_size {
        for j in 0..patch_size {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            w.push((-d2 / denom).exp());
        }
    }
    Ok(w)
}

/// Weighted overlap average of `patches` laid out on `grid`.
pub fn reconstruct_from_patches(patches: &[Patch], grid: &PatchGrid, sigma: f64, peak: f64) -> Result<Image> {
    if patches.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patches for a grid of {}",
            patches.len(),
            grid.len()
        )));
    }
    let p = grid.patch_size;
    if let Some(bad) = patches.iter().find(|patch| patch.len() != p * p) {
        return Err(Error::ShapeMismatch(format!(
            "patch of {} values, expected {}",
            bad.len(),
            p * p
        )));
    }
    let weights = gaussian_weight_map(p, sigma)?;
    let (h, w) = grid.source_shape;
    let mut acc = vec![0.0; h * w];
    let mut norm = vec![0.0; h * w];
    // fixed anchor order keeps the sums bit-reproducible
    for (patch, &(r0, c0)) in patches.iter().zip(&grid.anchors) {
        for i in 0..p {
            let base = (r0 + i) * w + c0;
            let wrow = &weights[i * p..(i + 1) * p];
            let prow = &patch[i * p..(i + 1) * p];
            for j in 0..p {
                acc[base + j] += wrow[j] * prow[j];
                norm[base + j] += wrow[j];
            }
        }
    }
    let pixels = acc
        .iter()
        .zip(&norm)
        .map(|(a, n)| {
            assert!(*n > 0.0, "patch grid left a pixel uncovered");
            (a / n).max(0.0)
        })
        .collect();
    Image::new(w, h, pixels, peak)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "train" => Some(Split::Train),
            "val" => Some(Split::Validation),
            _ => None,
        }
    }
}

/// Seeded shuffle; the first `floor(fraction · n)` shuffled items train.
pub fn assign_split(n: usize, train_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_stream(seed, Domain::Split, 0));
    let mut splits = vec![Split::Validation; n];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    Ok(splits)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchRecord {
    pub source: String,
    pub row: usize,
    pub col: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestHeader {
    pub patch_size: usize,
    pub peak: f64,
    pub seed: u64,
    pub train_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<PatchRecord>,
}

const MANIFEST_MAGIC: &str = "# pdn patch manifest v1";

impl Manifest {
    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_MAGIC}");
        let _ = writeln!(s, "patch_size={}", h.patch_size);
        let _ = writeln!(s, "peak={}", h.peak);
        let _ = writeln!(s, "seed={}", h.seed);
        let _ = writeln!(s, "train_fraction={}", h.train_fraction);
        let _ = writeln!(s, "count={}", self.records.len());
        for r in &self.records {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.source, r.row, r.col, r.split.tag());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == MANIFEST_MAGIC => {}
            _ => return Err(Error::Malformed("manifest does not start with the v1 magic line".into())),
        }
        let mut patch_size = None;
        let mut peak = None;
        let mut seed = None;
        let mut train_fraction = None;
        let mut count = None;
        let mut records = Vec::new();
        for (no, line) in lines {
            let lineno = no + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if count.is_none() {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Malformed(format!("manifest line {lineno}: expected key=value")))?;
                let bad = || Error::Malformed(format!("manifest line {lineno}: bad value for {key}"));
                match key {
                    "patch_size" => patch_size = Some(value.parse::<usize>().map_err(|_| bad())?),
                    "peak" => peak = Some(value.parse::<f64>().map_err(|_| bad())?),
                    "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
                    "train_fraction" => train_fraction = Some(value.parse::<f64>().map_err(|_| bad())?),
                    "count" => count = Some(value.parse::<usize>().map_err(|_| bad())?),
                    _ => return Err(Error::Malformed(format!("manifest line {lineno}: unknown key {key}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Malformed(format!(
                    "manifest line {lineno}: expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Malformed(format!("manifest line {lineno}: bad anchor {s:?}")))
            };
            records.push(PatchRecord {
                source: fields[0].to_string(),
                row: num(fields[1])?,
                col: num(fields[2])?,
                split: Split::from_tag(fields[3]).ok_or_else(|| {
                    Error::Malformed(format!("manifest line {lineno}: bad split tag {:?}", fields[3]))
                })?,
            });
        }
        let missing = |k: &str| Error::Malformed(format!("manifest header lacks {k}"));
        let header = ManifestHeader {
            patch_size: patch_size.ok_or_else(|| missing("patch_size"))?,
            peak: peak.ok_or_else(|| missing("peak"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            train_fraction: train_fraction.ok_or_else(|| missing("train_fraction"))?,
        };
        let count = count.ok_or_else(|| missing("count"))?;
        if records.len() != count {
            return Err(Error::Truncated(format!(
                "manifest declares {count} records but holds {}",
                records.len()
            )));
        }
        if header.patch_size == 0 || !(header.peak > 0.0 && header.peak.is_finite()) {
            return Err(Error::Malformed("manifest patch_size/peak must be positive".into()));
        }
        Ok(Manifest { header, records })
    }
}

/// Noisy/clean patch pairs normalized by the peak, with their manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub manifest: Manifest,
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct DatasetOptions {
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub peak: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            patch_size: 64,
            patches_per_image: 64,
            peak: 4.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl PatchDataset {
    pub fn new(manifest: Manifest, inputs: Vec<f32>, targets: Vec<f32>) -> Result<Self> {
        let area = manifest.header.patch_size * manifest.header.patch_size;
        let expected = manifest.records.len() * area;
        if inputs.len() != expected || targets.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} records need {expected} values per side, got {} inputs / {} targets",
                manifest.records.len(),
                inputs.len(),
                targets.len()
            )));
        }
        Ok(PatchDataset {
            manifest,
            inputs,
            targets,
        })
    }

    /// Corrupt each clean source at `opts.peak` and cut `patches_per_image`
    /// aligned noisy/clean pairs from it. Sources smaller than the patch are
    /// skipped with a warning.
    pub fn build(sources: &[(String, Image)], opts: &DatasetOptions) -> Result<Self> {
        let p = opts.patch_size;
        let area = p * p;
        let scale = 1.0 / opts.peak;
        let mut records = Vec::new();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (index, (name, img)) in sources.iter().enumerate() {
            if name.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!("source name {name:?} contains a tab or newline")));
            }
            if img.width() < p || img.height() < p {
                log::warn!("skipping {name}: {}x{} is smaller than the {p}-pixel patch", img.width(), img.height());
                continue;
            }
            let clean = scale_to_peak(img, opts.peak)?;
            let noisy = corrupt_image(&clean, NoiseSeed(sub_seed(opts.seed, index as u64)))?;
            let anchors = random_anchors(img.height(), img.width(), opts.patches_per_image, p, opts.seed, index as u64)?;
            for (row, col) in anchors {
                inputs.extend(copy_patch(&noisy, row, col, p).iter().map(|v| (v * scale) as f32));
                targets.extend(copy_patch(&clean, row, col, p).iter().map(|v| (v * scale) as f32));
                records.push(PatchRecord {
                    source: name.clone(),
                    row,
                    col,
                    split: Split::Train,
                });
            }
        }
        debug_assert_eq!(inputs.len(), records.len() * area);
        let splits = assign_split(records.len(), opts.train_fraction, opts.seed)?;
        for (r, s) in records.iter_mut().zip(splits) {
            r.split = s;
        }
        let manifest = Manifest {
            header: ManifestHeader {
                patch_size: p,
                peak: opts.peak,
                seed: opts.seed,
                train_fraction: opts.train_fraction,
            },
            records,
        };
        PatchDataset::new(manifest, inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.manifest.header.patch_size
    }

    pub fn peak(&self) -> f64 {
        self.manifest.header.peak
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let area = self.patch_size() * self.patch_size();
        &self.inputs[i * area..(i + 1) * area]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let area = self.patch_size() * self.patch_size();
        &self.targets[i * area..(i + 1) * area]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Interleaved `input, target` per record, little-endian f32.
    pub fn blob(&self) -> Vec<u8> {
        let area = self.patch_size() * self.patch_size();
        let mut out = Vec::with_capacity(self.inputs.len() * 8);
        for i in 0..self.len() {
            for v in self.input(i).iter().chain(self.target(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        debug_assert_eq!(out.len(), self.len() * area * 8);
        out
    }

    pub fn from_parts(manifest_text: &str, blob: &[u8]) -> Result<Self> {
        let manifest = Manifest::parse(manifest_text)?;
        let area = manifest
            .header
            .patch_size
            .checked_mul(manifest.header.patch_size)
            .ok_or_else(|| Error::Malformed("patch size overflows".into()))?;
        let expected = manifest
            .records
            .len()
            .checked_mul(area)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Malformed("dataset size overflows".into()))?;
        if blob.len() != expected {
            return Err(Error::Truncated(format!(
                "patch blob holds {} bytes, manifest needs {expected}",
                blob.len()
            )));
        }
        let mut inputs = Vec::with_capacity(expected / 8);
        let mut targets = Vec::with_capacity(expected / 8);
        for record in blob.chunks_exact(area * 8) {
            let (a, b) = record.split_at(area * 4);
            inputs.extend(a.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
            targets.extend(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        }
        PatchDataset::new(manifest, inputs, targets)
    }

    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        std::fs::write(manifest_path, self.manifest.to_text()).map_err(|e| Error::io(manifest_path, e))?;
        std::fs::write(blob_path, self.blob()).map_err(|e| Error::io(blob_path, e))
    }

    pub fn load(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let blob = std::fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        PatchDataset::from_parts(&text, &blob)
    }
}
