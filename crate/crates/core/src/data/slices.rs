//! 2D slice extraction and per-slice image operations.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats::percentile_sorted;

use super::manifest::{ClassGroup, DatasetManifest};
use super::volume::Volume;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "image data length");
        Image {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image::new(height, width, vec![value; height * width])
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn flip_lr(&self) -> Image {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn flip_ud(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for r in (0..self.height).rev() {
            data.extend_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        Image::new(self.height, self.width, data)
    }

    /// Bilinear resampling with aligned corners; identity when sizes match.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let scale = |n_out: usize, n_in: usize, i: usize| -> f64 {
            if n_out <= 1 || n_in <= 1 {
                0.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            }
        };
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            let y = scale(height, self.height, r);
            let y0 = y.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = y - y0 as f64;
            for c in 0..width {
                let x = scale(width, self.width, c);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = x - x0 as f64;
                let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
                let bottom = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Image::new(height, width, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: Image,
    /// Index into the manifest's class list.
    pub label: usize,
    pub volume_id: String,
    pub axis: u8,
    pub index: usize,
}

/// Extracts the raw slice at `index` along `axis`.
///
/// Rows run along the higher remaining axis and columns along the lower one:
/// axis 0 gives a (z, y) image, axis 1 (z, x), axis 2 (y, x).
pub fn extract_slice(v: &Volume, axis: usize, index: usize) -> Image {
    let [nx, ny, nz] = v.dims;
    let (h, w) = match axis {
        0 => (nz, ny),
        1 => (nz, nx),
        2 => (ny, nx),
        _ => panic!("axis {axis} out of range"),
    };
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (x, y, z) = match axis {
                0 => (index, c, r),
                1 => (c, index, r),
                _ => (c, r, index),
            };
            data.push(f64::from(v.get(x, y, z)));
        }
    }
    Image::new(h, w, data)
}

/// One center-weighted slice index: `round(c + σ·g)` clamped to the axis,
/// with `c` the middle slice and `σ = sigma_frac · extent`.
pub fn draw_slice_index(extent: usize, sigma_frac: f64, rng: &mut Rng) -> usize {
    let center = (extent as f64 - 1.0) / 2.0;
    let sigma = sigma_frac * extent as f64;
    let raw = (center + sigma * rng.gaussian()).round();
    raw.clamp(0.0, (extent - 1) as f64) as usize
}

const MAX_REDRAWS: usize = 10;

/// Samples `n_per_axis` normalized slices along each of the three axes.
///
/// A drawn index that repeats an earlier one on the same axis is redrawn up
/// to ten times, after which the duplicate is accepted.
pub fn sample_slices(
    v: &Volume,
    label: usize,
    n_per_axis: usize,
    sigma_frac: f64,
    rng: &mut Rng,
) -> Result<Vec<SliceSample>> {
    if n_per_axis == 0 {
        return Err(Error::contract("n_per_axis must be >= 1"));
    }
    if !(sigma_frac > 0.0) {
        return Err(Error::contract("sigma_frac must be > 0"));
    }
    let mut out = Vec::with_capacity(3 * n_per_axis);
    for axis in 0..3 {
        let extent = v.dims[axis];
        let mut taken = HashSet::new();
        for _ in 0..n_per_axis {
            let mut idx = draw_slice_index(extent, sigma_frac, rng);
            let mut tries = 0;
            while taken.contains(&idx) && tries < MAX_REDRAWS {
                idx = draw_slice_index(extent, sigma_frac, rng);
                tries += 1;
            }
            taken.insert(idx);
            out.push(SliceSample {
                image: normalize_intensity(&extract_slice(v, axis, idx)),
                label,
                volume_id: v.id.clone(),
                axis: axis as u8,
                index: idx,
            });
        }
    }
    Ok(out)
}

/// How many slices to draw per axis and how tightly around the middle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceSampling {
    pub n_per_axis: usize,
    pub sigma_frac: f64,
}

impl Default for SliceSampling {
    fn default() -> Self {
        SliceSampling {
            n_per_axis: 5,
            sigma_frac: 0.15,
        }
    }
}

impl SliceSampling {
    pub fn slices_per_volume(&self) -> usize {
        3 * self.n_per_axis
    }

    /// [`sample_slices`] followed by a bilinear resize to `size` where the
    /// slice shape differs.
    pub fn sample(&self, v: &Volume, label: usize, size: (usize, usize), rng: &mut Rng) -> Result<Vec<SliceSample>> {
        let mut out = sample_slices(v, label, self.n_per_axis, self.sigma_frac, rng)?;
        for s in &mut out {
            if (s.image.height, s.image.width) != size {
                s.image = s.image.resize(size.0, size.1);
            }
        }
        Ok(out)
    }
}

/// Clips to the slice's [1st, 99th] percentiles and maps that range onto [0, 1].
/// A constant image maps to all zeros.
pub fn normalize_intensity(image: &Image) -> Image {
    assert!(!image.data.is_empty(), "normalize_intensity on empty image");
    let mut sorted = image.data.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, 1.0);
    let hi = percentile_sorted(&sorted, 99.0);
    let range = hi - lo;
    let data = if !(range > 0.0) {
        vec![0.0; image.data.len()]
    } else {
        image
            .data
            .iter()
            .map(|&v| ((v.clamp(lo, hi) - lo) / range).clamp(0.0, 1.0))
            .collect()
    };
    Image::new(image.height, image.width, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation in normalized intensity units.
    pub sigma: f64,
    /// Fraction of pixels replaced by salt or pepper.
    pub density: f64,
    /// Per-slice corruption probability while training.
    pub apply_prob: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            sigma: 0.1,
            density: 0.05,
            apply_prob: 0.5,
        }
    }
}

impl NoiseSpec {
    pub fn of_kind(kind: NoiseKind) -> Self {
        NoiseSpec {
            kind,
            ..NoiseSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        for (name, v) in [("density", self.density), ("apply_prob", self.apply_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("noise {name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != NoiseKind::None
    }
}

pub fn corrupt(image: &Image, spec: &NoiseSpec, rng: &mut Rng) -> Image {
    match spec.kind {
        NoiseKind::None => image.clone(),
        NoiseKind::Gaussian => {
            let data = image
                .data
                .iter()
                .map(|&v| (v + spec.sigma * rng.gaussian()).clamp(0.0, 1.0))
                .collect();
            Image::new(image.height, image.width, data)
        }
        NoiseKind::SaltPepper => {
            let n = image.data.len();
            let k = ((n as f64) * spec.density).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            // partial Fisher-Yates: the first k positions are a uniform k-subset
            for i in 0..k.min(n) {
                let j = i + rng.below(n - i);
                order.swap(i, j);
            }
            let mut out = image.clone();
            for &p in &order[..k.min(n)] {
                out.data[p] = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
            }
            out
        }
    }
}

/// Left-right then up-down flip, each with probability 1/2.
pub fn augment_flips(image: &Image, rng: &mut Rng) -> Image {
    let lr = rng.bernoulli(0.5);
    let ud = rng.bernoulli(0.5);
    let mut out = if lr { image.flip_lr() } else { image.clone() };
    if ud {
        out = out.flip_ud();
    }
    out
}

/// Caps every few-shot class at `max_slices` training slices.
///
/// Volumes are taken in order of first appearance in `slices`, whole volumes
/// at a time, with the last one truncated so the class ends at exactly
/// `max_slices` (or everything it has, if fewer). Base classes pass through.
pub fn restrict_few_shot(
    slices: &[SliceSample],
    manifest: &DatasetManifest,
    max_slices: usize,
) -> Result<Vec<SliceSample>> {
    if max_slices == 0 {
        return Err(Error::Config("few-shot limit must be >= 1".into()));
    }
    let few: Vec<usize> = manifest.few_shot_classes();
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for s in slices {
        *per_class.entry(s.label).or_default() += 1;
    }
    for &c in &few {
        if per_class.get(&c).copied().unwrap_or(0) == 0 {
            return Err(Error::Config(format!(
                "few-shot class `{}` has no training slices",
                manifest.classes[c].name
            )));
        }
    }

    // volume order per class, by first appearance
    let mut volume_order: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for s in slices {
        let order = volume_order.entry(s.label).or_default();
        if !order.contains(&s.volume_id.as_str()) {
            order.push(&s.volume_id);
        }
    }
    let mut allowed: HashSet<usize> = HashSet::new();
    for &c in &few {
        let mut budget = max_slices;
        for vid in &volume_order[&c] {
            for (i, s) in slices.iter().enumerate() {
                if budget == 0 {
                    break;
                }
                if s.label == c && s.volume_id == *vid {
                    allowed.insert(i);
                    budget -= 1;
                }
            }
        }
    }
    let out: Vec<SliceSample> = slices
        .iter()
        .enumerate()
        .filter(|(i, s)| manifest.classes[s.label].group == ClassGroup::Base || allowed.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    Ok(out)
}
