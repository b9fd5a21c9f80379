//! Procedural stand-in for a multi-modality head-scan corpus.
//!
//! Every volume is an ellipsoidal "head": background, a shell, a parenchyma
//! band with a radial intensity profile and oriented texture, and a central
//! core. A class fixes the contrast polarity, the radial profile, the texture
//! frequency band and the shell and core contrast; each volume jitters
//! position, shape, gain, bias field, texture orientation and acquisition
//! noise.
//!
//! Classes, base and few-shot alike, are placed in index order along one
//! appearance continuum with alternating polarity, so neighbouring classes
//! differ in polarity and classes of equal polarity are two grid steps apart.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::manifest::{
    split_dataset, ClassGroup, ClassInfo, DatasetManifest, ManifestEntry, Split, SplitFractions,
    MANIFEST_FILE,
};
use super::slices::sample_slices;
use super::volume::{write_volume, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_base: usize,
    pub n_few_shot: usize,
    pub volumes_per_base: usize,
    pub volumes_per_few_shot: usize,
    pub dims: [usize; 3],
    pub seed: u64,
    /// Acquisition noise std in raw intensity units.
    pub noise_std: f64,
    /// Spread of the class signatures around the middle of the continuum
    /// (1 = default, 0 = all classes share one appearance up to polarity).
    pub class_contrast: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_base: 4,
            n_few_shot: 3,
            volumes_per_base: 60,
            volumes_per_few_shot: 30,
            dims: [32, 32, 32],
            seed: 0,
            noise_std: 0.03,
            class_contrast: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_base < 2 || self.n_few_shot < 1 {
            return Err(Error::Config(
                "need at least 2 base classes and 1 few-shot class".into(),
            ));
        }
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::Config(format!("dims must be >= 16 per axis, got {:?}", self.dims)));
        }
        if !(self.class_contrast >= 0.0 && self.class_contrast.is_finite()) {
            return Err(Error::Config(format!("class_contrast must be finite and >= 0, got {}", self.class_contrast)));
        }
        if self.volumes_per_base == 0 || self.volumes_per_few_shot == 0 {
            return Err(Error::Config("need at least one volume per class".into()));
        }
        Ok(())
    }

    pub fn class_infos(&self) -> Vec<ClassInfo> {
        let base = (0..self.n_base).map(|i| ClassInfo {
            name: format!("base_{i:02}"),
            group: ClassGroup::Base,
        });
        let few = (0..self.n_few_shot).map(|j| ClassInfo {
            name: format!("few_{j:02}"),
            group: ClassGroup::FewShot,
        });
        base.chain(few).collect()
    }
}

/// Visual signature of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    /// +1 bright shell / dark core, -1 the inverse.
    pub polarity: f64,
    /// Position on the shared appearance continuum, in [0, 1].
    pub position: f64,
    /// Parenchyma intensity at mid radius, before polarity is applied.
    pub tissue_level: f64,
    /// Parenchyma intensity slope along the normalized radius.
    pub profile_slope: f64,
    /// Lower edge of the texture band, cycles per field of view.
    pub texture_freq: f64,
    pub texture_amp: f64,
    /// Core intensity before polarity is applied.
    pub core_level: f64,
    /// Normalized radius where the shell starts.
    pub shell_inner: f64,
    /// Shell intensity before polarity is applied.
    pub shell_level: f64,
}

impl ClassSignature {
    /// Class `c` of `C` sits at `t = 0.5 + class_contrast·(c/(C−1) − 0.5)`,
    /// clamped to [0, 1], with polarity `+1` for even `c`.
    pub fn for_class(cfg: &SynthConfig, class: usize) -> ClassSignature {
        let n = cfg.n_base + cfg.n_few_shot;
        let grid = class as f64 / (n - 1) as f64;
        let position = (0.5 + cfg.class_contrast * (grid - 0.5)).clamp(0.0, 1.0);
        ClassSignature {
            polarity: if class % 2 == 0 { 1.0 } else { -1.0 },
            position,
            tissue_level: 0.3 + 0.4 * position,
            profile_slope: 0.6 - 1.2 * position,
            texture_freq: 2.0 + 10.0 * position,
            texture_amp: 0.2,
            core_level: 0.1 + 0.2 * position,
            shell_inner: 0.9,
            shell_level: 0.95 - 0.3 * position,
        }
    }
}

/// Renders one volume of `class`.
pub fn render_volume(cfg: &SynthConfig, class: usize, id: &str, rng: &mut Rng) -> Result<Volume> {
    let sig = ClassSignature::for_class(cfg, class);
    let [nx, ny, nz] = cfg.dims;
    let extent = [nx as f64, ny as f64, nz as f64];

    let center: Vec<f64> = extent
        .iter()
        .map(|&e| (e - 1.0) / 2.0 + (rng.uniform() * 4.0 - 2.0))
        .collect();
    let semi: Vec<f64> = extent.iter().map(|&e| e * (0.58 + 0.06 * rng.uniform())).collect();
    let gain = 0.85 + 0.3 * rng.uniform();
    let offset = 0.1 * rng.uniform() - 0.05;
    let bias: Vec<f64> = (0..3).map(|_| 0.2 * rng.uniform() - 0.1).collect();
    let waves: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let d = [rng.gaussian(), rng.gaussian(), rng.gaussian()];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
            let freq = sig.texture_freq + 0.5 * rng.uniform();
            let phase = std::f64::consts::TAU * rng.uniform();
            ([d[0] / n, d[1] / n, d[2] / n], freq, phase)
        })
        .collect();

    let pol = |v: f64| 0.5 + sig.polarity * (v - 0.5);
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64, y as f64, z as f64];
                let r = (0..3)
                    .map(|a| ((p[a] - center[a]) / semi[a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let base = if r > 1.0 {
                    0.02
                } else if r > sig.shell_inner {
                    pol(sig.shell_level)
                } else if r < 0.3 {
                    pol(sig.core_level)
                } else {
                    let tissue = sig.tissue_level + sig.profile_slope * (r - 0.55);
                    let texture: f64 = waves
                        .iter()
                        .map(|(d, f, ph)| {
                            let proj = (0..3).map(|a| d[a] * p[a] / extent[a]).sum::<f64>();
                            (std::f64::consts::TAU * f * proj + ph).cos()
                        })
                        .sum::<f64>()
                        / 3.0;
                    tissue + sig.texture_amp * texture
                };
                let field = 1.0
                    + (0..3)
                        .map(|a| bias[a] * (p[a] / extent[a] - 0.5))
                        .sum::<f64>();
                let v = gain * base * field + offset + cfg.noise_std * rng.gaussian();
                voxels.push(v as f32);
            }
        }
    }
    Volume::new(id, cfg.dims, voxels)
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    /// Leave-one-out nearest-centroid accuracy on mean slice histograms.
    pub histogram_separability: f64,
    pub warnings: Vec<String>,
}

const HIST_BINS: usize = 16;

/// Writes `<out>/<class>/<class>_<nnn>.mvol` for every volume plus
/// `<out>/manifest.tsv` with a stratified 70/10/20 split.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let root = Rng::new(cfg.seed);
    let classes = cfg.class_infos();

    let mut entries = Vec::new();
    let mut histograms: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut serial = 0u64;
    for (c, info) in classes.iter().enumerate() {
        let class_dir = out_dir.join(&info.name);
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let count = match info.group {
            ClassGroup::Base => cfg.volumes_per_base,
            ClassGroup::FewShot => cfg.volumes_per_few_shot,
        };
        for i in 0..count {
            let id = format!("{}_{i:03}", info.name);
            let mut rng = root.split(serial);
            serial += 1;
            let vol = render_volume(cfg, c, &id, &mut rng)?;
            let rel = PathBuf::from(&info.name).join(format!("{id}.mvol"));
            write_volume(&vol, out_dir.join(&rel))?;
            histograms.push((c, slice_histogram(&vol, &mut rng)?));
            entries.push(ManifestEntry {
                path: rel,
                label: info.name.clone(),
                group: info.group,
                split: Split::Train,
            });
        }
    }
    let manifest = DatasetManifest::new(classes.clone(), entries, out_dir.to_path_buf())?;
    let (manifest, warnings) = split_dataset(&manifest, SplitFractions::default(), &mut root.split(u64::MAX))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;

    let histogram_separability = nearest_centroid_loo(&histograms, classes.len());
    log::info!(
        "generated {} volumes in {} classes, histogram separability {:.3}",
        manifest.entries.len(),
        classes.len(),
        histogram_separability
    );
    Ok(GeneratedDataset {
        manifest,
        manifest_path,
        histogram_separability,
        warnings,
    })
}

fn slice_histogram(v: &Volume, rng: &mut Rng) -> Result<Vec<f64>> {
    let slices = sample_slices(v, 0, 5, 0.15, rng)?;
    let mut hist = vec![0.0; HIST_BINS];
    let mut total = 0.0;
    for s in &slices {
        for &p in &s.image.data {
            let b = ((p * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            hist[b] += 1.0;
            total += 1.0;
        }
    }
    hist.iter_mut().for_each(|h| *h /= total);
    Ok(hist)
}

/// Leave-one-out nearest-centroid accuracy (squared Euclidean distance).
fn nearest_centroid_loo(samples: &[(usize, Vec<f64>)], n_classes: usize) -> f64 {
    let dim = samples.first().map_or(0, |s| s.1.len());
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (c, h) in samples {
        counts[*c] += 1;
        for (s, v) in sums[*c].iter_mut().zip(h) {
            *s += v;
        }
    }
    let mut correct = 0;
    for (c, h) in samples {
        let mut best = (f64::INFINITY, usize::MAX);
        for k in 0..n_classes {
            let n = counts[k] - usize::from(k == *c);
            if n == 0 {
                continue;
            }
            let d: f64 = (0..dim)
                .map(|i| {
                    let s = sums[k][i] - if k == *c { h[i] } else { 0.0 };
                    (s / n as f64 - h[i]).powi(2)
                })
                .sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        correct += usize::from(best.1 == *c);
    }
    correct as f64 / samples.len().max(1) as f64
}
