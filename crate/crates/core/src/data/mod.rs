//! Volumes, manifests, the synthetic corpus and slice-level image operations.

pub mod manifest;
pub mod slices;
pub mod synth;
pub mod volume;

pub use manifest::{
    split_dataset, ClassGroup, ClassInfo, DatasetManifest, ManifestEntry, Split, SplitFractions,
    MANIFEST_FILE,
};
pub use slices::{
    augment_flips, corrupt, extract_slice, normalize_intensity, restrict_few_shot, sample_slices,
    Image, NoiseKind, NoiseSpec, SliceSample, SliceSampling,
};
pub use synth::{generate_synthetic_dataset, GeneratedDataset, SynthConfig};
pub use volume::{read_volume, write_volume, Volume};
