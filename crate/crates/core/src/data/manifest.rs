//! Dataset manifest: which volume file belongs to which class and split.
//!
//! On disk this is a tab-separated file with the header line
//!
//! ```text
//! path	label	group	split
//! ```
//!
//! followed by one record per volume. `path` is relative to the manifest's
//! directory, `group` is `base` or `few_shot` and `split` is `train`, `val`
//! or `test`. Class order is the order in which labels first appear.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::volume::{read_volume, Volume};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassGroup {
    Base,
    FewShot,
}

impl ClassGroup {
    pub fn short(self) -> &'static str {
        match self {
            ClassGroup::Base => "B",
            ClassGroup::FewShot => "F",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub group: ClassGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub group: ClassGroup,
    pub split: Split,
}

impl ManifestEntry {
    pub fn volume_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<ClassInfo>,
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<ClassInfo>, entries: Vec<ManifestEntry>, root: PathBuf) -> Result<Self> {
        let m = DatasetManifest {
            classes,
            entries,
            root,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate class `{}`", c.name)));
            }
        }
        for e in &self.entries {
            match self.class_index(&e.label) {
                None => {
                    return Err(Error::Config(format!(
                        "entry {} has unknown label `{}`",
                        e.path.display(),
                        e.label
                    )))
                }
                Some(i) if self.classes[i].group != e.group => {
                    return Err(Error::Config(format!(
                        "entry {} disagrees on the group of `{}`",
                        e.path.display(),
                        e.label
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn groups(&self) -> Vec<ClassGroup> {
        self.classes.iter().map(|c| c.group).collect()
    }

    pub fn few_shot_classes(&self) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&i| self.classes[i].group == ClassGroup::FewShot)
            .collect()
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load_volume(&self, entry: &ManifestEntry) -> Result<Volume> {
        read_volume(self.resolve(entry))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            w.serialize(e).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut classes: Vec<ClassInfo> = Vec::new();
        let mut entries = Vec::new();
        for rec in r.deserialize() {
            let e: ManifestEntry = rec.map_err(|e| csv_error(path, e))?;
            if !classes.iter().any(|c| c.name == e.label) {
                classes.push(ClassInfo {
                    name: e.label.clone(),
                    group: e.group,
                });
            }
            entries.push(e);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        DatasetManifest::new(classes, entries, root)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Format {
        path: path.to_path_buf(),
        offset,
        reason: e.to_string(),
    }
}

/// Target fractions for train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Assigns splits per volume, stratified by class.
///
/// Within each class the volumes are shuffled, then `round(n·test)` go to
/// test and `round(n·val)` to val, the rest to train (train always keeps at
/// least one). Classes with fewer than three volumes produce a warning; their
/// first volume goes to train and a second, if present, to test.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    rng: &mut Rng,
) -> Result<(DatasetManifest, Vec<String>)> {
    let total = fractions.train + fractions.val + fractions.test;
    if (total - 1.0).abs() > 1e-9 || [fractions.train, fractions.val, fractions.test].iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!("split fractions must be >= 0 and sum to 1, got {total}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let c = manifest
            .class_index(&e.label)
            .ok_or_else(|| Error::Config(format!("unknown label `{}`", e.label)))?;
        by_class.entry(c).or_default().push(i);
    }

    let mut out = manifest.clone();
    let mut warnings = Vec::new();
    for (class, mut idx) in by_class {
        rng.shuffle(&mut idx);
        let n = idx.len();
        let splits: Vec<Split> = if n < 3 {
            let msg = format!(
                "class `{}` has only {n} volume(s); assigning to train first",
                manifest.classes[class].name
            );
            log::warn!("{msg}");
            warnings.push(msg);
            [Split::Train, Split::Test].into_iter().take(n).collect()
        } else {
            let mut n_test = ((n as f64) * fractions.test).round() as usize;
            let mut n_val = ((n as f64) * fractions.val).round() as usize;
            if fractions.test > 0.0 {
                n_test = n_test.max(1);
            }
            while n_test + n_val >= n {
                if n_val > 0 {
                    n_val -= 1;
                } else {
                    n_test -= 1;
                }
            }
            let n_train = n - n_test - n_val;
            std::iter::repeat_n(Split::Train, n_train)
                .chain(std::iter::repeat_n(Split::Val, n_val))
                .chain(std::iter::repeat_n(Split::Test, n_test))
                .collect()
        };
        for (&entry, split) in idx.iter().zip(splits) {
            out.entries[entry].split = split;
        }
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(counts: &[(&str, ClassGroup, usize)]) -> DatasetManifest {
        let classes = counts
            .iter()
            .map(|(n, g, _)| ClassInfo {
                name: n.to_string(),
                group: *g,
            })
            .collect();
        let entries = counts
            .iter()
            .flat_map(|(n, g, k)| {
                (0..*k).map(move |i| ManifestEntry {
                    path: PathBuf::from(format!("{n}/{n}_{i:03}.mvol")),
                    label: n.to_string(),
                    group: *g,
                    split: Split::Train,
                })
            })
            .collect();
        DatasetManifest::new(classes, entries, PathBuf::new()).unwrap()
    }

    fn count(m: &DatasetManifest, label: &str, s: Split) -> usize {
        m.entries.iter().filter(|e| e.label == label && e.split == s).count()
    }

    #[test]
    fn ten_volumes_split_seven_one_two() {
        let m = manifest(&[("a", ClassGroup::Base, 10)]);
        let (s, warn) = split_dataset(&m, SplitFractions::default(), &mut Rng::new(1)).unwrap();
        assert!(warn.is_empty());
        assert_eq!(
            [count(&s, "a", Split::Train), count(&s, "a", Split::Val), count(&s, "a", Split::Test)],
            [7, 1, 2]
        );
    }

    #[test]
    fn single_volume_goes_to_train_with_warning() {
        let m = manifest(&[("a", ClassGroup::Base, 1), ("b", ClassGroup::FewShot, 3)]);
        let (s, warn) = split_dataset(&m, SplitFractions::default(), &mut Rng::new(1)).unwrap();
        assert_eq!(warn.len(), 1);
        assert_eq!(count(&s, "a", Split::Train), 1);
        assert_eq!(count(&s, "b", Split::Test), 1);
    }

    #[test]
    fn splits_partition_volumes() {
        let m = manifest(&[("a", ClassGroup::Base, 23), ("b", ClassGroup::FewShot, 7)]);
        let (s, _) = split_dataset(&m, SplitFractions::default(), &mut Rng::new(4)).unwrap();
        assert_eq!(s.entries.len(), m.entries.len());
        let ids: HashSet<_> = s.entries.iter().map(|e| e.path.clone()).collect();
        assert_eq!(ids.len(), m.entries.len());
        for label in ["a", "b"] {
            assert!(count(&s, label, Split::Test) >= 1);
        }
    }

    #[test]
    fn rejects_bad_fractions() {
        let m = manifest(&[("a", ClassGroup::Base, 3)]);
        let f = SplitFractions {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(matches!(split_dataset(&m, f, &mut Rng::new(1)), Err(Error::Config(_))));
    }

    #[test]
    fn file_roundtrip_keeps_class_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&[("zeta", ClassGroup::Base, 2), ("alpha", ClassGroup::FewShot, 2)]);
        let p = dir.path().join(MANIFEST_FILE);
        m.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path\tlabel\tgroup\tsplit\n"));
        assert!(text.contains("few_shot\ttrain"));
        let back = DatasetManifest::read(&p).unwrap();
        assert_eq!(back.class_names(), vec!["zeta", "alpha"]);
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.root, dir.path());
    }

    #[test]
    fn rejects_unknown_label() {
        let mut m = manifest(&[("a", ClassGroup::Base, 1)]);
        m.entries[0].label = "nope".into();
        assert!(m.validate().is_err());
    }
}
