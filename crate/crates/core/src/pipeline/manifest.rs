use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub label: String,
    pub fold: usize,
}

/// Labeled recordings with a stratified fold assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub k_folds: usize,
    pub seed: u64,
    pub label_set: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    pub fn n_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_folds];
        for e in &self.entries {
            sizes[e.fold] += 1;
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::InvalidParameter("need at least 2 folds".into()));
        }
        for e in &self.entries {
            if e.fold >= self.k_folds {
                return Err(Error::InvalidParameter(format!(
                    "{} has fold {} >= {}",
                    e.path.display(),
                    e.fold,
                    self.k_folds
                )));
            }
            if self.label_index(&e.label).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "{} has unknown label {}",
                    e.path.display(),
                    e.label
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let manifest: Self = crate::io::read_json(path)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(path, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Scans `root/<label>/*.wav` and assigns folds.
///
/// Within each class the files are shuffled with `seed` and dealt to folds
/// round-robin. The dealing position carries over from one class to the
/// next, so both per-class and overall fold sizes differ by at most one.
pub fn build_manifest(root: impl AsRef<Path>, k_folds: usize, seed: u64) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if k_folds < 2 {
        return Err(Error::InvalidParameter("need at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label_set = Vec::new();
    let mut entries = Vec::new();
    let mut next_fold = 0;
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = sorted_dir(&dir)?
            .into_iter()
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            })
            .collect();
        if files.is_empty() {
            return Err(Error::EmptyClass(dir));
        }
        files.shuffle(&mut rng);
        for file in files {
            let rel = file.strip_prefix(root).unwrap_or(&file).to_path_buf();
            entries.push(ManifestEntry {
                path: rel,
                label: label.clone(),
                fold: next_fold,
            });
            next_fold = (next_fold + 1) % k_folds;
        }
        label_set.push(label);
    }
    if label_set.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} has no class directories",
            root.display()
        )));
    }
    Ok(DatasetManifest {
        k_folds,
        seed,
        label_set,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_dataset(root: &Path, classes: &[(&str, usize)]) {
        for (name, n) in classes {
            let dir = root.join(name);
            fs::create_dir_all(&dir).unwrap();
            for i in 0..*n {
                fs::write(dir.join(format!("{name}_{i:03}.wav")), b"").unwrap();
            }
        }
    }

    #[test]
    fn ten_per_class_five_folds() {
        let dir = tempfile::tempdir().unwrap();
        touch_dataset(dir.path(), &[("a", 10), ("b", 10), ("c", 10)]);
        let m = build_manifest(dir.path(), 5, 1).unwrap();
        assert_eq!(m.label_set, vec!["a", "b", "c"]);
        for label in &m.label_set {
            for fold in 0..5 {
                let n = m
                    .entries
                    .iter()
                    .filter(|e| &e.label == label && e.fold == fold)
                    .count();
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn uneven_class_sizes_balance() {
        let dir = tempfile::tempdir().unwrap();
        touch_dataset(dir.path(), &[("a", 7), ("b", 3), ("c", 9)]);
        let m = build_manifest(dir.path(), 5, 4).unwrap();
        for label in &m.label_set {
            let counts: Vec<usize> = (0..5)
                .map(|f| m.entries.iter().filter(|e| &e.label == label && e.fold == f).count())
                .collect();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            assert!(spread <= 1, "{label}: {counts:?}");
        }
        let sizes = m.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn deterministic_under_seed() {
        let dir = tempfile::tempdir().unwrap();
        touch_dataset(dir.path(), &[("a", 8), ("b", 6)]);
        let a = build_manifest(dir.path(), 3, 9).unwrap();
        let b = build_manifest(dir.path(), 3, 9).unwrap();
        assert_eq!(a, b);
        let c = build_manifest(dir.path(), 3, 10).unwrap();
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn empty_class_is_error() {
        let dir = tempfile::tempdir().unwrap();
        touch_dataset(dir.path(), &[("a", 2)]);
        fs::create_dir_all(dir.path().join("empty")).unwrap();
        assert!(matches!(build_manifest(dir.path(), 2, 0), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn validate_catches_bad_entries() {
        let mut m = DatasetManifest {
            k_folds: 2,
            seed: 0,
            label_set: vec!["a".into()],
            entries: vec![ManifestEntry {
                path: "a/x.wav".into(),
                label: "a".into(),
                fold: 1,
            }],
        };
        assert!(m.validate().is_ok());
        m.entries[0].fold = 2;
        assert!(m.validate().is_err());
        m.entries[0].fold = 0;
        m.entries[0].label = "b".into();
        assert!(m.validate().is_err());
    }
}
