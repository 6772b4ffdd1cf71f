//! Dataset manifests, subject-level splitting and central B-scan selection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::types::ClassLabel;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("duplicate entry for volume {volume_id} index {index}")]
    DuplicateScan { volume_id: String, index: usize },
    #[error("subject {subject_id} has inconsistent {field} across entries")]
    InconsistentSubject {
        subject_id: String,
        field: &'static str,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("class {label} has {available} subjects but {required} non-empty splits were requested")]
    TooFewSubjects {
        label: ClassLabel,
        available: usize,
        required: usize,
    },
    #[error("reading manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAssignment {
    Train,
    Val,
    Test,
}

impl SplitAssignment {
    pub const ALL: [SplitAssignment; 3] = [
        SplitAssignment::Train,
        SplitAssignment::Val,
        SplitAssignment::Test,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitAssignment::Train => "train",
            SplitAssignment::Val => "val",
            SplitAssignment::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub label: ClassLabel,
    pub volume_id: String,
    pub scan_path: String,
    pub segmentation_path: String,
    pub index_in_volume: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitAssignment>,
}

/// On disk this is a bare JSON array of entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        let mut subjects: BTreeMap<&str, (ClassLabel, Option<SplitAssignment>)> = BTreeMap::new();
        for e in &self.entries {
            if !seen.insert((e.volume_id.as_str(), e.index_in_volume)) {
                return Err(ManifestError::DuplicateScan {
                    volume_id: e.volume_id.clone(),
                    index: e.index_in_volume,
                });
            }
            match subjects.get(e.subject_id.as_str()) {
                None => {
                    subjects.insert(&e.subject_id, (e.label, e.split));
                }
                Some(&(label, split)) => {
                    if label != e.label {
                        return Err(ManifestError::InconsistentSubject {
                            subject_id: e.subject_id.clone(),
                            field: "label",
                        });
                    }
                    if split != e.split {
                        return Err(ManifestError::InconsistentSubject {
                            subject_id: e.subject_id.clone(),
                            field: "split",
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Subject ids grouped by label, each list sorted.
    pub fn subjects_by_label(&self) -> BTreeMap<ClassLabel, Vec<String>> {
        let mut out: BTreeMap<ClassLabel, BTreeSet<String>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.label).or_default().insert(e.subject_id.clone());
        }
        out.into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect()
    }

    pub fn subjects_in(&self, split: SplitAssignment) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| e.subject_id.clone())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
                path: path.to_owned(),
                source,
            })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        crate::io::write_atomic(path, text.as_bytes()).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`.
///
/// Remainder ties go to the earlier split. Every split with a positive ratio
/// receives at least one item, taken from the largest split.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let targets = ratios.map(|r| r * n as f64);
    let mut counts = targets.map(|t| t.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Assign every subject to train/val/test, stratified by class.
pub fn split_subjects(
    manifest: &DatasetManifest,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest, ManifestError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(ManifestError::BadRatios(ratios));
    }
    let required = ratios.iter().filter(|&&r| r > 0.0).count();
    let by_label = manifest.subjects_by_label();
    let mut assignment: BTreeMap<String, SplitAssignment> = BTreeMap::new();
    for label in [ClassLabel::Control, ClassLabel::Amd] {
        let mut subjects = by_label.get(&label).cloned().unwrap_or_default();
        if subjects.len() < required {
            return Err(ManifestError::TooFewSubjects {
                label,
                available: subjects.len(),
                required,
            });
        }
        let mut rng = rng::stream(seed, rng::name_hash(label.name()));
        subjects.shuffle(&mut rng);
        let counts = apportion(subjects.len(), ratios);
        let mut it = subjects.into_iter();
        for (split, count) in SplitAssignment::ALL.iter().zip(counts) {
            for s in it.by_ref().take(count) {
                assignment.insert(s, *split);
            }
        }
    }
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: assignment.get(&e.subject_id).copied(),
            ..e.clone()
        })
        .collect();
    DatasetManifest::new(entries)
}

/// Centered window of `round(n * keep_fraction)` indices, at least one wide.
pub fn select_central_bscans(n: usize, keep_fraction: f64) -> Range<usize> {
    if n == 0 {
        return 0..0;
    }
    let size = ((n as f64 * keep_fraction).round() as usize).clamp(1, n);
    let start = (n - size) / 2;
    start..start + size
}

/// Keep only the central B-scans of every volume. The volume length is taken
/// as one past the largest index seen for that volume.
pub fn filter_central(manifest: &DatasetManifest, keep_fraction: f64) -> DatasetManifest {
    let mut lengths: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &manifest.entries {
        let n = lengths.entry(&e.volume_id).or_insert(0);
        *n = (*n).max(e.index_in_volume + 1);
    }
    let entries = manifest
        .entries
        .iter()
        .filter(|e| {
            select_central_bscans(lengths[e.volume_id.as_str()], keep_fraction)
                .contains(&e.index_in_volume)
        })
        .cloned()
        .collect();
    DatasetManifest { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_manifest(n_amd: usize, n_ctl: usize, scans: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for (label, n) in [(ClassLabel::Amd, n_amd), (ClassLabel::Control, n_ctl)] {
            for s in 0..n {
                let subject = format!("{}-{s:03}", label.name());
                for i in 0..scans {
                    entries.push(ManifestEntry {
                        subject_id: subject.clone(),
                        label,
                        volume_id: format!("{subject}-v0"),
                        scan_path: format!("{subject}-{i}.png"),
                        segmentation_path: format!("{subject}-{i}.json"),
                        index_in_volume: i,
                        split: None,
                    });
                }
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    fn per_class_counts(m: &DatasetManifest, label: ClassLabel) -> [usize; 3] {
        let mut seen = BTreeMap::new();
        for e in m.entries.iter().filter(|e| e.label == label) {
            seen.insert(e.subject_id.clone(), e.split.unwrap());
        }
        let mut counts = [0; 3];
        for s in seen.values() {
            counts[*s as usize] += 1;
        }
        counts
    }

    #[test]
    fn paper_cohort_split_counts() {
        let m = toy_manifest(269, 115, 1);
        let out = split_subjects(&m, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(per_class_counts(&out, ClassLabel::Amd), [215, 27, 27]);
        assert_eq!(per_class_counts(&out, ClassLabel::Control), [92, 12, 11]);
    }

    #[test]
    fn all_train() {
        let m = toy_manifest(5, 5, 2);
        let out = split_subjects(&m, [1.0, 0.0, 0.0], 1).unwrap();
        assert!(out
            .entries
            .iter()
            .all(|e| e.split == Some(SplitAssignment::Train)));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = toy_manifest(12, 9, 3);
        let a = split_subjects(&m, [0.8, 0.1, 0.1], 42).unwrap();
        let b = split_subjects(&m, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(a, b);
        let c = split_subjects(&m, [0.8, 0.1, 0.1], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        let m = toy_manifest(2, 5, 1);
        let err = split_subjects(&m, [0.8, 0.1, 0.1], 0).unwrap_err();
        assert!(matches!(
            err,
            ManifestError::TooFewSubjects {
                label: ClassLabel::Amd,
                available: 2,
                required: 3
            }
        ));
    }

    #[test]
    fn bad_ratios_rejected() {
        let m = toy_manifest(5, 5, 1);
        assert!(matches!(
            split_subjects(&m, [0.8, 0.1, 0.2], 0),
            Err(ManifestError::BadRatios(_))
        ));
    }

    #[test]
    fn small_classes_still_fill_every_split() {
        assert_eq!(apportion(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
        assert_eq!(apportion(4, [0.8, 0.1, 0.1]), [2, 1, 1]);
        assert_eq!(apportion(20, [0.8, 0.1, 0.1]), [16, 2, 2]);
    }

    #[test]
    fn central_window_examples() {
        assert_eq!(select_central_bscans(100, 0.4), 30..70);
        assert_eq!(select_central_bscans(100, 1.0), 0..100);
        assert_eq!(select_central_bscans(1, 0.4), 0..1);
        assert_eq!(select_central_bscans(10, 0.01), 4..5);
    }

    #[test]
    fn manifest_rejects_duplicates_and_label_conflicts() {
        let mut m = toy_manifest(1, 1, 2);
        m.entries[1].index_in_volume = 0;
        assert!(matches!(
            m.validate(),
            Err(ManifestError::DuplicateScan { .. })
        ));
        let mut m = toy_manifest(1, 1, 2);
        m.entries[1].label = ClassLabel::Control;
        assert!(matches!(
            m.validate(),
            Err(ManifestError::InconsistentSubject { field: "label", .. })
        ));
    }

    #[test]
    fn filter_central_keeps_middle_of_each_volume() {
        let m = toy_manifest(2, 2, 10);
        let kept = filter_central(&m, 0.4);
        assert_eq!(kept.entries.len(), 16);
        assert!(kept
            .entries
            .iter()
            .all(|e| (3..7).contains(&e.index_in_volume)));
    }

    #[test]
    fn manifest_json_uses_lowercase_split_names() {
        let m = split_subjects(&toy_manifest(3, 3, 1), [0.8, 0.1, 0.1], 9).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with('['));
        assert!(text.contains("\"split\":\"train\""));
        let back: DatasetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn split_is_a_partition(n_amd in 3usize..30, n_ctl in 3usize..30, seed in any::<u64>()) {
                let m = toy_manifest(n_amd, n_ctl, 2);
                let out = split_subjects(&m, [0.8, 0.1, 0.1], seed).unwrap();
                let sets: Vec<_> = SplitAssignment::ALL.iter().map(|s| out.subjects_in(*s)).collect();
                for i in 0..3 {
                    for j in i + 1..3 {
                        prop_assert!(sets[i].is_disjoint(&sets[j]));
                    }
                }
                let union: usize = sets.iter().map(|s| s.len()).sum();
                prop_assert_eq!(union, n_amd + n_ctl);
                prop_assert!(out.validate().is_ok());
            }

            #[test]
            fn central_window_is_centered(n in 1usize..400, f in 0.01f64..=1.0) {
                let w = select_central_bscans(n, f);
                prop_assert!(!w.is_empty() && w.end <= n);
                let left = w.start;
                let right = n - w.end;
                prop_assert!(left == right || left + 1 == right);
            }
        }
    }
}

