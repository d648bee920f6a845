//! Dataset ingestion for the SLP-style directory layout:
//!
//! ```text
//! root/
//!   train_source/<subject>/image_NNNNNN.png + joints.json   (labeled, uncovered)
//!   train_thin/<subject>/image_NNNNNN.png                   (unlabeled)
//!   train_thick/<subject>/image_NNNNNN.png                  (unlabeled)
//!   test/<subject>/image_NNNNNN.png + joints.json           (labeled, thin+thick)
//! ```
//!
//! `joints.json` maps each frame file to its label record
//! `{"joints": [[x, y, v], ... 14]}` (plus a `domain` tag in the test
//! split, where both cover conditions coexist). Loading validates every
//! manifest invariant and rejects mixed labeled/unlabeled layouts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DomainTag, Joint, KeypointSet, Sample, NUM_JOINTS};

use super::png_io::{load_gray_png, NormalizeMode};

/// Dataset splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainSource,
    TrainThin,
    TrainThick,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::TrainSource, Split::TrainThin, Split::TrainThick, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::TrainSource => "train_source",
            Split::TrainThin => "train_thin",
            Split::TrainThick => "train_thick",
            Split::Test => "test",
        }
    }

    pub fn is_labeled(self) -> bool {
        matches!(self, Split::TrainSource | Split::Test)
    }

    pub(crate) fn subject_prefix(self) -> &'static str {
        match self {
            Split::TrainSource => "src",
            Split::TrainThin => "thn",
            Split::TrainThick => "thk",
            Split::Test => "tst",
        }
    }

    fn default_domain(self) -> DomainTag {
        match self {
            Split::TrainSource => DomainTag::SourceUncover,
            Split::TrainThin => DomainTag::TargetThin,
            Split::TrainThick => DomainTag::TargetThick,
            Split::Test => DomainTag::TargetThin,
        }
    }
}

/// Per-frame record inside `joints.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameLabel {
    /// 14 entries of [x, y, visible(0|1)] in image pixel coordinates,
    /// origin top-left.
    pub joints: Vec<[f64; 3]>,
    /// Cover condition; required in the test split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl FrameLabel {
    pub fn labeled(kps: &KeypointSet, domain: Option<String>) -> Self {
        Self {
            joints: kps
                .joints()
                .iter()
                .map(|j| [j.x, j.y, if j.visible { 1.0 } else { 0.0 }])
                .collect(),
            domain,
        }
    }

    pub fn to_keypoints(&self) -> KeypointSet {
        KeypointSet::new(
            self.joints
                .iter()
                .map(|[x, y, v]| Joint { x: *x, y: *y, visible: *v != 0.0 })
                .collect(),
        )
    }
}

/// Subject label file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JointsFile {
    pub frames: BTreeMap<String, FrameLabel>,
}

impl JointsFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Json { path: path.into(), reason: e.to_string() })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), reason: e.to_string() })
    }
}

/// One frame in the manifest.
#[derive(Debug, Clone)]
pub struct FrameEntry {
    pub file_name: String,
    pub path: PathBuf,
    pub keypoints: Option<KeypointSet>,
    pub domain: DomainTag,
}

/// One subject directory.
#[derive(Debug, Clone)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub frames: Vec<FrameEntry>,
}

/// Validated view of a dataset tree.
#[derive(Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    splits: BTreeMap<Split, Vec<SubjectEntry>>,
}

fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
    Error::MalformedDataset { path: path.into(), reason: reason.into() }
}

/// Loads and validates the dataset rooted at `root`.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(malformed(root, "dataset root does not exist"));
    }
    let mut splits = BTreeMap::new();
    let mut seen_subjects: BTreeSet<String> = BTreeSet::new();
    let mut any = false;

    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        if !dir.is_dir() {
            return Err(malformed(&dir, format!("missing split directory {}", split.dir_name())));
        }
        let mut subjects = Vec::new();
        let mut subject_dirs: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subject_dirs.sort();

        for subject_dir in subject_dirs {
            let subject_id = subject_dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| malformed(&subject_dir, "unreadable subject directory name"))?
                .to_string();
            if !seen_subjects.insert(subject_id.clone()) {
                return Err(malformed(&subject_dir, format!("subject {subject_id} appears in more than one split")));
            }

            let mut frame_files: Vec<String> = std::fs::read_dir(&subject_dir)
                .map_err(|e| Error::io(&subject_dir, e))?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str().map(String::from))
                .filter(|n| n.starts_with("image_") && n.ends_with(".png"))
                .collect();
            frame_files.sort();
            if frame_files.is_empty() {
                return Err(malformed(&subject_dir, "subject directory holds no frames"));
            }

            let labels_path = subject_dir.join("joints.json");
            let labels = if split.is_labeled() {
                if !labels_path.is_file() {
                    return Err(malformed(&labels_path, "labeled split is missing joints.json"));
                }
                Some(JointsFile::read(&labels_path)?)
            } else {
                if labels_path.exists() {
                    return Err(malformed(
                        &labels_path,
                        "unlabeled split must not carry labels (mixed layout rejected)",
                    ));
                }
                None
            };

            let mut frames = Vec::with_capacity(frame_files.len());
            for file_name in frame_files {
                let path = subject_dir.join(&file_name);
                let (keypoints, domain) = match &labels {
                    Some(jf) => {
                        let record = jf.frames.get(&file_name).ok_or_else(|| {
                            malformed(&path, format!("no label entry for {file_name} in joints.json"))
                        })?;
                        if record.joints.len() != NUM_JOINTS {
                            return Err(malformed(
                                &labels_path,
                                format!(
                                    "{file_name}: expected {NUM_JOINTS} joints, found {}",
                                    record.joints.len()
                                ),
                            ));
                        }
                        let domain = match (&record.domain, split) {
                            (Some(d), _) => parse_domain(d, &labels_path)?,
                            (None, Split::Test) => {
                                return Err(malformed(
                                    &labels_path,
                                    format!("{file_name}: test frames must declare their cover domain"),
                                ))
                            }
                            (None, s) => s.default_domain(),
                        };
                        (Some(record.to_keypoints()), domain)
                    }
                    None => (None, split.default_domain()),
                };
                frames.push(FrameEntry { file_name, path, keypoints, domain });
            }
            // every label entry must point at an existing frame
            if let Some(jf) = &labels {
                for name in jf.frames.keys() {
                    if !frames.iter().any(|f| &f.file_name == name) {
                        return Err(malformed(&labels_path, format!("label entry {name} has no frame file")));
                    }
                }
            }
            any = true;
            subjects.push(SubjectEntry { subject_id, frames });
        }
        splits.insert(split, subjects);
    }

    if !any {
        return Err(malformed(root, "dataset holds no subjects"));
    }
    Ok(DatasetManifest { root: root.into(), splits })
}

fn parse_domain(name: &str, at: &Path) -> Result<DomainTag> {
    match name {
        "source_uncover" => Ok(DomainTag::SourceUncover),
        "target_thin" => Ok(DomainTag::TargetThin),
        "target_thick" => Ok(DomainTag::TargetThick),
        "gen_thin" => Ok(DomainTag::GenThin),
        "gen_thick" => Ok(DomainTag::GenThick),
        "extreme_aug" => Ok(DomainTag::ExtremeAug),
        other => Err(malformed(at, format!("unknown domain tag {other}"))),
    }
}

impl DatasetManifest {
    pub fn subjects(&self, split: Split) -> &[SubjectEntry] {
        self.splits.get(&split).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn subject_count(&self, split: Split) -> usize {
        self.subjects(split).len()
    }

    pub fn frame_count(&self, split: Split) -> usize {
        self.subjects(split).iter().map(|s| s.frames.len()).sum()
    }

    /// Loads a split into memory as validated [`Sample`]s.
    pub fn load_samples(&self, split: Split, mode: NormalizeMode) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for subject in self.subjects(split) {
            for frame in &subject.frames {
                let image = load_gray_png(&frame.path, mode)?;
                if let Some(kps) = &frame.keypoints {
                    if !kps.within_bounds(image.dims()) {
                        return Err(malformed(
                            &frame.path,
                            "visible keypoints fall outside the frame",
                        ));
                    }
                }
                let sample = Sample {
                    image,
                    keypoints: frame.keypoints.clone(),
                    domain: frame.domain,
                    subject_id: subject.subject_id.clone(),
                    frame_id: frame.file_name.clone(),
                };
                sample.validate(split == Split::Test)?;
                out.push(sample);
            }
        }
        Ok(out)
    }
}

/// Loads an augmented pool directory (`<dir>/<subject>/image_*.png` with
/// `joints.json`), assigning every frame the given domain.
pub fn load_labeled_pool(dir: &Path, domain: DomainTag, mode: NormalizeMode) -> Result<Vec<Sample>> {
    if !dir.is_dir() {
        return Err(malformed(dir, "pool directory does not exist"));
    }
    let mut out = Vec::new();
    let mut subject_dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subject_dirs.sort();
    for subject_dir in subject_dirs {
        let subject_id = subject_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let jf = JointsFile::read(&subject_dir.join("joints.json"))?;
        for (file_name, record) in &jf.frames {
            let path = subject_dir.join(file_name);
            if !path.is_file() {
                return Err(malformed(&path, "label entry has no frame file"));
            }
            out.push(Sample {
                image: load_gray_png(&path, mode)?,
                keypoints: Some(record.to_keypoints()),
                domain,
                subject_id: subject_id.clone(),
                frame_id: file_name.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::phantom::{gen_phantoms, PhantomConfig, SplitSizes};
    use super::*;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("thermopose-manifest-{}-{name}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        dir
    }

    fn tiny_cfg() -> PhantomConfig {
        PhantomConfig {
            subjects: SplitSizes { source: 2, thin: 1, thick: 1, test: 1 },
            poses_per_subject: 2,
            dims: (48, 36),
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn empty_root_is_malformed() {
        let dir = scratch("empty");
        std::fs::create_dir_all(&dir).unwrap();
        assert!(matches!(load_dataset(&dir), Err(Error::MalformedDataset { .. })));
    }

    #[test]
    fn generated_fixture_round_trips() {
        let dir = scratch("roundtrip");
        gen_phantoms(&tiny_cfg(), &dir).unwrap();
        let manifest = load_dataset(&dir).unwrap();
        assert_eq!(manifest.subject_count(Split::TrainSource), 2);
        assert_eq!(manifest.subject_count(Split::TrainThin), 1);
        assert_eq!(manifest.subject_count(Split::TrainThick), 1);
        assert_eq!(manifest.subject_count(Split::Test), 1);
        assert_eq!(manifest.frame_count(Split::TrainSource), 4);
        // test split renders both covers per pose
        assert_eq!(manifest.frame_count(Split::Test), 4);

        let source = manifest.load_samples(Split::TrainSource, NormalizeMode::FixedRange).unwrap();
        assert_eq!(source.len(), 4);
        assert!(source.iter().all(|s| s.keypoints.is_some()));
        assert!(source.iter().all(|s| s.domain == DomainTag::SourceUncover));

        let thin = manifest.load_samples(Split::TrainThin, NormalizeMode::FixedRange).unwrap();
        assert!(thin.iter().all(|s| s.keypoints.is_none()));

        let test = manifest.load_samples(Split::Test, NormalizeMode::FixedRange).unwrap();
        assert_eq!(test.len(), 4);
        assert!(test.iter().all(|s| s.keypoints.is_some()));
        let thin_frames = test.iter().filter(|s| s.domain == DomainTag::TargetThin).count();
        assert_eq!(thin_frames, 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_label_file_is_named() {
        let dir = scratch("missing-labels");
        gen_phantoms(&tiny_cfg(), &dir).unwrap();
        let victim = dir.join("train_source/src000/joints.json");
        std::fs::remove_file(&victim).unwrap();
        let err = load_dataset(&dir).unwrap_err();
        match err {
            Error::MalformedDataset { path, .. } => assert_eq!(path, victim),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn labels_in_unlabeled_split_rejected() {
        let dir = scratch("mixed");
        gen_phantoms(&tiny_cfg(), &dir).unwrap();
        let rogue = dir.join("train_thin/thn000/joints.json");
        std::fs::write(&rogue, "{\"frames\":{}}").unwrap();
        assert!(matches!(load_dataset(&dir), Err(Error::MalformedDataset { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_joint_count_rejected() {
        let dir = scratch("badk");
        gen_phantoms(&tiny_cfg(), &dir).unwrap();
        let path = dir.join("train_source/src000/joints.json");
        let mut jf = JointsFile::read(&path).unwrap();
        let first = jf.frames.keys().next().unwrap().clone();
        jf.frames.get_mut(&first).unwrap().joints.pop();
        jf.write(&path).unwrap();
        let err = load_dataset(&dir).unwrap_err();
        assert!(err.to_string().contains("expected 14 joints"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn duplicate_subject_across_splits_rejected() {
        let dir = scratch("dup");
        gen_phantoms(&tiny_cfg(), &dir).unwrap();
        // copy a thin subject into the thick split under the same name
        let src = dir.join("train_thin/thn000");
        let dst = dir.join("train_thick/thn000");
        std::fs::create_dir_all(&dst).unwrap();
        for entry in std::fs::read_dir(&src).unwrap() {
            let p = entry.unwrap().path();
            std::fs::copy(&p, dst.join(p.file_name().unwrap())).unwrap();
        }
        let err = load_dataset(&dir).unwrap_err();
        assert!(err.to_string().contains("more than one split"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
