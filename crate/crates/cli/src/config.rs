//! Run configuration: one JSON file per run, nested per-stage sections,
//! with toy/full presets. The file is captured verbatim in every stage's
//! run manifest so any stage can be re-executed identically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermopose::cycaug::{CycAugArch, CycAugTrainConfig};
use thermopose::data::{NormalizeMode, PhantomConfig, SplitSizes};
use thermopose::distill::DistillConfig;
use thermopose::extreme::ExtremeAugConfig;
use thermopose::pose::{Backbone, PoseNetConfig, PoseTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Minutes on a single desktop CPU, end to end.
    Toy,
    /// Full-scale settings for real data.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub extreme: ExtremeAugConfig,
    pub cycaug: CycAugTrainConfig,
    pub pose_net: PoseNetConfig,
    pub pose_train: PoseTrainConfig,
    pub distill: DistillConfig,
    pub eval_threshold: f64,
    pub normalize: NormalizeMode,
}

impl PipelineConfig {
    pub fn preset(profile: Profile, seed: u64) -> Self {
        match profile {
            Profile::Toy => Self {
                profile,
                seed,
                phantom: PhantomConfig::toy(seed),
                // occlusion constants rescaled for the half-resolution frames
                extreme: ExtremeAugConfig {
                    dark_kernel_size: 10,
                    n_dark_kernels_range: (3, 8),
                    dim_factor_range: (0.7, 0.95),
                    blur_kernel: 3,
                    blur_sigma: 1.0,
                    seed: seed ^ 0xE17,
                    ..Default::default()
                },
                cycaug: CycAugTrainConfig {
                    iterations: 600,
                    batch_size: 2,
                    arch: CycAugArch::toy(),
                    seed: seed ^ 0xC1C,
                    ..Default::default()
                },
                pose_net: PoseNetConfig::toy(Backbone::Hourglass),
                pose_train: PoseTrainConfig {
                    seed: seed ^ 0x905E,
                    ..PoseTrainConfig::toy()
                },
                distill: DistillConfig {
                    seed: seed ^ 0xD15,
                    ..DistillConfig::toy()
                },
                eval_threshold: 0.5,
                normalize: NormalizeMode::FixedRange,
            },
            Profile::Full => Self {
                profile,
                seed,
                phantom: PhantomConfig {
                    subjects: SplitSizes { source: 30, thin: 25, thick: 25, test: 10 },
                    poses_per_subject: 45,
                    seed,
                    ..Default::default()
                },
                extreme: ExtremeAugConfig { seed: seed ^ 0xE17, ..Default::default() },
                cycaug: CycAugTrainConfig { seed: seed ^ 0xC1C, ..Default::default() },
                pose_net: PoseNetConfig::default(),
                pose_train: PoseTrainConfig { seed: seed ^ 0x905E, ..Default::default() },
                distill: DistillConfig { seed: seed ^ 0xD15, ..Default::default() },
                eval_threshold: 0.5,
                normalize: NormalizeMode::FixedRange,
            },
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Re-derives every stage seed from a new global seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.phantom.seed = seed;
        self.extreme.seed = seed ^ 0xE17;
        self.cycaug.seed = seed ^ 0xC1C;
        self.pose_train.seed = seed ^ 0x905E;
        self.distill.seed = seed ^ 0xD15;
    }
}

/// Well-known paths under the output root.
pub struct OutLayout {
    pub root: PathBuf,
}

impl OutLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn cycaug_dir(&self, kind: &str) -> PathBuf {
        self.root.join("cycaug").join(kind)
    }

    pub fn generator_base(&self, kind: &str) -> PathBuf {
        self.cycaug_dir(kind).join(format!("g_{kind}"))
    }

    pub fn augmented(&self, pool: &str) -> PathBuf {
        self.root.join("augmented").join(pool)
    }

    pub fn pose_base(&self, label: &str) -> PathBuf {
        self.root.join("pose").join(label)
    }

    pub fn distill_base(&self) -> PathBuf {
        self.root.join("distill").join("student")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report_json(&self, label: &str) -> PathBuf {
        self.eval_dir().join(format!("{label}.report.json"))
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    pub fn lock_file(&self) -> PathBuf {
        self.root.join("run.lock")
    }
}
