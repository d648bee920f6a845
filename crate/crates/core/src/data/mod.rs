//! Dataset ingestion, the synthetic phantom generator, and checkpoint
//! persistence.

pub mod checkpoint;
pub mod manifest;
pub mod phantom;
pub mod png_io;

pub use checkpoint::{
    hash_config, load_checkpoint_into, load_generator_checkpoint, load_pose_checkpoint, read_meta,
    save_checkpoint, save_generator_checkpoint, save_pose_checkpoint, CheckpointMeta,
};
pub use manifest::{
    load_dataset, load_labeled_pool, DatasetManifest, FrameEntry, FrameLabel, JointsFile, Split,
    SubjectEntry,
};
pub use phantom::{
    apply_cover, gen_phantoms, render_uncovered, sample_pose, CoverMode, CoverParams,
    PhantomConfig, SplitSizes,
};
pub use png_io::{load_gray_png, save_gray_png16, save_gray_png8, NormalizeMode};
