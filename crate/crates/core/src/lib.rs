//! Cross-domain in-bed pose estimation toolkit for thermal imagery.
//!
//! The pipeline closes the appearance gap between labeled uncovered frames
//! and unlabeled covered frames in two stages of data augmentation —
//! unpaired image translation ([`cycaug`]) and an occlusion-heavy image
//! processing chain ([`extreme`]) — then trains heatmap pose estimators
//! ([`pose`]) on the extended input space and self-distills them on
//! unlabeled covered images ([`distill`]). Accuracy is reported as
//! PCKh ([`eval`]). Synthetic thermal phantoms ([`data`]) make every stage
//! runnable and testable at desk scale without the restricted dataset.

pub mod cycaug;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod extreme;
pub mod heatmap;
pub mod nn;
pub mod pose;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    DomainTag, HeatmapStack, Joint, JointId, KeypointSet, Sample, ThermalImage, JOINT_NAMES,
    NUM_JOINTS,
};
