//! Domain data types shared by every stage of the pipeline.
//!
//! A [`ThermalImage`] is a single-channel intensity grid in `[0, 1]` standing
//! in for an LWIR frame. A [`KeypointSet`] is the 2-D skeleton annotation
//! (14 joints in LSP ordering by default). A [`HeatmapStack`] holds one
//! confidence grid per joint and is the regression target of the pose nets.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joints in the default skeleton (LSP / SLP convention).
pub const NUM_JOINTS: usize = 14;

/// Joint indices in LSP ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum JointId {
    RightAnkle = 0,
    RightKnee = 1,
    RightHip = 2,
    LeftHip = 3,
    LeftKnee = 4,
    LeftAnkle = 5,
    RightWrist = 6,
    RightElbow = 7,
    RightShoulder = 8,
    LeftShoulder = 9,
    LeftElbow = 10,
    LeftWrist = 11,
    Thorax = 12,
    HeadTop = 13,
}

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "thorax",
    "head_top",
];

/// Single-channel thermal frame with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalImage {
    pixels: Array2<f64>,
}

impl ThermalImage {
    /// Wraps an intensity grid, validating shape and range.
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("image dims must be positive, got {h}x{w}")));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v) || v.is_nan()) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self { pixels })
    }

    /// Constant-intensity image; `value` must be in `[0, 1]`.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn mean(&self) -> f64 {
        self.pixels.mean().unwrap_or(0.0)
    }

    /// Clamps an arbitrary grid into `[0, 1]` and wraps it. NaNs are rejected.
    pub fn from_clamped(mut pixels: Array2<f64>) -> Result<Self> {
        if pixels.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("pixel values must not be NaN"));
        }
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(pixels)
    }

    /// Bilinear resample to `(height, width)`.
    pub fn resize_bilinear(&self, dims: (usize, usize)) -> Result<Self> {
        let (th, tw) = dims;
        if th == 0 || tw == 0 {
            return Err(Error::invalid("target dims must be positive"));
        }
        let (sh, sw) = self.dims();
        if (sh, sw) == (th, tw) {
            return Ok(self.clone());
        }
        let src = self.pixels();
        let fy = sh as f64 / th as f64;
        let fx = sw as f64 / tw as f64;
        let out = Array2::from_shape_fn((th, tw), |(ty, tx)| {
            // align sample centers
            let sy = ((ty as f64 + 0.5) * fy - 0.5).clamp(0.0, sh as f64 - 1.0);
            let sx = ((tx as f64 + 0.5) * fx - 0.5).clamp(0.0, sw as f64 - 1.0);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let dy = sy - y0 as f64;
            let dx = sx - x0 as f64;
            src[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
                + src[[y0, x1]] * (1.0 - dy) * dx
                + src[[y1, x0]] * dy * (1.0 - dx)
                + src[[y1, x1]] * dy * dx
        });
        Self::new(out)
    }
}

/// One annotated joint: image-space coordinates plus a visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Joint {
    pub fn visible(x: f64, y: f64) -> Self {
        Joint { x, y, visible: true }
    }

    pub fn hidden() -> Self {
        Joint {
            x: 0.0,
            y: 0.0,
            visible: false,
        }
    }

    pub fn dist(&self, other: &Joint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// K 2-D joint annotations for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    joints: Vec<Joint>,
}

impl KeypointSet {
    pub fn new(joints: Vec<Joint>) -> Self {
        Self { joints }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joints_mut(&mut self) -> &mut [Joint] {
        &mut self.joints
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn joint(&self, id: JointId) -> &Joint {
        &self.joints[id as usize]
    }

    /// True when every visible joint lies inside `(height, width)` bounds.
    pub fn within_bounds(&self, dims: (usize, usize)) -> bool {
        let (h, w) = (dims.0 as f64, dims.1 as f64);
        self.joints
            .iter()
            .filter(|j| j.visible)
            .all(|j| j.x >= 0.0 && j.x <= w && j.y >= 0.0 && j.y <= h)
    }
}

/// K per-joint confidence grids plus the image-to-heatmap stride.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    /// Shape (K, h, w).
    maps: Array3<f64>,
    stride: f64,
}

impl HeatmapStack {
    pub fn new(maps: Array3<f64>, stride: f64) -> Result<Self> {
        if stride <= 0.0 {
            return Err(Error::invalid("heatmap stride must be positive"));
        }
        let (k, h, w) = maps.dim();
        if k == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("heatmap stack dims must be positive"));
        }
        Ok(Self { maps, stride })
    }

    pub fn maps(&self) -> &Array3<f64> {
        &self.maps
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn num_joints(&self) -> usize {
        self.maps.dim().0
    }

    pub fn map_dims(&self) -> (usize, usize) {
        let (_, h, w) = self.maps.dim();
        (h, w)
    }
}

/// Provenance label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    SourceUncover,
    TargetThin,
    TargetThick,
    GenThin,
    GenThick,
    ExtremeAug,
}

impl DomainTag {
    /// Domains whose samples always carry labels (augmented copies inherit
    /// the source label).
    pub fn is_labeled_domain(self) -> bool {
        matches!(
            self,
            DomainTag::SourceUncover | DomainTag::GenThin | DomainTag::GenThick | DomainTag::ExtremeAug
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::SourceUncover => "source_uncover",
            DomainTag::TargetThin => "target_thin",
            DomainTag::TargetThick => "target_thick",
            DomainTag::GenThin => "gen_thin",
            DomainTag::GenThick => "gen_thick",
            DomainTag::ExtremeAug => "extreme_aug",
        }
    }
}

/// One dataset element: frame, optional annotation, provenance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: ThermalImage,
    pub keypoints: Option<KeypointSet>,
    pub domain: DomainTag,
    pub subject_id: String,
    pub frame_id: String,
}

impl Sample {
    /// Keypoints must be present iff the domain is labeled or the sample
    /// belongs to the test split.
    pub fn validate(&self, in_test_split: bool) -> Result<()> {
        let expect_labels = self.domain.is_labeled_domain() || in_test_split;
        match (&self.keypoints, expect_labels) {
            (Some(_), true) | (None, false) => Ok(()),
            (None, true) => Err(Error::invalid(format!(
                "sample {}/{} in labeled domain {} has no keypoints",
                self.subject_id,
                self.frame_id,
                self.domain.as_str()
            ))),
            (Some(_), false) => Err(Error::invalid(format!(
                "sample {}/{} in unlabeled domain {} carries keypoints",
                self.subject_id,
                self.frame_id,
                self.domain.as_str()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ThermalImage::new(Array2::from_elem((4, 4), 1.5)).is_err());
        assert!(ThermalImage::new(Array2::from_elem((4, 4), -0.1)).is_err());
        assert!(ThermalImage::new(Array2::from_elem((0, 4), 0.5)).is_err());
        assert!(ThermalImage::new(Array2::from_elem((4, 4), 1.0)).is_ok());
    }

    #[test]
    fn clamped_constructor_clips() {
        let img = ThermalImage::from_clamped(Array2::from_elem((2, 2), 3.0)).unwrap();
        assert_eq!(img.pixels()[[0, 0]], 1.0);
    }

    #[test]
    fn labeled_domain_flags() {
        assert!(DomainTag::SourceUncover.is_labeled_domain());
        assert!(DomainTag::GenThin.is_labeled_domain());
        assert!(DomainTag::ExtremeAug.is_labeled_domain());
        assert!(!DomainTag::TargetThin.is_labeled_domain());
        assert!(!DomainTag::TargetThick.is_labeled_domain());
    }

    #[test]
    fn sample_label_presence_rule() {
        let img = ThermalImage::constant(8, 8, 0.2).unwrap();
        let kps = KeypointSet::new(vec![Joint::visible(1.0, 1.0); NUM_JOINTS]);
        let labeled = Sample {
            image: img.clone(),
            keypoints: Some(kps.clone()),
            domain: DomainTag::SourceUncover,
            subject_id: "s0".into(),
            frame_id: "f0".into(),
        };
        assert!(labeled.validate(false).is_ok());

        let unlabeled_target = Sample {
            image: img.clone(),
            keypoints: None,
            domain: DomainTag::TargetThin,
            subject_id: "s1".into(),
            frame_id: "f0".into(),
        };
        assert!(unlabeled_target.validate(false).is_ok());
        // Test split carries labels for covered conditions.
        assert!(unlabeled_target.validate(true).is_err());

        let labeled_test = Sample {
            keypoints: Some(kps),
            ..unlabeled_target
        };
        assert!(labeled_test.validate(true).is_ok());
    }
}
