//! Synthetic thermal phantom generator: bright stick figures with Gaussian
//! limb cross-sections on noisy dark backgrounds, with exact keypoint
//! labels and optional cover simulation. The generated tree follows the
//! dataset layout, so every pipeline stage runs at desk scale without the
//! restricted recordings.
//!
//! The cover simulation is deliberately different from the occlusion
//! augmentation recipe: a global attenuation plus a smooth sheet pattern
//! (and extra diffusion for the thick cover), leaving the translation
//! stage a real appearance gap to learn.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extreme::gaussian_blur;
use crate::types::{Joint, JointId, KeypointSet, ThermalImage, NUM_JOINTS};

use super::manifest::{FrameLabel, JointsFile, Split};
use super::png_io::save_gray_png8;

/// Subject counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub source: usize,
    pub thin: usize,
    pub thick: usize,
    pub test: usize,
}

/// Cover rendering constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverParams {
    /// Body attenuation under the thin sheet.
    pub thin_attenuation: f64,
    /// Peak added intensity of the thin sheet pattern.
    pub thin_sheet: f64,
    pub thick_attenuation: f64,
    pub thick_sheet: f64,
    /// Diffusion applied before attenuating under the thick blanket.
    pub thick_blur_kernel: usize,
    pub thick_blur_sigma: f64,
}

impl Default for CoverParams {
    fn default() -> Self {
        Self {
            thin_attenuation: 0.5,
            thin_sheet: 0.16,
            thick_attenuation: 0.32,
            thick_sheet: 0.2,
            thick_blur_kernel: 5,
            thick_blur_sigma: 1.2,
        }
    }
}

/// Which cover a rendered frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    None,
    Thin,
    Thick,
}

/// Phantom dataset configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub subjects: SplitSizes,
    pub poses_per_subject: usize,
    /// Frame dims (H, W).
    pub dims: (usize, usize),
    /// Per-limb peak intensity range.
    pub limb_intensity: (f64, f64),
    /// Background noise (mean, std).
    pub background_noise: (f64, f64),
    pub cover: CoverParams,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            subjects: SplitSizes { source: 4, thin: 3, thick: 3, test: 2 },
            poses_per_subject: 4,
            dims: (160, 120),
            limb_intensity: (0.7, 0.95),
            background_noise: (0.08, 0.02),
            cover: CoverParams::default(),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Fixture used by the end-to-end toy profile.
    pub fn toy(seed: u64) -> Self {
        Self {
            subjects: SplitSizes { source: 8, thin: 5, thick: 5, test: 3 },
            poses_per_subject: 6,
            dims: (64, 48),
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.dims;
        if h < 32 || w < 24 {
            return Err(Error::invalid(format!(
                "dims {h}x{w} too small to fit the skeleton (need at least 32x24)"
            )));
        }
        let (lo, hi) = self.limb_intensity;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid("limb intensity range must satisfy 0 < lo <= hi <= 1"));
        }
        if self.background_noise.1 < 0.0 || self.background_noise.0 < 0.0 {
            return Err(Error::invalid("background noise must be non-negative"));
        }
        if self.poses_per_subject == 0 {
            return Err(Error::invalid("poses per subject must be positive"));
        }
        if self.subjects.source == 0 || self.subjects.test == 0 {
            return Err(Error::invalid("source and test splits need at least one subject"));
        }
        Ok(())
    }
}

// Skeleton edges drawn as capsules: (joint a, joint b, radius in L units).
const LIMBS: [(JointId, JointId, f64); 11] = [
    (JointId::RightAnkle, JointId::RightKnee, 0.035),
    (JointId::RightKnee, JointId::RightHip, 0.045),
    (JointId::LeftAnkle, JointId::LeftKnee, 0.035),
    (JointId::LeftKnee, JointId::LeftHip, 0.045),
    (JointId::RightHip, JointId::LeftHip, 0.055),
    (JointId::RightWrist, JointId::RightElbow, 0.028),
    (JointId::RightElbow, JointId::RightShoulder, 0.034),
    (JointId::LeftWrist, JointId::LeftElbow, 0.028),
    (JointId::LeftElbow, JointId::LeftShoulder, 0.034),
    (JointId::RightShoulder, JointId::LeftShoulder, 0.05),
    (JointId::Thorax, JointId::HeadTop, 0.04),
];

/// One lying pose; joints stay within the frame by construction.
pub fn sample_pose(dims: (usize, usize), rng: &mut ChaCha12Rng) -> KeypointSet {
    let (h, w) = (dims.0 as f64, dims.1 as f64);
    let l = 0.72 * h; // body length scale
    let cx = w * 0.5 + rng.gen_range(-0.06..0.06) * w;
    let top = h * 0.10 + rng.gen_range(0.0..0.04) * h;

    let deg = std::f64::consts::PI / 180.0;
    let polar = |origin: (f64, f64), len: f64, angle_from_down: f64| {
        (origin.0 + len * angle_from_down.sin(), origin.1 + len * angle_from_down.cos())
    };

    let head_top = (cx + rng.gen_range(-0.02..0.02) * w, top);
    let thorax = (head_top.0 + rng.gen_range(-0.015..0.015) * w, head_top.1 + 0.22 * l);
    let hip_c = (thorax.0 + rng.gen_range(-0.015..0.015) * w, thorax.1 + 0.32 * l);
    let hip_half = 0.075 * l;
    let r_hip = (hip_c.0 - hip_half, hip_c.1);
    let l_hip = (hip_c.0 + hip_half, hip_c.1);
    let shoulder_half = 0.14 * l;
    let r_shoulder = (thorax.0 - shoulder_half, thorax.1 - 0.02 * l);
    let l_shoulder = (thorax.0 + shoulder_half, thorax.1 - 0.02 * l);

    // arms bend outward (sign: right side toward -x)
    let r_elbow = polar(r_shoulder, 0.19 * l, -rng.gen_range(12.0..55.0) * deg);
    let r_wrist = polar(r_elbow, 0.18 * l, -rng.gen_range(-15.0..70.0) * deg);
    let l_elbow = polar(l_shoulder, 0.19 * l, rng.gen_range(12.0..55.0) * deg);
    let l_wrist = polar(l_elbow, 0.18 * l, rng.gen_range(-15.0..70.0) * deg);

    let r_knee = polar(r_hip, 0.26 * l, -rng.gen_range(-8.0..14.0) * deg);
    let r_ankle = polar(r_knee, 0.24 * l, -rng.gen_range(-10.0..14.0) * deg);
    let l_knee = polar(l_hip, 0.26 * l, rng.gen_range(-8.0..14.0) * deg);
    let l_ankle = polar(l_knee, 0.24 * l, rng.gen_range(-10.0..14.0) * deg);

    let mut joints = vec![Joint::hidden(); NUM_JOINTS];
    let mut put = |id: JointId, p: (f64, f64)| {
        let margin = 1.5;
        joints[id as usize] = Joint::visible(p.0.clamp(margin, w - margin), p.1.clamp(margin, h - margin));
    };
    put(JointId::RightAnkle, r_ankle);
    put(JointId::RightKnee, r_knee);
    put(JointId::RightHip, r_hip);
    put(JointId::LeftHip, l_hip);
    put(JointId::LeftKnee, l_knee);
    put(JointId::LeftAnkle, l_ankle);
    put(JointId::RightWrist, r_wrist);
    put(JointId::RightElbow, r_elbow);
    put(JointId::RightShoulder, r_shoulder);
    put(JointId::LeftShoulder, l_shoulder);
    put(JointId::LeftElbow, l_elbow);
    put(JointId::LeftWrist, l_wrist);
    put(JointId::Thorax, thorax);
    put(JointId::HeadTop, head_top);
    KeypointSet::new(joints)
}

/// Renders a pose as a thermal frame, uncovered.
pub fn render_uncovered(kps: &KeypointSet, cfg: &PhantomConfig, rng: &mut ChaCha12Rng) -> ThermalImage {
    let (h, w) = cfg.dims;
    let l = 0.72 * h as f64;
    let (bg_mean, bg_std) = cfg.background_noise;

    let mut img = Array2::from_shape_fn((h, w), |_| {
        (bg_mean + bg_std * gauss(rng)).clamp(0.0, 1.0)
    });

    // torso fill: wide capsule thorax -> hip center
    let thorax = kps.joint(JointId::Thorax);
    let r_hip = kps.joint(JointId::RightHip);
    let l_hip = kps.joint(JointId::LeftHip);
    let hip_c = ((r_hip.x + l_hip.x) / 2.0, (r_hip.y + l_hip.y) / 2.0);
    let torso_peak = rng.gen_range(cfg.limb_intensity.0..=cfg.limb_intensity.1);
    stamp_capsule(&mut img, (thorax.x, thorax.y), hip_c, 0.13 * l, torso_peak);

    // head disk just below the head-top marker
    let head = kps.joint(JointId::HeadTop);
    let head_peak = rng.gen_range(cfg.limb_intensity.0..=cfg.limb_intensity.1);
    let head_c = (head.x, head.y + 0.055 * l);
    stamp_capsule(&mut img, (head.x, head.y), head_c, 0.07 * l, head_peak);

    for (a, b, radius) in LIMBS {
        let peak = rng.gen_range(cfg.limb_intensity.0..=cfg.limb_intensity.1);
        let ja = kps.joint(a);
        let jb = kps.joint(b);
        stamp_capsule(&mut img, (ja.x, ja.y), (jb.x, jb.y), radius * l, peak);
    }

    ThermalImage::new(img).expect("render stays in range")
}

/// Applies the configured cover simulation.
pub fn apply_cover(
    img: &ThermalImage,
    mode: CoverMode,
    cover: &CoverParams,
    rng: &mut ChaCha12Rng,
) -> Result<ThermalImage> {
    let (h, w) = img.dims();
    match mode {
        CoverMode::None => Ok(img.clone()),
        CoverMode::Thin => {
            let sheet = sheet_pattern(h, w, cover.thin_sheet, rng);
            let out = img.pixels() * cover.thin_attenuation + &sheet;
            ThermalImage::from_clamped(out)
        }
        CoverMode::Thick => {
            let diffused = gaussian_blur(img, cover.thick_blur_kernel, cover.thick_blur_sigma)?;
            let sheet = sheet_pattern(h, w, cover.thick_sheet, rng);
            let out = diffused.pixels() * cover.thick_attenuation + &sheet;
            ThermalImage::from_clamped(out)
        }
    }
}

// Smooth low-amplitude fabric pattern.
fn sheet_pattern(h: usize, w: usize, peak: f64, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let phase_y = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_x = rng.gen_range(0.0..std::f64::consts::TAU);
    let fy = std::f64::consts::TAU / (h as f64 / 2.5);
    let fx = std::f64::consts::TAU / (w as f64 / 2.0);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let wobble = 0.5 + 0.25 * (fy * y as f64 + phase_y).sin() + 0.25 * (fx * x as f64 + phase_x).sin();
        peak * wobble
    })
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

// Gaussian-profile capsule between two points.
fn stamp_capsule(img: &mut Array2<f64>, a: (f64, f64), b: (f64, f64), radius: f64, peak: f64) {
    let (h, w) = img.dim();
    let sigma = (radius / 1.5).max(0.5);
    let reach = 3.0 * sigma;
    let x_lo = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let x_hi = (a.0.max(b.0) + reach).ceil().min(w as f64 - 1.0) as usize;
    let y_lo = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let y_hi = (a.1.max(b.1) + reach).ceil().min(h as f64 - 1.0) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d = dist_to_segment((x as f64, y as f64), a, b);
            if d > reach {
                continue;
            }
            let v = peak * (-d * d / (2.0 * sigma * sigma)).exp();
            let cell = &mut img[[y, x]];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Renders the full four-split dataset tree under `root`.
///
/// Layout: `root/{split}/{subject}/image_NNNNNN.png` plus `joints.json`
/// in labeled splits. Test subjects get one thin and one thick frame per
/// pose, both labeled and tagged with their cover domain. Deterministic
/// per (seed, subject, pose).
pub fn gen_phantoms(cfg: &PhantomConfig, root: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut subject_counter = 0usize;
    for split in [Split::TrainSource, Split::TrainThin, Split::TrainThick, Split::Test] {
        let n_subjects = match split {
            Split::TrainSource => cfg.subjects.source,
            Split::TrainThin => cfg.subjects.thin,
            Split::TrainThick => cfg.subjects.thick,
            Split::Test => cfg.subjects.test,
        };
        let split_dir = root.join(split.dir_name());
        std::fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;

        for s in 0..n_subjects {
            let subject_id = format!("{}{s:03}", split.subject_prefix());
            let subject_dir = split_dir.join(&subject_id);
            std::fs::create_dir_all(&subject_dir).map_err(|e| Error::io(&subject_dir, e))?;
            let mut labels = JointsFile::default();

            for pose_i in 0..cfg.poses_per_subject {
                // substream fixed by (subject, pose), independent of order
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((subject_counter as u64) << 16) | pose_i as u64);
                let kps = sample_pose(cfg.dims, &mut rng);
                let body = render_uncovered(&kps, cfg, &mut rng);

                match split {
                    Split::TrainSource => {
                        let name = format!("image_{pose_i:06}.png");
                        save_gray_png8(&body, &subject_dir.join(&name))?;
                        labels.frames.insert(name, FrameLabel::labeled(&kps, None));
                    }
                    Split::TrainThin | Split::TrainThick => {
                        let mode = if split == Split::TrainThin { CoverMode::Thin } else { CoverMode::Thick };
                        let covered = apply_cover(&body, mode, &cfg.cover, &mut rng)?;
                        let name = format!("image_{pose_i:06}.png");
                        save_gray_png8(&covered, &subject_dir.join(&name))?;
                    }
                    Split::Test => {
                        // both cover conditions for every test pose
                        for (k, mode, domain) in [
                            (0usize, CoverMode::Thin, "target_thin"),
                            (1usize, CoverMode::Thick, "target_thick"),
                        ] {
                            let covered = apply_cover(&body, mode, &cfg.cover, &mut rng)?;
                            let name = format!("image_{:06}.png", pose_i * 2 + k);
                            save_gray_png8(&covered, &subject_dir.join(&name))?;
                            labels.frames.insert(name, FrameLabel::labeled(&kps, Some(domain.into())));
                        }
                    }
                }
            }

            if split.is_labeled() {
                labels.write(&subject_dir.join("joints.json"))?;
            }
            subject_counter += 1;
        }
    }
    Ok(())
}
