//! Heatmap encode/decode codec and keypoint coordinate transforms.
//!
//! Encoding draws a unit-peak Gaussian on the grid cell nearest to each
//! visible joint, truncated beyond a 3σ radius. Decoding takes the argmax
//! with a quarter-pixel shift toward the strongest neighbor and scales back
//! to image space, so `decode(encode(k))` stays within `0.5 * stride` px for
//! interior joints.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::types::{HeatmapStack, Joint, KeypointSet};

/// Renders per-joint target heatmaps for a keypoint set.
///
/// `out_dims` is the heatmap grid (h, w); `stride` the image-to-heatmap
/// scale; `sigma` the Gaussian spread in heatmap pixels. Joints whose
/// rounded center falls outside the grid come back as all-zero maps.
pub fn encode_heatmaps(
    kps: &KeypointSet,
    out_dims: (usize, usize),
    stride: f64,
    sigma: f64,
) -> Result<HeatmapStack> {
    let (h, w) = out_dims;
    if h == 0 || w == 0 {
        return Err(Error::invalid("heatmap dims must be positive"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if stride <= 0.0 {
        return Err(Error::invalid("stride must be positive"));
    }

    let k = kps.num_joints();
    let mut maps = Array3::zeros((k, h, w));
    let radius = 3.0 * sigma;
    let r_cells = radius.ceil() as isize;

    for (j, joint) in kps.joints().iter().enumerate() {
        if !joint.visible {
            continue;
        }
        // continuous heatmap-space center; the nearest cell becomes the peak
        let cx = joint.x / stride;
        let cy = joint.y / stride;
        let nx = cx.round() as isize;
        let ny = cy.round() as isize;
        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
            continue;
        }
        let y_lo = (ny - r_cells).max(0);
        let y_hi = (ny + r_cells).min(h as isize - 1);
        let x_lo = (nx - r_cells).max(0);
        let x_hi = (nx + r_cells).min(w as isize - 1);
        let mut peak = 0.0f64;
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let dx = px as f64 - cx;
                let dy = py as f64 - cy;
                let d2 = dx * dx + dy * dy;
                if d2.sqrt() > radius {
                    continue;
                }
                let v = (-d2 / (2.0 * sigma * sigma)).exp();
                maps[[j, py as usize, px as usize]] = v;
                peak = peak.max(v);
            }
        }
        // normalize so the peak cell is exactly 1.0
        if peak > 0.0 {
            for py in y_lo..=y_hi {
                for px in x_lo..=x_hi {
                    maps[[j, py as usize, px as usize]] /= peak;
                }
            }
        }
    }

    HeatmapStack::new(maps, stride)
}

/// Options for heatmap decoding.
#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    /// Quarter-pixel shift toward the stronger neighbor (sub-pixel argmax).
    pub quarter_offset: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { quarter_offset: true }
    }
}

/// Recovers image-space keypoints from a heatmap stack.
///
/// A joint whose map max is ≤ 0 is marked invisible.
pub fn decode_heatmaps(hm: &HeatmapStack, stride: f64) -> KeypointSet {
    decode_heatmaps_opt(hm, stride, DecodeOptions::default())
}

pub fn decode_heatmaps_opt(hm: &HeatmapStack, stride: f64, opts: DecodeOptions) -> KeypointSet {
    let (k, h, w) = hm.maps().dim();
    let mut joints = Vec::with_capacity(k);
    for j in 0..k {
        let map = hm.maps().index_axis(ndarray::Axis(0), j);
        let mut best = f64::NEG_INFINITY;
        let (mut bx, mut by) = (0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let v = map[[y, x]];
                if v > best {
                    best = v;
                    bx = x;
                    by = y;
                }
            }
        }
        if best <= 0.0 {
            joints.push(Joint::hidden());
            continue;
        }
        let mut fx = bx as f64;
        let mut fy = by as f64;
        if opts.quarter_offset {
            if bx > 0 && bx + 1 < w {
                fx += 0.25 * tie_sign(map[[by, bx + 1]] - map[[by, bx - 1]]);
            }
            if by > 0 && by + 1 < h {
                fy += 0.25 * tie_sign(map[[by + 1, bx]] - map[[by - 1, bx]]);
            }
        }
        joints.push(Joint::visible(fx * stride, fy * stride));
    }
    KeypointSet::new(joints)
}

// signum that keeps exact ties (and zeros) centered
fn tie_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Linearly rescales keypoints from one frame geometry to another.
///
/// Dims are (H, W); x scales by W'/W and y by H'/H. Visibility is preserved.
pub fn rescale_keypoints(
    kps: &KeypointSet,
    from_dims: (usize, usize),
    to_dims: (usize, usize),
) -> Result<KeypointSet> {
    let (fh, fw) = from_dims;
    let (th, tw) = to_dims;
    if fh == 0 || fw == 0 {
        return Err(Error::invalid("source dims must be positive"));
    }
    if th == 0 || tw == 0 {
        return Err(Error::invalid("target dims must be positive"));
    }
    let sx = tw as f64 / fw as f64;
    let sy = th as f64 / fh as f64;
    let joints = kps
        .joints()
        .iter()
        .map(|j| Joint {
            x: j.x * sx,
            y: j.y * sy,
            visible: j.visible,
        })
        .collect();
    Ok(KeypointSet::new(joints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn single_visible(x: f64, y: f64) -> KeypointSet {
        KeypointSet::new(vec![Joint::visible(x, y)])
    }

    #[test]
    fn peak_lands_at_scaled_coordinate() {
        let kps = single_visible(128.0, 80.0);
        let hm = encode_heatmaps(&kps, (64, 64), 4.0, 2.0).unwrap();
        let map = hm.maps().index_axis(ndarray::Axis(0), 0);
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for y in 0..64 {
            for x in 0..64 {
                if map[[y, x]] > best.2 {
                    best = (x, y, map[[y, x]]);
                }
            }
        }
        assert_eq!((best.0, best.1), (32, 20));
        assert_eq!(best.2, 1.0);
    }

    #[test]
    fn invisible_joint_encodes_all_zero() {
        let kps = KeypointSet::new(vec![Joint::hidden()]);
        let hm = encode_heatmaps(&kps, (32, 32), 4.0, 2.0).unwrap();
        assert!(hm.maps().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_value_two_px_from_peak() {
        // sigma = 2, grid point 2 px from peak: exp(-4 / 8) = exp(-0.5).
        let kps = single_visible(64.0, 64.0); // stride 4 -> grid (16, 16)
        let hm = encode_heatmaps(&kps, (32, 32), 4.0, 2.0).unwrap();
        let v = hm.maps()[[0, 16, 18]];
        let expected = (-0.5f64).exp();
        assert!((v - expected).abs() < 1e-12, "got {v}, want {expected}");
        assert!((expected - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn truncated_beyond_three_sigma() {
        let kps = single_visible(64.0, 64.0);
        let hm = encode_heatmaps(&kps, (32, 32), 4.0, 2.0).unwrap();
        // 7 cells away > 3 sigma = 6 -> zero.
        assert_eq!(hm.maps()[[0, 16, 23]], 0.0);
        // exactly 6 cells away = 3 sigma -> kept.
        assert!(hm.maps()[[0, 16, 22]] > 0.0);
    }

    #[test]
    fn encode_rejects_bad_args() {
        let kps = single_visible(1.0, 1.0);
        assert!(encode_heatmaps(&kps, (0, 32), 4.0, 2.0).is_err());
        assert!(encode_heatmaps(&kps, (32, 32), 4.0, 0.0).is_err());
        assert!(encode_heatmaps(&kps, (32, 32), -1.0, 2.0).is_err());
    }

    #[test]
    fn delta_peak_decodes_near_origin_coordinate() {
        let mut maps = Array3::zeros((1, 64, 64));
        maps[[0, 20, 32]] = 1.0;
        let hm = HeatmapStack::new(maps, 4.0).unwrap();
        let kps = decode_heatmaps(&hm, 4.0);
        let j = kps.joints()[0];
        assert!(j.visible);
        assert!((j.x - 128.0).abs() <= 1.0);
        assert!((j.y - 80.0).abs() <= 1.0);
    }

    #[test]
    fn all_zero_map_decodes_invisible() {
        let hm = HeatmapStack::new(Array3::zeros((1, 16, 16)), 4.0).unwrap();
        let kps = decode_heatmaps(&hm, 4.0);
        assert!(!kps.joints()[0].visible);
    }

    #[test]
    fn round_trip_error_within_half_stride() {
        // Round-trip oracle over random interior draws.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (h, w) = (64usize, 64usize);
        let stride = 4.0;
        let sigma = 2.0;
        let margin = 3.0 * sigma * stride;
        let mut max_err = 0.0f64;
        for _ in 0..100 {
            let x = rng.gen_range(margin..(w as f64 * stride - margin));
            let y = rng.gen_range(margin..(h as f64 * stride - margin));
            let kps = single_visible(x, y);
            let hm = encode_heatmaps(&kps, (h, w), stride, sigma).unwrap();
            let back = decode_heatmaps(&hm, stride);
            let j = back.joints()[0];
            assert!(j.visible);
            let err = ((j.x - x).powi(2) + (j.y - y).powi(2)).sqrt();
            max_err = max_err.max(err);
        }
        assert!(
            max_err <= 0.5 * stride,
            "max round-trip error {max_err} exceeds {}",
            0.5 * stride
        );
    }

    #[test]
    fn permuting_joints_permutes_maps() {
        let kps = KeypointSet::new(vec![
            Joint::visible(40.0, 40.0),
            Joint::visible(100.0, 60.0),
            Joint::hidden(),
        ]);
        let perm = KeypointSet::new(vec![
            Joint::hidden(),
            Joint::visible(40.0, 40.0),
            Joint::visible(100.0, 60.0),
        ]);
        let a = encode_heatmaps(&kps, (32, 32), 4.0, 2.0).unwrap();
        let b = encode_heatmaps(&perm, (32, 32), 4.0, 2.0).unwrap();
        // inverse permutation of the stack recovers the original
        assert_eq!(a.maps().index_axis(ndarray::Axis(0), 0), b.maps().index_axis(ndarray::Axis(0), 1));
        assert_eq!(a.maps().index_axis(ndarray::Axis(0), 1), b.maps().index_axis(ndarray::Axis(0), 2));
        assert_eq!(a.maps().index_axis(ndarray::Axis(0), 2), b.maps().index_axis(ndarray::Axis(0), 0));
    }

    #[test]
    fn rescale_identity_and_linearity() {
        let kps = KeypointSet::new(vec![Joint::visible(30.0, 50.0), Joint::hidden()]);
        let same = rescale_keypoints(&kps, (160, 120), (160, 120)).unwrap();
        assert_eq!(same, kps);

        let doubled = rescale_keypoints(&kps, (160, 120), (320, 240)).unwrap();
        assert_eq!(doubled.joints()[0].x, 60.0);
        assert_eq!(doubled.joints()[0].y, 100.0);
        assert!(!doubled.joints()[1].visible);
    }

    #[test]
    fn rescale_round_trip_and_composition() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let kps = KeypointSet::new(vec![Joint::visible(
                rng.gen_range(0.0..120.0),
                rng.gen_range(0.0..160.0),
            )]);
            let fwd = rescale_keypoints(&kps, (160, 120), (77, 33)).unwrap();
            let back = rescale_keypoints(&fwd, (77, 33), (160, 120)).unwrap();
            assert!((back.joints()[0].x - kps.joints()[0].x).abs() < 1e-9);
            assert!((back.joints()[0].y - kps.joints()[0].y).abs() < 1e-9);

            // rescale(A->B) then (B->C) equals rescale(A->C)
            let ab = rescale_keypoints(&kps, (160, 120), (90, 70)).unwrap();
            let bc = rescale_keypoints(&ab, (90, 70), (41, 220)).unwrap();
            let ac = rescale_keypoints(&kps, (160, 120), (41, 220)).unwrap();
            assert!((bc.joints()[0].x - ac.joints()[0].x).abs() < 1e-9);
            assert!((bc.joints()[0].y - ac.joints()[0].y).abs() < 1e-9);
        }
    }

    #[test]
    fn rescale_rejects_zero_dims() {
        let kps = single_visible(1.0, 1.0);
        assert!(rescale_keypoints(&kps, (0, 10), (10, 10)).is_err());
        assert!(rescale_keypoints(&kps, (10, 10), (10, 0)).is_err());
    }
}
