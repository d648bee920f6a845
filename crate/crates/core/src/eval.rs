//! PCKh metric and the model evaluation harness.
//!
//! A predicted joint counts as correct when it lands within
//! `threshold × head_norm(gt)` of the ground truth, where the
//! normalization length is the head-top to thorax distance. Samples whose
//! normalization is undefined (either joint invisible, or zero length) are
//! excluded from the score and counted as warnings.

use std::collections::BTreeMap;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{decode_heatmaps, rescale_keypoints};
use crate::pose::PoseNet;
use crate::types::{DomainTag, HeatmapStack, JointId, KeypointSet, Sample, JOINT_NAMES};

/// Aggregated PCKh results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PCKhReport {
    /// Per-joint accuracy in [0, 100] (joints never counted report 0).
    pub per_joint: Vec<f64>,
    /// Overall percentage over all counted joints.
    pub aggregate: f64,
    pub threshold: f64,
    /// Samples that entered the score.
    pub n_samples: usize,
    /// Samples excluded for undefined normalization.
    pub excluded: usize,
    /// Ground-truth joints counted (visible, normalizable).
    pub counted_joints: usize,
    /// Aggregate per domain tag, when tags were supplied.
    pub per_domain: BTreeMap<String, f64>,
}

/// PCKh normalization length: head-top to thorax distance.
///
/// `None` when either joint is invisible; a `Some(0.0)` (degenerate pose)
/// is excluded downstream by [`pckh`].
pub fn head_norm(kps: &KeypointSet) -> Option<f64> {
    let head = kps.joint(JointId::HeadTop);
    let thorax = kps.joint(JointId::Thorax);
    if !head.visible || !thorax.visible {
        return None;
    }
    Some(head.dist(thorax))
}

/// PCKh over aligned prediction/ground-truth lists.
pub fn pckh(preds: &[KeypointSet], gts: &[KeypointSet], threshold: f64) -> Result<PCKhReport> {
    pckh_tagged(preds, gts, None, threshold)
}

/// PCKh with an optional per-sample domain tag for the breakdown.
pub fn pckh_tagged(
    preds: &[KeypointSet],
    gts: &[KeypointSet],
    domains: Option<&[DomainTag]>,
    threshold: f64,
) -> Result<PCKhReport> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "prediction/ground-truth length mismatch: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    if threshold <= 0.0 {
        return Err(Error::invalid("threshold must be positive"));
    }
    if let Some(d) = domains {
        if d.len() != gts.len() {
            return Err(Error::invalid("domain tag list length mismatch"));
        }
    }

    let k = gts.first().map(|g| g.num_joints()).unwrap_or(0);
    let mut joint_correct = vec![0usize; k];
    let mut joint_counted = vec![0usize; k];
    let mut excluded = 0usize;
    let mut n_samples = 0usize;
    let mut domain_correct: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    for (i, (pred, gt)) in preds.iter().zip(gts.iter()).enumerate() {
        if pred.num_joints() != k || gt.num_joints() != k {
            return Err(Error::invalid("inconsistent joint counts across samples"));
        }
        let norm = match head_norm(gt) {
            Some(n) if n > 0.0 => n,
            _ => {
                excluded += 1;
                continue;
            }
        };
        n_samples += 1;
        let radius = threshold * norm;
        let bucket = domains.map(|d| d[i].as_str().to_string());
        for j in 0..k {
            let gt_j = gt.joints()[j];
            if !gt_j.visible {
                continue;
            }
            joint_counted[j] += 1;
            let pred_j = pred.joints()[j];
            // boundary convention: distance equal to the radius is correct
            let correct = pred_j.visible && pred_j.dist(&gt_j) <= radius;
            if correct {
                joint_correct[j] += 1;
            }
            if let Some(name) = &bucket {
                let e = domain_correct.entry(name.clone()).or_insert((0, 0));
                e.1 += 1;
                if correct {
                    e.0 += 1;
                }
            }
        }
    }

    let per_joint: Vec<f64> = joint_correct
        .iter()
        .zip(joint_counted.iter())
        .map(|(&c, &n)| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
        .collect();
    let total_correct: usize = joint_correct.iter().sum();
    let total_counted: usize = joint_counted.iter().sum();
    let aggregate = if total_counted == 0 {
        0.0
    } else {
        100.0 * total_correct as f64 / total_counted as f64
    };
    let per_domain = domain_correct
        .into_iter()
        .map(|(k, (c, n))| (k, if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 }))
        .collect();

    Ok(PCKhReport {
        per_joint,
        aggregate,
        threshold,
        n_samples,
        excluded,
        counted_joints: total_counted,
        per_domain,
    })
}

/// Runs a pose network over a labeled test set and scores it.
///
/// Images are resampled to the network input dims; decoded keypoints are
/// rescaled back to each frame's native geometry before scoring.
pub fn evaluate_model(net: &PoseNet, test_set: &[Sample], threshold: f64) -> Result<PCKhReport> {
    evaluate_model_batched(net, test_set, threshold, 16)
}

pub fn evaluate_model_batched(
    net: &PoseNet,
    test_set: &[Sample],
    threshold: f64,
    batch_size: usize,
) -> Result<PCKhReport> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    for s in test_set {
        if s.keypoints.is_none() {
            return Err(Error::invalid(format!(
                "test sample {}/{} is unlabeled",
                s.subject_id, s.frame_id
            )));
        }
    }

    let (ih, iw) = net.cfg.input_dims;
    let stride = net.cfg.stride();
    let mut preds = Vec::with_capacity(test_set.len());
    let mut gts = Vec::with_capacity(test_set.len());
    let mut tags = Vec::with_capacity(test_set.len());

    for chunk in test_set.chunks(batch_size) {
        let mut batch = Array4::zeros((chunk.len(), 1, ih, iw));
        for (i, s) in chunk.iter().enumerate() {
            let resized = s.image.resize_bilinear((ih, iw))?;
            batch
                .index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), 0)
                .assign(resized.pixels());
        }
        let heatmaps = net.infer(&batch);
        for (i, s) in chunk.iter().enumerate() {
            let maps = heatmaps.index_axis(ndarray::Axis(0), i).to_owned();
            let stack = HeatmapStack::new(maps, stride)?;
            let in_input_space = decode_heatmaps(&stack, stride);
            let native = rescale_keypoints(&in_input_space, (ih, iw), s.image.dims())?;
            preds.push(native);
            gts.push(s.keypoints.clone().unwrap());
            tags.push(s.domain);
        }
    }

    pckh_tagged(&preds, &gts, Some(&tags), threshold)
}

/// Plain-text ablation table over labeled reports (method rows).
pub fn render_table(rows: &[(String, &PCKhReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<44} {:>10} {:>10} {:>10}\n",
        "Method", "PCKh@0.5", "thin", "thick"
    ));
    out.push_str(&"-".repeat(78));
    out.push('\n');
    for (label, report) in rows {
        let thin = report
            .per_domain
            .get(DomainTag::TargetThin.as_str())
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into());
        let thick = report
            .per_domain
            .get(DomainTag::TargetThick.as_str())
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<44} {:>10.2} {:>10} {:>10}\n",
            label, report.aggregate, thin, thick
        ));
    }
    out
}

/// Per-joint accuracy lines for report files.
pub fn render_per_joint(report: &PCKhReport) -> String {
    let mut out = String::new();
    for (name, acc) in JOINT_NAMES.iter().zip(report.per_joint.iter()) {
        out.push_str(&format!("{name:<12} {acc:6.2}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Joint, NUM_JOINTS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn pose_with(head: Joint, thorax: Joint) -> KeypointSet {
        let mut joints = vec![Joint::visible(5.0, 5.0); NUM_JOINTS];
        joints[JointId::Thorax as usize] = thorax;
        joints[JointId::HeadTop as usize] = head;
        KeypointSet::new(joints)
    }

    #[test]
    fn head_norm_cases() {
        let k = pose_with(Joint::visible(10.0, 10.0), Joint::visible(10.0, 20.0));
        assert_eq!(head_norm(&k), Some(10.0));

        // 3-4-5 triangle
        let k = pose_with(Joint::visible(3.0, 0.0), Joint::visible(0.0, 4.0));
        assert_eq!(head_norm(&k), Some(5.0));

        let same = pose_with(Joint::visible(7.0, 7.0), Joint::visible(7.0, 7.0));
        assert_eq!(head_norm(&same), Some(0.0));

        let hidden = pose_with(Joint::hidden(), Joint::visible(0.0, 4.0));
        assert_eq!(head_norm(&hidden), None);
    }

    #[test]
    fn exact_predictions_score_hundred() {
        let gts: Vec<KeypointSet> = (0..5)
            .map(|i| {
                pose_with(
                    Joint::visible(10.0 + i as f64, 10.0),
                    Joint::visible(10.0 + i as f64, 30.0),
                )
            })
            .collect();
        let report = pckh(&gts, &gts, 0.5).unwrap();
        assert_eq!(report.aggregate, 100.0);
        assert_eq!(report.n_samples, 5);
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn hand_computed_indicator_counts() {
        // 3 visible joints; head_norm 10; threshold 0.5 -> radius 5;
        // distances {3, 7, 4} -> 2/3 correct = 66.67
        let mut gt_joints = vec![Joint::hidden(); NUM_JOINTS];
        gt_joints[JointId::HeadTop as usize] = Joint::visible(0.0, 0.0);
        gt_joints[JointId::Thorax as usize] = Joint::visible(0.0, 10.0);
        gt_joints[JointId::RightWrist as usize] = Joint::visible(50.0, 50.0);
        let gt = KeypointSet::new(gt_joints.clone());

        let mut pred_joints = gt_joints.clone();
        pred_joints[JointId::HeadTop as usize] = Joint::visible(0.0, 3.0); // dist 3: correct
        pred_joints[JointId::Thorax as usize] = Joint::visible(7.0, 10.0); // dist 7: wrong
        pred_joints[JointId::RightWrist as usize] = Joint::visible(50.0, 54.0); // dist 4: correct
        let pred = KeypointSet::new(pred_joints);

        let report = pckh(&[pred], &[gt], 0.5).unwrap();
        assert!((report.aggregate - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(report.counted_joints, 3);
    }

    #[test]
    fn boundary_distance_counts_correct() {
        let mut gt = pose_with(Joint::visible(0.0, 0.0), Joint::visible(0.0, 10.0));
        gt.joints_mut()[JointId::RightAnkle as usize] = Joint::visible(5.0, 5.0);
        let mut pred = gt.clone();
        // exactly on the radius: 0.5 * 10 = 5
        pred.joints_mut()[JointId::RightAnkle as usize] = Joint::visible(10.0, 5.0);
        let report = pckh(&[pred], &[gt], 0.5).unwrap();
        assert_eq!(report.per_joint[JointId::RightAnkle as usize], 100.0);
    }

    #[test]
    fn degenerate_and_invisible_norms_are_excluded() {
        let good = pose_with(Joint::visible(0.0, 0.0), Joint::visible(0.0, 10.0));
        let degenerate = pose_with(Joint::visible(5.0, 5.0), Joint::visible(5.0, 5.0));
        let invisible = pose_with(Joint::hidden(), Joint::visible(0.0, 10.0));
        let preds = vec![good.clone(), good.clone(), good.clone()];
        let gts = vec![good, degenerate, invisible];
        let report = pckh(&preds, &gts, 0.5).unwrap();
        assert_eq!(report.n_samples, 1);
        assert_eq!(report.excluded, 2);
    }

    #[test]
    fn invisible_prediction_counts_incorrect() {
        let gt = pose_with(Joint::visible(0.0, 0.0), Joint::visible(0.0, 10.0));
        let mut pred = gt.clone();
        for j in pred.joints_mut() {
            *j = Joint::hidden();
        }
        let report = pckh(&[pred], &[gt], 0.5).unwrap();
        assert_eq!(report.aggregate, 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = pose_with(Joint::visible(0.0, 0.0), Joint::visible(0.0, 10.0));
        assert!(pckh(&[a.clone()], &[a.clone(), a], 0.5).is_err());
    }

    fn random_instance(rng: &mut ChaCha12Rng, n: usize) -> (Vec<KeypointSet>, Vec<KeypointSet>) {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n {
            let mut gt = Vec::new();
            let mut pred = Vec::new();
            for _ in 0..NUM_JOINTS {
                let visible = rng.gen_bool(0.85);
                let j = if visible {
                    Joint::visible(rng.gen_range(0.0..120.0), rng.gen_range(0.0..160.0))
                } else {
                    Joint::hidden()
                };
                gt.push(j);
                pred.push(Joint::visible(
                    rng.gen_range(0.0..120.0),
                    rng.gen_range(0.0..160.0),
                ));
            }
            gts.push(KeypointSet::new(gt));
            preds.push(KeypointSet::new(pred));
        }
        (preds, gts)
    }

    #[test]
    fn monotone_in_threshold() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let (preds, gts) = random_instance(&mut rng, 30);
        let mut prev = -1.0;
        for t in [0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
            let agg = pckh(&preds, &gts, t).unwrap().aggregate;
            assert!(agg >= prev, "threshold {t}: {agg} < {prev}");
            prev = agg;
        }
    }

    #[test]
    fn scale_and_permutation_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (preds, gts) = random_instance(&mut rng, 20);
        let base = pckh(&preds, &gts, 0.5).unwrap();

        let scale = |ks: &[KeypointSet], c: f64| -> Vec<KeypointSet> {
            ks.iter()
                .map(|k| {
                    KeypointSet::new(
                        k.joints()
                            .iter()
                            .map(|j| Joint { x: j.x * c, y: j.y * c, visible: j.visible })
                            .collect(),
                    )
                })
                .collect()
        };
        let scaled = pckh(&scale(&preds, 3.7), &scale(&gts, 3.7), 0.5).unwrap();
        assert_eq!(base.aggregate, scaled.aggregate);
        assert_eq!(base.per_joint, scaled.per_joint);

        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.reverse();
        let p2: Vec<KeypointSet> = order.iter().map(|&i| preds[i].clone()).collect();
        let g2: Vec<KeypointSet> = order.iter().map(|&i| gts[i].clone()).collect();
        let permuted = pckh(&p2, &g2, 0.5).unwrap();
        assert!((base.aggregate - permuted.aggregate).abs() < 1e-12);
    }
}
