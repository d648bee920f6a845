//! Supervised pose training over the augmented input space.
//!
//! The train set groups samples by (subject, frame); each epoch draws one
//! variant per group according to the augmentation mix weights, so the
//! model sees a fresh blend of source and augmented renderings every pass.
//! Validation PCKh runs after each epoch and the best checkpoint wins.

use std::collections::BTreeMap;

use ndarray::Array4;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::heatmap::{encode_heatmaps, rescale_keypoints};
use crate::nn::{Adam, Binding, ParamStore, Tape};
use crate::types::{DomainTag, Sample};

use super::nets::PoseNet;
use super::{lr_at_epoch, sup_loss_var};

/// Epoch-level draw weights over sample variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub source: f64,
    pub gen_thin: f64,
    pub gen_thick: f64,
    pub extreme: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        Self { source: 0.25, gen_thin: 0.25, gen_thick: 0.25, extreme: 0.25 }
    }
}

impl MixWeights {
    pub fn source_only() -> Self {
        Self { source: 1.0, gen_thin: 0.0, gen_thick: 0.0, extreme: 0.0 }
    }

    fn weight_for(&self, tag: DomainTag) -> f64 {
        match tag {
            DomainTag::SourceUncover => self.source,
            DomainTag::GenThin => self.gen_thin,
            DomainTag::GenThick => self.gen_thick,
            DomainTag::ExtremeAug => self.extreme,
            DomainTag::TargetThin | DomainTag::TargetThick => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.source, self.gen_thin, self.gen_thick, self.extreme];
        if vals.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("mix weights must be non-negative"));
        }
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mix weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Training schedule and sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrainConfig {
    pub lr: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mix: MixWeights,
    /// Gaussian spread of the encoded target heatmaps, in heatmap pixels.
    pub sigma: f64,
    /// PCKh threshold used for per-epoch validation.
    pub val_threshold: f64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            decay_epochs: vec![45, 60],
            decay_factor: 0.1,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            mix: MixWeights::default(),
            sigma: 2.0,
            val_threshold: 0.5,
        }
    }
}

impl PoseTrainConfig {
    /// Desk-scale schedule; decay points keep the full profile's
    /// proportions.
    pub fn toy() -> Self {
        Self {
            epochs: 150,
            batch_size: 4,
            decay_epochs: vec![105, 135],
            sigma: 1.5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("decay epochs must be strictly increasing"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::invalid("decay factor must be in (0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.sigma <= 0.0 {
            return Err(Error::invalid("sigma must be positive"));
        }
        self.mix.validate()
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_sup_loss: f64,
    pub val_pckh: f64,
}

/// Result of a training run; the network passed in ends at the best
/// validation checkpoint.
#[derive(Debug)]
pub struct PoseTrainOutcome {
    pub best_epoch: usize,
    pub best_val_pckh: f64,
    pub log: Vec<EpochStats>,
}

// One training variant, pre-resized to network geometry.
struct Prepared {
    image: Array4<f64>, // (1, 1, H, W)
    target: ndarray::Array3<f64>,
    tag: DomainTag,
}

fn prepare(sample: &Sample, net: &PoseNet, sigma: f64) -> Result<Prepared> {
    let (ih, iw) = net.cfg.input_dims;
    let resized = sample.image.resize_bilinear((ih, iw))?;
    let kps = sample
        .keypoints
        .as_ref()
        .ok_or_else(|| Error::invalid(format!(
            "unlabeled sample {}/{} ({}) in training set",
            sample.subject_id,
            sample.frame_id,
            sample.domain.as_str()
        )))?;
    let kps_input = rescale_keypoints(kps, sample.image.dims(), (ih, iw))?;
    let target = encode_heatmaps(&kps_input, net.cfg.heatmap_dims, net.cfg.stride(), sigma)?;
    let mut image = Array4::zeros((1, 1, ih, iw));
    image
        .index_axis_mut(ndarray::Axis(0), 0)
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(resized.pixels());
    Ok(Prepared {
        image,
        target: target.maps().clone(),
        tag: sample.domain,
    })
}

/// Trains a pose network; returns the log and leaves `net` at the best
/// validation checkpoint.
pub fn train_pose(
    net: &mut PoseNet,
    train_set: &[Sample],
    cfg: &PoseTrainConfig,
    val_set: &[Sample],
) -> Result<PoseTrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }

    // group variants by (subject, frame); all must be labeled
    let mut groups: BTreeMap<(String, String), Vec<Prepared>> = BTreeMap::new();
    for s in train_set {
        let p = prepare(s, net, cfg.sigma)?;
        groups
            .entry((s.subject_id.clone(), s.frame_id.clone()))
            .or_default()
            .push(p);
    }
    let groups: Vec<Vec<Prepared>> = groups.into_values().collect();

    let k = net.cfg.num_joints;
    let (hh, hw) = net.cfg.heatmap_dims;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr, net.store.num_params());

    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.lr = lr_at_epoch(cfg, epoch);

        // draw one variant per group for this epoch
        let mut picks: Vec<&Prepared> = groups
            .iter()
            .map(|variants| {
                let weights: Vec<f64> = variants.iter().map(|p| cfg.mix.weight_for(p.tag)).collect();
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    // no weighted variant present; fall back to the first
                    return &variants[0];
                }
                let mut draw = rng.gen_range(0.0..total);
                for (p, w) in variants.iter().zip(weights.iter()) {
                    if draw < *w {
                        return p;
                    }
                    draw -= w;
                }
                variants.last().unwrap()
            })
            .collect();
        picks.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in picks.chunks(cfg.batch_size) {
            let n = chunk.len();
            let (ih, iw) = net.cfg.input_dims;
            let mut xs = Array4::zeros((n, 1, ih, iw));
            let mut ts = Array4::zeros((n, k, hh, hw));
            for (i, p) in chunk.iter().enumerate() {
                xs.index_axis_mut(ndarray::Axis(0), i)
                    .assign(&p.image.index_axis(ndarray::Axis(0), 0));
                ts.index_axis_mut(ndarray::Axis(0), i).assign(&p.target);
            }

            let (grads, loss_val) = {
                let tape = Tape::new();
                let bind = Binding::new(&tape, &net.store);
                let x = tape.leaf(xs.into_dyn());
                let target = tape.leaf(ts.into_dyn());
                let stacks = net.forward(x, &bind, true);
                let loss = sup_loss_var(&stacks, target, n, k);
                let sink = tape.backward(loss);
                (bind.gradients(&sink), loss.scalar_value())
            };
            if !loss_val.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "non-finite supervised loss in epoch {epoch}"
                )));
            }
            opt.step(&mut net.store, &grads);
            loss_sum += loss_val;
            batches += 1;
        }

        let val_pckh = if val_set.is_empty() {
            0.0
        } else {
            eval::evaluate_model(net, val_set, cfg.val_threshold)?.aggregate
        };
        let stats = EpochStats {
            epoch,
            lr: opt.lr,
            mean_sup_loss: loss_sum / batches.max(1) as f64,
            val_pckh,
        };
        log.push(stats);

        let improved = match &best {
            Some((_, best_pckh, _)) => val_pckh > *best_pckh,
            None => true,
        };
        if improved {
            best = Some((epoch, val_pckh, net.store.deep_clone()));
        }
    }

    let (best_epoch, best_val_pckh, best_store) = best.expect("at least one epoch ran");
    net.store = best_store;
    Ok(PoseTrainOutcome { best_epoch, best_val_pckh, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Backbone, PoseNetConfig};
    use crate::types::{Joint, KeypointSet, ThermalImage, NUM_JOINTS};
    use ndarray::Array2;

    // bright blob at a known joint layout over dark noise
    fn blob_sample(seed: u64, domain: DomainTag, subject: &str, frame: &str) -> Sample {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (h, w) = (32, 32);
        let cx = rng.gen_range(8.0..24.0);
        let cy = rng.gen_range(8.0..24.0);
        let px = Array2::from_shape_fn((h, w), |(y, x)| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (0.05 + 0.9 * (-d2 / 18.0).exp() + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0)
        });
        let mut joints = vec![Joint::visible(cx, cy); NUM_JOINTS];
        // head/thorax offset so head_norm is well-defined
        joints[crate::types::JointId::HeadTop as usize] = Joint::visible(cx, (cy - 6.0).max(0.0));
        joints[crate::types::JointId::Thorax as usize] = Joint::visible(cx, cy);
        Sample {
            image: ThermalImage::new(px).unwrap(),
            keypoints: Some(KeypointSet::new(joints)),
            domain,
            subject_id: subject.into(),
            frame_id: frame.into(),
        }
    }

    fn tiny_net() -> PoseNet {
        let cfg = PoseNetConfig {
            backbone: Backbone::Hourglass,
            n_stacks: 1,
            channels: 8,
            encoder_depth: 1,
            input_dims: (32, 32),
            heatmap_dims: (16, 16),
            num_joints: NUM_JOINTS,
        };
        PoseNet::new(&cfg, 3).unwrap()
    }

    fn tiny_cfg(epochs: usize) -> PoseTrainConfig {
        PoseTrainConfig {
            epochs,
            batch_size: 4,
            decay_epochs: vec![],
            lr: 1e-3,
            sigma: 1.5,
            mix: MixWeights::source_only(),
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn unlabeled_sample_rejected() {
        let mut net = tiny_net();
        let mut s = blob_sample(0, DomainTag::SourceUncover, "s0", "f0");
        s.keypoints = None;
        let err = train_pose(&mut net, &[s], &tiny_cfg(1), &[]);
        assert!(err.is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let train: Vec<Sample> = (0..12)
            .map(|i| blob_sample(i, DomainTag::SourceUncover, &format!("s{i}"), "f0"))
            .collect();
        let val: Vec<Sample> = (100..104)
            .map(|i| blob_sample(i, DomainTag::SourceUncover, &format!("s{i}"), "f0"))
            .collect();

        let mut net1 = tiny_net();
        let out1 = train_pose(&mut net1, &train, &tiny_cfg(4), &val).unwrap();
        assert!(
            out1.log.last().unwrap().mean_sup_loss < out1.log[0].mean_sup_loss,
            "loss did not decrease: {:?}",
            out1.log.iter().map(|e| e.mean_sup_loss).collect::<Vec<_>>()
        );

        let mut net2 = tiny_net();
        let out2 = train_pose(&mut net2, &train, &tiny_cfg(4), &val).unwrap();
        assert_eq!(out1.best_epoch, out2.best_epoch);
        assert_eq!(net1.store.content_hash(), net2.store.content_hash());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = tiny_cfg(1);
        cfg.decay_epochs = vec![10, 10];
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_cfg(1);
        cfg.decay_factor = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_cfg(1);
        cfg.mix = MixWeights { source: 0.5, gen_thin: 0.2, gen_thick: 0.2, extreme: 0.2 };
        assert!(cfg.validate().is_err());
    }
}
