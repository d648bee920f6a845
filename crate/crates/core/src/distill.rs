//! Self-supervised teacher-student distillation on unlabeled covered
//! images.
//!
//! The student starts as an exact clone of the teacher. The teacher is
//! frozen and runs in inference mode (fixed running statistics); its
//! heatmaps on target images are detached and serve as the student's
//! regression targets. The student trains in batch-statistics mode, which
//! is where the two clones part ways: its normalization adapts to the
//! covered distribution while the soft labels anchor it to the teacher's
//! geometry.

use ndarray::Array4;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Binding, Tape};
use crate::pose::{sup_loss_var, PoseNet};
use crate::types::{DomainTag, HeatmapStack, Sample};

/// Distillation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Constant learning rate (no decay during distillation).
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Draw weights over {target_thin, target_thick}; must sum to 1.
    pub target_mix: (f64, f64),
    /// Optional supervised replay (off by default: the stage is purely
    /// self-supervised). When set, labeled source samples mix back in.
    pub sup_replay: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            target_mix: (0.5, 0.5),
            sup_replay: false,
        }
    }
}

impl DistillConfig {
    pub fn toy() -> Self {
        Self { epochs: 3, batch_size: 8, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        let (a, b) = self.target_mix;
        if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("target mix weights must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Mean-squared distillation loss between student and teacher heatmaps;
/// identical reduction to the supervised loss.
pub fn kd_loss(student_pred: &HeatmapStack, teacher_pred: &HeatmapStack) -> Result<f64> {
    if student_pred.maps().dim() != teacher_pred.maps().dim() {
        return Err(Error::invalid(format!(
            "kd_loss: student dims {:?} != teacher dims {:?}",
            student_pred.maps().dim(),
            teacher_pred.maps().dim()
        )));
    }
    let k = teacher_pred.num_joints() as f64;
    let sq: f64 = student_pred
        .maps()
        .iter()
        .zip(teacher_pred.maps().iter())
        .map(|(s, t)| (s - t) * (s - t))
        .sum();
    Ok(sq / k)
}

/// Per-epoch distillation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillEpochStats {
    pub epoch: usize,
    pub mean_kd_loss: f64,
}

pub struct DistillOutcome {
    pub student: PoseNet,
    pub log: Vec<DistillEpochStats>,
    /// Teacher parameter hash before and after (must be equal).
    pub teacher_hash: (u64, u64),
}

/// Clones the teacher into a student and trains the student on teacher
/// soft labels over unlabeled covered images. Returns the final-epoch
/// student.
pub fn distill(teacher: &PoseNet, unlabeled_target: &[Sample], cfg: &DistillConfig) -> Result<DistillOutcome> {
    cfg.validate()?;
    if unlabeled_target.is_empty() {
        return Err(Error::invalid("distillation needs target images"));
    }
    for s in unlabeled_target {
        if !matches!(s.domain, DomainTag::TargetThin | DomainTag::TargetThick) {
            return Err(Error::invalid(format!(
                "sample {}/{} has domain {}, distillation takes unlabeled target images only",
                s.subject_id,
                s.frame_id,
                s.domain.as_str()
            )));
        }
        if s.keypoints.is_some() {
            return Err(Error::invalid(format!(
                "sample {}/{} carries labels; distillation is self-supervised",
                s.subject_id, s.frame_id
            )));
        }
    }

    let hash_before = teacher.store.content_hash();
    let mut student = teacher.deep_clone();
    let mut opt = Adam::new(cfg.lr, student.store.num_params());
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let (ih, iw) = teacher.cfg.input_dims;
    let mut thin_idx = Vec::new();
    let mut thick_idx = Vec::new();
    let mut images: Vec<Array4<f64>> = Vec::with_capacity(unlabeled_target.len());
    for (i, s) in unlabeled_target.iter().enumerate() {
        let resized = s.image.resize_bilinear((ih, iw))?;
        let mut arr = Array4::zeros((1, 1, ih, iw));
        arr.index_axis_mut(ndarray::Axis(0), 0)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(resized.pixels());
        images.push(arr);
        match s.domain {
            DomainTag::TargetThin => thin_idx.push(i),
            DomainTag::TargetThick => thick_idx.push(i),
            _ => unreachable!(),
        }
    }

    // epoch order honors the thin/thick mix by resampling counts
    let per_epoch = unlabeled_target.len();
    let n_thin = ((cfg.target_mix.0 * per_epoch as f64).round() as usize).min(per_epoch);
    let n_thick = per_epoch - n_thin;

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = Vec::with_capacity(per_epoch);
        for (pool, want) in [(&thin_idx, n_thin), (&thick_idx, n_thick)] {
            if pool.is_empty() {
                continue;
            }
            // cycle through the pool deterministically when it is smaller
            for j in 0..want {
                order.push(pool[j % pool.len()]);
            }
        }
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            let mut xs = Array4::zeros((n, 1, ih, iw));
            for (row, &i) in chunk.iter().enumerate() {
                xs.index_axis_mut(ndarray::Axis(0), row)
                    .assign(&images[i].index_axis(ndarray::Axis(0), 0));
            }

            let (grads, loss_val) = {
                let tape = Tape::new();
                let bind_student = Binding::new(&tape, &student.store);
                let bind_teacher = Binding::new(&tape, &teacher.store);
                let x = tape.leaf(xs.into_dyn());
                // teacher: inference mode, gradients cut
                let soft = teacher
                    .forward(x, &bind_teacher, false)
                    .pop()
                    .expect("teacher emits heatmaps")
                    .detach();
                // student: training mode (batch statistics)
                let stacks = student.forward(x, &bind_student, true);
                let loss = sup_loss_var(&stacks, soft, n, teacher.cfg.num_joints);
                let sink = tape.backward(loss);
                (bind_student.gradients(&sink), loss.scalar_value())
            };
            if !loss_val.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "non-finite distillation loss in epoch {epoch}"
                )));
            }
            opt.step(&mut student.store, &grads);
            loss_sum += loss_val;
            batches += 1;
        }
        log.push(DistillEpochStats {
            epoch,
            mean_kd_loss: loss_sum / batches.max(1) as f64,
        });
    }

    let hash_after = teacher.store.content_hash();
    Ok(DistillOutcome {
        student,
        log,
        teacher_hash: (hash_before, hash_after),
    })
}
