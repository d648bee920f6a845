//! Supervised heatmap pose estimation: the two baseline networks, the
//! mean-squared heatmap loss with intermediate supervision, the step
//! learning-rate schedule, and the training loop over the augmented
//! input space.

pub mod nets;
pub mod train;

pub use nets::{Backbone, PoseNet, PoseNetConfig};
pub use train::{train_pose, EpochStats, MixWeights, PoseTrainConfig, PoseTrainOutcome};

use crate::error::{Error, Result};
use crate::nn::Var;
use crate::types::HeatmapStack;

/// Mean-squared heatmap loss for one sample: (1/K)·Σ_j ‖pred_j − target_j‖²
/// with the squared norm summed over pixels; for stacked predictions the
/// per-stack losses are averaged (intermediate supervision).
pub fn sup_loss(preds: &[HeatmapStack], target: &HeatmapStack) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("sup_loss: no prediction stacks"));
    }
    let k = target.num_joints() as f64;
    let mut acc = 0.0;
    for pred in preds {
        if pred.maps().dim() != target.maps().dim() {
            return Err(Error::invalid(format!(
                "sup_loss: prediction dims {:?} != target dims {:?}",
                pred.maps().dim(),
                target.maps().dim()
            )));
        }
        let sq: f64 = pred
            .maps()
            .iter()
            .zip(target.maps().iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        acc += sq / k;
    }
    Ok(acc / preds.len() as f64)
}

/// Differentiable batched form over (N, K, h, w) stacks: per stack
/// sum((pred − target)²) / (N·K), averaged over stacks.
pub fn sup_loss_var<'t>(preds: &[Var<'t>], target: Var<'t>, batch: usize, k: usize) -> Var<'t> {
    assert!(!preds.is_empty());
    let scale = 1.0 / (batch as f64 * k as f64);
    let mut total: Option<Var<'t>> = None;
    for &p in preds {
        let term = p.sub(target).square().sum_all().scale(scale);
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    total.unwrap().scale(1.0 / preds.len() as f64)
}

/// Piecewise-constant schedule: lr · factor^(#{decay epochs ≤ epoch}).
pub fn lr_at_epoch(cfg: &PoseTrainConfig, epoch: usize) -> f64 {
    let hits = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr * cfg.decay_factor.powi(hits as i32)
}
