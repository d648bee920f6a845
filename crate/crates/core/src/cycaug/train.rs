//! Unpaired translation training: two generators, two patch
//! discriminators, a replay pool of past fakes for the discriminator
//! updates, and the weighted loss of `losses`. Strictly sequential, so a
//! fixed seed reproduces the loss trajectory bit for bit.

use ndarray::{Array4, Axis};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Binding, Tape};
use crate::types::ThermalImage;

use super::losses::{
    batch_from_images, cycle_loss_var, gan_disc_loss_var, gan_gen_loss_var, identity_loss_var,
    total_loss_var, AdversarialMode,
};
use super::nets::{CoverKind, CycAugArch, Direction, DiscriminatorNet, GeneratorNet};

/// Training configuration for one generator pair (one cover type).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycAugTrainConfig {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub adversarial_mode: AdversarialMode,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub arch: CycAugArch,
    /// Replay pool capacity for discriminator updates.
    pub pool_capacity: usize,
}

impl Default for CycAugTrainConfig {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            adversarial_mode: AdversarialMode::LeastSquares,
            iterations: 2000,
            batch_size: 4,
            lr: 2e-4,
            seed: 0,
            arch: CycAugArch::default(),
            pool_capacity: 50,
        }
    }
}

impl CycAugTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cyc < 0.0 || self.lambda_id < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::invalid("iterations and batch size must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Replay pool of previously generated fakes (capacity 50 by default).
struct ImagePool {
    capacity: usize,
    images: Vec<Array4<f64>>,
}

impl ImagePool {
    fn new(capacity: usize) -> Self {
        Self { capacity, images: Vec::new() }
    }

    /// Returns a batch for the discriminator: each incoming fake is either
    /// passed through or swapped with a stored one (p = 0.5 once full).
    fn query(&mut self, batch: &Array4<f64>, rng: &mut ChaCha12Rng) -> Array4<f64> {
        if self.capacity == 0 {
            return batch.clone();
        }
        let mut out = batch.clone();
        for i in 0..batch.dim().0 {
            let img = batch.index_axis(Axis(0), i).to_owned().insert_axis(Axis(0));
            if self.images.len() < self.capacity {
                self.images.push(img);
            } else if rng.gen_bool(0.5) {
                let j = rng.gen_range(0..self.images.len());
                let old = std::mem::replace(&mut self.images[j], img);
                out.index_axis_mut(Axis(0), i).assign(&old.index_axis(Axis(0), 0));
            }
        }
        out
    }
}

/// Deterministic shuffled cycling over dataset indices.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next_batch(&mut self, k: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Per-iteration loss record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycAugLossPoint {
    pub iteration: usize,
    pub total: f64,
    pub gan_g: f64,
    pub gan_f: f64,
    pub cycle: f64,
    pub identity: f64,
    pub disc_a: f64,
    pub disc_b: f64,
}

/// Outcome of one training run (one cover type).
pub struct CycAugOutcome {
    /// Uncover -> cover translator (the data augmenter).
    pub g: GeneratorNet,
    /// Cover -> uncover translator.
    pub f: GeneratorNet,
    pub history: Vec<CycAugLossPoint>,
}

/// Trains a G/F pair against one covered set. `on_epoch` fires after every
/// pass over the source set and once more at the end (checkpointing hook).
pub fn train_cyclegan_with(
    source: &[ThermalImage],
    target: &[ThermalImage],
    target_kind: CoverKind,
    cfg: &CycAugTrainConfig,
    mut on_epoch: impl FnMut(usize, &GeneratorNet, &GeneratorNet) -> Result<()>,
) -> Result<CycAugOutcome> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("both image sets must be non-empty"));
    }
    let (h, w) = source[0].dims();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::invalid(format!(
            "image dims must be divisible by 4 for translation training, got {h}x{w}"
        )));
    }

    for img in source.iter().chain(target.iter()) {
        if img.dims() != (h, w) {
            return Err(Error::invalid(format!(
                "all images must share dims {h}x{w}, found {:?}",
                img.dims()
            )));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut g = GeneratorNet::new(Direction::UncoverToCover, target_kind, &cfg.arch, rng.gen());
    let mut f = GeneratorNet::new(Direction::CoverToUncover, target_kind, &cfg.arch, rng.gen());
    let mut disc_a = DiscriminatorNet::new(&cfg.arch, rng.gen()); // judges uncovered
    let mut disc_b = DiscriminatorNet::new(&cfg.arch, rng.gen()); // judges covered
    g.train_dims = Some((h, w));
    f.train_dims = Some((h, w));

    let mut opt_g = Adam::with_betas(cfg.lr, 0.5, 0.999, g.store.num_params());
    let mut opt_f = Adam::with_betas(cfg.lr, 0.5, 0.999, f.store.num_params());
    let mut opt_da = Adam::with_betas(cfg.lr, 0.5, 0.999, disc_a.store.num_params());
    let mut opt_db = Adam::with_betas(cfg.lr, 0.5, 0.999, disc_b.store.num_params());

    let mut pool_a = ImagePool::new(cfg.pool_capacity);
    let mut pool_b = ImagePool::new(cfg.pool_capacity);

    let mut stream_a = IndexStream::new(source.len(), &mut rng);
    let mut stream_b = IndexStream::new(target.len(), &mut rng);

    let iters_per_epoch = source.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut epoch = 0;

    for iter in 0..cfg.iterations {
        let idx_a = stream_a.next_batch(cfg.batch_size, &mut rng);
        let idx_b = stream_b.next_batch(cfg.batch_size, &mut rng);
        let batch_a = gather(source, &idx_a)?;
        let batch_b = gather(target, &idx_b)?;

        // --- generator step -------------------------------------------
        let (grads_g, grads_f, point, fake_a_val, fake_b_val) = {
            let tape = Tape::new();
            let bind_g = Binding::new(&tape, &g.store);
            let bind_f = Binding::new(&tape, &f.store);
            let bind_da = Binding::new(&tape, &disc_a.store);
            let bind_db = Binding::new(&tape, &disc_b.store);

            let a = tape.leaf(batch_a.clone().into_dyn());
            let b = tape.leaf(batch_b.clone().into_dyn());

            let fake_b = g.forward(a, &bind_g);
            let rec_a = f.forward(fake_b, &bind_f);
            let fake_a = f.forward(b, &bind_f);
            let rec_b = g.forward(fake_a, &bind_g);
            let id_b = g.forward(b, &bind_g);
            let id_a = f.forward(a, &bind_f);

            let d_fake_b = disc_b.forward(fake_b, &bind_db);
            let d_fake_a = disc_a.forward(fake_a, &bind_da);

            let gan_g = gan_gen_loss_var(d_fake_b, cfg.adversarial_mode);
            let gan_f = gan_gen_loss_var(d_fake_a, cfg.adversarial_mode);
            let cyc = cycle_loss_var(rec_a, a, rec_b, b);
            let ident = identity_loss_var(id_b, b, id_a, a);
            let total = total_loss_var(gan_g, gan_f, cyc, ident, cfg.lambda_cyc, cfg.lambda_id);

            let sink = tape.backward(total);
            let point = CycAugLossPoint {
                iteration: iter,
                total: total.scalar_value(),
                gan_g: gan_g.scalar_value(),
                gan_f: gan_f.scalar_value(),
                cycle: cyc.scalar_value(),
                identity: ident.scalar_value(),
                disc_a: 0.0,
                disc_b: 0.0,
            };
            let fa = (*fake_a.value()).clone().into_dimensionality::<ndarray::Ix4>().unwrap();
            let fb = (*fake_b.value()).clone().into_dimensionality::<ndarray::Ix4>().unwrap();
            (bind_g.gradients(&sink), bind_f.gradients(&sink), point, fa, fb)
        };
        opt_g.step(&mut g.store, &grads_g);
        opt_f.step(&mut f.store, &grads_f);

        // --- discriminator steps ---------------------------------------
        let pooled_a = pool_a.query(&fake_a_val, &mut rng);
        let pooled_b = pool_b.query(&fake_b_val, &mut rng);
        let disc_a_loss = disc_step(&mut disc_a, &mut opt_da, &batch_a, &pooled_a, cfg.adversarial_mode);
        let disc_b_loss = disc_step(&mut disc_b, &mut opt_db, &batch_b, &pooled_b, cfg.adversarial_mode);

        let mut point = point;
        point.disc_a = disc_a_loss;
        point.disc_b = disc_b_loss;

        if !point.total.is_finite() || !disc_a_loss.is_finite() || !disc_b_loss.is_finite() {
            return Err(Error::TrainingFailure(format!(
                "non-finite loss at iteration {iter}; last good checkpoint is epoch {epoch}"
            )));
        }
        history.push(point);

        if (iter + 1) % iters_per_epoch == 0 {
            epoch += 1;
            on_epoch(epoch, &g, &f)?;
        }
    }
    if cfg.iterations % iters_per_epoch != 0 {
        epoch += 1;
        on_epoch(epoch, &g, &f)?;
    }

    Ok(CycAugOutcome { g, f, history })
}

/// [`train_cyclegan_with`] without a checkpointing hook.
pub fn train_cyclegan(
    source: &[ThermalImage],
    target: &[ThermalImage],
    target_kind: CoverKind,
    cfg: &CycAugTrainConfig,
) -> Result<CycAugOutcome> {
    train_cyclegan_with(source, target, target_kind, cfg, |_, _, _| Ok(()))
}

fn disc_step(
    disc: &mut DiscriminatorNet,
    opt: &mut Adam,
    real: &Array4<f64>,
    fake: &Array4<f64>,
    mode: AdversarialMode,
) -> f64 {
    let (grads, loss_val) = {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &disc.store);
        let real_v = tape.leaf(real.clone().into_dyn());
        let fake_v = tape.leaf(fake.clone().into_dyn());
        let d_real = disc.forward(real_v, &bind);
        let d_fake = disc.forward(fake_v, &bind);
        let loss = gan_disc_loss_var(d_real, d_fake, mode);
        let sink = tape.backward(loss);
        (bind.gradients(&sink), loss.scalar_value())
    };
    opt.step(&mut disc.store, &grads);
    loss_val
}

fn gather(images: &[ThermalImage], idx: &[usize]) -> Result<Array4<f64>> {
    let picked: Vec<ThermalImage> = idx.iter().map(|&i| images[i].clone()).collect();
    batch_from_images(&picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn phantom_like(seed: u64, bright: bool) -> ThermalImage {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let px = Array2::from_shape_fn((16, 12), |(y, x)| {
            let base: f64 = if bright { 0.7 } else { 0.25 };
            let stripe = if (4..8).contains(&(y % 12)) && (3..9).contains(&x) { 0.2 } else { 0.0 };
            (base + stripe + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)
        });
        ThermalImage::new(px).unwrap()
    }

    fn tiny_cfg(iterations: usize) -> CycAugTrainConfig {
        CycAugTrainConfig {
            iterations,
            batch_size: 2,
            arch: CycAugArch { gen_channels: 4, n_res_blocks: 1, disc_channels: 4, disc_layers: 2 },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_empty_sets_and_bad_dims() {
        let imgs = vec![phantom_like(0, true)];
        assert!(train_cyclegan(&[], &imgs, CoverKind::Thin, &tiny_cfg(1)).is_err());
        assert!(train_cyclegan(&imgs, &[], CoverKind::Thin, &tiny_cfg(1)).is_err());

        let odd = vec![ThermalImage::constant(15, 12, 0.5).unwrap()];
        assert!(train_cyclegan(&odd, &odd, CoverKind::Thin, &tiny_cfg(1)).is_err());
    }

    #[test]
    fn fixed_seed_reproduces_loss_trajectory() {
        let src: Vec<ThermalImage> = (0..4).map(|i| phantom_like(i, true)).collect();
        let tgt: Vec<ThermalImage> = (0..4).map(|i| phantom_like(100 + i, false)).collect();
        let cfg = tiny_cfg(6);
        let run1 = train_cyclegan(&src, &tgt, CoverKind::Thin, &cfg).unwrap();
        let run2 = train_cyclegan(&src, &tgt, CoverKind::Thin, &cfg).unwrap();
        let t1: Vec<f64> = run1.history.iter().map(|p| p.total).collect();
        let t2: Vec<f64> = run2.history.iter().map(|p| p.total).collect();
        assert_eq!(t1, t2);
        assert_eq!(run1.g.store.content_hash(), run2.g.store.content_hash());
    }

    #[test]
    fn epoch_hook_fires_per_source_pass() {
        let src: Vec<ThermalImage> = (0..4).map(|i| phantom_like(i, true)).collect();
        let tgt: Vec<ThermalImage> = (0..4).map(|i| phantom_like(50 + i, false)).collect();
        // 4 source images / batch 2 -> 2 iters per epoch; 5 iterations -> epochs 1,2 + trailing flush
        let mut epochs = Vec::new();
        let cfg = tiny_cfg(5);
        train_cyclegan_with(&src, &tgt, CoverKind::Thin, &cfg, |e, _, _| {
            epochs.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs, vec![1, 2, 3]);
    }

    #[test]
    fn generator_output_dims_match_input() {
        let src: Vec<ThermalImage> = (0..2).map(|i| phantom_like(i, true)).collect();
        let tgt: Vec<ThermalImage> = (0..2).map(|i| phantom_like(70 + i, false)).collect();
        let out = train_cyclegan(&src, &tgt, CoverKind::Thick, &tiny_cfg(2)).unwrap();
        let translated = super::super::nets::translate(&out.g, &src).unwrap();
        assert_eq!(translated[0].dims(), (16, 12));
        assert_eq!(out.g.target_domain, CoverKind::Thick);
        assert_eq!(out.g.direction, Direction::UncoverToCover);
        assert_eq!(out.f.direction, Direction::CoverToUncover);
    }
}
