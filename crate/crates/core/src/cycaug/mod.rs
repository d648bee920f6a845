//! Unpaired image-to-image translation used as a data augmenter: learns
//! uncovered -> covered mappings from unpaired sets and re-renders labeled
//! uncovered frames as synthetic covered frames, transporting labels
//! unchanged. One generator pair is trained per cover type.

pub mod losses;
pub mod nets;
pub mod train;

pub use losses::{
    adversarial_loss_from_scores, batch_from_images, cycle_loss, cycle_loss_var, gan_disc_loss_var,
    gan_gen_loss_var, identity_loss, identity_loss_var, total_loss, total_loss_var,
    AdversarialMode,
};
pub use nets::{translate, CoverKind, CycAugArch, Direction, DiscriminatorNet, GeneratorNet};
pub use train::{
    train_cyclegan, train_cyclegan_with, CycAugLossPoint, CycAugOutcome, CycAugTrainConfig,
};

use crate::error::Result;
use crate::nn::{Binding, Tape};
use crate::types::ThermalImage;

/// Adversarial loss pair for a generator/discriminator over image batches:
/// the discriminator judges `real` against `gen(fake_source)`.
///
/// Returns `(gen_loss, disc_loss)` as plain values; the training loop uses
/// the differentiable combinators directly.
pub fn adversarial_loss(
    gen: &GeneratorNet,
    disc: &DiscriminatorNet,
    real: &[ThermalImage],
    fake_source: &[ThermalImage],
    mode: AdversarialMode,
) -> Result<(f64, f64)> {
    let real_batch = batch_from_images(real)?;
    let fake_src_batch = batch_from_images(fake_source)?;

    let tape = Tape::new();
    let bind_g = Binding::new(&tape, &gen.store);
    let bind_d = Binding::new(&tape, &disc.store);
    let fake = gen.forward(tape.leaf(fake_src_batch.into_dyn()), &bind_g);
    let d_real = disc.forward(tape.leaf(real_batch.into_dyn()), &bind_d);
    let d_fake = disc.forward(fake, &bind_d);
    let gen_loss = gan_gen_loss_var(d_fake, mode);
    let disc_loss = gan_disc_loss_var(d_real, d_fake, mode);
    Ok((gen_loss.scalar_value(), disc_loss.scalar_value()))
}
