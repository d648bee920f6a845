//! Loss system for unpaired translation training: adversarial terms for
//! both directions, cycle consistency, identity regularization, and their
//! weighted combination. Every term exists in two forms — a differentiable
//! graph combinator used by the training loop and gradient checks, and a
//! plain numeric evaluation matching the operation contracts.

use ndarray::{Array4, ArrayD};

use crate::error::{Error, Result};
use crate::nn::Var;

/// Which adversarial objective the GAN terms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// Cross-entropy form; the generator minimizes the non-saturating
    /// surrogate −E[log D(fake)].
    Log,
    /// Least-squares distances to labels 1 (real) and 0 (fake).
    LeastSquares,
}

/// Discriminator objective over raw scores (pre-sigmoid for log mode).
pub fn gan_disc_loss_var<'t>(d_real: Var<'t>, d_fake: Var<'t>, mode: AdversarialMode) -> Var<'t> {
    match mode {
        AdversarialMode::LeastSquares => {
            let real_term = d_real.affine(1.0, -1.0).square().mean_all();
            let fake_term = d_fake.square().mean_all();
            real_term.add(fake_term)
        }
        AdversarialMode::Log => {
            // -E[log D(real)] - E[log(1 - D(fake))]
            let real_term = d_real.sigmoid().ln().mean_all().scale(-1.0);
            let fake_term = d_fake.sigmoid().affine(-1.0, 1.0).ln().mean_all().scale(-1.0);
            real_term.add(fake_term)
        }
    }
}

/// Generator objective over raw fake scores.
pub fn gan_gen_loss_var<'t>(d_fake: Var<'t>, mode: AdversarialMode) -> Var<'t> {
    match mode {
        AdversarialMode::LeastSquares => d_fake.affine(1.0, -1.0).square().mean_all(),
        // non-saturating: -E[log D(fake)]
        AdversarialMode::Log => d_fake.sigmoid().ln().mean_all().scale(-1.0),
    }
}

/// Mean absolute difference (ℓ1 realized as mean over elements).
pub fn mean_abs_var<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.sub(b).abs().mean_all()
}

/// Cycle consistency: E‖F(G(x)) − x‖₁ + E‖G(F(y)) − y‖₁.
pub fn cycle_loss_var<'t>(
    rec_x: Var<'t>,
    orig_x: Var<'t>,
    rec_y: Var<'t>,
    orig_y: Var<'t>,
) -> Var<'t> {
    mean_abs_var(rec_x, orig_x).add(mean_abs_var(rec_y, orig_y))
}

/// Identity regularization: E‖G(y) − y‖₁ + E‖F(x) − x‖₁.
pub fn identity_loss_var<'t>(
    g_of_y: Var<'t>,
    y: Var<'t>,
    f_of_x: Var<'t>,
    x: Var<'t>,
) -> Var<'t> {
    mean_abs_var(g_of_y, y).add(mean_abs_var(f_of_x, x))
}

/// Weighted combination: L_GAN(G) + L_GAN(F) + λ·L_cyc + λ_id·L_identity.
pub fn total_loss_var<'t>(
    gan_g: Var<'t>,
    gan_f: Var<'t>,
    cyc: Var<'t>,
    identity: Var<'t>,
    lambda_cyc: f64,
    lambda_id: f64,
) -> Var<'t> {
    gan_g
        .add(gan_f)
        .add(cyc.scale(lambda_cyc))
        .add(identity.scale(lambda_id))
}

fn check_same_shape(a: &ArrayD<f64>, b: &ArrayD<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mean_abs(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

/// Numeric cycle-consistency loss over aligned reconstruction pairs.
pub fn cycle_loss(
    rec_x: &ArrayD<f64>,
    orig_x: &ArrayD<f64>,
    rec_y: &ArrayD<f64>,
    orig_y: &ArrayD<f64>,
) -> Result<f64> {
    if rec_x.is_empty() || rec_y.is_empty() {
        return Err(Error::invalid("cycle_loss: empty batch"));
    }
    check_same_shape(rec_x, orig_x, "cycle_loss x pair")?;
    check_same_shape(rec_y, orig_y, "cycle_loss y pair")?;
    Ok(mean_abs(rec_x, orig_x) + mean_abs(rec_y, orig_y))
}

/// Numeric identity-mapping loss.
pub fn identity_loss(
    g_of_y: &ArrayD<f64>,
    y: &ArrayD<f64>,
    f_of_x: &ArrayD<f64>,
    x: &ArrayD<f64>,
) -> Result<f64> {
    if g_of_y.is_empty() || f_of_x.is_empty() {
        return Err(Error::invalid("identity_loss: empty batch"));
    }
    check_same_shape(g_of_y, y, "identity_loss y pair")?;
    check_same_shape(f_of_x, x, "identity_loss x pair")?;
    Ok(mean_abs(g_of_y, y) + mean_abs(f_of_x, x))
}

/// Numeric weighted combination with weight validation.
pub fn total_loss(
    gan_g: f64,
    gan_f: f64,
    cyc: f64,
    identity: f64,
    lambda_cyc: f64,
    lambda_id: f64,
) -> Result<f64> {
    if lambda_cyc < 0.0 || lambda_id < 0.0 {
        return Err(Error::invalid(format!(
            "loss weights must be non-negative, got λ={lambda_cyc}, λ_id={lambda_id}"
        )));
    }
    Ok(gan_g + gan_f + lambda_cyc * cyc + lambda_id * identity)
}

/// Numeric adversarial pair over discriminator scores.
///
/// `d_real`/`d_fake` are the discriminator outputs on a real batch and on
/// generated images. In log mode the scores are probabilities in (0, 1);
/// in least-squares mode they are raw regression scores.
pub fn adversarial_loss_from_scores(
    d_real: &ArrayD<f64>,
    d_fake: &ArrayD<f64>,
    mode: AdversarialMode,
) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("adversarial_loss: empty batch"));
    }
    let n_real = d_real.len() as f64;
    let n_fake = d_fake.len() as f64;
    match mode {
        AdversarialMode::LeastSquares => {
            let disc = d_real.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n_real
                + d_fake.iter().map(|s| s.powi(2)).sum::<f64>() / n_fake;
            let gen = d_fake.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n_fake;
            Ok((gen, disc))
        }
        AdversarialMode::Log => {
            if d_real.iter().chain(d_fake.iter()).any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid("log-mode scores must be probabilities"));
            }
            let eps = 1e-12;
            let disc = -d_real.iter().map(|p| (p + eps).ln()).sum::<f64>() / n_real
                - d_fake.iter().map(|p| (1.0 - p + eps).ln()).sum::<f64>() / n_fake;
            let gen = -d_fake.iter().map(|p| (p + eps).ln()).sum::<f64>() / n_fake;
            Ok((gen, disc))
        }
    }
}

/// Packs a slice of (H, W) grids into an (N, 1, H, W) batch.
pub fn batch_from_images(images: &[crate::types::ThermalImage]) -> Result<Array4<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = first.dims();
    let mut batch = Array4::zeros((images.len(), 1, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(Error::invalid(format!(
                "batch image {i} has dims {:?}, expected {:?}",
                img.dims(),
                (h, w)
            )));
        }
        batch
            .index_axis_mut(ndarray::Axis(0), i)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(img.pixels());
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use ndarray::{arr1, ArrayD, IxDyn};

    #[test]
    fn perfect_discriminator_has_zero_ls_loss() {
        let real = ArrayD::from_elem(IxDyn(&[4]), 1.0);
        let fake = ArrayD::from_elem(IxDyn(&[4]), 0.0);
        let (_, disc) = adversarial_loss_from_scores(&real, &fake, AdversarialMode::LeastSquares).unwrap();
        assert_eq!(disc, 0.0);
    }

    #[test]
    fn undecided_discriminator_ls_loss_is_half() {
        let half = ArrayD::from_elem(IxDyn(&[8]), 0.5);
        let (gen, disc) =
            adversarial_loss_from_scores(&half, &half, AdversarialMode::LeastSquares).unwrap();
        assert!((disc - 0.5).abs() < 1e-12, "disc = {disc}");
        assert!((gen - 0.25).abs() < 1e-12);
    }

    #[test]
    fn log_mode_nonsaturating_generator_loss() {
        let real = ArrayD::from_elem(IxDyn(&[4]), 0.8);
        let fake = ArrayD::from_elem(IxDyn(&[4]), 0.5);
        let (gen, _) = adversarial_loss_from_scores(&real, &fake, AdversarialMode::Log).unwrap();
        assert!((gen - 0.5f64.ln().abs()).abs() < 1e-9, "gen = {gen}");
    }

    #[test]
    fn adversarial_empty_batch_rejected() {
        let empty = ArrayD::zeros(IxDyn(&[0]));
        let some = ArrayD::from_elem(IxDyn(&[2]), 0.5);
        assert!(adversarial_loss_from_scores(&empty, &some, AdversarialMode::Log).is_err());
    }

    #[test]
    fn cycle_loss_identity_and_offset() {
        let x = ArrayD::from_elem(IxDyn(&[2, 4]), 0.3);
        let y = ArrayD::from_elem(IxDyn(&[2, 4]), 0.6);
        assert_eq!(cycle_loss(&x, &x, &y, &y).unwrap(), 0.0);

        let rec_x = x.mapv(|v| v + 0.5);
        let loss = cycle_loss(&rec_x, &x, &y, &y).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);

        let bad = ArrayD::from_elem(IxDyn(&[3, 4]), 0.3);
        assert!(cycle_loss(&bad, &x, &y, &y).is_err());
    }

    #[test]
    fn cycle_loss_non_negative_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = ArrayD::from_shape_fn(IxDyn(&[3, 5]), |_| rng.gen_range(-1.0..1.0));
            let b = ArrayD::from_shape_fn(IxDyn(&[3, 5]), |_| rng.gen_range(-1.0..1.0));
            assert!(cycle_loss(&a, &b, &a, &b).unwrap() >= 0.0);
        }
    }

    #[test]
    fn identity_loss_definition_and_homogeneity() {
        let y = ArrayD::from_elem(IxDyn(&[4]), 0.4);
        let x = ArrayD::from_elem(IxDyn(&[4]), 0.1);
        assert_eq!(identity_loss(&y, &y, &x, &x).unwrap(), 0.0);

        let gy = y.mapv(|v| v + 0.2);
        let l = identity_loss(&gy, &y, &x, &x).unwrap();
        assert!((l - 0.2).abs() < 1e-12);

        // scaling both deviations by c scales the loss by c
        let c = 3.5;
        let gy_scaled = y.mapv(|v| v + 0.2 * c);
        let l_scaled = identity_loss(&gy_scaled, &y, &x, &x).unwrap();
        assert!((l_scaled - c * l).abs() < 1e-12);
    }

    #[test]
    fn total_loss_composite_value() {
        // the hand-computed composite: 0.5 + 0.5 + 10*0.1 + 5*0.02 = 2.1
        let l = total_loss(0.5, 0.5, 0.1, 0.02, 10.0, 5.0).unwrap();
        assert!((l - 2.1).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 10.0, 5.0).unwrap(), 0.0);
        // degenerate weights reduce to the adversarial sum
        assert_eq!(total_loss(0.3, 0.4, 9.0, 9.0, 0.0, 0.0).unwrap(), 0.7);
        assert!(total_loss(0.0, 0.0, 0.0, 0.0, -1.0, 5.0).is_err());
    }

    #[test]
    fn symmetry_under_operand_swap() {
        let a = arr1(&[0.1, 0.9]).into_dyn();
        let b = arr1(&[0.4, 0.2]).into_dyn();
        let c = arr1(&[0.7, 0.3]).into_dyn();
        let d = arr1(&[0.5, 0.5]).into_dyn();
        let l1 = cycle_loss(&a, &b, &c, &d).unwrap();
        let l2 = cycle_loss(&c, &d, &a, &b).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        let i1 = identity_loss(&a, &b, &c, &d).unwrap();
        let i2 = identity_loss(&c, &d, &a, &b).unwrap();
        assert!((i1 - i2).abs() < 1e-12);
    }

    #[test]
    fn var_losses_agree_with_numeric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
            ArrayD::from_shape_fn(IxDyn(&[2, 1, 3, 3]), |_| rng.gen_range(0.0..1.0))
        };
        let (rx, ox, ry, oy) = (mk(&mut rng), mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let tape = Tape::new();
        let v = [
            tape.leaf(rx.clone()),
            tape.leaf(ox.clone()),
            tape.leaf(ry.clone()),
            tape.leaf(oy.clone()),
        ];
        let graph = cycle_loss_var(v[0], v[1], v[2], v[3]).scalar_value();
        let numeric = cycle_loss(&rx, &ox, &ry, &oy).unwrap();
        assert!((graph - numeric).abs() < 1e-12);
    }
}
