//! Translation networks: residual encoder-decoder generators and patch
//! discriminators, single-channel in and out.

use ndarray::{Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Binding, Conv2d, InstanceNorm2d, ParamStore, Tape, Var};
use crate::types::ThermalImage;

/// Translation direction of a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    UncoverToCover,
    CoverToUncover,
}

/// Which covered distribution the generator pair was trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverKind {
    Thin,
    Thick,
}

impl CoverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverKind::Thin => "thin",
            CoverKind::Thick => "thick",
        }
    }
}

/// Architecture knobs shared by the generator pair and discriminators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycAugArch {
    /// Generator base width; doubles at each of the two downsampling stages.
    pub gen_channels: usize,
    /// Residual blocks at the bottleneck.
    pub n_res_blocks: usize,
    /// Discriminator base width.
    pub disc_channels: usize,
    /// Stride-2 stages in the discriminator.
    pub disc_layers: usize,
}

impl Default for CycAugArch {
    fn default() -> Self {
        // full profile: the cited framework scaled to one channel
        Self {
            gen_channels: 32,
            n_res_blocks: 6,
            disc_channels: 32,
            disc_layers: 3,
        }
    }
}

impl CycAugArch {
    /// Small enough to train on a CPU in seconds per hundred iterations.
    pub fn toy() -> Self {
        Self {
            gen_channels: 8,
            n_res_blocks: 2,
            disc_channels: 8,
            disc_layers: 2,
        }
    }
}

struct ConvNorm {
    conv: Conv2d,
    norm: InstanceNorm2d,
}

struct ResBlock {
    a: ConvNorm,
    b: ConvNorm,
}

/// Residual encoder-decoder translator. Works in [-1, 1] internally;
/// the public contract is [0, 1] in, [0, 1] out, same dimensions.
pub struct GeneratorNet {
    pub store: ParamStore,
    pub direction: Direction,
    pub target_domain: CoverKind,
    /// Image dims the generator was trained on, (H, W); enforced at
    /// translation time once set.
    pub train_dims: Option<(usize, usize)>,
    arch: CycAugArch,
    stem: ConvNorm,
    down: Vec<ConvNorm>,
    blocks: Vec<ResBlock>,
    up: Vec<ConvNorm>,
    head: Conv2d,
}

impl GeneratorNet {
    pub fn new(direction: Direction, target_domain: CoverKind, arch: &CycAugArch, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c = arch.gen_channels;

        let conv_norm = |store: &mut ParamStore,
                         rng: &mut ChaCha12Rng,
                         name: &str,
                         ci: usize,
                         co: usize,
                         stride: usize| {
            ConvNorm {
                conv: Conv2d::new(store, rng, name, ci, co, 3, stride, 1, true),
                norm: InstanceNorm2d::new(store, &format!("{name}.norm"), co),
            }
        };

        let stem = conv_norm(&mut store, &mut rng, "gen.stem", 1, c, 1);
        let down = vec![
            conv_norm(&mut store, &mut rng, "gen.down0", c, 2 * c, 2),
            conv_norm(&mut store, &mut rng, "gen.down1", 2 * c, 4 * c, 2),
        ];
        let blocks = (0..arch.n_res_blocks)
            .map(|i| ResBlock {
                a: conv_norm(&mut store, &mut rng, &format!("gen.res{i}.a"), 4 * c, 4 * c, 1),
                b: conv_norm(&mut store, &mut rng, &format!("gen.res{i}.b"), 4 * c, 4 * c, 1),
            })
            .collect();
        let up = vec![
            conv_norm(&mut store, &mut rng, "gen.up0", 4 * c, 2 * c, 1),
            conv_norm(&mut store, &mut rng, "gen.up1", 2 * c, c, 1),
        ];
        let head = Conv2d::new(&mut store, &mut rng, "gen.head", c, 1, 3, 1, 1, true);

        Self {
            store,
            direction,
            target_domain,
            train_dims: None,
            arch: arch.clone(),
            stem,
            down,
            blocks,
            up,
            head,
        }
    }

    pub fn arch(&self) -> &CycAugArch {
        &self.arch
    }

    /// Differentiable forward over an (N, 1, H, W) batch in [0, 1].
    /// H and W must be divisible by 4 (two downsampling stages).
    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>) -> Var<'t> {
        // into [-1, 1]
        let mut h = x.affine(2.0, -1.0);
        h = self.stem.conv.forward(h, bind);
        h = self.stem.norm.forward(h, bind).relu();
        for stage in &self.down {
            h = stage.conv.forward(h, bind);
            h = stage.norm.forward(h, bind).relu();
        }
        for block in &self.blocks {
            let skip = h;
            h = block.a.conv.forward(h, bind);
            h = block.a.norm.forward(h, bind).relu();
            h = block.b.conv.forward(h, bind);
            h = block.b.norm.forward(h, bind);
            h = h.add(skip).relu();
        }
        for stage in &self.up {
            h = h.upsample2();
            h = stage.conv.forward(h, bind);
            h = stage.norm.forward(h, bind).relu();
        }
        let out = self.head.forward(h, bind).tanh();
        // back to [0, 1]
        out.affine(0.5, 0.5)
    }

    /// Checks batch dims against the architecture (and training dims when
    /// the generator has been trained).
    pub fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!(
                "generator requires dims divisible by 4, got {h}x{w}"
            )));
        }
        if let Some((th, tw)) = self.train_dims {
            if (h, w) != (th, tw) {
                return Err(Error::invalid(format!(
                    "generator trained on {th}x{tw}, got {h}x{w}"
                )));
            }
        }
        Ok(())
    }
}

/// Patch discriminator: stride-2 conv stack ending in a score map.
pub struct DiscriminatorNet {
    pub store: ParamStore,
    layers: Vec<(Conv2d, Option<InstanceNorm2d>)>,
    head: Conv2d,
}

impl DiscriminatorNet {
    pub fn new(arch: &CycAugArch, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut ci = 1;
        let mut co = arch.disc_channels;
        for i in 0..arch.disc_layers {
            let conv = Conv2d::new(&mut store, &mut rng, &format!("disc.conv{i}"), ci, co, 3, 2, 1, true);
            // no norm on the first layer, per the usual patch recipe
            let norm = (i > 0).then(|| InstanceNorm2d::new(&mut store, &format!("disc.norm{i}"), co));
            layers.push((conv, norm));
            ci = co;
            co *= 2;
        }
        let head = Conv2d::new(&mut store, &mut rng, "disc.head", ci, 1, 3, 1, 1, true);
        Self { store, layers, head }
    }

    /// Raw realism scores as an (N, 1, h', w') grid.
    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>) -> Var<'t> {
        let mut h = x.affine(2.0, -1.0);
        for (conv, norm) in &self.layers {
            h = conv.forward(h, bind);
            if let Some(n) = norm {
                h = n.forward(h, bind);
            }
            h = h.leaky_relu(0.2);
        }
        self.head.forward(h, bind)
    }
}

/// Inference-only translation of a batch; outputs clamped to [0, 1].
/// Keypoint labels of the inputs carry over unchanged by contract.
pub fn translate(gen: &GeneratorNet, imgs: &[ThermalImage]) -> Result<Vec<ThermalImage>> {
    let first = imgs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (h, w) = first.dims();
    gen.check_dims(h, w)?;
    let batch = super::losses::batch_from_images(imgs)?;

    let tape = Tape::new();
    let bind = Binding::new(&tape, &gen.store);
    let x = tape.leaf(batch.into_dyn());
    let y = gen.forward(x, &bind);
    let out: ArrayD<f64> = (*y.value()).clone();
    let out4 = out.into_dimensionality::<ndarray::Ix4>().expect("generator output not 4-d");

    let mut result = Vec::with_capacity(imgs.len());
    for i in 0..imgs.len() {
        let plane = out4.index_axis(ndarray::Axis(0), i);
        let plane = plane.index_axis(ndarray::Axis(0), 0).to_owned();
        result.push(ThermalImage::from_clamped(plane)?);
    }
    Ok(result)
}

/// Batch helper shared by training: one (N,1,H,W) forward of a generator.
pub fn forward_batch<'t>(
    gen: &GeneratorNet,
    tape: &'t Tape,
    bind: &Binding<'t, '_>,
    batch: &Array4<f64>,
) -> Var<'t> {
    let x = tape.leaf(batch.clone().into_dyn());
    gen.forward(x, bind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_preserves_shape_and_range() {
        let arch = CycAugArch::toy();
        let gen = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thin, &arch, 1);
        let imgs: Vec<ThermalImage> = (0..3)
            .map(|i| ThermalImage::constant(16, 12, 0.1 * (i + 1) as f64).unwrap())
            .collect();
        let out = translate(&gen, &imgs).unwrap();
        assert_eq!(out.len(), 3);
        for img in &out {
            assert_eq!(img.dims(), (16, 12));
            assert!(img.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn generator_rejects_bad_dims() {
        let arch = CycAugArch::toy();
        let gen = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thin, &arch, 1);
        let img = ThermalImage::constant(15, 12, 0.5).unwrap();
        assert!(translate(&gen, &[img]).is_err());

        let mut gen2 = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thin, &arch, 1);
        gen2.train_dims = Some((16, 12));
        let img = ThermalImage::constant(32, 24, 0.5).unwrap();
        assert!(translate(&gen2, &[img]).is_err());
    }

    #[test]
    fn discriminator_emits_score_grid() {
        let arch = CycAugArch::toy();
        let disc = DiscriminatorNet::new(&arch, 7);
        let tape = Tape::new();
        let bind = Binding::new(&tape, &disc.store);
        let x = tape.leaf(Array4::from_elem((2, 1, 16, 12), 0.4).into_dyn());
        let y = disc.forward(x, &bind);
        assert_eq!(y.shape(), vec![2, 1, 4, 3]);
    }

    #[test]
    fn fresh_generators_with_same_seed_match() {
        let arch = CycAugArch::toy();
        let a = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thin, &arch, 5);
        let b = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thin, &arch, 5);
        assert_eq!(a.store.content_hash(), b.store.content_hash());
        let c = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thin, &arch, 6);
        assert_ne!(a.store.content_hash(), c.store.content_hash());
    }
}
