//! Heatmap pose estimators: a stacked hourglass with intermediate
//! supervision and an encoder-decoder simple baseline. Both map an
//! (N, 1, H, W) thermal batch to per-joint heatmaps at the configured
//! stride; batch norm carries the train/eval mode distinction.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Binding, Conv2d, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Hourglass,
    SimpleBaseline,
}

/// Architecture of a pose network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseNetConfig {
    pub backbone: Backbone,
    /// Hourglass stacks (ignored by the simple baseline).
    pub n_stacks: usize,
    /// Base channel width.
    pub channels: usize,
    /// Residual blocks at the simple-baseline bottleneck.
    pub encoder_depth: usize,
    /// Input frame dims (H, W).
    pub input_dims: (usize, usize),
    /// Heatmap dims (H, W); input/heatmap must be an integer power-of-two
    /// stride, equal on both axes.
    pub heatmap_dims: (usize, usize),
    pub num_joints: usize,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Hourglass,
            n_stacks: 2,
            channels: 64,
            encoder_depth: 2,
            input_dims: (256, 256),
            heatmap_dims: (64, 64),
            num_joints: crate::types::NUM_JOINTS,
        }
    }
}

impl PoseNetConfig {
    /// Desk-scale profile: trains in seconds per epoch on one CPU core.
    pub fn toy(backbone: Backbone) -> Self {
        Self {
            backbone,
            n_stacks: 1,
            channels: 24,
            encoder_depth: 2,
            input_dims: (64, 48),
            heatmap_dims: (32, 24),
            num_joints: crate::types::NUM_JOINTS,
        }
    }

    pub fn stride(&self) -> f64 {
        self.input_dims.0 as f64 / self.heatmap_dims.0 as f64
    }

    /// Stem stride-2 stages, from the input/heatmap ratio.
    fn stem_stages(&self) -> Result<usize> {
        let (ih, iw) = self.input_dims;
        let (hh, hw) = self.heatmap_dims;
        if hh == 0 || hw == 0 || ih == 0 || iw == 0 {
            return Err(Error::invalid("dims must be positive"));
        }
        if ih % hh != 0 || iw % hw != 0 || ih / hh != iw / hw {
            return Err(Error::invalid(format!(
                "heatmap dims {hh}x{hw} must divide input dims {ih}x{iw} by one integer stride"
            )));
        }
        let stride = ih / hh;
        if !stride.is_power_of_two() {
            return Err(Error::invalid(format!("stride {stride} must be a power of two")));
        }
        Ok(stride.trailing_zeros() as usize)
    }

    /// Hourglass recursion depth: halvings available below heatmap scale.
    fn hourglass_depth(&self) -> usize {
        let (mut h, mut w) = self.heatmap_dims;
        let mut d = 0;
        while d < 4 && h % 2 == 0 && w % 2 == 0 {
            h /= 2;
            w /= 2;
            d += 1;
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        self.stem_stages()?;
        if self.channels == 0 || self.num_joints == 0 {
            return Err(Error::invalid("channels and joint count must be positive"));
        }
        match self.backbone {
            Backbone::Hourglass => {
                if self.n_stacks == 0 {
                    return Err(Error::invalid("hourglass needs at least one stack"));
                }
                if self.hourglass_depth() == 0 {
                    return Err(Error::invalid("heatmap dims too odd-sized for an hourglass"));
                }
            }
            Backbone::SimpleBaseline => {
                let (h, w) = self.heatmap_dims;
                if h % 8 != 0 || w % 8 != 0 {
                    return Err(Error::invalid(
                        "simple baseline needs heatmap dims divisible by 8 (three decoder stages)",
                    ));
                }
            }
        }
        Ok(())
    }
}

struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, rng, name, ci, co, k, stride, pad, false),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), co),
        }
    }

    fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>, train: bool) -> Var<'t> {
        self.bn.forward(self.conv.forward(x, bind), bind, train)
    }
}

/// conv-bn-relu-conv-bn + skip, relu after the merge.
struct ResBlock {
    a: ConvBn,
    b: ConvBn,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize) -> Self {
        Self {
            a: ConvBn::new(store, rng, &format!("{name}.a"), c, c, 3, 1, 1),
            b: ConvBn::new(store, rng, &format!("{name}.b"), c, c, 3, 1, 1),
        }
    }

    fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>, train: bool) -> Var<'t> {
        let h = self.a.forward(x, bind, train).relu();
        let h = self.b.forward(h, bind, train);
        h.add(x).relu()
    }
}

/// One hourglass: recursive pool/upsample U with residual skips.
struct HourglassCore {
    /// Per level: (skip branch, down branch, up branch).
    levels: Vec<(ResBlock, ResBlock, ResBlock)>,
    bottom: ResBlock,
}

impl HourglassCore {
    fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize, depth: usize) -> Self {
        let levels = (0..depth)
            .map(|l| {
                (
                    ResBlock::new(store, rng, &format!("{name}.l{l}.skip"), c),
                    ResBlock::new(store, rng, &format!("{name}.l{l}.down"), c),
                    ResBlock::new(store, rng, &format!("{name}.l{l}.up"), c),
                )
            })
            .collect();
        let bottom = ResBlock::new(store, rng, &format!("{name}.bottom"), c);
        Self { levels, bottom }
    }

    fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>, train: bool) -> Var<'t> {
        self.recurse(x, bind, train, 0)
    }

    fn recurse<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>, train: bool, level: usize) -> Var<'t> {
        let (skip, down, up) = &self.levels[level];
        let keep = skip.forward(x, bind, train);
        let low = down.forward(x.max_pool2(), bind, train);
        let mid = if level + 1 < self.levels.len() {
            self.recurse(low, bind, train, level + 1)
        } else {
            self.bottom.forward(low, bind, train)
        };
        let lifted = up.forward(mid, bind, train).upsample2();
        keep.add(lifted)
    }
}

struct HourglassStack {
    core: HourglassCore,
    /// First 1x1 round: feature mixing.
    feat: ConvBn,
    /// Second 1x1 round: heatmap projection.
    head: Conv2d,
    /// Remaps (features, heatmaps) back into the trunk between stacks.
    remap_feat: Option<Conv2d>,
    remap_hm: Option<Conv2d>,
}

enum Arch {
    Hourglass { stacks: Vec<HourglassStack> },
    Simple {
        down: Vec<ConvBn>,
        bottleneck: Vec<ResBlock>,
        up: Vec<ConvBn>,
        head: Conv2d,
    },
}

/// A pose estimator: configuration, parameters, and the forward graph.
pub struct PoseNet {
    pub cfg: PoseNetConfig,
    pub store: ParamStore,
    stem: Vec<ConvBn>,
    arch: Arch,
}

impl PoseNet {
    /// Builds a network with seeded deterministic initialization.
    pub fn new(cfg: &PoseNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c = cfg.channels;

        let stem_stages = cfg.stem_stages()?;
        let mut stem = Vec::new();
        if stem_stages == 0 {
            stem.push(ConvBn::new(&mut store, &mut rng, "stem0", 1, c, 3, 1, 1));
        } else {
            for s in 0..stem_stages {
                let ci = if s == 0 { 1 } else { c };
                stem.push(ConvBn::new(&mut store, &mut rng, &format!("stem{s}"), ci, c, 3, 2, 1));
            }
        }

        let arch = match cfg.backbone {
            Backbone::Hourglass => {
                let depth = cfg.hourglass_depth();
                let stacks = (0..cfg.n_stacks)
                    .map(|s| {
                        let name = format!("hg{s}");
                        let core = HourglassCore::new(&mut store, &mut rng, &name, c, depth);
                        let feat = ConvBn::new(&mut store, &mut rng, &format!("{name}.feat"), c, c, 1, 1, 0);
                        let head = Conv2d::new(&mut store, &mut rng, &format!("{name}.head"), c, cfg.num_joints, 1, 1, 0, true);
                        let last = s + 1 == cfg.n_stacks;
                        let remap_feat = (!last).then(|| {
                            Conv2d::new(&mut store, &mut rng, &format!("{name}.remap_feat"), c, c, 1, 1, 0, false)
                        });
                        let remap_hm = (!last).then(|| {
                            Conv2d::new(&mut store, &mut rng, &format!("{name}.remap_hm"), cfg.num_joints, c, 1, 1, 0, false)
                        });
                        HourglassStack { core, feat, head, remap_feat, remap_hm }
                    })
                    .collect();
                Arch::Hourglass { stacks }
            }
            Backbone::SimpleBaseline => {
                let mut down = Vec::new();
                let mut ch = c;
                for s in 0..3 {
                    down.push(ConvBn::new(&mut store, &mut rng, &format!("enc{s}"), ch, ch * 2, 3, 2, 1));
                    ch *= 2;
                }
                let bottleneck = (0..cfg.encoder_depth)
                    .map(|i| ResBlock::new(&mut store, &mut rng, &format!("mid{i}"), ch))
                    .collect();
                let mut up = Vec::new();
                for s in 0..3 {
                    up.push(ConvBn::new(&mut store, &mut rng, &format!("dec{s}"), ch, ch / 2, 3, 1, 1));
                    ch /= 2;
                }
                let head = Conv2d::new(&mut store, &mut rng, "head", ch, cfg.num_joints, 1, 1, 0, true);
                Arch::Simple { down, bottleneck, up, head }
            }
        };

        Ok(Self { cfg: cfg.clone(), store, stem, arch })
    }

    /// Forward pass; returns one heatmap tensor per supervised stack
    /// (hourglass intermediate supervision) — the last entry is the
    /// final prediction.
    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>, train: bool) -> Vec<Var<'t>> {
        let mut h = x;
        for stage in &self.stem {
            h = stage.forward(h, bind, train).relu();
        }
        match &self.arch {
            Arch::Hourglass { stacks } => {
                let mut outputs = Vec::with_capacity(stacks.len());
                let mut trunk = h;
                for stack in stacks {
                    let core = stack.core.forward(trunk, bind, train);
                    let feat = stack.feat.forward(core, bind, train).relu();
                    let hm = stack.head.forward(feat, bind);
                    outputs.push(hm);
                    if let (Some(rf), Some(rh)) = (&stack.remap_feat, &stack.remap_hm) {
                        trunk = trunk.add(rf.forward(feat, bind)).add(rh.forward(hm, bind));
                    }
                }
                outputs
            }
            Arch::Simple { down, bottleneck, up, head } => {
                for stage in down {
                    h = stage.forward(h, bind, train).relu();
                }
                for block in bottleneck {
                    h = block.forward(h, bind, train);
                }
                for stage in up {
                    h = stage.forward(h.upsample2(), bind, train).relu();
                }
                vec![head.forward(h, bind)]
            }
        }
    }

    /// Inference (eval-mode batch norm): final-stack heatmaps only.
    pub fn infer(&self, batch: &Array4<f64>) -> Array4<f64> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.store);
        let x = tape.leaf(batch.clone().into_dyn());
        let outputs = self.forward(x, &bind, false);
        let last = outputs.last().expect("network emits at least one stack");
        (*last.value())
            .clone()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("heatmap output not 4-d")
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Exact copy: same config, parameters, and running statistics.
    pub fn deep_clone(&self) -> Self {
        let mut clone = Self::new(&self.cfg, 0).expect("cloning a valid net");
        clone
            .store
            .import(&self.store.export())
            .expect("identical architectures");
        clone
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hourglass_emits_one_map_per_stack() {
        let cfg = PoseNetConfig {
            n_stacks: 2,
            ..PoseNetConfig::toy(Backbone::Hourglass)
        };
        let net = PoseNet::new(&cfg, 0).unwrap();
        let x = Array4::from_elem((3, 1, 64, 48), 0.5);
        let tape = Tape::new();
        let bind = Binding::new(&tape, &net.store);
        let out = net.forward(tape.leaf(x.into_dyn()), &bind, true);
        assert_eq!(out.len(), 2);
        for o in &out {
            assert_eq!(o.shape(), vec![3, 14, 32, 24]);
        }
    }

    #[test]
    fn simple_baseline_shape_contract() {
        let cfg = PoseNetConfig::toy(Backbone::SimpleBaseline);
        let net = PoseNet::new(&cfg, 0).unwrap();
        let hm = net.infer(&Array4::from_elem((2, 1, 64, 48), 0.3));
        assert_eq!(hm.dim(), (2, 14, 32, 24));
    }

    #[test]
    fn toy_hourglass_stays_under_parameter_budget() {
        let cfg = PoseNetConfig {
            channels: 32,
            ..PoseNetConfig::toy(Backbone::Hourglass)
        };
        let net = PoseNet::new(&cfg, 0).unwrap();
        let n = net.param_count();
        assert!(n < 2_000_000, "toy hourglass has {n} params");
        assert!(n > 10_000);
    }

    #[test]
    fn config_validation_catches_bad_geometry() {
        let mut cfg = PoseNetConfig::toy(Backbone::Hourglass);
        cfg.heatmap_dims = (30, 24); // stride mismatch between axes
        assert!(PoseNet::new(&cfg, 0).is_err());

        let mut cfg = PoseNetConfig::toy(Backbone::SimpleBaseline);
        cfg.input_dims = (60, 44);
        cfg.heatmap_dims = (30, 22); // not divisible by 8
        assert!(PoseNet::new(&cfg, 0).is_err());

        let mut cfg = PoseNetConfig::toy(Backbone::Hourglass);
        cfg.input_dims = (48, 48);
        cfg.heatmap_dims = (16, 16); // stride 3: not a power of two
        assert!(PoseNet::new(&cfg, 0).is_err());
    }

    #[test]
    fn clone_matches_bit_for_bit() {
        let net = PoseNet::new(&PoseNetConfig::toy(Backbone::Hourglass), 7).unwrap();
        let clone = net.deep_clone();
        assert_eq!(net.store.content_hash(), clone.store.content_hash());
        let x = Array4::from_elem((1, 1, 64, 48), 0.4);
        let a = net.infer(&x);
        let b = clone.infer(&x);
        assert_eq!(a, b);
    }
}
