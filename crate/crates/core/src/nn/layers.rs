//! Trainable parameter storage and the layer building blocks shared by the
//! translation and pose networks.
//!
//! Parameters live outside any tape in a [`ParamStore`]; each forward pass
//! binds them as tape leaves through a [`Binding`]. Running statistics
//! (batch-norm buffers) are plain named arrays, never differentiated.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;

use super::tape::{channel_stats, GradSink, Tape, Var};

/// Index of a trainable parameter in its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Bridges optimizer gradient slots (construction order) back to ids.
pub fn param_id_from_index(i: usize) -> ParamId {
    ParamId(i)
}

/// Index of a non-trainable buffer (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(usize);

/// Named, ordered collection of trainable parameters and buffers.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<(String, Rc<ArrayD<f64>>)>,
    buffers: Vec<(String, RefCell<ArrayD<f64>>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        self.params.push((name.into(), Rc::new(value)));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> BufferId {
        self.buffers.push((name.into(), RefCell::new(value)));
        BufferId(self.buffers.len() - 1)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total scalar count across all trainable parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn param_value(&self, id: ParamId) -> Rc<ArrayD<f64>> {
        self.params[id.0].1.clone()
    }

    pub fn set_param(&mut self, id: ParamId, value: ArrayD<f64>) {
        debug_assert_eq!(self.params[id.0].1.shape(), value.shape());
        self.params[id.0].1 = Rc::new(value);
    }

    pub fn buffer_value(&self, id: BufferId) -> ArrayD<f64> {
        self.buffers[id.0].1.borrow().clone()
    }

    pub fn set_buffer(&self, id: BufferId, value: ArrayD<f64>) {
        *self.buffers[id.0].1.borrow_mut() = value;
    }

    /// Stable (name, array) listing for checkpoints: parameters then buffers.
    pub fn export(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out: Vec<(String, ArrayD<f64>)> = self
            .params
            .iter()
            .map(|(n, v)| (n.clone(), (**v).clone()))
            .collect();
        out.extend(
            self.buffers
                .iter()
                .map(|(n, v)| (format!("buffer:{n}"), v.borrow().clone())),
        );
        out
    }

    /// Restores from a checkpoint listing; names and shapes must match the
    /// freshly-constructed architecture exactly.
    pub fn import(&mut self, entries: &[(String, ArrayD<f64>)]) -> Result<(), String> {
        let mut by_name: HashMap<&str, &ArrayD<f64>> =
            entries.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for (name, slot) in &mut self.params {
            let v = by_name
                .remove(name.as_str())
                .ok_or_else(|| format!("missing parameter {name}"))?;
            if v.shape() != slot.shape() {
                return Err(format!(
                    "parameter {name}: shape {:?} != expected {:?}",
                    v.shape(),
                    slot.shape()
                ));
            }
            *slot = Rc::new(v.clone());
        }
        for (name, slot) in &self.buffers {
            let key = format!("buffer:{name}");
            let v = by_name
                .remove(key.as_str())
                .ok_or_else(|| format!("missing buffer {name}"))?;
            if v.shape() != slot.borrow().shape() {
                return Err(format!("buffer {name}: shape mismatch"));
            }
            *slot.borrow_mut() = v.clone();
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(format!("unexpected entry {extra}"));
        }
        Ok(())
    }

    /// Deep copy; the clone owns fresh arrays (no sharing with `self`).
    pub fn deep_clone(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(n, v)| (n.clone(), Rc::new((**v).clone())))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(n, v)| (n.clone(), RefCell::new(v.borrow().clone())))
                .collect(),
        }
    }

    /// FNV-1a hash over every parameter and buffer byte, for freeze checks.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, v) in self.export() {
            eat(name.as_bytes());
            for x in v.iter() {
                eat(&x.to_le_bytes());
            }
        }
        h
    }
}

/// Per-forward-pass binding of store parameters onto a tape.
pub struct Binding<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'t, 's> Binding<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.params.len()]),
        }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        let mut vars = self.vars.borrow_mut();
        if let Some(v) = vars[id.0] {
            return v;
        }
        let v = self.tape.leaf_shared(self.store.param_value(id));
        vars[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Collects gradients per parameter id after a backward sweep.
    /// Unbound or unreached parameters yield `None`.
    pub fn gradients(&self, sink: &GradSink) -> Vec<Option<ArrayD<f64>>> {
        self.vars
            .borrow()
            .iter()
            .map(|slot| slot.and_then(|v| sink.grad(v).cloned()))
            .collect()
    }
}

/// He-uniform initialization (for relu-family activations).
pub fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound))
}

/// Xavier-uniform initialization (for tanh/sigmoid outputs).
pub fn xavier_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound))
}

/// 2-D convolution layer with optional bias.
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add_param(
            format!("{name}.weight"),
            he_uniform(rng, &[out_c, in_c, kernel, kernel], fan_in),
        );
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out_c]))));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>) -> Var<'t> {
        let y = x.conv2d(bind.var(self.weight), self.stride, self.pad);
        match self.bias {
            Some(b) => y.bias_channels(bind.var(b)),
            None => y,
        }
    }
}

/// Fully-connected layer.
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, in_f: usize, out_f: usize) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            xavier_uniform(rng, &[in_f, out_f], in_f, out_f),
        );
        let bias = store.add_param(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out_f])));
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>) -> Var<'t> {
        x.matmul(bind.var(self.weight)).bias_rows(bind.var(self.bias))
    }
}

/// Batch normalization with running statistics.
///
/// Train mode normalizes by batch statistics and folds them into the
/// running buffers; eval mode normalizes by the stored running statistics.
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub run_mean: BufferId,
    pub run_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add_param(format!("{name}.gamma"), ArrayD::from_elem(IxDyn(&[channels]), 1.0));
        let beta = store.add_param(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[channels])));
        let run_mean = store.add_buffer(format!("{name}.run_mean"), ArrayD::zeros(IxDyn(&[channels])));
        let run_var = store.add_buffer(format!("{name}.run_var"), ArrayD::from_elem(IxDyn(&[channels]), 1.0));
        Self {
            gamma,
            beta,
            run_mean,
            run_var,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>, train: bool) -> Var<'t> {
        let gamma = bind.var(self.gamma);
        let beta = bind.var(self.beta);
        if train {
            let (mean, var) = channel_stats(&x.value());
            // fold batch stats into the running buffers
            let store = bind.store();
            let mut rm = store.buffer_value(self.run_mean);
            let mut rv = store.buffer_value(self.run_var);
            let m = self.momentum;
            rm.zip_mut_with(&mean.clone().into_dyn(), |r, &b| *r = (1.0 - m) * *r + m * b);
            rv.zip_mut_with(&var.clone().into_dyn(), |r, &b| *r = (1.0 - m) * *r + m * b);
            store.set_buffer(self.run_mean, rm);
            store.set_buffer(self.run_var, rv);
            x.batch_norm_train(gamma, beta, self.eps)
        } else {
            let rm = to1(bind.store().buffer_value(self.run_mean));
            let rv = to1(bind.store().buffer_value(self.run_var));
            x.batch_norm_eval(gamma, beta, &rm, &rv, self.eps)
        }
    }
}

/// Instance normalization (no running statistics), the GAN-side norm.
pub struct InstanceNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl InstanceNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add_param(format!("{name}.gamma"), ArrayD::from_elem(IxDyn(&[channels]), 1.0));
        let beta = store.add_param(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[channels])));
        Self { gamma, beta, eps: 1e-5 }
    }

    pub fn forward<'t>(&self, x: Var<'t>, bind: &Binding<'t, '_>) -> Var<'t> {
        x.instance_norm(bind.var(self.gamma), bind.var(self.beta), self.eps)
    }
}

fn to1(v: ArrayD<f64>) -> Array1<f64> {
    v.into_dimensionality::<ndarray::Ix1>().expect("buffer not 1-d")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn export_import_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let _conv = Conv2d::new(&mut store, &mut rng, "c", 1, 4, 3, 1, 1, true);
        let _bn = BatchNorm2d::new(&mut store, "bn", 4);
        let snapshot = store.export();

        let mut rng2 = ChaCha12Rng::seed_from_u64(99);
        let mut store2 = ParamStore::new();
        let _conv2 = Conv2d::new(&mut store2, &mut rng2, "c", 1, 4, 3, 1, 1, true);
        let _bn2 = BatchNorm2d::new(&mut store2, "bn", 4);
        assert_ne!(store2.content_hash(), store.content_hash());
        store2.import(&snapshot).unwrap();
        assert_eq!(store2.content_hash(), store.content_hash());

        // architecture mismatch is rejected
        let mut store3 = ParamStore::new();
        let _conv3 = Conv2d::new(&mut store3, &mut rng2, "c", 1, 5, 3, 1, 1, true);
        assert!(store3.import(&snapshot).is_err());
    }

    #[test]
    fn deep_clone_is_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, &mut rng, "c", 1, 2, 3, 1, 1, false);
        let clone = store.deep_clone();
        assert_eq!(clone.content_hash(), store.content_hash());
        store.set_param(conv.weight, ArrayD::zeros(IxDyn(&[2, 1, 3, 3])));
        assert_ne!(clone.content_hash(), store.content_hash());
    }

    #[test]
    fn batch_norm_updates_running_stats_in_train_only() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 2, 4, 4]), |_| rng.gen_range(0.0..2.0));

        let before = store.buffer_value(bn.run_mean);
        {
            let tape = Tape::new();
            let bind = Binding::new(&tape, &store);
            let xv = tape.leaf(x.clone());
            let _ = bn.forward(xv, &bind, false);
        }
        assert_eq!(store.buffer_value(bn.run_mean), before);
        {
            let tape = Tape::new();
            let bind = Binding::new(&tape, &store);
            let xv = tape.leaf(x);
            let _ = bn.forward(xv, &bind, true);
        }
        assert_ne!(store.buffer_value(bn.run_mean), before);
    }
}
