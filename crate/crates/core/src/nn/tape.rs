//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! A [`Tape`] records one forward pass; [`Var`] is a copyable handle into it.
//! Values are immutable `Rc` arrays, so backward closures capture what they
//! need by reference count instead of deep copies. Nodes only ever reference
//! earlier nodes, so the tape order is already topological and
//! [`Tape::backward`] is a single reverse sweep. Everything is f64 and
//! strictly sequential, which keeps runs bit-reproducible.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn};

use super::ops;

type Value = Rc<ArrayD<f64>>;
type BackFn = Box<dyn Fn(&ArrayD<f64>, &mut GradSink)>;

struct Node {
    value: Value,
    back: Option<BackFn>,
}

/// Gradient accumulator indexed by node id.
pub struct GradSink {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl GradSink {
    fn new(len: usize) -> Self {
        Self {
            grads: (0..len).map(|_| None).collect(),
        }
    }

    fn accumulate(&mut self, id: usize, g: ArrayD<f64>) {
        match &mut self.grads[id] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    pub fn grad(&self, var: Var<'_>) -> Option<&ArrayD<f64>> {
        self.grads[var.id].as_ref()
    }
}

/// One recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Value, back: Option<BackFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// New leaf (no gradient flows past it).
    pub fn leaf(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(Rc::new(value), None)
    }

    pub fn leaf_shared(&self, value: Value) -> Var<'_> {
        self.push(value, None)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: Var<'_>) -> GradSink {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut sink = GradSink::new(nodes.len());
        sink.grads[root.id] = Some(ArrayD::from_elem(nodes[root.id].value.raw_dim(), 1.0));
        for id in (0..=root.id).rev() {
            if sink.grads[id].is_none() {
                continue;
            }
            if let Some(back) = &nodes[id].back {
                let g = sink.grads[id].take().unwrap();
                back(&g, &mut sink);
                sink.grads[id] = Some(g);
            }
        }
        sink
    }
}

fn same_tape(a: Var<'_>, b: Var<'_>) {
    debug_assert!(std::ptr::eq(a.tape, b.tape), "vars from different tapes");
}

// combinator names mirror the math; operator traits would hide the tape
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn value(&self) -> Value {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Reads a scalar node.
    pub fn scalar_value(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.len(), 1, "scalar_value on non-scalar node");
        v.sum()
    }

    fn unary(
        self,
        value: ArrayD<f64>,
        back: impl Fn(&ArrayD<f64>) -> ArrayD<f64> + 'static,
    ) -> Var<'t> {
        let pid = self.id;
        self.tape.push(
            Rc::new(value),
            Some(Box::new(move |g, sink| sink.accumulate(pid, back(g)))),
        )
    }

    /// Cuts the graph: value flows, gradient does not.
    pub fn detach(self) -> Var<'t> {
        let v = self.value();
        self.tape.leaf_shared(v)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        debug_assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            Rc::new(&*a + &*b),
            Some(Box::new(move |g, sink| {
                sink.accumulate(ia, g.clone());
                sink.accumulate(ib, g.clone());
            })),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        debug_assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            Rc::new(&*a - &*b),
            Some(Box::new(move |g, sink| {
                sink.accumulate(ia, g.clone());
                sink.accumulate(ib, g.mapv(|v| -v));
            })),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        debug_assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let (ia, ib) = (self.id, other.id);
        let (ac, bc) = (a.clone(), b.clone());
        self.tape.push(
            Rc::new(&*a * &*b),
            Some(Box::new(move |g, sink| {
                sink.accumulate(ia, g * &*bc);
                sink.accumulate(ib, g * &*ac);
            })),
        )
    }

    /// y = a * mul + add (scalars); covers negation and constant shifts.
    pub fn affine(self, mul: f64, add: f64) -> Var<'t> {
        let a = self.value();
        self.unary(a.mapv(|v| v * mul + add), move |g| g.mapv(|v| v * mul))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.affine(c, 0.0)
    }

    pub fn square(self) -> Var<'t> {
        let a = self.value();
        let ac = a.clone();
        self.unary(a.mapv(|v| v * v), move |g| g * &ac.mapv(|v| 2.0 * v))
    }

    pub fn abs(self) -> Var<'t> {
        let a = self.value();
        let ac = a.clone();
        self.unary(a.mapv(f64::abs), move |g| {
            g * &ac.mapv(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        })
    }

    /// Natural log; caller guarantees strictly positive inputs.
    pub fn ln(self) -> Var<'t> {
        let a = self.value();
        let ac = a.clone();
        self.unary(a.mapv(f64::ln), move |g| g / &*ac)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let a = self.value();
        let y = a.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let yc = y.clone();
        self.unary(y, move |g| g * &yc.mapv(|s| s * (1.0 - s)))
    }

    pub fn tanh(self) -> Var<'t> {
        let a = self.value();
        let y = a.mapv(f64::tanh);
        let yc = y.clone();
        self.unary(y, move |g| g * &yc.mapv(|t| 1.0 - t * t))
    }

    pub fn relu(self) -> Var<'t> {
        let a = self.value();
        let ac = a.clone();
        self.unary(a.mapv(|v| v.max(0.0)), move |g| {
            g * &ac.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let a = self.value();
        let ac = a.clone();
        self.unary(a.mapv(|v| if v > 0.0 { v } else { slope * v }), move |g| {
            g * &ac.mapv(|v| if v > 0.0 { 1.0 } else { slope })
        })
    }

    /// Full reduction to a 0-dim scalar node.
    pub fn sum_all(self) -> Var<'t> {
        let a = self.value();
        let dims = a.raw_dim();
        let total = a.sum();
        let pid = self.id;
        self.tape.push(
            Rc::new(ArrayD::from_elem(IxDyn(&[]), total)),
            Some(Box::new(move |g, sink| {
                let gs = g.sum();
                sink.accumulate(pid, ArrayD::from_elem(dims.clone(), gs));
            })),
        )
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        same_tape(self, other);
        let a = self.value();
        let b = other.value();
        let a2 = a.view().into_dimensionality::<ndarray::Ix2>().expect("matmul lhs not 2-d").to_owned();
        let b2 = b.view().into_dimensionality::<ndarray::Ix2>().expect("matmul rhs not 2-d").to_owned();
        let y = a2.dot(&b2);
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                sink.accumulate(ia, g2.dot(&b2.t()).into_dyn());
                sink.accumulate(ib, a2.t().dot(&g2).into_dyn());
            })),
        )
    }

    /// NCHW convolution against OIHW weights.
    pub fn conv2d(self, weight: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
        same_tape(self, weight);
        let x = self.value();
        let w = weight.value();
        let y = ops::conv2d_forward(&as4v(&x), &as4v(&w), stride, pad);
        let (ix, iw) = (self.id, weight.id);
        let (xc, wc) = (x.clone(), w.clone());
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                let g4 = as4v(g);
                let x4 = as4v(&xc);
                let w4 = as4v(&wc);
                let gx = ops::conv2d_backward_input(&w4, &g4, x4.dim(), stride, pad);
                let gw = ops::conv2d_backward_weight(&x4, &g4, w4.dim(), stride, pad);
                sink.accumulate(ix, gx.into_dyn());
                sink.accumulate(iw, gw.into_dyn());
            })),
        )
    }

    /// Adds a per-channel bias to an NCHW tensor.
    pub fn bias_channels(self, bias: Var<'t>) -> Var<'t> {
        same_tape(self, bias);
        let x = self.value();
        let b = bias.value();
        let b1 = b.view().into_dimensionality::<ndarray::Ix1>().expect("bias not 1-d").to_owned();
        let mut y = as4v(&x).to_owned();
        for (c, &bv) in b1.iter().enumerate() {
            y.index_axis_mut(Axis(1), c).mapv_inplace(|v| v + bv);
        }
        let (ix, ib) = (self.id, bias.id);
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                sink.accumulate(ix, g.clone());
                sink.accumulate(ib, ops::sum_over_nhw(&as4v(g)).into_dyn());
            })),
        )
    }

    /// Adds a per-feature bias to an (N, F) matrix.
    pub fn bias_rows(self, bias: Var<'t>) -> Var<'t> {
        same_tape(self, bias);
        let x = self.value();
        let b = bias.value();
        let x2 = x.view().into_dimensionality::<ndarray::Ix2>().expect("bias_rows lhs not 2-d").to_owned();
        let b1 = b.view().into_dimensionality::<ndarray::Ix1>().expect("bias not 1-d").to_owned();
        let y = &x2 + &b1;
        let (ix, ib) = (self.id, bias.id);
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                sink.accumulate(ix, g.clone());
                sink.accumulate(ib, g2.sum_axis(Axis(0)).into_dyn());
            })),
        )
    }

    pub fn max_pool2(self) -> Var<'t> {
        let x = self.value();
        let (y, idx) = {
            let x4 = as4v(&x);
            ops::max_pool2_forward(&x4)
        };
        let dims = as4v(&x).dim();
        let pid = self.id;
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                sink.accumulate(pid, ops::max_pool2_backward(&as4v(g), &idx, dims).into_dyn());
            })),
        )
    }

    pub fn upsample2(self) -> Var<'t> {
        let x = self.value();
        let y = ops::upsample2_forward(&as4v(&x));
        let pid = self.id;
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                sink.accumulate(pid, ops::upsample2_backward(&as4v(g)).into_dyn());
            })),
        )
    }

    /// Batch normalization over (N, H, W) per channel, batch statistics.
    /// Returns the normalized output; the caller owns running-stat updates
    /// (they are not part of the differentiated graph).
    pub fn batch_norm_train(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Var<'t> {
        self.norm_with_stats(gamma, beta, eps, NormScope::Batch)
    }

    /// Normalization per (N, C) instance over H, W.
    pub fn instance_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Var<'t> {
        self.norm_with_stats(gamma, beta, eps, NormScope::Instance)
    }

    /// Inference-mode batch norm against fixed running statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        run_mean: &Array1<f64>,
        run_var: &Array1<f64>,
        eps: f64,
    ) -> Var<'t> {
        same_tape(self, gamma);
        same_tape(self, beta);
        let x = self.value();
        let g_val = gamma.value();
        let b_val = beta.value();
        let x4 = as4v(&x);
        let (nb, c, h, w) = x4.dim();
        let hw = h * w;
        let gamma1 = g_val.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let beta1 = b_val.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let x_std = x4.as_standard_layout();
        let xs = x_std.as_slice().unwrap();

        let mut y = vec![0.0; nb * c * hw];
        let mut xhat = vec![0.0; nb * c * hw];
        let inv_std: Vec<f64> = (0..c).map(|ci| 1.0 / (run_var[ci] + eps).sqrt()).collect();
        for n in 0..nb {
            for ci in 0..c {
                let at = (n * c + ci) * hw;
                let (m, inv, ga, be) = (run_mean[ci], inv_std[ci], gamma1[ci], beta1[ci]);
                for i in at..at + hw {
                    let xh = (xs[i] - m) * inv;
                    xhat[i] = xh;
                    y[i] = ga * xh + be;
                }
            }
        }
        let y = Array4::from_shape_vec((nb, c, h, w), y).unwrap();

        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                let g4 = as4v(g);
                let g_std = g4.as_standard_layout();
                let gs = g_std.as_slice().unwrap();
                let mut gx = vec![0.0; nb * c * hw];
                let mut ggamma = Array1::zeros(c);
                let mut gbeta = Array1::zeros(c);
                for n in 0..nb {
                    for ci in 0..c {
                        let at = (n * c + ci) * hw;
                        let scale = gamma1[ci] * inv_std[ci];
                        let (mut sg, mut sgx) = (0.0, 0.0);
                        for i in at..at + hw {
                            let gv = gs[i];
                            gx[i] = gv * scale;
                            sg += gv;
                            sgx += gv * xhat[i];
                        }
                        gbeta[ci] += sg;
                        ggamma[ci] += sgx;
                    }
                }
                let gx = Array4::from_shape_vec((nb, c, h, w), gx).unwrap();
                sink.accumulate(ix, gx.into_dyn());
                sink.accumulate(ig, ggamma.into_dyn());
                sink.accumulate(ib, gbeta.into_dyn());
            })),
        )
    }

    fn norm_with_stats(self, gamma: Var<'t>, beta: Var<'t>, eps: f64, scope: NormScope) -> Var<'t> {
        same_tape(self, gamma);
        same_tape(self, beta);
        let x = self.value();
        let g_val = gamma.value();
        let b_val = beta.value();
        let x4 = as4v(&x);
        let (nb, c, h, w) = x4.dim();
        let hw = h * w;
        let gamma1 = g_val.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let beta1 = b_val.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let x_std = x4.as_standard_layout();
        let xs = x_std.as_slice().unwrap();

        // group = set of planes normalized together: (channel, batch rows)
        let groups: Vec<(usize, Vec<usize>)> = match scope {
            NormScope::Batch => (0..c).map(|ci| (ci, (0..nb).collect())).collect(),
            NormScope::Instance => (0..c)
                .flat_map(|ci| (0..nb).map(move |n| (ci, vec![n])))
                .collect(),
        };

        let mut y = vec![0.0; nb * c * hw];
        let mut xhat = vec![0.0; nb * c * hw];
        let mut inv_stds = Vec::with_capacity(groups.len());
        for (ci, ns) in &groups {
            let m = (ns.len() * hw) as f64;
            let mut mean = 0.0;
            for &n in ns {
                let at = (n * c + ci) * hw;
                mean += xs[at..at + hw].iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for &n in ns {
                let at = (n * c + ci) * hw;
                var += xs[at..at + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= m;
            let inv = 1.0 / (var + eps).sqrt();
            inv_stds.push(inv);
            let (ga, be) = (gamma1[*ci], beta1[*ci]);
            for &n in ns {
                let at = (n * c + ci) * hw;
                for i in at..at + hw {
                    let xh = (xs[i] - mean) * inv;
                    xhat[i] = xh;
                    y[i] = ga * xh + be;
                }
            }
        }
        let y = Array4::from_shape_vec((nb, c, h, w), y).unwrap();

        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        self.tape.push(
            Rc::new(y.into_dyn()),
            Some(Box::new(move |g, sink| {
                let g4 = as4v(g);
                let g_std = g4.as_standard_layout();
                let gs = g_std.as_slice().unwrap();
                let mut gx = vec![0.0; nb * c * hw];
                let mut ggamma = Array1::zeros(c);
                let mut gbeta = Array1::zeros(c);
                for (gi, (ci, ns)) in groups.iter().enumerate() {
                    let m = (ns.len() * hw) as f64;
                    let inv = inv_stds[gi];
                    // means of g and g*xhat over the group
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for &n in ns {
                        let at = (n * c + ci) * hw;
                        for i in at..at + hw {
                            sg += gs[i];
                            sgx += gs[i] * xhat[i];
                        }
                    }
                    gbeta[*ci] += sg;
                    ggamma[*ci] += sgx;
                    let g_mean = sg / m;
                    let gx_mean = sgx / m;
                    let scale = gamma1[*ci] * inv;
                    for &n in ns {
                        let at = (n * c + ci) * hw;
                        for i in at..at + hw {
                            gx[i] = scale * (gs[i] - g_mean - xhat[i] * gx_mean);
                        }
                    }
                }
                let gx = Array4::from_shape_vec((nb, c, h, w), gx).unwrap();
                sink.accumulate(ix, gx.into_dyn());
                sink.accumulate(ig, ggamma.into_dyn());
                sink.accumulate(ib, gbeta.into_dyn());
            })),
        )
    }
}

#[derive(Clone, Copy)]
enum NormScope {
    Batch,
    Instance,
}

/// Batch statistics of an NCHW tensor per channel: (mean, biased variance).
pub fn channel_stats(x: &ArrayD<f64>) -> (Array1<f64>, Array1<f64>) {
    let x4 = as4v(x);
    let (nb, c, h, w) = x4.dim();
    let hw = h * w;
    let m = (nb * hw) as f64;
    let x_std = x4.as_standard_layout();
    let xs = x_std.as_slice().unwrap();
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ci in 0..c {
        let mut acc = 0.0;
        for n in 0..nb {
            let at = (n * c + ci) * hw;
            acc += xs[at..at + hw].iter().sum::<f64>();
        }
        mean[ci] = acc / m;
        let mu = mean[ci];
        let mut vacc = 0.0;
        for n in 0..nb {
            let at = (n * c + ci) * hw;
            vacc += xs[at..at + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
        var[ci] = vacc / m;
    }
    (mean, var)
}

fn as4v(x: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    x.view()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("expected a 4-d NCHW tensor")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    // Central finite-difference check on an arbitrary graph builder.
    fn grad_check<F>(build: F, inputs: &[ArrayD<f64>], tol: f64)
    where
        F: Fn(&Tape, &[Var<'_>]) -> f64,
    {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let root_val = build(&tape, &vars);
        // find root: last node
        let root = Var { tape: &tape, id: tape.len() - 1 };
        assert!((root.scalar_value() - root_val).abs() < 1e-12);
        let sink = tape.backward(root);

        let h = 1e-6;
        for (vi, input) in inputs.iter().enumerate() {
            let analytic = sink.grad(vars[vi]).cloned().unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
            for flat in 0..input.len() {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[vi].as_slice_mut().unwrap()[flat] += h;
                minus[vi].as_slice_mut().unwrap()[flat] -= h;
                let tp = Tape::new();
                let vp: Vec<Var<'_>> = plus.iter().map(|v| tp.leaf(v.clone())).collect();
                let fp = build(&tp, &vp);
                let tm = Tape::new();
                let vm: Vec<Var<'_>> = minus.iter().map(|v| tm.leaf(v.clone())).collect();
                let fm = build(&tm, &vm);
                let num = (fp - fm) / (2.0 * h);
                let ana = analytic.as_slice().unwrap()[flat];
                let denom = num.abs().max(ana.abs()).max(1e-8);
                assert!(
                    (num - ana).abs() / denom < tol,
                    "input {vi} flat {flat}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn elementwise_chain_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| rng.gen_range(0.3..1.5));
        let b = ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| rng.gen_range(0.3..1.5));
        grad_check(
            |_t, v| {
                let x = v[0].mul(v[1]).sigmoid().ln().abs();
                let y = v[0].tanh().add(v[1].relu());
                x.add(y.square()).sum_all().scalar_value()
            },
            &[a, b],
            1e-5,
        );
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let a = arr2(&[[0.5, -0.3], [0.2, 0.9], [-0.4, 0.1]]).into_dyn();
        let w = arr2(&[[0.7, -0.2, 0.4], [0.1, 0.3, -0.5]]).into_dyn();
        let b = arr1(&[0.05, -0.02, 0.3]).into_dyn();
        grad_check(
            |_t, v| {
                v[0].matmul(v[1])
                    .bias_rows(v[2])
                    .tanh()
                    .square()
                    .sum_all()
                    .scalar_value()
            },
            &[a, w, b],
            1e-5,
        );
    }

    #[test]
    fn conv_pool_upsample_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 2, 4, 4]), |_| rng.gen_range(-1.0..1.0));
        let w = ArrayD::from_shape_fn(IxDyn(&[3, 2, 3, 3]), |_| rng.gen_range(-0.6..0.6));
        let b = ArrayD::from_shape_fn(IxDyn(&[3]), |_| rng.gen_range(-0.2..0.2));
        grad_check(
            |_t, v| {
                v[0].conv2d(v[1], 1, 1)
                    .bias_channels(v[2])
                    .leaky_relu(0.2)
                    .max_pool2()
                    .upsample2()
                    .square()
                    .sum_all()
                    .scalar_value()
            },
            &[x, w, b],
            1e-5,
        );
    }

    #[test]
    fn norm_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4, 4]), |_| rng.gen_range(-1.0..1.0));
        let gamma = ArrayD::from_shape_fn(IxDyn(&[3]), |_| rng.gen_range(0.5..1.5));
        let beta = ArrayD::from_shape_fn(IxDyn(&[3]), |_| rng.gen_range(-0.3..0.3));
        // tanh breaks the Σ x̂² = const degeneracy of pure normalization
        grad_check(
            |_t, v| {
                v[0].batch_norm_train(v[1], v[2], 1e-5)
                    .tanh()
                    .sum_all()
                    .scalar_value()
            },
            &[x.clone(), gamma.clone(), beta.clone()],
            1e-4,
        );
        grad_check(
            |_t, v| {
                v[0].instance_norm(v[1], v[2], 1e-5)
                    .tanh()
                    .sum_all()
                    .scalar_value()
            },
            &[x, gamma, beta],
            1e-4,
        );
    }

    #[test]
    fn eval_norm_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 2, 3, 3]), |_| rng.gen_range(-1.0..1.0));
        let gamma = ArrayD::from_shape_fn(IxDyn(&[2]), |_| rng.gen_range(0.5..1.5));
        let beta = ArrayD::from_shape_fn(IxDyn(&[2]), |_| rng.gen_range(-0.3..0.3));
        let rm = arr1(&[0.1, -0.2]);
        let rv = arr1(&[0.9, 1.2]);
        grad_check(
            move |_t, v| {
                v[0].batch_norm_eval(v[1], v[2], &rm, &rv, 1e-5)
                    .square()
                    .sum_all()
                    .scalar_value()
            },
            &[x, gamma, beta],
            1e-5,
        );
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(arr1(&[2.0, 3.0]).into_dyn());
        let d = a.detach();
        let loss = d.mul(a).sum_all();
        let sink = tape.backward(loss);
        // d treated as constant: dL/da = d_value = [2, 3]
        let g = sink.grad(a).unwrap();
        assert_eq!(g.as_slice().unwrap(), &[2.0, 3.0]);
        assert!(sink.grad(d).is_some()); // leaf gets a grad slot but it never reaches `a` twice
    }

    #[test]
    fn reused_node_accumulates_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(arr1(&[1.5]).into_dyn());
        let y = a.add(a).sum_all(); // y = 2a
        let sink = tape.backward(y);
        assert_eq!(sink.grad(a).unwrap().as_slice().unwrap(), &[2.0]);
    }
}
