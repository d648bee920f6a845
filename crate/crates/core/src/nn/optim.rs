//! Adaptive-moment optimizer with bias correction.

use ndarray::ArrayD;

use super::layers::ParamStore;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Option<ArrayD<f64>>>,
    v: Vec<Option<ArrayD<f64>>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self::with_betas(lr, 0.9, 0.999, num_params)
    }

    /// GAN training conventionally runs with beta1 = 0.5.
    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m: (0..num_params).map(|_| None).collect(),
            v: (0..num_params).map(|_| None).collect(),
            t: 0,
        }
    }

    /// One update over all parameters with available gradients.
    ///
    /// `grads[i]` pairs with parameter id `i` in construction order;
    /// parameters without a gradient this step keep their moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<ArrayD<f64>>]) {
        assert_eq!(grads.len(), self.m.len(), "gradient slot count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = super::layers::param_id_from_index(i);
            let value = store.param_value(id);
            let m = self.m[i].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self.v[i].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            m.zip_mut_with(g, |mv, &gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
            v.zip_mut_with(g, |vv, &gv| *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv);
            let mut next = (*value).clone();
            ndarray::Zip::from(&mut next)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mv, &vv| {
                    let m_hat = mv / bc1;
                    let v_hat = vv / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
            store.set_param(id, next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{param_id_from_index, ParamStore};
    use ndarray::{arr1, IxDyn};

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add_param("w", arr1(&[1.0, -2.0, 3.0]).into_dyn());
        let before = store.param_value(id);
        let mut opt = Adam::new(0.0, store.num_params());
        let grads = vec![Some(arr1(&[0.5, 0.5, 0.5]).into_dyn())];
        opt.step(&mut store, &grads);
        let after = store.param_value(id);
        for (a, b) in after.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_lr_magnitude() {
        // with bias correction, |Δ| ≈ lr for any nonzero gradient
        let mut store = ParamStore::new();
        let id = store.add_param("w", ArrayD::zeros(IxDyn(&[2])));
        let mut opt = Adam::new(0.01, 1);
        let grads = vec![Some(arr1(&[3.0, -0.2]).into_dyn())];
        opt.step(&mut store, &grads);
        let p = store.param_value(id);
        assert!((p[[0]] + 0.01).abs() < 1e-6);
        assert!((p[[1]] - 0.01).abs() < 1e-6);
        let _ = param_id_from_index(0);
    }

    #[test]
    fn descends_a_quadratic() {
        // minimize f(w) = (w - 3)^2 from w = 0
        let mut store = ParamStore::new();
        let id = store.add_param("w", arr1(&[0.0]).into_dyn());
        let mut opt = Adam::new(0.1, 1);
        for _ in 0..500 {
            let w = store.param_value(id)[[0]];
            let g = arr1(&[2.0 * (w - 3.0)]).into_dyn();
            opt.step(&mut store, &[Some(g)]);
        }
        let w = store.param_value(id)[[0]];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }
}
