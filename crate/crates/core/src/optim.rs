//! SGD with momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Sgd<F> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn velocity(&self, index: usize) -> Option<&Tensor<F>> {
        self.velocity.get(index).and_then(Option::as_ref)
    }

    /// `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v` for every parameter. The
    /// gradients are consumed.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: Vec<Option<Tensor<F>>>, lr: f64) -> Result<()> {
        self.step_selected(params, grads, lr, |_| true)
    }

    /// As [`Sgd::step`], but parameters for which `select(name)` is false are
    /// left untouched, velocity included, and need no gradient.
    pub fn step_selected(
        &mut self,
        params: &mut ParamStore<F>,
        grads: Vec<Option<Tensor<F>>>,
        lr: f64,
        select: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        // validate before mutating anything
        for (&id, g) in ids.iter().zip(&grads) {
            if select(params.name(id)) && g.is_none() {
                return Err(Error::MissingGradient(params.name(id).to_string()));
            }
        }
        self.velocity.resize_with(params.len(), || None);
        let (mu, wd, lr) = (F::from_f64(self.momentum), F::from_f64(self.weight_decay), F::from_f64(lr));
        for (id, g) in ids.into_iter().zip(grads) {
            if !select(params.name(id)) {
                continue;
            }
            let g = g.expect("checked above");
            let p = params.get_mut(id);
            let v = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for ((vv, pv), &gv) in v.data_mut().iter_mut().zip(p.data_mut().iter_mut()).zip(g.data()) {
                *vv = mu * *vv + (gv + wd * *pv);
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(&[1], &[v]).unwrap()).unwrap();
        s
    }

    fn grad(v: f64) -> Vec<Option<Tensor<f64>>> {
        vec![Some(Tensor::from_f64(&[1], &[v]).unwrap())]
    }

    #[test]
    fn plain_descent() {
        let mut p = store(1.0);
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step(&mut p, grad(0.5), 0.1).unwrap();
        assert!((p.get(p.find("w").unwrap()).data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn velocity_decays_without_gradient() {
        let mut p = store(0.0);
        let mut opt = Sgd::new(0.9, 0.0);
        // first step with g = 1 and lr = 1 leaves v = 1 and θ = −1
        opt.step(&mut p, grad(1.0), 1.0).unwrap();
        let before = p.get(p.find("w").unwrap()).data()[0];
        opt.step(&mut p, grad(0.0), 0.1).unwrap();
        let after = p.get(p.find("w").unwrap()).data()[0];
        assert!((before - after - 0.1 * 0.9).abs() < 1e-15);
    }

    #[test]
    fn two_steps_constant_gradient() {
        let (lr, g) = (0.1, 2.0);
        let mut p = store(0.0);
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(&mut p, grad(g), lr).unwrap();
        opt.step(&mut p, grad(g), lr).unwrap();
        let disp = -p.get(p.find("w").unwrap()).data()[0];
        assert!((disp - lr * g * (1.0 + 1.9)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let mut p = store(2.0);
        let mut opt = Sgd::new(0.0, 0.5);
        opt.step(&mut p, grad(0.0), 0.1).unwrap();
        assert!((p.get(p.find("w").unwrap()).data()[0] - (2.0 - 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_and_bad_lr() {
        let mut p = store(1.0);
        let mut opt = Sgd::new(0.9, 0.0);
        assert!(matches!(opt.step(&mut p, vec![None], 0.1), Err(Error::MissingGradient(n)) if n == "w"));
        assert!(opt.step(&mut p, grad(1.0), 0.0).is_err());
        opt.step_selected(&mut p, vec![None], 0.1, |_| false).unwrap();
        assert_eq!(p.get(p.find("w").unwrap()).data()[0], 1.0);
    }
}
