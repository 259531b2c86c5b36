//! Adam (descent) for the recognizer and RMSProp (ascent) for the critic.

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Decay of the squared-gradient average.
    pub rho: f64,
    /// Added under the square root.
    pub delta: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            rho: 0.9,
            delta: 1e-8,
        }
    }
}

/// Per-parameter moment estimates plus the step counter.
///
/// RMSProp only uses `second`; `first` stays zero for it.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    pub first: Vec<Tensor<F>>,
    pub second: Vec<Tensor<F>>,
    pub step: u64,
}

impl<F: Element> OptimizerState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    fn check(&self, store: &ParamStore<F>) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(TensorError::invalid(
                "optimizer",
                format!("state tracks {} tensors, store has {}", self.first.len(), store.len()),
            ));
        }
        for (i, (_, p)) in store.iter().enumerate() {
            if p.trainable && p.grad.is_none() {
                return Err(TensorError::MissingGrad(p.name.clone()));
            }
            if self.first[i].shape() != p.value.shape() {
                return Err(TensorError::shapes("optimizer", self.first[i].shape(), p.value.shape()));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam step in the descent direction.
pub fn adam_step<F: Element>(store: &mut ParamStore<F>, state: &mut OptimizerState<F>, cfg: &AdamConfig) -> Result<()> {
    state.check(store)?;
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let one = F::one();
    let bc1 = F::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let bc2 = F::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = F::from_f64_lossy(cfg.lr);
    let eps = F::from_f64_lossy(cfg.eps);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = p.grad.as_ref().expect("checked above").data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let w = p.value.data_mut();
        for j in 0..w.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] = w[j] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One RMSProp step in the *ascent* direction: `w <- w + lr * g / sqrt(v + delta)`.
pub fn rmsprop_ascent_step<F: Element>(
    store: &mut ParamStore<F>,
    state: &mut OptimizerState<F>,
    cfg: &RmsPropConfig,
) -> Result<()> {
    state.check(store)?;
    state.step += 1;
    let rho = F::from_f64_lossy(cfg.rho);
    let one = F::one();
    let lr = F::from_f64_lossy(cfg.lr);
    let delta = F::from_f64_lossy(cfg.delta);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = p.grad.as_ref().expect("checked above").data();
        let v = state.second[i].data_mut();
        let w = p.value.data_mut();
        for j in 0..w.len() {
            v[j] = rho * v[j] + (one - rho) * g[j] * g[j];
            w[j] = w[j] + lr * g[j] / (v[j] + delta).sqrt();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(vec![w])).unwrap();
        s.get_mut(id).grad = Some(Tensor::from_vec(vec![g]));
        s
    }

    fn value(s: &ParamStore<f64>) -> f64 {
        s.iter().next().unwrap().1.value.data()[0]
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::from_vec(vec![0.3, -1.2, 7.0])).unwrap();
        s.get_mut(id).grad = Some(Tensor::zeros(&[3]));
        let before = s.value(id).clone();
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(id), &before);
    }

    #[test]
    fn adam_first_step_is_lr_against_gradient() {
        let mut s = scalar_store(0.0, 1.0);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig {
            lr: 0.001,
            ..Default::default()
        };
        adam_step(&mut s, &mut st, &cfg).unwrap();
        // m̂ = 1, v̂ = 1  =>  Δ = -lr / (1 + eps)
        assert!((value(&s) + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_constant_gradient_updates_shrink_toward_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        // Simulate the recursion by hand for two steps with g = 0.5.
        let g: f64 = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        let mut expected = Vec::new();
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            expected.push(cfg.lr * mh / (vh.sqrt() + cfg.eps));
        }
        let mut s = scalar_store(1.0, g);
        let mut st = OptimizerState::new(&s);
        let mut prev = value(&s);
        let mut steps = Vec::new();
        for _ in 0..2 {
            adam_step(&mut s, &mut st, &cfg).unwrap();
            steps.push(prev - value(&s));
            prev = value(&s);
        }
        for (a, e) in steps.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        assert!(steps[1] <= steps[0]);
        assert!(steps.iter().all(|&d| d > 0.0 && d <= cfg.lr * (1.0 + 1e-9)));
    }

    #[test]
    fn rmsprop_moves_up_the_gradient() {
        let mut s = scalar_store(0.0, 2.0);
        let mut st = OptimizerState::new(&s);
        let cfg = RmsPropConfig {
            lr: 0.01,
            rho: 0.9,
            delta: 1e-8,
        };
        rmsprop_ascent_step(&mut s, &mut st, &cfg).unwrap();
        let expected = 0.01 * 2.0 / ((1.0 - 0.9) * 4.0 + 1e-8f64).sqrt();
        assert!(value(&s) > 0.0);
        assert!((value(&s) - expected).abs() < 1e-12);
    }

    #[test]
    fn rmsprop_zero_grad_is_noop_even_with_history() {
        let mut s = scalar_store(0.25, 1.0);
        let mut st = OptimizerState::new(&s);
        let cfg = RmsPropConfig::default();
        rmsprop_ascent_step(&mut s, &mut st, &cfg).unwrap();
        let before = value(&s);
        s.iter_mut().next().unwrap().grad = Some(Tensor::from_vec(vec![0.0]));
        rmsprop_ascent_step(&mut s, &mut st, &cfg).unwrap();
        assert_eq!(value(&s), before);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[1])).unwrap();
        let mut st = OptimizerState::new(&s);
        assert!(matches!(
            adam_step(&mut s, &mut st, &AdamConfig::default()),
            Err(TensorError::MissingGrad(_))
        ));
        assert!(matches!(
            rmsprop_ascent_step(&mut s, &mut st, &RmsPropConfig::default()),
            Err(TensorError::MissingGrad(_))
        ));
    }
}
