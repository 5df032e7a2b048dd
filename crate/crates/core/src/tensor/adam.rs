use std::collections::BTreeMap;

use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightDecay {
    /// L2 penalty added to the gradient before the moment updates.
    Coupled,
    /// Decay applied directly to the parameter (AdamW).
    Decoupled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            decay_mode: WeightDecay::Coupled,
        }
    }
}

/// Moment accumulators, keyed like the parameters they belong to.
#[derive(Clone, Debug, Default)]
pub struct OptimState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Vec<T>>,
    pub second: BTreeMap<String, Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: OptimState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                config.lr
            )));
        }
        Ok(Self {
            config,
            state: OptimState {
                step: 0,
                first: BTreeMap::new(),
                second: BTreeMap::new(),
            },
        })
    }

    /// One Adam update of every parameter that has a gradient.
    ///
    /// Gradients are validated up front, so a non-finite gradient leaves both
    /// parameters and state untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("gradient for unknown parameter {name}"))
            })?;
            if p.shape() != g.shape() {
                return Err(shape_err!(
                    "{name}: gradient {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
        }

        let c = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated above");
            let m = self
                .state
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self
                .state
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let mut pv = pi.f64();
                let mut gv = gi.f64();
                match c.decay_mode {
                    WeightDecay::Coupled => gv += c.weight_decay * pv,
                    WeightDecay::Decoupled => pv -= c.lr * c.weight_decay * pv,
                }
                let mv = c.beta1 * mi.f64() + (1.0 - c.beta1) * gv;
                let vv = c.beta2 * vi.f64() + (1.0 - c.beta2) * gv * gv;
                *mi = T::of(mv);
                *vi = T::of(vv);
                pv -= c.lr * (mv / bc1) / ((vv / bc2).sqrt() + c.eps);
                *pi = T::of(pv);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(v))])
    }

    fn cfg(weight_decay: f64) -> AdamConfig {
        AdamConfig {
            weight_decay,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut adam = Adam::new(cfg(0.0)).unwrap();
        let mut p = single(0.7);
        adam.step(&mut p, &single(0.0)).unwrap();
        assert_eq!(p["w"].item().unwrap(), 0.7);
        assert_eq!(adam.state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0, -0.02] {
            let mut adam = Adam::new(cfg(0.0)).unwrap();
            let mut p = single(1.0);
            adam.step(&mut p, &single(g)).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
            let moved = p["w"].item().unwrap() - 1.0;
            assert!((moved + 1e-3 * g.signum()).abs() < 1e-9, "moved {moved}");
        }
    }

    #[test]
    fn decay_alone_shrinks_parameters() {
        for mode in [WeightDecay::Coupled, WeightDecay::Decoupled] {
            let mut adam = Adam::new(AdamConfig {
                decay_mode: mode,
                ..cfg(1e-3)
            })
            .unwrap();
            let mut p = single(-0.5);
            let mut last = 0.5;
            for _ in 0..5 {
                adam.step(&mut p, &single(0.0)).unwrap();
                let mag = p["w"].item().unwrap().abs();
                assert!(mag < last);
                last = mag;
            }
        }
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut adam = Adam::new(cfg(0.0)).unwrap();
        let mut p = single(1.0);
        assert!(matches!(
            adam.step(&mut p, &single(f64::NAN)),
            Err(Error::Numeric(_))
        ));
        assert_eq!(adam.state.step, 0);
        assert_eq!(p["w"].item().unwrap(), 1.0);
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        assert!(Adam::<f32>::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        })
        .is_err());
    }
}
