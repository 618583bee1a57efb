//! First-order optimizers with per-parameter state.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Rmsprop,
    Adadelta,
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Rmsprop | OptimizerKind::Adam => 1e-3,
            OptimizerKind::Adadelta => 1.0,
            OptimizerKind::SgdMomentum => 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig { kind, learning_rate }
    }

    pub fn with_default_rate(kind: OptimizerKind) -> Self {
        Self::new(kind, kind.default_learning_rate())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SimexError::invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

const RMSPROP_RHO: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-6;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SGD_MOMENTUM: f64 = 0.9;

/// Accumulators mirror the parameter list they were created for.
///
/// * rmsprop: `first` = running mean of g^2
/// * adadelta: `first` = running mean of g^2, `second` = running mean of update^2
/// * adam: `first` = m, `second` = v
/// * sgd-momentum: `first` = velocity
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    config: OptimizerConfig,
    shapes: Vec<Vec<usize>>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, params: &[&Tensor<T>]) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect::<Vec<_>>();
        let second = match config.kind {
            OptimizerKind::Adadelta | OptimizerKind::Adam => zeros(),
            _ => Vec::new(),
        };
        Ok(OptimizerState {
            config,
            shapes,
            first: zeros(),
            second,
            step: 0,
        })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn accumulator_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(SimexError::shape(
                "optimizer parameter count",
                &[self.shapes.len()],
                &[params.len(), grads.len()],
            ));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.shapes) {
            if p.shape() != s.as_slice() {
                return Err(SimexError::shape("optimizer parameter", s, p.shape()));
            }
            if g.shape() != s.as_slice() {
                return Err(SimexError::shape("optimizer gradient", s, g.shape()));
            }
            if !g.is_finite() {
                return Err(SimexError::NonFinite("gradient passed to optimizer".into()));
            }
        }
        self.step += 1;
        let c = |v: f64| T::from_f64_lossy(v);
        let lr = c(self.config.learning_rate);
        let one = T::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let w = p.data_mut();
            let g = g.data();
            match self.config.kind {
                OptimizerKind::Rmsprop => {
                    let (rho, eps) = (c(RMSPROP_RHO), c(RMSPROP_EPS));
                    for ((w, &g), a) in w.iter_mut().zip(g).zip(self.first[i].iter_mut()) {
                        *a = rho * *a + (one - rho) * g * g;
                        *w = *w - lr * g / (*a + eps).sqrt();
                    }
                }
                OptimizerKind::Adadelta => {
                    let (rho, eps) = (c(ADADELTA_RHO), c(ADADELTA_EPS));
                    let (eg, ed) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &g)) in w.iter_mut().zip(g).enumerate() {
                        eg[j] = rho * eg[j] + (one - rho) * g * g;
                        let update = -((ed[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * g;
                        ed[j] = rho * ed[j] + (one - rho) * update * update;
                        *w = *w + lr * update;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2, eps) = (c(ADAM_BETA1), c(ADAM_BETA2), c(ADAM_EPS));
                    let t = self.step as i32;
                    let bc1 = one - b1.powi(t);
                    let bc2 = one - b2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &g)) in w.iter_mut().zip(g).enumerate() {
                        m[j] = b1 * m[j] + (one - b1) * g;
                        v[j] = b2 * v[j] + (one - b2) * g * g;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *w = *w - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let mu = c(SGD_MOMENTUM);
                    for ((w, &g), v) in w.iter_mut().zip(g).zip(self.first[i].iter_mut()) {
                        *v = mu * *v + g;
                        *w = *w - lr * *v;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Rmsprop,
        OptimizerKind::Adadelta,
        OptimizerKind::Adam,
        OptimizerKind::SgdMomentum,
    ];

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for kind in ALL {
            let mut w = Tensor::<f64>::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
            let before = w.clone();
            let mut st = OptimizerState::new(OptimizerConfig::with_default_rate(kind), &[&w]).unwrap();
            for _ in 0..3 {
                st.step(&mut [&mut w], &[Tensor::zeros(&[3])]).unwrap();
            }
            assert_eq!(w, before, "{kind:?}");
            assert_eq!(st.steps(), 3);
        }
    }

    #[test]
    fn rmsprop_first_step_by_hand() {
        let mut w = scalar(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Rmsprop, 1e-3), &[&w]).unwrap();
        st.step(&mut [&mut w], &[scalar(1.0)]).unwrap();
        let expected = 1.0 - 1e-3 / (0.1f64 + 1e-8).sqrt();
        assert!((w.data()[0] - expected).abs() < 1e-15);
        assert!((w.data()[0] - 0.996838).abs() < 1e-6);
    }

    #[test]
    fn adadelta_first_step_by_hand() {
        let mut w = scalar(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adadelta, 1.0), &[&w]).unwrap();
        st.step(&mut [&mut w], &[scalar(2.0)]).unwrap();
        let eg = 0.05 * 4.0;
        let expected = 1.0 - (1e-6f64).sqrt() / (eg + 1e-6f64).sqrt() * 2.0;
        assert!((w.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut w = scalar(0.5);
        let mut st = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 0.01), &[&w]).unwrap();
        st.step(&mut [&mut w], &[scalar(-3.0)]).unwrap();
        assert!((w.data()[0] - 0.51).abs() < 1e-9);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut w = scalar(0.0);
        let mut st = OptimizerState::new(OptimizerConfig::new(OptimizerKind::SgdMomentum, 0.1), &[&w]).unwrap();
        st.step(&mut [&mut w], &[scalar(1.0)]).unwrap();
        assert!((w.data()[0] + 0.1).abs() < 1e-15);
        st.step(&mut [&mut w], &[scalar(1.0)]).unwrap();
        assert!((w.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges_for_every_optimizer() {
        for kind in ALL {
            let lr = match kind {
                OptimizerKind::Rmsprop | OptimizerKind::Adam => 0.1,
                OptimizerKind::Adadelta => 1.0,
                OptimizerKind::SgdMomentum => 0.02,
            };
            let mut w = scalar(0.0);
            let mut st = OptimizerState::new(OptimizerConfig::new(kind, lr), &[&w]).unwrap();
            let loss = |w: f64| (w - 3.0) * (w - 3.0);
            // Adadelta's step size grows from sqrt(eps), so it needs longer.
            let steps = if kind == OptimizerKind::Adadelta { 4000 } else { 200 };
            let window = steps / 4;
            let mut window_means = Vec::new();
            let mut acc = 0.0;
            for step in 0..steps {
                let x = w.data()[0];
                acc += loss(x);
                if step % window == window - 1 {
                    window_means.push(acc / window as f64);
                    acc = 0.0;
                }
                st.step(&mut [&mut w], &[scalar(2.0 * (x - 3.0))]).unwrap();
            }
            assert!(window_means.windows(2).all(|p| p[1] <= p[0]), "{kind:?} {window_means:?}");
            assert!((w.data()[0] - 3.0).abs() < 0.1, "{kind:?} ended at {}", w.data()[0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut w = scalar(0.0);
        assert!(OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 0.0), &[&w]).is_err());
        let mut st = OptimizerState::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), &[&w]).unwrap();
        assert!(st.step(&mut [&mut w], &[scalar(f64::NAN)]).is_err());
        assert!(st.step(&mut [&mut w], &[Tensor::zeros(&[2])]).is_err());
    }
}
