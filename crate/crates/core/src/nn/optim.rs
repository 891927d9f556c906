use serde::{Deserialize, Serialize};

use super::mlp::Parameters;
use crate::error::{Error, Result};

/// First-order optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Adadelta {
        lr: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_adadelta_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_rho() -> f64 {
    0.9
}
fn default_adadelta_eps() -> f64 {
    1e-6
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn adadelta(lr: f64) -> Self {
        OptimizerConfig::Adadelta {
            lr,
            rho: default_rho(),
            eps: default_adadelta_eps(),
        }
    }
}

/// Per-parameter optimizer memory.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    steps: u64,
    /// Adam: first moment. Adadelta: running mean of squared gradients.
    first: Option<Parameters>,
    /// Adam: second moment. Adadelta: running mean of squared updates.
    second: Option<Parameters>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: None,
            second: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Drop the moment buffers, e.g. after the parameter shapes changed.
    pub fn reset(&mut self) {
        self.steps = 0;
        self.first = None;
        self.second = None;
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) -> Result<()> {
        if let Some(block) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {block}")));
        }
        if params.shapes() != grads.shapes() {
            return Err(Error::DimensionMismatch {
                expected: params.num_params(),
                got: grads.num_params(),
            });
        }
        if self
            .first
            .as_ref()
            .is_some_and(|f| f.shapes() != params.shapes())
        {
            self.reset();
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => params.add_scaled(grads, -lr),
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let m = self.first.get_or_insert_with(|| params.zeros_like());
                let v = self.second.get_or_insert_with(|| params.zeros_like());
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    };
                    ndarray::Zip::from(&mut p.weights)
                        .and(&g.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    ndarray::Zip::from(&mut p.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
            OptimizerConfig::Adadelta { lr, rho, eps } => {
                let sq = self.first.get_or_insert_with(|| params.zeros_like());
                let du = self.second.get_or_insert_with(|| params.zeros_like());
                for (((p, g), s), d) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut sq.layers)
                    .zip(&mut du.layers)
                {
                    let update = |p: &mut f64, g: f64, s: &mut f64, d: &mut f64| {
                        *s = rho * *s + (1.0 - rho) * g * g;
                        let delta = ((*d + eps).sqrt() / (*s + eps).sqrt()) * g;
                        *d = rho * *d + (1.0 - rho) * delta * delta;
                        *p -= lr * delta;
                    };
                    ndarray::Zip::from(&mut p.weights)
                        .and(&g.weights)
                        .and(&mut s.weights)
                        .and(&mut d.weights)
                        .for_each(|p, &g, s, d| update(p, g, s, d));
                    ndarray::Zip::from(&mut p.bias)
                        .and(&g.bias)
                        .and(&mut s.bias)
                        .and(&mut d.bias)
                        .for_each(|p, &g, s, d| update(p, g, s, d));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, MlpSpec, OutputTransform};
    use crate::rng::substream;

    fn setup() -> (Parameters, Parameters) {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu, OutputTransform::Identity);
        let params = Parameters::init(&spec, &mut substream(9, "t"));
        let mut grads = params.zeros_like();
        grads.set_flat(&vec![1.0; params.num_params()]);
        (params, grads)
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let (mut p, g) = setup();
        let before = p.flat();
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 });
        opt.step(&mut p, &g).unwrap();
        for (a, b) in before.iter().zip(p.flat()) {
            assert!((a - 0.1 - b).abs() < 1e-15);
        }
        let before = p.flat();
        opt.step(&mut p, &g.zeros_like()).unwrap();
        assert_eq!(before, p.flat());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let (mut p, g) = setup();
        let before = p.flat();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        opt.step(&mut p, &g.zeros_like()).unwrap();
        assert_eq!(before, p.flat());
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // m = 0.1, v = 0.001; bias-corrected m̂ = 1, v̂ = 1 → Δ = lr / (1 + ε).
        let (mut p, g) = setup();
        let before = p.flat();
        let lr = 0.001;
        let mut opt = Optimizer::new(OptimizerConfig::adam(lr));
        opt.step(&mut p, &g).unwrap();
        let m = (1.0 - 0.9) * 1.0;
        let v = (1.0 - 0.999) * 1.0;
        let expected = lr * (m / (1.0 - 0.9)) / ((v / (1.0 - 0.999f64)).sqrt() + 1e-8);
        for (a, b) in before.iter().zip(p.flat()) {
            assert!((a - b - expected).abs() < 1e-15);
        }
        assert!((expected - lr / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adadelta_moves_against_gradient() {
        let (mut p, g) = setup();
        let before = p.flat();
        let mut opt = Optimizer::new(OptimizerConfig::adadelta(0.1));
        opt.step(&mut p, &g).unwrap();
        // s = 0.1, Δ = sqrt(1e-6)/sqrt(0.1 + 1e-6)
        let delta = (1e-6f64).sqrt() / (0.1f64 + 1e-6).sqrt();
        for (a, b) in before.iter().zip(p.flat()) {
            assert!((a - b - 0.1 * delta).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let (mut p, mut g) = setup();
        g.layers[1].bias[0] = f64::NAN;
        let err = Optimizer::new(OptimizerConfig::adam(0.1))
            .step(&mut p, &g)
            .unwrap_err();
        assert!(err.to_string().contains("layer 1 bias"), "{err}");
    }
}
