use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd-momentum",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Argument(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Update-rule hyperparameters (the learning rate is passed per step).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerSettings {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam() -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            ..Self::sgd(0.9)
        }
    }
}

/// Per-parameter moment buffers plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// SGD velocity or Adam first moment.
    pub first: BTreeMap<String, Vec<f64>>,
    /// Adam second moment.
    pub second: BTreeMap<String, Vec<f64>>,
}

/// `v = mu * v + g; p -= lr * v`.
pub fn sgd_step(p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64) {
    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Bias-corrected Adam update for step `t >= 1`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

impl OptimizerState {
    /// Applies one update to every trainable entry of `store` from its
    /// accumulated gradient.
    pub fn apply(&mut self, store: &mut ParamStore, settings: &OptimizerSettings, lr: f64) {
        self.step += 1;
        for (path, param) in store.iter_mut() {
            if !param.trainable {
                continue;
            }
            let n = param.grad.len();
            let first = self.first.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
            match settings.kind {
                OptimizerKind::SgdMomentum => {
                    sgd_step(param.value.data_mut(), &param.grad, first, lr, settings.momentum)
                }
                OptimizerKind::Adam => {
                    let second = self.second.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
                    adam_step(
                        param.value.data_mut(),
                        &param.grad,
                        first,
                        second,
                        self.step,
                        lr,
                        (settings.beta1, settings.beta2),
                        settings.eps,
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn plain_sgd_step() {
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0);
        assert_eq!(p[0], 0.9);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = [0.0];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, 1.0, 0.9);
        sgd_step(&mut p, &[1.0], &mut v, 1.0, 0.9);
        assert!((p[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.0, -0.02, 1e4] {
            let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
            adam_step(&mut p, &[g], &mut m, &mut v, 1, 1e-3, (0.9, 0.999), 1e-8);
            let moved = p[0] - 0.5;
            assert!((moved + 1e-3 * g.signum()).abs() < 1e-8, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        for settings in [OptimizerSettings::sgd(0.9), OptimizerSettings::adam()] {
            let mut store = ParamStore::new();
            store.register("w", Tensor::vector(vec![1.0, -2.0]), true).unwrap();
            store.register("buf", Tensor::vector(vec![4.0]), false).unwrap();
            let before = store.clone();
            let mut state = OptimizerState::default();
            state.apply(&mut store, &settings, 0.1);
            assert_eq!(store, before);
            assert!(!state.first.contains_key("buf"));
        }
    }
}
