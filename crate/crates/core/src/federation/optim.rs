//! First-order optimizers over [`ParamSet`]s.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent; weight decay is added to the gradient.
    Sgd,
    /// Adam with L2 weight decay added to the gradient.
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimSpec {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self { kind, lr, weight_decay }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Validation(format!(
                "{what}: learning rate must be > 0 and weight decay >= 0"
            )));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer with its moment estimates.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub spec: OptimSpec,
    m: Option<ParamSet>,
    v: Option<ParamSet>,
    t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimSpec) -> Self {
        Self {
            spec,
            m: None,
            v: None,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !params.same_structure(grads) {
            return Err(Error::Contract("gradient structure differs from parameters".into()));
        }
        let OptimSpec {
            kind,
            lr,
            weight_decay: wd,
        } = self.spec;
        self.t += 1;
        if kind == OptimizerKind::Sgd {
            for ((_, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * (gv + wd * *pv);
                }
            }
            return Ok(());
        }
        let m = self.m.get_or_insert_with(|| params.zeros_like());
        let v = self.v.get_or_insert_with(|| params.zeros_like());
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let tensors = params.iter_mut().zip(grads.iter()).zip(m.iter_mut().zip(v.iter_mut()));
        for (((_, p), (_, g)), ((_, mt), (_, vt))) in tensors {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(mt.data_mut().iter_mut().zip(vt.data_mut().iter_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                let gv = if kind == OptimizerKind::Adam { gv + wd * *pv } else { gv };
                if kind == OptimizerKind::AdamW {
                    *pv -= lr * wd * *pv;
                }
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
