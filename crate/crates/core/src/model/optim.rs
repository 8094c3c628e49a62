//! Parameter updates: Adam (default) and plain gradient descent.

use crate::error::{CoreError, Result};
use crate::model::batch::TrainingBatch;
use crate::model::config::TrainConfig;
use crate::model::loss::{grad, LossParts};
use crate::model::params::ModelParams;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(CoreError::InvalidConfig(format!("unknown optimizer {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: Optimizer,
    /// Number of updates applied (Adam bias correction).
    pub t: u64,
    pub m: Option<ModelParams>,
    pub v: Option<ModelParams>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, params: &ModelParams) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState { kind, t: 0, m: None, v: None },
            Optimizer::Adam => OptimizerState {
                kind,
                t: 0,
                m: Some(params.zeros_like()),
                v: Some(params.zeros_like()),
            },
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                let p = params.tensors_mut();
                let g = grads.tensors();
                for (pt, (_, gt)) in p.into_iter().zip(g) {
                    for (pv, &gv) in pt.iter_mut().zip(gt.iter()) {
                        *pv -= lr * gv;
                    }
                }
            }
            Optimizer::Adam => {
                let bc1 = 1.0 - BETA1.powi(self.t as i32);
                let bc2 = 1.0 - BETA2.powi(self.t as i32);
                let m = self.m.as_mut().expect("adam state");
                let v = self.v.as_mut().expect("adam state");
                let p = params.tensors_mut();
                let g = grads.tensors();
                let ms = m.tensors_mut();
                let vs = v.tensors_mut();
                for (((pt, (_, gt)), mt), vt) in p.into_iter().zip(g).zip(ms).zip(vs) {
                    for (((pv, &gv), mv), vv) in
                        pt.iter_mut().zip(gt.iter()).zip(mt.iter_mut()).zip(vt.iter_mut())
                    {
                        *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                        *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: LossParts,
}

/// One training step: joint-loss gradient, then an optimizer update with the
/// configured learning rate. A non-finite loss aborts with a diagnostic
/// carrying the step index.
pub fn train_step(
    params: &mut ModelParams,
    batch: &TrainingBatch,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    step: usize,
) -> Result<StepStats> {
    let (parts, grads) = grad(params, batch, cfg.lambda, cfg).map_err(|e| match e {
        CoreError::NonFiniteLoss { value, .. } => CoreError::NonFiniteLoss { step, value },
        other => other,
    })?;
    state.apply(params, &grads, cfg.lr);
    Ok(StepStats { loss: parts })
}
