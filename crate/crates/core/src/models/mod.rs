//! Linear heads and every training objective.
//!
//! All trainers share one minibatch loop ([`fit`]): the sample order is
//! reshuffled each epoch from a seeded stream, per-sample losses and
//! gradients are computed (in parallel when enabled) and reduced in index
//! order, then one optimizer step is taken per batch.

mod head;
mod objective;
mod optim;
mod train;

pub use head::LinearHead;
pub use objective::{
    batch_loss_grad, ce_over_robust_logits, full_loss_grad, huber, precompute_tilts, Objective, RobustCe, RobustHuber,
    Supervised, Target,
};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    barycentric_transport, robust_margin, train_erm, train_erm_regression, train_fewshot, train_fewshot_regression,
    train_ot_adapt, train_ot_adapt_regression, train_pgdro_classifier, train_pgdro_regressor, train_robust_classifier,
    train_saa, train_saa_regression, train_wdro, wdro_priors, NoiseFamily, NoiseSpec, OtAdaptConfig, Predictor,
    RegressionSet,
};

use serde::{Deserialize, Serialize};

use crate::numkit::SeededRng;
use crate::{Error, Result};

const BATCH_STREAM: u64 = 0x7261_696e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub huber_beta: f64,
    pub penalty_weight: f64,
    pub penalty_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            huber_beta: 1.0,
            penalty_weight: 1.0,
            penalty_temperature: 0.1,
        }
    }
}

impl TrainConfig {
    /// Checks everything but `epochs`; zero epochs is a valid no-op for the
    /// trainers and is rejected at config ingestion instead.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.huber_beta > 0.0) {
            return Err(Error::Config(format!("huber_beta must be positive, got {}", self.huber_beta)));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::Config(format!("penalty_weight must be nonnegative, got {}", self.penalty_weight)));
        }
        if !(self.penalty_temperature > 0.0 && self.penalty_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "penalty_temperature must be positive, got {}",
                self.penalty_temperature
            )));
        }
        Ok(())
    }
}

/// A trained head with its per-epoch mean training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub head: LinearHead,
    pub loss_trace: Vec<f64>,
}

/// Minibatch training of `head` on `obj`.
///
/// The epoch loss is the mean of the per-sample losses seen during the epoch,
/// each evaluated at the parameters current when its batch was processed.
pub fn fit<O: Objective>(obj: &O, mut head: LinearHead, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let n = obj.len();
    if n == 0 {
        return Err(Error::invalid("no training samples"));
    }
    let mut rng = SeededRng::new(cfg.seed, BATCH_STREAM);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, head.num_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = head.params();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_loss_grad(obj, &head, idx)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            total += loss * idx.len() as f64;
            opt.step(&mut params, &grad);
            head.set_params(&params)?;
            head.check_finite()
                .map_err(|_| Error::NonFinite(format!("parameters after epoch {epoch}, batch {b}")))?;
        }
        trace.push(total / n as f64);
    }
    Ok(Trained { head, loss_trace: trace })
}
