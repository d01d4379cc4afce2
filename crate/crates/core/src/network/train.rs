use std::path::PathBuf;

use log::{debug, info};

use super::{accumulate_gradients, adam_step, init_model, load_weights_expecting, AdamConfig, Architecture};
use super::{OptimizerState, ParamSet, SrModel};
use crate::error::{Error, Result};
use crate::sampler::{batch_order, PatchPair};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Halve the learning rate every this many steps; 0 keeps it constant.
    pub lr_halving_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub fine_tune_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 1e-4,
            lr_halving_every: 0,
            adam: AdamConfig::default(),
            seed: 0,
            fine_tune_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("training needs at least one step"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_halving_every == 0 {
            self.lr
        } else {
            self.lr * 0.5f64.powi((step / self.lr_halving_every) as i32)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SrModel<f32>,
    /// Mean L1 loss of each step's batch, measured before its update.
    pub losses: Vec<f64>,
}

/// Trains from a seeded initialization, or from `fine_tune_from` when set.
/// Batches come from a fresh seeded shuffle each epoch.
pub fn train(pairs: &[PatchPair], cfg: &TrainConfig, arch: Architecture) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet("no patch pairs supplied".into()));
    }
    let mut model = match &cfg.fine_tune_from {
        Some(path) => {
            info!("fine-tuning from {}", path.display());
            load_weights_expecting(path, arch)?
        }
        None => init_model(arch, seed::derive(cfg.seed, "network", 0)),
    };
    let mut state = OptimizerState::new(&model);
    let mut grads = ParamSet::zeros(&arch);
    let mut losses = Vec::with_capacity(cfg.steps);
    let report_every = (cfg.steps / 20).max(1);

    let mut epoch = 0u64;
    'outer: loop {
        let order = batch_order(pairs.len(), cfg.batch_size, seed::derive(cfg.seed, "epoch", epoch))?;
        for batch in order {
            let step = losses.len();
            grads.fill_zero();
            let weight = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in &batch {
                let p = &pairs[i];
                loss += weight * accumulate_gradients(&model, &p.lr, &p.hr, weight, &mut grads)?;
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!(
                    "training diverged at step {step} (loss {loss}); try a smaller learning rate"
                )));
            }
            losses.push(loss);
            adam_step(&mut model, &grads, &mut state, cfg.lr_at(step), &cfg.adam)?;
            if (step + 1) % report_every == 0 {
                info!("step {}/{}: L1 {:.5}", step + 1, cfg.steps, loss);
            }
            if losses.len() == cfg.steps {
                break 'outer;
            }
        }
        debug!("finished epoch {epoch}");
        epoch += 1;
    }
    if !model.params.all_finite() {
        return Err(Error::NonFinite("trained weights contain non-finite values".into()));
    }
    Ok(TrainOutcome { model, losses })
}
