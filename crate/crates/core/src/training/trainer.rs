use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::evaluate::Metrics;
use super::objective::{objective, Estimator};
use super::schedule::{kl_weight, KlSchedule};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::model::Gmvae;
use crate::param::{backward, ParamStore};
use crate::rng::RngStream;
use crate::tape::Tape;

/// Stream ids for [`RngStream::derive`]; each purpose gets its own sequence.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const TRAIN_NOISE: u64 = 2;
    pub const VALIDATION: u64 = 3;
    pub const EVALUATION: u64 = 4;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::estimator")]
    pub estimator: Estimator,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: KlSchedule,
    #[serde(default = "defaults::eval_z_samples")]
    pub eval_z_samples: usize,
    /// Reuse one z-noise draw for every component of the marginal estimator.
    #[serde(default)]
    pub shared_noise: bool,
}

mod defaults {
    use super::Estimator;

    pub fn estimator() -> Estimator {
        Estimator::Concrete
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn max_epochs() -> usize {
        200
    }
    pub fn patience() -> usize {
        10
    }
    pub fn eval_z_samples() -> usize {
        1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            estimator: defaults::estimator(),
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            max_epochs: defaults::max_epochs(),
            patience: defaults::patience(),
            seed: 0,
            schedule: KlSchedule::default(),
            eval_z_samples: defaults::eval_z_samples(),
            shared_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("train.{field}: {why}")));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.max_epochs < 1 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if self.patience < 1 {
            return bad("patience", "must be at least 1".into());
        }
        if self.eval_z_samples < 1 {
            return bad("eval_z_samples", "must be at least 1".into());
        }
        if let Err(why) = self.schedule.validate() {
            return bad("schedule", why);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed by the end of the epoch.
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// KL weight at `step`.
    pub w_t: f64,
    /// Mean KL(q(y|x) ‖ p(y)) over the validation split.
    pub kl_y: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub estimator: Estimator,
    pub schedule: KlSchedule,
    /// Which term the schedule multiplies.
    pub kl_weight_applies_to: String,
    pub temperature: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopping_epoch: usize,
    pub stopped_early: bool,
    pub total_steps: u64,
    pub total_wall_seconds: f64,
    pub final_metrics: Option<Metrics>,
}

impl TrainReport {
    /// The report with every wall-clock field zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> TrainReport {
        let mut r = self.clone();
        r.total_wall_seconds = 0.0;
        for e in &mut r.epochs {
            e.wall_seconds = 0.0;
        }
        r
    }
}

/// Stops once the monitored loss has failed to improve for `patience`
/// consecutive epochs. NaN never counts as an improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean loss (with w = 1) and mean y-KL over `data`, without gradients.
pub fn dataset_loss(
    model: &Gmvae,
    data: &Dataset,
    estimator: Estimator,
    batch_size: usize,
    shared_noise: bool,
    noise: &mut RngStream,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut kl_sum = 0.0;
    for block in batches(data.len(), batch_size, false, noise) {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let x = tape.constant(data.rows(&block));
        let terms = objective(estimator, model, &mut tape, &b, x, noise, 1.0, shared_noise)?;
        loss_sum += tape.value(terms.loss).item()? * block.len() as f64;
        kl_sum += tape.value(terms.kl_y).sum();
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, kl_sum / n))
}

/// Minibatch Adam training with validation-based early stopping. The best
/// validation parameters are restored before returning. `on_epoch` sees each
/// record as soon as it is complete.
pub fn train(
    model: &mut Gmvae,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let started = Instant::now();
    let mut shuffle_rng = RngStream::derive(cfg.seed, streams::SHUFFLE, 0);
    let mut noise = RngStream::derive(cfg.seed, streams::TRAIN_NOISE, 0);
    let mut adam = AdamState::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: ParamStore = model.params().clone();
    let mut records = Vec::new();
    let mut step: u64 = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        let mut loss_sum = 0.0;
        for block in batches(train_set.len(), cfg.batch_size, true, &mut shuffle_rng) {
            let w = kl_weight(&cfg.schedule, step);
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let x = tape.constant(train_set.rows(&block));
            let terms = objective(cfg.estimator, model, &mut tape, &b, x, &mut noise, w, cfg.shared_noise)?;
            let loss = tape.value(terms.loss).item()?;
            if !loss.is_finite() {
                return Err(Error::domain("train", format!("loss became {loss} at step {step}")));
            }
            loss_sum += loss * block.len() as f64;
            backward(tape, terms.loss, model.params_mut(), &b)?;
            adam_step(model.params_mut(), &mut adam, cfg.learning_rate);
            step += 1;
        }
        let mut val_noise = RngStream::derive(cfg.seed, streams::VALIDATION, epoch as u64);
        let (val_loss, kl_y) = dataset_loss(
            model,
            val_set,
            cfg.estimator,
            cfg.batch_size,
            cfg.shared_noise,
            &mut val_noise,
        )?;
        let record = EpochRecord {
            epoch,
            step,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            w_t: kl_weight(&cfg.schedule, step),
            kl_y,
            wall_seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
        let obs = stopper.observe(epoch, val_loss);
        if obs.improved {
            best = model.params().clone();
        }
        if obs.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.params_mut().copy_values_from(&best)?;
    let stopping_epoch = records.len();
    Ok(TrainReport {
        estimator: cfg.estimator,
        schedule: cfg.schedule,
        kl_weight_applies_to: "categorical KL(q(y|x) || p(y)) term, both estimators".into(),
        temperature: model.config().temperature,
        epochs: records,
        best_epoch: stopper.best_epoch(),
        stopping_epoch,
        stopped_early,
        total_steps: step,
        total_wall_seconds: started.elapsed().as_secs_f64(),
        final_metrics: None,
    })
}
