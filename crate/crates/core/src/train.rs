//! Minibatch training with Adam, plus prediction and evaluation helpers.
//!
//! Training is single-threaded and bit-deterministic for a fixed
//! `(seed, data, config)`: shuffles come from the seeded generator and
//! gradients are reduced in batch order.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FrameExample;
use crate::error::{Error, Result};
use crate::metrics::{gap_at_k, GapReport, GroundTruth, PredictionSet, DEFAULT_TOP_K};
use crate::model::{compute_gradients, Model, ModelParams};
use crate::numeric::rng_from_seed;
use crate::optim::{adam_step, lr_at_step, AdamHyper, AdamState, LrSchedule};
use crate::params::ParamSet;

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub hyper: AdamHyper,
    /// When absent the learning rate is `hyper.alpha`.
    pub schedule: Option<LrSchedule>,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
    /// `k` for the per-epoch validation GAP.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            hyper: AdamHyper::default(),
            schedule: Some(LrSchedule::default()),
            clip_norm: None,
            eval_k: DEFAULT_TOP_K,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::Parameter("k must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Parameter(format!("clip norm must be > 0, got {c}")));
            }
        }
        self.hyper.validate()?;
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> f64 {
        match &self.schedule {
            Some(s) => lr_at_step(step, s),
            None => self.hyper.alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's examples.
    pub mean_loss: f64,
    pub valid_gap: Option<f64>,
    /// Optimizer steps completed after this epoch.
    pub steps: u64,
}

/// Model plus optimizer state; what a checkpoint captures.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub step: u64,
    /// Epochs completed.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let adam = AdamState::new(&model.params);
        Trainer {
            model,
            adam,
            step: 0,
            epoch: 0,
        }
    }

    /// One pass over `train` in a seeded shuffled order. On a non-finite
    /// loss or gradient the model is left at its last good parameters.
    pub fn run_epoch(&mut self, train: &[FrameExample], valid: &[FrameExample], cfg: &TrainConfig) -> Result<EpochLog> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = rng_from_seed(cfg.seed ^ (self.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let mut grads: ModelParams = self.model.params.zeros_like();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FrameExample> = chunk.iter().map(|&i| &train[i]).collect();
            grads.zero();
            let loss = compute_gradients(&self.model, &batch, &mut grads).map_err(|e| {
                if e.is_numeric_error() {
                    Error::Numeric(format!(
                        "{e} in epoch {} at step {}; model holds the parameters of step {}",
                        self.epoch + 1,
                        self.step + 1,
                        self.step
                    ))
                } else {
                    e
                }
            })?;
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            let lr = cfg.lr(self.step);
            adam_step(&mut self.model.params, &grads, &mut self.adam, &cfg.hyper, lr)?;
            self.step += 1;
            loss_sum += loss * batch.len() as f64;
        }
        self.epoch += 1;
        let valid_gap = if valid.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, valid, cfg.eval_k)?.gap)
        };
        Ok(EpochLog {
            epoch: self.epoch,
            mean_loss: loss_sum / train.len() as f64,
            valid_gap,
            steps: self.step,
        })
    }
}

fn clip_global_norm(grads: &mut ModelParams, max: f64) {
    let norm = grads
        .params()
        .iter()
        .flat_map(|m| m.as_slice())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for m in grads.params_mut() {
            m.scale(s);
        }
    }
}

/// Trains `model` for `cfg.epochs` epochs and returns the per-epoch log.
pub fn train(
    model: Model,
    train: &[FrameExample],
    valid: &[FrameExample],
    cfg: &TrainConfig,
) -> Result<(Trainer, Vec<EpochLog>)> {
    cfg.validate()?;
    model.check()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut trainer = Trainer::new(model);
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let entry = trainer.run_epoch(train, valid, cfg)?;
        log::info!(
            "epoch {} loss {:.6} gap {}",
            entry.epoch,
            entry.mean_loss,
            entry.valid_gap.map_or("-".into(), |g| format!("{g:.5}"))
        );
        log.push(entry);
    }
    Ok((trainer, log))
}

/// Top-`k` predictions for every example.
pub fn predict_set(model: &Model, examples: &[FrameExample], k: usize) -> Result<PredictionSet> {
    let mut out = PredictionSet::new();
    for ex in examples {
        let scores = model.predict(ex)?;
        out.insert_scores(ex.video_id.clone(), &scores, k)?;
    }
    Ok(out)
}

pub fn evaluate(model: &Model, examples: &[FrameExample], k: usize) -> Result<GapReport> {
    let preds = predict_set(model, examples, k)?;
    gap_at_k(&preds, &GroundTruth::from_examples(examples), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DatasetSpec};
    use crate::model::ModelConfig;

    fn tiny() -> crate::data::Dataset {
        generate_synthetic(&DatasetSpec {
            num_videos: 60,
            frames: 6,
            ..DatasetSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let d = tiny();
        let model = Model::init(ModelConfig::video_level(16, 4, 10), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trainer, log) = train(model.clone(), d.train(), d.test(), &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(trainer.model, model);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let d = tiny();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let model = Model::init(ModelConfig::video_level(16, 4, 10), 7).unwrap();
            train(model, d.train(), d.test(), &cfg).unwrap()
        };
        let (a, la) = run();
        let (b, lb) = run();
        let bits = |l: &[EpochLog]| l.iter().map(|e| e.mean_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&la), bits(&lb));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config_and_empty_data() {
        let d = tiny();
        let model = Model::init(ModelConfig::video_level(16, 4, 10), 1).unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(model.clone(), d.train(), d.test(), &bad).is_err());
        assert!(train(model, &[], d.test(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_and_keeps_last_good_model() {
        let d = tiny();
        let mut model = Model::init(ModelConfig::video_level(16, 4, 10), 1).unwrap();
        model.params.head.bias.set(0, 0, f64::NAN);
        let mut trainer = Trainer::new(model.clone());
        let err = trainer
            .run_epoch(d.train(), d.test(), &TrainConfig::default())
            .unwrap_err();
        assert!(err.is_numeric_error(), "{err}");
        assert!(err.to_string().contains("step 0"), "{err}");
        assert_eq!(trainer.step, 0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let model = Model::init(ModelConfig::video_level(2, 2, 3), 1).unwrap();
        let mut g = model.params.zeros_like();
        g.head.weight.fill(10.0);
        clip_global_norm(&mut g, 1.0);
        let norm: f64 = g
            .params()
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
