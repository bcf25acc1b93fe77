use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::accuracy_on;
use crate::data::{flip_augment, sample_frame, Dataset};
use crate::error::{Error, Result};
use crate::labels::TaskConfig;
use crate::model::{forward_frame, total_loss, GateValues, ModelConfig, ModelParams, Variant};
use crate::tensor::{Adam, AdamConfig, StepDecay, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate drops.
    pub lr_period: usize,
    pub lr_factor: f64,
    pub flip_probability: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Weight of the side and team losses.
    pub beta: f64,
    /// Share of clips held out for checkpoint selection.
    pub validation_fraction: f64,
    /// Validate every this many epochs (and after the last one).
    pub val_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 8,
            lr: 1e-4,
            lr_period: 30,
            lr_factor: 2.0,
            flip_probability: 0.5,
            seed: 0,
            variant: Variant::Full,
            beta: 1.0,
            validation_fraction: 0.2,
            val_every: 10,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_period == 0 || self.val_every == 0 {
            return Err(Error::Config("epochs, batch_size, lr_period and val_every must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.lr_factor.is_finite() && self.lr_factor > 0.0) {
            return Err(Error::Config("lr and lr_factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!(
                "flip_probability must lie in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.lr,
            period: self.lr_period,
            factor: self.lr_factor,
            total_epochs: self.epochs,
        }
    }
}

/// Applies the variant and loss weight, then initializes from the seed.
pub fn build_model(model: &ModelConfig, task: &TaskConfig, cfg: &TrainConfig) -> Result<ModelParams> {
    let mut task = task.clone();
    task.beta = cfg.beta;
    let (model, task) = cfg.variant.configure(model, &task)?;
    ModelParams::new(model, task, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub individual: f64,
    pub group: f64,
    pub side: f64,
    pub team: f64,
    pub gates: GateValues,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (latest on ties), or of the
    /// last epoch without a validation split.
    pub model: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded train/validation partition of `0..n`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_val = (n as f64 * fraction).round() as usize;
    let n_val = if n_val >= n { 0 } else { n_val };
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

fn check_compatible(dataset: &Dataset, params: &ModelParams) -> Result<()> {
    let (a, b) = (&dataset.task, &params.task);
    if a.mode != b.mode || a.group_labels != b.group_labels || a.individual_labels != b.individual_labels {
        return Err(Error::Config(format!(
            "dataset ({} mode) does not match the model's label algebra ({} mode)",
            a.mode, b.mode
        )));
    }
    if dataset.feature_dim != params.config.feature_dim {
        return Err(Error::Config(format!(
            "dataset features have {} dimensions, model expects {}",
            dataset.feature_dim, params.config.feature_dim
        )));
    }
    Ok(())
}

/// Mini-batch Adam on the combined loss. Each epoch visits every training
/// clip once in seeded order, with one uniformly sampled (and possibly
/// flipped) frame per visit.
pub fn train(dataset: &Dataset, mut params: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptySet("training dataset"));
    }
    check_compatible(dataset, &params)?;
    let schedule = cfg.schedule();
    let (mut train_idx, val_idx) = split_indices(dataset.len(), cfg.validation_fraction, cfg.seed);
    let train_order = train_idx.clone();
    let val_clips: Vec<_> = val_idx.iter().map(|&i| dataset.clips[i].clone()).collect();
    let task = params.task.clone();
    let flip = task.is_volleyball() && cfg.flip_probability > 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut adam = Adam::new(&params.store, cfg.adam);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch as i64)?;
        train_idx.shuffle(&mut rng);
        let mut sums = [0.0; 5];
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut total = None;
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let clip = &dataset.clips[i];
                let frame = sample_frame(clip, &mut rng)?;
                let flipped;
                let (frame, group) = if flip && rng.gen_bool(cfg.flip_probability) {
                    flipped = flip_augment(frame, clip.group_label, &task)?;
                    (&flipped.0, flipped.1)
                } else {
                    (frame, clip.group_label)
                };
                let pred = forward_frame(&mut tape, &params, &frame.boxes, &frame.features)?;
                let terms = total_loss(&mut tape, &pred, group, &frame.actions, &task)?;
                let scaled = tape.scale(terms.total, weight);
                total = Some(match total {
                    None => scaled,
                    Some(t) => tape.add(t, scaled)?,
                });
                for (s, v) in sums.iter_mut().zip([
                    tape.scalar(terms.total),
                    terms.individual,
                    terms.group,
                    terms.side,
                    terms.team,
                ]) {
                    *s += v;
                }
            }
            let total = total.expect("chunks are nonempty");
            params.store.zero_grad();
            tape.backward(total, &mut params.store)?;
            adam.step(&mut params.store, lr)?;
        }
        let n = train_idx.len() as f64;
        let last = epoch + 1 == cfg.epochs;
        let val_accuracy = if !val_clips.is_empty() && ((epoch + 1) % cfg.val_every == 0 || last) {
            Some(accuracy_on(&val_clips, &params)?)
        } else {
            None
        };
        if let Some(acc) = val_accuracy {
            if best.as_ref().map_or(true, |(b, _, _)| acc >= *b) {
                best = Some((acc, epoch, params.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            lr,
            loss: sums[0] / n,
            individual: sums[1] / n,
            group: sums[2] / n,
            side: sums[3] / n,
            team: sums[4] / n,
            gates: params.gate_values(),
            val_accuracy,
        };
        log::info!(
            "epoch {epoch} lr {lr:.3e} loss {:.4} (ind {:.4} grp {:.4} side {:.4} team {:.4}){}",
            entry.loss,
            entry.individual,
            entry.group,
            entry.side,
            entry.team,
            val_accuracy.map_or(String::new(), |a| format!(" val {a:.4}"))
        );
        log.push(entry);
    }

    let (model, best_epoch, best_val_accuracy) = match best {
        Some((acc, epoch, model)) => (model, epoch, Some(acc)),
        None => (params, cfg.epochs - 1, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_accuracy,
        train_indices: train_order,
        val_indices: val_idx,
    })
}
