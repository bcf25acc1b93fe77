use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out parallel to the
/// parameters of the store the state was created for.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update at learning rate `lr` to every tracked parameter.
    /// Frozen tensors (no gradient buffer) are left alone.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
        }
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            if store.get(id).len() != self.first[id.index()].len() {
                return Err(Error::Contract(format!("{} changed size", store.name(id))));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in ids {
            let (data, grad) = store.get_mut(id).data_and_grad();
            let Some(grad) = grad else { continue };
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (((p, g), m), v) in data.iter_mut().zip(grad).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: `base · factor^(−⌊epoch / period⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base: f64,
    pub period: usize,
    pub factor: f64,
    pub total_epochs: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            base: 1e-4,
            period: 30,
            factor: 2.0,
            total_epochs: 120,
        }
    }
}

impl StepDecay {
    pub fn lr(&self, epoch: i64) -> Result<f64> {
        if epoch < 0 {
            return Err(Error::Contract(format!("epoch must be non-negative, got {epoch}")));
        }
        if epoch as usize >= self.total_epochs {
            return Err(Error::Contract(format!(
                "epoch {epoch} is past the schedule end ({})",
                self.total_epochs
            )));
        }
        let drops = (epoch as usize / self.period.max(1)) as i32;
        Ok(self.base / self.factor.powi(drops))
    }
}
