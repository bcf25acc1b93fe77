//! Shared test oracles and generators.

#![allow(dead_code)]

pub mod gradient_cases;

use decompl_core::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use decompl_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub struct Check {
    pub worst: f64,
    pub probes: usize,
    /// Smallest kink distance seen; finite differences are only trusted
    /// when it exceeds the probe step by a margin.
    pub margin: f64,
}

/// Compares backward gradients with central differences for every scalar
/// of every tensor in `store` (or `limit` evenly spread scalars per tensor).
/// `f` must build a scalar loss on the given tape.
pub fn check_gradients<F>(store: &mut ParamStore, limit: Option<usize>, f: F) -> Result<Check>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let margin = tape.kink_margin();
    tape.backward(loss, store)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.scalar(l))
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for id in ids {
        if !store.get(id).requires_grad() {
            continue;
        }
        let len = store.get(id).len();
        let picks: Vec<usize> = match limit {
            Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
            _ => (0..len).collect(),
        };
        for i in picks {
            let analytic = store.get(id).grad().unwrap()[i];
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + STEP;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - STEP;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic, numeric));
            probes += 1;
        }
    }
    Ok(Check { worst, probes, margin })
}

/// Contracts an arbitrary-shape output to a scalar with fixed random
/// weights, so every output element influences the loss differently.
pub fn weighted_sum(tape: &mut Tape, rng_weights: &Tensor, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(rng_weights.clone());
    let w = tape.reshape(w, &shape)?;
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Random normalized boxes.
pub fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 4]> {
    (0..n)
        .map(|_| {
            let w = rng.gen_range(0.01..0.08);
            let h = rng.gen_range(0.05..0.3);
            let x = rng.gen_range(0.0..1.0 - w);
            let y = rng.gen_range(0.0..1.0 - h);
            [x, y, x + w, y + h]
        })
        .collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Boxes snapped to the dataset coordinate grid, so mirroring is exact.
pub fn grid_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 4]> {
    random_boxes(rng, n).into_iter().map(decompl_core::data::quantize_box).collect()
}

/// A volleyball model small enough for exhaustive property checks.
pub fn small_model(seed: u64) -> decompl_core::model::ModelParams {
    small_model_with(seed, |_| {})
}

pub fn small_model_with(
    seed: u64,
    edit: impl FnOnce(&mut decompl_core::model::ModelConfig),
) -> decompl_core::model::ModelParams {
    use decompl_core::coord::CoordinateConfig;
    use decompl_core::model::{ModelConfig, ModelParams};
    let mut cfg = ModelConfig {
        feature_dim: SMALL_FEATURES,
        dim: 4,
        hidden: 6,
        heads: 2,
        coordinate: CoordinateConfig {
            channels: 2,
            ..CoordinateConfig::default()
        },
        ..ModelConfig::default()
    };
    edit(&mut cfg);
    ModelParams::new(cfg, decompl_core::TaskConfig::volleyball(), seed).unwrap()
}

pub const SMALL_FEATURES: usize = 5;
