//! Coordinate branch: relational features computed from actor boxes alone.
//!
//! Actors are sorted left to right. For every actor the row of box
//! differences to all actors (`N×4`, flattened to `4N`) is reduced to `N`
//! relation scalars by one shared size-4, stride-4 kernel. The relation
//! vector then passes through a small stack of 1-D convolutions (kernel 3,
//! ReLU), so neighbours in the sorted order mix, and is embedded into `D`
//! dimensions. The resulting `N×D` location features are summarized by a
//! single attention-pooling head.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform_init, Linear};
use crate::pool::{attention_pool, AttentionPoolParams};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Normalized `[x1, y1, x2, y2]` box.
pub type BoxCoords = [f64; 4];

pub fn center_x(b: &BoxCoords) -> f64 {
    (b[0] + b[2]) / 2.0
}

pub fn center_y(b: &BoxCoords) -> f64 {
    (b[1] + b[3]) / 2.0
}

/// Checks the normalized-box invariants: coordinates in `[0, 1]`,
/// `x1 < x2`, `y1 < y2`.
pub fn check_box(b: &BoxCoords) -> std::result::Result<(), String> {
    if b.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(format!("coordinates {b:?} outside [0, 1]"));
    }
    if b[0] >= b[2] {
        return Err(format!("x1 {} >= x2 {}", b[0], b[2]));
    }
    if b[1] >= b[3] {
        return Err(format!("y1 {} >= y2 {}", b[1], b[3]));
    }
    Ok(())
}

fn validate_boxes(boxes: &[BoxCoords]) -> Result<()> {
    if boxes.is_empty() {
        return Err(Error::EmptySet("boxes"));
    }
    for (i, b) in boxes.iter().enumerate() {
        check_box(b).map_err(|message| Error::Validation {
            clip: "-".into(),
            location: format!(", row {i}"),
            message,
        })?;
    }
    Ok(())
}

/// Left-to-right order: ascending center-x, then center-y, then index.
pub fn sort_order(boxes: &[BoxCoords]) -> Result<Vec<usize>> {
    validate_boxes(boxes)?;
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| compare_boxes(&boxes[a], &boxes[b]).then(a.cmp(&b)));
    Ok(order)
}

/// Reorders boxes and feature rows left to right. Returns the sorted boxes,
/// the sorted features, and the permutation (`sorted[k] = input[perm[k]]`).
pub fn sort_actors<T: Clone>(
    boxes: &[BoxCoords],
    features: &[T],
) -> Result<(Vec<BoxCoords>, Vec<T>, Vec<usize>)> {
    if boxes.len() != features.len() {
        return Err(Error::dim(
            "sort_actors",
            format!("{} boxes but {} feature rows", boxes.len(), features.len()),
        ));
    }
    let order = sort_order(boxes)?;
    let sb = order.iter().map(|&i| boxes[i]).collect();
    let sf = order.iter().map(|&i| features[i].clone()).collect();
    Ok((sb, sf, order))
}

/// `X_pd[i][j] = boxes[i] − boxes[j]`, as an `N×N×4` tensor.
pub fn pairwise_diffs(boxes: &[BoxCoords]) -> Result<Tensor> {
    validate_boxes(boxes)?;
    let n = boxes.len();
    let mut data = Vec::with_capacity(n * n * 4);
    for bi in boxes {
        for bj in boxes {
            data.extend((0..4).map(|k| bi[k] - bj[k]));
        }
    }
    Tensor::new(&[n, n, 4], data)
}

pub fn boxes_constant(tape: &mut Tape, boxes: &[BoxCoords]) -> Result<Var> {
    validate_boxes(boxes)?;
    let data = boxes.iter().flatten().copied().collect();
    tape.constant_from(&[boxes.len(), 4], data)
}

/// Shape of the relation stack after the difference kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordinateConfig {
    /// Channels of every relation convolution.
    pub channels: usize,
    /// Number of kernel-3 convolution + ReLU layers.
    pub layers: usize,
    pub kernel: usize,
    /// Width the relation vector is zero-padded to before the convolutions;
    /// fixes the embedding input size at `channels · max_actors`.
    pub max_actors: usize,
}

impl Default for CoordinateConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            layers: 2,
            kernel: 3,
            max_actors: 12,
        }
    }
}

impl CoordinateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.layers == 0 || self.max_actors == 0 {
            return Err(Error::Config("coordinate stack extents must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "relation kernel must be odd to keep the length, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvLayer {
    fn init(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel;
        let weight = store.add(format!("{name}.weight"), uniform_init(&[out_ch, in_ch, kernel], fan_in, rng));
        let bias = store.add(format!("{name}.bias"), uniform_init(&[out_ch], fan_in, rng));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn num_params(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel + self.out_ch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateModuleParams {
    /// The shared size-4 difference kernel, `[1, 1, 4]`, and its bias.
    pub diff: ConvLayer,
    pub relation: Vec<ConvLayer>,
    pub embedding: Linear,
    pub config: CoordinateConfig,
    pub dim: usize,
}

impl CoordinateModuleParams {
    pub fn init(store: &mut ParamStore, name: &str, config: CoordinateConfig, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let diff = ConvLayer::init(store, &format!("{name}.diff"), 1, 1, 4, rng);
        let mut relation = Vec::with_capacity(config.layers);
        let mut in_ch = 1;
        for l in 0..config.layers {
            relation.push(ConvLayer::init(
                store,
                &format!("{name}.rel{l}"),
                in_ch,
                config.channels,
                config.kernel,
                rng,
            ));
            in_ch = config.channels;
        }
        let embedding = Linear::init(store, &format!("{name}.embed"), config.channels * config.max_actors, dim, rng);
        Ok(Self {
            diff,
            relation,
            embedding,
            config,
            dim,
        })
    }

    pub fn num_params(&self) -> usize {
        self.diff.num_params()
            + self.relation.iter().map(ConvLayer::num_params).sum::<usize>()
            + self.embedding.num_params()
    }
}

/// Relation scalars: for each actor `i`, the shared difference kernel
/// applied to every `boxes[i] − boxes[j]`. Shape `[N, 1, N]`.
pub fn relation_scalars(tape: &mut Tape, store: &ParamStore, boxes: Var, p: &CoordinateModuleParams) -> Result<Var> {
    let n = match *tape.shape(boxes) {
        [n, 4] => n,
        _ => return Err(Error::dim("coordinate_features", format!("boxes must be N×4, got {:?}", tape.shape(boxes)))),
    };
    let diffs = tape.pairwise_diff(boxes)?;
    let rows = tape.reshape(diffs, &[n, 1, 4 * n])?;
    let k = tape.param(store, p.diff.weight);
    let b = tape.param(store, p.diff.bias);
    tape.conv1d(rows, k, Some(b), 4, 0)
}

/// Per-actor location features `X_c ∈ R^{N×D}` for left-to-right sorted
/// boxes.
pub fn coordinate_features(tape: &mut Tape, store: &ParamStore, boxes: Var, p: &CoordinateModuleParams) -> Result<Var> {
    let n = tape.shape(boxes)[0];
    let width = p.config.max_actors;
    if n > width {
        return Err(Error::dim(
            "coordinate_features",
            format!("{n} actors exceed the configured maximum of {width}"),
        ));
    }
    let mut h = relation_scalars(tape, store, boxes, p)?;
    if n < width {
        h = tape.pad_last(h, width)?;
    }
    let pad = p.config.kernel / 2;
    for layer in &p.relation {
        let w = tape.param(store, layer.weight);
        let b = tape.param(store, layer.bias);
        h = tape.conv1d(h, w, Some(b), 1, pad)?;
        h = tape.relu(h);
    }
    let flat = tape.reshape(h, &[n, p.config.channels * width])?;
    p.embedding.forward(tape, store, flat)
}

/// `X_coordinate ∈ R^D`: attention pooling over all location features, with
/// no team split.
pub fn coordinate_branch(
    tape: &mut Tape,
    store: &ParamStore,
    boxes: Var,
    p: &CoordinateModuleParams,
    pool: &AttentionPoolParams,
) -> Result<Var> {
    let features = coordinate_features(tape, store, boxes, p)?;
    attention_pool(tape, store, features, pool)
}

/// Center-x, then center-y.
pub fn compare_boxes(a: &BoxCoords, b: &BoxCoords) -> Ordering {
    center_x(a)
        .total_cmp(&center_x(b))
        .then_with(|| center_y(a).total_cmp(&center_y(b)))
}
