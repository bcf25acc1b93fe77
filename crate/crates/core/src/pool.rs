//! Permutation-invariant set pooling.
//!
//! Attention pooling scores each row `x_i` of an `N×D` set as
//! `wᵀ tanh(V x_iᵀ)`, normalizes the scores with a softmax over the set,
//! and returns the weighted sum `Σ a_i x_i`. The multi-head variant runs `H`
//! independent poolings, stacks their outputs, and projects the `H·D`
//! vector back to `D`. Max and mean pooling are provided as baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::uniform_init;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// One attention-pooling head: `V ∈ R^{L×D}`, `w ∈ R^L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionPoolParams {
    pub v: ParamId,
    pub w: ParamId,
    pub hidden: usize,
    pub dim: usize,
}

impl AttentionPoolParams {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let v = store.add(format!("{name}.V"), uniform_init(&[hidden, dim], dim, rng));
        let w = store.add(format!("{name}.w"), uniform_init(&[hidden], hidden, rng));
        Self { v, w, hidden, dim }
    }

    /// Registers explicit `V` (`L×D`) and `w` (`L`) values.
    pub fn from_tensors(store: &mut ParamStore, name: &str, v: Tensor, w: Tensor) -> Result<Self> {
        let (hidden, dim) = match *v.shape() {
            [l, d] => (l, d),
            _ => return Err(Error::dim("attention_pool", format!("V must be L×D, got {:?}", v.shape()))),
        };
        if w.shape() != [hidden] {
            return Err(Error::shape("attention_pool", v.shape(), w.shape()));
        }
        let v = store.add(format!("{name}.V"), v);
        let w = store.add(format!("{name}.w"), w);
        Ok(Self { v, w, hidden, dim })
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.dim + self.hidden
    }
}

fn check_set(tape: &Tape, x: Var, dim: usize) -> Result<usize> {
    match *tape.shape(x) {
        [n, d] if d == dim => Ok(n),
        _ => Err(Error::dim(
            "attention_pool",
            format!("expected an N×{dim} set, got {:?}", tape.shape(x)),
        )),
    }
}

/// Pre-softmax scores `wᵀ tanh(V x_iᵀ)`, one per row.
pub fn attention_scores(tape: &mut Tape, store: &ParamStore, x: Var, p: &AttentionPoolParams) -> Result<Var> {
    let n = check_set(tape, x, p.dim)?;
    let v = tape.param(store, p.v);
    let w = tape.param(store, p.w);
    let hidden = tape.matmul_t(x, v)?;
    let hidden = tape.tanh(hidden);
    let w_col = tape.reshape(w, &[p.hidden, 1])?;
    let scores = tape.matmul(hidden, w_col)?;
    tape.reshape(scores, &[n])
}

/// Attention weights `a_i`: nonnegative and summing to one over the set.
pub fn attention_weights(tape: &mut Tape, store: &ParamStore, x: Var, p: &AttentionPoolParams) -> Result<Var> {
    let scores = attention_scores(tape, store, x, p)?;
    tape.softmax(scores)
}

/// `Σ a_i x_i` over the rows of `x: N×D`.
pub fn attention_pool(tape: &mut Tape, store: &ParamStore, x: Var, p: &AttentionPoolParams) -> Result<Var> {
    let a = attention_weights(tape, store, x, p)?;
    weighted_sum(tape, x, a)
}

fn weighted_sum(tape: &mut Tape, x: Var, a: Var) -> Result<Var> {
    let n = tape.value(a).len();
    let d = tape.shape(x)[1];
    let a_row = tape.reshape(a, &[1, n])?;
    let pooled = tape.matmul(a_row, x)?;
    tape.reshape(pooled, &[d])
}

/// `H` attention heads whose stacked outputs are projected back to `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadPoolParams {
    pub heads: Vec<AttentionPoolParams>,
    /// `(H·D)×D`
    pub projection: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl MultiHeadPoolParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        heads: usize,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("multi-head pooling needs at least one head".into()));
        }
        let heads: Vec<_> = (0..heads)
            .map(|h| AttentionPoolParams::init(store, &format!("{name}.head{h}"), dim, hidden, rng))
            .collect();
        let fan_in = heads.len() * dim;
        let projection = store.add(
            format!("{name}.proj.weight"),
            uniform_init(&[fan_in, dim], fan_in, rng),
        );
        let bias = store.add(format!("{name}.proj.bias"), uniform_init(&[dim], fan_in, rng));
        Ok(Self {
            heads,
            projection,
            bias,
            dim,
        })
    }

    /// Assembles a multi-head block from existing heads and explicit
    /// projection values.
    pub fn from_parts(
        store: &mut ParamStore,
        name: &str,
        heads: Vec<AttentionPoolParams>,
        projection: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        let dim = heads.first().ok_or(Error::EmptySet("multi_head_pool"))?.dim;
        let hidden = heads[0].hidden;
        if heads.iter().any(|h| h.dim != dim || h.hidden != hidden) {
            return Err(Error::Config("all heads must share L and D".into()));
        }
        if projection.shape() != [heads.len() * dim, dim] || bias.shape() != [dim] {
            return Err(Error::shape("multi_head_pool", projection.shape(), bias.shape()));
        }
        let projection = store.add(format!("{name}.proj.weight"), projection);
        let bias = store.add(format!("{name}.proj.bias"), bias);
        Ok(Self {
            heads,
            projection,
            bias,
            dim,
        })
    }

    pub fn num_params(&self) -> usize {
        let h = self.heads.len();
        self.heads.iter().map(AttentionPoolParams::num_params).sum::<usize>() + h * self.dim * self.dim + self.dim
    }
}

pub fn multi_head_pool(tape: &mut Tape, store: &ParamStore, x: Var, p: &MultiHeadPoolParams) -> Result<Var> {
    let mut outs = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        outs.push(attention_pool(tape, store, x, head)?);
    }
    let stacked = tape.concat(&outs)?;
    let hd = p.heads.len() * p.dim;
    let row = tape.reshape(stacked, &[1, hd])?;
    let w = tape.param(store, p.projection);
    let b = tape.param(store, p.bias);
    let projected = tape.matmul(row, w)?;
    let projected = tape.add_bias(projected, b)?;
    tape.reshape(projected, &[p.dim])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselinePool {
    Max,
    Mean,
}

/// Coordinatewise max or mean over the rows of `x: N×D`.
pub fn baseline_pool(tape: &mut Tape, x: Var, kind: BaselinePool) -> Result<Var> {
    match kind {
        BaselinePool::Max => tape.max_rows(x),
        BaselinePool::Mean => tape.mean_rows(x),
    }
}

/// Loads `rows` onto the tape as an `N×D` constant; rejects an empty or
/// ragged set.
pub fn set_constant(tape: &mut Tape, rows: &[Vec<f64>]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::EmptySet("pool"));
    }
    Ok(tape.constant(Tensor::from_rows(rows)?))
}
