use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coord::BoxCoords;
use crate::error::Result;
use crate::model::{forward_frame, Branches, ModelParams, Pooling};
use crate::tensor::Tape;

/// Cost-bearing parts of one frame forward, in report order. The feature
/// embedding is counted separately and left out of the totals.
pub const PROFILE_SCOPES: [&str; 6] = [
    "visual_pool",
    "coordinate_module",
    "coordinate_pool",
    "classifier_heads",
    "fusion",
    "individual_head",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProfileRow {
    pub module: String,
    pub params: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProfileReport {
    pub actors: usize,
    pub rows: Vec<ProfileRow>,
    /// Parameters and FLOPs of the excluded feature embedding.
    pub embedding_params: usize,
    pub embedding_flops: u64,
}

impl ProfileReport {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }
}

fn attention_flops(n: u64, d: u64, l: u64) -> u64 {
    // scores V·xᵀ, tanh, w-projection, softmax, weighted sum
    2 * n * d * l + n * l + 2 * n * l + 5 * n + 2 * n * d
}

fn pool_flops(n: u64, d: u64, l: u64, heads: u64, pooling: Pooling) -> u64 {
    match pooling {
        Pooling::Attention => heads * attention_flops(n, d, l) + 2 * heads * d * d + d,
        Pooling::Max => n * d,
        Pooling::Mean => n * d + d,
    }
}

fn linear_flops(rows: u64, inputs: u64, outputs: u64) -> u64 {
    2 * rows * inputs * outputs + rows * outputs
}

/// Closed-form parameter and FLOP counts for one frame of `actors` actors
/// (one multiply-accumulate = 2 FLOPs, one per element for nonlinearities).
pub fn profile(params: &ModelParams, actors: usize) -> ProfileReport {
    let cfg = &params.config;
    let task = &params.task;
    let (n, d, l, h) = (actors as u64, cfg.dim as u64, cfg.hidden as u64, cfg.heads as u64);
    let volleyball = task.is_volleyball();

    let visual = if cfg.branches.visual() {
        if volleyball {
            let left = n / 2;
            pool_flops(left, d, l, h, cfg.pooling) + pool_flops(n - left, d, l, h, cfg.pooling)
        } else {
            pool_flops(n, d, l, h, cfg.pooling)
        }
    } else {
        0
    };

    let (mut module, mut cpool) = (0, 0);
    if cfg.branches.coordinate() {
        let cc = &cfg.coordinate;
        let (c, m, k) = (cc.channels as u64, cc.max_actors as u64, cc.kernel as u64);
        module += n * n * 4;
        module += (2 * 4 + 1) * n * n;
        let mut in_ch = 1;
        for _ in 0..cc.layers {
            module += (2 * in_ch * k + 1) * c * n * m;
            module += c * n * m;
            in_ch = c;
        }
        module += linear_flops(n, c * m, d);
        cpool = match cfg.pooling {
            Pooling::Attention => attention_flops(n, d, l),
            other => pool_flops(n, d, l, 1, other),
        };
    }

    let mut classes = vec![task.num_groups() as u64];
    if volleyball {
        classes.push(task.side_labels.len() as u64);
        classes.push(task.team_labels.len() as u64);
    }
    let visual_width = if volleyball { 2 * d } else { d };
    let mut heads = 0;
    for &c in &classes {
        if cfg.branches.visual() {
            heads += linear_flops(1, visual_width, c);
        }
        if cfg.branches.coordinate() {
            heads += linear_flops(1, d, c);
        }
    }
    let fusion: u64 = if cfg.branches == Branches::Both {
        classes.iter().map(|c| 3 * c + 3).sum()
    } else {
        0
    };
    let individual = linear_flops(n, d, task.num_individual() as u64);

    let flops = [visual, module, cpool, heads, fusion, individual];
    let param_counts = params.param_breakdown();
    let rows = PROFILE_SCOPES
        .iter()
        .zip(flops)
        .map(|(&name, flops)| ProfileRow {
            module: name.to_string(),
            params: param_counts.iter().find(|r| r.0 == name).map_or(0, |r| r.1),
            flops,
        })
        .collect();
    ProfileReport {
        actors,
        rows,
        embedding_params: params.embedding.num_params(),
        embedding_flops: linear_flops(n, cfg.feature_dim as u64, d),
    }
}

/// The same report with FLOPs read from the tape's counters while running
/// one random frame.
pub fn profile_instrumented(params: &ModelParams, actors: usize, seed: u64) -> Result<ProfileReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<BoxCoords> = (0..actors)
        .map(|i| {
            let x = (i as f64 + rng.gen_range(0.1..0.5)) / (actors as f64 + 1.0);
            let y = rng.gen_range(0.1..0.6);
            [x, y, x + 0.02, y + 0.2]
        })
        .collect();
    let features: Vec<Vec<f64>> = (0..actors)
        .map(|_| (0..params.config.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut tape = Tape::new();
    forward_frame(&mut tape, params, &boxes, &features)?;
    let counter = tape.flops();
    let mut report = profile(params, actors);
    for row in &mut report.rows {
        row.flops = counter.get(&row.module);
    }
    report.embedding_flops = counter.get("embedding");
    Ok(report)
}

fn human(v: f64, units: &[(f64, &str)]) -> String {
    for &(scale, suffix) in units {
        if v >= scale {
            return format!("{:.3}{suffix}", v / scale);
        }
    }
    format!("{v:.0}")
}

/// Aligned table with `#Params` and `FLOPs` columns and a total row.
pub fn format_profile(report: &ProfileReport) -> String {
    let w = PROFILE_SCOPES.iter().map(|s| s.len()).max().unwrap_or(0).max("DECOMPL (total)".len());
    let params = |p: usize| human(p as f64, &[(1e6, "M"), (1e3, "K")]);
    let flops = |f: u64| human(f as f64, &[(1e9, "G"), (1e6, "M"), (1e3, "K")]);
    let mut out = format!("{:<w$}  {:>10}  {:>10}\n", "Module", "#Params", "FLOPs");
    for r in &report.rows {
        out.push_str(&format!("{:<w$}  {:>10}  {:>10}\n", r.module, params(r.params), flops(r.flops)));
    }
    out.push_str(&format!(
        "{:<w$}  {:>10}  {:>10}\n",
        "DECOMPL (total)",
        params(report.total_params()),
        flops(report.total_flops())
    ));
    out.push_str(&format!(
        "excluded feature embedding: {} params, {} FLOPs; {} actors per frame\n",
        params(report.embedding_params),
        flops(report.embedding_flops),
        report.actors
    ));
    out
}
