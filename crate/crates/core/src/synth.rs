//! Synthetic volleyball-like clips with a known labeling rule.
//!
//! Each clip draws a (side, team activity) pair. The acting side gets a key
//! actor whose action and placement depend on the activity:
//!
//! | activity | key actor action | key actor placement (distance from net, height) |
//! |----------|------------------|-------------------------------------------------|
//! | spike    | spiking          | 0.02–0.06, raised (center-y 0.20–0.30)          |
//! | set      | setting          | 0.10–0.18, center-y 0.35–0.50                   |
//! | pass     | digging          | 0.34–0.42, low (center-y 0.75–0.85)             |
//! | win      | standing (whole acting team) | team clustered within 0.06 of a point  |
//!
//! Every other actor is waiting or moving, placed uniformly in its half at
//! least 0.10 from the net. A feature row is `signal · prototype(action) +
//! noise · N(0, I)`; prototypes are random unit vectors drawn from a seed of
//! their own, so separately generated train and test sets share them.
//! Frames jitter every box center by `N(0, jitter²)`, clamped so actors
//! stay inside their half of the court.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{center_x, BoxCoords};
use crate::data::{quantize_box, ClipRecord, Dataset, FrameRecord};
use crate::error::{Error, Result};
use crate::labels::TaskConfig;
use crate::model::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Seed of the action prototypes; keep it fixed across splits.
    pub prototype_seed: u64,
    pub clips_per_class: usize,
    pub actors: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub jitter: f64,
    pub signal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            prototype_seed: 1_000_003,
            clips_per_class: 50,
            actors: 12,
            frames: 10,
            feature_dim: 128,
            noise: 0.5,
            jitter: 0.05,
            signal: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_class == 0 || self.actors == 0 || self.frames == 0 || self.feature_dim == 0 {
            return Err(Error::Config("synthetic dataset extents must be positive".into()));
        }
        if self.actors % 2 != 0 || self.actors < 2 {
            return Err(Error::Config(format!("actor count must be even, got {}", self.actors)));
        }
        for (name, v) in [("noise", self.noise), ("jitter", self.jitter), ("signal", self.signal)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative real, got {v}")));
            }
        }
        if self.signal == 0.0 {
            return Err(Error::Config("signal must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    Spike,
    Set,
    Pass,
    Win,
}

/// Individual-label ids the generator relies on.
#[derive(Debug, Clone, Copy)]
struct ActionIds {
    spiking: usize,
    setting: usize,
    digging: usize,
    standing: usize,
    waiting: usize,
    moving: usize,
}

impl ActionIds {
    fn new(task: &TaskConfig) -> Result<Self> {
        let id = |name: &str| {
            task.individual_id(name)
                .map_err(|_| Error::Config(format!("synthetic data needs the individual label {name:?}")))
        };
        Ok(Self {
            spiking: id("spiking")?,
            setting: id("setting")?,
            digging: id("digging")?,
            standing: id("standing")?,
            waiting: id("waiting")?,
            moving: id("moving")?,
        })
    }
}

fn activity_of(task: &TaskConfig, team: usize) -> Result<Activity> {
    Ok(match task.team_labels[team].as_str() {
        "spike" => Activity::Spike,
        "set" => Activity::Set,
        "pass" => Activity::Pass,
        "win" => Activity::Win,
        other => return Err(Error::Config(format!("no synthetic geometry for team activity {other:?}"))),
    })
}

/// One unit vector per individual action.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub vectors: Vec<Vec<f64>>,
}

impl Prototypes {
    pub fn new(cfg: &SynthConfig, task: &TaskConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.prototype_seed);
        let vectors = (0..task.num_individual())
            .map(|_| {
                let v: Vec<f64> = (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Self { vectors }
    }

    /// Action whose prototype has the largest inner product with `feature`,
    /// with that score.
    pub fn nearest(&self, feature: &[f64]) -> (usize, f64) {
        let scores: Vec<f64> = self
            .vectors
            .iter()
            .map(|p| p.iter().zip(feature).map(|(a, b)| a * b).sum())
            .collect();
        let best = argmax(&scores);
        (best, scores[best])
    }
}

const BOX_W: f64 = 0.04;
const BOX_H: f64 = 0.14;
const NET_MARGIN: f64 = 0.005;

struct Actor {
    cx: f64,
    cy: f64,
    left: bool,
    action: usize,
}

fn clamp_center(cx: f64, cy: f64, left: bool) -> (f64, f64) {
    let half_w = BOX_W / 2.0;
    let (lo, hi) = if left {
        (half_w, 0.5 - half_w - NET_MARGIN)
    } else {
        (0.5 + half_w + NET_MARGIN, 1.0 - half_w)
    };
    (cx.clamp(lo, hi), cy.clamp(BOX_H / 2.0, 1.0 - BOX_H / 2.0))
}

fn to_box(cx: f64, cy: f64) -> BoxCoords {
    quantize_box([cx - BOX_W / 2.0, cy - BOX_H / 2.0, cx + BOX_W / 2.0, cy + BOX_H / 2.0])
}

/// Center-x at `distance` from the net on the given side.
fn from_net(distance: f64, left: bool) -> f64 {
    if left {
        0.5 - distance
    } else {
        0.5 + distance
    }
}

fn layout(rng: &mut ChaCha8Rng, n: usize, acting_left: bool, activity: Activity, ids: &ActionIds) -> Vec<Actor> {
    let per_team = n / 2;
    let mut actors = Vec::with_capacity(n);
    for team_left in [true, false] {
        let acting = team_left == acting_left;
        let cluster = (rng.gen_range(0.15..0.30), rng.gen_range(0.35..0.75));
        for k in 0..per_team {
            let idle = if rng.gen_bool(0.5) { ids.waiting } else { ids.moving };
            let (d, cy, action) = match (acting, activity, k) {
                (true, Activity::Win, _) => (
                    cluster.0 + rng.gen_range(-0.06..0.06),
                    cluster.1 + rng.gen_range(-0.06..0.06),
                    ids.standing,
                ),
                (true, Activity::Spike, 0) => (rng.gen_range(0.02..0.06), rng.gen_range(0.20..0.30), ids.spiking),
                (true, Activity::Set, 0) => (rng.gen_range(0.10..0.18), rng.gen_range(0.35..0.50), ids.setting),
                (true, Activity::Pass, 0) => (rng.gen_range(0.34..0.42), rng.gen_range(0.75..0.85), ids.digging),
                _ => (rng.gen_range(0.10..0.45), rng.gen_range(0.30..0.85), idle),
            };
            let (cx, cy) = clamp_center(from_net(d, team_left), cy, team_left);
            actors.push(Actor {
                cx,
                cy,
                left: team_left,
                action,
            });
        }
    }
    actors.shuffle(rng);
    actors
}

fn clip(cfg: &SynthConfig, task: &TaskConfig, protos: &Prototypes, ids: &ActionIds, index: usize, group: usize) -> Result<ClipRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let (side, team) = task.decompose(group)?;
    let acting_left = task.side_labels[side] == "left";
    let activity = activity_of(task, team)?;
    let actors = layout(&mut rng, cfg.actors, acting_left, activity, ids);
    let mut frames = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        let mut boxes = Vec::with_capacity(actors.len());
        let mut features = Vec::with_capacity(actors.len());
        for a in &actors {
            let jx: f64 = StandardNormal.sample(&mut rng);
            let jy: f64 = StandardNormal.sample(&mut rng);
            let (cx, cy) = clamp_center(a.cx + cfg.jitter * jx, a.cy + cfg.jitter * jy, a.left);
            boxes.push(to_box(cx, cy));
            let proto = &protos.vectors[a.action];
            features.push(
                proto
                    .iter()
                    .map(|p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        ((cfg.signal * p + cfg.noise * z) * 1e4).round() / 1e4
                    })
                    .collect(),
            );
        }
        frames.push(FrameRecord {
            boxes,
            features,
            actions: actors.iter().map(|a| Some(a.action)).collect(),
        });
    }
    Ok(ClipRecord {
        clip_id: format!("{index}"),
        video_id: format!("s{}-v{}", cfg.seed, index / 10),
        group_label: group,
        frames,
    })
}

/// Balanced dataset: every group label appears `clips_per_class` times, in
/// seeded random order. Clips are generated in parallel, each from its own
/// stream of the seed.
pub fn generate(cfg: &SynthConfig, task: &TaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    task.validate()?;
    if !task.is_volleyball() {
        return Err(Error::Config("synthetic data is generated in volleyball mode".into()));
    }
    let ids = ActionIds::new(task)?;
    let protos = Prototypes::new(cfg, task);
    let mut labels: Vec<usize> = (0..task.num_groups())
        .flat_map(|g| std::iter::repeat(g).take(cfg.clips_per_class))
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let clips = labels
        .par_iter()
        .enumerate()
        .map(|(i, &g)| clip(cfg, task, &protos, &ids, i, g))
        .collect::<Result<Vec<_>>>()?;
    let mut task = task.clone();
    task.actors = Some(cfg.actors);
    Ok(Dataset {
        task,
        feature_dim: cfg.feature_dim,
        clips,
    })
}

/// Rule-based decision for one frame: the most confident signature action
/// names the activity and its actor's half names the side; without one,
/// the half with more standing actors wins the point.
fn oracle_frame(frame: &FrameRecord, protos: &Prototypes, ids: &ActionIds, task: &TaskConfig) -> Result<usize> {
    let mut best: Option<(f64, usize, bool)> = None;
    let mut standing = [0usize; 2];
    for (b, f) in frame.boxes.iter().zip(&frame.features) {
        let (action, score) = protos.nearest(f);
        let left = center_x(b) < 0.5;
        if [ids.spiking, ids.setting, ids.digging].contains(&action) {
            if best.map_or(true, |(s, _, _)| score > s) {
                best = Some((score, action, left));
            }
        } else if action == ids.standing {
            standing[usize::from(!left)] += 1;
        }
    }
    let team_name = |action: usize| {
        if action == ids.spiking {
            "spike"
        } else if action == ids.setting {
            "set"
        } else if action == ids.digging {
            "pass"
        } else {
            "win"
        }
    };
    let (action, left) = match best {
        Some((_, action, left)) => (action, left),
        None => (ids.standing, standing[0] >= standing[1]),
    };
    let side = task.side_id(if left { "left" } else { "right" })?;
    let team = task.team_id(team_name(action))?;
    task.compose(side, team)
}

/// Majority vote of per-frame oracle decisions; ties go to the lowest id.
pub fn oracle_predict(clip: &ClipRecord, protos: &Prototypes, task: &TaskConfig) -> Result<usize> {
    let ids = ActionIds::new(task)?;
    let mut votes = vec![0.0; task.num_groups()];
    for frame in &clip.frames {
        votes[oracle_frame(frame, protos, &ids, task)?] += 1.0;
    }
    Ok(argmax(&votes))
}

/// Fraction of clips the generating rule recovers from the data.
pub fn oracle_accuracy(dataset: &Dataset, protos: &Prototypes) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptySet("dataset"));
    }
    let hits = dataset
        .clips
        .iter()
        .map(|c| oracle_predict(c, protos, &dataset.task).map(|p| usize::from(p == c.group_label)))
        .sum::<Result<usize>>()?;
    Ok(hits as f64 / dataset.len() as f64)
}
