//! The full recognition head: feature embedding, team-wise multi-head
//! pooling, the coordinate branch, per-task classifier heads, gated fusion,
//! the individual-action head, and the combined loss.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coord::{boxes_constant, coordinate_features, sort_order, BoxCoords, CoordinateConfig, CoordinateModuleParams};
use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::labels::{Mode, TaskConfig};
use crate::nn::Linear;
use crate::pool::{attention_pool, baseline_pool, multi_head_pool, AttentionPoolParams, BaselinePool, MultiHeadPoolParams};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Set-pooling operator used by every pooling site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Attention,
    Max,
    Mean,
}

/// Which branches feed the classifier heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branches {
    Both,
    VisualOnly,
    CoordinateOnly,
}

impl Branches {
    pub fn visual(self) -> bool {
        self != Branches::CoordinateOnly
    }

    pub fn coordinate(self) -> bool {
        self != Branches::VisualOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of the ingested per-actor feature vectors.
    pub feature_dim: usize,
    /// Embedding width `D`.
    pub dim: usize,
    /// Attention hidden width `L`.
    pub hidden: usize,
    /// Attention heads per team pool.
    pub heads: usize,
    pub coordinate: CoordinateConfig,
    pub pooling: Pooling,
    pub branches: Branches,
    /// One multi-head pool for both teams instead of one each.
    pub share_team_pools: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            dim: 128,
            hidden: 512,
            heads: 2,
            coordinate: CoordinateConfig::default(),
            pooling: Pooling::Attention,
            branches: Branches::Both,
            share_team_pools: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.dim == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::Config("feature_dim, dim, hidden and heads must be positive".into()));
        }
        self.coordinate.validate()
    }
}

/// Ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    OnlyCoordinate,
    NoCoordinate,
    NoAuxLosses,
    MaxPool,
    MeanPool,
    Heads(usize),
}

impl Variant {
    /// Applies the substitution on top of the given configs.
    pub fn configure(self, model: &ModelConfig, task: &TaskConfig) -> Result<(ModelConfig, TaskConfig)> {
        let (mut model, mut task) = (*model, task.clone());
        match self {
            Variant::Full => {}
            Variant::OnlyCoordinate => model.branches = Branches::CoordinateOnly,
            Variant::NoCoordinate => model.branches = Branches::VisualOnly,
            Variant::NoAuxLosses => task.beta = 0.0,
            Variant::MaxPool => model.pooling = Pooling::Max,
            Variant::MeanPool => model.pooling = Pooling::Mean,
            Variant::Heads(0) => return Err(Error::Config("heads(0) is not a valid variant".into())),
            Variant::Heads(h) => model.heads = h,
        }
        Ok((model, task))
    }

    /// Row name in ablation tables.
    pub fn table_label(self) -> String {
        match self {
            Variant::Full => "DECOMPL".into(),
            Variant::OnlyCoordinate => "only coordinate module".into(),
            Variant::NoCoordinate => "w/o coordinate module".into(),
            Variant::NoAuxLosses => "w/o multiple loss signals".into(),
            Variant::MaxPool => "max pooling".into(),
            Variant::MeanPool => "mean pooling".into(),
            Variant::Heads(h) => h.to_string(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::OnlyCoordinate => f.write_str("only-coordinate"),
            Variant::NoCoordinate => f.write_str("no-coordinate"),
            Variant::NoAuxLosses => f.write_str("no-aux-losses"),
            Variant::MaxPool => f.write_str("max-pool"),
            Variant::MeanPool => f.write_str("mean-pool"),
            Variant::Heads(h) => write!(f, "heads({h})"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "full" => Variant::Full,
            "only-coordinate" => Variant::OnlyCoordinate,
            "no-coordinate" => Variant::NoCoordinate,
            "no-aux-losses" => Variant::NoAuxLosses,
            "max-pool" => Variant::MaxPool,
            "mean-pool" => Variant::MeanPool,
            _ => {
                let count = s
                    .strip_prefix("heads(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("heads-"));
                match count.and_then(|c| c.parse().ok()) {
                    Some(h) if h > 0 => Variant::Heads(h),
                    _ => return Err(Error::Config(format!("unknown variant {s:?}"))),
                }
            }
        })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Group, side and team classifiers reading one branch's summary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHeads {
    pub group: Linear,
    pub side: Option<Linear>,
    pub team: Option<Linear>,
}

impl TaskHeads {
    fn init(store: &mut ParamStore, name: &str, inputs: usize, task: &TaskConfig, rng: &mut ChaCha8Rng) -> Self {
        let group = Linear::init(store, &format!("{name}.group"), inputs, task.num_groups(), rng);
        let (side, team) = if task.is_volleyball() {
            (
                Some(Linear::init(store, &format!("{name}.side"), inputs, task.side_labels.len(), rng)),
                Some(Linear::init(store, &format!("{name}.team"), inputs, task.team_labels.len(), rng)),
            )
        } else {
            (None, None)
        };
        Self { group, side, team }
    }

    fn num_params(&self) -> usize {
        self.group.num_params()
            + self.side.as_ref().map_or(0, Linear::num_params)
            + self.team.as_ref().map_or(0, Linear::num_params)
    }
}

/// Fusion gate logits `λ`; the visual branch receives weight `σ(λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gates {
    pub group: ParamId,
    pub side: Option<ParamId>,
    pub team: Option<ParamId>,
}

/// Every learnable tensor of the head, plus the configs that shaped it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub task: TaskConfig,
    pub store: ParamStore,
    pub embedding: Linear,
    /// `[left, right]` in volleyball mode (one entry when shared), `[all]` in
    /// generic mode; empty without attention pooling or visual branch.
    pub visual_pools: Vec<MultiHeadPoolParams>,
    pub coordinate: Option<CoordinateModuleParams>,
    pub coordinate_pool: Option<AttentionPoolParams>,
    pub visual_heads: Option<TaskHeads>,
    pub coordinate_heads: Option<TaskHeads>,
    pub individual: Linear,
    pub gates: Option<Gates>,
}

impl ModelParams {
    /// Builds and randomly initializes every parameter from `seed`.
    pub fn new(config: ModelConfig, task: TaskConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        task.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embedding = Linear::init(&mut store, "embedding", config.feature_dim, d, &mut rng);

        let attention = config.pooling == Pooling::Attention;
        let mut visual_pools = Vec::new();
        let mut visual_heads = None;
        if config.branches.visual() {
            let pools = match task.mode {
                Mode::Volleyball if !config.share_team_pools => vec!["visual.left", "visual.right"],
                Mode::Volleyball => vec!["visual.teams"],
                Mode::Generic => vec!["visual.all"],
            };
            if attention {
                for name in pools {
                    visual_pools.push(MultiHeadPoolParams::init(&mut store, name, config.heads, d, config.hidden, &mut rng)?);
                }
            }
            let width = if task.is_volleyball() { 2 * d } else { d };
            visual_heads = Some(TaskHeads::init(&mut store, "visual.heads", width, &task, &mut rng));
        }

        let mut coordinate = None;
        let mut coordinate_pool = None;
        let mut coordinate_heads = None;
        if config.branches.coordinate() {
            coordinate = Some(CoordinateModuleParams::init(&mut store, "coord", config.coordinate, d, &mut rng)?);
            if attention {
                coordinate_pool = Some(AttentionPoolParams::init(&mut store, "coord.pool", d, config.hidden, &mut rng));
            }
            coordinate_heads = Some(TaskHeads::init(&mut store, "coord.heads", d, &task, &mut rng));
        }

        let individual = Linear::init(&mut store, "individual", d, task.num_individual(), &mut rng);

        let gates = (config.branches == Branches::Both).then(|| {
            let mut gate = |name: &str| store.add(format!("gate.{name}"), Tensor::scalar(0.0));
            let group = gate("group");
            let (side, team) = if task.is_volleyball() {
                (Some(gate("side")), Some(gate("team")))
            } else {
                (None, None)
            };
            Gates { group, side, team }
        });

        Ok(Self {
            config,
            task,
            store,
            embedding,
            visual_pools,
            coordinate,
            coordinate_pool,
            visual_heads,
            coordinate_heads,
            individual,
            gates,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Learnable scalars excluding the feature embedding.
    pub fn num_params_without_embedding(&self) -> usize {
        self.num_params() - self.embedding.num_params()
    }

    /// Per-component parameter counts, embedding excluded.
    pub fn param_breakdown(&self) -> Vec<(&'static str, usize)> {
        let mut rows = vec![(
            "visual_pool",
            self.visual_pools.iter().map(MultiHeadPoolParams::num_params).sum(),
        )];
        rows.push(("coordinate_module", self.coordinate.as_ref().map_or(0, |c| c.num_params())));
        rows.push(("coordinate_pool", self.coordinate_pool.as_ref().map_or(0, |p| p.num_params())));
        let heads = self.visual_heads.as_ref().map_or(0, TaskHeads::num_params)
            + self.coordinate_heads.as_ref().map_or(0, TaskHeads::num_params);
        rows.push(("classifier_heads", heads));
        rows.push(("fusion", self.gate_ids().len()));
        rows.push(("individual_head", self.individual.num_params()));
        rows
    }

    pub fn gate_ids(&self) -> Vec<ParamId> {
        self.gates
            .iter()
            .flat_map(|g| [Some(g.group), g.side, g.team])
            .flatten()
            .collect()
    }

    /// `σ(λ)` for (group, side, team); `None` when the gate does not exist.
    pub fn gate_values(&self) -> GateValues {
        let value = |id: Option<ParamId>| id.map(|id| sigmoid(self.store.get(id).data()[0]));
        GateValues {
            group: value(self.gates.map(|g| g.group)),
            side: value(self.gates.and_then(|g| g.side)),
            team: value(self.gates.and_then(|g| g.team)),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GateValues {
    pub group: Option<f64>,
    pub side: Option<f64>,
    pub team: Option<f64>,
}

/// Logits for one task: the fused decision and the branch inputs to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLogits {
    pub fused: Var,
    pub visual: Option<Var>,
    pub coordinate: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub group: TaskLogits,
    pub side: Option<TaskLogits>,
    pub team: Option<TaskLogits>,
    /// `N×|individual|`, rows in input actor order.
    pub individual: Var,
    /// Left-to-right permutation of the input actors.
    pub order: Vec<usize>,
}

fn check_frame(params: &ModelParams, boxes: &[BoxCoords], features: &[Vec<f64>]) -> Result<()> {
    let n = boxes.len();
    let invalid = |message: String| Error::Validation {
        clip: "-".into(),
        location: String::new(),
        message,
    };
    if features.len() != n {
        return Err(invalid(format!("{n} boxes but {} feature rows", features.len())));
    }
    let f = params.config.feature_dim;
    if let Some(i) = features.iter().position(|r| r.len() != f) {
        return Err(invalid(format!("feature row {i} has length {}, expected {f}", features[i].len())));
    }
    let task = &params.task;
    if let (Some(expected), true) = (task.actors, task.strict_actors) {
        if n != expected {
            return Err(invalid(format!("{n} actors, expected {expected}")));
        }
    }
    if task.is_volleyball() && n < 2 {
        return Err(Error::Config(format!("volleyball mode needs at least two actors, got {n}")));
    }
    Ok(())
}

fn pool_set(tape: &mut Tape, store: &ParamStore, x: Var, pool: Option<&MultiHeadPoolParams>, kind: Pooling) -> Result<Var> {
    match (kind, pool) {
        (Pooling::Attention, Some(p)) => multi_head_pool(tape, store, x, p),
        (Pooling::Max, _) => baseline_pool(tape, x, BaselinePool::Max),
        (Pooling::Mean, _) => baseline_pool(tape, x, BaselinePool::Mean),
        (Pooling::Attention, None) => Err(Error::Contract("attention pooling without parameters".into())),
    }
}

fn fuse(tape: &mut Tape, store: &ParamStore, gate: Option<ParamId>, visual: Option<Var>, coord: Option<Var>) -> Result<Var> {
    match (visual, coord, gate) {
        (Some(v), Some(c), Some(g)) => {
            let lambda = tape.param(store, g);
            let s = tape.sigmoid(lambda);
            let neg = tape.scale(s, -1.0);
            let rest = tape.add_scalar(neg, 1.0);
            let v = tape.mul_scalar(v, s)?;
            let c = tape.mul_scalar(c, rest)?;
            tape.add(v, c)
        }
        (Some(v), None, _) => Ok(v),
        (None, Some(c), _) => Ok(c),
        _ => Err(Error::Contract("fusion needs at least one branch".into())),
    }
}

fn head_logits(tape: &mut Tape, store: &ParamStore, head: Option<&Linear>, x: Option<Var>) -> Result<Option<Var>> {
    match (head, x) {
        (Some(h), Some(x)) => h.forward_vec(tape, store, x).map(Some),
        _ => Ok(None),
    }
}

/// One frame forward. FLOPs are charged to the scopes `embedding`,
/// `individual_head`, `visual_pool`, `coordinate_module`,
/// `coordinate_pool`, `classifier_heads` and `fusion`.
pub fn forward_frame(
    tape: &mut Tape,
    params: &ModelParams,
    boxes: &[BoxCoords],
    features: &[Vec<f64>],
) -> Result<FramePrediction> {
    check_frame(params, boxes, features)?;
    let order = sort_order(boxes)?;
    let store = &params.store;
    let cfg = &params.config;
    let n = boxes.len();

    tape.set_scope("embedding");
    let x = tape.constant_from(&[n, cfg.feature_dim], features.iter().flatten().copied().collect())?;
    let embedded = params.embedding.forward(tape, store, x)?;

    tape.set_scope("individual_head");
    let individual = params.individual.forward(tape, store, embedded)?;

    let mut visual = None;
    if cfg.branches.visual() {
        tape.set_scope("visual_pool");
        let pools = &params.visual_pools;
        visual = Some(if params.task.is_volleyball() {
            let half = n / 2;
            let left = tape.gather_rows(embedded, &order[..half])?;
            let right = tape.gather_rows(embedded, &order[half..])?;
            let pl = pool_set(tape, store, left, pools.first(), cfg.pooling)?;
            let pr = pool_set(tape, store, right, pools.last(), cfg.pooling)?;
            tape.concat(&[pl, pr])?
        } else {
            let sorted = tape.gather_rows(embedded, &order)?;
            pool_set(tape, store, sorted, pools.first(), cfg.pooling)?
        });
    }

    let mut coordinate = None;
    if let Some(module) = &params.coordinate {
        tape.set_scope("coordinate_module");
        let sorted: Vec<BoxCoords> = order.iter().map(|&i| boxes[i]).collect();
        let b = boxes_constant(tape, &sorted)?;
        let loc = coordinate_features(tape, store, b, module)?;
        tape.set_scope("coordinate_pool");
        coordinate = Some(match &params.coordinate_pool {
            Some(p) => attention_pool(tape, store, loc, p)?,
            None => pool_set(tape, store, loc, None, cfg.pooling)?,
        });
    }

    tape.set_scope("classifier_heads");
    let vh = params.visual_heads.as_ref();
    let ch = params.coordinate_heads.as_ref();
    let vg = head_logits(tape, store, vh.map(|h| &h.group), visual)?;
    let cg = head_logits(tape, store, ch.map(|h| &h.group), coordinate)?;
    let vs = head_logits(tape, store, vh.and_then(|h| h.side.as_ref()), visual)?;
    let cs = head_logits(tape, store, ch.and_then(|h| h.side.as_ref()), coordinate)?;
    let vt = head_logits(tape, store, vh.and_then(|h| h.team.as_ref()), visual)?;
    let ct = head_logits(tape, store, ch.and_then(|h| h.team.as_ref()), coordinate)?;

    tape.set_scope("fusion");
    let gates = params.gates;
    let group = TaskLogits {
        fused: fuse(tape, store, gates.map(|g| g.group), vg, cg)?,
        visual: vg,
        coordinate: cg,
    };
    let (side, team) = if params.task.is_volleyball() {
        let side = TaskLogits {
            fused: fuse(tape, store, gates.and_then(|g| g.side), vs, cs)?,
            visual: vs,
            coordinate: cs,
        };
        let team = TaskLogits {
            fused: fuse(tape, store, gates.and_then(|g| g.team), vt, ct)?,
            visual: vt,
            coordinate: ct,
        };
        (Some(side), Some(team))
    } else {
        (None, None)
    };
    tape.set_scope("default");

    Ok(FramePrediction {
        group,
        side,
        team,
        individual,
        order,
    })
}

/// Loss components of one frame. `total` is the differentiable sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: Var,
    pub individual: f64,
    pub group: f64,
    pub side: f64,
    pub team: f64,
}

/// `L_individual + L_group + β (L_side + L_team)`; generic mode drops the
/// side and team terms. Unlabeled actors are left out of the individual
/// mean, and a frame without individual labels contributes no individual
/// loss.
pub fn total_loss(
    tape: &mut Tape,
    pred: &FramePrediction,
    group: usize,
    actions: &[Option<usize>],
    task: &TaskConfig,
) -> Result<LossTerms> {
    if group >= task.num_groups() {
        return Err(Error::Label(format!("group label {group} out of range")));
    }
    tape.set_scope("loss");
    let ind = tape.cross_entropy_rows(pred.individual, actions)?;
    let grp = tape.cross_entropy(pred.group.fused, group)?;
    let mut total = tape.add(ind, grp)?;
    let (mut side_value, mut team_value) = (0.0, 0.0);
    if let (Some(side), Some(team)) = (pred.side, pred.team) {
        let (s, t) = task.decompose(group)?;
        let ls = tape.cross_entropy(side.fused, s)?;
        let lt = tape.cross_entropy(team.fused, t)?;
        side_value = tape.scalar(ls);
        team_value = tape.scalar(lt);
        if task.beta != 0.0 {
            let aux = tape.add(ls, lt)?;
            let aux = tape.scale(aux, task.beta);
            total = tape.add(total, aux)?;
        }
    }
    tape.set_scope("default");
    Ok(LossTerms {
        total,
        individual: tape.scalar(ind),
        group: tape.scalar(grp),
        side: side_value,
        team: team_value,
    })
}

/// Plain-value outputs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutputs {
    pub group: Vec<f64>,
    pub side: Option<Vec<f64>>,
    pub team: Option<Vec<f64>>,
    /// Individual logits per actor, input order.
    pub individual: Vec<Vec<f64>>,
}

pub fn infer_frame(params: &ModelParams, boxes: &[BoxCoords], features: &[Vec<f64>]) -> Result<FrameOutputs> {
    let mut tape = Tape::new();
    let pred = forward_frame(&mut tape, params, boxes, features)?;
    let c = params.task.num_individual();
    Ok(FrameOutputs {
        group: tape.value(pred.group.fused).to_vec(),
        side: pred.side.map(|s| tape.value(s.fused).to_vec()),
        team: pred.team.map(|t| tape.value(t.fused).to_vec()),
        individual: tape.value(pred.individual).chunks(c).map(<[f64]>::to_vec).collect(),
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    crate::tensor::softmax_in_place(&mut p);
    p
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-class mean of frame distributions. Each class is summed in sorted
/// order, so the result does not depend on the order of the frames.
pub fn average_distributions(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(Error::EmptySet("frames"))?;
    let c = first.len();
    if frames.iter().any(|f| f.len() != c) {
        return Err(Error::dim("average_distributions", "frames disagree on class count"));
    }
    let t = frames.len() as f64;
    Ok((0..c)
        .map(|k| {
            let mut col: Vec<f64> = frames.iter().map(|f| f[k]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / t
        })
        .collect())
}

/// Softmax per frame, average, argmax.
pub fn aggregate_logits(frame_logits: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    let probs: Vec<Vec<f64>> = frame_logits.iter().map(|l| softmax(l)).collect();
    let mean = average_distributions(&probs)?;
    Ok((argmax(&mean), mean))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipPrediction {
    pub group: usize,
    pub group_probs: Vec<f64>,
    pub side_probs: Option<Vec<f64>>,
    pub team_probs: Option<Vec<f64>>,
    /// Per frame, the argmax individual action of each actor.
    pub individual: Vec<Vec<usize>>,
}

/// Clip decision by averaging per-frame group distributions.
pub fn predict_clip(params: &ModelParams, clip: &ClipRecord) -> Result<ClipPrediction> {
    if clip.frames.is_empty() {
        return Err(Error::Validation {
            clip: clip.clip_id.clone(),
            location: String::new(),
            message: "clip has no frames".into(),
        });
    }
    let outputs = clip
        .frames
        .iter()
        .map(|f| infer_frame(params, &f.boxes, &f.features))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Validation { location, message, .. } => Error::Validation {
                clip: clip.clip_id.clone(),
                location,
                message,
            },
            other => other,
        })?;
    let groups: Vec<Vec<f64>> = outputs.iter().map(|o| o.group.clone()).collect();
    let (group, group_probs) = aggregate_logits(&groups)?;
    let aux = |pick: fn(&FrameOutputs) -> Option<&Vec<f64>>| -> Result<Option<Vec<f64>>> {
        let rows: Option<Vec<Vec<f64>>> = outputs.iter().map(|o| pick(o).map(|l| softmax(l))).collect();
        rows.map(|r| average_distributions(&r)).transpose()
    };
    Ok(ClipPrediction {
        group,
        group_probs,
        side_probs: aux(|o| o.side.as_ref())?,
        team_probs: aux(|o| o.team.as_ref())?,
        individual: outputs
            .iter()
            .map(|o| o.individual.iter().map(|l| argmax(l)).collect())
            .collect(),
    })
}
