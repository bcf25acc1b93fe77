//! Randomized finite-difference cases for every tape operation, the pools,
//! the coordinate branch and the whole model.

use super::{check_gradients, random_boxes, random_features, random_tensor, weighted_sum, TOLERANCE};
use decompl_core::coord::{boxes_constant, coordinate_branch, CoordinateConfig, CoordinateModuleParams};
use decompl_core::model::{forward_frame, total_loss, ModelConfig, ModelParams, Pooling};
use decompl_core::pool::{attention_pool, multi_head_pool, AttentionPoolParams, MultiHeadPoolParams};
use decompl_core::tensor::{ParamId, ParamStore, Tape, Var};
use decompl_core::{Result, TaskConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 100;

type Loss = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

fn run(name: &str, seed: u64, limit: Option<usize>, setup: impl Fn(&mut ChaCha8Rng) -> (ParamStore, Loss)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut attempts, mut worst) = (0, 0, 0.0f64);
    while accepted < CASES {
        attempts += 1;
        assert!(attempts < 20 * CASES, "{name}: too many cases rejected near kinks");
        let (mut store, loss) = setup(&mut rng);
        let check = check_gradients(&mut store, limit, &*loss).unwrap();
        if check.margin < 1e-4 {
            continue;
        }
        assert!(check.probes > 0);
        assert!(
            check.worst < TOLERANCE,
            "{name} case {accepted}: relative error {:e}",
            check.worst
        );
        worst = worst.max(check.worst);
        accepted += 1;
    }
    println!("{name}: {CASES} cases, worst relative error {worst:.2e}");
}

/// Registers random inputs of the given shapes and contracts `op`'s output
/// with a random weight tensor.
fn op_case(
    rng: &mut ChaCha8Rng,
    shapes: &[Vec<usize>],
    scale: f64,
    out_len: usize,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> (ParamStore, Loss) {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("in{i}"), random_tensor(rng, s, scale)))
        .collect();
    let weights = random_tensor(rng, &[out_len], 1.0);
    let loss: Loss = Box::new(move |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = op(tape, &vars)?;
        weighted_sum(tape, &weights, out)
    });
    (store, loss)
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=5)
}

pub fn matmul_and_transposed_matmul() {
    run("matmul", 1, None, |rng| {
        let (m, k, n) = (dim(rng), dim(rng), dim(rng));
        op_case(rng, &[vec![m, k], vec![k, n]], 1.0, m * n, |t, v| t.matmul(v[0], v[1]))
    });
    run("matmul_t", 2, None, |rng| {
        let (m, k, n) = (dim(rng), dim(rng), dim(rng));
        op_case(rng, &[vec![m, k], vec![n, k]], 1.0, m * n, |t, v| t.matmul_t(v[0], v[1]))
    });
}

pub fn elementwise_binary() {
    run("add", 3, None, |rng| {
        let s = vec![dim(rng), dim(rng)];
        let n = s[0] * s[1];
        op_case(rng, &[s.clone(), s], 1.0, n, |t, v| t.add(v[0], v[1]))
    });
    run("sub", 4, None, |rng| {
        let s = vec![dim(rng), dim(rng)];
        let n = s[0] * s[1];
        op_case(rng, &[s.clone(), s], 1.0, n, |t, v| t.sub(v[0], v[1]))
    });
    run("mul", 5, None, |rng| {
        let s = vec![dim(rng), dim(rng)];
        let n = s[0] * s[1];
        op_case(rng, &[s.clone(), s], 1.0, n, |t, v| t.mul(v[0], v[1]))
    });
    run("add_bias", 6, None, |rng| {
        let (r, c) = (dim(rng), dim(rng));
        op_case(rng, &[vec![r, c], vec![c]], 1.0, r * c, |t, v| t.add_bias(v[0], v[1]))
    });
    run("mul_scalar", 7, None, |rng| {
        let n = dim(rng) * 2;
        op_case(rng, &[vec![n], vec![1]], 1.0, n, |t, v| t.mul_scalar(v[0], v[1]))
    });
}

pub fn elementwise_unary() {
    run("scale", 8, None, |rng| {
        let n = dim(rng) * 3;
        let c = rng.gen_range(-2.0..2.0);
        op_case(rng, &[vec![n]], 1.0, n, move |t, v| Ok(t.scale(v[0], c)))
    });
    run("add_scalar", 9, None, |rng| {
        let n = dim(rng) * 3;
        let c = rng.gen_range(-2.0..2.0);
        op_case(rng, &[vec![n]], 1.0, n, move |t, v| Ok(t.add_scalar(v[0], c)))
    });
    run("tanh", 10, None, |rng| {
        let n = dim(rng) * 3;
        op_case(rng, &[vec![n]], 2.0, n, |t, v| Ok(t.tanh(v[0])))
    });
    run("sigmoid", 11, None, |rng| {
        let n = dim(rng) * 3;
        op_case(rng, &[vec![n]], 4.0, n, |t, v| Ok(t.sigmoid(v[0])))
    });
    run("relu", 12, None, |rng| {
        let n = dim(rng) * 3;
        op_case(rng, &[vec![n]], 1.0, n, |t, v| Ok(t.relu(v[0])))
    });
    run("softmax", 13, None, |rng| {
        let (r, c) = (dim(rng), dim(rng) + 1);
        op_case(rng, &[vec![r, c]], 3.0, r * c, |t, v| t.softmax(v[0]))
    });
    run("sum", 14, None, |rng| {
        let n = dim(rng) * 3;
        op_case(rng, &[vec![n]], 1.0, 1, |t, v| Ok(t.sum(v[0])))
    });
}

pub fn structural_ops() {
    run("reshape", 15, None, |rng| {
        let (a, b) = (dim(rng), dim(rng));
        op_case(rng, &[vec![a, b]], 1.0, a * b, move |t, v| t.reshape(v[0], &[b, a]))
    });
    run("gather_rows", 16, None, |rng| {
        let (n, d) = (dim(rng) + 1, dim(rng));
        let idx: Vec<usize> = (0..rng.gen_range(1..=2 * n)).map(|_| rng.gen_range(0..n)).collect();
        let len = idx.len() * d;
        op_case(rng, &[vec![n, d]], 1.0, len, move |t, v| t.gather_rows(v[0], &idx))
    });
    run("concat", 17, None, |rng| {
        let (a, b) = (dim(rng), dim(rng));
        op_case(rng, &[vec![a], vec![b, 2]], 1.0, a + 2 * b, |t, v| t.concat(v))
    });
    run("pad_last", 18, None, |rng| {
        let (r, c) = (dim(rng), dim(rng));
        let to = c + rng.gen_range(0..4);
        op_case(rng, &[vec![r, c]], 1.0, r * to, move |t, v| t.pad_last(v[0], to))
    });
    run("pairwise_diff", 19, None, |rng| {
        let (n, c) = (dim(rng), dim(rng));
        op_case(rng, &[vec![n, c]], 1.0, n * n * c, |t, v| t.pairwise_diff(v[0]))
    });
}

pub fn set_reductions() {
    run("max_rows", 20, None, |rng| {
        let (n, d) = (dim(rng), dim(rng));
        op_case(rng, &[vec![n, d]], 1.0, d, |t, v| t.max_rows(v[0]))
    });
    run("mean_rows", 21, None, |rng| {
        let (n, d) = (dim(rng), dim(rng));
        op_case(rng, &[vec![n, d]], 1.0, d, |t, v| t.mean_rows(v[0]))
    });
}

pub fn conv1d() {
    run("conv1d", 22, None, |rng| {
        let (b, cin, cout) = (rng.gen_range(1..=3), dim(rng), dim(rng));
        let k = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let padding = rng.gen_range(0..=2);
        let len = k + rng.gen_range(0..6);
        let out_len = (len + 2 * padding - k) / stride + 1;
        let with_bias = rng.gen_bool(0.5);
        let mut shapes = vec![vec![b, cin, len], vec![cout, cin, k]];
        if with_bias {
            shapes.push(vec![cout]);
        }
        op_case(rng, &shapes, 1.0, b * cout * out_len, move |t, v| {
            t.conv1d(v[0], v[1], v.get(2).copied(), stride, padding)
        })
    });
}

pub fn cross_entropy() {
    run("cross_entropy", 23, None, |rng| {
        let c = dim(rng) + 1;
        let target = rng.gen_range(0..c);
        op_case(rng, &[vec![c]], 3.0, 1, move |t, v| t.cross_entropy(v[0], target))
    });
    run("cross_entropy_rows", 24, None, |rng| {
        let (n, c) = (dim(rng), dim(rng) + 1);
        let mut targets: Vec<Option<usize>> = (0..n).map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0..c))).collect();
        targets[0] = Some(rng.gen_range(0..c));
        op_case(rng, &[vec![n, c]], 3.0, 1, move |t, v| t.cross_entropy_rows(v[0], &targets))
    });
}

pub fn attention_pooling() {
    run("attention_pool", 25, None, |rng| {
        let (n, d, l) = (dim(rng), dim(rng), dim(rng));
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(rng, &[n, d], 1.0));
        let p = AttentionPoolParams::init(&mut store, "pool", d, l, rng);
        let weights = random_tensor(rng, &[d], 1.0);
        let loss: Loss = Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            let out = attention_pool(tape, store, xv, &p)?;
            weighted_sum(tape, &weights, out)
        });
        (store, loss)
    });
    run("multi_head_pool", 26, None, |rng| {
        let (n, d, l, h) = (dim(rng), dim(rng), dim(rng), rng.gen_range(1..=3));
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(rng, &[n, d], 1.0));
        let p = MultiHeadPoolParams::init(&mut store, "pool", h, d, l, rng).unwrap();
        let weights = random_tensor(rng, &[d], 1.0);
        let loss: Loss = Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            let out = multi_head_pool(tape, store, xv, &p)?;
            weighted_sum(tape, &weights, out)
        });
        (store, loss)
    });
}

pub fn coordinate_branch_parameters() {
    run("coordinate_branch", 27, None, |rng| {
        let n = rng.gen_range(1..=6);
        let cfg = CoordinateConfig {
            channels: rng.gen_range(1..=3),
            layers: rng.gen_range(1..=2),
            kernel: 3,
            max_actors: 6,
        };
        let d = dim(rng);
        let mut store = ParamStore::new();
        let module = CoordinateModuleParams::init(&mut store, "coord", cfg, d, rng).unwrap();
        let pool = AttentionPoolParams::init(&mut store, "pool", d, dim(rng), rng);
        let mut boxes = random_boxes(rng, n);
        boxes.sort_by(|a, b| (a[0] + a[2]).total_cmp(&(b[0] + b[2])));
        let weights = random_tensor(rng, &[d], 1.0);
        let loss: Loss = Box::new(move |tape, store| {
            let b = boxes_constant(tape, &boxes)?;
            let out = coordinate_branch(tape, store, b, &module, &pool)?;
            weighted_sum(tape, &weights, out)
        });
        (store, loss)
    });
}

fn model_case(rng: &mut ChaCha8Rng, pooling: Pooling) -> (ParamStore, Loss) {
    let cfg = ModelConfig {
        feature_dim: 5,
        dim: 4,
        hidden: 6,
        heads: 2,
        coordinate: CoordinateConfig {
            channels: 2,
            layers: 2,
            kernel: 3,
            max_actors: 12,
        },
        pooling,
        ..ModelConfig::default()
    };
    let task = TaskConfig::volleyball();
    let mut params = ModelParams::new(cfg, task.clone(), rng.gen()).unwrap();
    for id in params.gate_ids() {
        params.store.get_mut(id).data_mut()[0] = rng.gen_range(-1.5..1.5);
    }
    let boxes = random_boxes(rng, 12);
    let features = random_features(rng, 12, 5);
    let actions: Vec<Option<usize>> = (0..12).map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..9))).collect();
    let group = rng.gen_range(0..8);
    let store = std::mem::take(&mut params.store);
    let frozen = params.clone();
    let loss: Loss = Box::new(move |tape, store| {
        let mut view = frozen.clone();
        view.store = store.clone();
        let pred = forward_frame(tape, &view, &boxes, &features)?;
        Ok(total_loss(tape, &pred, group, &actions, &task)?.total)
    });
    (store, loss)
}

pub fn whole_model_loss() {
    run("model", 28, Some(12), |rng| model_case(rng, Pooling::Attention));
    run("model (max pooling)", 29, Some(6), |rng| model_case(rng, Pooling::Max));
}

/// Every group above, in order.
pub fn all() {
    matmul_and_transposed_matmul();
    elementwise_binary();
    elementwise_unary();
    structural_ops();
    set_reductions();
    conv1d();
    cross_entropy();
    attention_pooling();
    coordinate_branch_parameters();
    whole_model_loss();
}
