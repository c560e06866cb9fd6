//! Central finite differences against the tape gradients.

use cass_core::nets::forward::reparameterize;
use cass_core::pipeline::init_model;
use cass_core::tensor::{Graph, Var};
use cass_core::train::{batch_gradients, batch_loss, pose_loss, trainable_in, MixedBatch, PoseTarget};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{away_from_zero, rel_error, toy_config, toy_dataset, uniform};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub struct Input {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn input(rows: usize, cols: usize, data: Vec<f64>) -> Input {
    assert_eq!(rows * cols, data.len());
    Input { rows, cols, data }
}

/// Builds `f(inputs)` and contracts it with a fixed random weighting so any
/// output shape reduces to a scalar.
fn scalar_of(inputs: &[Vec<f64>], shapes: &[(usize, usize)], f: &dyn Fn(&mut Graph, &[Var]) -> Var, with_grad: bool) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(shapes)
        .map(|(d, &(r, c))| g.leaf(r, c, d.clone(), true).unwrap())
        .collect();
    let out = f(&mut g, &vars);
    let (r, c) = g.shape(out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = g.constant(r, c, uniform(&mut rng, r * c, -1.0, 1.0)).unwrap();
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod).unwrap();
    let value = g.scalar(loss).unwrap();
    if !with_grad {
        return (value, vec![]);
    }
    let grads = g.backward(loss).unwrap();
    let gs = vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();
    (value, gs)
}

pub fn max_op_error(inputs: Vec<Input>, f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let shapes: Vec<(usize, usize)> = inputs.iter().map(|i| (i.rows, i.cols)).collect();
    let data: Vec<Vec<f64>> = inputs.into_iter().map(|i| i.data).collect();
    let (_, analytic) = scalar_of(&data, &shapes, &f, true);
    let mut worst: f64 = 0.0;
    for k in 0..data.len() {
        for j in 0..data[k].len() {
            let mut plus = data.clone();
            plus[k][j] += STEP;
            let mut minus = data.clone();
            minus[k][j] -= STEP;
            let fp = scalar_of(&plus, &shapes, &f, false).0;
            let fm = scalar_of(&minus, &shapes, &f, false).0;
            let numeric = (fp - fm) / (2.0 * STEP);
            worst = worst.max(rel_error(analytic[k][j], numeric));
        }
    }
    worst
}

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(5)
}

/// Worst relative error of every differentiable primitive, by name.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng();
    let a = || input(3, 4, away_from_zero(&mut ChaCha8Rng::seed_from_u64(1), 12));
    let b = || input(3, 4, away_from_zero(&mut ChaCha8Rng::seed_from_u64(2), 12));
    out.push(("add", max_op_error(vec![a(), b()], |g, v| g.add(v[0], v[1]).unwrap())));
    out.push(("sub", max_op_error(vec![a(), b()], |g, v| g.sub(v[0], v[1]).unwrap())));
    out.push(("mul", max_op_error(vec![a(), b()], |g, v| g.mul(v[0], v[1]).unwrap())));
    out.push(("scale", max_op_error(vec![a()], |g, v| g.scale(v[0], -2.5).unwrap())));
    out.push(("add_scalar", max_op_error(vec![a()], |g, v| g.add_scalar(v[0], 0.7).unwrap())));
    out.push(("relu", max_op_error(vec![a()], |g, v| g.relu(v[0]).unwrap())));
    out.push(("exp", max_op_error(vec![a()], |g, v| g.exp(v[0]).unwrap())));
    out.push(("square", max_op_error(vec![a()], |g, v| g.square(v[0]).unwrap())));
    let pos = input(3, 4, uniform(&mut r, 12, 0.2, 3.0));
    out.push(("log", max_op_error(vec![pos], |g, v| g.log(v[0]).unwrap())));
    let row = input(1, 4, uniform(&mut r, 4, -1.0, 1.0));
    out.push(("add_row", max_op_error(vec![a(), row], |g, v| g.add_row(v[0], v[1]).unwrap())));

    let x = || input(5, 3, uniform(&mut ChaCha8Rng::seed_from_u64(3), 15, -1.0, 1.0));
    let w = input(3, 4, uniform(&mut r, 12, -1.0, 1.0));
    out.push(("matmul", max_op_error(vec![x(), w], |g, v| g.matmul(v[0], v[1]).unwrap())));
    let w = input(3, 4, uniform(&mut r, 12, -1.0, 1.0));
    let bias = input(1, 4, uniform(&mut r, 4, -1.0, 1.0));
    out.push(("linear", max_op_error(vec![x(), w, bias], |g, v| g.linear(v[0], v[1], v[2]).unwrap())));
    out.push(("transpose", max_op_error(vec![x()], |g, v| g.transpose(v[0]).unwrap())));
    out.push(("sum", max_op_error(vec![x()], |g, v| g.sum(v[0]).unwrap())));
    out.push(("mean", max_op_error(vec![x()], |g, v| g.mean(v[0]).unwrap())));
    out.push(("row_norm", max_op_error(vec![x()], |g, v| g.row_norm(v[0]).unwrap())));
    out.push(("layer_norm", max_op_error(vec![x()], |g, v| g.layer_norm(v[0]).unwrap())));

    let x = || input(6, 3, uniform(&mut ChaCha8Rng::seed_from_u64(4), 18, -1.0, 1.0));
    let y = || input(6, 2, uniform(&mut ChaCha8Rng::seed_from_u64(6), 12, -1.0, 1.0));
    out.push(("concat_cols", max_op_error(vec![x(), y()], |g, v| g.concat_cols(&[v[0], v[1], v[0]]).unwrap())));
    out.push(("slice_cols", max_op_error(vec![x()], |g, v| g.slice_cols(v[0], 1, 2).unwrap())));
    out.push(("slice_rows", max_op_error(vec![x()], |g, v| g.slice_rows(v[0], 2, 3).unwrap())));
    out.push(("segment_max", max_op_error(vec![x()], |g, v| g.segment_max(v[0], 3).unwrap())));
    out.push(("segment_mean", max_op_error(vec![x()], |g, v| g.segment_mean(v[0], 2).unwrap())));
    out.push(("repeat_rows", max_op_error(vec![y()], |g, v| g.repeat_rows(v[0], 3).unwrap())));
    out.push(("tile_rows", max_op_error(vec![y()], |g, v| g.tile_rows(v[0], 2).unwrap())));
    out.push(("gather_rows", max_op_error(vec![x()], |g, v| g.gather_rows(v[0], &[5, 0, 0, 3]).unwrap())));

    // The second row has a negative scalar part and is flipped.
    let q = input(2, 4, vec![0.9, -0.3, 0.4, 0.2, -0.5, 0.7, -0.1, 0.6]);
    out.push(("quat_normalize", max_op_error(vec![q], |g, v| g.quat_normalize(v[0]).unwrap())));
    out.push((
        "quat_to_rot",
        max_op_error(vec![input(1, 4, vec![0.8, -0.2, 0.5, 0.1])], |g, v| {
            let n = g.quat_normalize(v[0]).unwrap();
            g.quat_to_rot(n).unwrap()
        }),
    ));

    let mu = input(2, 3, uniform(&mut r, 6, -1.0, 1.0));
    let lv = input(2, 3, uniform(&mut r, 6, -1.0, 1.0));
    let noise = uniform(&mut r, 6, -2.0, 2.0);
    out.push((
        "reparameterize",
        max_op_error(vec![mu, lv], move |g, v| {
            let eps = g.constant(2, 3, noise.clone()).unwrap();
            reparameterize(g, v[0], v[1], eps).unwrap()
        }),
    ));
    out
}

/// Pose loss on the toy records with respect to raw quaternions (through
/// normalization) and translations.
pub fn pose_loss_error() -> f64 {
    let data = toy_dataset();
    let targets: Vec<PoseTarget<'_>> = data
        .records
        .iter()
        .map(|rec| PoseTarget {
            canonical: &data.instances[rec.instance].canonical,
            pose: rec.pose,
            symmetric: data.instances[rec.instance].category == "can",
        })
        .collect();
    let raw: Vec<f64> = data
        .records
        .iter()
        .flat_map(|rec| rec.pose.q.to_array().map(|x| x + 0.3 * (x.abs() + 0.2)))
        .collect();
    let t: Vec<f64> = data.records.iter().flat_map(|rec| rec.pose.t.map(|x| x + 0.02)).collect();
    let n = data.records.len();
    max_op_error(vec![input(n, 4, raw), input(n, 3, t)], |g, v| {
        let q = g.quat_normalize(v[0]).unwrap();
        pose_loss(g, q, v[1], &targets).unwrap()
    })
}

/// Batch of both toy instances and all four toy observations.
pub fn toy_batch() -> MixedBatch {
    MixedBatch {
        canonical: vec![0, 1],
        observations: vec![0, 1, 2, 3],
    }
}

/// Every trainable parameter of the toy network against finite
/// differences of the full objective of `stage`.
pub fn full_objective_error(stage: u8) -> f64 {
    let batch = toy_batch();
    let cfg = toy_config();
    let data = toy_dataset();
    let mut model = init_model(&cfg).unwrap();
    let seed = 17;
    batch_gradients(stage, &cfg, &mut model, &data, &batch, seed).unwrap();
    let analytic = model.params.clone();
    let trainable = trainable_in(stage, cfg.ablation);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, tensor) in analytic.iter() {
        if !trainable(name) {
            continue;
        }
        for j in 0..tensor.len() {
            let mut probe = model.clone();
            let base = tensor.data()[j];
            probe.params.get_mut(name).unwrap().data_mut()[j] = base + STEP;
            let fp = batch_loss(stage, &cfg, &probe, &data, &batch, seed).unwrap().total;
            probe.params.get_mut(name).unwrap().data_mut()[j] = base - STEP;
            let fm = batch_loss(stage, &cfg, &probe, &data, &batch, seed).unwrap().total;
            let numeric = (fp - fm) / (2.0 * STEP);
            let a = tensor.grad.as_deref().map_or(0.0, |g| g[j]);
            worst = worst.max(rel_error(a, numeric));
            checked += 1;
        }
    }
    assert!(checked > 100, "only {checked} parameters checked");
    worst
}
