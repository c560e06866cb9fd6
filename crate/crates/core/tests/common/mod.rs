#![allow(dead_code)]

pub mod fd;

use cass_core::geom::{apply_pose, PointCloud, Pose, Quat};
use cass_core::shapegen::{generate_dataset, CategorySpec, Dataset, GenConfig, Instance, ObservationRecord, Split};
use cass_core::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error with an absolute floor so that near-zero gradients are
/// compared in absolute terms.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, with random signs.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn cloud(points: &[[f64; 3]]) -> PointCloud {
    let colors = points
        .iter()
        .enumerate()
        .map(|(i, _)| [0.2 + 0.2 * i as f64, 0.5, 0.9 - 0.2 * i as f64])
        .collect();
    PointCloud::with_colors(points.to_vec(), colors).unwrap()
}

/// Two categories, one instance each, four canonical points per instance
/// and two observations per instance.
pub fn toy_dataset() -> Dataset {
    let shapes: [[[f64; 3]; 4]; 2] = [
        [
            [0.03, -0.04, 0.05],
            [-0.05, 0.02, -0.01],
            [0.04, 0.05, -0.03],
            [-0.02, -0.03, -0.01],
        ],
        [
            [0.05, 0.0, -0.02],
            [-0.025, 0.043, -0.02],
            [-0.025, -0.043, -0.02],
            [0.0, 0.0, 0.06],
        ],
    ];
    let names = ["mug", "can"];
    let mut instances = Vec::new();
    let mut records = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (i, pts) in shapes.iter().enumerate() {
        let canonical = cloud(pts);
        instances.push(Instance::from_parts(names[i].into(), vec![], canonical.clone(), Split::Train).unwrap());
        for _ in 0..2 {
            let t = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.5..0.9)];
            let pose = Pose::new(Quat::random(&mut rng), t).unwrap();
            let observed = apply_pose(&pose, &canonical);
            records.push(ObservationRecord {
                instance: i,
                observed,
                pose,
            });
        }
    }
    Dataset {
        categories: names.iter().map(|n| CategorySpec::builtin(n).unwrap()).collect(),
        points: 4,
        obs_points: 8,
        seed: 0,
        provenance: "toy".into(),
        instances,
        records,
    }
}

/// Small network sized for finite-difference checks on [`toy_dataset`].
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 4,
        points: 4,
        obs_points: 8,
        encoder_widths: vec![5, 6],
        decoder_widths: vec![6, 5],
        head_widths: vec![6, 5, 4],
        batch_size: 4,
        kl_weight: 0.1,
        symmetric_categories: vec!["can".into()],
        ..TrainConfig::default()
    }
}

/// A few generated instances at reduced resolution.
pub fn small_data() -> Dataset {
    generate_dataset(&GenConfig {
        instances_per_category: 6,
        views_per_instance: 2,
        points: 32,
        obs_points: 24,
        ..GenConfig::default()
    })
    .unwrap()
}

/// Narrow network and a dozen iterations per stage.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 8,
        points: 32,
        obs_points: 24,
        encoder_widths: vec![8, 16],
        decoder_widths: vec![16, 8],
        head_widths: vec![16, 8, 8],
        iters_stage1: 12,
        iters_stage2: 12,
        iters_stage3: 12,
        lr_decay_every: 8,
        log_every: 4,
        ..TrainConfig::default()
    }
}
