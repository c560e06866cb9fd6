//! Network invariants: permutation, sharing, initialization, decoding.

use cass_core::geom::{chamfer, norm, PointCloud};
use cass_core::nets::{DecoderTemplate, Model, NetConfig, GEO_ENCODER, POINT_ENCODER};
use cass_core::shapegen::{sample_instance, CategorySpec};
use cass_core::tensor::Graph;
use cass_core::train::{Ablation, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_net() -> NetConfig {
    NetConfig {
        latent_dim: 16,
        points: 64,
        obs_points: 32,
        encoder_widths: vec![16, 24],
        decoder_widths: vec![32, 16],
        head_widths: vec![32, 16, 8],
        ..NetConfig::default()
    }
}

fn colored_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-0.1..0.1) + 0.5)).collect();
    let cols = (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..1.0))).collect();
    PointCloud::with_colors(pts, cols).unwrap()
}

fn permuted(c: &PointCloud, seed: u64) -> PointCloud {
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    c.select(&idx).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encoders_ignore_point_order() {
    let model = Model::new(small_net(), 1).unwrap();
    let c = colored_cloud(32, 2);
    let p = permuted(&c, 3);
    assert!(max_diff(&model.encode_points(&c).unwrap(), &model.encode_points(&p).unwrap()) < 1e-12);
    assert!(max_diff(&model.encode_photometric(&c).unwrap(), &model.encode_photometric(&p).unwrap()) < 1e-12);
    assert!(max_diff(&model.encode_observation(&c).unwrap().mu, &model.encode_observation(&p).unwrap().mu) < 1e-12);
}

#[test]
fn max_pooling_ignores_duplicates() {
    let model = Model::new(small_net(), 1).unwrap();
    let c = colored_cloud(16, 4);
    let mut idx: Vec<usize> = (0..16).collect();
    idx.extend(0..16);
    let doubled = c.select(&idx).unwrap();
    assert!(max_diff(&model.encode_points(&c).unwrap(), &model.encode_points(&doubled).unwrap()) < 1e-12);
}

#[test]
fn too_few_points_are_rejected() {
    let model = Model::new(small_net(), 1).unwrap();
    let c = colored_cloud(7, 5);
    assert!(model.encode_points(&c).is_err());
    assert!(model.encode_photometric(&c).is_err());
    assert!(model.predict(&[&c]).is_err());
    let gray = PointCloud::new(colored_cloud(12, 5).points().to_vec()).unwrap();
    assert!(model.encode_photometric(&gray).is_err());
}

#[test]
fn color_changes_the_photometric_feature() {
    let model = Model::new(small_net(), 1).unwrap();
    let c = colored_cloud(32, 6);
    let mut recolored = c.clone();
    recolored.set_colors(vec![[0.5, 0.5, 0.5]; 32]).unwrap();
    assert!(max_diff(&model.encode_photometric(&c).unwrap(), &model.encode_photometric(&recolored).unwrap()) > 1e-6);
}

#[test]
fn siamese_encoder_is_shared() {
    let mut model = Model::new(small_net(), 7).unwrap();
    let obs = colored_cloud(32, 8);
    let pred = model.predict(&[&obs]).unwrap().remove(0);
    let direct = model.encode_points(&obs).unwrap();
    assert!(max_diff(&pred.features.geometric, &direct) < 1e-12);

    model.params.get_mut("point_encoder.l0.w").unwrap().data_mut()[0] += 0.5;
    let pred2 = model.predict(&[&obs]).unwrap().remove(0);
    let direct2 = model.encode_points(&obs).unwrap();
    assert!(max_diff(&pred2.features.geometric, &direct2) < 1e-12);
    assert!(max_diff(&direct, &direct2) > 1e-9);

    assert!(!model.params.names().any(|n| n.starts_with(GEO_ENCODER)));
}

#[test]
fn ablations_change_parameter_counts_as_expected() {
    let base = TrainConfig::default();
    let count = |a: Ablation| {
        let cfg = TrainConfig { ablation: a, ..base.clone() };
        Model::new(cfg.net(), 0).unwrap()
    };
    let full = count(Ablation::None);
    let no_dm = count(Ablation::NoDm);
    let no_cass = count(Ablation::NoCass);
    let n = base.latent_dim;
    let first_head = base.head_widths[0];
    assert_eq!(
        no_dm.params.scalar_count(),
        full.params.scalar_count() + full.point_encoder_size()
    );
    assert_eq!(
        no_dm.params.scalar_count_with_prefix(GEO_ENCODER),
        full.params.scalar_count_with_prefix(POINT_ENCODER)
    );
    assert_eq!(full.params.scalar_count() - no_cass.params.scalar_count(), n * first_head);
    assert_eq!(count(Ablation::NoBm).params.scalar_count(), full.params.scalar_count());
    assert_eq!(count(Ablation::NoVae).params.scalar_count(), full.params.scalar_count());
}

#[test]
fn log_variance_heads_start_at_zero() {
    let model = Model::new(small_net(), 3).unwrap();
    for name in ["shape_head.logvar.w", "shape_head.logvar.b", "obs_encoder.logvar.w", "obs_encoder.logvar.b"] {
        assert!(model.params.get(name).unwrap().data().iter().all(|&v| v == 0.0), "{name}");
    }
    let obs = colored_cloud(32, 1);
    assert!(model.encode_observation(&obs).unwrap().logvar.iter().all(|&v| v == 0.0));
}

#[test]
fn quaternion_output_is_unit_and_canonical() {
    let mut g = Graph::new();
    let raw = g.constant(1, 4, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
    let q = g.quat_normalize(raw).unwrap();
    assert_eq!(g.value(q).unwrap(), &[1.0, 0.0, 0.0, 0.0]);

    let model = Model::new(small_net(), 5).unwrap();
    let clouds: Vec<PointCloud> = (0..10).map(|s| colored_cloud(20 + s as usize, s)).collect();
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    for p in model.predict(&refs).unwrap() {
        let q = p.pose.q;
        assert!((norm([q.x, q.y, q.z]).hypot(q.w) - 1.0).abs() < 1e-9);
        assert!(q.w >= 0.0);
    }
}

#[test]
fn decoding_is_deterministic_and_sized() {
    for template in [DecoderTemplate::Grid, DecoderTemplate::Ellipsoid] {
        let model = Model::new(NetConfig { template, ..small_net() }, 9).unwrap();
        let z = vec![0.3; 16];
        let a = model.decode_latent(&z).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, model.decode_latent(&z).unwrap());
        assert!(model.decode_latent(&[0.0; 3]).is_err());
    }
}

#[test]
fn decoding_is_continuous() {
    let model = Model::new(small_net(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dir: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = model.decode_latent(&z).unwrap();
    let mut last = f64::INFINITY;
    for k in 0..8 {
        let step = 10f64.powi(-k);
        let moved: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
        let d = chamfer(&base, &model.decode_latent(&moved).unwrap()).unwrap();
        assert!(d <= last, "step {step}: {d} after {last}");
        last = d;
    }
    assert!(last < 1e-6);
}

#[test]
fn encode_decode_is_deterministic() {
    let model = Model::new(small_net(), 13).unwrap();
    let inst = sample_instance(&CategorySpec::builtin("bottle").unwrap(), 64, 1).unwrap();
    let a = model.reconstruct(&[&inst.canonical]).unwrap();
    let b = model.reconstruct(&[&inst.canonical]).unwrap();
    assert_eq!(a, b);
    let obs = colored_cloud(40, 2);
    assert_eq!(model.predict(&[&obs]).unwrap(), model.predict(&[&obs]).unwrap());
}

#[test]
fn batched_prediction_matches_single() {
    let model = Model::new(small_net(), 14).unwrap();
    let clouds: Vec<PointCloud> = (0..70).map(|s| colored_cloud(32, 100 + s)).collect();
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let all = model.predict(&refs).unwrap();
    for i in [0, 33, 69] {
        let one = model.predict(&[refs[i]]).unwrap().remove(0);
        assert!(max_diff(&all[i].pose.to_array(), &one.pose.to_array()) < 1e-12);
    }
}

#[test]
fn checkpoints_round_trip() {
    let model = Model::new(NetConfig { siamese: false, ..small_net() }, 15).unwrap();
    let ckpt = model.to_checkpoint(&Default::default());
    let back = Model::from_checkpoint(&cass_core::tensor::Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back, model);
}
