//! Procedural shapes, observations and the dataset container.

use std::time::{Duration, Instant};

use cass_core::geom::{
    aabb_size, apply_pose, chamfer, mean_nn_spacing, norm, one_sided_chamfer, Pose, Quat,
};
use cass_core::shapegen::{
    generate_dataset, read_dataset, render_observation, sample_instance, write_dataset,
    CategorySpec, Dataset, GenConfig, Split, ViewSettings, BUILTIN_CATEGORIES,
};
use cass_core::Error;
use proptest::prelude::*;

fn small_config() -> GenConfig {
    GenConfig {
        instances_per_category: 10,
        views_per_instance: 2,
        ..GenConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn canonical_clouds_are_centered_and_sized(cat in 0usize..6, seed in any::<u64>()) {
        let spec = CategorySpec::builtin(BUILTIN_CATEGORIES[cat]).unwrap();
        let inst = sample_instance(&spec, 128, seed).unwrap();
        prop_assert_eq!(aabb_size(&inst.canonical).unwrap(), inst.size);
        prop_assert!(norm(inst.canonical.centroid()) < 1e-9);
        prop_assert_eq!(inst.canonical.len(), 128);
        prop_assert!(inst.canonical.colors().is_some());
    }

    #[test]
    fn symmetric_shapes_survive_spin(cat in 0usize..3, seed in any::<u64>(), spin in 0.0..std::f64::consts::TAU) {
        let spec = CategorySpec::builtin(["bottle", "bowl", "can"][cat]).unwrap();
        let inst = sample_instance(&spec, 256, seed).unwrap();
        let axis = spec.symmetry_axis.unwrap();
        let turned = apply_pose(&Pose::new(Quat::from_axis_angle(axis, spin).unwrap(), [0.0; 3]).unwrap(), &inst.canonical);
        let spacing = mean_nn_spacing(&inst.canonical).unwrap();
        prop_assert!(chamfer(&turned, &inst.canonical).unwrap() < 2.0 * spacing);
    }

    #[test]
    fn observations_are_noise_free_subsets(seed in any::<u64>(), vis in 0.3..1.0f64) {
        let spec = CategorySpec::builtin("mug").unwrap();
        let inst = sample_instance(&spec, 128, seed).unwrap();
        let pose = Pose::new(Quat::from_axis_angle([0.2, 1.0, -0.3], 1.1).unwrap(), [0.05, -0.02, 0.7]).unwrap();
        let view = ViewSettings { points: 96, visibility: vis, noise_sigma: 0.0 };
        let rec = render_observation(&inst, 0, pose, view, seed).unwrap();
        let posed = apply_pose(&pose, &inst.canonical);
        prop_assert!(one_sided_chamfer(&rec.observed, &posed).unwrap() < 1e-12);
        prop_assert_eq!(rec.observed.len(), (vis * 96.0).round() as usize);
    }
}

#[test]
fn full_visibility_without_noise_is_the_posed_cloud() {
    let inst = sample_instance(&CategorySpec::builtin("laptop").unwrap(), 64, 4).unwrap();
    let pose = Pose::new(Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3).unwrap(), [0.0, 0.0, 0.8]).unwrap();
    let view = ViewSettings { points: 64, visibility: 1.0, noise_sigma: 0.0 };
    let rec = render_observation(&inst, 0, pose, view, 1).unwrap();
    assert_eq!(rec.observed.points(), apply_pose(&pose, &inst.canonical).points());
}

#[test]
fn half_visibility_keeps_about_half() {
    let inst = sample_instance(&CategorySpec::builtin("camera").unwrap(), 128, 8).unwrap();
    let view = ViewSettings { points: 96, visibility: 0.5, noise_sigma: 0.002 };
    let pose = Pose::new(Quat::IDENTITY, [0.0, 0.0, 0.6]).unwrap();
    let n = render_observation(&inst, 0, pose, view, 2).unwrap().observed.len() as f64;
    assert!((n - 48.0).abs() <= 0.1 * 48.0);
}

#[test]
fn rejects_tiny_views() {
    let inst = sample_instance(&CategorySpec::builtin("can").unwrap(), 16, 0).unwrap();
    let pose = Pose::new(Quat::IDENTITY, [0.0, 0.0, 0.6]).unwrap();
    let view = ViewSettings { points: 16, visibility: 0.3, noise_sigma: 0.0 };
    assert!(render_observation(&inst, 0, pose, view, 0).is_err());
    let view = ViewSettings { points: 16, visibility: 0.2, noise_sigma: 0.0 };
    assert!(render_observation(&inst, 0, pose, view, 0).is_err());
}

#[test]
fn generation_is_independent_of_thread_count() {
    let cfg = small_config();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_dataset(&cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn splits_hold_out_whole_instances() {
    let ds = generate_dataset(&small_config()).unwrap();
    for rec in &ds.records {
        let inst = ds.instance_of(rec);
        assert!(ds.categories.iter().any(|c| c.name == inst.category));
    }
    let test = ds.instance_indices(Split::Test);
    assert_eq!(test.len(), 3 * 2);
    for r in ds.record_indices(Split::Train) {
        assert!(!test.contains(&ds.records[r].instance));
    }
}

#[test]
fn file_round_trip_is_exact() {
    let ds = generate_dataset(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.cass");
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes().unwrap(), ds.to_bytes().unwrap());
}

#[test]
fn damaged_files_are_rejected() {
    let ds = generate_dataset(&small_config()).unwrap();
    let bytes = ds.to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(Dataset::from_bytes(&bad_magic).is_err());
    let mut bad_version = bytes.clone();
    bad_version[9] ^= 0x01;
    assert!(matches!(Dataset::from_bytes(&bad_version), Err(Error::Version { .. })));
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(Dataset::from_bytes(&flipped), Err(Error::Checksum { .. })));
    assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn default_dataset_generates_quickly() {
    let start = Instant::now();
    let ds = generate_dataset(&GenConfig::default()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(ds.records.len(), 2400);
    assert!(elapsed < Duration::from_secs(10), "{elapsed:?}");
}
