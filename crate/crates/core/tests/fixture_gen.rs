//! Regenerates the committed pretrained-localizer fixture.
//!
//! `tests/fixtures/oval_pretrained.ckpt` is loaded by the training unit
//! tests and by the pretraining regression test. Rerun this (ignored) test
//! after any change to the network architecture, encoding, dataset sampler,
//! or track generator, then update the reference numbers it prints wherever
//! they are asserted:
//!
//! ```text
//! cargo test -p mindstack-core --test fixture_gen -- --ignored --nocapture
//! ```
//!
//! Reference values at the time of the last regeneration: final training
//! loss 0.0154, mean position error 0.164 m (train) / 0.162 m (held out).

use mindstack_core::localization::{
    generate_dataset, mean_position_error, pretrain, DatasetConfig, LocArch, LocNetParams,
    PoseEncodingConfig, PretrainConfig,
};
use mindstack_core::rng::{derive_rng, label};
use mindstack_core::world::{generate_track, SensorConfig, TrackKind, TrackParams};

#[test]
#[ignore = "writes tests/fixtures/oval_pretrained.ckpt; run explicitly to regenerate"]
fn regenerate_pretrained_fixture() {
    let params = TrackParams {
        scale: 0.5,
        resolution: 0.1,
        width: 1.6,
        margin: 0.4,
        ..TrackParams::default()
    };
    let (grid, _traj) = generate_track(TrackKind::Oval, &params).unwrap();
    let sensor = SensorConfig::default();
    let enc = PoseEncodingConfig::for_grid(&grid, 0.1, 0.1, 4);
    let arch = LocArch::new(sensor.n_beams, enc.encoding_len()).unwrap();

    let data = generate_dataset(
        &grid,
        &sensor,
        &DatasetConfig {
            augment: 10,
            max_base_poses: Some(300),
            ..DatasetConfig::default()
        },
        42,
    )
    .unwrap();
    // Held-out poses (different seed) so the printed error is not a
    // train-set artifact.
    let heldout = generate_dataset(
        &grid,
        &sensor,
        &DatasetConfig {
            augment: 2,
            max_base_poses: Some(200),
            ..DatasetConfig::default()
        },
        777,
    )
    .unwrap();

    let mut net = LocNetParams::init(&arch, &mut derive_rng(42, &[label::PARAM_INIT]));
    let curve = pretrain(&mut net, &arch, &enc, &data, &PretrainConfig::default()).unwrap();

    let err_train = mean_position_error(&net, &arch, &enc, &data).unwrap();
    let err_held = mean_position_error(&net, &arch, &enc, &heldout).unwrap();
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/oval_pretrained.ckpt"
    );
    net.to_checkpoint()
        .save(std::path::Path::new(path))
        .unwrap();
    eprintln!(
        "fixture saved to {path}\n  final loss {:.6}, pos err train {err_train:.4} held out {err_held:.4}",
        curve.last().unwrap()
    );
}
