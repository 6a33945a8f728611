//! Shared fixtures for the benchmark suite.

use mindstack_core::config::ScenarioConfig;
use mindstack_core::localization::{LocArch, LocNetParams, PoseEncodingConfig};
use mindstack_core::rng::{derive_rng, label};
use mindstack_core::sim::World;
use mindstack_core::vehicle::Pose;

pub struct BenchWorld {
    pub world: World,
    pub enc: PoseEncodingConfig,
    pub arch: LocArch,
    pub net: LocNetParams,
    pub pose: Pose,
}

pub fn bench_world() -> BenchWorld {
    let cfg = ScenarioConfig::preset("oval").expect("preset");
    let world = cfg.build_world().expect("world");
    let enc = cfg.encoding_config(&world.grid);
    let arch = LocArch::new(world.sensor.n_beams, enc.encoding_len()).expect("arch");
    let net = LocNetParams::init(&arch, &mut derive_rng(1, &[label::PARAM_INIT]));
    let w = world.traj.waypoint(0);
    let pose = Pose::new(w.x, w.y, w.heading);
    BenchWorld {
        world,
        enc,
        arch,
        net,
        pose,
    }
}
