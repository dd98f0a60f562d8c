//! Fixtures shared by the benchmarks.

use percept_core::harness::{AllocationSpec, ExperimentConfig, Scheme};
use percept_core::indirect::{build_stripped_mmv, reconstruct_channel};
use percept_core::scene::{sample_scene, LinkMode};
use percept_core::sparse::MmvProblem;
use percept_core::{OfdmGrid, UlaConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uplink indirect setup: 512 subcarriers, 128 shared at random, 15 dB SIR.
pub fn uplink_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        mode: LinkMode::Uplink,
        scheme: Scheme::Indirect,
        grid: OfdmGrid::standard(),
        allocation: AllocationSpec::RandomShared { used: 128, seed: None },
        ..ExperimentConfig::default()
    };
    cfg.solver.n_p = 128;
    cfg
}

/// The first user's stripped MMV problem from `uplink_config` at `seed`.
pub fn uplink_problem(seed: u64) -> MmvProblem {
    let cfg = uplink_config();
    let scene = sample_scene(&cfg.scene_spec().unwrap(), seed).unwrap();
    let alloc = cfg.allocation(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recon = reconstruct_channel(
        &scene.links[0],
        0,
        alloc.user(0),
        0,
        &cfg.grid,
        UlaConfig::new(cfg.array.rx_antennas).unwrap(),
        UlaConfig::new(cfg.array.tx_antennas).unwrap(),
        15.0,
        &mut rng,
    )
    .unwrap();
    build_stripped_mmv(&recon, &cfg.grid, cfg.solver.n_p).unwrap()
}
