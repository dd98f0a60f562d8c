//! One seeded run of each estimation scheme.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{clear_map, dft2d_map, find_peaks, RangeAngleMap};
use crate::clutter::ClutterState;
use crate::direct::{estimate_paths as direct_paths, recover_blocks, BlockEstimateSeries, DirectConfig, PathEstimate, ThresholdRule};
use crate::error::{Error, Result};
use crate::indirect::{estimate_user, reconstruct_channel, IndirectConfig, ReconChannel};
use crate::linalg::CMat;
use crate::scene::{sample_scene, PathParams, Scene, UlaConfig};
use crate::waveform::{gen_symbols, receive, Constellation};

use super::config::{ExperimentConfig, Scheme};

/// Ground truth and estimates of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub scene: Scene,
    pub truth: Vec<PathParams>,
    pub estimates: Vec<PathEstimate>,
}

// keeps the noise stream apart from the scene and symbol streams
const NOISE_STREAM: u64 = 0x6e6f_6973_65;

fn arrays(cfg: &ExperimentConfig) -> Result<(UlaConfig, UlaConfig)> {
    Ok((UlaConfig::new(cfg.array.rx_antennas)?, UlaConfig::new(cfg.array.tx_antennas)?))
}

pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let scene = sample_scene(&cfg.scene_spec()?, seed)?;
    run_on_scene(cfg, scene, seed)
}

pub fn run_on_scene(cfg: &ExperimentConfig, scene: Scene, seed: u64) -> Result<RunOutput> {
    if scene.links.len() != cfg.array.sources {
        return Err(Error::DimensionMismatch(format!(
            "scene has {} links, config has {} sources",
            scene.links.len(),
            cfg.array.sources
        )));
    }
    let estimates = match cfg.scheme {
        Scheme::Direct => run_direct(cfg, &scene, seed)?,
        Scheme::Indirect => run_indirect(cfg, &scene, seed)?,
        Scheme::Baseline => run_baseline(cfg, &scene, seed)?,
    };
    let truth = scene.paths().copied().collect();
    Ok(RunOutput { scene, truth, estimates })
}

fn run_direct(cfg: &ExperimentConfig, scene: &Scene, seed: u64) -> Result<Vec<PathEstimate>> {
    let (rx, tx) = arrays(cfg)?;
    let alloc = cfg.allocation(seed)?;
    let noise = cfg.noise_power();
    let solver = cfg.solver.solver_for(Scheme::Direct);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    let mut series = BlockEstimateSeries::new(cfg.array.sources, cfg.array.tx_antennas, cfg.array.rx_antennas);
    for t in 0..cfg.direct.blocks {
        let frame = gen_symbols(&alloc, cfg.array.sources, cfg.array.tx_antennas, Constellation::Qpsk, seed, t)?;
        let block = receive(scene, &frame, &cfg.grid, rx, tx, noise, &mut rng)?;
        series.push(t, recover_blocks(&block, &frame, &cfg.grid, cfg.solver.n_p, &solver)?)?;
    }
    let mut dc = DirectConfig::new(cfg.solver.n_p);
    dc.solver = solver;
    dc.oversample = cfg.direct.oversample;
    if cfg.direct.threshold {
        // unit-energy symbols: each coefficient averages the noise over the used subcarriers
        let used = alloc.union().len() as f64;
        dc.threshold = Some(ThresholdRule {
            budget: cfg.link_budget(),
            noise_floor: noise / used,
            margin_db: cfg.direct.margin_db,
            sidelobe_db: cfg.direct.sidelobe_db,
        });
    }
    direct_paths(&series, &cfg.grid, &dc)
}

/// Stacks per-subcarrier `M × M_T` channels into one `(N_u·M) × M_T` matrix.
fn stack(r: &ReconChannel) -> CMat {
    let m = r.rx_antennas();
    CMat::from_fn(r.channels.len() * m, r.tx_antennas(), |i, j| r.channels[i / m][(i % m, j)])
}

fn unstack(r: &ReconChannel, h: &CMat) -> ReconChannel {
    let m = r.rx_antennas();
    ReconChannel {
        channels: (0..r.channels.len()).map(|i| h.rows(i * m, m).into_owned()).collect(),
        ..r.clone()
    }
}

/// Indirect pipeline. With clutter removal on, each user first learns a
/// background from `updates` reconstructed channels spaced `T_h` apart and
/// the estimator runs on the two channels that follow, minus background.
fn run_indirect(cfg: &ExperimentConfig, scene: &Scene, seed: u64) -> Result<Vec<PathEstimate>> {
    let (rx, tx) = arrays(cfg)?;
    let alloc = cfg.allocation(seed)?;
    let mut ic = IndirectConfig::new(cfg.solver.n_p);
    ic.solver = cfg.solver.solver_for(Scheme::Indirect);
    ic.threshold_db = cfg.indirect.threshold_db;
    let sir = cfg.indirect.sir_db;
    let gap = cfg.indirect.doppler_gap;

    let mut out = Vec::new();
    for (k, link) in scene.links.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
        rng.set_stream(k as u64);
        let subs = alloc.user(k);
        let recon = |t: usize, rng: &mut ChaCha8Rng| reconstruct_channel(link, k, subs, t, &cfg.grid, rx, tx, sir, rng);

        let recons = if cfg.clutter.enabled {
            let step = cfg.clutter.interval_blocks(&cfg.grid);
            let mut state = ClutterState::new(
                subs.len() * cfg.array.rx_antennas,
                cfg.array.tx_antennas,
                cfg.clutter.alpha,
                step as f64 * cfg.grid.block_period_s(),
            )?;
            for i in 1..=cfg.clutter.updates {
                state.update(&stack(&recon(i * step, &mut rng)?))?;
            }
            let t0 = (cfg.clutter.updates + 1) * step;
            [t0, t0 + gap]
                .iter()
                .map(|&t| {
                    let r = recon(t, &mut rng)?;
                    let cleaned = state.subtract(&stack(&r))?;
                    Ok(unstack(&r, &cleaned))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![recon(0, &mut rng)?, recon(gap, &mut rng)?]
        };
        out.extend(estimate_user(&recons, &cfg.grid, &ic)?);
    }
    Ok(out)
}

/// Range-angle maps per user, after the floor is applied, as the baseline
/// scheme sees them for `seed`.
pub fn baseline_maps(cfg: &ExperimentConfig, scene: &Scene, seed: u64) -> Result<Vec<RangeAngleMap>> {
    let (rx, tx) = arrays(cfg)?;
    let alloc = cfg.allocation(seed)?;
    let b = &cfg.baseline;
    scene
        .links
        .iter()
        .enumerate()
        .map(|(k, link)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
            rng.set_stream(k as u64);
            let r = reconstruct_channel(link, k, alloc.user(k), 0, &cfg.grid, rx, tx, cfg.indirect.sir_db, &mut rng)?;
            clear_map(&dft2d_map(&r, &cfg.grid, b.angle_fft_len, b.window)?, b.floor_db)
        })
        .collect()
}

fn run_baseline(cfg: &ExperimentConfig, scene: &Scene, seed: u64) -> Result<Vec<PathEstimate>> {
    let alloc = cfg.allocation(seed)?;
    let mut out = Vec::new();
    for (k, map) in baseline_maps(cfg, scene, seed)?.iter().enumerate() {
        // a lone on-grid path peaks at |b|²·(N_u·M)² per transmit antenna
        let gain = cfg.array.tx_antennas as f64 * ((alloc.user(k).len() * cfg.array.rx_antennas) as f64).powi(2);
        out.extend(find_peaks(map).into_iter().map(|p| PathEstimate {
            delay_bin: p.delay_bin,
            delay_s: map.delay_s(p.delay_bin),
            aoa_rad: map.sin_angle(p.angle_bin).asin(),
            aod_rad: None,
            doppler_hz: None,
            power: p.power / gain,
            source: Some(k),
        }));
    }
    Ok(out)
}
