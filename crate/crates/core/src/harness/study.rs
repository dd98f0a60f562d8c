//! Convergence of the clutter background against moving interferers.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clutter::ClutterState;
use crate::error::{Error, Result};
use crate::linalg::{fro_norm_sqr, CMat};
use crate::scene::{freq_channel, PathParams, UlaConfig};
use crate::waveform::OfdmGrid;

/// Clutter paths stay fixed; a fresh set of dynamic paths is drawn every
/// `redraw_blocks`. Both feed the same recursion, tracked separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterStudy {
    pub alpha: f64,
    /// `T_h` in OFDM blocks.
    pub sample_blocks: usize,
    /// Channel stable period in blocks; 0 keeps one dynamic set throughout.
    pub redraw_blocks: usize,
    pub duration_s: f64,
    pub clutter_paths: usize,
    pub dynamic_paths: usize,
    /// Dynamic path power relative to clutter path power, in dB.
    pub dynamic_power_db: f64,
    pub clutter_doppler_bound_hz: f64,
    pub max_doppler_hz: f64,
    pub subcarriers: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
    pub seed: u64,
}

impl Default for ClutterStudy {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            sample_blocks: 120,
            redraw_blocks: 270,
            duration_s: 0.5,
            clutter_paths: 5,
            dynamic_paths: 10,
            dynamic_power_db: 0.0,
            clutter_doppler_bound_hz: 1.0,
            max_doppler_hz: 400.0,
            subcarriers: 32,
            rx_antennas: 4,
            tx_antennas: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub updates: usize,
    pub time_s: f64,
    /// Clutter power in the background over dynamic leakage power, dB.
    pub ratio_db: f64,
}

struct Signature {
    doppler_hz: f64,
    response: CMat,
}

fn signature(p: &PathParams, subs: &[usize], grid: &OfdmGrid, rx: UlaConfig, tx: UlaConfig) -> Signature {
    let still = PathParams { doppler_hz: 0.0, ..*p };
    let m = rx.elements;
    let mut response = CMat::zeros(subs.len() * m, tx.elements);
    for (i, &n) in subs.iter().enumerate() {
        let h = freq_channel(std::slice::from_ref(&still), n, 0, grid, rx, tx);
        response.rows_mut(i * m, m).copy_from(&h);
    }
    Signature {
        doppler_hz: p.doppler_hz,
        response,
    }
}

fn sum_at(sigs: &[Signature], t_s: f64, shape: (usize, usize)) -> CMat {
    let mut h = CMat::zeros(shape.0, shape.1);
    for s in sigs {
        h += &s.response * Complex64::from_polar(1.0, 2.0 * PI * s.doppler_hz * t_s);
    }
    h
}

fn draw(rng: &mut ChaCha8Rng, n: usize, grid: &OfdmGrid, power: f64, doppler_bound: f64) -> Vec<PathParams> {
    (0..n)
        .map(|_| {
            let doppler = if doppler_bound > 0.0 {
                rng.random_range(-doppler_bound..=doppler_bound)
            } else {
                0.0
            };
            PathParams::new(
                rng.random_range(0.0..grid.n_subcarriers as f64 / 4.0) * grid.delay_resolution_s(),
                doppler,
                rng.random_range(-1.0..1.0_f64).asin(),
                rng.random_range(-1.0..1.0_f64).asin(),
                Complex64::from_polar(power.sqrt(), rng.random_range(0.0..2.0 * PI)),
                0,
            )
        })
        .collect()
}

/// Ratio of clutter to dynamic power in the background after each update.
pub fn clutter_curve(study: &ClutterStudy, grid: &OfdmGrid) -> Result<Vec<CurvePoint>> {
    if study.sample_blocks == 0 || study.subcarriers == 0 || study.subcarriers > grid.n_subcarriers {
        return Err(Error::InvalidParameter("sample interval and subcarrier count must be positive and fit the grid".into()));
    }
    if !(study.duration_s > 0.0) {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    let rx = UlaConfig::new(study.rx_antennas)?;
    let tx = UlaConfig::new(study.tx_antennas)?;
    let ts = grid.block_period_s();
    let th = study.sample_blocks as f64 * ts;
    let updates = (study.duration_s / th).floor() as usize;
    let step = grid.n_subcarriers / study.subcarriers;
    let subs: Vec<usize> = (0..study.subcarriers).map(|i| i * step).collect();
    let shape = (subs.len() * study.rx_antennas, study.tx_antennas);

    let mut rng = ChaCha8Rng::seed_from_u64(study.seed);
    let clutter: Vec<Signature> = draw(&mut rng, study.clutter_paths, grid, 1.0, study.clutter_doppler_bound_hz)
        .iter()
        .map(|p| signature(p, &subs, grid, rx, tx))
        .collect();
    let dyn_power = 10f64.powf(study.dynamic_power_db / 10.0);
    let redraw = |rng: &mut ChaCha8Rng| -> Vec<Signature> {
        draw(rng, study.dynamic_paths, grid, dyn_power, study.max_doppler_hz)
            .iter()
            .map(|p| signature(p, &subs, grid, rx, tx))
            .collect()
    };

    let mut cs = ClutterState::new(shape.0, shape.1, study.alpha, th)?;
    let mut ds = ClutterState::new(shape.0, shape.1, study.alpha, th)?;
    let mut dynamic = redraw(&mut rng);
    let mut period = 0;
    let mut out = Vec::with_capacity(updates);
    for i in 1..=updates {
        let block = i * study.sample_blocks;
        if study.redraw_blocks > 0 && block / study.redraw_blocks != period {
            period = block / study.redraw_blocks;
            dynamic = redraw(&mut rng);
        }
        let t_s = block as f64 * ts;
        cs.update(&sum_at(&clutter, t_s, shape))?;
        ds.update(&sum_at(&dynamic, t_s, shape))?;
        let (pc, pd) = (fro_norm_sqr(&cs.background), fro_norm_sqr(&ds.background));
        let ratio_db = if pd == 0.0 {
            crate::clutter::RATIO_CAP_DB
        } else {
            10.0 * (pc / pd).log10()
        };
        out.push(CurvePoint {
            updates: i,
            time_s: i as f64 * th,
            ratio_db,
        });
    }
    Ok(out)
}

/// Secant slope over the last quarter of the curve divided by the secant
/// slope over the first quarter. Small values mean the curve has levelled.
pub fn flatness(curve: &[CurvePoint]) -> Option<f64> {
    let n = curve.len();
    if n < 8 {
        return None;
    }
    let q = n / 4;
    let slope = |a: &CurvePoint, b: &CurvePoint| (b.ratio_db - a.ratio_db) / (b.time_s - a.time_s);
    let early = slope(&curve[0], &curve[q]);
    let late = slope(&curve[n - 1 - q], &curve[n - 1]);
    Some((late / early).abs())
}
