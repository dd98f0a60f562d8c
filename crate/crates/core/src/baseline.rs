//! Classical range-angle maps: a DFT across subcarriers for delay and a
//! zero-padded DFT across the receive array for angle.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indirect::ReconChannel;
use crate::waveform::OfdmGrid;

pub const DEFAULT_ANGLE_FFT_LEN: usize = 64;
pub const DEFAULT_FLOOR_DB: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rect,
    Hann,
}

impl Window {
    fn weights(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann if n <= 1 => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
                .collect(),
        }
    }
}

/// Power over `(delay bin, angle bin)`, row-major by delay.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAngleMap {
    pub delay_bins: usize,
    pub angle_bins: usize,
    pub delay_resolution_s: f64,
    pub power: Vec<f64>,
}

impl RangeAngleMap {
    pub fn get(&self, delay_bin: usize, angle_bin: usize) -> f64 {
        self.power[delay_bin * self.angle_bins + angle_bin]
    }

    pub fn delay_s(&self, delay_bin: usize) -> f64 {
        delay_bin as f64 * self.delay_resolution_s
    }

    /// `sin φ` at the centre of an angle bin, in `[-1, 1)`.
    pub fn sin_angle(&self, angle_bin: usize) -> f64 {
        let s = 2.0 * angle_bin as f64 / self.angle_bins as f64;
        if s >= 1.0 {
            s - 2.0
        } else {
            s
        }
    }

    pub fn max(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Dense grid: one row per delay bin, one column per angle bin.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["delay_s".to_string()];
        header.extend((0..self.angle_bins).map(|a| format!("{:.6}", self.sin_angle(a))));
        wr.write_record(&header)?;
        for d in 0..self.delay_bins {
            let mut row = vec![format!("{:e}", self.delay_s(d))];
            row.extend((0..self.angle_bins).map(|a| format!("{:e}", self.get(d, a))));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Range-angle map of one user's channels. Each transmit antenna gets its
/// own map; the maps are summed in power. Subcarriers missing from the
/// reconstruction are zero-filled.
pub fn dft2d_map(recon: &ReconChannel, grid: &OfdmGrid, angle_fft_len: usize, window: Window) -> Result<RangeAngleMap> {
    let (m, mt) = (recon.rx_antennas(), recon.tx_antennas());
    let nd = grid.fine_len();
    let mut map = RangeAngleMap {
        delay_bins: nd,
        angle_bins: angle_fft_len,
        delay_resolution_s: grid.delay_resolution_s(),
        power: vec![0.0; nd * angle_fft_len],
    };
    if angle_fft_len < m.max(1) {
        return Err(Error::InvalidParameter(format!(
            "angle DFT length {angle_fft_len} is shorter than the {m}-element array"
        )));
    }
    if recon.channels.is_empty() {
        return Ok(map);
    }
    if let Some(&n) = recon.subcarriers.iter().find(|&&n| n >= grid.n_subcarriers) {
        return Err(Error::InvalidParameter(format!("subcarrier {n} outside the grid")));
    }
    let w_sub = window.weights(recon.subcarriers.len());
    let w_ant = window.weights(m);
    let mut planner = FftPlanner::<f64>::new();
    // the channel carries exp(-j2π n ℓ / (gN)), so delay peaks come out of the inverse transform
    let delay_fft = planner.plan_fft_inverse(nd);
    let angle_fft = planner.plan_fft_forward(angle_fft_len);

    let zero = Complex64::new(0.0, 0.0);
    for tx in 0..mt {
        // delay transform per receive antenna
        let mut by_delay = vec![vec![zero; nd]; m];
        for (rx, col) in by_delay.iter_mut().enumerate() {
            for (i, (&n, h)) in recon.subcarriers.iter().zip(&recon.channels).enumerate() {
                col[n] = h[(rx, tx)] * w_sub[i];
            }
            delay_fft.process(col);
        }
        let mut buf = vec![zero; angle_fft_len];
        for d in 0..nd {
            buf.iter_mut().for_each(|z| *z = zero);
            for rx in 0..m {
                buf[rx] = by_delay[rx][d] * w_ant[rx];
            }
            angle_fft.process(&mut buf);
            for (a, z) in buf.iter().enumerate() {
                map.power[d * angle_fft_len + a] += z.norm_sqr();
            }
        }
    }
    Ok(map)
}

/// Zeroes every entry more than `floor_db` below the map's maximum.
pub fn clear_map(map: &RangeAngleMap, floor_db: f64) -> Result<RangeAngleMap> {
    if !(floor_db > 0.0) {
        return Err(Error::InvalidParameter("floor must be a positive number of dB".into()));
    }
    let floor = map.max() * 10f64.powf(-floor_db / 10.0);
    let mut out = map.clone();
    for p in &mut out.power {
        if *p < floor {
            *p = 0.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPeak {
    pub delay_bin: usize,
    pub angle_bin: usize,
    pub power: f64,
}

/// Non-zero local maxima over the 8-neighbourhood (angle axis wraps),
/// strongest first. A plateau counts once.
pub fn find_peaks(map: &RangeAngleMap) -> Vec<MapPeak> {
    let (nd, na) = (map.delay_bins, map.angle_bins);
    let mut out = Vec::new();
    for d in 0..nd {
        for a in 0..na {
            let idx = d * na + a;
            let x = map.power[idx];
            if x <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dd in [-1i64, 0, 1] {
                let d2 = d as i64 + dd;
                if d2 < 0 || d2 >= nd as i64 {
                    continue;
                }
                for da in [na - 1, 0, 1] {
                    if dd == 0 && da == 0 {
                        continue;
                    }
                    let j = d2 as usize * na + (a + da) % na;
                    if map.power[j] > x || (map.power[j] == x && j < idx) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push(MapPeak {
                    delay_bin: d,
                    angle_bin: a,
                    power: x,
                });
            }
        }
    }
    out.sort_by(|a, b| b.power.total_cmp(&a.power));
    out
}
