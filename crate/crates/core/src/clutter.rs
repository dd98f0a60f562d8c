//! Recursive background estimation of static clutter.
//!
//! The background follows `H̄ ← α·H̄ + (1−α)·H_i` over channel samples taken
//! every `T_h` seconds. Paths that barely move stay in the background;
//! anything with a Doppler well above `1/T_h·(1−α)` averages out.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fro_norm_sqr, CMat};

/// Reported by [`clutter_power_ratio`] when there is no dynamic leakage.
pub const RATIO_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClutterState {
    pub background: CMat,
    pub alpha: f64,
    pub sample_interval_s: f64,
    pub updates: usize,
}

impl ClutterState {
    /// Zero background of the given shape.
    pub fn new(rows: usize, cols: usize, alpha: f64, sample_interval_s: f64) -> Result<Self> {
        Self::with_background(CMat::zeros(rows, cols), alpha, sample_interval_s)
    }

    /// Starts from a given background, e.g. the mean of a few initial
    /// estimates.
    pub fn with_background(background: CMat, alpha: f64, sample_interval_s: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        if !(sample_interval_s > 0.0) {
            return Err(Error::InvalidParameter("sample interval must be positive".into()));
        }
        Ok(Self {
            background,
            alpha,
            sample_interval_s,
            updates: 0,
        })
    }

    pub fn update(&mut self, h: &CMat) -> Result<()> {
        if h.shape() != self.background.shape() {
            return Err(Error::DimensionMismatch(format!(
                "sample is {:?}, background is {:?}",
                h.shape(),
                self.background.shape()
            )));
        }
        let a = self.alpha;
        self.background.zip_apply(h, |b, x| *b = *b * a + x * (1.0 - a));
        self.updates += 1;
        Ok(())
    }

    /// `h − H̄`: what is left once the background is removed.
    pub fn subtract(&self, h: &CMat) -> Result<CMat> {
        if self.updates == 0 {
            return Err(Error::InvalidParameter("background has not been updated yet".into()));
        }
        if h.shape() != self.background.shape() {
            return Err(Error::DimensionMismatch(format!(
                "sample is {:?}, background is {:?}",
                h.shape(),
                self.background.shape()
            )));
        }
        Ok(h - &self.background)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        c.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    alpha: f64,
    sample_interval_s: f64,
    updates: usize,
    rows: usize,
    cols: usize,
    /// Column-major `[re, im]` pairs.
    background: Vec<[f64; 2]>,
}

impl From<&ClutterState> for Checkpoint {
    fn from(s: &ClutterState) -> Self {
        Self {
            alpha: s.alpha,
            sample_interval_s: s.sample_interval_s,
            updates: s.updates,
            rows: s.background.nrows(),
            cols: s.background.ncols(),
            background: s.background.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl TryFrom<Checkpoint> for ClutterState {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.background.len() != c.rows * c.cols {
            return Err(Error::Config(format!(
                "checkpoint holds {} entries for a {}×{} background",
                c.background.len(),
                c.rows,
                c.cols
            )));
        }
        let bg = CMat::from_iterator(c.rows, c.cols, c.background.iter().map(|&[re, im]| Complex64::new(re, im)));
        let mut s = ClutterState::with_background(bg, c.alpha, c.sample_interval_s)?;
        s.updates = c.updates;
        Ok(s)
    }
}

/// Background gain after `p` updates from zero on a unit phasor input
/// `e^{jωi}`, `ω = 2π·f_D·T_h`, `i = 1..p`:
/// `(1−α)·e^{jωp}·(1 − α^p e^{−jωp}) / (1 − α e^{−jω})`.
pub fn rho_closed_form(alpha: f64, doppler_hz: f64, sample_interval_s: f64, p: usize) -> Complex64 {
    let w = 2.0 * PI * doppler_hz * sample_interval_s;
    let one = Complex64::new(1.0, 0.0);
    let e = |x: f64| Complex64::from_polar(1.0, x);
    let ap = alpha.powi(p as i32);
    (1.0 - alpha) * e(w * p as f64) * (one - ap * e(-w * p as f64)) / (one - alpha * e(-w))
}

/// Per-entry variance of the background after `p` updates on white noise of
/// variance `sigma2`.
pub fn residual_noise_var(sigma2: f64, alpha: f64, p: usize) -> f64 {
    sigma2 * (1.0 - alpha).powi(2) * (1.0 - alpha.powi(2 * p as i32)) / (1.0 - alpha * alpha)
}

/// Clutter-to-dynamic power ratio of a background, in dB.
///
/// The background is least-squares fitted as `a·C + d·D` on the known
/// clutter and dynamic contributions; the ratio is `|a|²‖C‖² / |d|²‖D‖²`,
/// capped at [`RATIO_CAP_DB`].
pub fn clutter_power_ratio(state: &ClutterState, true_clutter: &CMat, true_dynamic: &CMat) -> Result<f64> {
    let bg = &state.background;
    if true_clutter.shape() != bg.shape() || true_dynamic.shape() != bg.shape() {
        return Err(Error::DimensionMismatch("ground truth and background shapes differ".into()));
    }
    let dot = |a: &CMat, b: &CMat| a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum::<Complex64>();
    let (cc, dd, cd) = (fro_norm_sqr(true_clutter), fro_norm_sqr(true_dynamic), dot(true_clutter, true_dynamic));
    let (cb, db) = (dot(true_clutter, bg), dot(true_dynamic, bg));
    if cc == 0.0 {
        return Ok(-RATIO_CAP_DB);
    }
    if dd == 0.0 {
        return Ok(RATIO_CAP_DB);
    }
    // 2×2 Hermitian normal equations
    let det = cc * dd - cd.norm_sqr();
    let (a, d) = if det > 1e-12 * cc * dd {
        ((cb * dd - cd * db) / det, (db * cc - cd.conj() * cb) / det)
    } else {
        (cb / cc, Complex64::new(0.0, 0.0))
    };
    let (pc, pd) = (a.norm_sqr() * cc, d.norm_sqr() * dd);
    if pd == 0.0 {
        return Ok(RATIO_CAP_DB);
    }
    if pc == 0.0 {
        return Ok(-RATIO_CAP_DB);
    }
    Ok((10.0 * (pc / pd).log10()).clamp(-RATIO_CAP_DB, RATIO_CAP_DB))
}

/// Experimental: two backgrounds with different memory. Their difference
/// keeps paths whose Doppler falls between the two pass bands.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerBandSplitter {
    pub slow: ClutterState,
    pub fast: ClutterState,
}

impl DopplerBandSplitter {
    pub fn new(slow: ClutterState, fast: ClutterState) -> Result<Self> {
        if slow.background.shape() != fast.background.shape() || slow.sample_interval_s != fast.sample_interval_s {
            return Err(Error::InvalidParameter("both states must share shape and sample interval".into()));
        }
        if slow.alpha <= fast.alpha {
            return Err(Error::InvalidParameter("the slow state needs the larger alpha".into()));
        }
        Ok(Self { slow, fast })
    }

    pub fn update(&mut self, h: &CMat) -> Result<()> {
        self.slow.update(h)?;
        self.fast.update(h)
    }

    pub fn band(&self) -> CMat {
        &self.fast.background - &self.slow.background
    }
}
