//! Ground-truth multipath scenes and exact channel evaluation.
//!
//! Steering vectors use `a(M, θ)_m = exp(+jπ·m·sin θ)` for a half-wavelength
//! ULA. The angle extractors in [`crate::direct`] and [`crate::indirect`]
//! rely on that sign.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMat};
use crate::waveform::{complex_gaussian, dbm_to_watts, OfdmGrid, SPEED_OF_LIGHT};

/// Largest angle magnitude produced by scene sampling.
pub const MAX_ABS_ANGLE_RAD: f64 = 85.0 * PI / 180.0;

/// Half-wavelength uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UlaConfig {
    pub elements: usize,
}

impl UlaConfig {
    pub fn new(elements: usize) -> Result<Self> {
        if elements == 0 {
            return Err(Error::InvalidParameter("array needs at least one element".into()));
        }
        Ok(Self { elements })
    }
}

/// Array response `a(M, angle)`.
pub fn steering(cfg: UlaConfig, angle: f64) -> DVector<Complex64> {
    let s = angle.sin();
    DVector::from_fn(cfg.elements, |m, _| cis(PI * m as f64 * s))
}

/// One multipath component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub aoa_rad: f64,
    pub aod_rad: f64,
    pub amp: Complex64,
    pub source: usize,
    #[serde(default)]
    pub is_clutter: bool,
}

impl PathParams {
    pub fn new(delay_s: f64, doppler_hz: f64, aoa_rad: f64, aod_rad: f64, amp: Complex64, source: usize) -> Self {
        Self {
            delay_s,
            doppler_hz,
            aoa_rad,
            aod_rad,
            amp,
            source,
            is_clutter: false,
        }
    }

    pub fn clutter(mut self) -> Self {
        self.is_clutter = true;
        self
    }

    pub fn validate(&self, clutter_doppler_bound_hz: f64) -> Result<()> {
        let half = PI / 2.0;
        if !(self.aoa_rad.abs() < half && self.aod_rad.abs() < half) {
            return Err(Error::InvalidParameter("angles must lie in (-π/2, π/2)".into()));
        }
        if !(self.delay_s >= 0.0) {
            return Err(Error::InvalidParameter("delay must be non-negative".into()));
        }
        if self.is_clutter && self.doppler_hz.abs() > clutter_doppler_bound_hz {
            return Err(Error::InvalidParameter(format!(
                "clutter Doppler {} Hz exceeds bound {clutter_doppler_bound_hz} Hz",
                self.doppler_hz
            )));
        }
        Ok(())
    }

    pub fn power(&self) -> f64 {
        self.amp.norm_sqr()
    }

    /// Total propagation distance.
    pub fn distance_m(&self) -> f64 {
        self.delay_s * SPEED_OF_LIGHT
    }
}

/// `M_rx × M_tx` frequency-domain channel at subcarrier `n`, block `t`.
pub fn freq_channel(link: &[PathParams], n: usize, t: usize, grid: &OfdmGrid, rx: UlaConfig, tx: UlaConfig) -> CMat {
    let f0 = grid.subcarrier_spacing_hz();
    let ts = grid.block_period_s();
    let mut h = CMat::zeros(rx.elements, tx.elements);
    for p in link {
        let gain = p.amp
            * cis(-2.0 * PI * n as f64 * p.delay_s * f0)
            * cis(2.0 * PI * t as f64 * p.doppler_hz * ts);
        let ar = steering(rx, p.aoa_rad);
        let at = steering(tx, p.aod_rad);
        h += (ar * at.transpose()) * gain;
    }
    h
}

/// One tap of the time-domain impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Impulse {
    pub delay_s: f64,
    pub matrix: CMat,
}

/// Impulse response at absolute time `t_prime`: one tap per path.
pub fn time_channel(link: &[PathParams], t_prime: f64, rx: UlaConfig, tx: UlaConfig) -> Vec<Impulse> {
    link.iter()
        .map(|p| {
            let gain = p.amp * cis(2.0 * PI * p.doppler_hz * t_prime);
            Impulse {
                delay_s: p.delay_s,
                matrix: (steering(rx, p.aoa_rad) * steering(tx, p.aod_rad).transpose()) * gain,
            }
        })
        .collect()
}

/// Power gain `distance^(-exponent)`, unity at 1 m.
pub fn pathloss(distance_m: f64, exponent: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::InvalidParameter(format!("distance {distance_m} must be positive")));
    }
    Ok(distance_m.powf(-exponent))
}

/// Free-space loss at the 1 m reference distance, `20·log10(4π/λ)` in dB.
pub fn free_space_reference_loss_db(carrier_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / carrier_hz;
    20.0 * (4.0 * PI / lambda).log10()
}

/// Closed real interval `[lo, hi]`; `lo == hi` pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidParameter(format!("{what}: empty interval [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub lo: usize,
    pub hi: usize,
}

/// Statistics of one cluster of paths.
///
/// Each cluster draws a centre (direction, distance, speed) from the offset
/// intervals and a width from the span intervals; its paths spread
/// uniformly around the centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    pub path_count: CountRange,
    pub direction_span_deg: Interval,
    pub distance_span_m: Interval,
    pub doppler_span_hz: Interval,
    pub direction_offset_deg: Interval,
    pub distance_offset_m: Interval,
    pub speed_offset_mps: Interval,
    pub clutter: bool,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            path_count: CountRange { lo: 10, hi: 15 },
            direction_span_deg: Interval::new(0.0, 45.0),
            distance_span_m: Interval::new(0.0, 45.0),
            doppler_span_hz: Interval::new(0.0, 600.0),
            direction_offset_deg: Interval::new(-75.0, 75.0),
            distance_offset_m: Interval::new(50.0, 180.0),
            speed_offset_mps: Interval::new(-40.0, 40.0),
            clutter: false,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.path_count.lo > self.path_count.hi {
            return Err(Error::InvalidParameter("path_count: empty range".into()));
        }
        self.direction_span_deg.validate("direction_span_deg")?;
        self.distance_span_m.validate("distance_span_m")?;
        self.doppler_span_hz.validate("doppler_span_hz")?;
        self.direction_offset_deg.validate("direction_offset_deg")?;
        self.distance_offset_m.validate("distance_offset_m")?;
        self.speed_offset_mps.validate("speed_offset_mps")?;
        if self.distance_offset_m.lo + self.distance_span_m.lo <= 0.0 || self.distance_span_m.lo < 0.0 {
            return Err(Error::InvalidParameter("distances must be positive".into()));
        }
        Ok(())
    }

    fn max_distance(&self) -> f64 {
        self.distance_offset_m.hi + self.distance_span_m.hi
    }

    fn min_distance(&self) -> f64 {
        self.distance_offset_m.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    #[default]
    Downlink,
    Uplink,
}

/// Transmit power and propagation loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub pathloss_exponent: f64,
    /// Extra loss at the 1 m reference distance, on top of [`pathloss`].
    pub reference_loss_db: f64,
}

impl LinkBudget {
    /// 30 dBm RRUs and exponent 4 (downlink), 25 dBm mobiles and exponent 2
    /// (uplink), with free-space reference loss at `carrier_hz`.
    pub fn for_mode(mode: LinkMode, carrier_hz: f64) -> Self {
        let (tx_power_dbm, pathloss_exponent) = match mode {
            LinkMode::Downlink => (30.0, 4.0),
            LinkMode::Uplink => (25.0, 2.0),
        };
        Self {
            tx_power_dbm,
            pathloss_exponent,
            reference_loss_db: free_space_reference_loss_db(carrier_hz),
        }
    }

    /// Expected received power `E|b|²` of a path with the given travel distance.
    pub fn received_power(&self, distance_m: f64) -> Result<f64> {
        Ok(dbm_to_watts(self.tx_power_dbm)
            * pathloss(distance_m, self.pathloss_exponent)?
            * 10f64.powf(-self.reference_loss_db / 10.0))
    }
}

/// Quantization applied to sampled delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayGrid {
    pub resolution_s: f64,
    /// Delays must map to bins strictly below this count.
    pub max_bins: usize,
}

/// Everything needed to draw a random scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub mode: LinkMode,
    /// Number of links (RRUs or mobiles); every link draws every cluster.
    pub sources: usize,
    pub clusters: Vec<ClusterSpec>,
    pub carrier_hz: f64,
    pub static_period_s: f64,
    pub link: LinkBudget,
    /// `None` keeps delays continuous.
    pub delay_grid: Option<DelayGrid>,
    pub clutter_doppler_bound_hz: f64,
}

impl SceneSpec {
    pub fn new(mode: LinkMode, sources: usize, clusters: Vec<ClusterSpec>) -> Self {
        let carrier_hz = 2.35e9;
        Self {
            mode,
            sources,
            clusters,
            carrier_hz,
            static_period_s: 1.7e-3,
            link: LinkBudget::for_mode(mode, carrier_hz),
            delay_grid: None,
            clutter_doppler_bound_hz: 1.0,
        }
    }

    pub fn on_grid(mut self, grid: &OfdmGrid, max_bins: usize) -> Self {
        self.delay_grid = Some(DelayGrid {
            resolution_s: grid.delay_resolution_s(),
            max_bins,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::InvalidParameter("scene needs at least one cluster".into()));
        }
        if self.sources == 0 {
            return Err(Error::InvalidParameter("scene needs at least one source".into()));
        }
        if !(self.static_period_s > 0.0) {
            return Err(Error::InvalidParameter("static period must be positive".into()));
        }
        for c in &self.clusters {
            c.validate()?;
        }
        if let Some(g) = self.delay_grid {
            let bin = |d: f64| (d / SPEED_OF_LIGHT / g.resolution_s).round() as i64;
            let hi = self.clusters.iter().map(|c| bin(c.max_distance())).max().unwrap_or(0);
            let lo = self.clusters.iter().map(|c| bin(c.min_distance())).min().unwrap_or(0);
            if hi >= g.max_bins as i64 {
                return Err(Error::InfeasibleScene(format!(
                    "distances reach delay bin {hi}, grid holds {}",
                    g.max_bins
                )));
            }
            let needed: usize = self.clusters.iter().map(|c| c.path_count.hi).sum();
            let available = (hi - lo + 1).max(0) as usize;
            if needed > available {
                return Err(Error::InfeasibleScene(format!(
                    "{needed} distinct delays needed per link, only {available} bins reachable"
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth multipath, one path list per source link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub links: Vec<Vec<PathParams>>,
    pub static_period_s: f64,
    pub carrier_hz: f64,
}

impl Scene {
    pub fn path_count(&self) -> usize {
        self.links.iter().map(Vec::len).sum()
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathParams> {
        self.links.iter().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        if !(scene.static_period_s > 0.0) {
            return Err(Error::InvalidParameter("static period must be positive".into()));
        }
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const MAX_REDRAWS: usize = 10_000;
const WIDEN_EVERY: usize = 50;

/// Draws a random scene; identical `(spec, seed)` pairs give identical scenes.
pub fn sample_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deg = PI / 180.0;
    let mut links = Vec::with_capacity(spec.sources);
    for source in 0..spec.sources {
        let mut used_bins = HashSet::new();
        let mut link = Vec::new();
        for c in &spec.clusters {
            let count = rng.random_range(c.path_count.lo..=c.path_count.hi);
            let aoa_centre = c.direction_offset_deg.sample(&mut rng) * deg;
            let aod_centre = c.direction_offset_deg.sample(&mut rng) * deg;
            let dir_width = c.direction_span_deg.sample(&mut rng) * deg;
            let dist_centre = c.distance_offset_m.sample(&mut rng);
            let dist_width = c.distance_span_m.sample(&mut rng);
            // on-grid clusters widen when their bins run out: first up to the
            // spec's farthest distance, then down to its nearest
            let (mut near, mut far) = (dist_centre, dist_centre + dist_width);
            let speed = c.speed_offset_mps.sample(&mut rng);
            let dop_width = c.doppler_span_hz.sample(&mut rng);
            let base_doppler = speed * spec.carrier_hz / SPEED_OF_LIGHT;
            let spread = |rng: &mut ChaCha8Rng, w: f64| if w > 0.0 { rng.random_range(-w / 2.0..=w / 2.0) } else { 0.0 };

            for _ in 0..count {
                let mut attempts = 0;
                let (distance, delay_s) = loop {
                    let d = near + if far > near { rng.random_range(0.0..=far - near) } else { 0.0 };
                    let tau = d / SPEED_OF_LIGHT;
                    match spec.delay_grid {
                        None => break (d, tau),
                        Some(g) => {
                            let bin = (tau / g.resolution_s).round() as usize;
                            if used_bins.insert(bin) {
                                let q = bin as f64 * g.resolution_s;
                                break (q * SPEED_OF_LIGHT, q);
                            }
                        }
                    }
                    attempts += 1;
                    if let Some(g) = spec.delay_grid {
                        if attempts % WIDEN_EVERY == 0 {
                            let step = g.resolution_s * SPEED_OF_LIGHT;
                            if far < c.max_distance() {
                                far = (far + step).min(c.max_distance());
                            } else {
                                near = (near - step).max(c.min_distance());
                            }
                        }
                    }
                    if attempts > MAX_REDRAWS {
                        return Err(Error::InfeasibleScene(
                            "could not draw a duplicate-free delay within the cluster's distance range".into(),
                        ));
                    }
                };
                let aoa = (aoa_centre + spread(&mut rng, dir_width)).clamp(-MAX_ABS_ANGLE_RAD, MAX_ABS_ANGLE_RAD);
                let aod = (aod_centre + spread(&mut rng, dir_width)).clamp(-MAX_ABS_ANGLE_RAD, MAX_ABS_ANGLE_RAD);
                let doppler = if c.clutter {
                    let b = spec.clutter_doppler_bound_hz;
                    if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 }
                } else {
                    base_doppler + spread(&mut rng, dop_width)
                };
                let power = spec.link.received_power(distance.max(f64::MIN_POSITIVE))?;
                let amp = complex_gaussian(&mut rng, power);
                link.push(PathParams {
                    delay_s,
                    doppler_hz: doppler,
                    aoa_rad: aoa,
                    aod_rad: aod,
                    amp,
                    source,
                    is_clutter: c.clutter,
                });
            }
        }
        links.push(link);
    }
    Ok(Scene {
        links,
        static_period_s: spec.static_period_s,
        carrier_hz: spec.carrier_hz,
    })
}
