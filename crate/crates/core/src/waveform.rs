//! Multiuser OFDMA signal synthesis at a sensing receiver.
//!
//! All signals live in the frequency domain: one complex sample per used
//! subcarrier, receive antenna and OFDM block. The Doppler phase is held
//! constant within a block.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scene::{freq_channel, Scene, UlaConfig};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Thermal noise density at room temperature.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// OFDM numerology shared by the transmitter and the sensing receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmGrid {
    pub n_subcarriers: usize,
    pub bandwidth_hz: f64,
    /// Cyclic prefix length as a fraction of the useful symbol time `N/B`.
    pub cp_fraction: f64,
    /// Delay grid refinement `g`; delays are quantized to `1/(g·B)`.
    pub grid_factor: usize,
}

impl OfdmGrid {
    pub fn new(n_subcarriers: usize, bandwidth_hz: f64, cp_fraction: f64, grid_factor: usize) -> Result<Self> {
        let grid = Self {
            n_subcarriers,
            bandwidth_hz,
            cp_fraction,
            grid_factor,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 {
            return Err(Error::InvalidParameter("n_subcarriers must be positive".into()));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::InvalidParameter("bandwidth must be positive".into()));
        }
        if !(self.cp_fraction > 0.0 && self.cp_fraction.is_finite()) {
            return Err(Error::InvalidParameter("cp_fraction must be positive".into()));
        }
        if self.grid_factor == 0 {
            return Err(Error::InvalidParameter("grid_factor must be at least 1".into()));
        }
        Ok(())
    }

    /// 100 MHz, 512 subcarriers, 25 % cyclic prefix.
    pub fn standard() -> Self {
        Self {
            n_subcarriers: 512,
            bandwidth_hz: 100e6,
            cp_fraction: 0.25,
            grid_factor: 1,
        }
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }

    /// `T_s = N/B + T_p`.
    pub fn block_period_s(&self) -> f64 {
        self.n_subcarriers as f64 / self.bandwidth_hz * (1.0 + self.cp_fraction)
    }

    pub fn delay_resolution_s(&self) -> f64 {
        1.0 / (self.grid_factor as f64 * self.bandwidth_hz)
    }

    /// `N' = g·N`, the length of the fine delay grid.
    pub fn fine_len(&self) -> usize {
        self.grid_factor * self.n_subcarriers
    }
}

/// Per-user subcarrier index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub n_total: usize,
    pub users: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn new(n_total: usize, users: Vec<Vec<usize>>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidParameter("allocation needs at least one user".into()));
        }
        let mut users = users;
        for set in &mut users {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&n| n >= n_total) {
                return Err(Error::InvalidParameter(format!(
                    "subcarrier {bad} outside [0, {n_total})"
                )));
            }
        }
        Ok(Self { n_total, users })
    }

    /// Every user shares the same index set (multiuser MIMO).
    pub fn shared(n_total: usize, indices: Vec<usize>, users: usize) -> Result<Self> {
        Self::new(n_total, vec![indices; users.max(1)])
    }

    /// All `n_total` subcarriers shared by `users` (the downlink case).
    pub fn full(n_total: usize, users: usize) -> Self {
        Self {
            n_total,
            users: vec![(0..n_total).collect(); users.max(1)],
        }
    }

    /// `n_used` distinct random subcarriers shared by every user.
    pub fn random_shared(n_total: usize, n_used: usize, users: usize, seed: u64) -> Result<Self> {
        if n_used == 0 || n_used > n_total {
            return Err(Error::InvalidParameter(format!(
                "cannot pick {n_used} of {n_total} subcarriers"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = sample(&mut rng, n_total, n_used).into_vec();
        Self::shared(n_total, indices, users)
    }

    /// A contiguous block of `n_used` subcarriers starting at `start`.
    pub fn contiguous(n_total: usize, start: usize, n_used: usize, users: usize) -> Result<Self> {
        Self::shared(n_total, (start..start + n_used).collect(), users)
    }

    /// Sorted union `𝖲` of all users' subcarriers.
    pub fn union(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.users.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn user(&self, k: usize) -> &[usize] {
        &self.users[k]
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    /// Replicates the first user's set across `users` users.
    pub fn with_users(mut self, users: usize) -> Self {
        let base = self.users[0].clone();
        self.users = vec![base; users.max(1)];
        self
    }
}

/// 5G NR type-B style pattern: subcarriers 3, 4, 9 and 10 of every
/// 12-subcarrier resource block.
pub fn nr_type_b_allocation(n_total: usize) -> Result<Allocation> {
    if n_total == 0 || n_total % 12 != 0 {
        return Err(Error::InvalidParameter(format!(
            "{n_total} subcarriers is not a whole number of resource blocks"
        )));
    }
    let indices = (0..n_total / 12)
        .flat_map(|rb| [3, 4, 9, 10].map(|i| rb * 12 + i))
        .collect();
    Allocation::shared(n_total, indices, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Bpsk,
    #[default]
    Qpsk,
    Qam16,
}

impl Constellation {
    pub fn points(&self) -> Vec<Complex64> {
        match self {
            Constellation::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            Constellation::Qpsk => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                vec![
                    Complex64::new(s, s),
                    Complex64::new(-s, s),
                    Complex64::new(-s, -s),
                    Complex64::new(s, -s),
                ]
            }
            Constellation::Qam16 => {
                // average energy of the {±1, ±3}² lattice is 10
                let s = 1.0 / 10f64.sqrt();
                let levels = [-3.0, -1.0, 1.0, 3.0];
                levels
                    .iter()
                    .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re * s, im * s)))
                    .collect()
            }
        }
    }
}

/// Known transmit symbols for one OFDM block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolFrame {
    pub t: usize,
    /// Union subcarrier set; row order of every per-block matrix.
    pub subcarriers: Vec<usize>,
    pub sources: usize,
    pub tx_antennas: usize,
    /// `symbols[i]` is `x_{n,t}` for `n = subcarriers[i]`, laid out source-major
    /// (`k·M_T + antenna`). Sources idle on a subcarrier transmit zero.
    pub symbols: Vec<Vec<Complex64>>,
    pub constellation: Constellation,
    pub seed: u64,
}

impl SymbolFrame {
    pub fn width(&self) -> usize {
        self.sources * self.tx_antennas
    }
}

/// Draws one block of symbols; the block index selects an independent stream.
pub fn gen_symbols(
    alloc: &Allocation,
    sources: usize,
    tx_antennas: usize,
    constellation: Constellation,
    seed: u64,
    t: usize,
) -> Result<SymbolFrame> {
    if sources == 0 || tx_antennas == 0 {
        return Err(Error::InvalidParameter("need at least one source and one antenna".into()));
    }
    let subcarriers = alloc.union();
    if subcarriers.is_empty() {
        return Err(Error::InvalidParameter("empty allocation".into()));
    }
    if alloc.user_count() != sources {
        return Err(Error::DimensionMismatch(format!(
            "allocation has {} users, frame has {sources} sources",
            alloc.user_count()
        )));
    }
    let points = constellation.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let symbols = subcarriers
        .iter()
        .map(|n| {
            (0..sources)
                .flat_map(|k| {
                    let active = alloc.user(k).binary_search(n).is_ok();
                    (0..tx_antennas)
                        .map(|_| {
                            let s = points[rng.random_range(0..points.len())];
                            if active {
                                s
                            } else {
                                Complex64::new(0.0, 0.0)
                            }
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    Ok(SymbolFrame {
        t,
        subcarriers,
        sources,
        tx_antennas,
        symbols,
        constellation,
        seed,
    })
}

/// Received subcarrier samples of one block: rows follow the frame's
/// subcarrier order, columns are receive antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct RxBlock {
    pub t: usize,
    pub subcarriers: Vec<usize>,
    pub y: CMat,
    pub noise_power: f64,
}

/// Circularly-symmetric complex Gaussian sample of the given power.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, power: f64) -> Complex64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Noisy received signal at the sensing array for block `frame.t`.
///
/// Each scene link `k` is the channel from source `k` (an RRU in downlink,
/// a mobile in uplink) to the sensing receiver.
pub fn receive<R: Rng + ?Sized>(
    scene: &Scene,
    frame: &SymbolFrame,
    grid: &OfdmGrid,
    rx: UlaConfig,
    tx: UlaConfig,
    noise_power: f64,
    rng: &mut R,
) -> Result<RxBlock> {
    if scene.links.len() != frame.sources {
        return Err(Error::DimensionMismatch(format!(
            "scene has {} links, frame has {} sources",
            scene.links.len(),
            frame.sources
        )));
    }
    if tx.elements != frame.tx_antennas {
        return Err(Error::DimensionMismatch(format!(
            "transmit array has {} elements, frame expects {}",
            tx.elements, frame.tx_antennas
        )));
    }
    if !(noise_power >= 0.0) {
        return Err(Error::InvalidParameter("noise power must be non-negative".into()));
    }
    let m = rx.elements;
    let mt = tx.elements;
    let mut y = CMat::zeros(frame.subcarriers.len(), m);
    for (row, (&n, x)) in frame.subcarriers.iter().zip(&frame.symbols).enumerate() {
        let mut acc = DVector::<Complex64>::zeros(m);
        for (k, link) in scene.links.iter().enumerate() {
            if link.is_empty() {
                continue;
            }
            let h = freq_channel(link, n, frame.t, grid, rx, tx);
            let xk = DVector::from_column_slice(&x[k * mt..(k + 1) * mt]);
            acc += h * xk;
        }
        for col in 0..m {
            y[(row, col)] = acc[col];
        }
    }
    if noise_power > 0.0 {
        for z in y.iter_mut() {
            *z += complex_gaussian(rng, noise_power);
        }
    }
    Ok(RxBlock {
        t: frame.t,
        subcarriers: frame.subcarriers.clone(),
        y,
        noise_power,
    })
}

/// Receiver thermal noise over the full band, in watts.
pub fn thermal_noise_power(grid: &OfdmGrid) -> f64 {
    dbm_to_watts(THERMAL_NOISE_DBM_PER_HZ + 10.0 * grid.bandwidth_hz.log10())
}

/// Index of `delay_s` on the `1/(g·B)` grid; must fall below `n_p`.
pub fn quantize_delay(delay_s: f64, grid: &OfdmGrid, n_p: usize) -> Result<usize> {
    if !(delay_s >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative delay {delay_s}")));
    }
    let bin = (delay_s / grid.delay_resolution_s()).round();
    if bin >= n_p as f64 {
        return Err(Error::DelayOutOfRange { delay_s, span: n_p });
    }
    Ok(bin as usize)
}
