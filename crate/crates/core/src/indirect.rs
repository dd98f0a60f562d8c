//! Indirect estimation from reconstructed per-user channel matrices.
//!
//! Each subcarrier's `M × M_T` channel is flattened column by column into
//! one observation row, so every path becomes a single sparse row of the
//! partial-DFT problem whose entries carry the AoA/AoD phase progressions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::direct::PathEstimate;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scene::{freq_channel, PathParams, UlaConfig};
use crate::sparse::{build_partial_dft, solve, MmvProblem, Solver};
use crate::waveform::{complex_gaussian, OfdmGrid};

/// Channel estimates of one user over its subcarriers, with additive error
/// at a fixed signal-to-error ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconChannel {
    pub user: usize,
    pub t: usize,
    pub subcarriers: Vec<usize>,
    /// `M × M_T` per listed subcarrier.
    pub channels: Vec<CMat>,
    /// Infinite for exact channels.
    pub sir_db: f64,
    /// Power of each error entry.
    pub error_power: f64,
}

impl ReconChannel {
    pub fn rx_antennas(&self) -> usize {
        self.channels.first().map_or(0, |h| h.nrows())
    }

    pub fn tx_antennas(&self) -> usize {
        self.channels.first().map_or(0, |h| h.ncols())
    }
}

/// Exact channel of `link` over `subcarriers` at block `t`, plus complex
/// Gaussian error sized so that mean channel power over error power is
/// `10^(sir_db/10)`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_channel<R: Rng + ?Sized>(
    link: &[PathParams],
    user: usize,
    subcarriers: &[usize],
    t: usize,
    grid: &OfdmGrid,
    rx: UlaConfig,
    tx: UlaConfig,
    sir_db: f64,
    rng: &mut R,
) -> Result<ReconChannel> {
    if sir_db.is_nan() || sir_db == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(format!("invalid SIR {sir_db} dB")));
    }
    let mut channels: Vec<CMat> = subcarriers
        .iter()
        .map(|&n| freq_channel(link, n, t, grid, rx, tx))
        .collect();
    let entries: usize = channels.iter().map(|h| h.len()).sum();
    let mean_power = channels.iter().flat_map(|h| h.iter()).map(|z| z.norm_sqr()).sum::<f64>() / entries.max(1) as f64;
    let error_power = if sir_db.is_infinite() {
        0.0
    } else {
        mean_power / 10f64.powf(sir_db / 10.0)
    };
    if error_power > 0.0 {
        for h in &mut channels {
            for z in h.iter_mut() {
                *z += complex_gaussian(rng, error_power);
            }
        }
    }
    Ok(ReconChannel {
        user,
        t,
        subcarriers: subcarriers.to_vec(),
        channels,
        sir_db,
        error_power,
    })
}

/// Row `n` of the observations is `[h_{n,1}ᵀ, …, h_{n,M_T}ᵀ]` with `h_{n,i}`
/// the `i`-th column of the channel; the dictionary is the partial DFT.
pub fn build_stripped_mmv(recon: &ReconChannel, grid: &OfdmGrid, n_p: usize) -> Result<MmvProblem> {
    let (m, mt) = (recon.rx_antennas(), recon.tx_antennas());
    if mt == 0 {
        return Err(Error::InvalidParameter("empty reconstructed channel".into()));
    }
    let obs = CMat::from_fn(recon.channels.len(), m * mt, |i, c| recon.channels[i][(c % m, c / m)]);
    let dict = build_partial_dft(&recon.subcarriers, grid, n_p)?;
    MmvProblem::new(obs, dict, recon.error_power)
}

/// Non-zero rows of the stripped problem at one block.
#[derive(Debug, Clone, PartialEq)]
pub struct GEstimate {
    pub user: usize,
    pub t: usize,
    pub support: Vec<usize>,
    /// One row of length `M_T·M` per supported bin.
    pub rows: CMat,
}

impl GEstimate {
    pub fn row(&self, bin: usize) -> Option<Vec<Complex64>> {
        let i = self.support.iter().position(|&b| b == bin)?;
        Some(self.rows.row(i).iter().copied().collect())
    }
}

pub fn solve_stripped(problem: &MmvProblem, solver: &Solver, user: usize, t: usize) -> Result<GEstimate> {
    let sol = solve(problem, solver)?;
    let width = problem.observations.ncols();
    let mut rows = CMat::zeros(sol.len(), width);
    for (i, c) in sol.coeffs.iter().enumerate() {
        rows.row_mut(i).copy_from(&c.row(0));
    }
    Ok(GEstimate {
        user,
        t,
        support: sol.support,
        rows,
    })
}

/// Adjacent-antenna correlations of one G row: `(ε, ξ)`, each normalized by
/// its number of terms. `ξ` is `None` with one transmit antenna.
pub fn row_correlations(g: &[Complex64], m: usize, mt: usize) -> (Complex64, Option<Complex64>) {
    debug_assert_eq!(g.len(), m * mt);
    let mut eps = Complex64::new(0.0, 0.0);
    for k in 0..mt {
        for p in 0..m - 1 {
            eps += g[p + k * m].conj() * g[p + 1 + k * m];
        }
    }
    eps /= (mt * (m - 1)) as f64;
    let xi = (mt >= 2).then(|| {
        let mut xi = Complex64::new(0.0, 0.0);
        for k in 0..mt - 1 {
            for p in 0..m {
                xi += g[p + k * m].conj() * g[p + (k + 1) * m];
            }
        }
        xi / ((mt - 1) * m) as f64
    });
    (eps, xi)
}

fn sin_phase_to_angle(phase: f64) -> f64 {
    (phase / PI).clamp(-1.0, 1.0).asin()
}

/// Path estimates for every supported bin whose power `|ε|` lies within
/// `threshold_db` of the strongest bin.
pub fn estimate_paths(g: &GEstimate, m: usize, mt: usize, grid: &OfdmGrid, threshold_db: f64) -> Result<Vec<PathEstimate>> {
    if m < 2 {
        return Err(Error::InvalidParameter("angle estimation needs at least two receive antennas".into()));
    }
    if g.rows.ncols() != m * mt {
        return Err(Error::DimensionMismatch(format!(
            "G rows have {} entries, expected {}",
            g.rows.ncols(),
            m * mt
        )));
    }
    let est: Vec<PathEstimate> = g
        .support
        .iter()
        .enumerate()
        .map(|(i, &bin)| {
            let row: Vec<Complex64> = g.rows.row(i).iter().copied().collect();
            let (eps, xi) = row_correlations(&row, m, mt);
            PathEstimate {
                delay_bin: bin,
                delay_s: bin as f64 * grid.delay_resolution_s(),
                aoa_rad: sin_phase_to_angle(eps.arg()),
                aod_rad: xi.map(|x| sin_phase_to_angle(x.arg())),
                doppler_hz: None,
                power: eps.norm(),
                source: Some(g.user),
            }
        })
        .collect();
    let max = est.iter().map(|e| e.power).fold(0.0, f64::max);
    let floor = max * 10f64.powf(-threshold_db / 10.0);
    Ok(est.into_iter().filter(|e| e.power > 0.0 && e.power >= floor).collect())
}

/// Per-bin Doppler from two estimates `gap` blocks apart, on their shared
/// support. Unambiguous for `|f_D| < 1/(2·gap·T_s)`.
pub fn estimate_doppler_pair(a: &GEstimate, b: &GEstimate, gap: usize, grid: &OfdmGrid) -> Result<Vec<(usize, f64)>> {
    if gap == 0 {
        return Err(Error::InvalidParameter("block gap must be positive".into()));
    }
    let ts = grid.block_period_s();
    Ok(a.support
        .iter()
        .filter_map(|&bin| {
            let (ra, rb) = (a.row(bin)?, b.row(bin)?);
            let c: Complex64 = rb.iter().zip(&ra).map(|(x, y)| x * y.conj()).sum();
            Some((bin, c.arg() / (2.0 * PI * gap as f64 * ts)))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndirectConfig {
    pub n_p: usize,
    pub solver: Solver,
    pub threshold_db: f64,
}

impl IndirectConfig {
    pub fn new(n_p: usize) -> Self {
        Self {
            n_p,
            solver: Solver::default(),
            threshold_db: 25.0,
        }
    }
}

/// Runs one user's reconstructed channels through the pipeline. With two
/// or more blocks, Doppler comes from the first and last.
pub fn estimate_user(recons: &[ReconChannel], grid: &OfdmGrid, cfg: &IndirectConfig) -> Result<Vec<PathEstimate>> {
    let Some(first) = recons.first() else {
        return Ok(Vec::new());
    };
    let (m, mt) = (first.rx_antennas(), first.tx_antennas());
    let gs = recons
        .iter()
        .map(|r| {
            let p = build_stripped_mmv(r, grid, cfg.n_p)?;
            solve_stripped(&p, &cfg.solver, r.user, r.t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut est = estimate_paths(&gs[0], m, mt, grid, cfg.threshold_db)?;
    if gs.len() >= 2 {
        let last = gs.last().expect("non-empty");
        let gap = last.t.checked_sub(gs[0].t).filter(|&g| g > 0).ok_or_else(|| {
            Error::InvalidParameter("reconstructed channels must be in increasing block order".into())
        })?;
        let dop = estimate_doppler_pair(&gs[0], last, gap, grid)?;
        for e in &mut est {
            e.doppler_hz = dop.iter().find(|(b, _)| *b == e.delay_bin).map(|&(_, f)| f);
        }
    }
    Ok(est)
}
