//! Direct estimation from received blocks when the transmitted symbols are
//! known: recover per-delay coefficient blocks, split them by source, then
//! read angles, power and Doppler off each block.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fro_norm_sqr, CMat};
use crate::scene::LinkBudget;
use crate::sparse::{build_direct_dictionary, solve, MmvProblem, Solver};
use crate::waveform::{OfdmGrid, RxBlock, SymbolFrame, SPEED_OF_LIGHT};

/// One estimated propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub delay_bin: usize,
    pub delay_s: f64,
    pub aoa_rad: f64,
    /// `None` with a single transmit antenna.
    pub aod_rad: Option<f64>,
    pub doppler_hz: Option<f64>,
    /// Linear estimate of `|b|²`.
    pub power: f64,
    pub source: Option<usize>,
}

/// A non-zero coefficient block at one delay bin: `K·M_T` rows (source-major),
/// one column per receive antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredBlock {
    pub delay_bin: usize,
    pub block: CMat,
}

/// Recovered blocks of several OFDM blocks, keyed by block index.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimateSeries {
    pub sources: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    blocks: BTreeMap<usize, Vec<RecoveredBlock>>,
}

impl BlockEstimateSeries {
    pub fn new(sources: usize, tx_antennas: usize, rx_antennas: usize) -> Self {
        Self {
            sources,
            tx_antennas,
            rx_antennas,
            blocks: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, t: usize, blocks: Vec<RecoveredBlock>) -> Result<()> {
        let shape = (self.sources * self.tx_antennas, self.rx_antennas);
        if let Some(b) = blocks.iter().find(|b| b.block.shape() != shape) {
            return Err(Error::DimensionMismatch(format!(
                "block at bin {} is {:?}, series expects {shape:?}",
                b.delay_bin,
                b.block.shape()
            )));
        }
        self.blocks.insert(t, blocks);
        Ok(())
    }

    pub fn block_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.keys().copied()
    }

    pub fn blocks_at(&self, t: usize) -> &[RecoveredBlock] {
        self.blocks.get(&t).map_or(&[], |v| v.as_slice())
    }

    pub fn block(&self, t: usize, delay_bin: usize) -> Option<&CMat> {
        self.blocks_at(t).iter().find(|b| b.delay_bin == delay_bin).map(|b| &b.block)
    }

    /// Rows of source `k` in the block at `(t, delay_bin)`, if present and
    /// not identically zero.
    pub fn source_block(&self, t: usize, delay_bin: usize, k: usize) -> Option<CMat> {
        let b = self.block(t, delay_bin)?;
        let sub = b.rows(k * self.tx_antennas, self.tx_antennas).into_owned();
        (fro_norm_sqr(&sub) > 0.0).then_some(sub)
    }

    pub fn delay_bins(&self) -> BTreeSet<usize> {
        self.blocks.values().flatten().map(|b| b.delay_bin).collect()
    }
}

/// Solves the block-sparse problem of one received block.
///
/// The dictionary is searched in per-source column groups of width `M_T`,
/// so a delay bin only costs measurements for the sources actually present
/// there; the groups are reassembled into full `K·M_T × M` blocks.
pub fn recover_blocks(
    rx: &RxBlock,
    frame: &SymbolFrame,
    grid: &OfdmGrid,
    n_p: usize,
    solver: &Solver,
) -> Result<Vec<RecoveredBlock>> {
    if rx.subcarriers != frame.subcarriers {
        return Err(Error::DimensionMismatch(
            "received block and symbol frame cover different subcarriers".into(),
        ));
    }
    if rx.t != frame.t {
        return Err(Error::InvalidParameter(format!(
            "received block {} paired with symbols of block {}",
            rx.t, frame.t
        )));
    }
    let dict = build_direct_dictionary(frame, grid, n_p)?;
    let mt = frame.tx_antennas;
    let per_source = dict.regroup(mt)?;
    let problem = MmvProblem::new(rx.y.clone(), per_source, rx.noise_power)?;
    let sol = solve(&problem, solver)?;

    let k_count = frame.sources;
    let mut by_delay: BTreeMap<usize, CMat> = BTreeMap::new();
    for (&b, coeff) in sol.support.iter().zip(&sol.coeffs) {
        let (q, k) = (b / k_count, b % k_count);
        let block = by_delay.entry(q).or_insert_with(|| CMat::zeros(k_count * mt, rx.y.ncols()));
        block.rows_mut(k * mt, mt).copy_from(coeff);
    }
    Ok(by_delay
        .into_iter()
        .map(|(delay_bin, block)| RecoveredBlock { delay_bin, block })
        .collect())
}

/// Splits a `K·M_T × M` block into per-source sub-blocks and keeps those
/// whose mean entry power exceeds `power_floor`.
pub fn classify_source(block: &CMat, sources: usize, tx_antennas: usize, power_floor: f64) -> Vec<(usize, CMat)> {
    debug_assert_eq!(block.nrows(), sources * tx_antennas);
    (0..sources)
        .filter_map(|k| {
            let sub = block.rows(k * tx_antennas, tx_antennas).into_owned();
            let mean = fro_norm_sqr(&sub) / sub.len() as f64;
            (mean > power_floor).then_some((k, sub))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleEstimate {
    pub aoa_rad: f64,
    pub aod_rad: Option<f64>,
    pub power: f64,
}

/// Summed conjugate products of adjacent columns and adjacent rows.
#[derive(Debug, Clone, Copy, Default)]
struct AngleSums {
    cols: Complex64,
    col_terms: usize,
    rows: Complex64,
    row_terms: usize,
}

impl AngleSums {
    fn of(b: &CMat) -> Self {
        let (mt, m) = b.shape();
        let mut s = Self::default();
        for q in 0..mt {
            for p in 0..m.saturating_sub(1) {
                s.cols += b[(q, p)].conj() * b[(q, p + 1)];
                s.col_terms += 1;
            }
        }
        for q in 0..mt.saturating_sub(1) {
            for p in 0..m {
                s.rows += b[(q, p)].conj() * b[(q + 1, p)];
                s.row_terms += 1;
            }
        }
        s
    }

    fn add(&mut self, o: &Self) {
        self.cols += o.cols;
        self.col_terms += o.col_terms;
        self.rows += o.rows;
        self.row_terms += o.row_terms;
    }

    fn estimate(&self) -> AngleEstimate {
        AngleEstimate {
            aoa_rad: sin_phase_to_angle(self.cols.arg()),
            aod_rad: (self.row_terms > 0).then(|| sin_phase_to_angle(self.rows.arg())),
            power: self.cols.norm() / self.col_terms as f64,
        }
    }
}

fn sin_phase_to_angle(phase: f64) -> f64 {
    (phase / PI).clamp(-1.0, 1.0).asin()
}

/// Angles and power of a rank-one `M_T × M` block
/// `b·a(M_T,θ)·aᵀ(M,φ)` from adjacent-column and adjacent-row correlations.
/// Power is normalized by the number of summed products.
pub fn extract_angles(b: &CMat) -> Result<AngleEstimate> {
    if b.ncols() < 2 {
        return Err(Error::InvalidParameter("need at least two receive antennas".into()));
    }
    if fro_norm_sqr(b) == 0.0 {
        return Err(Error::InvalidParameter("zero block".into()));
    }
    Ok(AngleSums::of(b).estimate())
}

/// Doppler of source `k` at `delay_bin` from the phase advance between
/// consecutive blocks. Wraps outside `±1/(2T_s)`.
pub fn extract_doppler(series: &BlockEstimateSeries, delay_bin: usize, source: usize, ts: f64) -> Result<f64> {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut pairs = 0;
    for t in series.block_indices() {
        let (Some(a), Some(b)) = (
            series.source_block(t, delay_bin, source),
            series.source_block(t + 1, delay_bin, source),
        ) else {
            continue;
        };
        acc += a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum::<Complex64>();
        pairs += 1;
    }
    if pairs == 0 {
        return Err(Error::Unresolved(format!(
            "source {source} at bin {delay_bin} never appears in consecutive blocks"
        )));
    }
    Ok(acc.arg() / (2.0 * PI * ts))
}

/// Delay-dependent acceptance threshold for estimated path power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub budget: LinkBudget,
    /// Noise power of a single recovered coefficient.
    pub noise_floor: f64,
    pub margin_db: f64,
    /// Solver leakage relative to the expected path power; `None` when the
    /// recovery is exact.
    pub sidelobe_db: Option<f64>,
}

impl ThresholdRule {
    pub fn new(budget: LinkBudget, noise_floor: f64) -> Self {
        Self {
            budget,
            noise_floor,
            margin_db: 6.0,
            sidelobe_db: Some(-30.0),
        }
    }

    pub fn threshold(&self, delay_s: f64) -> f64 {
        let leak = match self.sidelobe_db {
            Some(db) => {
                let d = (delay_s * SPEED_OF_LIGHT).max(1.0);
                10f64.powf(db / 10.0) * self.budget.received_power(d).unwrap_or(0.0)
            }
            None => 0.0,
        };
        10f64.powf(self.margin_db / 10.0) * (self.noise_floor + leak)
    }
}

pub fn threshold_paths(estimates: Vec<PathEstimate>, rule: &ThresholdRule) -> Vec<PathEstimate> {
    estimates.into_iter().filter(|e| e.power > rule.threshold(e.delay_s)).collect()
}

/// Fraction of the block's energy left after its best rank-one fit.
pub fn rank_one_residual(b: &CMat) -> f64 {
    let total = fro_norm_sqr(b);
    if total == 0.0 {
        return 0.0;
    }
    let s = b.clone().svd(false, false).singular_values;
    let top = s.iter().fold(0.0f64, |a, &x| a.max(x));
    ((total - top * top) / total).max(0.0)
}

/// Oversampled 2D-DFT of an `M_T × M` block. Returns spectral peaks within
/// `floor_db` of the strongest one, strongest first; `power` is the peak
/// magnitude squared normalized to `|b|²` for an on-grid rank-one term.
///
/// Terms closer than about one bin (`2/M_T` in `sin θ`, `2/M` in `sin φ`)
/// merge into a single peak.
pub fn same_delay_spectrum(b: &CMat, oversample: usize, floor_db: f64) -> Result<Vec<AngleEstimate>> {
    let (mt, m) = b.shape();
    if mt < 2 {
        return Err(Error::InvalidParameter("same-delay separation needs M_T ≥ 2".into()));
    }
    if oversample == 0 {
        return Err(Error::InvalidParameter("oversampling factor must be positive".into()));
    }
    let (nu, nv) = (mt * oversample, m * oversample);
    let sin_of = |i: usize, n: usize| {
        let s = 2.0 * i as f64 / n as f64;
        if s >= 1.0 {
            s - 2.0
        } else {
            s
        }
    };
    let norm = ((mt * m) as f64).powi(2);
    let mut spec = vec![0.0; nu * nv];
    for u in 0..nu {
        let su = sin_of(u, nu);
        for v in 0..nv {
            let sv = sin_of(v, nv);
            let mut acc = Complex64::new(0.0, 0.0);
            for q in 0..mt {
                for p in 0..m {
                    acc += b[(q, p)] * Complex64::from_polar(1.0, -PI * (q as f64 * su + p as f64 * sv));
                }
            }
            spec[u * nv + v] = acc.norm_sqr() / norm;
        }
    }
    let peak = spec.iter().fold(0.0f64, |a, &x| a.max(x));
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    let floor = peak * 10f64.powf(-floor_db / 10.0);
    let mut out = Vec::new();
    for u in 0..nu {
        for v in 0..nv {
            let idx = u * nv + v;
            let x = spec[idx];
            if x < floor {
                continue;
            }
            let mut is_max = true;
            'nb: for du in [nu - 1, 0, 1] {
                for dv in [nv - 1, 0, 1] {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let j = ((u + du) % nu) * nv + (v + dv) % nv;
                    // plateaus count once, at their first cell
                    if spec[j] > x || (spec[j] == x && j < idx) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push(AngleEstimate {
                    aoa_rad: sin_phase_to_angle(PI * sin_of(v, nv)),
                    aod_rad: Some(sin_phase_to_angle(PI * sin_of(u, nu))),
                    power: x,
                });
            }
        }
    }
    out.sort_by(|a, b| b.power.total_cmp(&a.power));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectConfig {
    pub n_p: usize,
    pub solver: Solver,
    /// Mean entry power a source sub-block needs to count as present.
    pub power_floor: f64,
    /// Rank-one residual above which a block is treated as several paths.
    pub multipath_residual: f64,
    pub oversample: usize,
    pub spectrum_floor_db: f64,
    pub threshold: Option<ThresholdRule>,
}

impl DirectConfig {
    pub fn new(n_p: usize) -> Self {
        Self {
            n_p,
            solver: Solver::default(),
            power_floor: 0.0,
            multipath_residual: 0.1,
            oversample: 8,
            spectrum_floor_db: 10.0,
            threshold: None,
        }
    }
}

/// Turns a block series into path estimates: one per `(delay bin, source)`
/// unless the block is clearly not rank one and `M_T ≥ 2`, in which case
/// the 2D spectrum peaks are reported.
pub fn estimate_paths(series: &BlockEstimateSeries, grid: &OfdmGrid, cfg: &DirectConfig) -> Result<Vec<PathEstimate>> {
    let ts = grid.block_period_s();
    let mt = series.tx_antennas;
    let mut out = Vec::new();
    for bin in series.delay_bins() {
        let delay_s = bin as f64 * grid.delay_resolution_s();
        for k in 0..series.sources {
            let subs: Vec<CMat> = series
                .block_indices()
                .filter_map(|t| series.block(t, bin))
                .filter_map(|b| {
                    classify_source(b, series.sources, mt, cfg.power_floor)
                        .into_iter()
                        .find(|(kk, _)| *kk == k)
                        .map(|(_, s)| s)
                })
                .collect();
            if subs.is_empty() {
                continue;
            }
            let doppler = extract_doppler(series, bin, k, ts).ok();
            let strongest = subs
                .iter()
                .max_by(|a, b| fro_norm_sqr(a).total_cmp(&fro_norm_sqr(b)))
                .expect("non-empty");

            if mt >= 2 && rank_one_residual(strongest) > cfg.multipath_residual {
                for a in same_delay_spectrum(strongest, cfg.oversample, cfg.spectrum_floor_db)? {
                    out.push(PathEstimate {
                        delay_bin: bin,
                        delay_s,
                        aoa_rad: a.aoa_rad,
                        aod_rad: a.aod_rad,
                        doppler_hz: doppler,
                        power: a.power,
                        source: Some(k),
                    });
                }
                continue;
            }
            if series.rx_antennas < 2 {
                return Err(Error::InvalidParameter("angle estimation needs at least two receive antennas".into()));
            }
            let mut sums = AngleSums::default();
            for s in &subs {
                sums.add(&AngleSums::of(s));
            }
            let a = sums.estimate();
            out.push(PathEstimate {
                delay_bin: bin,
                delay_s,
                aoa_rad: a.aoa_rad,
                aod_rad: a.aod_rad,
                doppler_hz: doppler,
                power: a.power,
                source: Some(k),
            });
        }
    }
    Ok(match &cfg.threshold {
        Some(rule) => threshold_paths(out, rule),
        None => out,
    })
}
