//! Dictionaries and joint-sparse (MMV) recovery engines.
//!
//! A dictionary is a set of column blocks of equal width; a solution selects
//! a few blocks and gives each a `block_size × M_obs` coefficient matrix
//! shared across all measurement columns.

mod omp;
mod sbl;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use omp::{mmv_omp, OmpConfig};
pub use sbl::{block_sbl, NoiseModel, SblConfig};

use crate::error::{Error, Result, SolverError};
use crate::linalg::{cis, fro_norm_sqr, CMat};
use crate::waveform::{OfdmGrid, SymbolFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub matrix: CMat,
    pub block_size: usize,
    /// Quantized delay bin of every block.
    pub delays: Vec<usize>,
}

impl Dictionary {
    pub fn new(matrix: CMat, block_size: usize, delays: Vec<usize>) -> Result<Self> {
        if block_size == 0 || matrix.ncols() % block_size != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} columns cannot be split into blocks of {block_size}",
                matrix.ncols()
            )));
        }
        if delays.len() != matrix.ncols() / block_size {
            return Err(Error::DimensionMismatch("one delay label per block required".into()));
        }
        Ok(Self {
            matrix,
            block_size,
            delays,
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn block_count(&self) -> usize {
        self.delays.len()
    }

    pub fn block_columns(&self, b: usize) -> std::ops::Range<usize> {
        b * self.block_size..(b + 1) * self.block_size
    }

    /// Same columns, split into narrower blocks. Each narrow block keeps the
    /// delay label of the block it came from.
    pub fn regroup(&self, block_size: usize) -> Result<Dictionary> {
        if block_size == 0 || self.block_size % block_size != 0 {
            return Err(Error::InvalidParameter(format!(
                "block size {block_size} does not divide {}",
                self.block_size
            )));
        }
        let per = self.block_size / block_size;
        let delays = self.delays.iter().flat_map(|&d| std::iter::repeat_n(d, per)).collect();
        Dictionary::new(self.matrix.clone(), block_size, delays)
    }
}

/// Row-sparse partial DFT: column `q` holds `exp(-j2π n q / (gN))` for every
/// listed subcarrier `n`.
pub fn build_partial_dft(subcarriers: &[usize], grid: &OfdmGrid, n_p: usize) -> Result<Dictionary> {
    let fine = grid.fine_len();
    if n_p == 0 || n_p > fine {
        return Err(Error::InvalidParameter(format!("N_p = {n_p} must lie in [1, {fine}]")));
    }
    let matrix = CMat::from_fn(subcarriers.len(), n_p, |i, q| {
        cis(-2.0 * PI * ((subcarriers[i] * q) % fine) as f64 / fine as f64)
    });
    Dictionary::new(matrix, 1, (0..n_p).collect())
}

/// Block dictionary `W` of the direct scheme: row `n` is
/// `x_{n,t}ᵀ (c_nᵀ ⊗ I)`, so block `q` spans the `K·M_T` transmit streams
/// at delay bin `q`.
pub fn build_direct_dictionary(frame: &SymbolFrame, grid: &OfdmGrid, n_p: usize) -> Result<Dictionary> {
    let fine = grid.fine_len();
    if n_p == 0 || n_p > fine {
        return Err(Error::InvalidParameter(format!("N_p = {n_p} must lie in [1, {fine}]")));
    }
    let width = frame.width();
    let matrix = CMat::from_fn(frame.subcarriers.len(), width * n_p, |i, col| {
        let (q, j) = (col / width, col % width);
        let n = frame.subcarriers[i];
        frame.symbols[i][j] * cis(-2.0 * PI * ((n * q) % fine) as f64 / fine as f64)
    });
    Dictionary::new(matrix, width, (0..n_p).collect())
}

/// Which joint-sparse engine to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Omp(OmpConfig),
    Sbl(SblConfig),
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Omp(OmpConfig::default())
    }
}

/// Runs the chosen engine. An SBL run that hits its iteration cap still
/// yields its last iterate.
pub fn solve(problem: &MmvProblem, solver: &Solver) -> Result<SparseSolution> {
    let res = match solver {
        Solver::Omp(cfg) => mmv_omp(problem, cfg),
        Solver::Sbl(cfg) => block_sbl(problem, cfg),
    };
    match res {
        Ok(s) => Ok(s),
        Err(SolverError::NotConverged { best, .. }) => Ok(*best),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmvProblem {
    pub observations: CMat,
    pub dictionary: Dictionary,
    /// Per-entry noise power of the observations, when known.
    pub noise_floor: f64,
}

impl MmvProblem {
    pub fn new(observations: CMat, dictionary: Dictionary, noise_floor: f64) -> Result<Self> {
        if observations.nrows() != dictionary.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} observation rows vs {} dictionary rows",
                observations.nrows(),
                dictionary.rows()
            )));
        }
        Ok(Self {
            observations,
            dictionary,
            noise_floor,
        })
    }
}

/// Recovered blocks; everything outside `support` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSolution {
    pub support: Vec<usize>,
    #[serde(skip)]
    pub coeffs: Vec<CMat>,
    pub block_power: Vec<f64>,
}

impl SparseSolution {
    pub fn empty() -> Self {
        Self {
            support: Vec::new(),
            coeffs: Vec::new(),
            block_power: Vec::new(),
        }
    }

    /// Builds a solution sorted by block index.
    pub fn from_blocks(mut blocks: Vec<(usize, CMat)>) -> Self {
        blocks.sort_by_key(|(b, _)| *b);
        let block_power = blocks
            .iter()
            .map(|(_, c)| fro_norm_sqr(c) / c.len().max(1) as f64)
            .collect();
        let (support, coeffs) = blocks.into_iter().unzip();
        Self {
            support,
            coeffs,
            block_power,
        }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn block(&self, b: usize) -> Option<&CMat> {
        self.support.binary_search(&b).ok().map(|i| &self.coeffs[i])
    }

    /// `Φ · X` for this solution.
    pub fn reconstruct(&self, dict: &Dictionary, m_obs: usize) -> CMat {
        let mut out = CMat::zeros(dict.rows(), m_obs);
        for (&b, c) in self.support.iter().zip(&self.coeffs) {
            let cols = dict.block_columns(b);
            out += dict.matrix.columns(cols.start, cols.len()) * c;
        }
        out
    }

    /// Drops blocks whose power is at most `rel` times the strongest.
    pub fn prune_relative(self, rel: f64) -> Self {
        let max = self.block_power.iter().copied().fold(0.0, f64::max);
        let keep: Vec<(usize, CMat)> = self
            .support
            .into_iter()
            .zip(self.coeffs)
            .zip(&self.block_power)
            .filter(|(_, &p)| p > rel * max)
            .map(|(bc, _)| bc)
            .collect();
        Self::from_blocks(keep)
    }
}
