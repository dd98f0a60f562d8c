//! Greedy block orthogonal matching pursuit for MMV problems.

use crate::error::SolverError;
use crate::linalg::{fro_norm_sqr, least_squares, select_columns, CMat};

use super::{MmvProblem, SparseSolution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpConfig {
    /// Hard cap on selected blocks.
    pub max_blocks: usize,
    /// Stop once `‖R‖² ≤ residual_rel · ‖Y‖²`.
    pub residual_rel: f64,
    /// Also stop once the residual energy per entry reaches the problem's
    /// noise floor.
    pub stop_at_noise: bool,
    /// Final blocks with power at most this fraction of the strongest are
    /// dropped.
    pub prune_rel: f64,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self {
            max_blocks: usize::MAX,
            residual_rel: 1e-20,
            stop_at_noise: true,
            prune_rel: 1e-12,
        }
    }
}

impl OmpConfig {
    pub fn with_max_blocks(max_blocks: usize) -> Self {
        Self {
            max_blocks,
            ..Self::default()
        }
    }
}

/// Block OMP: pick the block whose normalized correlation with the residual,
/// summed over the block and all measurement columns, is largest; refit all
/// selected blocks by least squares; repeat.
pub fn mmv_omp(problem: &MmvProblem, cfg: &OmpConfig) -> Result<SparseSolution, SolverError> {
    let dict = &problem.dictionary;
    let y = &problem.observations;
    let (rows, m_obs) = y.shape();
    let bs = dict.block_size;
    let nb = dict.block_count();

    let y_energy = fro_norm_sqr(y);
    if y_energy == 0.0 || nb == 0 {
        return Ok(SparseSolution::empty());
    }
    let noise_stop = if cfg.stop_at_noise && problem.noise_floor > 0.0 {
        problem.noise_floor * (rows * m_obs) as f64
    } else {
        0.0
    };
    let stop_energy = (cfg.residual_rel * y_energy).max(noise_stop);
    if y_energy <= stop_energy {
        return Ok(SparseSolution::empty());
    }

    let block_norm: Vec<f64> = (0..nb)
        .map(|b| {
            let c = dict.block_columns(b);
            fro_norm_sqr(&dict.matrix.columns(c.start, bs).into_owned()).sqrt()
        })
        .collect();

    let max_blocks = cfg.max_blocks.min(rows / bs).min(nb);
    let mut support: Vec<usize> = Vec::new();
    let mut columns: Vec<usize> = Vec::new();
    let mut coeffs = CMat::zeros(0, m_obs);
    let mut residual = y.clone();
    let mut res_energy = y_energy;
    let mut selected = vec![false; nb];

    while support.len() < max_blocks && res_energy > stop_energy {
        let corr = dict.matrix.adjoint() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for b in 0..nb {
            if selected[b] || block_norm[b] == 0.0 {
                continue;
            }
            let e: f64 = corr.rows(b * bs, bs).iter().map(|z| z.norm_sqr()).sum();
            let score = e.sqrt() / block_norm[b];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((b, score));
            }
        }
        let Some((b, _)) = best else { break };

        let mut trial_cols = columns.clone();
        trial_cols.extend(dict.block_columns(b));
        let a = select_columns(&dict.matrix, &trial_cols);
        let x = match least_squares(&a, y) {
            Ok(x) => x,
            Err(e) if support.is_empty() => return Err(e),
            // the new block is linearly dependent on the support; stop here
            Err(_) => break,
        };
        let new_residual = y - &a * &x;
        let new_energy = fro_norm_sqr(&new_residual);
        if support.is_empty() && new_energy >= y_energy * (1.0 - 1e-12) {
            return Err(SolverError::Stagnated);
        }
        selected[b] = true;
        support.push(b);
        columns = trial_cols;
        coeffs = x;
        residual = new_residual;
        res_energy = new_energy;
    }

    let blocks = support
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, coeffs.rows(i * bs, bs).into_owned()))
        .collect();
    Ok(SparseSolution::from_blocks(blocks).prune_relative(cfg.prune_rel))
}
