//! One-to-one association of estimated paths with ground truth.

use std::f64::consts::PI;

use crate::direct::PathEstimate;
use crate::linalg::wrap_phase;
use crate::scene::PathParams;

use super::config::MatchGates;

/// Errors of one matched pair, estimate minus truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathErrors {
    pub delay_s: f64,
    /// Wrapped difference of `π·sin(AoA)`.
    pub aoa_phase: f64,
    pub aod_phase: Option<f64>,
    pub doppler_hz: Option<f64>,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// For each true path, the index of its estimate.
    pub truth_match: Vec<Option<usize>>,
    /// For each estimate, the index of its true path.
    pub est_match: Vec<Option<usize>>,
    /// `(truth, estimate, errors)` in matching order.
    pub pairs: Vec<(usize, usize, PathErrors)>,
}

impl MatchReport {
    pub fn matched(&self) -> usize {
        self.pairs.len()
    }

    pub fn misses(&self) -> usize {
        self.truth_match.iter().filter(|m| m.is_none()).count()
    }

    pub fn false_alarms(&self) -> usize {
        self.est_match.iter().filter(|m| m.is_none()).count()
    }

    pub fn errors_for_truth(&self, truth: usize) -> Option<&PathErrors> {
        self.pairs.iter().find(|(t, _, _)| *t == truth).map(|(_, _, e)| e)
    }
}

fn sin_phase_diff(a: f64, b: f64) -> f64 {
    wrap_phase(PI * (a.sin() - b.sin()))
}

/// Greedy nearest-neighbour matching in `(delay, sin AoA)` space, each axis
/// scaled by its gate. Pairs outside either gate never match.
pub fn match_paths(truth: &[PathParams], est: &[PathEstimate], gates: &MatchGates, delay_resolution_s: f64) -> MatchReport {
    let delay_gate = gates.delay_bins * delay_resolution_s;
    let phase_gate = PI * gates.sin_aoa;
    let mut candidates = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (ei, e) in est.iter().enumerate() {
            if gates.require_source && e.source.is_some_and(|s| s != t.source) {
                continue;
            }
            let dd = (e.delay_s - t.delay_s).abs();
            let dp = sin_phase_diff(e.aoa_rad, t.aoa_rad).abs();
            // a hair of slack so on-gate pairs survive rounding
            if dd > delay_gate * (1.0 + 1e-9) || dp > phase_gate * (1.0 + 1e-9) {
                continue;
            }
            let dist = (dd / delay_gate).powi(2) + (dp / phase_gate).powi(2);
            candidates.push((dist, ti, ei));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut truth_match = vec![None; truth.len()];
    let mut est_match = vec![None; est.len()];
    let mut pairs = Vec::new();
    for (_, ti, ei) in candidates {
        if truth_match[ti].is_some() || est_match[ei].is_some() {
            continue;
        }
        truth_match[ti] = Some(ei);
        est_match[ei] = Some(ti);
        let (t, e) = (&truth[ti], &est[ei]);
        pairs.push((
            ti,
            ei,
            PathErrors {
                delay_s: e.delay_s - t.delay_s,
                aoa_phase: sin_phase_diff(e.aoa_rad, t.aoa_rad),
                aod_phase: e.aod_rad.map(|a| sin_phase_diff(a, t.aod_rad)),
                doppler_hz: e.doppler_hz.map(|f| f - t.doppler_hz),
                power_db: 10.0 * (e.power / t.power()).log10(),
            },
        ));
    }
    MatchReport {
        truth_match,
        est_match,
        pairs,
    }
}
