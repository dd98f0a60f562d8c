//! Experiment configuration, read from TOML.
//!
//! Every section is optional; omitted fields take the defaults of the
//! simulated deployment (2.35 GHz carrier, 100 MHz, 512 subcarriers, four
//! links, four receive antennas, one transmit antenna).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ClusterSpec, LinkBudget, LinkMode, SceneSpec};
use crate::sparse::{NoiseModel, OmpConfig, SblConfig, Solver};
use crate::waveform::{dbm_to_watts, nr_type_b_allocation, thermal_noise_power, Allocation, OfdmGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Direct,
    Indirect,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: LinkMode,
    pub scheme: Scheme,
    /// Run `i` uses seed `seed + i`.
    pub seed: u64,
    pub runs: usize,
    pub output: Option<PathBuf>,
    pub grid: OfdmGrid,
    pub allocation: AllocationSpec,
    pub array: ArraySpec,
    pub scene: SceneSection,
    pub power: PowerSpec,
    pub solver: SolverSpec,
    pub direct: DirectSpec,
    pub indirect: IndirectSpec,
    pub clutter: ClutterSpec,
    pub baseline: BaselineSpec,
    pub matching: MatchGates,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: LinkMode::Downlink,
            scheme: Scheme::Direct,
            seed: 1,
            runs: 1,
            output: None,
            grid: OfdmGrid::standard(),
            allocation: AllocationSpec::default(),
            array: ArraySpec::default(),
            scene: SceneSection::default(),
            power: PowerSpec::default(),
            solver: SolverSpec::default(),
            direct: DirectSpec::default(),
            indirect: IndirectSpec::default(),
            clutter: ClutterSpec::default(),
            baseline: BaselineSpec::default(),
            matching: MatchGates::default(),
        }
    }
}

/// Subcarrier allocation. `auto` gives every link all subcarriers in
/// downlink and 128 random shared subcarriers in uplink.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllocationSpec {
    #[default]
    Auto,
    Full,
    RandomShared {
        used: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Contiguous {
        start: usize,
        used: usize,
    },
    NrTypeB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArraySpec {
    pub sources: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            sources: 4,
            rx_antennas: 4,
            tx_antennas: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub clusters: Vec<ClusterSpec>,
    /// Extra clusters of near-static clutter, drawn for every link.
    pub clutter_clusters: Vec<ClusterSpec>,
    pub carrier_hz: f64,
    pub static_period_s: f64,
    pub on_grid: bool,
    pub clutter_doppler_bound_hz: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            clusters: vec![ClusterSpec::default(); 2],
            clutter_clusters: Vec::new(),
            carrier_hz: 2.35e9,
            static_period_s: 1.7e-3,
            on_grid: true,
            clutter_doppler_bound_hz: 1.0,
        }
    }
}

/// Power settings; unset fields follow the link mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSpec {
    pub tx_power_dbm: Option<f64>,
    pub pathloss_exponent: Option<f64>,
    pub reference_loss_db: Option<f64>,
    /// Noise power per received sample; thermal noise over the band if unset.
    pub noise_dbm: Option<f64>,
    pub noise_figure_db: f64,
    pub noiseless: bool,
}

impl Default for PowerSpec {
    fn default() -> Self {
        Self {
            tx_power_dbm: None,
            pathloss_exponent: None,
            reference_loss_db: None,
            noise_dbm: None,
            noise_figure_db: 0.0,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// OMP for the direct scheme, SBL for the indirect one.
    #[default]
    Auto,
    Omp,
    Sbl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpec {
    #[default]
    Known,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub kind: SolverKind,
    /// Number of delay bins in the dictionary.
    pub n_p: usize,
    pub noise: NoiseSpec,
    pub max_iters: usize,
    pub prune_rel: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let sbl = SblConfig::default();
        Self {
            kind: SolverKind::Auto,
            n_p: 128,
            noise: NoiseSpec::Known,
            max_iters: sbl.max_iters,
            prune_rel: sbl.prune_rel,
        }
    }
}

impl SolverSpec {
    pub fn solver_for(&self, scheme: Scheme) -> Solver {
        let kind = match (self.kind, scheme) {
            (SolverKind::Auto, Scheme::Direct) => SolverKind::Omp,
            (SolverKind::Auto, _) => SolverKind::Sbl,
            (k, _) => k,
        };
        match kind {
            SolverKind::Omp | SolverKind::Auto => Solver::Omp(OmpConfig::default()),
            SolverKind::Sbl => Solver::Sbl(SblConfig {
                max_iters: self.max_iters,
                prune_rel: self.prune_rel,
                noise: match self.noise {
                    NoiseSpec::Known => NoiseModel::Known,
                    NoiseSpec::Learned => NoiseModel::Learned,
                },
                ..SblConfig::default()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectSpec {
    /// Consecutive OFDM blocks processed per run.
    pub blocks: usize,
    pub margin_db: f64,
    /// Solver leakage relative to the expected path power; unset disables
    /// that part of the threshold.
    pub sidelobe_db: Option<f64>,
    pub threshold: bool,
    pub oversample: usize,
}

impl Default for DirectSpec {
    fn default() -> Self {
        Self {
            blocks: 4,
            margin_db: 6.0,
            sidelobe_db: Some(-30.0),
            threshold: true,
            oversample: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndirectSpec {
    /// Channel-to-error power ratio; `inf` for exact channels.
    pub sir_db: f64,
    /// Block gap between the two channel estimates used for Doppler.
    pub doppler_gap: usize,
    pub threshold_db: f64,
}

impl Default for IndirectSpec {
    fn default() -> Self {
        Self {
            sir_db: 15.0,
            doppler_gap: 20,
            threshold_db: 25.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterSpec {
    /// Subtract a learned background before the indirect estimator.
    pub enabled: bool,
    pub alpha: f64,
    /// Rounded to a whole number of OFDM blocks.
    pub sample_interval_s: f64,
    pub updates: usize,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: 0.99,
            sample_interval_s: 2e-3,
            updates: 150,
        }
    }
}

impl ClutterSpec {
    pub fn interval_blocks(&self, grid: &OfdmGrid) -> usize {
        ((self.sample_interval_s / grid.block_period_s()).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    pub angle_fft_len: usize,
    pub floor_db: f64,
    pub window: crate::baseline::Window,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            angle_fft_len: crate::baseline::DEFAULT_ANGLE_FFT_LEN,
            floor_db: crate::baseline::DEFAULT_FLOOR_DB,
            window: crate::baseline::Window::Rect,
        }
    }
}

/// How close an estimate must be to a true path to count as a match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchGates {
    /// In delay bins.
    pub delay_bins: f64,
    /// On `sin(AoA)`, compared through the wrapped phase `π·sin`.
    pub sin_aoa: f64,
    /// Estimates with a source label only match paths of that source.
    pub require_source: bool,
}

impl Default for MatchGates {
    fn default() -> Self {
        Self {
            delay_bins: 0.5,
            sin_aoa: 0.05,
            require_source: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let a = &self.array;
        if a.sources == 0 || a.tx_antennas == 0 {
            return Err(Error::Config("need at least one source and one transmit antenna".into()));
        }
        if a.rx_antennas < 2 {
            return Err(Error::Config("angle estimation needs at least two receive antennas".into()));
        }
        if self.solver.n_p == 0 || self.solver.n_p > self.grid.fine_len() {
            return Err(Error::Config(format!(
                "solver.n_p = {} must lie in [1, {}]",
                self.solver.n_p,
                self.grid.fine_len()
            )));
        }
        if self.scheme == Scheme::Direct && self.direct.blocks == 0 {
            return Err(Error::Config("direct.blocks must be positive".into()));
        }
        if self.indirect.doppler_gap == 0 {
            return Err(Error::Config("indirect.doppler_gap must be positive".into()));
        }
        if self.indirect.sir_db.is_nan() || self.indirect.sir_db == f64::NEG_INFINITY {
            return Err(Error::Config("indirect.sir_db must be a number or inf".into()));
        }
        let c = &self.clutter;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return Err(Error::Config(format!("clutter.alpha = {} must lie in (0, 1)", c.alpha)));
        }
        if !(c.sample_interval_s > 0.0) {
            return Err(Error::Config("clutter.sample_interval_s must be positive".into()));
        }
        if c.enabled && c.updates == 0 {
            return Err(Error::Config("clutter.updates must be positive".into()));
        }
        if self.baseline.angle_fft_len < a.rx_antennas {
            return Err(Error::Config("baseline.angle_fft_len is shorter than the array".into()));
        }
        if !(self.baseline.floor_db > 0.0) {
            return Err(Error::Config("baseline.floor_db must be positive".into()));
        }
        if !(self.matching.delay_bins > 0.0 && self.matching.sin_aoa > 0.0) {
            return Err(Error::Config("matching gates must be positive".into()));
        }
        self.scene_spec()?.validate()?;
        self.allocation(self.seed)?;
        Ok(())
    }

    pub fn link_budget(&self) -> LinkBudget {
        let base = LinkBudget::for_mode(self.mode, self.scene.carrier_hz);
        LinkBudget {
            tx_power_dbm: self.power.tx_power_dbm.unwrap_or(base.tx_power_dbm),
            pathloss_exponent: self.power.pathloss_exponent.unwrap_or(base.pathloss_exponent),
            reference_loss_db: self.power.reference_loss_db.unwrap_or(base.reference_loss_db),
        }
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let mut clusters = self.scene.clusters.clone();
        clusters.extend(self.scene.clutter_clusters.iter().cloned().map(|mut c| {
            c.clutter = true;
            c
        }));
        let mut spec = SceneSpec::new(self.mode, self.array.sources, clusters);
        spec.carrier_hz = self.scene.carrier_hz;
        spec.static_period_s = self.scene.static_period_s;
        spec.link = self.link_budget();
        spec.clutter_doppler_bound_hz = self.scene.clutter_doppler_bound_hz;
        if self.scene.on_grid {
            spec = spec.on_grid(&self.grid, self.solver.n_p);
        }
        Ok(spec)
    }

    /// Allocation for a run; random patterns draw from `run_seed` unless
    /// the config pins their seed.
    pub fn allocation(&self, run_seed: u64) -> Result<Allocation> {
        let n = self.grid.n_subcarriers;
        let k = self.array.sources;
        match &self.allocation {
            AllocationSpec::Auto => match self.mode {
                LinkMode::Downlink => Ok(Allocation::full(n, k)),
                LinkMode::Uplink => Allocation::random_shared(n, 128.min(n), k, run_seed),
            },
            AllocationSpec::Full => Ok(Allocation::full(n, k)),
            AllocationSpec::RandomShared { used, seed } => Allocation::random_shared(n, *used, k, seed.unwrap_or(run_seed)),
            AllocationSpec::Contiguous { start, used } => {
                if start + used > n || *used == 0 {
                    return Err(Error::Config(format!("contiguous block [{start}, {}) outside the grid", start + used)));
                }
                Allocation::contiguous(n, *start, *used, k)
            }
            AllocationSpec::NrTypeB => Ok(nr_type_b_allocation(n)?.with_users(k)),
        }
    }

    /// Noise power per received sample, in watts.
    pub fn noise_power(&self) -> f64 {
        if self.power.noiseless {
            return 0.0;
        }
        let base = match self.power.noise_dbm {
            Some(dbm) => dbm_to_watts(dbm),
            None => thermal_noise_power(&self.grid),
        };
        base * 10f64.powf(self.power.noise_figure_db / 10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.array.sources, 4);
        assert_eq!(cfg.grid.n_subcarriers, 512);
        assert_eq!(cfg.indirect.doppler_gap, 20);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("colour = 3"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("[grid]\nn_subcarriers = 64\nwobble = 1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
mode = "uplink"
scheme = "indirect"
runs = 3

[allocation]
kind = "contiguous"
start = 10
used = 128

[indirect]
sir_db = inf

[solver]
kind = "omp"
n_p = 96
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.mode, LinkMode::Uplink);
        assert_eq!(cfg.allocation, AllocationSpec::Contiguous { start: 10, used: 128 });
        assert!(cfg.indirect.sir_db.is_infinite());
        assert_eq!(cfg.allocation(0).unwrap().user(0), (10..138).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig {
            runs: 7,
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[clutter]\nalpha = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("[solver]\nn_p = 0").is_err());
        assert!(ExperimentConfig::from_toml("[array]\nrx_antennas = 1").is_err());
        // clusters reaching past the dictionary
        assert!(ExperimentConfig::from_toml("[solver]\nn_p = 32").is_err());
    }

    #[test]
    fn auto_allocation_follows_mode() {
        let down = ExperimentConfig::default();
        assert_eq!(down.allocation(3).unwrap().union().len(), 512);
        let up = ExperimentConfig {
            mode: LinkMode::Uplink,
            ..ExperimentConfig::default()
        };
        let a = up.allocation(3).unwrap();
        assert_eq!(a.union().len(), 128);
        assert_eq!(a.user_count(), 4);
    }
}
