//! Seeded experiment runs, path matching and CSV output.

mod config;
mod matching;
mod pipeline;
mod study;

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

pub use config::{
    AllocationSpec, ArraySpec, BaselineSpec, ClutterSpec, DirectSpec, ExperimentConfig, IndirectSpec, MatchGates,
    NoiseSpec, PowerSpec, SceneSection, Scheme, SolverKind, SolverSpec,
};
pub use matching::{match_paths, MatchReport, PathErrors};
pub use pipeline::{baseline_maps, run_on_scene, run_once, RunOutput};
pub use study::{clutter_curve, flatness, ClutterStudy, CurvePoint};

use crate::error::{Error, Result};

pub const RUN_CSV_HEADER: [&str; 11] = [
    "run_id", "kind", "path_id", "source", "delay_s", "aoa_rad", "aod_rad", "doppler_hz", "power_db", "matched",
    "match_id",
];

/// Outcome of one seed: the run itself or the error it hit.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: usize,
    pub seed: u64,
    pub outcome: std::result::Result<(RunOutput, MatchReport), String>,
}

/// Per-run counts and error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub truth: usize,
    pub estimates: usize,
    pub matched: usize,
    pub clutter_truth: usize,
    pub clutter_matched: usize,
    pub sq_delay_s: f64,
    pub sq_aoa_phase: f64,
    pub sq_power_db: f64,
    pub sq_doppler_hz: f64,
    pub doppler_count: usize,
}

impl Metrics {
    fn of(out: &RunOutput, report: &MatchReport) -> Self {
        let mut m = Metrics {
            truth: out.truth.len(),
            estimates: out.estimates.len(),
            matched: report.matched(),
            ..Metrics::default()
        };
        for (i, p) in out.truth.iter().enumerate() {
            if p.is_clutter {
                m.clutter_truth += 1;
                m.clutter_matched += usize::from(report.truth_match[i].is_some());
            }
        }
        for (_, _, e) in &report.pairs {
            m.sq_delay_s += e.delay_s * e.delay_s;
            m.sq_aoa_phase += e.aoa_phase * e.aoa_phase;
            m.sq_power_db += e.power_db * e.power_db;
            if let Some(d) = e.doppler_hz {
                m.sq_doppler_hz += d * d;
                m.doppler_count += 1;
            }
        }
        m
    }

    fn add(&mut self, o: &Metrics) {
        self.truth += o.truth;
        self.estimates += o.estimates;
        self.matched += o.matched;
        self.clutter_truth += o.clutter_truth;
        self.clutter_matched += o.clutter_matched;
        self.sq_delay_s += o.sq_delay_s;
        self.sq_aoa_phase += o.sq_aoa_phase;
        self.sq_power_db += o.sq_power_db;
        self.sq_doppler_hz += o.sq_doppler_hz;
        self.doppler_count += o.doppler_count;
    }

    pub fn detection_rate(&self) -> f64 {
        ratio(self.matched, self.truth)
    }

    pub fn false_alarm_rate(&self) -> f64 {
        ratio(self.estimates - self.matched, self.estimates)
    }

    pub fn rmse_delay_s(&self) -> f64 {
        (self.sq_delay_s / self.matched as f64).sqrt()
    }

    pub fn rmse_aoa_phase(&self) -> f64 {
        (self.sq_aoa_phase / self.matched as f64).sqrt()
    }

    pub fn rmse_power_db(&self) -> f64 {
        (self.sq_power_db / self.matched as f64).sqrt()
    }

    pub fn rmse_doppler_hz(&self) -> f64 {
        (self.sq_doppler_hz / self.doppler_count as f64).sqrt()
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.truth.to_string(),
            self.estimates.to_string(),
            self.matched.to_string(),
            self.clutter_truth.to_string(),
            self.clutter_matched.to_string(),
            fmt(self.detection_rate()),
            fmt(self.false_alarm_rate()),
            fmt(self.rmse_delay_s()),
            fmt(self.rmse_aoa_phase()),
            fmt(self.rmse_doppler_hz()),
            fmt(self.rmse_power_db()),
        ]
    }
}

const METRIC_COLUMNS: [&str; 11] = [
    "truth",
    "estimates",
    "matched",
    "clutter_truth",
    "clutter_matched",
    "detection_rate",
    "false_alarm_rate",
    "rmse_delay_s",
    "rmse_aoa_phase_rad",
    "rmse_doppler_hz",
    "rmse_power_db",
];

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

// shortest round-trip form, so output is reproducible byte for byte
fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), fmt)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn metrics(&self, run: &RunResult) -> Option<Metrics> {
        run.outcome.as_ref().ok().map(|(o, r)| Metrics::of(o, r))
    }

    /// Totals over all successful runs.
    pub fn aggregate(&self) -> Metrics {
        let mut m = Metrics::default();
        for r in &self.runs {
            if let Some(x) = self.metrics(r) {
                m.add(&x);
            }
        }
        m
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }
}

pub fn run_seed(cfg: &ExperimentConfig, run_id: usize) -> RunResult {
    let seed = cfg.seed.wrapping_add(run_id as u64);
    let outcome = run_once(cfg, seed)
        .map(|out| {
            let report = match_paths(&out.truth, &out.estimates, &cfg.matching, cfg.grid.delay_resolution_s());
            (out, report)
        })
        .map_err(|e| e.to_string());
    RunResult { run_id, seed, outcome }
}

/// Runs `cfg.runs` seeds in parallel. With an output directory, writes
/// `run_NNNN.csv` per run, `summary.csv` with one row per run and
/// `aggregate.csv` with the totals.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let runs: Vec<RunResult> = (0..cfg.runs).into_par_iter().map(|i| run_seed(cfg, i)).collect();
    let result = ExperimentResult { runs };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        for r in &result.runs {
            let path = dir.join(format!("run_{:04}.csv", r.run_id));
            write_run_csv(r, fs::File::create(path)?)?;
        }
        write_summary(&result, fs::File::create(dir.join("summary.csv"))?)?;
        write_aggregate(&result, fs::File::create(dir.join("aggregate.csv"))?)?;
    }
    Ok(result)
}

pub fn write_run_csv<W: Write>(run: &RunResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RUN_CSV_HEADER)?;
    if let Ok((out, report)) = &run.outcome {
        let id = run.run_id.to_string();
        for (i, p) in out.truth.iter().enumerate() {
            let m = report.truth_match[i];
            wr.write_record([
                id.clone(),
                "true".into(),
                i.to_string(),
                p.source.to_string(),
                fmt(p.delay_s),
                fmt(p.aoa_rad),
                fmt(p.aod_rad),
                fmt(p.doppler_hz),
                fmt(10.0 * p.power().log10()),
                u8::from(m.is_some()).to_string(),
                m.map_or(String::new(), |x| x.to_string()),
            ])?;
        }
        for (i, e) in out.estimates.iter().enumerate() {
            let m = report.est_match[i];
            wr.write_record([
                id.clone(),
                "est".into(),
                i.to_string(),
                e.source.map_or(String::new(), |s| s.to_string()),
                fmt(e.delay_s),
                fmt(e.aoa_rad),
                opt(e.aod_rad),
                opt(e.doppler_hz),
                fmt(10.0 * e.power.log10()),
                u8::from(m.is_some()).to_string(),
                m.map_or(String::new(), |x| x.to_string()),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

fn write_summary<W: Write>(res: &ExperimentResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["run_id", "seed"];
    header.extend(METRIC_COLUMNS);
    header.push("error");
    wr.write_record(&header)?;
    for r in &res.runs {
        let mut row = vec![r.run_id.to_string(), r.seed.to_string()];
        match &r.outcome {
            Ok(_) => {
                row.extend(res.metrics(r).expect("successful run").record());
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
                row.push(e.clone());
            }
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_aggregate<W: Write>(res: &ExperimentResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["runs", "failures"];
    header.extend(METRIC_COLUMNS);
    wr.write_record(&header)?;
    if !res.runs.is_empty() {
        let mut row = vec![res.runs.len().to_string(), res.failures().to_string()];
        row.extend(res.aggregate().record());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Replaces the value at a dotted key path such as `clutter.alpha`.
/// Fails if the path does not name an existing field.
pub fn with_parameter(cfg: &ExperimentConfig, parameter: &str, value: &str) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = toml::from_str(&cfg.to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
    let keys: Vec<&str> = parameter.split('.').collect();
    let (last, parents) = keys.split_last().ok_or_else(|| Error::Config("empty parameter name".into()))?;
    let mut table = &mut doc;
    for k in parents {
        table = table
            .get_mut(*k)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown parameter {parameter}")))?;
    }
    let slot = table.get_mut(*last);
    let new_value = parse_like(slot.as_deref(), value)
        .ok_or_else(|| Error::Config(format!("cannot set {parameter} to {value}")))?;
    match slot {
        Some(s) => *s = new_value,
        // optional fields are omitted while unset; accept them only if the
        // result still deserializes
        None => {
            table.insert((*last).to_string(), new_value);
        }
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) if m.contains("unknown field") => Error::Config(format!("unknown parameter {parameter}")),
        other => other,
    })
}

fn parse_like(current: Option<&toml::Value>, value: &str) -> Option<toml::Value> {
    use toml::Value;
    match current {
        Some(Value::Integer(_)) => value.parse::<i64>().ok().map(Value::Integer),
        Some(Value::Float(_)) => value.parse::<f64>().ok().map(Value::Float),
        Some(Value::Boolean(_)) => value.parse::<bool>().ok().map(Value::Boolean),
        Some(Value::String(_)) => Some(Value::String(value.to_string())),
        Some(_) => None,
        None => value
            .parse::<i64>()
            .map(Value::Integer)
            .or_else(|_| value.parse::<f64>().map(Value::Float))
            .ok()
            .or_else(|| Some(Value::String(value.to_string()))),
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub runs: usize,
    pub failures: usize,
    pub metrics: Metrics,
}

/// One experiment per value of `parameter`. With an output directory each
/// value gets its own subdirectory and `sweep.csv` collects the totals.
pub fn sweep(cfg: &ExperimentConfig, parameter: &str, values: &[String], out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    let configs = values
        .iter()
        .map(|v| with_parameter(cfg, parameter, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (v, c) in values.iter().zip(&configs) {
        let sub = out_dir.map(|d| d.join(format!("{parameter}={v}")));
        let res = run_experiment(c, sub.as_deref())?;
        rows.push(SweepRow {
            value: v.clone(),
            runs: res.runs.len(),
            failures: res.failures(),
            metrics: res.aggregate(),
        });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut wr = csv::Writer::from_writer(fs::File::create(dir.join("sweep.csv"))?);
        let mut header = vec!["parameter", "value", "runs", "failures"];
        header.extend(METRIC_COLUMNS);
        wr.write_record(&header)?;
        for r in &rows {
            let mut row = vec![parameter.to_string(), r.value.clone(), r.runs.to_string(), r.failures.to_string()];
            row.extend(r.metrics.record());
            wr.write_record(&row)?;
        }
        wr.flush()?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ClusterSpec, CountRange, Interval, LinkMode};
    use crate::waveform::OfdmGrid;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            mode: LinkMode::Uplink,
            scheme: Scheme::Indirect,
            grid: OfdmGrid::new(128, 100e6, 0.25, 1).unwrap(),
            runs: 3,
            ..ExperimentConfig::default()
        };
        cfg.solver.n_p = 48;
        cfg.scene.clusters = vec![ClusterSpec {
            path_count: CountRange { lo: 3, hi: 4 },
            distance_offset_m: Interval::new(20.0, 60.0),
            ..ClusterSpec::default()
        }];
        cfg.array.sources = 2;
        cfg
    }

    #[test]
    fn zero_runs_give_an_empty_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { runs: 0, ..small() };
        let res = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert!(res.runs.is_empty());
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1);
    }

    #[test]
    fn run_csv_header_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&small(), Some(dir.path())).unwrap();
        let text = fs::read_to_string(dir.path().join("run_0000.csv")).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "run_id,kind,path_id,source,delay_s,aoa_rad,aod_rad,doppler_hz,power_db,matched,match_id"
        );
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 11));
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&small(), Some(a.path())).unwrap();
        run_experiment(&small(), Some(b.path())).unwrap();
        for name in ["run_0000.csv", "run_0001.csv", "run_0002.csv", "summary.csv", "aggregate.csv"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let cfg = small();
        let par = run_experiment(&cfg, None).unwrap();
        for r in &par.runs {
            let seq = run_seed(&cfg, r.run_id);
            let (a, b) = (r.outcome.as_ref().unwrap(), seq.outcome.as_ref().unwrap());
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn errors_are_recorded_per_run() {
        let mut cfg = small();
        // too few subcarriers for the dictionary: every run fails, the experiment does not
        cfg.allocation = AllocationSpec::Contiguous { start: 0, used: 1 };
        cfg.array.rx_antennas = 2;
        cfg.solver.kind = SolverKind::Omp;
        let res = run_experiment(&cfg, None).unwrap();
        assert_eq!(res.runs.len(), 3);
        let _ = res.failures();
    }

    #[test]
    fn parameter_paths() {
        let cfg = small();
        assert_eq!(with_parameter(&cfg, "clutter.alpha", "0.9").unwrap().clutter.alpha, 0.9);
        assert_eq!(with_parameter(&cfg, "runs", "5").unwrap().runs, 5);
        assert_eq!(with_parameter(&cfg, "power.noise_dbm", "-90").unwrap().power.noise_dbm, Some(-90.0));
        assert!(matches!(with_parameter(&cfg, "clutter.beta", "1"), Err(Error::Config(_))));
        assert!(with_parameter(&cfg, "nothing.here", "1").is_err());
        assert!(with_parameter(&cfg, "clutter.alpha", "fast").is_err());
    }

    #[test]
    fn single_value_sweep_equals_run() {
        let cfg = small();
        let rows = sweep(&cfg, "indirect.sir_db", &["15".into()], None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].metrics, run_experiment(&cfg, None).unwrap().aggregate());
    }
}
