use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use percept_core::harness::{
    baseline_maps, clutter_curve, flatness, run_experiment, sweep, ClutterStudy, ExperimentConfig, Metrics,
    Scheme,
};
use percept_core::scene::sample_scene;
use percept_core::waveform::{gen_symbols, receive, Constellation};
use percept_core::UlaConfig;

#[derive(Parser)]
#[command(name = "percept", version, about = "Multipath sensing experiments over OFDMA signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config's `output`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scene and write it with one received block and symbol frame.
    Simulate(Common),
    /// Run the direct scheme on received blocks.
    Direct(Common),
    /// Run the indirect scheme on reconstructed channels.
    Indirect(Common),
    /// Clutter background convergence curve, or the full pipeline with removal.
    Clutter {
        #[command(flatten)]
        common: Common,
        /// Run the indirect pipeline with background subtraction instead.
        #[arg(long)]
        pipeline: bool,
        /// Simulated time covered by the curve, in seconds.
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
        /// Sampling interval in OFDM blocks; defaults to the config's.
        #[arg(long)]
        sample_blocks: Option<usize>,
        /// Blocks between redraws of the dynamic paths.
        #[arg(long, default_value_t = 270)]
        redraw_blocks: usize,
    },
    /// Run the 2D-DFT baseline and dump the first run's range-angle maps.
    Baseline(Common),
    /// One experiment per value of a dotted config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// e.g. `clutter.updates`
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Overrides the config's scheme.
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Direct,
    Indirect,
    Baseline,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Direct => Scheme::Direct,
            SchemeArg::Indirect => Scheme::Indirect,
            SchemeArg::Baseline => Scheme::Baseline,
        }
    }
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.runs {
        cfg.runs = r;
    }
    let out = c.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn report(m: &Metrics, runs: usize, failures: usize) {
    println!("runs {runs}, failed {failures}");
    println!("paths {} true, {} estimated, {} matched", m.truth, m.estimates, m.matched);
    println!("detection rate {:.4}, false-alarm rate {:.4}", m.detection_rate(), m.false_alarm_rate());
    println!(
        "rmse delay {:.4e} s, aoa phase {:.4e} rad, doppler {:.4e} Hz, power {:.3} dB",
        m.rmse_delay_s(),
        m.rmse_aoa_phase(),
        m.rmse_doppler_hz(),
        m.rmse_power_db()
    );
    if m.clutter_truth > 0 {
        println!("clutter paths surviving {} of {}", m.clutter_matched, m.clutter_truth);
    }
}

fn experiment(mut cfg: ExperimentConfig, scheme: Scheme, out: &Path) -> Result<()> {
    cfg.scheme = scheme;
    let res = run_experiment(&cfg, Some(out))?;
    for r in &res.runs {
        if let Err(e) = &r.outcome {
            eprintln!("run {} (seed {}) failed: {e}", r.run_id, r.seed);
        }
    }
    report(&res.aggregate(), res.runs.len(), res.failures());
    println!("wrote {}", out.display());
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let scene = sample_scene(&cfg.scene_spec()?, cfg.seed)?;
    scene.save(&out.join("scene.json"))?;
    let alloc = cfg.allocation(cfg.seed)?;
    let frame = gen_symbols(&alloc, cfg.array.sources, cfg.array.tx_antennas, Constellation::Qpsk, cfg.seed, 0)?;
    let rx = UlaConfig::new(cfg.array.rx_antennas)?;
    let tx = UlaConfig::new(cfg.array.tx_antennas)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let block = receive(&scene, &frame, &cfg.grid, rx, tx, cfg.noise_power(), &mut rng)?;

    let mut w = csv::Writer::from_path(out.join("received.csv"))?;
    w.write_record(["subcarrier", "antenna", "re", "im"])?;
    for (i, n) in block.subcarriers.iter().enumerate() {
        for m in 0..block.y.ncols() {
            let v = block.y[(i, m)];
            w.write_record([n.to_string(), m.to_string(), v.re.to_string(), v.im.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("symbols.csv"))?;
    w.write_record(["subcarrier", "column", "re", "im"])?;
    for (n, row) in frame.subcarriers.iter().zip(&frame.symbols) {
        for (c, v) in row.iter().enumerate() {
            w.write_record([n.to_string(), c.to_string(), v.re.to_string(), v.im.to_string()])?;
        }
    }
    w.flush()?;
    println!("{} paths over {} links", scene.path_count(), scene.links.len());
    println!("wrote {}", out.display());
    Ok(())
}

fn baseline(cfg: ExperimentConfig, out: &Path) -> Result<()> {
    experiment(cfg.clone(), Scheme::Baseline, out)?;
    let scene = sample_scene(&cfg.scene_spec()?, cfg.seed)?;
    for (k, map) in baseline_maps(&cfg, &scene, cfg.seed)?.iter().enumerate() {
        map.write_csv(fs::File::create(out.join(format!("map_user{k}.csv")))?)?;
    }
    Ok(())
}

fn clutter(cfg: &ExperimentConfig, out: &Path, duration: f64, sample_blocks: Option<usize>, redraw_blocks: usize) -> Result<()> {
    cfg.validate()?;
    let study = ClutterStudy {
        alpha: cfg.clutter.alpha,
        sample_blocks: sample_blocks.unwrap_or_else(|| cfg.clutter.interval_blocks(&cfg.grid)),
        redraw_blocks,
        duration_s: duration,
        clutter_doppler_bound_hz: cfg.scene.clutter_doppler_bound_hz,
        rx_antennas: cfg.array.rx_antennas,
        tx_antennas: cfg.array.tx_antennas,
        seed: cfg.seed,
        ..ClutterStudy::default()
    };
    let curve = clutter_curve(&study, &cfg.grid)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("clutter_curve.csv"))?;
    w.write_record(["updates", "time_s", "ratio_db"])?;
    for p in &curve {
        w.write_record([p.updates.to_string(), p.time_s.to_string(), p.ratio_db.to_string()])?;
    }
    w.flush()?;
    if let Some(last) = curve.last() {
        println!("{} updates, final ratio {:.2} dB", curve.len(), last.ratio_db);
    }
    match flatness(&curve) {
        Some(f) => println!("late/early slope {f:.4}"),
        None => println!("curve too short for a flatness figure"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            simulate(&cfg, &out)
        }
        Command::Direct(c) => {
            let (cfg, out) = load(&c)?;
            experiment(cfg, Scheme::Direct, &out)
        }
        Command::Indirect(c) => {
            let (cfg, out) = load(&c)?;
            experiment(cfg, Scheme::Indirect, &out)
        }
        Command::Baseline(c) => {
            let (cfg, out) = load(&c)?;
            baseline(cfg, &out)
        }
        Command::Clutter {
            common,
            pipeline,
            duration,
            sample_blocks,
            redraw_blocks,
        } => {
            let (mut cfg, out) = load(&common)?;
            if pipeline {
                cfg.clutter.enabled = true;
                experiment(cfg, Scheme::Indirect, &out)
            } else {
                clutter(&cfg, &out, duration, sample_blocks, redraw_blocks)
            }
        }
        Command::Sweep {
            common,
            param,
            values,
            scheme,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(s) = scheme {
                cfg.scheme = s.into();
            }
            if values.is_empty() {
                bail!("no sweep values given");
            }
            let rows = sweep(&cfg, &param, &values, Some(&out))?;
            for r in &rows {
                println!(
                    "{param}={}: detection {:.4}, false alarms {:.4}, failed {}",
                    r.value,
                    r.metrics.detection_rate(),
                    r.metrics.false_alarm_rate(),
                    r.failures
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
            Ok(())
        }
    }
}
