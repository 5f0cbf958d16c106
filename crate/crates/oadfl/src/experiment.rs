//! Drivers behind the subcommands. Each writes its artifacts under an
//! output directory and returns what it wrote, so tests can inspect runs
//! without re-reading files.
//!
//! Layout of a `compare` or `sweep` cell:
//!
//! ```text
//! <cell>/channels.bin          shared channel dump, replayed by every scheme
//! <cell>/<scheme>/metrics.csv
//! <cell>/<scheme>/manifest.json
//! <cell>/<scheme>/{mixing.csv, beams.csv, graph.txt}
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use oadfl_core::convergence::{bound_rhs, ErrorStats};
use oadfl_core::linalg::CMatrix;
use oadfl_core::rng::{derive, SeedStreams, Stream};
use oadfl_core::run::{run_training, ChannelSource, RoundObserver, RunRecord, SampledChannels, SchemeKind};
use oadfl_core::topology::TopologyGraph;
use oadfl_core::validation::{frames_for_draws, monte_carlo_errors, ErrorInstance, MonteCarloErrors};

use crate::config::{Config, SweepAxis, TopologyKind};
use crate::error::{io_err, CliError, Result};
use crate::formats::{self, ChannelReplay, FrameDumpWriter};
use crate::records::{self, FileRef, Manifest, RunSummary};
use crate::tasks::build_task;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHANNELS_FILE: &str = "channels.bin";

/// Optional channel and frame dumps for a single run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Draw every round's channels into this file first, then replay them.
    pub dump_channels: Option<PathBuf>,
    pub replay_channels: Option<PathBuf>,
    pub dump_frames: Option<PathBuf>,
}

/// A finished run and where its files went.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub manifest: Manifest,
}

impl RunArtifacts {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }

    pub fn summary(&self) -> Option<RunSummary> {
        RunSummary::from_metrics(&self.record.metrics)
    }
}

struct FrameObserver {
    writer: Option<FrameDumpWriter>,
    error: Option<CliError>,
}

impl RoundObserver for FrameObserver {
    fn on_frames(&mut self, _round: usize, frames: &[CMatrix]) {
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = w.write_round(frames) {
                self.error = Some(e);
                self.writer = None;
            }
        }
    }
}

fn topology_label(cfg: &Config) -> String {
    match (cfg.topology.kind, &cfg.topology.path) {
        (TopologyKind::File, Some(p)) => p.display().to_string(),
        (TopologyKind::Random, _) => format!("random(sparsity={},seed={})", cfg.topology.sparsity, cfg.run.seed),
        (kind, _) => format!("{kind:?}").to_lowercase(),
    }
}

fn file_ref(path: &Path) -> Result<FileRef> {
    Ok(FileRef {
        path: path.to_path_buf(),
        sha256: formats::sha256_file(path)?,
    })
}

/// Runs `scheme_id` once with the configuration's seed and writes the
/// metrics CSV, manifest, final mixing matrix, beams and graph to `out_dir`.
/// Flagged rounds are reported in the manifest, not as an error.
pub fn run_one(cfg: &Config, scheme_id: &str, out_dir: &Path, opts: &RunOptions) -> Result<RunArtifacts> {
    let rc = cfg.run_config()?;
    let scheme = cfg.scheme_spec(scheme_id)?;
    let task = build_task(&cfg.task, rc.devices, rc.seed)?;
    let graph = rc.build_graph()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let noise_variance = rc.channel_config()?.noise_variance();

    let replay_path = match (&opts.replay_channels, &opts.dump_channels) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("--dump-channels and --replay-channels are exclusive".into()));
        }
        (Some(p), None) => Some(p.clone()),
        (None, Some(p)) => {
            let mut fresh = SampledChannels::new(&rc)?;
            formats::dump_channels(p, &mut fresh, &graph, rc.n_tx, rc.n_rx, rc.rounds)?;
            Some(p.clone())
        }
        (None, None) => None,
    };
    let mut source: Box<dyn ChannelSource> = match &replay_path {
        Some(p) => {
            let replay = ChannelReplay::open(p, &graph, noise_variance)?;
            if replay.antennas() != (rc.n_tx, rc.n_rx) || replay.rounds() < rc.rounds {
                return Err(CliError::Usage(format!(
                    "{}: dump holds {} rounds for {:?} antennas, run needs {} rounds for {:?}",
                    p.display(),
                    replay.rounds(),
                    replay.antennas(),
                    rc.rounds,
                    (rc.n_tx, rc.n_rx)
                )));
            }
            Box::new(replay)
        }
        None => Box::new(SampledChannels::new(&rc)?),
    };
    let mut observer = FrameObserver {
        writer: match &opts.dump_frames {
            Some(p) => Some(FrameDumpWriter::create(
                p,
                rc.devices,
                rc.n_tx,
                oadfl_core::convergence::symbols_for_dim(task.dim()),
            )?),
            None => None,
        },
        error: None,
    };

    let start = Instant::now();
    let record = run_training(&rc, &scheme, task.as_ref(), source.as_mut(), &mut observer)?;
    let wall = start.elapsed().as_secs_f64();
    if let Some(e) = observer.error {
        return Err(e);
    }
    if let Some(w) = observer.writer {
        w.finish()?;
    }

    records::write_metrics_csv(&out_dir.join(METRICS_FILE), &record.metrics)?;
    formats::write_mixing_csv(&out_dir.join("mixing.csv"), &record.mixing, &topology_label(cfg))?;
    formats::write_edge_list(&out_dir.join("graph.txt"), &record.graph)?;
    let channel_dump = replay_path.as_deref().map(file_ref).transpose()?;
    if let Some(beams) = &record.beams {
        let source = replay_path.as_ref().map_or("sampled".to_string(), |p| p.display().to_string());
        formats::write_beams_csv(&out_dir.join("beams.csv"), beams, &source)?;
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scheme: scheme.kind.id().to_string(),
        seed: rc.seed,
        rounds: rc.rounds,
        optimize_every: rc.optimize_every,
        config: cfg.to_toml(),
        initial_delta: record.initial_delta,
        final_delta: oadfl_core::mixing::delta(&record.mixing)?,
        flagged_rounds: record.flagged_rounds(),
        channel_dump,
        frame_dump: opts.dump_frames.as_deref().map(file_ref).transpose()?,
        wall_clock_seconds: wall,
    };
    records::write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        record,
        manifest,
    })
}

/// Directory names for a scheme list; repeated ids get a `#k` suffix.
pub fn scheme_labels(schemes: &[SchemeKind]) -> Vec<String> {
    schemes
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let dup = schemes.iter().filter(|o| *o == s).count() > 1;
            let nth = schemes[..k].iter().filter(|o| *o == s).count();
            if dup {
                format!("{}#{}", s.id(), nth)
            } else {
                s.id().to_string()
            }
        })
        .collect()
}

/// Every scheme on the same seed; channels are dumped once into the cell
/// and replayed by each scheme.
pub fn run_cell(cfg: &Config, schemes: &[SchemeKind], cell_dir: &Path) -> Result<Vec<RunArtifacts>> {
    std::fs::create_dir_all(cell_dir).map_err(io_err(cell_dir))?;
    let rc = cfg.run_config()?;
    let replay = if schemes.iter().any(|s| *s != SchemeKind::ErrorFree) {
        let path = cell_dir.join(CHANNELS_FILE);
        let graph = rc.build_graph()?;
        formats::dump_channels(&path, &mut SampledChannels::new(&rc)?, &graph, rc.n_tx, rc.n_rx, rc.rounds)?;
        Some(path)
    } else {
        None
    };
    let opts = RunOptions {
        replay_channels: replay,
        ..RunOptions::default()
    };
    schemes
        .iter()
        .zip(scheme_labels(schemes))
        .map(|(s, label)| {
            log::info!("cell {}: scheme {label}", cell_dir.display());
            run_one(cfg, s.id(), &cell_dir.join(&label), &opts)
        })
        .collect()
}

fn with_seed(cfg: &Config, seed: u64) -> Config {
    let mut c = cfg.clone();
    c.run.seed = seed;
    c
}

fn seed_list(cfg: &Config) -> Vec<u64> {
    (0..cfg.run.seeds.max(1)).map(|k| cfg.run.seed + k).collect()
}

/// Result of `compare`: `runs[s][k]` is scheme `k` on seed `seeds[s]`.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    pub runs: Vec<Vec<RunArtifacts>>,
}

impl CompareReport {
    pub fn flagged(&self) -> Vec<usize> {
        flagged_of(self.runs.iter().flatten())
    }
}

fn flagged_of<'a>(runs: impl Iterator<Item = &'a RunArtifacts>) -> Vec<usize> {
    let mut all: Vec<usize> = runs.flat_map(|r| r.manifest.flagged_rounds.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// Runs each scheme on every seed with shared channels and writes
/// `compare.csv` (per-round metrics side by side) and
/// `compare_summary.csv` (final-round mean ± stderr per scheme).
pub fn compare(cfg: &Config, schemes: &[SchemeKind], out_dir: &Path) -> Result<CompareReport> {
    if schemes.len() < 2 {
        return Err(CliError::Usage("compare needs at least two schemes".into()));
    }
    let labels = scheme_labels(schemes);
    let seeds = seed_list(cfg);
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        runs.push(run_cell(&with_seed(cfg, seed), schemes, &out_dir.join(format!("seed_{seed}")))?);
    }

    let mut wide = csv::Writer::from_writer(Vec::new());
    let metric_cols = &records::METRIC_COLUMNS[1..];
    let mut header = vec!["seed".to_string(), "round".to_string()];
    for l in &labels {
        header.extend(metric_cols.iter().map(|c| format!("{l}.{c}")));
    }
    wide.write_record(&header)?;
    for (seed, cell) in seeds.iter().zip(&runs) {
        let rounds = cell.iter().map(|r| r.record.metrics.len()).min().unwrap_or(0);
        for t in 0..rounds {
            let mut row = vec![seed.to_string(), t.to_string()];
            for run in cell {
                let m = records::MetricsRow::from(&run.record.metrics[t]);
                row.extend(metric_cols.iter().map(|c| m.value(c).expect("known column").to_string()));
            }
            wide.write_record(&row)?;
        }
    }
    records::write_atomic(&out_dir.join("compare.csv"), &wide.into_inner().expect("in-memory writer"))?;

    let mut summary = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scheme".to_string(), "seeds".to_string()];
    header.extend(records::summary_header());
    summary.write_record(&header)?;
    for (k, label) in labels.iter().enumerate() {
        let sums: Vec<RunSummary> = runs.iter().filter_map(|cell| cell[k].summary()).collect();
        let mut row = vec![label.clone(), sums.len().to_string()];
        row.extend(records::aggregate_cells(&sums));
        summary.write_record(&row)?;
    }
    records::write_atomic(
        &out_dir.join("compare_summary.csv"),
        &summary.into_inner().expect("in-memory writer"),
    )?;
    Ok(CompareReport { labels, seeds, runs })
}

/// Configuration with the sweep axis set to `value`.
pub fn apply_axis(cfg: &Config, axis: SweepAxis, value: f64) -> Result<Config> {
    let mut c = cfg.clone();
    let count = || {
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(CliError::Usage(format!("{} must be a positive integer, got {value}", axis.name())))
        }
    };
    match axis {
        SweepAxis::SnrDb => c.run.snr_db = value,
        SweepAxis::Antennas => {
            c.run.n_tx = count()?;
            c.run.n_rx = c.run.n_tx;
        }
        SweepAxis::Devices => c.run.devices = count()?,
        SweepAxis::Sparsity => {
            if c.topology.kind != TopologyKind::Random {
                return Err(CliError::Usage("the sparsity axis needs topology kind `random`".into()));
            }
            c.topology.sparsity = value;
        }
    }
    Ok(c)
}

/// One sweep cell: an axis value and a seed.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub runs: Vec<RunArtifacts>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub labels: Vec<String>,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn flagged(&self) -> Vec<usize> {
        flagged_of(self.cells.iter().flat_map(|c| &c.runs))
    }
}

pub fn cell_dir(out_dir: &Path, axis: SweepAxis, value: f64, seed: u64) -> PathBuf {
    out_dir.join(format!("{}_{value}", axis.name())).join(format!("seed_{seed}"))
}

/// One run per (value, seed, scheme), then `sweep.csv` with mean ± stderr
/// of the final-round summary per (value, scheme).
pub fn sweep(cfg: &Config, schemes: &[SchemeKind], out_dir: &Path) -> Result<SweepReport> {
    let axis = cfg.sweep.axis;
    if cfg.sweep.values.is_empty() || schemes.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value and one scheme".into()));
    }
    let labels = scheme_labels(schemes);
    let mut cells = Vec::new();
    for &value in &cfg.sweep.values {
        let at_value = apply_axis(cfg, axis, value)?;
        for seed in seed_list(&at_value) {
            let dir = cell_dir(out_dir, axis, value, seed);
            let runs = run_cell(&with_seed(&at_value, seed), schemes, &dir)?;
            cells.push(SweepCell { value, seed, runs });
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["axis".to_string(), "value".to_string(), "scheme".to_string(), "seeds".to_string()];
    header.extend(records::summary_header());
    w.write_record(&header)?;
    for &value in &cfg.sweep.values {
        for (k, label) in labels.iter().enumerate() {
            let sums: Vec<RunSummary> = cells
                .iter()
                .filter(|c| c.value == value)
                .filter_map(|c| c.runs[k].summary())
                .collect();
            let mut row = vec![axis.name().to_string(), value.to_string(), label.clone(), sums.len().to_string()];
            row.extend(records::aggregate_cells(&sums));
            w.write_record(&row)?;
        }
    }
    records::write_atomic(&out_dir.join("sweep.csv"), &w.into_inner().expect("in-memory writer"))?;
    Ok(SweepReport { axis, labels, cells })
}

/// Initial global loss of the configured task, the `f(x⁰)` of the bound.
pub fn initial_loss(cfg: &Config) -> Result<f64> {
    let rc = cfg.run_config()?;
    let task = build_task(&cfg.task, rc.devices, rc.seed)?;
    let mut rng = SeedStreams::new(rc.seed).rng(Stream::Init, 0);
    Ok(task.global_loss(&task.initial_model(&mut rng)))
}

/// Convergence-bound right-hand side with constant per-round error
/// expectations.
pub fn eval_bound(cfg: &Config, delta: f64, f0: Option<f64>, errors: ErrorStats) -> Result<f64> {
    let rc = cfg.run_config()?;
    let f0 = match f0 {
        Some(v) => v,
        None => initial_loss(cfg)?,
    };
    Ok(bound_rhs(&rc.params(), delta, &[errors], f0)?)
}

/// One Monte Carlo check of the closed-form error expectations.
#[derive(Debug, Clone, Copy)]
pub struct SelftestCase {
    pub devices: usize,
    pub antennas: usize,
    pub snr_db: f64,
    pub closed: ErrorStats,
    pub monte_carlo: MonteCarloErrors,
    pub pass: bool,
}

/// Random instances cycling through 3–6 devices, 2–3 antennas and
/// 0/10/20 dB, each checked with `draws` symbol draws per link at `k`
/// standard errors.
pub fn selftest(instances: usize, dim: usize, draws: usize, k: f64, seed: u64) -> Result<Vec<SelftestCase>> {
    let frames = frames_for_draws(draws, dim).max(2);
    (0..instances)
        .map(|n| {
            let devices = 3 + n % 4;
            let antennas = 2 + (n / 4) % 2;
            let snr_db = [0.0, 10.0, 20.0][n % 3];
            let inst = ErrorInstance::random(devices, antennas, snr_db, dim, derive(seed, 2 * n as u64))?;
            let closed = inst.closed_form()?;
            let mc = monte_carlo_errors(&inst, frames, derive(seed, 2 * n as u64 + 1))?;
            Ok(SelftestCase {
                devices,
                antennas,
                snr_db,
                closed,
                monte_carlo: mc,
                pass: mc.agrees_with(&closed, k),
            })
        })
        .collect()
}

pub fn gen_topology(cfg: &Config) -> Result<TopologyGraph> {
    Ok(cfg.run_config()?.build_graph()?)
}
