//! Experiment configuration: a TOML file with one table per concern,
//! `OADFL_<SECTION>_<KEY>` environment overrides, then command-line flags.
//!
//! ```toml
//! [run]
//! devices = 10
//! rounds = 100
//! snr_db = 5.0
//!
//! [topology]
//! kind = "random"
//! sparsity = 0.3
//!
//! [scheme]
//! id = "proposed"
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Unknown
//! sections or keys are rejected with their location.

use std::path::{Path, PathBuf};

use oadfl_core::convergence::ErrorWeightMode;
use oadfl_core::joint::JointConfig;
use oadfl_core::run::{MixingPolicy, RunConfig, SchemeKind, SchemeSpec, TopologySpec};
use oadfl_core::topology::NamedTopology;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};
use crate::formats;

pub const ENV_PREFIX: &str = "OADFL_";

const SECTIONS: [&str; 7] = ["run", "topology", "design", "scheme", "task", "sweep", "compare"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub devices: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub rounds: usize,
    pub snr_db: f64,
    pub p0: f64,
    pub lambda: f64,
    pub omega: f64,
    pub alpha_sq: f64,
    pub beta_sq: f64,
    pub f_star: f64,
    pub seed: u64,
    /// Number of consecutive seeds used by `sweep` and `compare`.
    pub seeds: u64,
    pub optimize_every: usize,
    pub momentum: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            devices: d.devices,
            n_tx: d.n_tx,
            n_rx: d.n_rx,
            rounds: d.rounds,
            snr_db: d.snr_db,
            p0: d.p0,
            lambda: d.lambda,
            omega: d.omega,
            alpha_sq: d.alpha_sq,
            beta_sq: d.beta_sq,
            f_star: d.f_star,
            seed: d.seed,
            seeds: 1,
            optimize_every: d.optimize_every,
            momentum: d.momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Random,
    Complete,
    Ring,
    Line,
    Star,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub sparsity: f64,
    /// Edge-list file, for `kind = "file"`.
    pub path: Option<PathBuf>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Random,
            sparsity: 0.3,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Bound,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub j_max: usize,
    pub i1_max: usize,
    pub i2_max: usize,
    pub mixing_iters: usize,
    pub mixing_tol: f64,
    pub tol: f64,
    pub mode: WeightMode,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = JointConfig::default();
        Self {
            j_max: d.j_max,
            i1_max: d.i1_max,
            i2_max: d.i2_max,
            mixing_iters: d.mixing_iters,
            mixing_tol: d.mixing_tol,
            tol: d.tol,
            mode: WeightMode::Bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingChoice {
    Default,
    Metropolis,
    Random,
    MinDelta,
    Target,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub id: String,
    pub mixing: MixingChoice,
    /// Spectral statistic aimed at by `mixing = "target"`.
    pub target_delta: f64,
    /// Mixing-matrix CSV, for `mixing = "file"`.
    pub mixing_path: Option<PathBuf>,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            id: SchemeKind::Proposed.id().to_string(),
            mixing: MixingChoice::Default,
            target_delta: 0.5,
            mixing_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Quadratic,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub dim: usize,
    pub samples: usize,
    pub heterogeneity: f64,
    pub batch: usize,
    pub groups: usize,
    pub noise_std: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub separation: f64,
    pub l2: f64,
    pub hidden: usize,
    /// IDX image and label files for `kind = "mlp"`.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        let q = oadfl_core::task::QuadraticSpec::default();
        let l = oadfl_core::task::LogisticSpec::default();
        Self {
            kind: TaskKind::Quadratic,
            dim: q.dim,
            samples: q.samples,
            heterogeneity: q.heterogeneity,
            batch: q.batch,
            groups: q.groups,
            noise_std: q.noise_std,
            curvature_min: q.curvature.0,
            curvature_max: q.curvature.1,
            separation: l.separation,
            l2: l.l2,
            hidden: 32,
            images: None,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    Antennas,
    Devices,
    Sparsity,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SnrDb => "snr_db",
            Self::Antennas => "antennas",
            Self::Devices => "devices",
            Self::Sparsity => "sparsity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::SnrDb,
            values: vec![20.0],
            schemes: vec![SchemeKind::Proposed.id().to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub schemes: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            schemes: SchemeKind::ALL.iter().map(|k| k.id().to_string()).collect(),
        }
    }
}

/// The merged configuration of one invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub topology: TopologySection,
    pub design: DesignSection,
    pub scheme: SchemeSection,
    pub task: TaskSection,
    pub sweep: SweepSection,
    pub compare: CompareSection,
}

/// One `section.key = value` assignment from the environment or the
/// command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(section: &str, key: &str, value: impl Into<toml::Value>) -> Self {
        Self {
            section: section.to_string(),
            key: key.to_string(),
            value: value.into(),
        }
    }

    /// Parses `section.key=value`, the value read as a TOML scalar.
    pub fn parse_assignment(text: &str) -> Result<Self> {
        let bad = || CliError::Config(format!("expected `section.key=value`, got `{text}`"));
        let (path, raw) = text.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        if !SECTIONS.contains(&section) {
            return Err(CliError::Config(format!("unknown section `{section}` in `{text}`")));
        }
        Ok(Self::new(section, key, parse_scalar(raw.trim())))
    }
}

/// Reads a scalar the way it would be written in the file; bare words are
/// taken as strings.
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Collects `OADFL_<SECTION>_<KEY>` variables, e.g. `OADFL_RUN_SNR_DB=5`.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Result<Vec<Override>> {
    let mut out = Vec::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let rest = rest.to_ascii_lowercase();
        let Some((section, key)) = rest.split_once('_') else {
            return Err(CliError::Config(format!("environment variable {name} names no key")));
        };
        if !SECTIONS.contains(&section) {
            return Err(CliError::Config(format!("environment variable {name}: unknown section `{section}`")));
        }
        out.push(Override {
            section: section.to_string(),
            key: key.to_string(),
            value: parse_scalar(&raw),
        });
    }
    out.sort_by(|a, b| (&a.section, &a.key).cmp(&(&b.section, &b.key)));
    Ok(out)
}

impl Config {
    /// Parses file text, then applies `overrides` in order.
    pub fn from_toml(text: &str, overrides: &[Override]) -> Result<Self> {
        // The file on its own first, so diagnostics carry line numbers.
        let parsed: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if overrides.is_empty() {
            return Ok(parsed);
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            let section = table
                .entry(o.section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(section) = section else {
                return Err(CliError::Config(format!("`{}` is not a table", o.section)));
            };
            section.insert(o.key.clone(), o.value.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("after overrides: {e}")))
    }

    /// Reads `path` (or starts from defaults) and applies the environment
    /// overrides followed by the explicit ones.
    pub fn load(path: Option<&Path>, env: &[Override], flags: &[Override]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(io_err(p))?,
            None => String::new(),
        };
        let all: Vec<Override> = env.iter().chain(flags).cloned().collect();
        Self::from_toml(&text, &all).map_err(|e| match (e, path) {
            (CliError::Config(msg), Some(p)) => CliError::Config(format!("{}: {msg}", p.display())),
            (e, _) => e,
        })
    }

    /// Canonical text form, as stored next to results.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let r = &self.run;
        let topology = match self.topology.kind {
            TopologyKind::Random => TopologySpec::Random {
                sparsity: self.topology.sparsity,
            },
            TopologyKind::Complete => TopologySpec::Named(NamedTopology::Complete),
            TopologyKind::Ring => TopologySpec::Named(NamedTopology::Ring),
            TopologyKind::Line => TopologySpec::Named(NamedTopology::Line),
            TopologyKind::Star => TopologySpec::Named(NamedTopology::Star),
            TopologyKind::File => {
                let path = self
                    .topology
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::Config("topology kind `file` needs `path`".into()))?;
                TopologySpec::Graph(formats::read_edge_list(path)?)
            }
        };
        let d = &self.design;
        let cfg = RunConfig {
            devices: r.devices,
            n_tx: r.n_tx,
            n_rx: r.n_rx,
            rounds: r.rounds,
            snr_db: r.snr_db,
            p0: r.p0,
            lambda: r.lambda,
            omega: r.omega,
            alpha_sq: r.alpha_sq,
            beta_sq: r.beta_sq,
            f_star: r.f_star,
            topology,
            seed: r.seed,
            joint: JointConfig {
                j_max: d.j_max,
                i1_max: d.i1_max,
                i2_max: d.i2_max,
                mixing_iters: d.mixing_iters,
                mixing_tol: d.mixing_tol,
                mode: match d.mode {
                    WeightMode::Bound => ErrorWeightMode::Bound,
                    WeightMode::Robust => ErrorWeightMode::Robust,
                },
                tol: d.tol,
            },
            optimize_every: r.optimize_every,
            momentum: r.momentum,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scheme_spec(&self, id: &str) -> Result<SchemeSpec> {
        let kind = SchemeKind::parse(id).ok_or_else(|| CliError::UnknownScheme(id.to_string()))?;
        let s = &self.scheme;
        let mixing = match s.mixing {
            MixingChoice::Default => MixingPolicy::Default,
            MixingChoice::Metropolis => MixingPolicy::Metropolis,
            MixingChoice::Random => MixingPolicy::RandomFeasible,
            MixingChoice::MinDelta => MixingPolicy::MinDelta,
            MixingChoice::Target => MixingPolicy::TargetDelta(s.target_delta),
            MixingChoice::File => {
                let path = s
                    .mixing_path
                    .as_ref()
                    .ok_or_else(|| CliError::Config("mixing `file` needs `mixing_path`".into()))?;
                MixingPolicy::Fixed(formats::read_mixing_csv(path)?.0)
            }
        };
        Ok(SchemeSpec::new(kind).with_mixing(mixing))
    }

    /// Scheme ids listed for `compare`, validated.
    pub fn compare_schemes(&self) -> Result<Vec<SchemeKind>> {
        parse_schemes(&self.compare.schemes)
    }

    pub fn sweep_schemes(&self) -> Result<Vec<SchemeKind>> {
        parse_schemes(&self.sweep.schemes)
    }
}

pub fn parse_schemes(ids: &[String]) -> Result<Vec<SchemeKind>> {
    ids.iter()
        .map(|id| SchemeKind::parse(id).ok_or_else(|| CliError::UnknownScheme(id.clone())))
        .collect()
}
