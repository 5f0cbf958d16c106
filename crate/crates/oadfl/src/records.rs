//! Run records on disk: the per-round metrics CSV, the JSON manifest, and
//! mean ± standard-error aggregation across seeds.

use std::path::{Path, PathBuf};

use oadfl_core::trainer::RoundMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};

/// Column order of every metrics CSV.
pub const METRIC_COLUMNS: [&str; 9] = [
    "round",
    "global_grad_norm_sq",
    "agreement_error",
    "min_loss",
    "avg_loss",
    "nmse_db",
    "delta_W",
    "fro_err_expect",
    "ones_err_expect",
];

/// One CSV row. Floats are written in shortest round-trip form, so equal
/// runs give equal bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRow {
    pub round: usize,
    pub global_grad_norm_sq: f64,
    pub agreement_error: f64,
    pub min_loss: f64,
    pub avg_loss: f64,
    pub nmse_db: f64,
    #[serde(rename = "delta_W")]
    pub delta_w: f64,
    pub fro_err_expect: f64,
    pub ones_err_expect: f64,
}

impl From<&RoundMetrics> for MetricsRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            global_grad_norm_sq: m.global_grad_norm_sq,
            agreement_error: m.agreement_error,
            min_loss: m.min_loss,
            avg_loss: m.avg_loss,
            nmse_db: m.nmse_db,
            delta_w: m.delta_w,
            fro_err_expect: m.fro_err_expect,
            ones_err_expect: m.ones_err_expect,
        }
    }
}

impl MetricsRow {
    pub fn value(&self, column: &str) -> Option<f64> {
        Some(match column {
            "round" => self.round as f64,
            "global_grad_norm_sq" => self.global_grad_norm_sq,
            "agreement_error" => self.agreement_error,
            "min_loss" => self.min_loss,
            "avg_loss" => self.avg_loss,
            "nmse_db" => self.nmse_db,
            "delta_W" => self.delta_w,
            "fro_err_expect" => self.fro_err_expect,
            "ones_err_expect" => self.ones_err_expect,
            _ => return None,
        })
    }
}

/// Writes `bytes` next to `path` and renames it into place, so readers never
/// see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn metrics_csv(metrics: &[RoundMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if metrics.is_empty() {
        w.write_record(METRIC_COLUMNS)?;
    }
    for m in metrics {
        w.serialize(MetricsRow::from(m))?;
    }
    Ok(w.into_inner().expect("in-memory writer cannot fail"))
}

pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    write_atomic(path, &metrics_csv(metrics)?)
}

/// Reads a metrics CSV, rejecting any header other than [`METRIC_COLUMNS`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRIC_COLUMNS {
        return Err(crate::error::format_err(path, format!("unexpected columns {header:?}")));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// A file a run consumed or produced, with its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub scheme: String,
    pub seed: u64,
    pub rounds: usize,
    pub optimize_every: usize,
    /// Canonical text of the merged configuration.
    pub config: String,
    pub initial_delta: f64,
    pub final_delta: f64,
    pub flagged_rounds: Vec<usize>,
    pub channel_dump: Option<FileRef>,
    pub frame_dump: Option<FileRef>,
    pub wall_clock_seconds: f64,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Sample mean and standard error of the mean; the error is 0 for fewer
/// than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Final-round summary of one run, the quantity aggregated across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub final_avg_loss: f64,
    pub final_min_loss: f64,
    pub final_grad_norm_sq: f64,
    pub final_agreement: f64,
    pub mean_nmse_db: f64,
    pub final_delta: f64,
}

impl RunSummary {
    pub const COLUMNS: [&'static str; 6] = [
        "final_avg_loss",
        "final_min_loss",
        "final_grad_norm_sq",
        "final_agreement",
        "mean_nmse_db",
        "final_delta_W",
    ];

    pub fn from_metrics(metrics: &[RoundMetrics]) -> Option<Self> {
        let last = metrics.last()?;
        Some(Self {
            final_avg_loss: last.avg_loss,
            final_min_loss: last.min_loss,
            final_grad_norm_sq: last.global_grad_norm_sq,
            final_agreement: last.agreement_error,
            mean_nmse_db: metrics.iter().map(|m| m.nmse_db).sum::<f64>() / metrics.len() as f64,
            final_delta: last.delta_w,
        })
    }

    fn values(&self) -> [f64; 6] {
        [
            self.final_avg_loss,
            self.final_min_loss,
            self.final_grad_norm_sq,
            self.final_agreement,
            self.mean_nmse_db,
            self.final_delta,
        ]
    }
}

/// Header cells `<col>_mean, <col>_stderr` for every summary column.
pub fn summary_header() -> Vec<String> {
    RunSummary::COLUMNS
        .iter()
        .flat_map(|c| [format!("{c}_mean"), format!("{c}_stderr")])
        .collect()
}

/// Mean and standard error of each summary column across runs.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<(f64, f64)> {
    (0..RunSummary::COLUMNS.len())
        .map(|k| {
            let col: Vec<f64> = summaries.iter().map(|s| s.values()[k]).collect();
            mean_stderr(&col)
        })
        .collect()
}

/// Cells for [`summary_header`].
pub fn aggregate_cells(summaries: &[RunSummary]) -> Vec<String> {
    aggregate(summaries)
        .into_iter()
        .flat_map(|(m, s)| [m.to_string(), s.to_string()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(round: usize, loss: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            avg_loss: loss,
            min_loss: loss / 2.0,
            nmse_db: -10.0 * round as f64,
            delta_w: 0.25,
            ..RoundMetrics::default()
        }
    }

    #[test]
    fn csv_round_trips_and_checks_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let metrics = [sample(0, 1.0 / 3.0), sample(1, 1e-300)];
        write_metrics_csv(&path, &metrics).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRIC_COLUMNS.join(","));
        let rows = read_metrics_csv(&path).unwrap();
        assert_eq!(rows, metrics.iter().map(MetricsRow::from).collect::<Vec<_>>());
        std::fs::write(&path, "round,avg_loss\n0,1\n").unwrap();
        assert!(read_metrics_csv(&path).is_err());
    }

    #[test]
    fn empty_run_still_has_a_header() {
        let bytes = metrics_csv(&[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap().trim_end(), METRIC_COLUMNS.join(","));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest {
            tool_version: "x".into(),
            scheme: "proposed".into(),
            seed: 3,
            rounds: 2,
            optimize_every: 1,
            config: "[run]\nsnr_db = inf\n".into(),
            initial_delta: 0.5,
            final_delta: 0.25,
            flagged_rounds: vec![1],
            channel_dump: Some(FileRef {
                path: "c.bin".into(),
                sha256: "ab".into(),
            }),
            frame_dump: None,
            wall_clock_seconds: 0.125,
        };
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn mean_stderr_examples() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample sd sqrt(5/3), divided by 2
        assert!((s - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn summary_uses_last_round_and_mean_nmse() {
        let s = RunSummary::from_metrics(&[sample(0, 4.0), sample(1, 2.0)]).unwrap();
        assert_eq!(s.final_avg_loss, 2.0);
        assert_eq!(s.final_min_loss, 1.0);
        assert_eq!(s.mean_nmse_db, -5.0);
        assert!(RunSummary::from_metrics(&[]).is_none());
        assert_eq!(summary_header().len(), 12);
    }
}
