//! The four command-line operations as library functions. Each reads an
//! [`ExperimentConfig`], does its work and writes its files into an output
//! directory (`--out`, else `output.dir` from the config).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::linalg::Metric;
use crate::matching::{bipartition, PartitionStrategy};
use crate::model::{init_model, run_dense_with, ModelConfig};
use crate::pipeline::{self, compare_recovery, RecoveryComparison, RunResult, Variant};
use crate::pmr::{build_pmr_table, max_intervals, MaxIntervals, PmrTable};
use crate::scheduler::{build_schedule, Schedule};

pub const PMR_FILE: &str = "pmr.csv";
pub const DELTA_MAX_FILE: &str = "delta_max.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const RESULT_FILE: &str = "result.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::internal(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn prepare_out(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Offline calibration products.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub table: PmrTable,
    pub delta_max: MaxIntervals,
    pub schedule: Schedule,
}

/// Settings a calibration was produced under, stored beside the CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInfo {
    pub model: ModelConfig,
    pub seeds: Vec<u64>,
    pub top_k: usize,
    pub tau: f64,
    pub metric: Metric,
    pub partition: PartitionStrategy,
    pub max_delta: usize,
    pub match_steps: usize,
    pub reduce_steps: usize,
    pub full_steps: usize,
}

/// Dense trajectories over the calibration seeds, then PMR table, maximum
/// intervals and schedule.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    let params = init_model(&cfg.model)?;
    let partition = bipartition(cfg.model.num_tokens, cfg.tr.partition)?;
    let trajectories = {
        use rayon::prelude::*;
        cfg.calibration
            .seeds
            .par_iter()
            .map(|&s| run_dense_with(&cfg.model.with_latent_seed(s), &params))
            .collect::<Result<Vec<_>>>()?
    };
    let table = build_pmr_table(&trajectories, &partition, cfg.tr.top_k, cfg.tr.metric, cfg.max_delta())?;
    let delta_max = max_intervals(&table, cfg.tr.tau)?;
    let schedule = build_schedule(&delta_max, cfg.model.num_steps)?;
    Ok(Calibration {
        table,
        delta_max,
        schedule,
    })
}

/// Writes `pmr.csv`, `delta_max.csv`, `schedule.csv` and `calibration.json`.
pub fn cmd_calibrate(config: &Path, out: Option<&Path>) -> Result<Calibration> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = prepare_out(&cfg, out)?;
    let cal = calibrate(&cfg)?;
    cal.table.write_csv(&dir.join(PMR_FILE))?;
    cal.delta_max.write_csv(&dir.join(DELTA_MAX_FILE))?;
    cal.schedule.write_csv(&dir.join(SCHEDULE_FILE))?;
    let info = CalibrationInfo {
        model: cfg.model.clone(),
        seeds: cfg.calibration.seeds.clone(),
        top_k: cfg.tr.top_k,
        tau: cfg.tr.tau,
        metric: cfg.tr.metric,
        partition: cfg.tr.partition,
        max_delta: cfg.max_delta(),
        match_steps: cal.schedule.match_steps.len(),
        reduce_steps: cal.schedule.reduce_steps.len(),
        full_steps: cal.schedule.full_steps.len(),
    };
    write_json(&dir.join(CALIBRATION_FILE), &info)?;
    Ok(cal)
}

/// Runs one variant and writes `result.json` and `heatmap.csv`. DiTo reads
/// its schedule from `schedule`, falling back to `schedule.csv` in the output
/// directory.
pub fn cmd_run(config: &Path, variant: Variant, schedule: Option<&Path>, out: Option<&Path>) -> Result<RunResult> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = prepare_out(&cfg, out)?;
    let schedule = match (variant, schedule) {
        (Variant::Dito, Some(path)) => Some(Schedule::read_csv(path)?),
        (Variant::Dito, None) => {
            let fallback = dir.join(SCHEDULE_FILE);
            if !fallback.is_file() {
                return Err(Error::config(format!(
                    "the dito variant needs --schedule (no {} found)",
                    fallback.display()
                )));
            }
            Some(Schedule::read_csv(&fallback)?)
        }
        _ => None,
    };
    let result = pipeline::run(&cfg.run_config(variant), schedule.as_ref())?;
    result.write_json(&dir.join(RESULT_FILE))?;
    result
        .history
        .write_heatmap(&dir.join(HEATMAP_FILE), cfg.model.grid_side())?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub samples: usize,
    /// Share of samples with `e_out <= e_in`.
    pub below_diagonal_fraction: f64,
    pub mean_e_in: f64,
    pub mean_e_out: f64,
    /// Same share when reduced tokens are also left out of the attention call.
    pub attended_below_diagonal_fraction: f64,
}

impl CompareSummary {
    pub fn new(metric: Metric, seeds: &[u64], cmp: &RecoveryComparison) -> Self {
        CompareSummary {
            metric,
            seeds: seeds.to_vec(),
            samples: cmp.records.len(),
            below_diagonal_fraction: cmp.below_diagonal_fraction(),
            mean_e_in: cmp.mean_e_in(),
            mean_e_out: cmp.mean_e_out(),
            attended_below_diagonal_fraction: cmp.attended_below_diagonal_fraction(),
        }
    }
}

/// Writes `scatter.csv` and `summary.json`. `seeds` overrides the number of
/// evaluation seeds.
pub fn cmd_compare(config: &Path, seeds: Option<usize>, out: Option<&Path>) -> Result<CompareSummary> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(Error::config("--seeds must be >= 1"));
        }
        cfg.evaluation.num_seeds = n;
    }
    let dir = prepare_out(&cfg, out)?;
    let seeds = cfg.evaluation.seeds();
    let cmp = compare_recovery(&cfg.run_config(Variant::OutputOracle), &seeds)?;
    cmp.write_csv(&dir.join(SCATTER_FILE))?;
    let summary = CompareSummary::new(cfg.tr.metric, &seeds, &cmp);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Result file, relative to the report directory.
    pub source: String,
    pub variant: Variant,
    pub latent_seed: u64,
    pub attention_flops: u64,
    pub matching_flops: u64,
    pub dense_flops: u64,
    /// `1 - (attention + matching) / dense`.
    pub flops_saving: f64,
    pub reduced_calls: usize,
    pub mean_recovery_error: f64,
    pub max_selection_count: u64,
    pub metadata_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn from_results(results: &[(String, RunResult)]) -> Self {
        let rows = results
            .iter()
            .map(|(source, r)| {
                let dense = r.dense_attention_flops();
                ReportRow {
                    source: source.clone(),
                    variant: r.variant(),
                    latent_seed: r.config.model.latent_seed,
                    attention_flops: r.flops.total_attention,
                    matching_flops: r.flops.total_matching,
                    dense_flops: dense,
                    flops_saving: 1.0 - r.flops.total() as f64 / dense as f64,
                    reduced_calls: r.recovery_errors.len(),
                    mean_recovery_error: r.mean_recovery_error(),
                    max_selection_count: r.history.max(),
                    metadata_bytes: r.flops.metadata_bytes,
                }
            })
            .collect();
        Report { rows }
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:<15} {:>14} {:>12} {:>9} {:>14} {:>9}",
            "source", "variant", "attn FLOPs", "match FLOPs", "saving", "mean error", "max sel"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:<15} {:>14} {:>12} {:>8.2}% {:>14.6} {:>9}",
                r.source,
                r.variant.as_str(),
                r.attention_flops,
                r.matching_flops,
                100.0 * r.flops_saving,
                r.mean_recovery_error,
                r.max_selection_count
            );
        }
        s
    }
}

fn find_results(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_results(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == RESULT_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

/// Collects every `result.json` under `dir` and writes `report.json` plus a
/// plain-text table (`report.txt`) into `out`, defaulting to `dir`.
pub fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<Report> {
    let mut paths = Vec::new();
    find_results(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::config(format!("no {RESULT_FILE} under {}", dir.display())));
    }
    let results = paths
        .iter()
        .map(|p| {
            let label = p
                .parent()
                .and_then(|parent| parent.strip_prefix(dir).ok())
                .map(|rel| rel.display().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| ".".into());
            Ok((label, RunResult::read_json(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = Report::from_results(&results);
    let out = out.unwrap_or(dir);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let table = out.join(REPORT_TABLE_FILE);
    std::fs::write(&table, report.render_table()).map_err(|e| Error::io(&table, e))?;
    Ok(report)
}

/// Reads back a file written by [`cmd_calibrate`].
pub fn read_calibration_info(path: &Path) -> Result<CalibrationInfo> {
    read_json(path)
}

/// Reads back a file written by [`cmd_compare`].
pub fn read_summary(path: &Path) -> Result<CompareSummary> {
    read_json(path)
}

/// Reads back a file written by [`cmd_report`].
pub fn read_report(path: &Path) -> Result<Report> {
    read_json(path)
}
