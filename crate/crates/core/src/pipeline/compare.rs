use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::linalg::TokenMatrix;
use crate::matching::{bipartition, match_features, PairSet};
use crate::model::{attention_block, init_model, run_dense_with, BlockParams};
use crate::pmr::csv_error;
use crate::reduce::{copy_recover, recover_tokens, recovery_error, reduce_tokens, ReduceMode};

/// One `(seed, t, b)` sample: recovery error with input-based and with
/// output-based pairs, both measured on the same dense output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub seed: u64,
    pub t: usize,
    pub b: usize,
    pub e_in: f64,
    pub e_out: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryComparison {
    pub records: Vec<ScatterRecord>,
    /// Same comparison when the reduced tokens are also dropped from the
    /// attention call itself (`(e_in, e_out)` per record).
    pub attended: Vec<(f64, f64)>,
}

fn fraction(points: impl ExactSizeIterator<Item = (f64, f64)>) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    points.filter(|(e_in, e_out)| e_out <= e_in).count() as f64 / n as f64
}

impl RecoveryComparison {
    /// Share of samples with `e_out <= e_in`.
    pub fn below_diagonal_fraction(&self) -> f64 {
        fraction(self.records.iter().map(|r| (r.e_in, r.e_out)))
    }

    pub fn attended_below_diagonal_fraction(&self) -> f64 {
        fraction(self.attended.iter().copied())
    }

    pub fn mean_e_in(&self) -> f64 {
        mean(self.records.iter().map(|r| r.e_in))
    }

    pub fn mean_e_out(&self) -> f64 {
        mean(self.records.iter().map(|r| r.e_out))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ScatterRecord>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        r.deserialize()
            .map(|row| row.map_err(|e| csv_error(path, e)))
            .collect()
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

fn attended_error(x: &TokenMatrix, y: &TokenMatrix, pairs: &PairSet, block: &BlockParams, mode: ReduceMode) -> Result<f64> {
    let (xr, map) = reduce_tokens(x, pairs, mode)?;
    let y_tilde = recover_tokens(&attention_block(&xr, block)?, &map, x.rows())?;
    recovery_error(y, &y_tilde)
}

/// Pointwise comparison over dense trajectories, one per latent seed. Seeds
/// run in parallel; records come back in seed, step, block order.
pub fn compare_recovery(cfg: &RunConfig, seeds: &[u64]) -> Result<RecoveryComparison> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("compare_recovery needs at least one seed"));
    }
    let params = init_model(&cfg.model)?;
    let partition = bipartition(cfg.model.num_tokens, cfg.partition)?;
    let per_seed: Vec<Vec<(ScatterRecord, (f64, f64))>> = seeds
        .par_iter()
        .map(|&seed| {
            let traj = run_dense_with(&cfg.model.with_latent_seed(seed), &params)?;
            let mut out = Vec::with_capacity(traj.num_steps() * traj.num_blocks());
            for t in 0..traj.num_steps() {
                for b in 0..traj.num_blocks() {
                    let (x, y) = (traj.input(t, b), traj.output(t, b));
                    let p_in = match_features(x, &partition, cfg.ratio, cfg.metric)?;
                    let p_out = match_features(y, &partition, cfg.ratio, cfg.metric)?;
                    let e_in = recovery_error(y, &copy_recover(y, &p_in)?)?;
                    let e_out = recovery_error(y, &copy_recover(y, &p_out)?)?;
                    let block = &params.blocks[b];
                    let attended = (
                        attended_error(x, y, &p_in, block, cfg.mode)?,
                        attended_error(x, y, &p_out, block, cfg.mode)?,
                    );
                    out.push((ScatterRecord { seed, t, b, e_in, e_out }, attended));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (records, attended) = per_seed.into_iter().flatten().unzip();
    Ok(RecoveryComparison { records, attended })
}
