//! Top-k pair match rate (PMR): how often the golden (current-output)
//! destination of a source is among the top-k destinations predicted from
//! either the current input (`delta = 0`) or an earlier output (`delta >= 1`).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Metric};
use crate::matching::{partition_similarity, rank_desc, Partition};
use crate::model::Trajectory;

/// Per source column, the `k` best destination positions in rank order.
/// Ties go to the smaller position.
pub fn topk_dst_sets(map: &Matrix, partition: &Partition, k: usize) -> Result<Vec<Vec<usize>>> {
    let nd = partition.dst.len();
    if k == 0 || k > nd {
        return Err(Error::config(format!("top-k needs 1 <= k <= |D| = {nd}, got {k}")));
    }
    if map.shape() != (nd, partition.src.len()) {
        return Err(Error::shape(format!(
            "similarity map {:?} vs partition ({nd}, {})",
            map.shape(),
            partition.src.len()
        )));
    }
    let mut sets = Vec::with_capacity(partition.src.len());
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(nd);
    for j in 0..partition.src.len() {
        column.clear();
        column.extend(partition.dst.iter().enumerate().map(|(i, &d)| (map.get(i, j), d)));
        if k < nd {
            column.select_nth_unstable_by(k - 1, |a, b| rank_desc(*a, *b));
            column.truncate(k);
        }
        column.sort_by(|a, b| rank_desc(*a, *b));
        sets.push(column.iter().map(|&(_, d)| d).collect());
    }
    Ok(sets)
}

/// Fraction of sources whose golden destination lies in their candidate set.
pub fn pmr_value(golden_top1: &[usize], candidate_sets: &[Vec<usize>]) -> Result<f64> {
    if golden_top1.len() != candidate_sets.len() {
        return Err(Error::shape(format!(
            "{} golden matches vs {} candidate sets",
            golden_top1.len(),
            candidate_sets.len()
        )));
    }
    if golden_top1.is_empty() {
        return Err(Error::shape("pmr over zero sources"));
    }
    let hits = golden_top1
        .iter()
        .zip(candidate_sets)
        .filter(|(g, set)| set.contains(g))
        .count();
    Ok(hits as f64 / golden_top1.len() as f64)
}

/// `PMR(t, b, delta)` averaged over a calibration corpus. Entries with
/// `delta > t` do not exist.
#[derive(Clone, Debug, PartialEq)]
pub struct PmrTable {
    num_steps: usize,
    num_blocks: usize,
    max_delta: usize,
    values: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PmrRow {
    t: usize,
    b: usize,
    delta: usize,
    pmr: f64,
}

impl PmrTable {
    pub fn new(num_steps: usize, num_blocks: usize, max_delta: usize) -> Self {
        PmrTable {
            num_steps,
            num_blocks,
            max_delta,
            values: vec![None; num_steps * num_blocks * (max_delta + 1)],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn max_delta(&self) -> usize {
        self.max_delta
    }

    fn index(&self, t: usize, b: usize, delta: usize) -> usize {
        (t * self.num_blocks + b) * (self.max_delta + 1) + delta
    }

    pub fn get(&self, t: usize, b: usize, delta: usize) -> Option<f64> {
        if t >= self.num_steps || b >= self.num_blocks || delta > self.max_delta {
            return None;
        }
        self.values[self.index(t, b, delta)]
    }

    pub fn set(&mut self, t: usize, b: usize, delta: usize, value: f64) {
        let i = self.index(t, b, delta);
        self.values[i] = Some(value);
    }

    /// Mean over blocks of `PMR(t, b, delta)`, or `None` when unavailable.
    pub fn block_avg(&self, t: usize, delta: usize) -> Option<f64> {
        let mut sum = 0.0;
        for b in 0..self.num_blocks {
            sum += self.get(t, b, delta)?;
        }
        Some(sum / self.num_blocks as f64)
    }

    /// Present entries in `(t, b, delta)` order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (0..self.num_steps).flat_map(move |t| {
            (0..self.num_blocks).flat_map(move |b| {
                (0..=self.max_delta).filter_map(move |d| self.get(t, b, d).map(|v| (t, b, d, v)))
            })
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (t, b, delta, pmr) in self.entries() {
            w.serialize(PmrRow { t, b, delta, pmr }).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows: Vec<PmrRow> = r
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| csv_error(path, e))?;
        let dim = |f: fn(&PmrRow) -> usize| rows.iter().map(f).max().unwrap_or(0);
        let mut table = PmrTable::new(
            if rows.is_empty() { 0 } else { dim(|r| r.t) + 1 },
            if rows.is_empty() { 0 } else { dim(|r| r.b) + 1 },
            dim(|r| r.delta),
        );
        for row in rows {
            if !(0.0..=1.0).contains(&row.pmr) {
                return Err(Error::parse(path, format!("pmr {} outside [0, 1]", row.pmr)));
            }
            table.set(row.t, row.b, row.delta, row.pmr);
        }
        Ok(table)
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        }
    } else {
        Error::parse(path, e)
    }
}

/// Golden top-1 destinations and top-k candidate sets for every `(t, b)` of
/// one trajectory.
struct TrajectorySets {
    golden: Vec<Vec<usize>>,
    from_output: Vec<Vec<Vec<usize>>>,
    from_input: Vec<Vec<Vec<usize>>>,
}

fn trajectory_sets(traj: &Trajectory, partition: &Partition, k: usize, metric: Metric) -> Result<TrajectorySets> {
    let (steps, blocks) = (traj.num_steps(), traj.num_blocks());
    let mut sets = TrajectorySets {
        golden: Vec::with_capacity(steps * blocks),
        from_output: Vec::with_capacity(steps * blocks),
        from_input: Vec::with_capacity(steps * blocks),
    };
    for t in 0..steps {
        for b in 0..blocks {
            let y_map = partition_similarity(traj.output(t, b), partition, metric)?;
            let x_map = partition_similarity(traj.input(t, b), partition, metric)?;
            let golden = topk_dst_sets(&y_map, partition, 1)?
                .into_iter()
                .map(|s| s[0])
                .collect();
            sets.golden.push(golden);
            sets.from_output.push(topk_dst_sets(&y_map, partition, k)?);
            sets.from_input.push(topk_dst_sets(&x_map, partition, k)?);
        }
    }
    Ok(sets)
}

/// Builds the PMR table for `delta` in `0..=max_delta` over a corpus of dense
/// trajectories sharing one model configuration.
pub fn build_pmr_table(
    trajectories: &[Trajectory],
    partition: &Partition,
    top_k: usize,
    metric: Metric,
    max_delta: usize,
) -> Result<PmrTable> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::config("PMR calibration needs at least one trajectory"))?;
    let (steps, blocks) = (first.num_steps(), first.num_blocks());
    if trajectories
        .iter()
        .any(|t| t.num_steps() != steps || t.num_blocks() != blocks)
    {
        return Err(Error::config("calibration trajectories differ in shape"));
    }
    if max_delta >= steps {
        return Err(Error::config(format!(
            "max_delta {max_delta} must be below the step count {steps}"
        )));
    }

    let per_traj: Vec<TrajectorySets> = trajectories
        .par_iter()
        .map(|traj| trajectory_sets(traj, partition, top_k, metric))
        .collect::<Result<_>>()?;

    let mut table = PmrTable::new(steps, blocks, max_delta);
    let count = per_traj.len() as f64;
    for t in 0..steps {
        for b in 0..blocks {
            for delta in 0..=max_delta.min(t) {
                let mut sum = 0.0;
                for sets in &per_traj {
                    let golden = &sets.golden[t * blocks + b];
                    let candidates = if delta == 0 {
                        &sets.from_input[t * blocks + b]
                    } else {
                        &sets.from_output[(t - delta) * blocks + b]
                    };
                    sum += pmr_value(golden, candidates)?;
                }
                table.set(t, b, delta, sum / count);
            }
        }
    }
    Ok(table)
}

/// Largest reuse interval per timestep whose block-averaged PMR stays at or
/// above the threshold; 0 where no interval qualifies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxIntervals(pub Vec<usize>);

#[derive(Serialize, Deserialize)]
struct DeltaMaxRow {
    t: usize,
    delta_max: usize,
}

impl MaxIntervals {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, t: usize) -> usize {
        self.0[t]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (t, &delta_max) in self.0.iter().enumerate() {
            w.serialize(DeltaMaxRow { t, delta_max }).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut out = Vec::new();
        for row in r.deserialize() {
            let row: DeltaMaxRow = row.map_err(|e| csv_error(path, e))?;
            if row.t != out.len() {
                return Err(Error::parse(path, format!("expected t = {}, found {}", out.len(), row.t)));
            }
            out.push(row.delta_max);
        }
        Ok(MaxIntervals(out))
    }
}

pub fn max_intervals(table: &PmrTable, tau: f64) -> Result<MaxIntervals> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::config(format!("tau must lie in (0, 1], got {tau}")));
    }
    let out = (0..table.num_steps())
        .map(|t| {
            (1..=table.max_delta().min(t))
                .filter(|&d| table.block_avg(t, d).is_some_and(|v| v >= tau))
                .max()
                .unwrap_or(0)
        })
        .collect();
    Ok(MaxIntervals(out))
}
