//! Frequency-aware matching: sources that were reduced often get their
//! candidate score lowered so reduction targets spread out spatially.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{Candidates, PairSet};

/// Per-token count of how often the token was reduced in the current run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionHistory {
    pub counts: Vec<u64>,
}

impl SelectionHistory {
    pub fn new(num_tokens: usize) -> Self {
        SelectionHistory {
            counts: vec![0; num_tokens],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.counts.len() as f64
    }

    /// Population standard deviation of the counts.
    pub fn std_dev(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / self.counts.len() as f64;
        var.sqrt()
    }

    /// Writes the counts as a `side x side` CSV grid, one grid row per line.
    pub fn write_heatmap(&self, path: &Path, side: usize) -> Result<()> {
        if side * side != self.counts.len() {
            return Err(Error::shape(format!(
                "{} counts do not fill a {side}x{side} grid",
                self.counts.len()
            )));
        }
        let mut out = Vec::new();
        for row in self.counts.chunks(side) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{}", line.join(",")).expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_heatmap(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut counts = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            for cell in line.split(',') {
                counts.push(cell.trim().parse().map_err(|e| Error::parse(path, e))?);
            }
        }
        Ok(SelectionHistory { counts })
    }
}

/// Penalised candidates: `score - lambda * r * spread * C[src]`, where
/// `spread = max(score) - min(score)`. Destination choices are untouched.
pub fn apply_penalty(
    candidates: &Candidates,
    history: &SelectionHistory,
    lambda: f64,
    ratio: f64,
) -> Result<Candidates> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("penalty strength must be >= 0, got {lambda}")));
    }
    if candidates.is_empty() {
        return Ok(candidates.clone());
    }
    let (lo, hi) = candidates
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let spread = hi - lo;
    let scale = lambda * ratio * spread;
    let mut scores = Vec::with_capacity(candidates.len());
    for (&s, &score) in candidates.src.iter().zip(&candidates.scores) {
        let count = *history
            .counts
            .get(s)
            .ok_or_else(|| Error::shape(format!("source {s} outside history of {}", history.len())))?;
        scores.push(score - scale * count as f64);
    }
    Ok(Candidates {
        src: candidates.src.clone(),
        best_dst: candidates.best_dst.clone(),
        scores,
    })
}

/// Counts every source of `pairs` as selected once more.
pub fn update_history(history: &mut SelectionHistory, pairs: &PairSet) -> Result<()> {
    let n = history.counts.len();
    for s in pairs.src_positions() {
        let slot = history
            .counts
            .get_mut(s)
            .ok_or_else(|| Error::internal(format!("pair source {s} outside history of {n}")))?;
        *slot += 1;
    }
    Ok(())
}

/// Which tokens share a count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryScope {
    /// One history for the whole run.
    #[default]
    Shared,
    /// One history per block; each block's matching sees only its own.
    PerBlock,
}

/// How often a selected token is counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryIncrement {
    /// Once per reduced attention call.
    #[default]
    PerCall,
    /// At most once per step, however many blocks reduced it.
    PerStep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistoryPolicy {
    pub scope: HistoryScope,
    pub increment: HistoryIncrement,
}

/// Selection histories of one run under a [`HistoryPolicy`].
///
/// Per-step increments are buffered and land when a later step is entered
/// (or at [`SelectionTracker::total`]), so a step never sees its own picks.
#[derive(Clone, Debug)]
pub struct SelectionTracker {
    policy: HistoryPolicy,
    histories: Vec<SelectionHistory>,
    pending: Vec<Vec<bool>>,
    step: usize,
}

impl SelectionTracker {
    pub fn new(policy: HistoryPolicy, num_tokens: usize, num_blocks: usize) -> Self {
        let slots = match policy.scope {
            HistoryScope::Shared => 1,
            HistoryScope::PerBlock => num_blocks.max(1),
        };
        SelectionTracker {
            policy,
            histories: vec![SelectionHistory::new(num_tokens); slots],
            pending: vec![vec![false; num_tokens]; slots],
            step: 0,
        }
    }

    fn slot(&self, block: usize) -> usize {
        match self.policy.scope {
            HistoryScope::Shared => 0,
            HistoryScope::PerBlock => block.min(self.histories.len() - 1),
        }
    }

    fn flush(&mut self) {
        for (h, marks) in self.histories.iter_mut().zip(&mut self.pending) {
            for (c, m) in h.counts.iter_mut().zip(marks.iter_mut()) {
                if std::mem::take(m) {
                    *c += 1;
                }
            }
        }
    }

    /// Moves to step `t`, committing buffered per-step counts.
    pub fn enter_step(&mut self, t: usize) {
        if t != self.step {
            self.flush();
            self.step = t;
        }
    }

    /// The history block `block` matches against.
    pub fn history(&self, block: usize) -> &SelectionHistory {
        &self.histories[self.slot(block)]
    }

    pub fn record(&mut self, block: usize, pairs: &PairSet) -> Result<()> {
        let slot = self.slot(block);
        match self.policy.increment {
            HistoryIncrement::PerCall => update_history(&mut self.histories[slot], pairs),
            HistoryIncrement::PerStep => {
                let marks = &mut self.pending[slot];
                let n = marks.len();
                for s in pairs.src_positions() {
                    *marks
                        .get_mut(s)
                        .ok_or_else(|| Error::internal(format!("pair source {s} outside history of {n}")))? = true;
                }
                Ok(())
            }
        }
    }

    /// Commits pending counts and sums every slot into one history.
    pub fn total(mut self) -> SelectionHistory {
        self.flush();
        let mut it = self.histories.into_iter();
        let mut sum = it.next().expect("at least one slot");
        for h in it {
            for (a, b) in sum.counts.iter_mut().zip(h.counts) {
                *a += b;
            }
        }
        sum
    }
}
