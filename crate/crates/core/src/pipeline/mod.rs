//! End-to-end runs of the toy model under each token-reduction variant, with
//! recovery-error and cost bookkeeping.

mod compare;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::flops::{flops_attention, flops_matching, pair_set_bytes, FlopsReport};
use crate::linalg::{Metric, TokenMatrix};
use crate::matching::{
    bipartition, match_candidates, match_features, partition_similarity, reduction_count, select_top_k, Pair,
    PairSet, Partition, PartitionStrategy,
};
use crate::model::{attention_block, forward_step_with, init_model, initial_latent, run_dense_with, ModelConfig};
use crate::penalty::{apply_penalty, HistoryPolicy, SelectionHistory, SelectionTracker};
use crate::reduce::{copy_recover, recover_tokens, recovery_error, reduce_tokens, ReduceMode};
use crate::scheduler::{Role, Schedule};

pub use compare::{compare_recovery, RecoveryComparison, ScatterRecord};

/// Bumped whenever the serialized [`RunResult`] layout changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    /// Output-based matching reused across the scheduled reduction steps.
    #[default]
    Dito,
    /// Fresh input-based matching at every call.
    InputBaseline,
    /// Matching from each call's own dense output; dense activations propagate.
    OutputOracle,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::Dito => "dito",
            Variant::InputBaseline => "input_baseline",
            Variant::OutputOracle => "output_oracle",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Dense, Variant::Dito, Variant::InputBaseline, Variant::OutputOracle]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub ratio: f64,
    pub lambda: f64,
    pub tau: f64,
    pub top_k: usize,
    pub metric: Metric,
    pub mode: ReduceMode,
    pub partition: PartitionStrategy,
    #[serde(default)]
    pub history: HistoryPolicy,
    pub variant: Variant,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            ratio: 0.25,
            lambda: 1.0,
            tau: 0.9,
            top_k: 5,
            metric: Metric::Cosine,
            mode: ReduceMode::Prune,
            partition: PartitionStrategy::default(),
            history: HistoryPolicy::default(),
            variant: Variant::Dito,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::config(format!("ratio must lie in [0, 1], got {}", self.ratio)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k must be >= 1"));
        }
        let partition = bipartition(self.model.num_tokens, self.partition)?;
        if self.top_k > partition.dst.len() {
            return Err(Error::config(format!(
                "top_k {} exceeds the {} destinations",
                self.top_k,
                partition.dst.len()
            )));
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        RunConfig { variant, ..self.clone() }
    }

    pub fn with_latent_seed(&self, seed: u64) -> Self {
        RunConfig {
            model: self.model.with_latent_seed(seed),
            ..self.clone()
        }
    }

    /// Tokens removed per reduced call: `min(floor(r N), |S|)`.
    pub fn reduced_tokens(&self) -> Result<usize> {
        let partition = bipartition(self.model.num_tokens, self.partition)?;
        Ok(reduction_count(self.ratio, self.model.num_tokens).min(partition.src.len()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub t: usize,
    pub b: usize,
    pub error: f64,
}

/// Pair set established at a Matching step for one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPairs {
    pub t: usize,
    pub b: usize,
    pub pairs: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub config: RunConfig,
    pub final_latent: TokenMatrix,
    /// One entry per reduced `(t, b)` call, against the dense reference.
    pub recovery_errors: Vec<RecoveryRecord>,
    pub flops: FlopsReport,
    pub history: SelectionHistory,
    pub schedule: Option<Schedule>,
    /// Pair sets stored at Matching steps (DiTo only).
    #[serde(default)]
    pub stored_pairs: Vec<StoredPairs>,
}

impl RunResult {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn total_recovery_error(&self) -> f64 {
        self.recovery_errors.iter().map(|r| r.error).sum()
    }

    /// Mean over reduced calls; 0 when nothing was reduced.
    pub fn mean_recovery_error(&self) -> f64 {
        if self.recovery_errors.is_empty() {
            0.0
        } else {
            self.total_recovery_error() / self.recovery_errors.len() as f64
        }
    }

    /// `T B flops_attention(N, d)`.
    pub fn dense_attention_flops(&self) -> u64 {
        let m = &self.config.model;
        (m.num_steps * m.num_blocks) as u64 * flops_attention(m.num_tokens, m.hidden_dim)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::internal(format!("serializing result: {e}")))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let result: RunResult = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if result.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                path,
                format!("schema version {} (expected {SCHEMA_VERSION})", result.schema_version),
            ));
        }
        Ok(result)
    }
}

/// Dispatches on `cfg.variant`. `schedule` is required for DiTo only.
pub fn run(cfg: &RunConfig, schedule: Option<&Schedule>) -> Result<RunResult> {
    match cfg.variant {
        Variant::Dense => run_dense_result(cfg),
        Variant::Dito => {
            let schedule = schedule.ok_or_else(|| Error::config("the dito variant needs a schedule"))?;
            run_dito(cfg, schedule)
        }
        Variant::InputBaseline => run_input_baseline(cfg),
        Variant::OutputOracle => run_output_oracle(cfg),
    }
}

/// Shared run state: weights, dense reference, partition and ledgers.
struct Ctx {
    cfg: RunConfig,
    params: crate::model::ModelParams,
    reference: crate::model::Trajectory,
    partition: Partition,
    k: usize,
    matching_cost: u64,
    dense_cost: u64,
    flops: FlopsReport,
    history: SelectionTracker,
    errors: Vec<RecoveryRecord>,
}

impl Ctx {
    fn new(cfg: &RunConfig, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.model;
        let params = init_model(m)?;
        let reference = run_dense_with(m, &params)?;
        let partition = bipartition(m.num_tokens, cfg.partition)?;
        let k = cfg.reduced_tokens()?;
        Ok(Ctx {
            cfg: cfg.with_variant(variant),
            matching_cost: flops_matching(partition.dst.len(), partition.src.len(), m.hidden_dim, cfg.metric),
            dense_cost: flops_attention(m.num_tokens, m.hidden_dim),
            params,
            reference,
            partition,
            k,
            flops: FlopsReport::new(m.num_steps, m.num_blocks),
            history: SelectionTracker::new(cfg.history, m.num_tokens, m.num_blocks),
            errors: Vec::new(),
        })
    }

    fn dense(&mut self, t: usize, b: usize, x: &TokenMatrix) -> Result<TokenMatrix> {
        self.flops.record_attention(t, b, self.dense_cost);
        attention_block(x, &self.params.blocks[b])
    }

    /// Reduce, attend on the survivors, recover; logs the error against the
    /// dense reference at `(t, b)`.
    fn reduced(&mut self, t: usize, b: usize, x: &TokenMatrix, pairs: &PairSet) -> Result<TokenMatrix> {
        let (xr, map) = reduce_tokens(x, pairs, self.cfg.mode)?;
        self.flops
            .record_attention(t, b, flops_attention(xr.rows(), self.cfg.model.hidden_dim));
        let yr = attention_block(&xr, &self.params.blocks[b])?;
        let y = recover_tokens(&yr, &map, x.rows())?;
        self.log_error(t, b, &y)?;
        self.history.enter_step(t);
        self.history.record(b, pairs)?;
        Ok(y)
    }

    fn log_error(&mut self, t: usize, b: usize, y_tilde: &TokenMatrix) -> Result<()> {
        let error = recovery_error(self.reference.output(t, b), y_tilde)?;
        self.errors.push(RecoveryRecord { t, b, error });
        Ok(())
    }

    /// Top-k pairs from `feats`; skipped (and free) when nothing is reduced.
    fn match_on(&mut self, t: usize, b: usize, feats: &TokenMatrix) -> Result<PairSet> {
        if self.k == 0 {
            return Ok(PairSet::empty(self.cfg.ratio));
        }
        self.flops.record_matching(t, b, self.matching_cost);
        match_features(feats, &self.partition, self.cfg.ratio, self.cfg.metric)
    }

    fn finish(
        self,
        final_latent: TokenMatrix,
        schedule: Option<Schedule>,
        stored_pairs: Vec<StoredPairs>,
    ) -> RunResult {
        RunResult {
            schema_version: SCHEMA_VERSION,
            config: self.cfg,
            final_latent,
            recovery_errors: self.errors,
            flops: self.flops,
            history: self.history.total(),
            schedule,
            stored_pairs,
        }
    }
}

/// Runs the toy model through `attend` for every step and returns the final latent.
fn drive<F>(cfg: &RunConfig, mut attend: F) -> Result<TokenMatrix>
where
    F: FnMut(usize, usize, &TokenMatrix) -> Result<TokenMatrix>,
{
    let m = &cfg.model;
    let mut latent = initial_latent(m)?;
    for t in 0..m.num_steps {
        let (next, _) = forward_step_with(&latent, m.num_blocks, m.step_size, |b, x| attend(t, b, x))?;
        latent = next;
    }
    Ok(latent)
}

pub fn run_dense_result(cfg: &RunConfig) -> Result<RunResult> {
    let mut ctx = Ctx::new(cfg, Variant::Dense)?;
    let latent = drive(cfg, |t, b, x| ctx.dense(t, b, x))?;
    Ok(ctx.finish(latent, None, Vec::new()))
}

/// Matching steps run dense and store penalised output-based pair sets per
/// block; reduction steps reuse them; full steps run dense with no bookkeeping.
pub fn run_dito(cfg: &RunConfig, schedule: &Schedule) -> Result<RunResult> {
    let mut ctx = Ctx::new(cfg, Variant::Dito)?;
    let m = cfg.model.clone();
    if schedule.num_steps != m.num_steps {
        return Err(Error::config(format!(
            "schedule covers {} steps, model has {}",
            schedule.num_steps, m.num_steps
        )));
    }
    let roles = schedule.roles()?;
    let mut stored: Vec<Option<PairSet>> = vec![None; m.num_blocks];
    let mut log = Vec::new();
    let mut peak_bytes = 0u64;

    let mut latent = initial_latent(&m)?;
    for (t, &role) in roles.iter().enumerate() {
        let (next, _) = forward_step_with(&latent, m.num_blocks, m.step_size, |b, x| match role {
            Role::Full => ctx.dense(t, b, x),
            Role::Match => {
                let y = ctx.dense(t, b, x)?;
                let pairs = if ctx.k == 0 {
                    PairSet::empty(cfg.ratio)
                } else {
                    ctx.flops.record_matching(t, b, ctx.matching_cost);
                    let map = partition_similarity(&y, &ctx.partition, cfg.metric)?;
                    let candidates = match_candidates(&map, &ctx.partition)?;
                    ctx.history.enter_step(t);
                    let penalised = apply_penalty(&candidates, ctx.history.history(b), cfg.lambda, cfg.ratio)?;
                    select_top_k(&penalised, cfg.ratio, m.num_tokens)
                };
                log.push(StoredPairs {
                    t,
                    b,
                    pairs: pairs.pairs.clone(),
                });
                stored[b] = Some(pairs);
                Ok(y)
            }
            Role::Reduce => {
                let pairs = stored[b]
                    .take()
                    .ok_or_else(|| Error::internal(format!("no stored pair set for block {b} at step {t}")))?;
                let y = ctx.reduced(t, b, x, &pairs);
                stored[b] = Some(pairs);
                y
            }
        })?;
        let held: u64 = stored.iter().flatten().map(|p| p.to_index_bytes().len() as u64).sum();
        peak_bytes = peak_bytes.max(held);
        latent = next;
    }
    ctx.flops.metadata_bytes = peak_bytes;
    Ok(ctx.finish(latent, Some(schedule.clone()), log))
}

/// Input-based matching recomputed at every call, then reduce, attend,
/// recover. Recovered outputs propagate.
pub fn run_input_baseline(cfg: &RunConfig) -> Result<RunResult> {
    let mut ctx = Ctx::new(cfg, Variant::InputBaseline)?;
    let latent = drive(cfg, |t, b, x| {
        let pairs = ctx.match_on(t, b, x)?;
        ctx.reduced(t, b, x, &pairs)
    })?;
    Ok(ctx.finish(latent, None, Vec::new()))
}

/// At every call: dense output `Y`, pairs from `Y`, copy-recovery of `Y`
/// through those pairs, error logged. Dense `Y` propagates, so every sample
/// sees the same inputs as the dense run.
pub fn run_output_oracle(cfg: &RunConfig) -> Result<RunResult> {
    let mut ctx = Ctx::new(cfg, Variant::OutputOracle)?;
    let latent = drive(cfg, |t, b, x| {
        let y = ctx.dense(t, b, x)?;
        let pairs = ctx.match_on(t, b, &y)?;
        ctx.log_error(t, b, &copy_recover(&y, &pairs)?)?;
        ctx.history.enter_step(t);
        ctx.history.record(b, &pairs)?;
        Ok(y)
    })?;
    Ok(ctx.finish(latent, None, Vec::new()))
}
