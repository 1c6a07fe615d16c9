//! A deterministic desk-scale diffusion-transformer surrogate.
//!
//! `B` single-head attention blocks with residual connections are applied once
//! per timestep, and the latent moves a fraction `step_size` of the way toward
//! the row-normalised post-block state. Small step sizes give strongly correlated activations
//! across adjacent timesteps, which is the property output-based matching
//! relies on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::flops_attention;
use crate::linalg::{matmul, matmul_transposed, softmax_rows, Matrix, TokenMatrix};

/// Stream id used for the initial latent so it never aliases the weight stream
/// when both seeds coincide.
const LATENT_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Token count `N`; a perfect square so tokens tile a `sqrt(N) x sqrt(N)` grid.
    pub num_tokens: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_steps: usize,
    /// Convex update weight in `(0, 1]`; 0 is accepted to freeze the latent.
    pub step_size: f64,
    pub weight_seed: u64,
    /// Seed of the initial latent; plays the role of a prompt/noise sample.
    pub latent_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_tokens: 256,
            hidden_dim: 32,
            num_blocks: 4,
            num_steps: 24,
            step_size: 0.1,
            weight_seed: 0,
            latent_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_tokens;
        if n < 4 || grid_side(n).is_none() {
            return Err(Error::config(format!(
                "num_tokens must be a perfect square >= 4, got {n}"
            )));
        }
        if self.hidden_dim < 2 {
            return Err(Error::config("hidden_dim must be >= 2"));
        }
        if self.num_blocks < 1 {
            return Err(Error::config("num_blocks must be >= 1"));
        }
        if self.num_steps < 2 {
            return Err(Error::config("num_steps must be >= 2"));
        }
        // A step size of exactly 0 is admitted as the frozen-trajectory control.
        if !(0.0..=1.0).contains(&self.step_size) {
            return Err(Error::config(format!(
                "step_size must lie in [0, 1], got {}",
                self.step_size
            )));
        }
        Ok(())
    }

    /// Same model, different initial latent.
    pub fn with_latent_seed(&self, seed: u64) -> Self {
        ModelConfig {
            latent_seed: seed,
            ..self.clone()
        }
    }

    pub fn grid_side(&self) -> usize {
        grid_side(self.num_tokens).unwrap_or(0)
    }
}

/// `sqrt(n)` when `n` is a perfect square.
pub fn grid_side(n: usize) -> Option<usize> {
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n).then_some(side)
}

/// Projection weights of one attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub blocks: Vec<BlockParams>,
}

impl ModelParams {
    pub fn hidden_dim(&self) -> usize {
        self.blocks.first().map(|b| b.w_q.rows()).unwrap_or(0)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    Matrix::from_raw(rows, cols, data)
}

/// Draws every projection matrix from a seeded standard normal, scaled by `1/sqrt(d)`.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let d = config.hidden_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
    let blocks = (0..config.num_blocks)
        .map(|_| BlockParams {
            w_q: gaussian_matrix(&mut rng, d, d, scale),
            w_k: gaussian_matrix(&mut rng, d, d, scale),
            w_v: gaussian_matrix(&mut rng, d, d, scale),
        })
        .collect();
    Ok(ModelParams { blocks })
}

/// Standard-normal `N x d` starting latent for `config.latent_seed`.
pub fn initial_latent(config: &ModelConfig) -> Result<TokenMatrix> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.latent_seed);
    rng.set_stream(LATENT_STREAM);
    Ok(gaussian_matrix(
        &mut rng,
        config.num_tokens,
        config.hidden_dim,
        1.0,
    ))
}

/// Single-head self-attention `softmax(Q K^T / sqrt(d)) V` over however many
/// rows `x` has.
pub fn attention_block(x: &TokenMatrix, block: &BlockParams) -> Result<TokenMatrix> {
    let d = block.w_q.rows();
    if x.cols() != d {
        return Err(Error::shape(format!(
            "attention_block: input width {} vs hidden_dim {d}",
            x.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::shape("attention_block: no tokens"));
    }
    let q = matmul(x, &block.w_q)?;
    let k = matmul(x, &block.w_k)?;
    let v = matmul(x, &block.w_v)?;
    let logits = matmul_transposed(&q, &k)?.scale(1.0 / (d as f64).sqrt());
    let weights = softmax_rows(&logits)?;
    matmul(&weights, &v)
}

/// Input and attention output of one block at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    pub input: TokenMatrix,
    pub output: TokenMatrix,
}

/// One denoising-loop step. `attend(b, x)` computes block `b`'s attention
/// output for input `x`; the residual and latent update are fixed.
pub fn forward_step_with<F>(
    latent: &TokenMatrix,
    num_blocks: usize,
    step_size: f64,
    mut attend: F,
) -> Result<(TokenMatrix, Vec<BlockRecord>)>
where
    F: FnMut(usize, &TokenMatrix) -> Result<TokenMatrix>,
{
    let mut state = latent.clone();
    let mut records = Vec::with_capacity(num_blocks);
    for b in 0..num_blocks {
        let output = attend(b, &state)?;
        if output.shape() != state.shape() {
            return Err(Error::shape(format!(
                "block {b} returned {:?} for input {:?}",
                output.shape(),
                state.shape()
            )));
        }
        let next = state.add(&output)?;
        records.push(BlockRecord {
            input: state,
            output,
        });
        state = next;
    }
    let new_latent = latent.lerp(&rms_normalize_rows(&state), step_size)?;
    Ok((new_latent, records))
}

/// Scales every row to unit root-mean-square; all-zero rows stay zero.
///
/// Without this the residual stream grows geometrically: larger activations
/// sharpen the softmax, which enlarges the attention output, which feeds the
/// next residual. Normalising the update target keeps the latent on a bounded
/// shell, like a real sampler's latent, while the step size still controls how
/// far it moves per step.
pub fn rms_normalize_rows(m: &TokenMatrix) -> TokenMatrix {
    let mut out = m.clone();
    let cols = m.cols() as f64;
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let ms = row.iter().fold(0.0, |acc, v| acc + v * v) / cols;
        if ms > 0.0 {
            let inv = 1.0 / ms.sqrt();
            row.iter_mut().for_each(|v| *v *= inv);
        }
    }
    out
}

/// Dense forward step.
pub fn forward_step(
    latent: &TokenMatrix,
    model: &ModelParams,
    config: &ModelConfig,
) -> Result<(TokenMatrix, Vec<BlockRecord>)> {
    if latent.shape() != (config.num_tokens, config.hidden_dim) {
        return Err(Error::shape(format!(
            "latent {:?} does not match config ({}, {})",
            latent.shape(),
            config.num_tokens,
            config.hidden_dim
        )));
    }
    forward_step_with(latent, model.blocks.len(), config.step_size, |b, x| {
        attention_block(x, &model.blocks[b])
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub latent_before: TokenMatrix,
    pub latent_after: TokenMatrix,
    pub blocks: Vec<BlockRecord>,
}

/// Everything a dense run produced, indexed `[t][b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub config: ModelConfig,
    pub steps: Vec<StepRecord>,
    /// Attention FLOPs per `[t][b]`.
    pub attention_flops: Vec<Vec<u64>>,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.steps.first().map(|s| s.blocks.len()).unwrap_or(0)
    }

    pub fn input(&self, t: usize, b: usize) -> &TokenMatrix {
        &self.steps[t].blocks[b].input
    }

    pub fn output(&self, t: usize, b: usize) -> &TokenMatrix {
        &self.steps[t].blocks[b].output
    }

    pub fn final_latent(&self) -> &TokenMatrix {
        &self.steps.last().expect("trajectory has steps").latent_after
    }

    pub fn total_attention_flops(&self) -> u64 {
        self.attention_flops.iter().flatten().sum()
    }
}

/// Runs `T` dense steps from the seeded initial latent.
pub fn run_dense(config: &ModelConfig) -> Result<Trajectory> {
    let params = init_model(config)?;
    run_dense_with(config, &params)
}

/// [`run_dense`] with already-initialised weights.
pub fn run_dense_with(config: &ModelConfig, params: &ModelParams) -> Result<Trajectory> {
    let mut latent = initial_latent(config)?;
    let per_call = flops_attention(config.num_tokens, config.hidden_dim);
    let mut steps = Vec::with_capacity(config.num_steps);
    for _ in 0..config.num_steps {
        let (next, blocks) = forward_step(&latent, params, config)?;
        steps.push(StepRecord {
            latent_before: latent,
            latent_after: next.clone(),
            blocks,
        });
        latent = next;
    }
    Ok(Trajectory {
        config: config.clone(),
        steps,
        attention_flops: vec![vec![per_call; config.num_blocks]; config.num_steps],
    })
}

/// Mean over tokens of `||after_i - before_i|| / ||before_i||`.
pub fn mean_relative_change(before: &TokenMatrix, after: &TokenMatrix) -> f64 {
    let mut total = 0.0;
    for (b, a) in before.row_iter().zip(after.row_iter()) {
        let num: f64 = b.iter().zip(a).map(|(x, y)| (y - x) * (y - x)).sum();
        let den: f64 = b.iter().map(|x| x * x).sum();
        total += if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    }
    total / before.rows().max(1) as f64
}
