//! Brute-force reference implementations. They deliberately avoid the
//! crate's matching, PMR and scheduling code: only data types and the model
//! itself are shared.
#![allow(dead_code)]

use dito::linalg::{Matrix, Metric};
use dito::matching::{Pair, PairSet, Partition};
use dito::model::Trajectory;
use dito::pmr::MaxIntervals;
use dito::scheduler::Schedule;
use rand::Rng;

fn pair_similarity(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => {
            let mut ab = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            for i in 0..a.len() {
                ab += a[i] * b[i];
            }
            for v in a {
                aa += v * v;
            }
            for v in b {
                bb += v * v;
            }
            let denom = aa.sqrt() * bb.sqrt();
            if denom > 0.0 {
                ab / denom
            } else {
                0.0
            }
        }
        Metric::NegSqDist => {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += (a[i] - b[i]) * (a[i] - b[i]);
            }
            -s
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// For every source: best destination by exhaustive scan, ties to the
/// smallest destination position. Returns `(src, best_dst, score)`.
pub fn oracle_best(feats: &Matrix, partition: &Partition, metric: Metric) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for &s in &partition.src {
        let mut best: Option<(usize, f64)> = None;
        for &d in &partition.dst {
            let v = pair_similarity(feats.row(d), feats.row(s), metric);
            best = match best {
                None => Some((d, v)),
                Some((bd, bv)) if v > bv || (v == bv && d < bd) => Some((d, v)),
                keep => keep,
            };
        }
        let (d, v) = best.expect("at least one destination");
        out.push((s, d, v));
    }
    out
}

/// Exhaustive matching: `min(floor(r n), |S|)` sources with the highest
/// best-destination score, ties to the smaller source position.
pub fn oracle_match(feats: &Matrix, partition: &Partition, ratio: f64, metric: Metric) -> PairSet {
    let n = feats.rows();
    let k = ((ratio * n as f64).floor() as usize).min(partition.src.len());
    let mut all = oracle_best(feats, partition, metric);
    // Insertion sort keeps the oracle free of library ordering helpers.
    for i in 1..all.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (all[j - 1], all[j]);
            let b_first = b.2 > a.2 || (b.2 == a.2 && b.0 < a.0);
            if !b_first {
                break;
            }
            all.swap(j - 1, j);
            j -= 1;
        }
    }
    PairSet {
        pairs: all[..k].iter().map(|&(s, d, _)| Pair { dst: d, src: s }).collect(),
        ratio,
    }
}

/// Sum of the `k` smallest per-source copy costs `min_d ||y_s - y_d||^2`:
/// the least error copy-recovery can reach when `k` sources are dropped.
pub fn oracle_min_recovery(y: &Matrix, partition: &Partition, k: usize) -> f64 {
    let mut mins: Vec<f64> = partition
        .src
        .iter()
        .map(|&s| {
            partition
                .dst
                .iter()
                .map(|&d| sq_dist(y.row(s), y.row(d)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    mins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mins[..k].iter().sum()
}

/// Top-k destinations of source `s` by exhaustive ranking.
fn oracle_topk(feats: &Matrix, partition: &Partition, s: usize, k: usize, metric: Metric) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = partition
        .dst
        .iter()
        .map(|&d| (pair_similarity(feats.row(d), feats.row(s), metric), d))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored[..k].iter().map(|&(_, d)| d).collect()
}

/// `PMR(t, b, delta)` averaged over trajectories, recomputed from scratch.
pub fn oracle_pmr(
    trajectories: &[Trajectory],
    partition: &Partition,
    k: usize,
    metric: Metric,
    t: usize,
    b: usize,
    delta: usize,
) -> f64 {
    let mut total = 0.0;
    for traj in trajectories {
        let golden = oracle_best(traj.output(t, b), partition, metric);
        let feats = if delta == 0 {
            traj.input(t, b)
        } else {
            traj.output(t - delta, b)
        };
        let mut hits = 0;
        for &(s, g, _) in &golden {
            if oracle_topk(feats, partition, s, k, metric).contains(&g) {
                hits += 1;
            }
        }
        total += hits as f64 / golden.len() as f64;
    }
    total / trajectories.len() as f64
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum R {
    M,
    Red,
    F,
}

/// Step assignment simulated directly from its rules: step 0 matches; a later
/// step matches if its own reuse interval or the next step's would exceed the
/// bound, otherwise it reduces; the last step only checks itself. Then every
/// Matching step immediately followed by another becomes a full step.
pub fn oracle_schedule(delta_max: &MaxIntervals, num_steps: usize) -> Schedule {
    let dm = &delta_max.0;
    let mut roles = vec![R::M; num_steps];
    let mut anchor = 0;
    for t in 1..num_steps {
        let ok_here = t - anchor <= dm[t];
        let ok_next = if t == num_steps - 1 {
            true
        } else {
            t + 1 - anchor <= dm[t + 1]
        };
        if ok_here && ok_next {
            roles[t] = R::Red;
        } else {
            roles[t] = R::M;
            anchor = t;
        }
    }
    for t in 0..num_steps.saturating_sub(1) {
        if roles[t] == R::M && roles[t + 1] == R::M {
            roles[t] = R::F;
        }
    }
    let pick = |want: R| (0..num_steps).filter(|&t| roles[t] == want).collect();
    Schedule {
        num_steps,
        match_steps: pick(R::M),
        reduce_steps: pick(R::Red),
        full_steps: pick(R::F),
    }
}

/// Random `side^2 x d` matrix; some rows are copies of others so ties occur.
pub fn random_feats(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    for i in 0..n {
        if rng.random_bool(0.15) {
            let j = rng.random_range(0..n);
            rows[i] = rows[j].clone();
        }
    }
    Matrix::from_rows(&rows).unwrap()
}

/// FNV-1a, for fingerprinting output files in fixtures.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
