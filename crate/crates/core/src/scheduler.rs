//! Assigns timesteps to Matching, Reduction, or plain dense roles from the
//! per-timestep maximum reuse intervals.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmr::{csv_error, MaxIntervals};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Dense computation; pair sets are recomputed from this step's outputs.
    Match,
    /// Reduced computation reusing the latest pair sets.
    Reduce,
    /// Dense computation without matching bookkeeping.
    Full,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Match => "match",
            Role::Reduce => "reduce",
            Role::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub num_steps: usize,
    pub match_steps: Vec<usize>,
    pub reduce_steps: Vec<usize>,
    pub full_steps: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRow {
    t: usize,
    role: Role,
}

impl Schedule {
    /// Every step a Matching step: a dense run with matching bookkeeping.
    pub fn all_match(num_steps: usize) -> Self {
        Schedule {
            num_steps,
            match_steps: (0..num_steps).collect(),
            reduce_steps: Vec::new(),
            full_steps: Vec::new(),
        }
    }

    /// Role of `t`, or `None` if no list contains it.
    pub fn role(&self, t: usize) -> Option<Role> {
        if self.match_steps.binary_search(&t).is_ok() {
            Some(Role::Match)
        } else if self.reduce_steps.binary_search(&t).is_ok() {
            Some(Role::Reduce)
        } else if self.full_steps.binary_search(&t).is_ok() {
            Some(Role::Full)
        } else {
            None
        }
    }

    pub fn roles(&self) -> Result<Vec<Role>> {
        (0..self.num_steps)
            .map(|t| {
                self.role(t)
                    .ok_or_else(|| Error::internal(format!("timestep {t} has no role")))
            })
            .collect()
    }

    pub fn from_roles(roles: &[Role]) -> Self {
        let pick = |want: Role| {
            roles
                .iter()
                .enumerate()
                .filter(|(_, &r)| r == want)
                .map(|(t, _)| t)
                .collect()
        };
        Schedule {
            num_steps: roles.len(),
            match_steps: pick(Role::Match),
            reduce_steps: pick(Role::Reduce),
            full_steps: pick(Role::Full),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let roles = self.roles()?;
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (t, role) in roles.into_iter().enumerate() {
            w.serialize(ScheduleRow { t, role }).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut roles = Vec::new();
        for row in r.deserialize() {
            let row: ScheduleRow = row.map_err(|e| csv_error(path, e))?;
            if row.t != roles.len() {
                return Err(Error::parse(path, format!("expected t = {}, found {}", roles.len(), row.t)));
            }
            roles.push(row.role);
        }
        Ok(Schedule::from_roles(&roles))
    }
}

/// One-step look-ahead assignment. Returns `(pre_match, reduce)`.
///
/// Step 0 always matches. Step `t >= 1` with latest match `m` becomes a
/// Matching step when its own interval `t - m` exceeds `delta_max[t]` or when
/// the next step's interval `t + 1 - m` would exceed `delta_max[t + 1]`;
/// otherwise it reduces. The last step has no successor and is judged by its
/// own interval only.
pub fn assign_steps(delta_max: &MaxIntervals, num_steps: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_steps < 1 {
        return Err(Error::config("schedule needs at least one timestep"));
    }
    if delta_max.len() < num_steps {
        return Err(Error::config(format!(
            "{} max intervals for {num_steps} timesteps",
            delta_max.len()
        )));
    }
    let mut pre_match = vec![0];
    let mut reduce = Vec::new();
    let mut latest = 0;
    for t in 1..num_steps {
        let own_ok = t - latest <= delta_max.get(t);
        let next_ok = t + 1 == num_steps || t + 1 - latest <= delta_max.get(t + 1);
        if own_ok && next_ok {
            reduce.push(t);
        } else {
            pre_match.push(t);
            latest = t;
        }
    }
    Ok((pre_match, reduce))
}

/// Keeps only the last step of every run of consecutive Matching steps; the
/// dropped ones become plain dense steps. Returns `(match_steps, full_steps)`.
pub fn collapse_consecutive(pre_match: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if pre_match.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::internal("matching steps must be strictly ascending"));
    }
    let mut kept = Vec::new();
    let mut full = Vec::new();
    for (i, &t) in pre_match.iter().enumerate() {
        match pre_match.get(i + 1) {
            Some(&next) if next == t + 1 => full.push(t),
            _ => kept.push(t),
        }
    }
    Ok((kept, full))
}

/// [`assign_steps`] followed by [`collapse_consecutive`].
pub fn build_schedule(delta_max: &MaxIntervals, num_steps: usize) -> Result<Schedule> {
    let (pre_match, reduce_steps) = assign_steps(delta_max, num_steps)?;
    let (match_steps, full_steps) = collapse_consecutive(&pre_match)?;
    Ok(Schedule {
        num_steps,
        match_steps,
        reduce_steps,
        full_steps,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Timestep missing from every list, listed twice, or out of range.
    Coverage { t: usize },
    /// Reduction step with no earlier Matching step.
    NoMatch { t: usize },
    /// Reduction step too far from its Matching step.
    Interval { t: usize, gap: usize, bound: usize },
    /// Two adjacent Matching steps.
    Consecutive { t: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Coverage { t } => write!(f, "t={t}: not covered exactly once"),
            Violation::NoMatch { t } => write!(f, "t={t}: reduction before any matching step"),
            Violation::Interval { t, gap, bound } => {
                write!(f, "t={t}: reuse interval {gap} exceeds bound {bound}")
            }
            Violation::Consecutive { t } => write!(f, "t={t}: follows another matching step"),
        }
    }
}

/// Every broken schedule invariant; empty when the schedule is valid.
pub fn validate_schedule(schedule: &Schedule, delta_max: &MaxIntervals) -> Vec<Violation> {
    let n = schedule.num_steps;
    let mut out = Vec::new();
    let mut seen = vec![0usize; n];
    let mut stray = Vec::new();
    for &t in schedule
        .match_steps
        .iter()
        .chain(&schedule.reduce_steps)
        .chain(&schedule.full_steps)
    {
        match seen.get_mut(t) {
            Some(c) => *c += 1,
            None => stray.push(t),
        }
    }
    out.extend(
        seen.iter()
            .enumerate()
            .filter(|(_, &c)| c != 1)
            .map(|(t, _)| Violation::Coverage { t }),
    );
    out.extend(stray.into_iter().map(|t| Violation::Coverage { t }));

    let mut matches = schedule.match_steps.clone();
    matches.sort_unstable();
    for w in matches.windows(2) {
        if w[1] == w[0] + 1 {
            out.push(Violation::Consecutive { t: w[1] });
        }
    }
    for &t in &schedule.reduce_steps {
        let governing = matches.iter().copied().filter(|&m| m < t).max();
        match governing {
            None => out.push(Violation::NoMatch { t }),
            Some(m) => {
                let bound = delta_max.0.get(t).copied().unwrap_or(0);
                if t - m > bound {
                    out.push(Violation::Interval { t, gap: t - m, bound });
                }
            }
        }
    }
    out
}
