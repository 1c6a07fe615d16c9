//! Turning maximum reuse intervals into Matching / Reduction / full steps.

use dito::prelude::*;
use dito::scheduler::{assign_steps, collapse_consecutive};

fn show(delta_max: &[usize]) -> dito::Result<()> {
    let dm = MaxIntervals(delta_max.to_vec());
    let (pre, reduce) = assign_steps(&dm, dm.len())?;
    let (matched, full) = collapse_consecutive(&pre)?;
    println!("delta_max {delta_max:?}");
    println!("  pre-match {pre:?} reduce {reduce:?}");
    println!("  match {matched:?} full {full:?}");
    let s = build_schedule(&dm, dm.len())?;
    let line: String = s
        .roles()?
        .iter()
        .map(|r| match r.to_string().as_str() {
            "match" => 'M',
            "reduce" => 'r',
            _ => 'F',
        })
        .collect();
    println!("  {line}  violations: {}", validate_schedule(&s, &dm).len());
    Ok(())
}

fn main() -> dito::Result<()> {
    show(&[0, 1, 2, 2, 1, 2])?;
    show(&[0, 1, 1, 0, 0, 3, 3, 3])?;
    show(&[0; 5])?;
    show(&[9; 9])
}
