//! Input- vs output-based matching on identical dense activations: the
//! scatter of recovery errors and the share of samples where the output wins.

use dito::prelude::*;

fn main() -> dito::Result<()> {
    let seeds: Vec<u64> = (100..104).collect();
    for metric in [Metric::NegSqDist, Metric::Cosine] {
        let cfg = RunConfig {
            metric,
            ..RunConfig::default()
        };
        let cmp = compare_recovery(&cfg, &seeds)?;
        println!(
            "{:<12} samples {:>4}  e_out <= e_in: {:.3}  mean e_in {:.2}  mean e_out {:.2}  (attention also reduced: {:.3})",
            metric.as_str(),
            cmp.records.len(),
            cmp.below_diagonal_fraction(),
            cmp.mean_e_in(),
            cmp.mean_e_out(),
            cmp.attended_below_diagonal_fraction()
        );
    }
    let cmp = compare_recovery(&RunConfig::default(), &seeds[..1])?;
    cmp.write_csv(std::path::Path::new("scatter.csv"))?;
    println!("wrote scatter.csv");
    Ok(())
}
