use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dito::commands;
use dito::pipeline::Variant;

#[derive(Parser)]
#[command(name = "dito", version, about = "Token-reduction experiments on a toy diffusion transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    Dense,
    Dito,
    InputBaseline,
    OutputOracle,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Dense => Variant::Dense,
            VariantArg::Dito => Variant::Dito,
            VariantArg::InputBaseline => Variant::InputBaseline,
            VariantArg::OutputOracle => Variant::OutputOracle,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the PMR table, maximum reuse intervals and schedule.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute one pipeline variant.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "dito")]
        variant: VariantArg,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Input- vs output-based recovery error on dense trajectories.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Number of evaluation seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate every result.json under a directory.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Usage mistakes are user errors (1); clap's own default would be 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Calibrate { config, out } => commands::cmd_calibrate(&config, out.as_deref()).map(|cal| {
            println!(
                "schedule: {} match, {} reduce, {} full",
                cal.schedule.match_steps.len(),
                cal.schedule.reduce_steps.len(),
                cal.schedule.full_steps.len()
            );
        }),
        Command::Run {
            config,
            variant,
            schedule,
            out,
        } => commands::cmd_run(&config, variant.into(), schedule.as_deref(), out.as_deref()).map(|r| {
            println!(
                "{}: {} FLOPs, mean recovery error {:.6}",
                r.variant(),
                r.flops.total(),
                r.mean_recovery_error()
            );
        }),
        Command::Compare { config, seeds, out } => commands::cmd_compare(&config, seeds, out.as_deref()).map(|s| {
            println!(
                "{} samples, below diagonal {:.4}",
                s.samples, s.below_diagonal_fraction
            );
        }),
        Command::Report { dir, out } => commands::cmd_report(&dir, out.as_deref()).map(|r| print!("{}", r.render_table())),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
