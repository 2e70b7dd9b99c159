use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use layerfuse_cli::{
    cmd_footprints, cmd_run, cmd_sweep_ratio, emit, exit_code, load_arch, load_workload, render_footprints,
    render_presets, render_report, render_sweep, Format,
};
use layerfuse_core::{GaParams, Objective};

#[derive(Parser)]
#[command(
    name = "layerfuse",
    version,
    about = "Search layer-fusion schedules for CNN accelerators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a workload's fusion schedule and report it against the layer-by-layer baseline.
    Run {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        ga: GaFlags,
        #[command(flatten)]
        output: Output,
        /// Write per-generation statistics as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-optimize while trading capacity between the activation and weight buffers.
    SweepRatio {
        #[command(flatten)]
        target: Target,
        /// Bytes moved per step.
        #[arg(long, default_value_t = 16 * 1024)]
        step: u64,
        /// Steps in each direction.
        #[arg(long, default_value_t = 4)]
        steps: u32,
        #[command(flatten)]
        ga: GaFlags,
        #[command(flatten)]
        output: Output,
    },
    /// Per-layer activation footprints with preset buffer capacities.
    Footprints {
        /// Descriptor file or bundled workload name.
        #[arg(long)]
        workload: String,
        #[command(flatten)]
        output: Output,
    },
    /// Print the built-in architecture presets.
    Presets {
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Target {
    /// Descriptor file or bundled workload name.
    #[arg(long)]
    workload: String,
    /// Architecture JSON file or preset name.
    #[arg(long, default_value = "simba")]
    arch: String,
}

#[derive(Args)]
struct GaFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    population: usize,
    #[arg(long, default_value_t = 10)]
    elites: usize,
    #[arg(long, default_value_t = 5)]
    random_survivors: usize,
    #[arg(long, default_value_t = 500)]
    generations: usize,
    #[arg(long, default_value_t = 1)]
    mutations: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Edp)]
    objective: ObjectiveArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Edp,
    Energy,
    Cycles,
    DramBytes,
}

impl GaFlags {
    fn params(&self) -> GaParams {
        GaParams {
            population: self.population,
            elites: self.elites,
            random_survivors: self.random_survivors,
            generations: self.generations,
            mutations: self.mutations,
            seed: self.seed,
            objective: match self.objective {
                ObjectiveArg::Edp => Objective::Edp,
                ObjectiveArg::Energy => Objective::Energy,
                ObjectiveArg::Cycles => Objective::Cycles,
                ObjectiveArg::DramBytes => Objective::DramBytes,
            },
        }
    }
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl Output {
    fn format(&self) -> Format {
        match self.format {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            target,
            ga,
            output,
            log,
        } => {
            let graph = load_workload(&target.workload)?;
            let arch = load_arch(&target.arch)?;
            let mut log = log
                .map(|p| {
                    File::create(&p)
                        .with_context(|| format!("creating {}", p.display()))
                        .map(BufWriter::new)
                })
                .transpose()?;
            let mut log_err = None;
            let report = cmd_run(&graph, &arch, &ga.params(), |stats| {
                if let Some(w) = log.as_mut() {
                    let line = serde_json::to_string(stats).expect("stats serialize");
                    if let Err(e) = writeln!(w, "{line}") {
                        log_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = log_err {
                return Err(e).context("writing optimization log");
            }
            if let Some(mut w) = log {
                w.flush().context("writing optimization log")?;
            }
            emit(&render_report(&report, output.format())?, output.out.as_deref())
        }
        Command::SweepRatio {
            target,
            step,
            steps,
            ga,
            output,
        } => {
            let graph = load_workload(&target.workload)?;
            let arch = load_arch(&target.arch)?;
            let rows = cmd_sweep_ratio(&graph, &arch, &ga.params(), step, steps)?;
            emit(&render_sweep(&rows, output.format())?, output.out.as_deref())
        }
        Command::Footprints { workload, output } => {
            let graph = load_workload(&workload)?;
            emit(
                &render_footprints(&cmd_footprints(&graph), output.format())?,
                output.out.as_deref(),
            )
        }
        Command::Presets { output } => emit(&render_presets(output.format())?, output.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
