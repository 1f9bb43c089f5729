use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pdcsim_cli::experiment;
use pdcsim_cli::output::{CliError, OutputFormat};
use pdcsim_cli::spec::{resolve_spec, ExperimentSpec, Overrides};

/// Monte Carlo simulator of a heralded photon-pair source with a
/// time-multiplexed photon-number-resolving herald and a lossy gated receiver.
///
/// Parameters resolve in order: built-in defaults, then the --config file, then
/// flags. Results are written to `<out>.<format>`; re-running a command with
/// the same inputs reproduces the file byte for byte except for the single
/// `generated_at` timestamp field.
#[derive(Parser)]
#[command(name = "pdcsim", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment spec file (JSON); flags override its fields
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Triggers per run
    #[arg(long, global = true)]
    triggers: Option<u64>,
    /// Output base path (extension added per --format); defaults to a
    /// mode-named file under $PDCSIM_OUT_DIR or the working directory
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Cap runs at 1e6 triggers (ignored when --triggers is given)
    #[arg(long, global = true)]
    fast: bool,
    /// Split each run into this many independent chunks
    #[arg(long, global = true)]
    partitions: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo once and write the counts table
    Simulate {
        /// Mean photon pairs per pulse (clears any configured pump power)
        #[arg(long)]
        mean_pairs: Option<f64>,
        /// Pump power in watts, mapped linearly to mean pairs
        #[arg(long)]
        power_w: Option<f64>,
        /// Channel transmission of the receiver arm
        #[arg(long)]
        eta_c: Option<f64>,
    },
    /// Write closed-form click statistics over a channel-transmission grid
    Theory {
        /// Comma-separated transmission grid (default 0.1..1.0)
        #[arg(long, value_delimiter = ',', value_name = "T1,T2,...")]
        eta_c_grid: Option<Vec<f64>>,
    },
    /// Re-derive all estimates from a counts file (.json or .csv)
    Analyze { input: PathBuf },
    /// Simulate the photon-number-splitting eavesdropper and test for it
    Attack {
        /// Transmission of the channel the eavesdropper substitutes
        #[arg(long)]
        eve_eta: Option<f64>,
        /// Minimum pair number the eavesdropper steals from
        #[arg(long)]
        steal_threshold: Option<u32>,
        /// Photons stolen per attacked pulse
        #[arg(long)]
        steal_count: Option<u32>,
        /// Skip rate mimicry (no calibrated attenuation)
        #[arg(long)]
        no_mimic: bool,
        /// False-alarm probability of the detector
        #[arg(long)]
        alpha: Option<f64>,
        /// Channel transmission of the honest receiver arm
        #[arg(long)]
        eta_c: Option<f64>,
        /// Mean photon pairs per pulse
        #[arg(long)]
        mean_pairs: Option<f64>,
    },
    /// Regenerate a reference dataset
    Reproduce {
        #[arg(value_enum)]
        target: Target,
        /// Reuse finished points from an interrupted sweep's checkpoint
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    /// Klyshko efficiencies across pump power
    Table1,
    /// Joint herald/receiver click statistics at full power
    Table2,
    /// Conditional click probabilities across channel transmission
    Fig3,
    /// Click ratios r(n) across source brightness
    Fig4,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record =
                serde_json::json!({ "error": { "kind": e.kind, "message": e.message } });
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let spec = match &cli.common.config {
        Some(path) => ExperimentSpec::from_file(path)?,
        None => ExperimentSpec::default(),
    };
    let mut ov = Overrides {
        seed: cli.common.seed,
        triggers: cli.common.triggers,
        fast: cli.common.fast,
        partitions: cli.common.partitions,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Simulate {
            mean_pairs,
            power_w,
            eta_c,
        } => {
            ov.mean_pairs = *mean_pairs;
            ov.power_w = *power_w;
            ov.eta_c = *eta_c;
        }
        Command::Theory { eta_c_grid } => {
            ov.eta_c_grid = eta_c_grid.clone();
        }
        Command::Analyze { .. } => {}
        Command::Attack {
            eve_eta,
            steal_threshold,
            steal_count,
            no_mimic,
            alpha,
            eta_c,
            mean_pairs,
        } => {
            ov.enable_attack = true;
            ov.eve_eta = *eve_eta;
            ov.steal_threshold = *steal_threshold;
            ov.steal_count = *steal_count;
            ov.no_mimic = *no_mimic;
            ov.alpha = *alpha;
            ov.eta_c = *eta_c;
            ov.mean_pairs = *mean_pairs;
        }
        Command::Reproduce { .. } => {}
    }
    let resolved = resolve_spec(spec, &ov)?;
    let format = match cli.common.format {
        Some(FormatArg::Csv) => OutputFormat::Csv,
        _ => OutputFormat::Json,
    };
    let stem = match &cli.command {
        Command::Simulate { .. } => "counts",
        Command::Theory { .. } => "theory",
        Command::Analyze { .. } => "analysis",
        Command::Attack { .. } => "attack",
        Command::Reproduce { target, .. } => match target {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Fig3 => "fig3",
            Target::Fig4 => "fig4",
        },
    };
    let out = match &cli.common.out {
        Some(path) => path.clone(),
        None => std::env::var_os("PDCSIM_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(stem),
    };
    match cli.command {
        Command::Simulate { .. } => experiment::run_simulate(resolved, &out, format),
        Command::Theory { .. } => experiment::run_theory(resolved, &out, format),
        Command::Analyze { input } => experiment::run_analyze(&input, &out, format),
        Command::Attack { .. } => experiment::run_attack(resolved, &out, format),
        Command::Reproduce { target, resume } => match target {
            Target::Table1 => experiment::reproduce_table1(resolved, &out, format, resume),
            Target::Table2 => experiment::reproduce_table2(resolved, &out, format),
            Target::Fig3 => experiment::reproduce_fig3(resolved, &out, format, resume),
            Target::Fig4 => experiment::reproduce_fig4(resolved, &out, format, resume),
        },
    }
}
