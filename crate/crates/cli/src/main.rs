use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use shapevar::cli_reports::{
    self as reports, exit, CommandOutput, EvalArgs, GridSpec, ModeSelection, OutputFormat, SweepArgs, SweepConfig,
    VerifyArgs, VerifyTarget,
};
use shapevar::Error;

#[derive(Parser)]
#[command(
    name = "shapevar",
    version,
    about = "Second variations of p-capacity, q-torsion and their product at the ball"
)]
struct Cli {
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Add wall time and thread count to the report.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Values and first/second variations for one spectrum.
    Eval(EvalCli),
    /// Verdict of the ball for the product over a (d, p, q) grid.
    Classify(ClassifyCli),
    /// Compare a closed form against the d = 3 brute-force oracle.
    Verify(VerifyCli),
    /// Paper-literal constants against recomputed ones.
    Errata,
    /// Second variations of a fixed spectrum over a (d, p, q) grid.
    Sweep(SweepCli),
}

#[derive(Args)]
struct EvalCli {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    #[arg(long = "R", default_value_t = 1.0)]
    radius: f64,
    /// `k:coeff` or `k:m:coeff`, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    modes: String,
    #[arg(long, default_value = "both")]
    mode: ModeSelection,
}

#[derive(Args)]
struct GridCli {
    /// Comma-separated dimensions.
    #[arg(long = "d-list", value_delimiter = ',', default_values_t = [3usize, 4, 5, 6, 7])]
    d_list: Vec<usize>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    p_step: f64,
    /// Explicit p values; overrides the range.
    #[arg(long, value_delimiter = ',')]
    p_list: Option<Vec<f64>>,
    #[arg(long)]
    q_min: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    q_max: f64,
    #[arg(long, default_value_t = 0.05)]
    q_step: f64,
    #[arg(long, value_delimiter = ',')]
    q_list: Option<Vec<f64>>,
    #[arg(long, default_value_t = 64)]
    k_max: usize,
    #[arg(long, default_value = "paper")]
    mode: ModeSelection,
    #[arg(long, default_value = "json")]
    format: FormatArg,
    /// Gap kept from the open ends p = 1, p = d and q = 1.
    #[arg(long, default_value_t = 1e-3)]
    margin: f64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl GridCli {
    fn config(&self, thresholds: bool) -> SweepConfig {
        let grid = |list: &Option<Vec<f64>>, min, max, step| match list {
            Some(v) => GridSpec::List(v.clone()),
            None => GridSpec::Range { min, max, step },
        };
        SweepConfig {
            d_list: self.d_list.clone(),
            p_grid: grid(&self.p_list, self.p_min, self.p_max, self.p_step),
            q_grid: grid(&self.q_list, self.q_min, Some(self.q_max), self.q_step),
            k_max: self.k_max,
            mode: self.mode,
            format: match self.format {
                FormatArg::Json => OutputFormat::Json,
                FormatArg::Csv => OutputFormat::Csv,
            },
            margin: self.margin,
            thresholds,
        }
    }
}

#[derive(Args)]
struct ClassifyCli {
    #[command(flatten)]
    grid: GridCli,
    /// Skip the p*, q-, q+ search.
    #[arg(long)]
    no_thresholds: bool,
    /// Also write (d, mode, p, q, Z2, verdict) as CSV to this path.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCli {
    #[command(flatten)]
    grid: GridCli,
    #[arg(long = "R", default_value_t = 1.0)]
    radius: f64,
    #[arg(long, allow_hyphen_values = true)]
    modes: String,
}

#[derive(Args)]
struct VerifyCli {
    #[arg(long)]
    target: VerifyTarget,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Largest t·sup|ρ| of the difference steps (step t for `jacobian`).
    #[arg(long)]
    amplitude: Option<f64>,
    /// Harmonic truncation degree of the collocation solvers.
    #[arg(long = "L")]
    l_max: Option<usize>,
    /// Decreasing difference steps, comma separated.
    #[arg(long, value_delimiter = ',')]
    fd_steps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 20240)]
    seed: u64,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<CommandOutput, Error> {
    match &cli.command {
        Command::Eval(a) => reports::cmd_eval(&EvalArgs {
            d: a.d,
            p: a.p,
            q: a.q,
            radius: a.radius,
            modes: a.modes.clone(),
            mode: a.mode,
        }),
        Command::Classify(a) => {
            let cfg = a.grid.config(!a.no_thresholds);
            let out = reports::cmd_classify(&cfg)?;
            if let Some(path) = &a.emit_plot_data {
                let rows = reports::classify_grid(&SweepConfig { thresholds: false, ..cfg })?.rows;
                let csv = reports::plot_data_csv(&rows)?;
                std::fs::write(path, csv).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
            }
            Ok(out)
        }
        Command::Verify(a) => {
            let mut args = VerifyArgs::new(a.target, a.k);
            args.amplitude = a.amplitude;
            args.l_max = a.l_max;
            args.fd_steps = a.fd_steps.clone();
            args.samples = a.samples;
            args.seed = a.seed;
            reports::cmd_verify(&args)
        }
        Command::Errata => reports::cmd_errata(),
        Command::Sweep(a) => {
            reports::cmd_sweep(&SweepArgs { grid: a.grid.config(false), radius: a.radius, modes: a.modes.clone() })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    if let Err(e) = reports::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit::BAD_INPUT as u8);
    }
    let out = match run(&cli) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(reports::exit_code_for(&e) as u8);
        }
    };
    let envelope = if cli.timing { out.envelope.with_timing(start) } else { out.envelope };
    let text = out.csv.unwrap_or_else(|| envelope.to_json());
    for flag in &envelope.flags {
        eprintln!("flag: {flag}");
    }
    if let Err(msg) = write_output(cli.out.as_deref(), &text) {
        eprintln!("error: {msg}");
        return ExitCode::from(exit::BAD_INPUT as u8);
    }
    ExitCode::from(out.exit_code as u8)
}
