//! `anyonforge`: command-line front end.
//!
//! Exit codes: 0 when every verdict passes, 1 on a failed check or a
//! numerical error, 2 on usage or input errors.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{Format, Settings, CONFIG_ENV};
use report::RunReport;

#[derive(Parser, Debug)]
#[command(
    name = "anyonforge",
    version,
    about = "Flat connections, PMPOs, modular invariants and tube algebras"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Output format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// RNG seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Entry cap for modular invariant enumeration.
    #[arg(long, global = true)]
    cap: Option<u64>,
    /// Maximum closure rounds when building connection families.
    #[arg(long, global = true)]
    depth_cap: Option<usize>,
    /// TOML config file (overrides $ANYONFORGE_CONFIG; flags override both).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    tol_biunitary: Option<f64>,
    #[arg(long, global = true)]
    tol_flat: Option<f64>,
    #[arg(long, global = true)]
    tol_pf: Option<f64>,
    /// Distance of a PMPO trace from the nearest integer.
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    #[arg(long, global = true)]
    tol_projector: Option<f64>,
    #[arg(long, global = true)]
    tol_tube: Option<f64>,
    /// Random vectors for matrix-free projector checks.
    #[arg(long, global = true)]
    spot_samples: Option<usize>,
    /// Add elapsed milliseconds to the report (breaks byte-identical output).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Graph utilities.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Bi-unitary connections.
    #[command(subcommand)]
    Conn(ConnCmd),
    /// Bratteli diagram of the string algebras.
    Bratteli {
        #[arg(long)]
        dynkin: String,
        #[arg(long)]
        kmax: usize,
    },
    /// Projector MPO of the flat A_n family.
    Pmpo {
        #[arg(long)]
        dynkin: String,
        #[arg(long)]
        k: usize,
        /// Comma-separated: trace, projector.
        #[arg(long, value_delimiter = ',', default_value = "trace")]
        report: Vec<String>,
        /// Write the site tensor as JSON.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Modular invariants.
    #[command(subcommand)]
    Modinv(ModinvCmd),
    /// Tube algebras and anyons.
    #[command(subcommand)]
    Tube(TubeCmd),
    /// Run the acceptance checks.
    VerifyAll {
        /// Smaller parameter ranges at the same tolerances.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Subcommand, Debug)]
enum GraphCmd {
    /// Perron-Frobenius data.
    Pf {
        #[arg(long)]
        dynkin: String,
        /// Distinguished vertex label.
        #[arg(long)]
        star: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum ConnCmd {
    /// Flat connection on A_n.
    Make {
        #[arg(long)]
        dynkin: String,
        /// Write the connection JSON here instead of into the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bi-unitarity (and optionally flatness) of a connection file.
    Check {
        file: PathBuf,
        #[arg(long)]
        flat: bool,
        /// Largest rectangle for the flatness test, e.g. 4x4.
        #[arg(long, default_value = "4x4")]
        rect: String,
    },
}

#[derive(Subcommand, Debug)]
enum ModinvCmd {
    /// All modular invariants up to the entry cap.
    Enumerate {
        #[arg(long, conflicts_with = "md", required_unless_present = "md")]
        builtin: Option<String>,
        /// Modular data JSON file.
        #[arg(long)]
        md: Option<PathBuf>,
    },
    /// Product of two invariants and its decompositions over a pool.
    Compose {
        a: PathBuf,
        b: PathBuf,
        /// Enumerate this builtin's invariants as the pool.
        #[arg(long)]
        pool_builtin: Option<String>,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct FSource {
    /// vec_zN or fibonacci.
    #[arg(long)]
    builtin: Option<String>,
    /// F-symbol JSON file.
    #[arg(long)]
    fsymbols: Option<PathBuf>,
    /// F-symbols extracted from the even part of the flat A_n family.
    #[arg(long)]
    dynkin: Option<String>,
}

#[derive(Subcommand, Debug)]
enum TubeCmd {
    /// Anyons of the tube algebra.
    Anyons {
        #[command(flatten)]
        source: FSource,
    },
    /// Compare the anyons with modular data of the expected double.
    Crosscheck {
        #[command(flatten)]
        source: FSource,
        /// Builtin name or modular data JSON file.
        #[arg(long)]
        md: String,
    },
}

/// Failure modes mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Core(#[from] anyonforge::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use anyonforge::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(E::Parameter(_) | E::UnknownBuiltin(_) | E::Io(_) | E::Json(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

fn resolve(g: &GlobalArgs) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    let path = g
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    if let Some(p) = &path {
        s.apply_file(&config::load_file(p)?);
        s.config = Some(p.clone());
    }
    macro_rules! flag {
        ($($k:ident),*) => { $( if let Some(v) = g.$k { s.$k = v; } )* };
    }
    flag!(
        format,
        seed,
        depth_cap,
        tol_biunitary,
        tol_flat,
        tol_pf,
        tol_rank,
        tol_projector,
        tol_tube,
        spot_samples
    );
    if g.cap.is_some() {
        s.cap = g.cap;
    }
    Ok(s)
}

fn run(cli: Cli, argv: Vec<String>) -> Result<RunReport, CliError> {
    let settings = resolve(&cli.global)?;
    let t0 = Instant::now();
    let out = commands::dispatch(&cli.cmd, &settings)?;
    let (mut report, table) = RunReport::new(argv, settings.clone(), out);
    if cli.global.timing {
        report.elapsed_ms = Some(t0.elapsed().as_millis());
    }
    print!("{}", report.render(settings.format, table.as_deref()));
    Ok(report)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(move || run(cli, argv)) {
        Ok(Ok(report)) => {
            let failed: Vec<String> = report
                .failures()
                .map(|v| match v.residual {
                    Some(r) => format!("{} (residual {r:.3e})", v.name),
                    None => v.name.clone(),
                })
                .collect();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed: {}", failed.join(", "));
                ExitCode::from(1)
            }
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(1)
        }
    }
}
