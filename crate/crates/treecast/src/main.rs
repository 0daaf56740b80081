use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use treecast::config::ExperimentConfig;
use treecast::runner::{self, Overrides};

const LONG_ABOUT: &str = "\
Broadcast processes on trees: exact discrepancy tables, seeded Monte
Carlo estimates, and machine-checkable decay certificates.

Every run is driven by a config file of bracketed sections with
key = value lines; matrices are semicolon-separated rows. Outputs are
CSV with `#` header lines carrying the config hash and RNG name (plus
a generated_unix line unless --no-timestamp is given).

CSV columns per subcommand:
  exact      depth,atoms,discrepancy,tv_max
  simulate   estimator,instance,n_samples,mean,stderr,seed,streams
  sweep      delta,regime,k,eps,depth,atoms,discrepancy,tv_max,status
  antichain  source,lambda,size,sum,members

certify writes a certificate text file; verify re-checks one.

Exit codes: 0 success; 1 certificate or verification failure (for
example a channel above the second-eigenvalue threshold, or a decay
ratio out of bounds); 2 malformed config or usage error.";

#[derive(Parser)]
#[command(name = "treecast", version, about = "Broadcast processes on trees with noisy leaf observations", long_about = LONG_ABOUT)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override [mc] seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override [mc] streams
    #[arg(long)]
    streams: Option<u64>,
    /// Write output here instead of [output] path / stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Suppress the generated_unix header line
    #[arg(long)]
    no_timestamp: bool,
    /// Override the exact-engine atom budget
    #[arg(long, value_name = "ATOMS")]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Produce a decay certificate for the configured instance
    Certify(Common),
    /// Re-check an existing certificate file
    Verify {
        /// Certificate file to check
        cert: PathBuf,
        /// Exact-engine atom budget for the re-check
        #[arg(long, value_name = "ATOMS")]
        budget: Option<usize>,
    },
    /// Exact atom-engine tables per depth
    Exact(Common),
    /// Seeded Monte Carlo estimates
    Simulate(Common),
    /// Exact tables over the configured parameter grids
    Sweep(Common),
    /// Antichain dynamic program and cutset sums
    Antichain(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig, (i32, String)> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| (2, format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(|e| (2, e.to_string()))?;
    runner::apply_overrides(
        &mut cfg,
        &Overrides {
            seed: common.seed,
            streams: common.streams,
            out: common.out.clone(),
            no_timestamp: common.no_timestamp,
            budget: common.budget,
        },
    );
    Ok(cfg)
}

fn emit(path: Option<&Path>, content: &str) -> Result<(), (i32, String)> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| (2, format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run() -> Result<(), (i32, String)> {
    let cli = Cli::parse();
    let produce = |common: &Common,
                   f: fn(&ExperimentConfig) -> Result<String, runner::RunError>|
     -> Result<(), (i32, String)> {
        let cfg = load_config(common)?;
        let text = f(&cfg).map_err(|e| (e.exit_code(), e.to_string()))?;
        emit(cfg.out_path.as_deref(), &text)
    };
    match &cli.command {
        Command::Certify(common) => produce(common, runner::certify_text),
        Command::Exact(common) => produce(common, runner::exact_csv),
        Command::Simulate(common) => produce(common, runner::simulate_csv),
        Command::Sweep(common) => produce(common, runner::sweep_csv),
        Command::Antichain(common) => produce(common, runner::antichain_csv),
        Command::Verify { cert, budget } => {
            let text = std::fs::read_to_string(cert)
                .map_err(|e| (2, format!("cannot read {}: {e}", cert.display())))?;
            let budget = budget.unwrap_or(treecast::exact::DEFAULT_ATOM_BUDGET);
            let summary = runner::verify_text(&text, budget)
                .map_err(|e| (e.exit_code(), e.to_string()))?;
            print!("{summary}");
            Ok(())
        }
    }
}

fn main() {
    if let Err((code, message)) = run() {
        eprintln!("error: {message}");
        std::process::exit(code);
    }
}
