use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use legible::config::{FileConfig, Overrides};
use legible::{cmd_report, cmd_run, cmd_solve};

#[derive(Parser)]
#[command(name = "legible", version, about = "Legible leader/follower experiments on gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and cache policies for every configured grid.
    Solve(RunArgs),
    /// Run the paired experiment and write episodes.csv, summary.json and manifest.json.
    Run(RunArgs),
    /// Rebuild plot tables from an episodes CSV.
    Report {
        dataset: PathBuf,
        /// Directory for the table files; tables are printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// foraging or pursuit.
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated grid sides.
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<u8>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated conditions (optimal, legible).
    #[arg(long, value_delimiter = ',')]
    condition: Option<Vec<String>>,
    #[arg(long)]
    beta: Option<f64>,
    /// Allow exact pursuit solves above 10×10.
    #[arg(long)]
    allow_large: bool,
}

impl RunArgs {
    fn resolve(self) -> Result<legible::config::RunConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        file.resolve(&Overrides {
            environment: self.env,
            grid_sizes: self.grids,
            episodes: self.episodes,
            master_seed: self.seed,
            out_dir: self.out,
            conditions: self.condition,
            beta: self.beta,
            allow_large: self.allow_large,
        })
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve(args) => {
            for c in cmd_solve(&args.resolve()?)? {
                println!("grid {}: {:?} {}", c.grid, c.status, c.path.display());
            }
        }
        Command::Run(args) => {
            let rc = args.resolve()?;
            let out = cmd_run(&rc)?;
            for r in &out.report.rows {
                println!(
                    "grid {} {}: legible {:.3} ± {:.3} (n={}), optimal {:.3} ± {:.3} (n={}), U={} p={:.4}",
                    r.grid,
                    r.metric.name(),
                    r.legible.mean,
                    r.legible.se,
                    r.legible.n,
                    r.optimal.mean,
                    r.optimal.se,
                    r.optimal.n,
                    r.test.u,
                    r.test.p
                );
            }
            println!("wrote {}", rc.out_dir.display());
        }
        Command::Report { dataset, out } => {
            let rep = cmd_report(&dataset, out.as_deref())?;
            let env = rep.environment.as_deref().unwrap_or("dataset");
            for (m, t) in &rep.tables {
                println!("# {env} {}\n{t}", m.name());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
