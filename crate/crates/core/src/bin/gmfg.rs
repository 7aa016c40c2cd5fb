use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmfg::cli::{self, Command, RunOptions};

#[derive(Parser)]
#[command(name = "gmfg", version, about = "Graphon mean field game solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write particle or agent trajectories.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Linear-quadratic game: Riccati path and mean-field fixed point.
    SolveLq(Common),
    /// Nonlinear game by Picard iteration.
    SolveGmfg(Common),
    /// Finite-population epsilon-Nash experiment.
    SimulateEnash {
        #[command(flatten)]
        common: Common,
        /// Rungs as `MxSIZE` pairs, e.g. `2x25,4x50,8x100`.
        #[arg(long)]
        ladder: Option<String>,
    },
    /// Step-graphon convergence diagnostics.
    GraphonDiag(Common),
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (cmd, common, ladder) = match args.cmd {
        Cmd::SolveLq(c) => (Command::SolveLq, c, None),
        Cmd::SolveGmfg(c) => (Command::SolveGmfg, c, None),
        Cmd::SimulateEnash { common, ladder } => (Command::SimulateEnash, common, ladder),
        Cmd::GraphonDiag(c) => (Command::GraphonDiag, c, None),
    };
    let result = (|| {
        if common.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(common.threads)
                .build_global()
                .map_err(|e| gmfg::Error::Config(e.to_string()))?;
        }
        let ladder = ladder.as_deref().map(cli::parse_ladder).transpose()?;
        let scenario = cli::parse_scenario(&common.config)?;
        let opts =
            RunOptions { dump_paths: common.dump_paths, ladder, timing: std::env::var_os("GMFG_TIMING").is_some() };
        cli::dispatch(cmd, &scenario, &common.out, &opts)
    })();
    let code = cli::exit_code(&result);
    match &result {
        Err(e) => eprintln!("gmfg {}: {e}", cmd.name()),
        Ok(c) if *c != 0 => eprintln!("gmfg {}: stopped without convergence, see trace.json", cmd.name()),
        Ok(_) => {}
    }
    ExitCode::from(code as u8)
}
