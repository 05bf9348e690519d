use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orclf_tools::config::RunConfig;
use orclf_tools::pipeline;
use orclf_tools::ToolError;

#[derive(Parser, Debug)]
#[command(name = "orclf", version, about = "Feedback synthesis from output robust control Lyapunov functions")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `seeds.base`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build the covering and band tables and write the archive.
    Synthesize,
    /// Integrate the configured batch with the archived law.
    Simulate,
    /// Run the configured checks on a simulated batch.
    Verify {
        /// Batch directory (default: <out>/sim).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Synthesize, simulate and verify every case of `[sweep]`.
    Sweep,
}

fn run(cli: Cli) -> Result<i32, ToolError> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| ToolError::Config(format!("--jobs: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds.base = s;
    }
    let out = &cli.out;
    match cli.cmd {
        Cmd::Synthesize => {
            let s = pipeline::cmd_synthesize(&cfg, out)?;
            print!("{}", s.table);
            Ok(0)
        }
        Cmd::Simulate => {
            let s = pipeline::cmd_simulate(&cfg, out)?;
            println!("wrote {} trajectories to {}", s.written, pipeline::sim_dir(out).display());
            if s.failures.is_empty() {
                Ok(0)
            } else {
                for f in &s.failures {
                    eprintln!("{f}");
                }
                Ok(3)
            }
        }
        Cmd::Verify { dir } => {
            let dir = dir.unwrap_or_else(|| pipeline::sim_dir(out));
            let v = pipeline::cmd_verify(&cfg, out, &dir)?;
            print!("{}", v.text);
            Ok(if v.passed { 0 } else { 1 })
        }
        Cmd::Sweep => {
            let (code, text) = pipeline::cmd_sweep(&cfg, out)?;
            print!("{text}");
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
