use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glvortex::diagnostics::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "glvortex", version, about = "Vortex profiles, linearized spectra and gluing runs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the radial one-vortex profile.
    Profile {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        rmax: Option<f64>,
        #[arg(long, default_value_t = 4001)]
        nodes: usize,
        #[arg(long, default_value = "out/profile")]
        out: PathBuf,
    },
    /// Kernel and spectral gap of the gauge-fixed linearization on a square.
    Kernel {
        #[arg(long)]
        epsilon: f64,
        /// Half-width and spacing, as `R,H`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [15.0, 0.1])]
        grid: Vec<f64>,
        #[arg(long, default_value = "out/kernel")]
        out: PathBuf,
    },
    /// Inverse estimate on the complement of the kernel for several scales.
    ModelOp {
        #[arg(long, value_delimiter = ',', required = true)]
        epsilon_list: Vec<f64>,
        #[arg(long, default_value = "out/model-op")]
        out: PathBuf,
    },
    /// Gluing solve from a JSON config.
    Glue {
        #[arg(long)]
        config: PathBuf,
    },
    /// Scale sweep of gluing solves from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn from_file(path: &PathBuf, expected: Command) -> glvortex::Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    if cfg.command != expected {
        return Err(glvortex::GlError::Config {
            path: "command".into(),
            message: format!("expected `{}`, found `{}`", expected.name(), cfg.command.name()),
        });
    }
    Ok(cfg)
}

fn build(cmd: Cmd) -> glvortex::Result<RunConfig> {
    Ok(match cmd {
        Cmd::Profile { epsilon, rmax, nodes, out } => {
            let mut c = RunConfig::new(Command::Profile, out);
            c.epsilon = Some(epsilon);
            c.grid.r_max = rmax;
            c.grid.nodes = nodes;
            c
        }
        Cmd::Kernel { epsilon, grid, out } => {
            let mut c = RunConfig::new(Command::Kernel, out);
            c.epsilon = Some(epsilon);
            c.grid.r = grid[0];
            c.grid.h = grid[1];
            c
        }
        Cmd::ModelOp { epsilon_list, out } => {
            let mut c = RunConfig::new(Command::ModelOp, out);
            c.epsilons = epsilon_list;
            c
        }
        Cmd::Glue { config } => from_file(&config, Command::Glue)?,
        Cmd::Sweep { config } => from_file(&config, Command::Sweep)?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = build(cli.command).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(o) => {
            for c in &o.manifest.checks {
                println!("{:<5} {:<40} {:>14.6e}  {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.value, c.limit);
            }
            println!("manifest: {}", o.manifest_path.display());
            if o.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
