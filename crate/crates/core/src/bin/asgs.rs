//! Batch driver: convergence studies, single runs and mesh dumps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asgs::config::RunConfig;
use asgs::mesh::{build_structured_mesh, partition_interface, Axis, Rect};
use asgs::study::{run_convergence_study, run_single};
use asgs::{Error, Result};

#[derive(Parser)]
#[command(name = "asgs", version, about = "Stabilized finite element convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every grid and write error / EOC tables.
    Study(RunArgs),
    /// Run one grid and write checkpoint, probe trace, estimator and nodal dump.
    Run(RunArgs),
    /// Write the node and element lists of a structured mesh.
    Mesh {
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Label the halves left/right of x = SPLIT as Stokes/Brinkman.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Plain-text `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// stokes | brinkman | interface
    #[arg(long)]
    case: Option<String>,
    /// galerkin | asgs
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated n of the n x n grids.
    #[arg(long)]
    grids: Option<String>,
    /// 1 for backward Euler, 0 for Crank-Nicolson
    #[arg(long)]
    theta: Option<String>,
    /// Final time
    #[arg(long)]
    t_final: Option<String>,
    /// A fixed step, or `<k>h` for `k n` steps per unit time on an n x n grid.
    #[arg(long)]
    dt: Option<String>,
    /// section5 | eq9
    #[arg(long)]
    stab_mode: Option<String>,
    /// Output directory; nothing is written without it
    #[arg(long)]
    out: Option<PathBuf>,
    /// `x,y`
    #[arg(long)]
    probe: Option<String>,
    /// Fix the pressure at one vertex (true | false)
    #[arg(long)]
    pin_pressure: Option<String>,
    /// off | on | maximum iteration count
    #[arg(long)]
    picard: Option<String>,
    /// squared | norm
    #[arg(long)]
    measure: Option<String>,
    /// Run the grids of a study concurrently.
    #[arg(long)]
    parallel_grids: bool,
    /// Use the exact solution instead of solving (single runs).
    #[arg(long)]
    exact_injection: bool,
    /// Extra `key=value` settings, as in the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("case", self.case),
            ("method", self.method),
            ("grids", self.grids),
            ("theta", self.theta),
            ("t-final", self.t_final),
            ("dt", self.dt),
            ("stab-mode", self.stab_mode),
            ("probe", self.probe),
            ("pin-pressure", self.pin_pressure),
            ("picard", self.picard),
            ("measure", self.measure),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        if let Some(out) = self.out {
            cfg.out = Some(out);
        }
        cfg.parallel_grids |= self.parallel_grids;
        cfg.exact_injection |= self.exact_injection;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ASGS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("ASGS_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Study(args) => {
            let cfg = args.into_config()?;
            let report = run_convergence_study(&cfg)?;
            print!("{}", report.table());
        }
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let run = run_single(&cfg)?;
            let e = &run.result.errors;
            println!(
                "grid {0}x{0}: combined squared error {1:.6e}, estimator {2:.6e}",
                e.grid,
                e.combined_sq(),
                run.result.estimate_sq
            );
            for f in &run.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Mesh { n, split, out } => {
            let mut mesh = build_structured_mesh(n, n, Rect::UNIT)?;
            if let Some(x) = split {
                mesh = partition_interface(mesh, Axis::X, x)?;
            }
            std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            let nodes = out.join("nodes.txt");
            let elements = out.join("elements.txt");
            let mut buf = Vec::new();
            mesh.write_nodes(&mut buf).map_err(|e| io_error(&nodes, e))?;
            std::fs::write(&nodes, &buf).map_err(|e| io_error(&nodes, e))?;
            buf.clear();
            mesh.write_elements(&mut buf).map_err(|e| io_error(&elements, e))?;
            std::fs::write(&elements, &buf).map_err(|e| io_error(&elements, e))?;
            println!("wrote {} and {}", nodes.display(), elements.display());
        }
    }
    Ok(())
}

fn io_error(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
