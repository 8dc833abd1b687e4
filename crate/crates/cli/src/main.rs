//! Command-line harness for transformed particle transport experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 1 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tparticles::config::parse_h;
use tparticles::harness::{
    converge, convergence_csv, dynamic_vs_static, field_csv, fitted_order, flow_fields_csv, particles_csv, sweep_csv,
    sweep_remap, write_atomic, Simulation,
};
use tparticles::{Error, EvalGrid, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "tparticles", version, about = "Transformed particle methods for linear transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration and write its time series.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the final density on the evaluation lattice (x,y,f).
        #[arg(long)]
        density_out: Option<PathBuf>,
    },
    /// Final errors over a list of mesh sizes.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated mesh sizes, e.g. `2^-6,2^-7,2^-8`.
        #[arg(long, default_value = "2^-6,2^-7,2^-8")]
        hs: String,
    },
    /// Final errors over static remapping periods.
    SweepRemap {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated periods in time steps.
        #[arg(long, default_value = "1,2,5,10,20,30,50")]
        periods: String,
    },
    /// Dynamic remapping thresholds compared with static periods.
    Dynamic {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated thresholds `C_remap`.
        #[arg(long, default_value = "0.2,1,5,25")]
        c_remap: String,
        /// Comma-separated static periods in time steps.
        #[arg(long, default_value = "1,2,5,10,20,30,50")]
        periods: String,
    },
    /// Velocity and exact-solution samples of a test case (x,y,u1,u2,f).
    Fields {
        #[command(flatten)]
        run: RunArgs,
        /// Sampling time (defaults to 0).
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Particle state after running to the end time.
    DumpParticles {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Run configuration flags; each mirrors a configuration-file key and
/// overrides the file.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sw-cone, sw-hump, rb-hump or nlr.
    #[arg(long)]
    case: Option<String>,
    /// tsp, fsl, ltp or qtp.
    #[arg(long)]
    method: Option<String>,
    /// m4p, b1, b3 or b5.
    #[arg(long)]
    kernel: Option<String>,
    /// direct or incremental.
    #[arg(long)]
    scheme: Option<String>,
    /// Mesh size (number, `1/N` or `2^-L`).
    #[arg(long)]
    h: Option<String>,
    /// Time step (defaults to the test case's).
    #[arg(long)]
    dt: Option<String>,
    /// never, static:N or dynamic:C.
    #[arg(long)]
    remap: Option<String>,
    /// Smoothed-particle radius exponent, `eps = h^q`.
    #[arg(long)]
    q: Option<String>,
    /// Finite-difference resolution of the flow derivatives.
    #[arg(long)]
    hprime: Option<String>,
    /// Evaluation lattice size M (M x M points).
    #[arg(long)]
    eval_grid: Option<String>,
    /// Relative weight threshold below which particles are inactive.
    #[arg(long)]
    w_tol: Option<String>,
    /// Support growth `c_s` of incremental quadratic particles.
    #[arg(long)]
    support_growth: Option<String>,
    /// Final time (defaults to the test case's).
    #[arg(long)]
    t_end: Option<String>,
    /// Remap at T/2 for reversible fields (true/false).
    #[arg(long)]
    mid_remap: Option<String>,
    /// Density sampling period in steps (0: initial and final only).
    #[arg(long)]
    log_every: Option<String>,
    /// Reserved; all algorithms are deterministic.
    #[arg(long)]
    seed: Option<String>,
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("case", &self.case),
            ("method", &self.method),
            ("kernel", &self.kernel),
            ("scheme", &self.scheme),
            ("h", &self.h),
            ("dt", &self.dt),
            ("remap", &self.remap),
            ("q", &self.q),
            ("hprime", &self.hprime),
            ("eval_grid", &self.eval_grid),
            ("w_tol", &self.w_tol),
            ("support_growth", &self.support_growth),
            ("t_end", &self.t_end),
            ("mid_remap", &self.mid_remap),
            ("log_every", &self.log_every),
            ("seed", &self.seed),
        ];
        let pairs: Vec<(String, String)> =
            flags.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
        cfg.apply(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, contents: &str) -> Result<(), Error> {
        emit(self.out.as_deref(), contents)
    }
}

fn emit(path: Option<&Path>, contents: &str) -> Result<(), Error> {
    match path {
        Some(p) => write_atomic(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn list<T>(s: &str, parse: impl Fn(&str) -> Result<T, Error>) -> Result<Vec<T>, Error> {
    s.split(',').map(|v| parse(v.trim())).collect()
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, Error> {
    v.parse().map_err(|_| Error::Config(format!("invalid list entry `{v}`")))
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { run: args, density_out } => {
            let cfg = args.config()?;
            let mut sim = Simulation::new(cfg)?;
            while !sim.is_done() {
                sim.advance()?;
            }
            if let Some(p) = density_out {
                let f = sim.density_samples()?;
                let pts = EvalGrid::new(sim.config.eval_grid)?.points();
                write_atomic(&p, &field_csv(&pts, &f))?;
            }
            let report = sim.finish()?;
            eprintln!(
                "final_error={:.6e} avg_active={:.1} remaps={} forced={} wall={:.2}s",
                report.final_error, report.avg_active, report.remap_count, report.forced_count, report.wall_time
            );
            args.emit(&report.to_csv())
        }
        Command::Converge { run: args, hs } => {
            let cfg = args.config()?;
            let rows = converge(&cfg, &list(&hs, parse_h)?)?;
            eprintln!("fitted order {:.3}", fitted_order(&rows));
            args.emit(&convergence_csv(&rows))
        }
        Command::SweepRemap { run: args, periods } => {
            let cfg = args.config()?;
            args.emit(&sweep_csv(&sweep_remap(&cfg, &list(&periods, num)?)?))
        }
        Command::Dynamic { run: args, c_remap, periods } => {
            let cfg = args.config()?;
            args.emit(&sweep_csv(&dynamic_vs_static(&cfg, &list(&c_remap, num)?, &list(&periods, num)?)?))
        }
        Command::Fields { run: args, t } => {
            let cfg = args.config()?;
            args.emit(&flow_fields_csv(&cfg.test_case(), t, &EvalGrid::new(cfg.eval_grid)?))
        }
        Command::DumpParticles { run: args } => {
            let cfg = RunConfig { log_every: Some(0), ..args.config()? };
            let mut sim = Simulation::new(cfg)?;
            while !sim.is_done() {
                sim.advance()?;
            }
            args.emit(&particles_csv(&sim.set))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Numerical(_) => 3,
                Error::Io(_) => 1,
            })
        }
    }
}
