//! `halfbridge` command-line front end.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "halfbridge", version, about = "Switched control of a half-bridge inverter: simulation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment file (`key = value` lines). Missing keys use the reference design.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory, created if needed.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub plot: bool,

    /// Assert the run uses no random numbers (always true; recorded in metrics.txt).
    #[arg(long, global = true)]
    pub seed_free: bool,

    /// Record every N-th control tick in trace.csv (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    pub decimation: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single run from the initial condition.
    Simulate,
    /// Step the load resistance during the run.
    Loadstep {
        /// Resistance after the step, ohms.
        #[arg(long, value_name = "OHM")]
        r_new: Option<f64>,
        /// Time of the step, seconds.
        #[arg(long, value_name = "S")]
        t_event: Option<f64>,
        /// Retune controller and reference to the new load.
        #[arg(long, conflicts_with = "unknown")]
        known: bool,
        /// Leave the controller tuned for the old load.
        #[arg(long)]
        unknown: bool,
    },
    /// Run one scenario per value along an axis.
    Sweep {
        /// load_r (ohm), v_m (volt) or omega (rad/s).
        #[arg(long)]
        axis: Option<String>,
        /// FROM:TO:STEP, inclusive, in the axis unit.
        #[arg(long, value_name = "FROM:TO:STEP")]
        range: Option<String>,
        /// Retune the controller at each load (load_r axis only).
        #[arg(long, conflicts_with = "no_retune")]
        retune: bool,
        /// Keep the controller tuned for the base load.
        #[arg(long)]
        no_retune: bool,
    },
    /// Droop outer loop with an amplitude setpoint step.
    Droop {
        /// Amplitude setpoint after the step, volts.
        #[arg(long, value_name = "V")]
        v_m_star_new: Option<f64>,
        /// Time of the setpoint step, seconds.
        #[arg(long, value_name = "S")]
        t_event: Option<f64>,
        /// Frequency droop gain, (rad/s)/W.
        #[arg(long)]
        k_p: Option<f64>,
        /// Amplitude droop gain, V/VAR.
        #[arg(long)]
        k_q: Option<f64>,
    },
    /// Predicted stability cutoff along an axis.
    Boundary {
        /// load_r, v_m or omega.
        #[arg(long, default_value = "v_m")]
        axis: String,
        /// Lower end of the search interval.
        #[arg(long)]
        lo: Option<f64>,
        /// Upper end of the search interval.
        #[arg(long)]
        hi: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate => commands::simulate(&cli.common),
        Command::Loadstep { r_new, t_event, known, unknown } => {
            let known = if known { Some(true) } else if unknown { Some(false) } else { None };
            commands::loadstep(&cli.common, r_new, t_event, known)
        }
        Command::Sweep { axis, range, retune, no_retune } => {
            let retune = if retune { Some(true) } else if no_retune { Some(false) } else { None };
            commands::sweep(&cli.common, axis.as_deref(), range.as_deref(), retune)
        }
        Command::Droop { v_m_star_new, t_event, k_p, k_q } => commands::droop(&cli.common, v_m_star_new, t_event, k_p, k_q),
        Command::Boundary { axis, lo, hi } => commands::boundary(&cli.common, &axis, lo, hi),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
