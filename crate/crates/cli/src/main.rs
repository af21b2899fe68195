use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use vsgsim::batch::{run_sweep, write_run};
use vsgsim::inner_loop::run_testbed;
use vsgsim::output::{ensure_dir, testbed_trace, write_json, write_trace_csv, METRICS_FILE, TRACE_FILE};
use vsgsim::vsg::{small_signal, tune_jd, vsg_params_from_jd, SwingCoefficients};
use vsgsim::{integrate, load_document, Document, Error, LoadOptions, PerUnitSystem, Simulation};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

/// Phasor-level transient simulator for grids with virtual synchronous
/// generators.
#[derive(Debug, Parser)]
#[command(name = "vsgsim", version)]
struct Cli {
    /// Replace the solver step of every loaded scenario, s.
    #[arg(long, global = true)]
    dt_override: Option<f64>,

    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv and metrics.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario once per value of its [sweep] section.
    Sweep {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Place the swing mode: print J and D for a damping ratio and real part.
    Tune {
        #[arg(long)]
        xi: f64,
        #[arg(long, allow_hyphen_values = true)]
        sigma: f64,
        /// Maximum transferable power, p.u.
        #[arg(long)]
        p_max: f64,
        /// Angle between inverter and grid voltage, rad.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
        /// Synchronous angular frequency, rad/s (default 2*pi*f0).
        #[arg(long)]
        omega_s: Option<f64>,
        /// Frequency droop gain used to split D into droop and damping, p.u./Hz.
        #[arg(long, default_value_t = 0.0)]
        kf: f64,
        #[arg(long, default_value_t = 60.0)]
        f0: f64,
    },
    /// Parse, check and initialize a scenario without running it.
    Validate { scenario: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() || matches!(e, Error::InfeasibleTuning(_) | Error::BeyondStabilityLimit(_)) {
        EXIT_VALIDATION
    } else {
        EXIT_SIMULATION
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let opts = LoadOptions {
        dt_override: cli.dt_override,
    };
    let result = match &cli.command {
        Command::Run { scenario, out } => run(scenario, out, opts, cli.quiet),
        Command::Sweep { scenario, out } => sweep(scenario, out, opts, cli.quiet),
        Command::Validate { scenario } => validate(scenario, opts, cli.quiet),
        Command::Tune {
            xi,
            sigma,
            p_max,
            theta,
            omega_s,
            kf,
            f0,
        } => tune(*xi, *sigma, *p_max, *theta, *omega_s, *kf, *f0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(path: &Path, out: &Path, opts: LoadOptions, quiet: bool) -> Result<u8, Error> {
    match load_document(path, opts)? {
        Document::Grid(s) => {
            info!("running {} to t = {} s at dt = {} s", s.name(), s.t_end(), s.dt());
            let r = integrate(&s)?;
            write_run(&r, out)?;
            let m = &r.metrics;
            if !quiet {
                println!("nadir_hz={}", m.nadir_hz);
                println!("max_rocof_hz_s={}", m.max_rocof_hz_s);
                println!("settling_time_s={}", m.settling_time_s);
                println!("completed={}", m.completed);
            }
            if let Some(why) = &m.termination {
                eprintln!("terminated early: {why}");
            }
            Ok(if m.completed { 0 } else { EXIT_SIMULATION })
        }
        Document::Testbed { name, config } => {
            info!("running inner-loop testbed {name}");
            let tr = run_testbed(&config)?;
            ensure_dir(out)?;
            write_trace_csv(&testbed_trace(&tr, config.dt)?, &out.join(TRACE_FILE))?;
            let settle_from = config.step_time + 0.2;
            let metrics = serde_json::json!({
                "max_error_after_step_pu": tr.max_error_after(settle_from),
                "settle_window_start_s": settle_from,
            });
            write_json(&metrics, &out.join(METRICS_FILE))?;
            if !quiet {
                println!("max_error_after_step_pu={}", tr.max_error_after(settle_from));
            }
            Ok(0)
        }
    }
}

fn sweep(path: &Path, out: &Path, opts: LoadOptions, quiet: bool) -> Result<u8, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let (section, rows) = run_sweep(&text, opts, out)?;
    let mut code = 0;
    for r in &rows {
        if !r.completed {
            code = EXIT_SIMULATION;
        }
        if !quiet {
            let nadir = r.nadir_hz.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
            println!("{}={} nadir_hz={} completed={}", section.label(), r.value, nadir, r.completed);
        }
        if let Some(e) = &r.error {
            eprintln!("{}={}: {e}", section.label(), r.value);
        }
    }
    Ok(code)
}

fn validate(path: &Path, opts: LoadOptions, quiet: bool) -> Result<u8, Error> {
    match load_document(path, opts)? {
        Document::Grid(s) => {
            let sim = Simulation::new(&s)?;
            if !quiet {
                println!("ok {} ({} columns)", s.name(), sim.columns().len());
            }
        }
        Document::Testbed { name, .. } => {
            if !quiet {
                println!("ok {name} (inner-loop testbed)");
            }
        }
    }
    Ok(0)
}

fn tune(xi: f64, sigma: f64, p_max: f64, theta: f64, omega_s: Option<f64>, kf: f64, f0: f64) -> Result<u8, Error> {
    let base = PerUnitSystem::new(1.0, 1.0, f0)?;
    let omega_s = omega_s.unwrap_or(base.omega0());
    let (j, d) = tune_jd(xi, sigma, p_max, theta, omega_s)?;
    let check = small_signal(&SwingCoefficients { j, d, omega_s }, p_max, theta)?;
    let (h, d_virt) = vsg_params_from_jd(j, d, kf, &base);
    println!("J={j}");
    println!("D={d}");
    println!("H={h}");
    println!("d_virt={d_virt}");
    println!("omega_n={}", check.omega_n);
    Ok(0)
}
