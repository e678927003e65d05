use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use teleop_core::channel::{TcpRelay, TransportKind};
use teleop_core::experiment::report::{read_trials_csv, write_frames_csv, write_trials_csv};
use teleop_core::experiment::{
    aggregate, render_markdown, run_batch, run_batch_sequential, summarize, trial_plan, FrameDump, Method, Scenario,
    Simulator, TrialOptions, TrialSummary,
};
use teleop_core::{ConfigError, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(name = "teleop", about = "Remote ultrasound scan study simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Human,
    Robotic,
    Direct,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials and write trials.csv, frames.csv and report.md.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 15)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write every frame as a binary PGM.
        #[arg(long)]
        dump_frames: bool,
        /// With --dump-frames, keep only every N-th frame.
        #[arg(long, default_value_t = 1)]
        frame_stride: u64,
        /// inproc or tcp:<port>
        #[arg(long, default_value = "inproc")]
        transport: String,
        /// Run trials one at a time instead of across threads.
        #[arg(long)]
        sequential: bool,
    },
    /// Rebuild report.md from trials.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Mesh(_) | Error::Robot(_) => EXIT_CONFIG,
        _ => EXIT_INVARIANT,
    }
}

fn fail(e: impl Into<Error>) -> ExitCode {
    let e = e.into();
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn load(path: &Path) -> Result<Simulator, ConfigError> {
    Simulator::new(Scenario::load(path)?)
}

fn write_report(dir: &Path, rows: &[TrialSummary]) -> Result<String, Error> {
    let report = match aggregate(rows) {
        Ok(r) => r,
        Err(Error::InsufficientData(_)) => summarize(rows)?,
        Err(e) => return Err(e),
    };
    let md = render_markdown(&report);
    std::fs::write(dir.join("report.md"), &md)?;
    Ok(md)
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: &Path,
    method: MethodArg,
    trials: usize,
    seed: u64,
    out: &Path,
    dump_frames: bool,
    frame_stride: u64,
    transport: &str,
    sequential: bool,
) -> ExitCode {
    let sim = match load(scenario) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let transport: TransportKind = match transport.parse() {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    if trials == 0 {
        return fail(ConfigError::Invalid("--trials must be at least 1".into()));
    }
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(e);
    }
    // the relay must outlive every trial that connects to it
    let relay = match transport {
        TransportKind::Tcp(port) => match TcpRelay::start(port) {
            Ok(r) => Some(r),
            Err(e) => return fail(e),
        },
        TransportKind::InProcess => None,
    };
    let transport = relay.as_ref().map_or(transport, |r| TransportKind::Tcp(r.port()));
    let dump = dump_frames.then(|| FrameDump {
        dir: out.join("frames"),
        stride: frame_stride.max(1),
    });
    if let Some(d) = &dump {
        if let Err(e) = std::fs::create_dir_all(&d.dir) {
            return fail(e);
        }
    }
    let opts = TrialOptions { transport, dump };
    let methods: Vec<Method> = match method {
        MethodArg::Human => vec![Method::Human],
        MethodArg::Robotic => vec![Method::Robotic],
        MethodArg::Direct => vec![Method::Direct],
        MethodArg::All => Method::ALL.to_vec(),
    };
    let plan = trial_plan(&methods, trials, seed);
    let started = Instant::now();
    let result = if sequential {
        run_batch_sequential(&sim, &plan, &opts)
    } else {
        run_batch(&sim, &plan, &opts)
    };
    let metrics = match result {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let width = sim.scenario().ultrasound.probe.image_width;
    let rows: Vec<TrialSummary> = metrics.iter().map(|m| TrialSummary::from_metrics(m, width)).collect();
    let written = write_trials_csv(&out.join("trials.csv"), &rows)
        .and_then(|_| write_frames_csv(&out.join("frames.csv"), &metrics))
        .and_then(|_| write_report(out, &rows));
    match written {
        Ok(md) => println!("{md}"),
        Err(e) => return fail(e),
    }
    eprintln!("{} trials in {:.1} s", plan.len(), started.elapsed().as_secs_f64());
    let timeouts = rows.iter().filter(|r| r.timeout).count();
    if timeouts > 0 {
        eprintln!("{timeouts} trial(s) timed out");
        return ExitCode::from(EXIT_TIMEOUT);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            method,
            trials,
            seed,
            out,
            dump_frames,
            frame_stride,
            transport,
            sequential,
        } => run(
            &scenario,
            method,
            trials,
            seed,
            &out,
            dump_frames,
            frame_stride,
            &transport,
            sequential,
        ),
        Command::Report { input } => {
            let rows = match read_trials_csv(&input.join("trials.csv")) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            match write_report(&input, &rows) {
                Ok(md) => {
                    println!("{md}");
                    if rows.iter().any(|r| r.timeout) {
                        ExitCode::from(EXIT_TIMEOUT)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { scenario } => match load(&scenario) {
            Ok(_) => {
                println!("{}: ok", scenario.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
