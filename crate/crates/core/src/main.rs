use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hrc_core::app::{self, AppError, HumanConfig, HumanDriver, HumanModel, Mode, ReplayOptions, RunConfig};
use hrc_core::metrics::Condition;

#[derive(Parser)]
#[command(name = "hrc", version, about = "Anticipatory robot-motion simulator and console server")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, env = "HRC_LOG", default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the plan headless or serve it to console clients.
    Run(RunArgs),
    /// Check scenario files without running.
    Validate(ScenarioArgs),
    /// Summarize trial records and run the paired tests.
    Report {
        /// Trial NDJSON files.
        #[arg(required = true)]
        trials: Vec<PathBuf>,
        #[arg(long, env = "HRC_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Re-broadcast a recorded event log to connected consoles.
    Replay {
        /// events.ndjson from an earlier run.
        #[arg(value_name = "EVENTS")]
        events: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        /// Playback speed multiplier.
        #[arg(long, env = "HRC_SPEED", default_value_t = 1.0)]
        speed: f64,
        /// Start immediately instead of waiting for the first client.
        #[arg(long)]
        no_wait: bool,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Robot model JSON (bundled arm if omitted).
    #[arg(long, env = "HRC_ROBOT")]
    robot: Option<PathBuf>,
    /// World JSON (bundled desk scene if omitted).
    #[arg(long, env = "HRC_WORLD")]
    world: Option<PathBuf>,
    /// Plan file (bundled chair assembly if omitted).
    #[arg(long, env = "HRC_PLAN")]
    plan: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct NetArgs {
    #[arg(long, env = "HRC_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "HRC_TCP_PORT", default_value_t = app::DEFAULT_TCP_PORT)]
    tcp_port: u16,
    #[arg(long, env = "HRC_CONSOLE_PORT", default_value_t = app::DEFAULT_CONSOLE_PORT)]
    console_port: u16,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, env = "HRC_MODE", default_value = "headless")]
    mode: Mode,
    /// C1 shows the anticipated motion, C2 does not.
    #[arg(long, env = "HRC_CONDITION", default_value = "C1")]
    condition: Condition,
    /// Lead of the anticipated stream over the real motion (s).
    #[arg(long, env = "HRC_DELTA_T", default_value_t = 3.0)]
    delta_t: f64,
    #[arg(long, env = "HRC_TICK", default_value_t = 0.02)]
    tick: f64,
    #[arg(long, env = "HRC_SEED", default_value_t = 42)]
    seed: u64,
    /// Pause after each collision episode (s).
    #[arg(long, env = "HRC_COLLISION_PAUSE", default_value_t = 2.0)]
    collision_pause: f64,
    /// Assembly time per step: fixed:<s> or uniform:<lo>,<hi>.
    #[arg(long, env = "HRC_HUMAN_MODEL", default_value = "fixed:5")]
    human_model: HumanModel,
    /// Chance per act that the scripted human blocks the arm.
    #[arg(long, env = "HRC_P_BLOCK", default_value_t = 0.0)]
    p_block: f64,
    /// Chance per step that the scripted human nudges the next object.
    #[arg(long, env = "HRC_P_INTERVENE", default_value_t = 0.0)]
    p_intervene: f64,
    /// In serve mode, let the scripted human press instead of a console.
    #[arg(long, env = "HRC_SCRIPTED_HUMAN")]
    scripted_human: bool,
    /// Serve-mode pacing in simulated seconds per wall second.
    #[arg(long, env = "HRC_SPEED", default_value_t = 1.0)]
    speed: f64,
    /// Directory for events.ndjson and trial.ndjson.
    #[arg(long, env = "HRC_OUT")]
    out: Option<PathBuf>,
}

fn run_config(a: RunArgs) -> RunConfig {
    let driver = if a.mode == Mode::Serve && !a.scripted_human { HumanDriver::Console } else { HumanDriver::Scripted };
    RunConfig {
        robot_model_path: a.scenario.robot,
        world_path: a.scenario.world,
        plan_path: a.scenario.plan,
        delta_t: a.delta_t,
        condition: a.condition,
        tick: a.tick,
        seed: a.seed,
        mode: a.mode,
        host: a.net.host,
        tcp_port: a.net.tcp_port,
        console_port: a.net.console_port,
        collision_pause: a.collision_pause,
        human: HumanConfig { assembly: a.human_model, p_block: a.p_block, p_intervene: a.p_intervene, ..Default::default() },
        driver,
        out_dir: a.out,
        speed: a.speed,
        ..Default::default()
    }
}

fn execute(cmd: Cmd) -> Result<(), AppError> {
    match cmd {
        Cmd::Run(args) => {
            let outcome = app::run(run_config(args))?;
            let t = &outcome.trial;
            println!(
                "{} steps in {:.2} s, {} collisions, {} interventions",
                t.step_durations.len(),
                outcome.total_time,
                t.collisions.len(),
                t.interventions.len()
            );
            Ok(())
        }
        Cmd::Validate(s) => {
            let config = RunConfig { robot_model_path: s.robot, world_path: s.world, plan_path: s.plan, ..Default::default() };
            let diagnostics = app::validate(&config);
            for d in &diagnostics {
                println!("{d}");
            }
            if diagnostics.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(AppError::Config(format!("{} problem(s) found", diagnostics.len())))
            }
        }
        Cmd::Report { trials, out } => {
            let report = app::report_files(&trials, &out)?;
            for row in &report.tests {
                match (&row.result, &row.note) {
                    (Some(r), _) => println!(
                        "{:<14} W={:<6} p={:.4} n={} reject={}",
                        row.observable.as_str(),
                        r.statistic,
                        r.p_value,
                        r.n_effective,
                        row.reject_null.unwrap_or(false)
                    ),
                    (None, Some(note)) => println!("{:<14} {note}", row.observable.as_str()),
                    (None, None) => {}
                }
            }
            Ok(())
        }
        Cmd::Replay { events, net, speed, no_wait } => {
            let opts = ReplayOptions {
                host: net.host,
                tcp_port: net.tcp_port,
                console_port: net.console_port,
                speed,
                wait_for_client: !no_wait,
            };
            let n = app::replay(&events, &opts)?;
            println!("replayed {n} events");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hrc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
