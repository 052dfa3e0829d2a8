use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use guided_harmony::clock::{Clock, SystemClock, VirtualClock};
use guided_harmony::codebook::{Codebook, GestureId, GestureKind, Stage};
use guided_harmony::ensemble::EnsembleConfig;
use guided_harmony::planner::{accumulate_preferences, PreferenceReport};
use guided_harmony::ptz::{
    execute, Camera, DriverConfig, LoopbackTransport, SimCamera, UdpTransport, ViscaCamera, ViscaResponder,
};
use guided_harmony::score::{parse_score, validate_score, Score};
use guided_harmony::session::serve::{serve, KeypointInput, ServeConfig};
use guided_harmony::session::{replay, LogError, LogHeader, ReplayError, SessionLog, SessionRecorder};
use guided_harmony::sim::{SimOptions, Simulation};

const VALIDATION_FAILED: u8 = 2;
const RUNTIME_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "harmony", version, about = "Guided Harmony conductor engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that every part moves by at most a whole step per measure.
    Validate { score: PathBuf },
    /// Run a closed-loop session against simulated players.
    Simulate {
        score: PathBuf,
        /// Ensemble config JSON; defaults to one agent per part.
        #[arg(long)]
        agents: Option<PathBuf>,
        /// Master seed for all agents.
        #[arg(long)]
        seed: Option<u64>,
        /// Run in scaled wall time instead of as fast as possible.
        #[arg(long)]
        speed: Option<f64>,
        /// Misreading probability for the default agents.
        #[arg(long, default_value_t = 0.0)]
        error_rate: f64,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Serve a live session to websocket clients.
    Serve {
        score: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        /// Simulated players for some or all seats.
        #[arg(long)]
        agents: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Keypoint frames: a JSON-lines file, or `tcp:HOST:PORT` to listen.
        #[arg(long)]
        keypoints: Option<String>,
        /// VISCA camera as HOST:PORT; without one, gestures are timed only.
        #[arg(long)]
        camera: Option<String>,
        #[arg(long)]
        ip_header: bool,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Perform one gesture on a camera.
    Drive {
        /// eye_contact, nod_up_half, nod_up_whole, nod_down_half,
        /// nod_down_whole, downbeat or end_of_piece_signal.
        #[arg(long)]
        gesture: String,
        #[arg(long)]
        part: Option<String>,
        /// Seats come from this score; defaults to the C to F trio.
        #[arg(long)]
        score: Option<PathBuf>,
        #[arg(long, required_unless_present = "sim")]
        host: Option<String>,
        #[arg(long, default_value_t = 52381)]
        port: u16,
        #[arg(long)]
        ip_header: bool,
        /// Use an in-process camera and print the frames it received.
        #[arg(long)]
        sim: bool,
    },
    /// Re-run a session log through the conductor and check it.
    Replay { log: PathBuf },
    /// Mean time to the first raised hand per chord class.
    Prefs {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

enum Outcome {
    Ok,
    Invalid,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid) => ExitCode::from(VALIDATION_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(RUNTIME_FAULT)
        }
    }
}

/// `Err(Outcome::Invalid)` when the file exists but is not a usable score.
fn load_score(path: &Path) -> Result<std::result::Result<Score, Outcome>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match parse_score(&text) {
        Ok(s) => Ok(Ok(s)),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            Ok(Err(Outcome::Invalid))
        }
    }
}

fn load_valid_score(path: &Path) -> Result<std::result::Result<Score, Outcome>> {
    let score = match load_score(path)? {
        Ok(s) => s,
        Err(o) => return Ok(Err(o)),
    };
    let report = validate_score(&score);
    if report.is_valid() {
        return Ok(Ok(score));
    }
    for v in &report.violations {
        eprintln!("measure {} -> {}: part {} moves {:+} semitones", v.measure, v.measure + 1, v.part_id, v.delta);
    }
    Ok(Err(Outcome::Invalid))
}

fn load_codebook(path: Option<&Path>) -> Result<Codebook> {
    match path {
        None => Ok(Codebook::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Codebook::from_json(&text)?)
        }
    }
}

fn load_agents(path: Option<&Path>, score: &Score, error_rate: f64, seed: u64) -> Result<EnsembleConfig> {
    match path {
        None => Ok(EnsembleConfig::uniform(score, [3000, 9000], error_rate, seed)),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(EnsembleConfig::from_json(&text)?)
        }
    }
}

fn recorder(path: Option<&Path>, header: LogHeader) -> Result<SessionRecorder> {
    match path {
        None => Ok(SessionRecorder::disabled()),
        Some(p) => SessionRecorder::create(p, header).with_context(|| format!("creating {}", p.display())),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Validate { score } => {
            let score = match load_valid_score(&score)? {
                Ok(s) => s,
                Err(o) => return Ok(o),
            };
            println!("ok: {} parts, {} measures", score.parts.len(), score.measures.len());
            Ok(Outcome::Ok)
        }

        Command::Simulate { score, agents, seed, speed, error_rate, log, codebook } => {
            let score = match load_valid_score(&score)? {
                Ok(s) => s,
                Err(o) => return Ok(o),
            };
            let agents = load_agents(agents.as_deref(), &score, error_rate, seed.unwrap_or(0))?;
            let options = SimOptions { codebook: load_codebook(codebook.as_deref())?, master_seed: seed, speed, ..Default::default() };
            let configs = serde_json::json!({ "agents": agents, "seed": seed, "codebook": options.codebook.config });
            let rec = recorder(log.as_deref(), LogHeader::new(&score, configs))?;
            let report = Simulation::new(&score, &agents, options, rec.clone())?.run()?;
            rec.close()?;
            for s in &report.sustains {
                let pitches: Vec<String> =
                    s.sounding.iter().map(|p| p.map_or_else(|| "-".to_owned(), |p| p.to_string())).collect();
                println!("sustain {:>3}: {} {}", s.measure, pitches.join(" "), if s.matches { "" } else { "(off score)" });
            }
            println!(
                "{}: {} measures, {} gestures, {} ms",
                report.summary.end_state, report.summary.measures, report.summary.gestures, report.summary.duration_ms
            );
            Ok(Outcome::Ok)
        }

        Command::Serve { score, bind, agents, seed, speed, log, keypoints, camera, ip_header, codebook } => {
            let score = match load_valid_score(&score)? {
                Ok(s) => s,
                Err(o) => return Ok(o),
            };
            let agents = match agents {
                Some(p) => load_agents(Some(&p), &score, 0.0, 0)?,
                None => EnsembleConfig::default(),
            };
            let keypoints = keypoints.map(|k| match k.strip_prefix("tcp:") {
                Some(addr) => addr.parse().map(KeypointInput::Tcp).context("keypoint address"),
                None => Ok(KeypointInput::File(PathBuf::from(k))),
            });
            let driver_config = DriverConfig { ip_header, ..Default::default() };
            let camera = match camera {
                Some(addr) => {
                    let transport = UdpTransport::connect(addr.as_str(), ip_header)?;
                    Some((Box::new(ViscaCamera::new(transport, driver_config.clone())) as Box<dyn Camera>, driver_config))
                }
                None => None,
            };
            let config = ServeConfig {
                bind,
                codebook: load_codebook(codebook.as_deref())?,
                agents: agents.clone(),
                master_seed: seed,
                speed,
                keypoints: keypoints.transpose()?,
                camera,
                ..Default::default()
            };
            let configs = serde_json::json!({ "agents": agents, "seed": seed, "codebook": config.codebook.config });
            let rec = recorder(log.as_deref(), LogHeader::new(&score, configs))?;
            let handle = serve(score, config, rec)?;
            eprintln!("serving on ws://{}", handle.local_addr());
            handle.wait();
            Ok(Outcome::Ok)
        }

        Command::Drive { gesture, part, score, host, port, ip_header, sim } => {
            let score = match score {
                Some(p) => match load_score(&p)? {
                    Ok(s) => s,
                    Err(o) => return Ok(o),
                },
                None => Score::c_to_f_trio(),
            };
            let Some(kind) = GestureKind::from_name(&gesture, part.map(guided_harmony::score::PartId::new)) else {
                bail!("unknown gesture {gesture:?}, or a part is missing or not expected");
            };
            let plan = Codebook::default().compile(&kind, &Stage::from_score(&score))?;
            let config = DriverConfig { ip_header, port, ..Default::default() };
            let mut print_pose = |t: u64, p: guided_harmony::ptz::CameraPose| {
                log::info!("{t:>6} ms  pan {:7.2}  tilt {:7.2}", p.pan, p.tilt)
            };
            if sim {
                let clock = VirtualClock::new(0);
                let cam = SimCamera::new(Arc::new(clock.clone()), config.kinematics, Default::default());
                let mut camera = ViscaCamera::new(LoopbackTransport::new(ViscaResponder::new(cam)), config.clone());
                let done = execute(&plan, GestureId(1), &mut camera, &clock, &config, &mut print_pose, &|| false)?;
                let mut last = String::new();
                for frame in camera.transport().received() {
                    let text = frame.to_string();
                    // collapse runs of position polls
                    if text != last {
                        println!("{text}");
                    }
                    last = text;
                }
                println!("{kind} done at {} ms", done.t_ms);
            } else {
                let host = host.expect("required without --sim");
                let transport = UdpTransport::connect((host.as_str(), port), ip_header)?;
                let mut camera = ViscaCamera::new(transport, config.clone());
                let clock = SystemClock::new();
                let start = clock.now_ms();
                let done = execute(&plan, GestureId(1), &mut camera, &clock, &config, &mut print_pose, &|| false)?;
                println!("{kind} done after {} ms", done.t_ms - start);
            }
            Ok(Outcome::Ok)
        }

        Command::Replay { log } => {
            let log = match SessionLog::load(&log) {
                Ok(l) => l,
                Err(LogError::Io(e)) => return Err(e).with_context(|| format!("reading {}", log.display())),
                Err(e) => {
                    eprintln!("{}: {e}", log.display());
                    return Ok(Outcome::Invalid);
                }
            };
            match replay(&log) {
                Ok(report) => {
                    for (seq, phase) in &report.trajectory {
                        println!("{seq:>6}  {phase}");
                    }
                    let tail = if report.truncated { " (log ends mid-transition)" } else { "" };
                    println!("replayed {} inputs to {}{tail}", report.inputs, report.final_state);
                    Ok(Outcome::Ok)
                }
                Err(e @ (ReplayError::CorruptLog(_) | ReplayError::DivergenceDetected { .. })) => {
                    eprintln!("{e}");
                    Ok(Outcome::Invalid)
                }
            }
        }

        Command::Prefs { logs } => {
            let mut report = PreferenceReport::new();
            for path in &logs {
                let log = match SessionLog::load(path) {
                    Ok(l) => l,
                    Err(LogError::Io(e)) => return Err(e).with_context(|| format!("reading {}", path.display())),
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        return Ok(Outcome::Invalid);
                    }
                };
                if let Err(e) = accumulate_preferences(&mut report, log.score(), &log.events) {
                    eprintln!("{}: {e}", path.display());
                    return Ok(Outcome::Invalid);
                }
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(Outcome::Ok)
        }
    }
}
