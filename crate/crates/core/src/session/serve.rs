//! Live session over websockets. One engine thread owns the conductor and
//! the log; every client, keypoint feed, camera and simulated agent posts
//! onto a single bus and receives broadcasts in bus order.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::io::{BufRead, BufReader, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::clock::{Clock, SystemClock};
use crate::codebook::{duration_of, Codebook, Gesture, GestureId, Kinematics, MotionPlan, Stage};
use crate::conductor::{step, ConductorError, ConductorEvent, ConductorState, Emission, Phase};
use crate::detector::{read_frames, CueDetector, DetectorConfig, SeatMap};
use crate::ensemble::{Ensemble, EnsembleConfig};
use crate::ptz::{Camera, DriverConfig, DriverEvent, DriverHandle};
use crate::score::{validate_score, Bearing, Part, PartId, Pitch, Score};

use super::{PartPitch, Payload, SessionRecorder};

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Sent once on connect. Carries the seating but never the measures.
    Hello { parts: Vec<Part>, state: Phase },
    StateChanged { state: Phase },
    Gesture { gesture: Gesture, motion_plan: MotionPlan, duration_ms: u64 },
    PitchAnnounce { part: PartId, midi: u8, freq_hz: f64 },
    PitchState { pitches: Vec<SeatPitch> },
    EndOfPiece,
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatPitch {
    pub part: PartId,
    pub midi: u8,
    pub freq_hz: f64,
}

impl From<&PartPitch> for SeatPitch {
    fn from(p: &PartPitch) -> Self {
        SeatPitch { part: p.part.clone(), midi: p.midi.midi(), freq_hz: p.midi.frequency_hz() }
    }
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    RaiseHand { part: PartId },
    Start,
    Abort,
}

#[derive(Debug, Clone)]
pub enum KeypointInput {
    /// JSON-lines file or named pipe.
    File(PathBuf),
    /// Accept producers on this address, one frame per line.
    Tcp(SocketAddr),
}

pub struct ServeConfig {
    pub bind: SocketAddr,
    pub codebook: Codebook,
    pub kinematics: Kinematics,
    /// Simulated players; the remaining seats are left to humans.
    pub agents: EnsembleConfig,
    pub master_seed: Option<u64>,
    /// Session milliseconds per wall millisecond.
    pub speed: f64,
    pub keypoints: Option<KeypointInput>,
    pub detector: DetectorConfig,
    pub seats: Option<SeatMap>,
    /// Physical camera. Without one, gestures complete after their modelled
    /// duration.
    pub camera: Option<(Box<dyn Camera>, DriverConfig)>,
    /// Broadcasts buffered per client before it is dropped as too slow.
    pub client_buffer: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8765".parse().expect("address"),
            codebook: Codebook::default(),
            kinematics: Kinematics::default(),
            agents: EnsembleConfig::default(),
            master_seed: None,
            speed: 1.0,
            keypoints: None,
            detector: DetectorConfig::default(),
            seats: None,
            camera: None,
            client_buffer: 256,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("score failed validation with {0} violation(s)")]
    InvalidScore(usize),
    #[error("bind: {0}")]
    Bind(#[from] std::io::Error),
    #[error("agents: {0}")]
    Agents(#[from] crate::ensemble::EnsembleError),
}

type ClientId = u64;

enum Bus {
    Joined(ClientId, SyncSender<String>),
    Left(ClientId),
    Inbound(ClientId, String),
    Detected { part: PartId, frame_ms: u64 },
    Driver(DriverEvent),
    Shutdown,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Timer {
    Done(GestureId),
    /// A simulated hand, valid only while the conductor still sustains `measure`.
    Raise { part: PartId, measure: usize },
}

struct Engine {
    score: Score,
    stage: Stage,
    codebook: Codebook,
    kinematics: Kinematics,
    clock: SystemClock,
    speed: f64,
    recorder: SessionRecorder,
    state: ConductorState,
    clients: BTreeMap<ClientId, SyncSender<String>>,
    ensemble: Option<Ensemble>,
    driver: Option<DriverHandle>,
    timers: BinaryHeap<Reverse<(u64, u64, Timer)>>,
    timer_order: u64,
    camera_at: Bearing,
    camera_free_at: u64,
    pitch_state: Vec<PartPitch>,
}

impl Engine {
    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn send_to(&mut self, id: ClientId, msg: &ServerMessage) {
        let text = serde_json::to_string(msg).expect("message serializes");
        if let Some(tx) = self.clients.get(&id) {
            if tx.try_send(text).is_err() {
                self.clients.remove(&id);
            }
        }
    }

    /// Slow or vanished clients are dropped rather than waited on.
    fn broadcast(&mut self, msg: &ServerMessage) {
        let text = serde_json::to_string(msg).expect("message serializes");
        self.clients.retain(|id, tx| match tx.try_send(text.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                log::warn!("client {id} too slow, disconnecting");
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
    }

    fn record(&self, payload: Payload) {
        if let Err(e) = self.recorder.record(self.now(), payload) {
            log::error!("session log: {e}");
        }
    }

    fn schedule(&mut self, at_ms: u64, timer: Timer) {
        self.timer_order += 1;
        self.timers.push(Reverse((at_ms, self.timer_order, timer)));
    }

    fn feed(&mut self, event: ConductorEvent, from: Option<ClientId>) {
        match step(&self.state, &event, &self.score) {
            Ok((next, emissions)) => {
                self.record(Payload::Input(event.clone()));
                self.state = next;
                if matches!(event, ConductorEvent::Abort) {
                    self.timers.clear();
                    self.camera_free_at = self.now();
                    if let Some(d) = &self.driver {
                        d.halt();
                    }
                }
                for e in emissions {
                    self.record(Payload::Emission(e.clone()));
                    self.handle(e);
                }
            }
            Err(e) => {
                log::info!("rejected {event}: {e}");
                let reason = match e {
                    ConductorError::UnknownPart(p) => format!("unknown part {p}"),
                    other => other.to_string(),
                };
                if let Some(id) = from {
                    self.send_to(id, &ServerMessage::Error { reason });
                }
            }
        }
    }

    fn handle(&mut self, emission: Emission) {
        match emission {
            Emission::PitchAnnounce { part, pitch } => {
                self.set_pitch(&part, pitch);
                self.broadcast(&ServerMessage::PitchAnnounce {
                    midi: pitch.midi(),
                    freq_hz: pitch.frequency_hz(),
                    part,
                });
            }
            Emission::GestureRequest { gesture } => self.start_gesture(gesture),
            Emission::StateChanged { state } => {
                self.broadcast(&ServerMessage::StateChanged { state });
                match state {
                    Phase::Sustain(i) => {
                        let measure: Vec<(PartId, Pitch)> = self
                            .score
                            .parts
                            .iter()
                            .zip(self.score.measures[i].pitches())
                            .map(|(p, &m)| (p.part_id.clone(), m))
                            .collect();
                        for (part, pitch) in measure {
                            self.set_pitch(&part, pitch);
                        }
                        self.record(Payload::PitchState { pitches: self.pitch_state.clone() });
                        let pitches = self.pitch_state.iter().map(SeatPitch::from).collect();
                        self.broadcast(&ServerMessage::PitchState { pitches });
                        let now = self.now();
                        if let Some(signal) = self.ensemble.as_mut().and_then(|e| e.schedule_request(now)) {
                            self.schedule(signal.t_ms, Timer::Raise { part: signal.part, measure: i });
                        }
                    }
                    Phase::EndOfPiece => self.broadcast(&ServerMessage::EndOfPiece),
                    _ => {}
                }
            }
        }
    }

    fn set_pitch(&mut self, part: &PartId, midi: Pitch) {
        match self.pitch_state.iter_mut().find(|p| &p.part == part) {
            Some(p) => p.midi = midi,
            None => self.pitch_state.push(PartPitch { part: part.clone(), midi }),
        }
    }

    fn start_gesture(&mut self, gesture: Gesture) {
        let plan = match self.codebook.compile(&gesture.kind, &self.stage) {
            Ok(p) => p,
            Err(e) => {
                log::error!("{e}");
                self.broadcast(&ServerMessage::Error { reason: e.to_string() });
                return;
            }
        };
        let duration_ms = duration_of(&plan, &self.kinematics, self.camera_at).ceil() as u64;
        self.camera_at = plan.final_bearing().unwrap_or(self.camera_at);
        self.broadcast(&ServerMessage::Gesture { gesture: gesture.clone(), motion_plan: plan.clone(), duration_ms });
        match &self.driver {
            Some(d) => d.submit(plan, gesture.id),
            None => {
                let begin = self.now().max(self.camera_free_at);
                self.camera_free_at = begin + duration_ms;
                self.schedule(begin + duration_ms, Timer::Done(gesture.id));
            }
        }
    }

    fn fire(&mut self, timer: Timer) {
        match timer {
            Timer::Done(gesture) => self.feed(ConductorEvent::MotionDone { gesture }, None),
            Timer::Raise { part, measure } => {
                if self.state.phase == Phase::Sustain(measure) {
                    let t_ms = self.now();
                    self.feed(ConductorEvent::RequestSignal { part, t_ms }, None);
                }
            }
        }
    }

    fn inbound(&mut self, id: ClientId, text: &str) {
        let msg = match serde_json::from_str::<ClientMessage>(text) {
            Ok(m) => m,
            Err(e) => {
                self.send_to(id, &ServerMessage::Error { reason: format!("malformed message: {e}") });
                return;
            }
        };
        let event = match msg {
            ClientMessage::RaiseHand { part } => {
                if self.score.part_index(&part).is_none() {
                    self.send_to(id, &ServerMessage::Error { reason: format!("unknown part {part}") });
                    return;
                }
                ConductorEvent::RequestSignal { part, t_ms: self.now() }
            }
            ClientMessage::Start => ConductorEvent::Start,
            ClientMessage::Abort => ConductorEvent::Abort,
        };
        self.feed(event, Some(id));
    }

    fn run(mut self, bus: Receiver<Bus>) {
        loop {
            let wait = match self.timers.peek() {
                Some(Reverse((at, _, _))) => {
                    let ahead = at.saturating_sub(self.now()) as f64 / self.speed;
                    Duration::from_secs_f64(ahead / 1000.0)
                }
                None => Duration::from_secs(3600),
            };
            let msg = match bus.recv_timeout(wait) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            match msg {
                Some(Bus::Shutdown) => break,
                Some(Bus::Joined(id, tx)) => {
                    self.clients.insert(id, tx);
                    let hello = ServerMessage::Hello { parts: self.score.parts.clone(), state: self.state.phase };
                    self.send_to(id, &hello);
                    if !self.pitch_state.is_empty() {
                        let pitches = self.pitch_state.iter().map(SeatPitch::from).collect();
                        self.send_to(id, &ServerMessage::PitchState { pitches });
                    }
                }
                Some(Bus::Left(id)) => {
                    self.clients.remove(&id);
                }
                Some(Bus::Inbound(id, text)) => self.inbound(id, &text),
                Some(Bus::Detected { part, frame_ms }) => {
                    self.record(Payload::Detection { part: part.clone(), t_ms: frame_ms });
                    let t_ms = self.now();
                    self.feed(ConductorEvent::RequestSignal { part, t_ms }, None);
                }
                Some(Bus::Driver(DriverEvent::MotionDone(done))) => {
                    self.feed(ConductorEvent::MotionDone { gesture: done.gesture }, None)
                }
                Some(Bus::Driver(DriverEvent::Pose { pose, .. })) => self.record(Payload::CameraPose(pose)),
                Some(Bus::Driver(DriverEvent::Fault { gesture, error })) => {
                    log::error!("camera fault on {gesture}: {error}");
                    self.broadcast(&ServerMessage::Error { reason: format!("camera: {error}") });
                }
                None => {}
            }
            while self.timers.peek().is_some_and(|Reverse((at, _, _))| *at <= self.now()) {
                let Reverse((_, _, timer)) = self.timers.pop().expect("peeked");
                self.fire(timer);
            }
        }
        self.clients.clear();
        if let Err(e) = self.recorder.close() {
            log::error!("closing session log: {e}");
        }
    }
}

/// A running server. Dropping it shuts everything down.
pub struct ServeHandle {
    addr: SocketAddr,
    bus: Sender<Bus>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the engine stops.
    pub fn wait(mut self) {
        if let Some(engine) = self.threads.pop() {
            let _ = engine.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = self.bus.send(Bus::Shutdown);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Bind and start serving `score`. Returns once the socket is listening.
pub fn serve(score: Score, config: ServeConfig, recorder: SessionRecorder) -> Result<ServeHandle, ServeError> {
    let report = validate_score(&score);
    if !report.is_valid() {
        return Err(ServeError::InvalidScore(report.violations.len()));
    }
    let ensemble = if config.agents.agents.is_empty() {
        None
    } else {
        Some(Ensemble::new(&score, &config.agents, config.master_seed)?)
    };
    let listener = TcpListener::bind(config.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (bus_tx, bus_rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let clock = SystemClock::scaled(config.speed);
    let mut threads = Vec::new();

    let driver = config.camera.map(|(camera, driver_config)| {
        let (tx, rx) = mpsc::channel();
        let bus = bus_tx.clone();
        threads.push(std::thread::spawn(move || {
            for e in rx {
                if bus.send(Bus::Driver(e)).is_err() {
                    break;
                }
            }
        }));
        DriverHandle::spawn(camera, Arc::new(clock.clone()), driver_config, tx)
    });

    if let Some(input) = config.keypoints {
        let seats = config.seats.clone().unwrap_or_else(|| SeatMap::even_from_score(&score));
        let detector = CueDetector::new(seats, config.detector.clone());
        let bus = bus_tx.clone();
        let stop = stop.clone();
        // detached: it may sit in a blocking read, and exits on its next
        // frame once the bus is gone
        std::thread::spawn(move || keypoint_loop(input, detector, bus, stop));
    }

    {
        let bus = bus_tx.clone();
        let stop = stop.clone();
        let buffer = config.client_buffer.max(1);
        threads.push(std::thread::spawn(move || accept_loop(listener, bus, stop, buffer)));
    }

    let stage = Stage::from_score(&score);
    let engine = Engine {
        camera_at: stage.center,
        stage,
        score,
        codebook: config.codebook,
        kinematics: config.kinematics,
        clock,
        speed: config.speed,
        recorder,
        state: ConductorState::default(),
        clients: BTreeMap::new(),
        ensemble,
        driver,
        timers: BinaryHeap::new(),
        timer_order: 0,
        camera_free_at: 0,
        pitch_state: Vec::new(),
    };
    threads.push(std::thread::Builder::new().name("engine".into()).spawn(move || engine.run(bus_rx))?);
    Ok(ServeHandle { addr, bus: bus_tx, stop, threads })
}

fn accept_loop(listener: TcpListener, bus: Sender<Bus>, stop: Arc<AtomicBool>, buffer: usize) {
    let mut next_id: ClientId = 0;
    let mut clients = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                next_id += 1;
                let id = next_id;
                let bus = bus.clone();
                let stop = stop.clone();
                clients.push(std::thread::spawn(move || {
                    if let Err(e) = client_loop(stream, id, bus, stop, buffer) {
                        log::debug!("client {id} ({peer}): {e}");
                    }
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::error!("accept: {e}");
                break;
            }
        }
        clients.retain(|c: &JoinHandle<()>| !c.is_finished());
    }
    for c in clients {
        let _ = c.join();
    }
}

#[allow(clippy::result_large_err)]
fn client_loop(
    stream: TcpStream,
    id: ClientId,
    bus: Sender<Bus>,
    stop: Arc<AtomicBool>,
    buffer: usize,
) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(10)))?;
    let (tx, rx) = mpsc::sync_channel(buffer);
    if bus.send(Bus::Joined(id, tx)).is_err() {
        return Ok(());
    }
    let result = pump(&mut ws, id, &rx, &bus, &stop);
    let _ = bus.send(Bus::Left(id));
    result
}

#[allow(clippy::result_large_err)]
fn pump(
    ws: &mut WebSocket<TcpStream>,
    id: ClientId,
    rx: &Receiver<String>,
    bus: &Sender<Bus>,
    stop: &AtomicBool,
) -> Result<(), tungstenite::Error> {
    loop {
        if stop.load(Ordering::Acquire) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        loop {
            match rx.try_recv() {
                Ok(text) => ws.send(Message::Text(text))?,
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    // dropped by the engine
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if bus.send(Bus::Inbound(id, text)).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Binary(_)) => {
                let _ = bus.send(Bus::Inbound(id, String::new()));
            }
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}

fn keypoint_loop(input: KeypointInput, mut detector: CueDetector, bus: Sender<Bus>, stop: Arc<AtomicBool>) {
    let mut feed = |reader: &mut dyn BufRead| {
        for frame in read_frames(reader) {
            if stop.load(Ordering::Acquire) {
                return;
            }
            let frame = match frame {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("keypoints: {e}");
                    continue;
                }
            };
            match detector.push(&frame) {
                Ok(signals) => {
                    for s in signals {
                        if bus.send(Bus::Detected { part: s.part, frame_ms: s.t_ms }).is_err() {
                            return;
                        }
                    }
                }
                Err(e) => log::warn!("keypoints: {e}"),
            }
        }
    };
    match input {
        KeypointInput::File(path) => match std::fs::File::open(&path) {
            Ok(f) => feed(&mut BufReader::new(f)),
            Err(e) => log::error!("{}: {e}", path.display()),
        },
        KeypointInput::Tcp(addr) => {
            let listener = match TcpListener::bind(addr) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("keypoint listener {addr}: {e}");
                    return;
                }
            };
            for stream in listener.incoming() {
                if stop.load(Ordering::Acquire) {
                    return;
                }
                match stream {
                    Ok(s) => feed(&mut BufReader::new(s)),
                    Err(e) => log::warn!("keypoint producer: {e}"),
                }
            }
        }
    }
}
