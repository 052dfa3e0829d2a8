//! The conductor: a pure transition function over (state, event, score) and
//! a session loop that drives it from an event source.
//!
//! A session runs `Idle -> Announce -> Sustain(0)`, then on every accepted
//! request signal walks the parts in score order (`Instruct(i, k)`), gives a
//! collective downbeat (`DownbeatCue(i + 1)`) and returns to `Sustain(i + 1)`.
//! A request during the last sustain ends the piece. The conductor keeps no
//! clock; pacing comes entirely from gesture completion and the musicians.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Gesture, GestureId, GestureKind};
use crate::planner::{plan_transition, PlanError};
use crate::score::{validate_score, PartId, Pitch, Score};
use crate::session::{Payload, SessionRecorder, StorageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Announce,
    Sustain(usize),
    Instruct { measure: usize, step: usize },
    DownbeatCue(usize),
    EndOfPiece,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Idle => f.write_str("Idle"),
            Phase::Announce => f.write_str("Announce"),
            Phase::Sustain(i) => write!(f, "Sustain({i})"),
            Phase::Instruct { measure, step } => write!(f, "Instruct({measure},{step})"),
            Phase::DownbeatCue(i) => write!(f, "DownbeatCue({i})"),
            Phase::EndOfPiece => f.write_str("EndOfPiece"),
        }
    }
}

/// Full conductor snapshot. Besides the phase it tracks which gesture must
/// complete before the next transition, and the next gesture id to hand out.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConductorState {
    pub phase: Phase,
    pub awaiting: Option<GestureId>,
    pub next_gesture: u64,
}

impl Default for ConductorState {
    fn default() -> Self {
        ConductorState { phase: Phase::Idle, awaiting: None, next_gesture: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ConductorEvent {
    Start,
    RequestSignal {
        part: PartId,
        /// When the hand went up; serialized as `signal_ms` so it does not
        /// collide with the log line's own `t_ms`.
        #[serde(rename = "signal_ms")]
        t_ms: u64,
    },
    MotionDone { gesture: GestureId },
    Abort,
}

impl fmt::Display for ConductorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConductorEvent::Start => f.write_str("Start"),
            ConductorEvent::RequestSignal { part, t_ms } => write!(f, "RequestSignal({part}@{t_ms})"),
            ConductorEvent::MotionDone { gesture } => write!(f, "MotionDone({gesture})"),
            ConductorEvent::Abort => f.write_str("Abort"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "emission", rename_all = "snake_case")]
pub enum Emission {
    PitchAnnounce { part: PartId, pitch: Pitch },
    GestureRequest { gesture: Gesture },
    StateChanged { state: Phase },
}

impl Emission {
    pub fn gesture(&self) -> Option<&Gesture> {
        match self {
            Emission::GestureRequest { gesture } => Some(gesture),
            _ => None,
        }
    }

    pub fn state(&self) -> Option<Phase> {
        match self {
            Emission::StateChanged { state } => Some(*state),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConductorError {
    #[error("event {event} is not allowed in state {phase}")]
    IllegalEvent { phase: Phase, event: ConductorEvent },
    #[error("request signal from unknown part {0}")]
    UnknownPart(PartId),
    #[error("score cannot be conducted: {0}")]
    InvalidScore(#[from] PlanError),
}

pub type StepResult = Result<(ConductorState, Vec<Emission>), ConductorError>;

/// Pure transition function.
pub fn step(state: &ConductorState, event: &ConductorEvent, score: &Score) -> StepResult {
    let illegal = || ConductorError::IllegalEvent { phase: state.phase, event: event.clone() };
    let unchanged = || Ok((state.clone(), Vec::new()));
    let mut next = state.clone();
    let mut out = Vec::new();

    match (state.phase, event) {
        (_, ConductorEvent::Abort) => {
            if state.phase == Phase::Idle {
                return unchanged();
            }
            next.phase = Phase::Idle;
            next.awaiting = None;
            out.push(Emission::StateChanged { state: Phase::Idle });
        }

        (Phase::Idle, ConductorEvent::Start) => {
            next.phase = Phase::Announce;
            out.push(Emission::StateChanged { state: Phase::Announce });
            for (part, &pitch) in score.parts.iter().zip(score.measures[0].pitches()) {
                out.push(Emission::PitchAnnounce { part: part.part_id.clone(), pitch });
            }
            let g = next.issue(GestureKind::Downbeat);
            next.awaiting = Some(g.id);
            out.push(Emission::GestureRequest { gesture: g });
        }
        (_, ConductorEvent::Start) => return Err(illegal()),

        (Phase::Idle, ConductorEvent::RequestSignal { .. }) => return Err(illegal()),
        (phase, ConductorEvent::RequestSignal { part, .. }) => {
            if score.part_index(part).is_none() {
                return Err(ConductorError::UnknownPart(part.clone()));
            }
            let Phase::Sustain(i) = phase else {
                // the state is already changing; a complaint here is absorbed
                return unchanged();
            };
            if i >= score.last_measure() {
                next.phase = Phase::EndOfPiece;
                out.push(Emission::StateChanged { state: next.phase });
                let g = next.issue(GestureKind::EndOfPieceSignal);
                next.awaiting = Some(g.id);
                out.push(Emission::GestureRequest { gesture: g });
            } else {
                next.phase = Phase::Instruct { measure: i, step: 0 };
                out.push(Emission::StateChanged { state: next.phase });
                next.instruct(score, i, 0, &mut out)?;
            }
        }

        (phase, ConductorEvent::MotionDone { gesture }) => {
            match state.awaiting {
                Some(id) if id == *gesture => {}
                // an earlier gesture of the same batch finished
                Some(_) if gesture.0 < state.next_gesture => return unchanged(),
                _ => return Err(illegal()),
            }
            next.awaiting = None;
            match phase {
                Phase::Announce => {
                    next.phase = Phase::Sustain(0);
                    out.push(Emission::StateChanged { state: next.phase });
                }
                Phase::Instruct { measure, step } if step + 1 < score.parts.len() => {
                    next.phase = Phase::Instruct { measure, step: step + 1 };
                    out.push(Emission::StateChanged { state: next.phase });
                    next.instruct(score, measure, step + 1, &mut out)?;
                }
                Phase::Instruct { measure, .. } => {
                    next.phase = Phase::DownbeatCue(measure + 1);
                    out.push(Emission::StateChanged { state: next.phase });
                    let g = next.issue(GestureKind::Downbeat);
                    next.awaiting = Some(g.id);
                    out.push(Emission::GestureRequest { gesture: g });
                }
                Phase::DownbeatCue(j) => {
                    next.phase = Phase::Sustain(j);
                    out.push(Emission::StateChanged { state: next.phase });
                }
                Phase::EndOfPiece => {}
                Phase::Idle | Phase::Sustain(_) => return Err(illegal()),
            }
        }
    }
    Ok((next, out))
}

impl ConductorState {
    fn issue(&mut self, kind: GestureKind) -> Gesture {
        let id = GestureId(self.next_gesture);
        self.next_gesture += 1;
        Gesture { id, kind }
    }

    /// Emit eye contact for the `step`-th part, then its nod unless the part
    /// keeps its pitch.
    fn instruct(
        &mut self,
        score: &Score,
        measure: usize,
        step: usize,
        out: &mut Vec<Emission>,
    ) -> Result<(), ConductorError> {
        let plan = plan_transition(&score.measures[measure], &score.measures[measure + 1], &score.parts)?;
        let instr = &plan[step];
        let look = self.issue(GestureKind::EyeContact(instr.part_id.clone()));
        let mut last = look.id;
        out.push(Emission::GestureRequest { gesture: look });
        if let Some(kind) = GestureKind::nod(instr.part_id.clone(), instr.adjustment) {
            let nod = self.issue(kind);
            last = nod.id;
            out.push(Emission::GestureRequest { gesture: nod });
        }
        self.awaiting = Some(last);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t_ms: u64,
    pub event: ConductorEvent,
}

impl TimedEvent {
    pub fn new(t_ms: u64, event: ConductorEvent) -> Self {
        TimedEvent { t_ms, event }
    }
}

/// Yields time-ordered conductor events. `None` ends the session.
pub trait EventSource {
    fn next_event(&mut self) -> Result<Option<TimedEvent>, SessionError>;
}

/// Receives every emission, in order, stamped with the time of the event
/// that caused it.
pub trait OutputSink {
    fn emit(&mut self, t_ms: u64, emission: &Emission) -> Result<(), SessionError>;
}

/// Pairs a separate source and sink into one session endpoint.
pub struct Split<S, K> {
    pub source: S,
    pub sink: K,
}

impl<S: EventSource, K> EventSource for Split<S, K> {
    fn next_event(&mut self) -> Result<Option<TimedEvent>, SessionError> {
        self.source.next_event()
    }
}

impl<S, K: OutputSink> OutputSink for Split<S, K> {
    fn emit(&mut self, t_ms: u64, emission: &Emission) -> Result<(), SessionError> {
        self.sink.emit(t_ms, emission)
    }
}

/// A fixed list of events.
impl EventSource for std::vec::IntoIter<TimedEvent> {
    fn next_event(&mut self) -> Result<Option<TimedEvent>, SessionError> {
        Ok(self.next())
    }
}

impl OutputSink for Vec<(u64, Emission)> {
    fn emit(&mut self, t_ms: u64, emission: &Emission) -> Result<(), SessionError> {
        self.push((t_ms, emission.clone()));
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("score failed validation with {0} violation(s)")]
    InvalidScore(usize),
    #[error(transparent)]
    Conductor(#[from] ConductorError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("event source: {0}")]
    Source(String),
    #[error("output sink: {0}")]
    Sink(String),
    #[error("camera: {0}")]
    Camera(String),
    #[error("event at {t_ms} ms precedes previous event at {previous_ms} ms")]
    OutOfOrder { t_ms: u64, previous_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub measures: usize,
    pub duration_ms: u64,
    pub end_state: Phase,
    pub events: usize,
    pub gestures: usize,
}

/// Drive [`step`] from `io` until the piece ends, the session is aborted, or
/// the source runs dry. Every input and emission is recorded, and every
/// emission is forwarded to the sink.
pub fn run_session<IO>(
    score: &Score,
    io: &mut IO,
    recorder: &SessionRecorder,
) -> Result<SessionSummary, SessionError>
where
    IO: EventSource + OutputSink + ?Sized,
{
    let report = validate_score(score);
    if !report.is_valid() {
        return Err(SessionError::InvalidScore(report.violations.len()));
    }

    let mut state = ConductorState::default();
    let mut summary = SessionSummary {
        measures: 0,
        duration_ms: 0,
        end_state: Phase::Idle,
        events: 0,
        gestures: 0,
    };
    let mut first_t = None;
    let mut last_t = 0;

    while let Some(TimedEvent { t_ms, event }) = io.next_event()? {
        if t_ms < last_t {
            return Err(SessionError::OutOfOrder { t_ms, previous_ms: last_t });
        }
        last_t = t_ms;
        first_t.get_or_insert(t_ms);
        summary.events += 1;

        recorder.record(t_ms, Payload::Input(event.clone()))?;
        let (next, emissions) = step(&state, &event, score)?;
        state = next;
        for emission in &emissions {
            recorder.record(t_ms, Payload::Emission(emission.clone()))?;
            match emission {
                Emission::StateChanged { state: Phase::Sustain(_) } => summary.measures += 1,
                Emission::GestureRequest { .. } => summary.gestures += 1,
                _ => {}
            }
            io.emit(t_ms, emission)?;
        }

        if matches!(state.phase, Phase::EndOfPiece)
            || (matches!(event, ConductorEvent::Abort) && state.phase == Phase::Idle)
        {
            break;
        }
    }

    summary.end_state = state.phase;
    summary.duration_ms = last_t - first_t.unwrap_or(last_t);
    Ok(summary)
}
