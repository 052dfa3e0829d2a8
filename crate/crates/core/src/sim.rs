//! Closed-loop desk rehearsal: the conductor, a modelled camera and the
//! simulated ensemble on one event queue driven by a virtual clock.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codebook::{duration_of, Codebook, Gesture, Kinematics, Stage};
use crate::conductor::{
    run_session, ConductorEvent, Emission, EventSource, OutputSink, Phase, SessionError, SessionSummary,
    TimedEvent,
};
use crate::ensemble::{Ensemble, EnsembleConfig};
use crate::ptz::CameraPose;
use crate::score::{Bearing, Pitch, Score};
use crate::session::{Payload, SessionRecorder};

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub codebook: Codebook,
    pub kinematics: Kinematics,
    /// Overrides the per-agent seeds.
    pub master_seed: Option<u64>,
    /// When set, sleep between events so the run takes `1 / speed` of its
    /// virtual duration in wall time.
    pub speed: Option<f64>,
    pub start_ms: u64,
}

/// What the ensemble sounded when the conductor entered `Sustain(measure)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SustainCheck {
    pub measure: usize,
    pub sounding: Vec<Option<Pitch>>,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub summary: SessionSummary,
    pub sustains: Vec<SustainCheck>,
}

impl SimReport {
    pub fn reached_end(&self) -> bool {
        self.summary.end_state == Phase::EndOfPiece
    }

    pub fn all_sustains_match(&self) -> bool {
        self.sustains.iter().all(|s| s.matches)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    Done(u64),
    Raise(crate::score::PartId),
}

pub struct Simulation<'a> {
    score: &'a Score,
    stage: Stage,
    options: SimOptions,
    ensemble: Ensemble,
    recorder: SessionRecorder,
    queue: BinaryHeap<Reverse<(u64, u64, Pending)>>,
    order: u64,
    now: u64,
    started: bool,
    camera_at: Bearing,
    camera_free_at: u64,
    in_flight: Vec<(Gesture, Bearing)>,
    sustains: Vec<SustainCheck>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        score: &'a Score,
        agents: &EnsembleConfig,
        options: SimOptions,
        recorder: SessionRecorder,
    ) -> Result<Self, SessionError> {
        let ensemble =
            Ensemble::new(score, agents, options.master_seed).map_err(|e| SessionError::Source(e.to_string()))?;
        let stage = Stage::from_score(score);
        Ok(Simulation {
            score,
            camera_at: stage.center,
            stage,
            now: options.start_ms,
            camera_free_at: options.start_ms,
            options,
            ensemble,
            recorder,
            queue: BinaryHeap::new(),
            order: 0,
            started: false,
            in_flight: Vec::new(),
            sustains: Vec::new(),
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    fn push(&mut self, t_ms: u64, what: Pending) {
        self.order += 1;
        self.queue.push(Reverse((t_ms, self.order, what)));
    }

    fn pace(&self, to_ms: u64) {
        if let Some(speed) = self.options.speed.filter(|s| *s > 0.0) {
            let wall = to_ms.saturating_sub(self.now) as f64 / speed;
            std::thread::sleep(Duration::from_secs_f64(wall / 1000.0));
        }
    }

    fn start_gesture(&mut self, gesture: &Gesture) -> Result<(), SessionError> {
        let plan = self
            .options
            .codebook
            .compile(&gesture.kind, &self.stage)
            .map_err(|e| SessionError::Camera(e.to_string()))?;
        let begin = self.now.max(self.camera_free_at);
        let took = duration_of(&plan, &self.options.kinematics, self.camera_at).ceil() as u64;
        let end = plan.final_bearing().unwrap_or(self.camera_at);
        self.camera_at = end;
        self.camera_free_at = begin + took;
        self.in_flight.push((gesture.clone(), end));
        self.push(begin + took, Pending::Done(gesture.id.0));
        Ok(())
    }

    fn record(&self, payload: Payload) -> Result<(), SessionError> {
        self.recorder.record(self.now, payload)?;
        Ok(())
    }

    /// Drive the whole session to completion.
    pub fn run(mut self) -> Result<SimReport, SessionError> {
        let score = self.score;
        let recorder = self.recorder.clone();
        let summary = run_session(score, &mut self, &recorder)?;
        Ok(SimReport { summary, sustains: self.sustains })
    }
}

impl EventSource for Simulation<'_> {
    fn next_event(&mut self) -> Result<Option<TimedEvent>, SessionError> {
        if !self.started {
            self.started = true;
            return Ok(Some(TimedEvent::new(self.now, ConductorEvent::Start)));
        }
        let Some(Reverse((t_ms, _, what))) = self.queue.pop() else { return Ok(None) };
        self.pace(t_ms);
        self.now = t_ms;
        let event = match what {
            Pending::Done(id) => {
                let at = self.in_flight.iter().position(|(g, _)| g.id.0 == id).expect("gesture in flight");
                let (gesture, pose) = self.in_flight.remove(at);
                self.record(Payload::CameraPose(CameraPose { pan: pose.pan, tilt: pose.tilt, moving: false }))?;
                self.ensemble.observe_gesture(&gesture);
                ConductorEvent::MotionDone { gesture: gesture.id }
            }
            Pending::Raise(part) => {
                self.record(Payload::Detection { part: part.clone(), t_ms })?;
                ConductorEvent::RequestSignal { part, t_ms }
            }
        };
        Ok(Some(TimedEvent::new(t_ms, event)))
    }
}

impl OutputSink for Simulation<'_> {
    fn emit(&mut self, _t_ms: u64, emission: &Emission) -> Result<(), SessionError> {
        match emission {
            Emission::PitchAnnounce { part, pitch } => self.ensemble.announce(part, *pitch),
            Emission::GestureRequest { gesture } => self.start_gesture(gesture)?,
            Emission::StateChanged { state: Phase::Sustain(i) } => {
                let i = *i;
                let sounding = self.ensemble.state().pitches();
                let expected = self.score.measures[i].pitches();
                let matches = self.score.parts.iter().zip(expected).all(|(part, want)| {
                    match self.ensemble.state().agents.iter().find(|a| a.part == part.part_id) {
                        Some(a) => a.pitch == Some(*want),
                        None => true,
                    }
                });
                self.record(Payload::PitchState { pitches: self.ensemble.state().snapshot() })?;
                self.sustains.push(SustainCheck { measure: i, sounding, matches });
                if let Some(signal) = self.ensemble.schedule_request(self.now) {
                    self.push(signal.t_ms, Pending::Raise(signal.part));
                }
            }
            Emission::StateChanged { .. } => {}
        }
        Ok(())
    }
}

/// One closed-loop run with an in-memory log.
pub fn simulate(score: &Score, agents: &EnsembleConfig, options: SimOptions) -> Result<SimReport, SessionError> {
    Simulation::new(score, agents, options, SessionRecorder::disabled())?.run()
}
