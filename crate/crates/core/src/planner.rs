//! Who/how instruction planning between measures, and the sustain-time
//! preference statistic mined from session logs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conductor::{ConductorEvent, Emission, Phase};
use crate::score::{delta, Measure, Part, PartId, Pitch, Score};
use crate::session::{Payload, SessionEvent};

/// The five pitch instructions a musician can receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    UpHalf,
    UpWhole,
    DownHalf,
    DownWhole,
    NoChange,
}

impl Adjustment {
    pub const ALL: [Adjustment; 5] = [
        Adjustment::UpHalf,
        Adjustment::UpWhole,
        Adjustment::DownHalf,
        Adjustment::DownWhole,
        Adjustment::NoChange,
    ];

    pub fn semitones(self) -> i32 {
        match self {
            Adjustment::UpHalf => 1,
            Adjustment::UpWhole => 2,
            Adjustment::DownHalf => -1,
            Adjustment::DownWhole => -2,
            Adjustment::NoChange => 0,
        }
    }

    pub fn from_semitones(d: i32) -> Option<Adjustment> {
        Some(match d {
            1 => Adjustment::UpHalf,
            2 => Adjustment::UpWhole,
            -1 => Adjustment::DownHalf,
            -2 => Adjustment::DownWhole,
            0 => Adjustment::NoChange,
            _ => return None,
        })
    }
}

impl fmt::Display for Adjustment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adjustment::UpHalf => "up a half step",
            Adjustment::UpWhole => "up a whole step",
            Adjustment::DownHalf => "down a half step",
            Adjustment::DownWhole => "down a whole step",
            Adjustment::NoChange => "no change",
        })
    }
}

/// One two-part message: which musician, and what they should do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub part_id: PartId,
    pub adjustment: Adjustment,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("part {part} would have to move {delta} semitones")]
    UnreachableTransition { part: usize, delta: i32 },
    #[error("measure widths {current}/{next} do not match {parts} parts")]
    WidthMismatch { current: usize, next: usize, parts: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("pitch {pitch} moved {adjustment} leaves the MIDI range")]
pub struct RangeError {
    pub pitch: u8,
    pub adjustment: Adjustment,
}

/// One instruction per part, in score part order, including explicit
/// `NoChange` entries.
pub fn plan_transition(
    current: &Measure,
    next: &Measure,
    parts: &[Part],
) -> Result<Vec<Instruction>, PlanError> {
    if current.len() != parts.len() || next.len() != parts.len() {
        return Err(PlanError::WidthMismatch {
            current: current.len(),
            next: next.len(),
            parts: parts.len(),
        });
    }
    current
        .pitches()
        .iter()
        .zip(next.pitches())
        .zip(parts)
        .enumerate()
        .map(|(i, ((&a, &b), part))| {
            let d = delta(a, b);
            Adjustment::from_semitones(d)
                .map(|adjustment| Instruction { part_id: part.part_id.clone(), adjustment })
                .ok_or(PlanError::UnreachableTransition { part: i, delta: d })
        })
        .collect()
}

pub fn apply_instruction(pitch: Pitch, adjustment: Adjustment) -> Result<Pitch, RangeError> {
    Pitch::new(pitch.midi() as i64 + adjustment.semitones() as i64)
        .ok_or(RangeError { pitch: pitch.midi(), adjustment })
}

/// Sorted pitch classes of a sustained chord, e.g. `[0, 4, 7]` for C major.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChordClass(pub Vec<u8>);

impl fmt::Display for ChordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(&self.0).expect("u8 list"))
    }
}

impl Serialize for ChordClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChordClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        serde_json::from_str(&text).map(ChordClass).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub samples_ms: Vec<u64>,
    pub mean_ms: Option<f64>,
}

impl PreferenceRecord {
    fn push(&mut self, sample: u64) {
        self.samples_ms.push(sample);
        let sum: u64 = self.samples_ms.iter().sum();
        self.mean_ms = Some(sum as f64 / self.samples_ms.len() as f64);
    }
}

pub type PreferenceReport = BTreeMap<ChordClass, PreferenceRecord>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MalformedLog {
    #[error("event seq {seq} is out of order")]
    OutOfOrder { seq: u64 },
    #[error("event seq {seq} closes a sustain that was never opened")]
    IntervalNeverOpened { seq: u64 },
    #[error("event seq {seq} refers to measure {measure}, which the score does not have")]
    UnknownMeasure { seq: u64, measure: usize },
}

/// Sustain durations keyed by chord class.
///
/// An interval opens when the conductor enters `Sustain(i)` and its sample is
/// the time until the first request signal that follows. Sustains that end
/// any other way (abort, truncated log) contribute nothing. Only the first
/// signal of an interval counts.
pub fn update_preferences(
    score: &Score,
    log: &[SessionEvent],
) -> Result<PreferenceReport, MalformedLog> {
    let mut report = PreferenceReport::new();
    accumulate_preferences(&mut report, score, log)?;
    Ok(report)
}

/// Fold one more log into an existing report (for multi-session statistics).
pub fn accumulate_preferences(
    report: &mut PreferenceReport,
    score: &Score,
    log: &[SessionEvent],
) -> Result<(), MalformedLog> {
    struct Open {
        measure: usize,
        opened_at: u64,
        signalled: bool,
    }
    let mut open: Option<Open> = None;
    let mut last: Option<(u64, u64)> = None;

    for ev in log {
        if let Some((seq, t)) = last {
            if ev.seq <= seq || ev.t_ms < t {
                return Err(MalformedLog::OutOfOrder { seq: ev.seq });
            }
        }
        last = Some((ev.seq, ev.t_ms));

        match &ev.payload {
            Payload::Emission(Emission::StateChanged { state: phase }) => match phase {
                Phase::Sustain(i) => {
                    if *i >= score.measures.len() {
                        return Err(MalformedLog::UnknownMeasure { seq: ev.seq, measure: *i });
                    }
                    open = Some(Open { measure: *i, opened_at: ev.t_ms, signalled: false });
                }
                Phase::Instruct { step: 0, measure } => match open.take() {
                    Some(o) if o.measure == *measure && o.signalled => {}
                    _ => return Err(MalformedLog::IntervalNeverOpened { seq: ev.seq }),
                },
                Phase::EndOfPiece => match open.take() {
                    Some(o) if o.signalled => {}
                    _ => return Err(MalformedLog::IntervalNeverOpened { seq: ev.seq }),
                },
                _ => open = None,
            },
            Payload::Input(ConductorEvent::RequestSignal { .. }) => {
                if let Some(o) = open.as_mut().filter(|o| !o.signalled) {
                    o.signalled = true;
                    let chord = ChordClass(score.measures[o.measure].chord_class());
                    report.entry(chord).or_default().push(ev.t_ms - o.opened_at);
                }
            }
            _ => {}
        }
    }
    Ok(())
}
