//! The hidden score: parts, measures of sustained pitches, and the
//! reachability check between consecutive measures.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Mechanical pan range of the camera, degrees either side of home.
pub const PAN_LIMIT_DEG: f64 = 170.0;
/// Lowest reachable tilt, degrees.
pub const TILT_MIN_DEG: f64 = -30.0;
/// Highest reachable tilt, degrees.
pub const TILT_MAX_DEG: f64 = 90.0;

/// A MIDI note number, 0..=127 (60 = C4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Pitch(u8);

impl Pitch {
    pub const MAX: u8 = 127;

    pub fn new(midi: i64) -> Option<Pitch> {
        (0..=Self::MAX as i64).contains(&midi).then_some(Pitch(midi as u8))
    }

    pub fn midi(self) -> u8 {
        self.0
    }

    /// Octave-free pitch class, 0 = C.
    pub fn class(self) -> u8 {
        self.0 % 12
    }

    /// Equal-tempered frequency with A4 (69) at 440 Hz.
    pub fn frequency_hz(self) -> f64 {
        440.0 * 2f64.powf((self.0 as f64 - 69.0) / 12.0)
    }
}

impl<'de> Deserialize<'de> for Pitch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = i64::deserialize(d)?;
        Pitch::new(raw)
            .ok_or_else(|| serde::de::Error::custom(format!("pitch {raw} outside 0..=127")))
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
        let octave = self.0 as i32 / 12 - 1;
        write!(f, "{}{}", NAMES[self.class() as usize], octave)
    }
}

/// Signed semitone distance `to - from`.
pub fn delta(from: Pitch, to: Pitch) -> i32 {
    to.0 as i32 - from.0 as i32
}

/// Stable short identifier for a musician's part, e.g. `vln`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartId(String);

impl PartId {
    pub fn new(id: impl Into<String>) -> Self {
        PartId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartId {
    fn from(s: &str) -> Self {
        PartId(s.to_owned())
    }
}

/// Pan/tilt direction in degrees relative to the camera's home position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Bearing {
    pub pan: f64,
    pub tilt: f64,
}

impl Bearing {
    pub const fn new(pan: f64, tilt: f64) -> Self {
        Bearing { pan, tilt }
    }

    pub fn is_finite(self) -> bool {
        self.pan.is_finite() && self.tilt.is_finite()
    }

    /// Clamp into the camera's mechanical envelope.
    pub fn clamped(self) -> Self {
        Bearing {
            pan: self.pan.clamp(-PAN_LIMIT_DEG, PAN_LIMIT_DEG),
            tilt: self.tilt.clamp(TILT_MIN_DEG, TILT_MAX_DEG),
        }
    }

    pub fn within_limits(self) -> bool {
        self.is_finite() && self.clamped() == self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub part_id: PartId,
    pub display_name: String,
    pub seat_bearing: Bearing,
}

/// One sustained chord: a pitch per part, in part order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Measure(pub Vec<Pitch>);

impl Measure {
    pub fn from_midi(notes: &[u8]) -> Self {
        Measure(notes.iter().map(|&m| Pitch::new(m as i64).expect("midi note")).collect())
    }

    pub fn pitches(&self) -> &[Pitch] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sorted pitch-class multiset, the octave-free identity of the chord.
    pub fn chord_class(&self) -> Vec<u8> {
        let mut classes: Vec<u8> = self.0.iter().map(|p| p.class()).collect();
        classes.sort_unstable();
        classes
    }
}

impl std::ops::Index<usize> for Measure {
    type Output = Pitch;
    fn index(&self, i: usize) -> &Pitch {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub parts: Vec<Part>,
    pub measures: Vec<Measure>,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("score syntax error: {0}")]
    Syntax(String),
    #[error("score schema error: {0}")]
    Schema(String),
}

/// Parse a JSON score document. Reachability is checked separately by
/// [`validate_score`] so broken scores can still be loaded and repaired.
pub fn parse_score(text: &str) -> Result<Score, ScoreError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ScoreError::Syntax(e.to_string()))?;
    let mut score: Score =
        serde_json::from_value(value).map_err(|e| ScoreError::Schema(e.to_string()))?;

    if score.parts.is_empty() {
        return Err(ScoreError::Schema("score declares no parts".into()));
    }
    if score.measures.is_empty() {
        return Err(ScoreError::Schema("score has no measures".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for part in &mut score.parts {
        if part.part_id.as_str().is_empty() {
            return Err(ScoreError::Schema("empty part_id".into()));
        }
        if !seen.insert(part.part_id.clone()) {
            return Err(ScoreError::Schema(format!("duplicate part_id {}", part.part_id)));
        }
        if !part.seat_bearing.is_finite() {
            return Err(ScoreError::Schema(format!(
                "seat bearing of {} is not finite",
                part.part_id
            )));
        }
        part.seat_bearing = part.seat_bearing.clamped();
    }
    for (i, m) in score.measures.iter().enumerate() {
        if m.len() != score.parts.len() {
            return Err(ScoreError::Schema(format!(
                "measure {i} has {} pitches but {} parts are declared",
                m.len(),
                score.parts.len()
            )));
        }
    }
    Ok(score)
}

/// A semitone jump between consecutive measures that no single adjustment
/// can express.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the earlier measure of the pair.
    pub measure: usize,
    pub part: usize,
    pub part_id: PartId,
    pub delta: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Largest single-step move the conductor can instruct, in semitones.
pub const MAX_STEP: i32 = 2;

pub fn validate_score(score: &Score) -> ValidationReport {
    let violations = score
        .measures
        .windows(2)
        .enumerate()
        .flat_map(|(i, pair)| {
            pair[0]
                .pitches()
                .iter()
                .zip(pair[1].pitches())
                .enumerate()
                .filter_map(move |(p, (&a, &b))| {
                    let d = delta(a, b);
                    (d.abs() > MAX_STEP).then_some((i, p, d))
                })
        })
        .map(|(measure, part, delta)| Violation {
            measure,
            part,
            part_id: score.parts[part].part_id.clone(),
            delta,
        })
        .collect();
    ValidationReport { violations }
}

impl Score {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score serializes")
    }

    /// SHA-256 over the compact JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("score serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn part_index(&self, id: &PartId) -> Option<usize> {
        self.parts.iter().position(|p| &p.part_id == id)
    }

    pub fn part(&self, id: &PartId) -> Option<&Part> {
        self.parts.iter().find(|p| &p.part_id == id)
    }

    pub fn last_measure(&self) -> usize {
        self.measures.len().saturating_sub(1)
    }

    /// Where the camera looks for collective cues: the mean of all seats.
    pub fn ensemble_center(&self) -> Bearing {
        let n = self.parts.len().max(1) as f64;
        let (pan, tilt) = self
            .parts
            .iter()
            .fold((0.0, 0.0), |(p, t), part| (p + part.seat_bearing.pan, t + part.seat_bearing.tilt));
        Bearing::new(pan / n, tilt / n)
    }

    /// Replace seat bearings per part, e.g. from a venue override file.
    pub fn with_bearings<'a>(
        mut self,
        overrides: impl IntoIterator<Item = (&'a PartId, Bearing)>,
    ) -> Result<Self, ScoreError> {
        for (id, bearing) in overrides {
            let part = self
                .parts
                .iter_mut()
                .find(|p| &p.part_id == id)
                .ok_or_else(|| ScoreError::Schema(format!("no part named {id}")))?;
            if !bearing.is_finite() {
                return Err(ScoreError::Schema(format!("bearing for {id} is not finite")));
            }
            part.seat_bearing = bearing.clamped();
        }
        Ok(self)
    }

    /// The three-part C major to F major example used throughout the docs
    /// and tests: violin, viola and cello voiced C4/E4/G3 then C4/F4/A3.
    pub fn c_to_f_trio() -> Score {
        let part = |id: &str, name: &str, pan: f64| Part {
            part_id: PartId::new(id),
            display_name: name.to_owned(),
            seat_bearing: Bearing::new(pan, 0.0),
        };
        Score {
            parts: vec![
                part("vln", "Violin", -30.0),
                part("vla", "Viola", 0.0),
                part("vc", "Cello", 25.0),
            ],
            measures: vec![Measure::from_midi(&[60, 64, 55]), Measure::from_midi(&[60, 65, 57])],
        }
    }
}
