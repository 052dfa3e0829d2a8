//! Raised-hand detection over ingested COCO-17 keypoint streams.
//!
//! Pose estimation happens elsewhere; this module only reads its output as
//! JSON lines, assigns people to seats by horizontal position, and turns a
//! sustained raised hand into one request signal per raise.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{PartId, Score};

pub const KEYPOINTS: usize = 17;
pub const NOSE: usize = 0;
pub const LEFT_SHOULDER: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const LEFT_WRIST: usize = 9;
pub const RIGHT_WRIST: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    /// Image space: grows downward.
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint { x, y, confidence }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonPose {
    pub keypoints: [Keypoint; KEYPOINTS],
    pub bbox_center_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub t_ms: u64,
    pub persons: Vec<PersonPose>,
}

#[derive(Serialize, Deserialize)]
struct WirePerson {
    bbox_cx: f64,
    kp: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct WireFrame {
    t: u64,
    persons: Vec<WirePerson>,
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("bad keypoint frame: {0}")]
    Parse(String),
    #[error("frame at {t_ms} ms arrived after frame at {previous_ms} ms")]
    OutOfOrderFrame { t_ms: u64, previous_ms: u64 },
    #[error("bad seat map: {0}")]
    SeatMap(String),
    #[error("reading keypoints: {0}")]
    Io(#[from] std::io::Error),
}

impl KeypointFrame {
    /// One line of the keypoint stream:
    /// `{"t":123,"persons":[{"bbox_cx":0.21,"kp":[[x,y,c], ... 17 triples]}]}`.
    pub fn from_json(line: &str) -> Result<Self, DetectorError> {
        let wire: WireFrame = serde_json::from_str(line).map_err(|e| DetectorError::Parse(e.to_string()))?;
        let persons = wire
            .persons
            .into_iter()
            .map(|p| {
                if p.kp.len() != KEYPOINTS {
                    return Err(DetectorError::Parse(format!("expected 17 keypoints, got {}", p.kp.len())));
                }
                if !(0.0..=1.0).contains(&p.bbox_cx) {
                    return Err(DetectorError::Parse(format!("bbox_cx {} outside [0, 1]", p.bbox_cx)));
                }
                let mut keypoints = [Keypoint::new(0.0, 0.0, 0.0); KEYPOINTS];
                for (slot, [x, y, c]) in keypoints.iter_mut().zip(p.kp) {
                    if !(0.0..=1.0).contains(&c) {
                        return Err(DetectorError::Parse(format!("confidence {c} outside [0, 1]")));
                    }
                    *slot = Keypoint::new(x, y, c);
                }
                Ok(PersonPose { keypoints, bbox_center_x: p.bbox_cx })
            })
            .collect::<Result<_, _>>()?;
        Ok(KeypointFrame { t_ms: wire.t, persons })
    }

    pub fn to_json(&self) -> String {
        let wire = WireFrame {
            t: self.t_ms,
            persons: self
                .persons
                .iter()
                .map(|p| WirePerson {
                    bbox_cx: p.bbox_center_x,
                    kp: p.keypoints.iter().map(|k| [k.x, k.y, k.confidence]).collect(),
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("frame serializes")
    }
}

/// Iterate frames from a JSON-lines reader, skipping blank lines.
pub fn read_frames(reader: impl BufRead) -> impl Iterator<Item = Result<KeypointFrame, DetectorError>> {
    reader.lines().filter_map(|line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(KeypointFrame::from_json(&l)),
        Err(e) => Some(Err(e.into())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatBand {
    pub part_id: PartId,
    pub x_min: f64,
    pub x_max: f64,
}

impl SeatBand {
    fn contains(&self, x: f64) -> bool {
        x >= self.x_min && (x < self.x_max || (x == self.x_max && self.x_max == 1.0))
    }

    fn center(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }
}

/// Horizontal image bands, one per seated part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SeatBand>", into = "Vec<SeatBand>")]
pub struct SeatMap {
    bands: Vec<SeatBand>,
}

impl TryFrom<Vec<SeatBand>> for SeatMap {
    type Error = DetectorError;

    fn try_from(bands: Vec<SeatBand>) -> Result<Self, Self::Error> {
        SeatMap::new(bands)
    }
}

impl From<SeatMap> for Vec<SeatBand> {
    fn from(m: SeatMap) -> Self {
        m.bands
    }
}

impl SeatMap {
    pub fn new(bands: Vec<SeatBand>) -> Result<Self, DetectorError> {
        for b in &bands {
            if !(0.0 <= b.x_min && b.x_min < b.x_max && b.x_max <= 1.0) {
                return Err(DetectorError::SeatMap(format!(
                    "band {} [{}, {}] is empty or outside [0, 1]",
                    b.part_id, b.x_min, b.x_max
                )));
            }
        }
        let mut sorted: Vec<&SeatBand> = bands.iter().collect();
        sorted.sort_by(|a, b| a.x_min.total_cmp(&b.x_min));
        for w in sorted.windows(2) {
            if w[1].x_min < w[0].x_max {
                return Err(DetectorError::SeatMap(format!("bands {} and {} overlap", w[0].part_id, w[1].part_id)));
            }
        }
        let mut ids: Vec<&PartId> = bands.iter().map(|b| &b.part_id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != bands.len() {
            return Err(DetectorError::SeatMap("a part has more than one band".into()));
        }
        Ok(SeatMap { bands })
    }

    /// Equal-width bands ordered by seat pan, left of image = leftmost seat.
    pub fn even_from_score(score: &Score) -> SeatMap {
        let mut parts: Vec<_> = score.parts.iter().collect();
        parts.sort_by(|a, b| a.seat_bearing.pan.total_cmp(&b.seat_bearing.pan));
        let width = 1.0 / parts.len() as f64;
        let bands = parts
            .iter()
            .enumerate()
            .map(|(i, p)| SeatBand {
                part_id: p.part_id.clone(),
                x_min: i as f64 * width,
                x_max: if i + 1 == parts.len() { 1.0 } else { (i + 1) as f64 * width },
            })
            .collect();
        SeatMap { bands }
    }

    pub fn bands(&self) -> &[SeatBand] {
        &self.bands
    }

    pub fn contains_part(&self, part: &PartId) -> bool {
        self.bands.iter().any(|b| &b.part_id == part)
    }
}

/// Map each seated part to the person in its band; when two people share a
/// band the one nearest its center wins.
pub fn assign_parts<'f>(frame: &'f KeypointFrame, seats: &SeatMap) -> BTreeMap<PartId, &'f PersonPose> {
    let mut out: BTreeMap<PartId, &PersonPose> = BTreeMap::new();
    for band in &seats.bands {
        let best = frame
            .persons
            .iter()
            .filter(|p| band.contains(p.bbox_center_x))
            .min_by(|a, b| {
                let da = (a.bbox_center_x - band.center()).abs();
                let db = (b.bbox_center_x - band.center()).abs();
                da.total_cmp(&db)
            });
        if let Some(p) = best {
            out.insert(band.part_id.clone(), p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub confidence_threshold: f64,
    /// Consecutive raised frames before a signal fires.
    pub debounce_frames: u32,
    /// Consecutive lowered frames before the next raise can fire.
    pub release_frames: u32,
    /// Person height estimated as this multiple of nose-to-shoulder distance.
    pub height_factor: f64,
    /// Wrist must clear the nose by this fraction of person height.
    pub raise_margin: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            confidence_threshold: 0.5,
            debounce_frames: 5,
            release_frames: 10,
            height_factor: 6.0,
            raise_margin: 0.05,
        }
    }
}

/// A wrist held clearly above the nose. Wrists at shoulder height, the
/// normal bowing posture, do not count.
pub fn is_hand_raised(pose: &PersonPose, config: &DetectorConfig) -> bool {
    let kp = &pose.keypoints;
    let sure = |k: &Keypoint| k.confidence >= config.confidence_threshold;
    let nose = kp[NOSE];
    if !sure(&nose) {
        return false;
    }
    let shoulders: Vec<f64> =
        [kp[LEFT_SHOULDER], kp[RIGHT_SHOULDER]].iter().filter(|k| sure(k)).map(|k| k.y).collect();
    if shoulders.is_empty() {
        return false;
    }
    let shoulder_y = shoulders.iter().sum::<f64>() / shoulders.len() as f64;
    let height = (nose.y - shoulder_y).abs() * config.height_factor;
    [kp[LEFT_WRIST], kp[RIGHT_WRIST]]
        .iter()
        .any(|w| sure(w) && w.y < nose.y - config.raise_margin * height)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartDetector {
    pub consecutive_raised_frames: u32,
    pub consecutive_lowered_frames: u32,
    pub latched: bool,
}

impl PartDetector {
    /// Advance by one frame; true when this frame fires a signal.
    pub fn observe(&mut self, raised: bool, config: &DetectorConfig) -> bool {
        if raised {
            self.consecutive_raised_frames += 1;
            self.consecutive_lowered_frames = 0;
            if !self.latched && self.consecutive_raised_frames >= config.debounce_frames {
                self.latched = true;
                return true;
            }
        } else {
            self.consecutive_raised_frames = 0;
            self.consecutive_lowered_frames += 1;
            if self.latched && self.consecutive_lowered_frames >= config.release_frames {
                self.latched = false;
            }
        }
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub parts: BTreeMap<PartId, PartDetector>,
    pub last_t_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSignal {
    pub part: PartId,
    pub t_ms: u64,
}

/// Feed one frame. A part absent from the frame counts as lowered. Signals
/// come out in seat-map order; several parts may fire on the same frame.
pub fn step_detector(
    state: &DetectorState,
    frame: &KeypointFrame,
    seats: &SeatMap,
    config: &DetectorConfig,
) -> Result<(DetectorState, Vec<RequestSignal>), DetectorError> {
    if let Some(prev) = state.last_t_ms {
        if frame.t_ms < prev {
            return Err(DetectorError::OutOfOrderFrame { t_ms: frame.t_ms, previous_ms: prev });
        }
    }
    let assigned = assign_parts(frame, seats);
    let mut next = state.clone();
    next.last_t_ms = Some(frame.t_ms);
    let mut signals = Vec::new();
    for band in seats.bands() {
        let raised = assigned.get(&band.part_id).is_some_and(|p| is_hand_raised(p, config));
        let det = next.parts.entry(band.part_id.clone()).or_default();
        if det.observe(raised, config) {
            signals.push(RequestSignal { part: band.part_id.clone(), t_ms: frame.t_ms });
        }
    }
    Ok((next, signals))
}

/// Stateful convenience wrapper around [`step_detector`].
#[derive(Debug, Clone)]
pub struct CueDetector {
    pub seats: SeatMap,
    pub config: DetectorConfig,
    state: DetectorState,
}

impl CueDetector {
    pub fn new(seats: SeatMap, config: DetectorConfig) -> Self {
        CueDetector { seats, config, state: DetectorState::default() }
    }

    pub fn push(&mut self, frame: &KeypointFrame) -> Result<Vec<RequestSignal>, DetectorError> {
        let (next, signals) = step_detector(&self.state, frame, &self.seats, &self.config)?;
        self.state = next;
        Ok(signals)
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }
}

/// Synthetic poses for tests and demos, in normalized image coordinates.
pub mod synth {
    use super::*;

    /// A seated player with nose at y=0.30 and shoulders at y=0.40.
    /// `wrist_y` places both wrists.
    pub fn person(bbox_cx: f64, wrist_y: f64, wrist_confidence: f64) -> PersonPose {
        let mut keypoints = [Keypoint::new(bbox_cx, 0.5, 0.9); KEYPOINTS];
        keypoints[NOSE] = Keypoint::new(bbox_cx, 0.30, 0.9);
        keypoints[LEFT_SHOULDER] = Keypoint::new(bbox_cx - 0.03, 0.40, 0.9);
        keypoints[RIGHT_SHOULDER] = Keypoint::new(bbox_cx + 0.03, 0.40, 0.9);
        keypoints[LEFT_WRIST] = Keypoint::new(bbox_cx - 0.05, wrist_y, wrist_confidence);
        keypoints[RIGHT_WRIST] = Keypoint::new(bbox_cx + 0.05, wrist_y, wrist_confidence);
        PersonPose { keypoints, bbox_center_x: bbox_cx }
    }

    pub fn raised(bbox_cx: f64) -> PersonPose {
        person(bbox_cx, 0.10, 0.9)
    }

    pub fn playing(bbox_cx: f64) -> PersonPose {
        person(bbox_cx, 0.40, 0.9)
    }
}
