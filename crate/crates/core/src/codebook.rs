//! Gesture vocabulary and its compilation into timed pan/tilt motion plans.
//!
//! Nod direction is carried by tilt sign and step size by repetition: one
//! excursion for a half step, two for a whole step. Eye contact is a plain
//! pan to the musician's seat. The downbeat lifts then bows at ensemble
//! center, and the end of the piece is a horizontal head shake.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::Adjustment;
use crate::score::{Bearing, PartId, Score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GestureId(pub u64);

impl fmt::Display for GestureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "name", content = "part", rename_all = "snake_case")]
pub enum GestureKind {
    EyeContact(PartId),
    NodUpHalf(PartId),
    NodUpWhole(PartId),
    NodDownHalf(PartId),
    NodDownWhole(PartId),
    Downbeat,
    EndOfPieceSignal,
}

impl GestureKind {
    /// The nod that encodes `adjustment`; `NoChange` has none.
    pub fn nod(part: PartId, adjustment: Adjustment) -> Option<GestureKind> {
        Some(match adjustment {
            Adjustment::UpHalf => GestureKind::NodUpHalf(part),
            Adjustment::UpWhole => GestureKind::NodUpWhole(part),
            Adjustment::DownHalf => GestureKind::NodDownHalf(part),
            Adjustment::DownWhole => GestureKind::NodDownWhole(part),
            Adjustment::NoChange => return None,
        })
    }

    /// Inverse of [`GestureKind::nod`].
    pub fn adjustment(&self) -> Option<Adjustment> {
        Some(match self {
            GestureKind::NodUpHalf(_) => Adjustment::UpHalf,
            GestureKind::NodUpWhole(_) => Adjustment::UpWhole,
            GestureKind::NodDownHalf(_) => Adjustment::DownHalf,
            GestureKind::NodDownWhole(_) => Adjustment::DownWhole,
            _ => return None,
        })
    }

    pub fn part(&self) -> Option<&PartId> {
        match self {
            GestureKind::EyeContact(p)
            | GestureKind::NodUpHalf(p)
            | GestureKind::NodUpWhole(p)
            | GestureKind::NodDownHalf(p)
            | GestureKind::NodDownWhole(p) => Some(p),
            GestureKind::Downbeat | GestureKind::EndOfPieceSignal => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GestureKind::EyeContact(_) => "eye_contact",
            GestureKind::NodUpHalf(_) => "nod_up_half",
            GestureKind::NodUpWhole(_) => "nod_up_whole",
            GestureKind::NodDownHalf(_) => "nod_down_half",
            GestureKind::NodDownWhole(_) => "nod_down_whole",
            GestureKind::Downbeat => "downbeat",
            GestureKind::EndOfPieceSignal => "end_of_piece_signal",
        }
    }

    /// Parse a gesture by its `name()`, attaching `part` where required.
    pub fn from_name(name: &str, part: Option<PartId>) -> Option<GestureKind> {
        let needs = |f: fn(PartId) -> GestureKind| part.clone().map(f);
        match name {
            "eye_contact" => needs(GestureKind::EyeContact),
            "nod_up_half" => needs(GestureKind::NodUpHalf),
            "nod_up_whole" => needs(GestureKind::NodUpWhole),
            "nod_down_half" => needs(GestureKind::NodDownHalf),
            "nod_down_whole" => needs(GestureKind::NodDownWhole),
            "downbeat" => Some(GestureKind::Downbeat),
            "end_of_piece_signal" => Some(GestureKind::EndOfPieceSignal),
            _ => None,
        }
    }
}

impl fmt::Display for GestureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.part() {
            Some(p) => write!(f, "{}({p})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gesture {
    pub id: GestureId,
    #[serde(flatten)]
    pub kind: GestureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub target_pan: f64,
    pub target_tilt: f64,
    /// Fraction of maximum axis speed, in (0, 1].
    pub speed: f64,
    /// Dwell after arrival.
    pub hold_ms: u64,
}

impl MotionSegment {
    pub fn target(&self) -> Bearing {
        Bearing::new(self.target_pan, self.target_tilt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub segments: Vec<MotionSegment>,
}

impl MotionPlan {
    pub fn final_bearing(&self) -> Option<Bearing> {
        self.segments.last().map(MotionSegment::target)
    }

    pub fn tilt_targets(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.target_tilt).collect()
    }

    pub fn pan_targets(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.target_pan).collect()
    }
}

/// Axis rates at full speed, degrees per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub pan_deg_per_s: f64,
    pub tilt_deg_per_s: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics { pan_deg_per_s: 120.0, tilt_deg_per_s: 80.0 }
    }
}

/// Travel time of one segment from `from`, excluding the hold.
pub fn segment_travel_ms(from: Bearing, seg: &MotionSegment, kin: &Kinematics) -> f64 {
    let pan_ms = (seg.target_pan - from.pan).abs() / (kin.pan_deg_per_s * seg.speed) * 1000.0;
    let tilt_ms = (seg.target_tilt - from.tilt).abs() / (kin.tilt_deg_per_s * seg.speed) * 1000.0;
    pan_ms.max(tilt_ms)
}

/// Total execution time of `plan` starting from `start`: per segment the
/// slower axis's travel time plus the hold.
pub fn duration_of(plan: &MotionPlan, kin: &Kinematics, start: Bearing) -> f64 {
    let mut at = start;
    let mut total = 0.0;
    for seg in &plan.segments {
        total += segment_travel_ms(at, seg, kin) + seg.hold_ms as f64;
        at = seg.target();
    }
    total
}

/// Tunable amplitudes and speeds. Loadable from JSON; missing keys fall back
/// to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub eye_contact_speed: f64,
    pub eye_contact_hold_ms: u64,
    pub nod_amplitude_deg: f64,
    pub nod_speed: f64,
    pub nod_hold_ms: u64,
    pub downbeat_lift_deg: f64,
    pub downbeat_bow_deg: f64,
    pub downbeat_speed: f64,
    pub shake_amplitude_deg: f64,
    pub shake_cycles: u32,
    pub shake_speed: f64,
    /// An excursion clipped by the camera limits to less than this fraction
    /// of its amplitude is rejected as unreadable.
    pub min_excursion_fraction: f64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            eye_contact_speed: 0.6,
            eye_contact_hold_ms: 1000,
            nod_amplitude_deg: 12.0,
            nod_speed: 0.9,
            nod_hold_ms: 200,
            downbeat_lift_deg: 15.0,
            downbeat_bow_deg: 20.0,
            downbeat_speed: 1.0,
            shake_amplitude_deg: 20.0,
            shake_cycles: 2,
            shake_speed: 1.0,
            min_excursion_fraction: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CodebookError {
    #[error("gesture addresses unknown part {0}")]
    UnknownPart(PartId),
    #[error("bearing ({pan}, {tilt}) cannot carry the {gesture} excursion within camera limits")]
    BearingOutOfRange { gesture: &'static str, pan: f64, tilt: f64 },
    #[error("invalid codebook config: {0}")]
    Config(String),
}

/// Seat bearings by part, plus the ensemble center.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub seats: HashMap<PartId, Bearing>,
    pub center: Bearing,
}

impl Stage {
    pub fn from_score(score: &Score) -> Stage {
        Stage {
            seats: score.parts.iter().map(|p| (p.part_id.clone(), p.seat_bearing)).collect(),
            center: score.ensemble_center(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Codebook {
    pub config: CodebookConfig,
}

impl Codebook {
    pub fn new(config: CodebookConfig) -> Result<Self, CodebookError> {
        let c = &config;
        for (name, s) in [
            ("eye_contact_speed", c.eye_contact_speed),
            ("nod_speed", c.nod_speed),
            ("downbeat_speed", c.downbeat_speed),
            ("shake_speed", c.shake_speed),
        ] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(CodebookError::Config(format!("{name} must be in (0, 1], got {s}")));
            }
        }
        if c.shake_cycles == 0 {
            return Err(CodebookError::Config("shake_cycles must be positive".into()));
        }
        Ok(Codebook { config })
    }

    pub fn from_json(text: &str) -> Result<Self, CodebookError> {
        let config = serde_json::from_str(text).map_err(|e| CodebookError::Config(e.to_string()))?;
        Codebook::new(config)
    }

    pub fn compile(&self, gesture: &GestureKind, stage: &Stage) -> Result<MotionPlan, CodebookError> {
        let c = &self.config;
        let seat = |p: &PartId| {
            stage.seats.get(p).copied().ok_or_else(|| CodebookError::UnknownPart(p.clone()))
        };
        let segments = match gesture {
            GestureKind::EyeContact(p) => {
                let at = checked(gesture, seat(p)?)?;
                vec![seg(at, c.eye_contact_speed, c.eye_contact_hold_ms)]
            }
            GestureKind::NodUpHalf(p) => self.nod(gesture, seat(p)?, 1.0, 1)?,
            GestureKind::NodUpWhole(p) => self.nod(gesture, seat(p)?, 1.0, 2)?,
            GestureKind::NodDownHalf(p) => self.nod(gesture, seat(p)?, -1.0, 1)?,
            GestureKind::NodDownWhole(p) => self.nod(gesture, seat(p)?, -1.0, 2)?,
            GestureKind::Downbeat => {
                let center = checked(gesture, stage.center)?;
                let lift = self.tilt_excursion(gesture, center, c.downbeat_lift_deg)?;
                let bow = self.tilt_excursion(gesture, center, -c.downbeat_bow_deg)?;
                let s = c.downbeat_speed;
                vec![seg(center, s, 0), seg(lift, s, 0), seg(bow, s, 0), seg(center, s, 0)]
            }
            GestureKind::EndOfPieceSignal => {
                let center = checked(gesture, stage.center)?;
                let left = self.pan_excursion(gesture, center, -c.shake_amplitude_deg)?;
                let right = self.pan_excursion(gesture, center, c.shake_amplitude_deg)?;
                let s = c.shake_speed;
                let mut out = vec![seg(center, s, 0)];
                for _ in 0..c.shake_cycles {
                    out.push(seg(left, s, 0));
                    out.push(seg(right, s, 0));
                }
                out.push(seg(center, s, 0));
                out
            }
        };
        Ok(MotionPlan { segments })
    }

    fn nod(
        &self,
        gesture: &GestureKind,
        at: Bearing,
        sign: f64,
        repetitions: usize,
    ) -> Result<Vec<MotionSegment>, CodebookError> {
        let c = &self.config;
        let at = checked(gesture, at)?;
        let peak = self.tilt_excursion(gesture, at, sign * c.nod_amplitude_deg)?;
        Ok((0..repetitions)
            .flat_map(|_| [seg(peak, c.nod_speed, 0), seg(at, c.nod_speed, c.nod_hold_ms)])
            .collect())
    }

    fn tilt_excursion(
        &self,
        gesture: &GestureKind,
        base: Bearing,
        offset: f64,
    ) -> Result<Bearing, CodebookError> {
        let target = Bearing::new(base.pan, base.tilt + offset).clamped();
        self.excursion_ok(gesture, (target.tilt - base.tilt).abs(), offset.abs(), base)?;
        Ok(target)
    }

    fn pan_excursion(
        &self,
        gesture: &GestureKind,
        base: Bearing,
        offset: f64,
    ) -> Result<Bearing, CodebookError> {
        let target = Bearing::new(base.pan + offset, base.tilt).clamped();
        self.excursion_ok(gesture, (target.pan - base.pan).abs(), offset.abs(), base)?;
        Ok(target)
    }

    fn excursion_ok(
        &self,
        gesture: &GestureKind,
        achieved: f64,
        wanted: f64,
        base: Bearing,
    ) -> Result<(), CodebookError> {
        if achieved + 1e-9 < wanted * self.config.min_excursion_fraction {
            return Err(CodebookError::BearingOutOfRange {
                gesture: gesture.name(),
                pan: base.pan,
                tilt: base.tilt,
            });
        }
        Ok(())
    }
}

fn seg(at: Bearing, speed: f64, hold_ms: u64) -> MotionSegment {
    MotionSegment { target_pan: at.pan, target_tilt: at.tilt, speed, hold_ms }
}

fn checked(gesture: &GestureKind, at: Bearing) -> Result<Bearing, CodebookError> {
    if !at.is_finite() {
        return Err(CodebookError::BearingOutOfRange { gesture: gesture.name(), pan: at.pan, tilt: at.tilt });
    }
    Ok(at.clamped())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage() -> Stage {
        Stage::from_score(&Score::c_to_f_trio())
    }

    fn zero_center_stage() -> Stage {
        let mut s = stage();
        s.center = Bearing::new(0.0, 0.0);
        s
    }

    #[test]
    fn eye_contact_moves_to_seat_and_holds() {
        let plan = Codebook::default().compile(&GestureKind::EyeContact("vln".into()), &stage()).unwrap();
        assert_eq!(
            plan.segments,
            vec![MotionSegment { target_pan: -30.0, target_tilt: 0.0, speed: 0.6, hold_ms: 1000 }]
        );
    }

    #[test]
    fn whole_step_nod_repeats_twice() {
        let plan = Codebook::default().compile(&GestureKind::NodUpWhole("vc".into()), &stage()).unwrap();
        assert_eq!(plan.segments.len(), 4);
        assert_eq!(plan.tilt_targets(), vec![12.0, 0.0, 12.0, 0.0]);
        assert!(plan.pan_targets().iter().all(|&p| p == 25.0));
        let peaks = plan.segments.iter().filter(|s| s.target_tilt > 0.0).count();
        assert_eq!(peaks, 2);
    }

    #[test]
    fn downbeat_lifts_then_bows() {
        let plan = Codebook::default().compile(&GestureKind::Downbeat, &zero_center_stage()).unwrap();
        assert_eq!(plan.tilt_targets(), vec![0.0, 15.0, -20.0, 0.0]);
        assert!(plan.segments.iter().all(|s| s.speed == 1.0));
    }

    #[test]
    fn end_of_piece_shakes_twice() {
        let plan = Codebook::default()
            .compile(&GestureKind::EndOfPieceSignal, &zero_center_stage())
            .unwrap();
        assert_eq!(plan.pan_targets(), vec![0.0, -20.0, 20.0, -20.0, 20.0, 0.0]);
        assert!(plan.tilt_targets().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn unknown_part_is_rejected() {
        let err = Codebook::default().compile(&GestureKind::EyeContact("kazoo".into()), &stage());
        assert_eq!(err, Err(CodebookError::UnknownPart("kazoo".into())));
    }

    #[test]
    fn nod_at_tilt_limit_is_clamped_or_rejected() {
        let mut s = stage();
        s.seats.insert("vc".into(), Bearing::new(25.0, 84.0));
        let plan = Codebook::default().compile(&GestureKind::NodUpHalf("vc".into()), &s).unwrap();
        assert_eq!(plan.tilt_targets(), vec![90.0, 84.0]);
        s.seats.insert("vc".into(), Bearing::new(25.0, 89.0));
        let err = Codebook::default().compile(&GestureKind::NodUpHalf("vc".into()), &s);
        assert!(matches!(err, Err(CodebookError::BearingOutOfRange { .. })));
        // a downward nod from the same seat is fine
        assert!(Codebook::default().compile(&GestureKind::NodDownHalf("vc".into()), &s).is_ok());
    }

    #[test]
    fn duration_single_pan() {
        let plan = MotionPlan {
            segments: vec![MotionSegment { target_pan: 90.0, target_tilt: 0.0, speed: 1.0, hold_ms: 0 }],
        };
        let kin = Kinematics { pan_deg_per_s: 90.0, tilt_deg_per_s: 90.0 };
        assert_eq!(duration_of(&plan, &kin, Bearing::default()), 1000.0);
    }

    #[test]
    fn duration_hold_only() {
        let plan = MotionPlan {
            segments: vec![MotionSegment { target_pan: 0.0, target_tilt: 0.0, speed: 0.5, hold_ms: 1000 }],
        };
        assert_eq!(duration_of(&plan, &Kinematics::default(), Bearing::default()), 1000.0);
    }

    #[test]
    fn downbeat_duration_hand_sum() {
        // from center: 0 + 15/80 + 35/80 + 20/80 seconds = 187.5 + 437.5 + 250 ms
        let plan = Codebook::default().compile(&GestureKind::Downbeat, &zero_center_stage()).unwrap();
        let ms = duration_of(&plan, &Kinematics::default(), Bearing::default());
        assert!((ms - 875.0).abs() < 1e-9, "{ms}");
    }

    #[test]
    fn config_json_overrides_defaults() {
        let book = Codebook::from_json(r#"{"nod_amplitude_deg": 8.0}"#).unwrap();
        assert_eq!(book.config.nod_amplitude_deg, 8.0);
        assert_eq!(book.config.eye_contact_hold_ms, 1000);
        assert!(Codebook::from_json(r#"{"nod_speed": 0.0}"#).is_err());
    }

    #[test]
    fn gesture_names_round_trip() {
        for kind in [
            GestureKind::EyeContact("a".into()),
            GestureKind::NodUpHalf("a".into()),
            GestureKind::NodUpWhole("a".into()),
            GestureKind::NodDownHalf("a".into()),
            GestureKind::NodDownWhole("a".into()),
            GestureKind::Downbeat,
            GestureKind::EndOfPieceSignal,
        ] {
            assert_eq!(GestureKind::from_name(kind.name(), kind.part().cloned()), Some(kind));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nod_families_obey_repetition_and_mirror_laws(pan in -170.0f64..170.0, tilt in -10.0f64..70.0) {
                let mut s = stage();
                s.seats.insert("x".into(), Bearing::new(pan, tilt));
                let book = Codebook::default();
                let c = |k: GestureKind| book.compile(&k, &s).unwrap();
                let up_h = c(GestureKind::NodUpHalf("x".into()));
                let up_w = c(GestureKind::NodUpWhole("x".into()));
                let dn_h = c(GestureKind::NodDownHalf("x".into()));
                let dn_w = c(GestureKind::NodDownWhole("x".into()));
                prop_assert_eq!(up_w.segments.len(), 2 * up_h.segments.len());
                prop_assert_eq!(dn_w.segments.len(), 2 * dn_h.segments.len());
                for (u, d) in up_w.segments.iter().zip(&dn_w.segments) {
                    prop_assert!(((u.target_tilt - tilt) + (d.target_tilt - tilt)).abs() < 1e-9);
                    prop_assert_eq!(u.target_pan, d.target_pan);
                }
            }

            #[test]
            fn plans_respect_limits(pan in -400.0f64..400.0, tilt in -100.0f64..100.0) {
                let mut s = stage();
                s.seats.insert("x".into(), Bearing::new(pan, tilt));
                s.center = Bearing::new(pan, tilt).clamped();
                let book = Codebook::default();
                for k in [
                    GestureKind::EyeContact("x".into()),
                    GestureKind::NodUpWhole("x".into()),
                    GestureKind::NodDownWhole("x".into()),
                    GestureKind::Downbeat,
                    GestureKind::EndOfPieceSignal,
                ] {
                    if let Ok(plan) = book.compile(&k, &s) {
                        prop_assert!(plan.segments.iter().all(|seg| seg.target().within_limits()));
                        prop_assert!(duration_of(&plan, &Kinematics::default(), s.center) >= 0.0);
                    }
                }
            }
        }
    }
}
