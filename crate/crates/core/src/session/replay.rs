use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::conductor::{step, ConductorState, Emission, Phase};
use crate::score::validate_score;

use super::{Payload, SessionLog};

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("replay diverges from the log at seq {seq}: {reason}")]
    DivergenceDetected { seq: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    /// Every state the replayed conductor entered, with the seq of the
    /// matching logged `state_changed` line.
    pub trajectory: Vec<(u64, Phase)>,
    pub final_state: Phase,
    pub inputs: usize,
    /// The log stops before all emissions of its last input were written.
    pub truncated: bool,
}

/// Re-run every logged input through the conductor and check that the
/// logged emissions are exactly what it produces, in order. Sequence numbers
/// must be contiguous, so a deleted line of any kind is caught at the line
/// after the hole.
pub fn replay(log: &SessionLog) -> Result<ReplayReport, ReplayError> {
    let score = log.score();
    if !validate_score(score).is_valid() {
        return Err(ReplayError::CorruptLog("embedded score fails validation".into()));
    }

    let mut state = ConductorState::default();
    let mut pending: VecDeque<Emission> = VecDeque::new();
    let mut report = ReplayReport {
        trajectory: Vec::new(),
        final_state: Phase::Idle,
        inputs: 0,
        truncated: false,
    };
    let mut expected_seq = log.events.first().map(|e| e.seq).unwrap_or(1);
    if expected_seq != 1 {
        return Err(ReplayError::DivergenceDetected {
            seq: expected_seq,
            reason: "log does not start at seq 1".into(),
        });
    }

    for ev in &log.events {
        let diverge = |reason: String| ReplayError::DivergenceDetected { seq: ev.seq, reason };
        if ev.seq != expected_seq {
            return Err(diverge(format!("seq {} missing", expected_seq)));
        }
        expected_seq += 1;

        match &ev.payload {
            Payload::Input(event) => {
                if let Some(missing) = pending.front() {
                    return Err(diverge(format!("expected {missing:?} before next input")));
                }
                let (next, out) =
                    step(&state, event, score).map_err(|e| diverge(format!("conductor rejects input: {e}")))?;
                state = next;
                pending.extend(out);
                report.inputs += 1;
            }
            Payload::Emission(logged) => {
                let replayed = pending
                    .pop_front()
                    .ok_or_else(|| diverge(format!("unexpected emission {logged:?}")))?;
                if &replayed != logged {
                    return Err(diverge(format!("logged {logged:?}, replay produced {replayed:?}")));
                }
                if let Some(phase) = replayed.state() {
                    report.trajectory.push((ev.seq, phase));
                }
            }
            Payload::CameraPose(_) | Payload::Detection { .. } | Payload::PitchState { .. } => {}
        }
    }

    report.truncated = !pending.is_empty();
    report.final_state = state.phase;
    Ok(report)
}
