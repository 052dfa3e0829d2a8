//! Simulated musicians. Each agent holds a pitch, decodes the conductor's
//! gestures symbolically (with an optional misreading rate), applies its
//! pending change on the downbeat, and eventually raises a hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Gesture, GestureKind};
use crate::detector::RequestSignal;
use crate::planner::{apply_instruction, Adjustment};
use crate::score::{PartId, Pitch, Score};
use crate::session::PartPitch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub part_id: PartId,
    /// Inclusive uniform range for time until the hand goes up.
    pub patience_ms: [u64; 2],
    #[serde(default)]
    pub error_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub agents: Vec<AgentConfig>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("agent {0}: error_rate must lie in [0, 1]")]
    ErrorRate(PartId),
    #[error("agent {0}: patience range is inverted")]
    Patience(PartId),
    #[error("agent {0} is not a part of the score")]
    UnknownPart(PartId),
    #[error("more than one agent for part {0}")]
    Duplicate(PartId),
    #[error("ensemble config: {0}")]
    Parse(String),
}

impl EnsembleConfig {
    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        serde_json::from_str(text).map_err(|e| EnsembleError::Parse(e.to_string()))
    }

    /// One agent per part, sharing a patience range and error rate; seeds
    /// are `seed, seed + 1, ...` in part order.
    pub fn uniform(score: &Score, patience_ms: [u64; 2], error_rate: f64, seed: u64) -> Self {
        EnsembleConfig {
            agents: score
                .parts
                .iter()
                .enumerate()
                .map(|(i, p)| AgentConfig {
                    part_id: p.part_id.clone(),
                    patience_ms,
                    error_rate,
                    seed: seed.wrapping_add(i as u64),
                })
                .collect(),
        }
    }

    pub fn validate(&self, score: &Score) -> Result<(), EnsembleError> {
        let mut seen = std::collections::HashSet::new();
        for a in &self.agents {
            if !(0.0..=1.0).contains(&a.error_rate) {
                return Err(EnsembleError::ErrorRate(a.part_id.clone()));
            }
            if a.patience_ms[0] > a.patience_ms[1] {
                return Err(EnsembleError::Patience(a.part_id.clone()));
            }
            if score.part_index(&a.part_id).is_none() {
                return Err(EnsembleError::UnknownPart(a.part_id.clone()));
            }
            if !seen.insert(&a.part_id) {
                return Err(EnsembleError::Duplicate(a.part_id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub part: PartId,
    pub pitch: Option<Pitch>,
    /// Decoded but not yet played.
    pub pending: Option<Adjustment>,
    pub sounding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub agents: Vec<AgentState>,
}

impl EnsembleState {
    pub fn pitches(&self) -> Vec<Option<Pitch>> {
        self.agents.iter().map(|a| a.pitch).collect()
    }

    pub fn snapshot(&self) -> Vec<PartPitch> {
        self.agents
            .iter()
            .filter_map(|a| a.pitch.map(|midi| PartPitch { part: a.part.clone(), midi }))
            .collect()
    }
}

/// splitmix64, for deriving per-agent seeds from one master seed.
fn mix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Ensemble {
    configs: Vec<AgentConfig>,
    state: EnsembleState,
    rngs: Vec<ChaCha8Rng>,
}

impl Ensemble {
    /// With `master_seed`, agent seeds are derived from it and the per-agent
    /// `seed` fields are ignored.
    pub fn new(score: &Score, config: &EnsembleConfig, master_seed: Option<u64>) -> Result<Self, EnsembleError> {
        config.validate(score)?;
        let mut configs = config.agents.clone();
        configs.sort_by_key(|a| score.part_index(&a.part_id));
        let rngs = configs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let seed = match master_seed {
                    Some(m) => mix(m ^ mix(i as u64)),
                    None => a.seed,
                };
                ChaCha8Rng::seed_from_u64(seed)
            })
            .collect();
        let agents = configs
            .iter()
            .map(|a| AgentState { part: a.part_id.clone(), pitch: None, pending: None, sounding: false })
            .collect();
        Ok(Ensemble { configs, state: EnsembleState { agents }, rngs })
    }

    pub fn state(&self) -> &EnsembleState {
        &self.state
    }

    fn index(&self, part: &PartId) -> Option<usize> {
        self.configs.iter().position(|a| &a.part_id == part)
    }

    pub fn announce(&mut self, part: &PartId, pitch: Pitch) {
        if let Some(i) = self.index(part) {
            let a = &mut self.state.agents[i];
            a.pitch = Some(pitch);
            a.pending = None;
            a.sounding = true;
        }
    }

    /// Update the ensemble after watching one gesture.
    pub fn observe_gesture(&mut self, gesture: &Gesture) {
        match &gesture.kind {
            GestureKind::EyeContact(part) => {
                if let Some(i) = self.index(part) {
                    self.state.agents[i].pending = Some(Adjustment::NoChange);
                }
            }
            GestureKind::Downbeat => {
                for a in &mut self.state.agents {
                    if let (Some(pitch), Some(adj)) = (a.pitch, a.pending.take()) {
                        match apply_instruction(pitch, adj) {
                            Ok(p) => a.pitch = Some(p),
                            Err(e) => log::debug!("{}: {e}", a.part),
                        }
                    }
                }
            }
            GestureKind::EndOfPieceSignal => {
                for a in &mut self.state.agents {
                    a.sounding = false;
                    a.pending = None;
                }
            }
            nod => {
                let (Some(part), Some(meant)) = (nod.part(), nod.adjustment()) else { return };
                let Some(i) = self.index(part) else { return };
                let rng = &mut self.rngs[i];
                let misread = rng.random::<f64>() < self.configs[i].error_rate;
                let decoded = if misread {
                    let others: Vec<Adjustment> = Adjustment::ALL.into_iter().filter(|a| *a != meant).collect();
                    others[rng.random_range(0..others.len())]
                } else {
                    meant
                };
                self.state.agents[i].pending = Some(decoded);
            }
        }
    }

    /// Every agent draws its patience; the most impatient raises a hand at
    /// `now_ms` plus its draw. Ties go to the earlier part.
    pub fn schedule_request(&mut self, now_ms: u64) -> Option<RequestSignal> {
        let mut best: Option<(u64, usize)> = None;
        for (i, (cfg, rng)) in self.configs.iter().zip(&mut self.rngs).enumerate() {
            let [lo, hi] = cfg.patience_ms;
            let wait = rng.random_range(lo..=hi);
            if best.is_none_or(|(w, _)| wait < w) {
                best = Some((wait, i));
            }
        }
        best.map(|(wait, i)| RequestSignal { part: self.configs[i].part_id.clone(), t_ms: now_ms + wait })
    }
}
