//! Batch workloads: many closed-loop runs, validator checks over random
//! scores, and detector runs over random raise sequences. Each batch is a
//! pure map over independent seeded items, run on the rayon pool when the
//! `parallel` feature is on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{synth, CueDetector, DetectorConfig, KeypointFrame, SeatMap};
use crate::ensemble::EnsembleConfig;
use crate::score::{validate_score, Bearing, Measure, Part, PartId, Pitch, Score, Violation};
use crate::sim::{simulate, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreShape {
    pub parts: (usize, usize),
    pub measures: (usize, usize),
}

impl Default for ScoreShape {
    fn default() -> Self {
        ScoreShape { parts: (3, 5), measures: (2, 16) }
    }
}

/// A valid score: every part moves by at most a whole step per measure.
pub fn random_score(rng: &mut impl Rng, shape: ScoreShape) -> Score {
    let n_parts = rng.random_range(shape.parts.0..=shape.parts.1);
    let n_measures = rng.random_range(shape.measures.0..=shape.measures.1);
    let parts = (0..n_parts)
        .map(|i| {
            let spread = 120.0 / n_parts as f64;
            let pan = -60.0 + spread * (i as f64 + 0.5) + rng.random_range(-5.0..5.0);
            Part {
                part_id: PartId::new(format!("p{i}")),
                display_name: format!("Part {}", i + 1),
                seat_bearing: Bearing::new(pan, rng.random_range(-5.0..30.0)),
            }
        })
        .collect();
    let mut current: Vec<i64> = (0..n_parts).map(|_| rng.random_range(48..=72)).collect();
    let mut measures = Vec::with_capacity(n_measures);
    for m in 0..n_measures {
        if m > 0 {
            for p in current.iter_mut() {
                *p += rng.random_range(-2..=2);
            }
        }
        measures.push(Measure(current.iter().map(|&p| Pitch::new(p).expect("in range")).collect()));
    }
    Score { parts, measures }
}

/// Replace one transition with a leap of 3 to 12 semitones. Later measures
/// of that part move with it, so exactly one transition becomes illegal.
pub fn inject_leap(score: &mut Score, rng: &mut impl Rng) -> Violation {
    let measure = rng.random_range(0..score.measures.len() - 1);
    let part = rng.random_range(0..score.parts.len());
    let old = score.measures[measure + 1].0[part].midi() as i32 - score.measures[measure].0[part].midi() as i32;
    let leap = rng.random_range(3..=12) * if rng.random_bool(0.5) { 1 } else { -1 };
    for later in &mut score.measures[measure + 1..] {
        let p = &mut later.0[part];
        *p = Pitch::new(p.midi() as i64 + (leap - old) as i64).expect("in range");
    }
    Violation { measure, part, part_id: score.parts[part].part_id.clone(), delta: leap }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopOutcome {
    pub seed: u64,
    pub parts: usize,
    pub measures: usize,
    pub reached_end: bool,
    pub sustains_checked: usize,
    pub sustains_matched: bool,
    pub error: Option<String>,
}

impl ClosedLoopOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.reached_end && self.sustains_matched && self.sustains_checked == self.measures
    }
}

/// One zero-error closed-loop run per seed on a random score.
pub fn closed_loop(exec: Exec, seeds: &[u64]) -> Vec<ClosedLoopOutcome> {
    map(exec, seeds, |&seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let score = random_score(&mut rng, ScoreShape::default());
        let agents = EnsembleConfig::uniform(&score, [500, 4000], 0.0, seed);
        let base = ClosedLoopOutcome {
            seed,
            parts: score.parts.len(),
            measures: score.measures.len(),
            reached_end: false,
            sustains_checked: 0,
            sustains_matched: false,
            error: None,
        };
        match simulate(&score, &agents, SimOptions { master_seed: Some(seed), ..Default::default() }) {
            Ok(r) => ClosedLoopOutcome {
                reached_end: r.reached_end(),
                sustains_checked: r.sustains.len(),
                sustains_matched: r.all_sustains_match(),
                ..base
            },
            Err(e) => ClosedLoopOutcome { error: Some(e.to_string()), ..base },
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorOutcome {
    pub seed: u64,
    pub injected: Option<Violation>,
    pub reported: Vec<Violation>,
}

impl ValidatorOutcome {
    pub fn passed(&self) -> bool {
        match &self.injected {
            None => self.reported.is_empty(),
            Some(v) => self.reported.len() == 1 && &self.reported[0] == v,
        }
    }
}

/// Odd seeds get one injected leap, even seeds stay clean.
pub fn validator(exec: Exec, seeds: &[u64]) -> Vec<ValidatorOutcome> {
    map(exec, seeds, |&seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut score = random_score(&mut rng, ScoreShape::default());
        let injected = (seed % 2 == 1).then(|| inject_leap(&mut score, &mut rng));
        ValidatorOutcome { seed, injected, reported: validate_score(&score).violations }
    })
}

/// Independent count of signals: split the sequence into runs; a raised run
/// of at least `debounce` fires if armed and disarms; a lowered run of at
/// least `release` re-arms.
pub fn run_length_signals(raised: &[bool], debounce: u32, release: u32) -> usize {
    let mut count = 0;
    let mut armed = true;
    for run in raised.chunk_by(|a, b| a == b) {
        let len = run.len() as u32;
        if run[0] {
            if armed && len >= debounce {
                count += 1;
                armed = false;
            }
        } else if len >= release {
            armed = true;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutcome {
    pub seed: u64,
    pub debounce: u32,
    pub release: u32,
    pub emitted: usize,
    pub expected: usize,
}

/// Sticky random raise sequence: each frame keeps the previous value with
/// probability `stickiness`.
pub fn random_raises(rng: &mut impl Rng, frames: usize, stickiness: f64) -> Vec<bool> {
    let mut v = Vec::with_capacity(frames);
    let mut cur = false;
    for _ in 0..frames {
        if !rng.random_bool(stickiness) {
            cur = !cur;
        }
        v.push(cur);
    }
    v
}

/// Feed each raise sequence as rendered keypoint frames for the middle seat
/// of a three-seat map and compare with [`run_length_signals`].
pub fn detector(exec: Exec, seeds: &[u64], settings: &[(u32, u32)], frames: usize) -> Vec<DetectorOutcome> {
    let jobs: Vec<(u64, u32, u32)> =
        seeds.iter().flat_map(|&s| settings.iter().map(move |&(d, r)| (s, d, r))).collect();
    let seats = SeatMap::even_from_score(&Score::c_to_f_trio());
    map(exec, &jobs, |&(seed, debounce, release)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raises = random_raises(&mut rng, frames, 0.85);
        let config = DetectorConfig { debounce_frames: debounce, release_frames: release, ..Default::default() };
        let mut det = CueDetector::new(seats.clone(), config);
        let mut emitted = 0;
        for (i, &up) in raises.iter().enumerate() {
            let person = if up { synth::raised(0.5) } else { synth::playing(0.5) };
            let frame = KeypointFrame { t_ms: i as u64 * 66, persons: vec![person] };
            emitted += det.push(&frame).expect("ordered frames").len();
        }
        DetectorOutcome { seed, debounce, release, emitted, expected: run_length_signals(&raises, debounce, release) }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_scores_are_valid_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = random_score(&mut rng, ScoreShape::default());
            assert!((3..=5).contains(&s.parts.len()));
            assert!((2..=16).contains(&s.measures.len()));
            assert!(validate_score(&s).is_valid());
        }
    }

    #[test]
    fn injected_leap_is_the_only_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut s = random_score(&mut rng, ScoreShape::default());
            let v = inject_leap(&mut s, &mut rng);
            assert_eq!(validate_score(&s).violations, vec![v]);
        }
    }

    #[test]
    fn run_length_oracle_by_hand() {
        let seq = |s: &str| s.chars().map(|c| c == '1').collect::<Vec<_>>();
        assert_eq!(run_length_signals(&seq("11111"), 5, 10), 1);
        assert_eq!(run_length_signals(&seq("1111"), 5, 10), 0);
        // a short dip does not re-arm
        assert_eq!(run_length_signals(&seq("11111000111111"), 5, 10), 1);
        assert_eq!(run_length_signals(&seq("111110000000000111111"), 5, 10), 2);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let seeds: Vec<u64> = (0..8).collect();
        assert_eq!(closed_loop(Exec::Sequential, &seeds), closed_loop(Exec::Parallel, &seeds));
        assert_eq!(validator(Exec::Sequential, &seeds), validator(Exec::Parallel, &seeds));
    }

    #[test]
    fn small_detector_sweep_matches_oracle() {
        for o in detector(Exec::Parallel, &[1, 2], &[(3, 5), (5, 10)], 2000) {
            assert_eq!(o.emitted, o.expected, "{o:?}");
        }
    }
}
