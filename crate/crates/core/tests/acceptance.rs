//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use guided_harmony::codebook::GestureKind;
use guided_harmony::conductor::{step, ConductorEvent, ConductorState, Emission, Phase};
use guided_harmony::ensemble::{Ensemble, EnsembleConfig};
use guided_harmony::planner::{update_preferences, ChordClass};
use guided_harmony::ptz::visca::{
    decode, encode, encode_absolute_position, encode_stop, DriveDirection, SpeedBytes, ViscaCommand,
};
use guided_harmony::score::Score;
use guided_harmony::session::{replay, Payload, ReplayError, SessionLog};
use guided_harmony::sweep::{self, Exec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn timed(limit: Option<Duration>, check: impl FnOnce() -> Verdict) -> Verdict {
    let started = Instant::now();
    let v = check();
    let took = started.elapsed();
    match limit {
        Some(limit) if took >= limit => {
            verdict(false, format!("{}; took {took:.2?}, limit {limit:?}", v.detail))
        }
        Some(limit) => verdict(v.pass, format!("{}; {took:.2?} < {limit:?}", v.detail)),
        None => v,
    }
}

/// Steps the conductor by hand with zero-error players who watch every
/// gesture as it finishes.
struct Rehearsal {
    score: Score,
    state: ConductorState,
    ensemble: Ensemble,
    in_flight: std::collections::VecDeque<guided_harmony::codebook::Gesture>,
    batches: Vec<Vec<String>>,
}

impl Rehearsal {
    fn new(score: Score) -> Self {
        let agents = EnsembleConfig::uniform(&score, [1000, 1000], 0.0, 0);
        let ensemble = Ensemble::new(&score, &agents, None).unwrap();
        Rehearsal { score, state: ConductorState::default(), ensemble, in_flight: Default::default(), batches: vec![] }
    }

    fn feed(&mut self, event: ConductorEvent) {
        let (next, out) = step(&self.state, &event, &self.score).expect("legal event");
        self.state = next;
        let mut batch = Vec::new();
        for e in out {
            match e {
                Emission::PitchAnnounce { part, pitch } => self.ensemble.announce(&part, pitch),
                Emission::GestureRequest { gesture } => {
                    batch.push(gesture.kind.to_string());
                    self.in_flight.push_back(gesture);
                }
                Emission::StateChanged { .. } => {}
            }
        }
        if !batch.is_empty() {
            self.batches.push(batch);
        }
    }

    fn settle(&mut self) {
        while let Some(g) = self.in_flight.pop_front() {
            self.ensemble.observe_gesture(&g);
            self.feed(ConductorEvent::MotionDone { gesture: g.id });
        }
    }
}

fn worked_example() -> Verdict {
    let mut r = Rehearsal::new(Score::c_to_f_trio());
    r.feed(ConductorEvent::Start);
    r.settle();
    if r.state.phase != Phase::Sustain(0) {
        return verdict(false, format!("after start: {}", r.state.phase));
    }
    r.batches.clear();
    r.feed(ConductorEvent::RequestSignal { part: "vla".into(), t_ms: 0 });
    r.settle();
    let expected = vec![
        vec!["eye_contact(vln)"],
        vec!["eye_contact(vla)", "nod_up_half(vla)"],
        vec!["eye_contact(vc)", "nod_up_whole(vc)"],
        vec!["downbeat"],
    ];
    if r.batches != expected {
        return verdict(false, format!("gesture batches {:?}", r.batches));
    }
    let pitches: Vec<u8> = r.ensemble.state().pitches().iter().map(|p| p.map_or(0, |p| p.midi())).collect();
    if pitches != [60, 65, 57] || r.state.phase != Phase::Sustain(1) {
        return verdict(false, format!("pitches {pitches:?} in {}", r.state.phase));
    }
    r.batches.clear();
    r.feed(ConductorEvent::RequestSignal { part: "vc".into(), t_ms: 0 });
    let end = r.batches == [vec![GestureKind::EndOfPieceSignal.to_string()]] && r.state.phase == Phase::EndOfPiece;
    verdict(end, format!("4 instruction batches, pitches {pitches:?}, final batch {:?}", r.batches))
}

fn closed_loop() -> Verdict {
    let seeds: Vec<u64> = (0..100).collect();
    let outcomes = sweep::closed_loop(Exec::Parallel, &seeds);
    let failed: Vec<u64> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.seed).collect();
    let sustains: usize = outcomes.iter().map(|o| o.sustains_checked).sum();
    verdict(failed.is_empty(), format!("{}/100 runs ended in tune, {sustains} sustains checked; failed seeds {failed:?}", 100 - failed.len()))
}

fn validator() -> Verdict {
    let seeds: Vec<u64> = (0..1000).collect();
    let outcomes = sweep::validator(Exec::Parallel, &seeds);
    let corrupted = outcomes.iter().filter(|o| o.injected.is_some()).count();
    let failed: Vec<u64> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.seed).collect();
    verdict(
        failed.is_empty() && corrupted == 500,
        format!("{}/1000 correct ({corrupted} corrupted); failed seeds {failed:?}", 1000 - failed.len()),
    )
}

fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace().map(|b| u8::from_str_radix(b, 16).unwrap()).collect()
}

fn random_command(rng: &mut impl Rng) -> ViscaCommand {
    let speed = SpeedBytes { pan: rng.random_range(1..=0x18), tilt: rng.random_range(1..=0x14) };
    match rng.random_range(0..5) {
        0 => ViscaCommand::AbsolutePosition { speed, pan: rng.random(), tilt: rng.random() },
        1 => ViscaCommand::Drive { speed, direction: DriveDirection::ALL[rng.random_range(0..8)] },
        2 => ViscaCommand::Stop { speed },
        3 => ViscaCommand::Home,
        _ => ViscaCommand::PositionInquiry,
    }
}

fn visca() -> Verdict {
    // hand-derived from the command table: 14.4 units per degree, each
    // 16-bit word spread over four low nibbles
    let table = [
        ((0.0, 0.0, 1.0), "81 01 06 02 18 14 00 00 00 00 00 00 00 00 FF"),
        ((-30.0, 0.0, 1.0), "81 01 06 02 18 14 0F 0E 05 00 00 00 00 00 FF"),
        ((170.0, 15.0, 0.5), "81 01 06 02 0C 0A 00 09 09 00 00 00 0D 08 FF"),
        ((0.0, -30.0, 1.0), "81 01 06 02 18 14 00 00 00 00 0F 0E 05 00 FF"),
    ];
    let mut diffs = 0;
    for ((pan, tilt, speed), want) in table {
        let got = encode_absolute_position(pan, tilt, speed).expect("encodes");
        diffs += got.as_bytes().iter().zip(hex(want)).filter(|(a, b)| **a != *b).count();
        diffs += got.as_bytes().len().abs_diff(hex(want).len());
    }
    diffs += encode_stop().as_bytes().iter().zip(hex("81 01 06 01 18 14 03 03 FF")).filter(|(a, b)| **a != *b).count();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5153);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let cmd = random_command(&mut rng);
        if decode(&encode(&cmd).expect("encodes")) != Ok(cmd) {
            mismatches += 1;
        }
    }
    verdict(diffs == 0 && mismatches == 0, format!("{diffs} byte diffs over 5 fixtures; {mismatches}/1000 fuzzed round-trip failures"))
}

fn detector() -> Verdict {
    let settings = [(3, 5), (5, 10), (8, 15)];
    let seeds: Vec<u64> = (0..10).collect();
    let outcomes = sweep::detector(Exec::Parallel, &seeds, &settings, 10_000);
    let wrong: Vec<_> = outcomes.iter().filter(|o| o.emitted != o.expected).collect();
    let total: usize = outcomes.iter().map(|o| o.expected).sum();
    verdict(
        wrong.is_empty(),
        format!("{} sequences of 10000 frames over {settings:?}, {total} signals; {} mismatched", outcomes.len(), wrong.len()),
    )
}

fn replay_determinism() -> Verdict {
    let log = match SessionLog::load(fixture("golden_trio.jsonl")) {
        Ok(l) => l,
        Err(e) => return verdict(false, format!("golden log: {e}")),
    };
    let clean = match replay(&log) {
        Ok(r) if r.final_state == Phase::EndOfPiece && !r.truncated => r,
        other => return verdict(false, format!("golden log replay: {other:?}")),
    };
    let mut late = Vec::new();
    let mut trailing = 0;
    for i in 0..log.events.len() {
        let mut cut = log.clone();
        let removed = cut.events.remove(i);
        let next_transition = log.events[i + 1..]
            .iter()
            .find(|e| matches!(e.payload, Payload::Emission(Emission::StateChanged { .. })))
            .map(|e| e.seq);
        match (replay(&cut), next_transition) {
            (Err(ReplayError::DivergenceDetected { seq, .. }), Some(t)) if seq <= t => {}
            (Err(ReplayError::DivergenceDetected { .. }), None) => {}
            // no transition left to detect it by
            (Ok(_), None) => trailing += 1,
            (other, _) => late.push((removed.seq, format!("{other:?}"))),
        }
    }
    verdict(
        late.is_empty(),
        format!(
            "{} transitions replayed; {} deletions caught in time, {trailing} after the last transition undetectable; late {late:?}",
            clean.trajectory.len(),
            log.events.len() - late.len() - trailing
        ),
    )
}

fn preferences() -> Verdict {
    let log = match SessionLog::load(fixture("preferences.jsonl")) {
        Ok(l) => l,
        Err(e) => return verdict(false, format!("fixture: {e}")),
    };
    let report = match update_preferences(log.score(), &log.events) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("{e}")),
    };
    // hand computation: C major sustains lasted 4000 and 8000 ms, F major 5000
    let hand = [(ChordClass(vec![0, 4, 7]), 6000.0), (ChordClass(vec![0, 5, 9]), 5000.0)];
    let mut ok = report.len() == hand.len();
    let mut parts = Vec::new();
    for (class, want) in &hand {
        let got = report.get(class).and_then(|r| r.mean_ms);
        ok &= got.is_some_and(|g| (g - want).abs() <= 1.0);
        parts.push(format!("{class:?} mean {got:?} vs {want}"));
    }
    verdict(ok, parts.join(", "))
}

fn main() {
    type Criterion = (&'static str, Option<Duration>, fn() -> Verdict);
    let criteria: [Criterion; 7] = [
        ("worked example: C to F trio, viola asks", Some(Duration::from_secs(1)), worked_example),
        ("closed loop: 100 random scores reach the end in tune", Some(Duration::from_secs(10)), closed_loop),
        ("validator: 1000 scores, injected leaps named exactly", Some(Duration::from_secs(5)), validator),
        ("visca codec: table fixtures and 1000 fuzzed round trips", None, visca),
        ("detector: exactly one signal per qualifying raise", None, detector),
        ("replay: golden log clean, deletions caught by next transition", None, replay_determinism),
        ("preferences: fixture means within 1 ms of hand computation", None, preferences),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let v = timed(limit, check);
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
