use std::io::Write;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use guided_harmony::conductor::Phase;
use guided_harmony::detector::{synth, KeypointFrame};
use guided_harmony::ensemble::{AgentConfig, EnsembleConfig};
use guided_harmony::score::{Pitch, Score};
use guided_harmony::session::serve::{serve, KeypointInput, ServeConfig, ServeHandle, ServerMessage};
use guided_harmony::session::{replay, LogHeader, SessionRecorder};
use tungstenite::{Message, WebSocket};

type Client = WebSocket<TcpStream>;

fn start(config: ServeConfig) -> (ServeHandle, SessionRecorder) {
    let score = Score::c_to_f_trio();
    let rec = SessionRecorder::in_memory(LogHeader::new(&score, serde_json::Value::Null));
    let config = ServeConfig { bind: "127.0.0.1:0".parse().unwrap(), speed: 20.0, ..config };
    (serve(score, config, rec.clone()).unwrap(), rec)
}

fn connect(handle: &ServeHandle) -> Client {
    let addr = handle.local_addr();
    let stream = TcpStream::connect(addr).unwrap();
    let (mut ws, _) = tungstenite::client::client(format!("ws://{addr}/"), stream).unwrap();
    ws.get_mut().set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    match next(&mut ws) {
        ServerMessage::Hello { parts, .. } => assert_eq!(parts.len(), 3),
        other => panic!("expected hello, got {other:?}"),
    }
    ws
}

fn send(ws: &mut Client, text: &str) {
    ws.send(Message::Text(text.into())).unwrap();
}

fn next(ws: &mut Client) -> ServerMessage {
    loop {
        match ws.read().expect("message before timeout") {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

fn until(ws: &mut Client, mut pred: impl FnMut(&ServerMessage) -> bool) -> Vec<ServerMessage> {
    let mut seen = Vec::new();
    loop {
        let m = next(ws);
        let stop = pred(&m);
        seen.push(m);
        if stop {
            return seen;
        }
    }
}

fn gesture_names(msgs: &[ServerMessage]) -> Vec<String> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Gesture { gesture, .. } => Some(gesture.kind.to_string()),
            _ => None,
        })
        .collect()
}

#[test]
fn raise_hand_drives_the_trio_to_its_end() {
    let (handle, rec) = start(ServeConfig::default());
    let mut a = connect(&handle);
    let mut b = connect(&handle);

    send(&mut a, r#"{"type":"start"}"#);
    let announce = until(&mut a, |m| matches!(m, ServerMessage::StateChanged { state: Phase::Sustain(0) }));
    let freqs: Vec<f64> = announce
        .iter()
        .filter_map(|m| match m {
            ServerMessage::PitchAnnounce { midi, freq_hz, .. } => {
                assert_eq!(*freq_hz, Pitch::new(*midi as i64).unwrap().frequency_hz());
                Some(*freq_hz)
            }
            _ => None,
        })
        .collect();
    assert_eq!(freqs.len(), 3);

    send(&mut a, r#"{"type":"raise_hand","part":"vla"}"#);
    let instruct = until(&mut a, |m| matches!(m, ServerMessage::StateChanged { state: Phase::Sustain(1) }));
    assert_eq!(
        gesture_names(&instruct),
        ["eye_contact(vln)", "eye_contact(vla)", "nod_up_half(vla)", "eye_contact(vc)", "nod_up_whole(vc)", "downbeat"]
    );
    let after = next(&mut a);
    match &after {
        ServerMessage::PitchState { pitches } => {
            assert_eq!(pitches.iter().map(|p| p.midi).collect::<Vec<_>>(), vec![60, 65, 57])
        }
        other => panic!("expected pitch_state, got {other:?}"),
    }

    send(&mut b, r#"{"type":"raise_hand","part":"vc"}"#);
    let end = until(&mut a, |m| matches!(m, ServerMessage::Gesture { .. }));
    assert!(end.contains(&ServerMessage::EndOfPiece));
    assert_eq!(gesture_names(&end), ["end_of_piece_signal"]);

    // the second client saw the same broadcasts in the same order
    let mut all_a = announce;
    all_a.extend(instruct);
    all_a.push(after);
    all_a.extend(end);
    let mut gestures = 0;
    let all_b = until(&mut b, |m| {
        gestures += matches!(m, ServerMessage::Gesture { .. }) as usize;
        gestures == 8
    });
    assert_eq!(all_a, all_b);

    // let the closing gesture finish, then the log replays cleanly
    let deadline = Instant::now() + Duration::from_secs(5);
    while rec.snapshot().unwrap().events.iter().filter(|e| e.payload_is_motion_done()).count() < 8 {
        assert!(Instant::now() < deadline, "closing gesture never completed");
        std::thread::sleep(Duration::from_millis(10));
    }
    drop(handle);
    let report = replay(&rec.snapshot().unwrap()).unwrap();
    assert_eq!(report.final_state, Phase::EndOfPiece);
}

trait IsMotionDone {
    fn payload_is_motion_done(&self) -> bool;
}

impl IsMotionDone for guided_harmony::session::SessionEvent {
    fn payload_is_motion_done(&self) -> bool {
        use guided_harmony::conductor::ConductorEvent;
        use guided_harmony::session::Payload;
        matches!(self.payload, Payload::Input(ConductorEvent::MotionDone { .. }))
    }
}

#[test]
fn bad_input_gets_an_error_and_changes_nothing() {
    let (handle, rec) = start(ServeConfig::default());
    let mut ws = connect(&handle);
    send(&mut ws, "{not json");
    assert!(matches!(next(&mut ws), ServerMessage::Error { .. }));
    send(&mut ws, r#"{"type":"start"}"#);
    until(&mut ws, |m| matches!(m, ServerMessage::PitchState { .. }));
    let before = rec.last_seq();
    send(&mut ws, r#"{"type":"raise_hand","part":"kazoo"}"#);
    match next(&mut ws) {
        ServerMessage::Error { reason } => assert!(reason.contains("kazoo"), "{reason}"),
        other => panic!("expected error, got {other:?}"),
    }
    assert_eq!(rec.last_seq(), before);
    // still connected and still in Sustain(0)
    send(&mut ws, r#"{"type":"raise_hand","part":"vla"}"#);
    assert!(matches!(next(&mut ws), ServerMessage::StateChanged { state: Phase::Instruct { measure: 0, step: 0 } }));
}

#[test]
fn abort_returns_to_idle() {
    let (handle, _) = start(ServeConfig::default());
    let mut ws = connect(&handle);
    send(&mut ws, r#"{"type":"start"}"#);
    send(&mut ws, r#"{"type":"abort"}"#);
    until(&mut ws, |m| matches!(m, ServerMessage::StateChanged { state: Phase::Idle }));
    // raising a hand while idle is refused
    send(&mut ws, r#"{"type":"raise_hand","part":"vla"}"#);
    assert!(matches!(next(&mut ws), ServerMessage::Error { .. }));
}

#[test]
fn simulated_agents_raise_hands_themselves() {
    let agent = |p: &str, seed| AgentConfig { part_id: p.into(), patience_ms: [100, 300], error_rate: 0.0, seed };
    let config = ServeConfig {
        agents: EnsembleConfig { agents: vec![agent("vln", 1), agent("vc", 2)] },
        ..Default::default()
    };
    let (handle, _) = start(config);
    let mut ws = connect(&handle);
    send(&mut ws, r#"{"type":"start"}"#);
    let all = until(&mut ws, |m| gesture_names(std::slice::from_ref(m)) == ["end_of_piece_signal"]);
    assert!(all.contains(&ServerMessage::EndOfPiece));
}

#[test]
fn keypoint_stream_raises_the_same_hand() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let config = ServeConfig { keypoints: Some(KeypointInput::Tcp(port)), ..Default::default() };
    let (handle, rec) = start(config);
    let mut ws = connect(&handle);
    send(&mut ws, r#"{"type":"start"}"#);
    until(&mut ws, |m| matches!(m, ServerMessage::StateChanged { state: Phase::Sustain(0) }));

    let deadline = Instant::now() + Duration::from_secs(5);
    let mut producer = loop {
        match TcpStream::connect(port) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => panic!("keypoint port: {e}"),
        }
    };
    // the viola, in the middle seat, holds a hand up for eight frames
    for i in 0..12u64 {
        let person = if i >= 2 { synth::raised(0.5) } else { synth::playing(0.5) };
        writeln!(producer, "{}", KeypointFrame { t_ms: i * 66, persons: vec![person] }.to_json()).unwrap();
    }
    producer.flush().unwrap();
    let seen = until(&mut ws, |m| matches!(m, ServerMessage::Gesture { .. }));
    assert_eq!(gesture_names(&seen), ["eye_contact(vln)"]);
    drop(producer);
    drop(handle);
    let log = rec.snapshot().unwrap();
    let detections: Vec<_> = log
        .events
        .iter()
        .filter_map(|e| match &e.payload {
            guided_harmony::session::Payload::Detection { part, .. } => Some(part.to_string()),
            _ => None,
        })
        .collect();
    assert_eq!(detections, ["vla"]);
}

#[test]
fn silent_client_does_not_stall_others() {
    let (handle, _) = start(ServeConfig::default());
    let mut fast = connect(&handle);
    // connect but never read
    let addr = handle.local_addr();
    let stream = TcpStream::connect(addr).unwrap();
    let (_slow, _) = tungstenite::client::client(format!("ws://{addr}/"), stream).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    send(&mut fast, r#"{"type":"start"}"#);
    until(&mut fast, |m| matches!(m, ServerMessage::PitchState { .. }));
    send(&mut fast, r#"{"type":"raise_hand","part":"vla"}"#);
    let seen = until(&mut fast, |m| matches!(m, ServerMessage::StateChanged { state: Phase::Sustain(1) }));
    assert!(gesture_names(&seen).len() >= 6);
}
