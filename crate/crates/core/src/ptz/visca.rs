//! The VISCA command subset used by the driver: absolute position, drive,
//! stop, home and position inquiry, plus their replies.
//!
//! Positions are signed 16-bit words at 14.4 units per degree, sent as four
//! low nibbles (`0p 0p 0p 0p`). Speed bytes run 0x01..=0x18 for pan and
//! 0x01..=0x14 for tilt.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{PAN_LIMIT_DEG, TILT_MAX_DEG, TILT_MIN_DEG};

pub const UNITS_PER_DEGREE: f64 = 14.4;
pub const PAN_SPEED_MAX: u8 = 0x18;
pub const TILT_SPEED_MAX: u8 = 0x14;
pub const MAX_FRAME_LEN: usize = 16;

const ADDRESS: u8 = 0x81;
const REPLY_ADDRESS: u8 = 0x90;
const TERMINATOR: u8 = 0xFF;

/// A validated command frame for camera 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ViscaFrame(Vec<u8>);

impl ViscaFrame {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, DecodeError> {
        if bytes.len() < 3 || bytes.len() > MAX_FRAME_LEN {
            return Err(DecodeError::Length(bytes.len()));
        }
        if bytes[0] != ADDRESS {
            return Err(DecodeError::Address(bytes[0]));
        }
        if bytes[bytes.len() - 1] != TERMINATOR || bytes[..bytes.len() - 1].contains(&TERMINATOR) {
            return Err(DecodeError::Terminator);
        }
        Ok(ViscaFrame(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn is_inquiry(&self) -> bool {
        self.0.get(1) == Some(&0x09)
    }
}

impl fmt::Debug for ViscaFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ViscaFrame({self})")
    }
}

impl fmt::Display for ViscaFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: Vec<String> = self.0.iter().map(|b| format!("{b:02X}")).collect();
        f.write_str(&hex.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriveDirection {
    Up,
    Down,
    Left,
    Right,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
}

impl DriveDirection {
    pub const ALL: [DriveDirection; 8] = [
        DriveDirection::Up,
        DriveDirection::Down,
        DriveDirection::Left,
        DriveDirection::Right,
        DriveDirection::UpLeft,
        DriveDirection::UpRight,
        DriveDirection::DownLeft,
        DriveDirection::DownRight,
    ];

    fn nibbles(self) -> (u8, u8) {
        match self {
            DriveDirection::Up => (0x03, 0x01),
            DriveDirection::Down => (0x03, 0x02),
            DriveDirection::Left => (0x01, 0x03),
            DriveDirection::Right => (0x02, 0x03),
            DriveDirection::UpLeft => (0x01, 0x01),
            DriveDirection::UpRight => (0x02, 0x01),
            DriveDirection::DownLeft => (0x01, 0x02),
            DriveDirection::DownRight => (0x02, 0x02),
        }
    }

    fn from_nibbles(pan: u8, tilt: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.nibbles() == (pan, tilt))
    }
}

/// Pan and tilt speed bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpeedBytes {
    pub pan: u8,
    pub tilt: u8,
}

impl SpeedBytes {
    pub const MAX: SpeedBytes = SpeedBytes { pan: PAN_SPEED_MAX, tilt: TILT_SPEED_MAX };

    /// Scale a normalized speed in (0, 1] onto the byte ranges, never below 1.
    pub fn from_fraction(speed: f64) -> Result<Self, EncodeError> {
        if !(speed > 0.0 && speed <= 1.0) {
            return Err(EncodeError::Speed(speed));
        }
        let scale = |max: u8| ((speed * max as f64).round() as u8).clamp(1, max);
        Ok(SpeedBytes { pan: scale(PAN_SPEED_MAX), tilt: scale(TILT_SPEED_MAX) })
    }

    fn valid(self) -> bool {
        (1..=PAN_SPEED_MAX).contains(&self.pan) && (1..=TILT_SPEED_MAX).contains(&self.tilt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViscaCommand {
    /// Positions in raw units (14.4 per degree).
    AbsolutePosition { speed: SpeedBytes, pan: i16, tilt: i16 },
    Drive { speed: SpeedBytes, direction: DriveDirection },
    Stop { speed: SpeedBytes },
    Home,
    PositionInquiry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViscaReply {
    Ack { socket: u8 },
    Completion { socket: u8 },
    Error { socket: u8, code: u8 },
    Position { pan: i16, tilt: i16 },
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("speed {0} outside (0, 1]")]
    Speed(f64),
    #[error("position ({pan}, {tilt}) degrees outside camera limits")]
    Position { pan: f64, tilt: f64 },
    #[error("speed bytes {0:?} out of range")]
    SpeedBytes(SpeedBytes),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame length {0} outside 3..=16")]
    Length(usize),
    #[error("unexpected address byte {0:#04x}")]
    Address(u8),
    #[error("frame is not terminated by a single trailing 0xFF")]
    Terminator,
    #[error("unsupported or malformed command")]
    Unsupported,
}

pub fn degrees_to_units(deg: f64) -> i16 {
    (deg * UNITS_PER_DEGREE).round() as i16
}

pub fn units_to_degrees(units: i16) -> f64 {
    units as f64 / UNITS_PER_DEGREE
}

fn push_word(out: &mut Vec<u8>, word: i16) {
    let w = word as u16;
    out.extend([(w >> 12) as u8 & 0x0F, (w >> 8) as u8 & 0x0F, (w >> 4) as u8 & 0x0F, w as u8 & 0x0F]);
}

fn read_word(nibbles: &[u8]) -> Option<i16> {
    if nibbles.len() != 4 || nibbles.iter().any(|&n| n > 0x0F) {
        return None;
    }
    Some(nibbles.iter().fold(0u16, |acc, &n| (acc << 4) | n as u16) as i16)
}

/// Absolute pan/tilt move, angles in degrees, speed normalized to (0, 1].
pub fn encode_absolute_position(pan: f64, tilt: f64, speed: f64) -> Result<ViscaFrame, EncodeError> {
    let in_limits = pan.is_finite()
        && tilt.is_finite()
        && pan.abs() <= PAN_LIMIT_DEG
        && (TILT_MIN_DEG..=TILT_MAX_DEG).contains(&tilt);
    if !in_limits {
        return Err(EncodeError::Position { pan, tilt });
    }
    let speed = SpeedBytes::from_fraction(speed)?;
    encode(&ViscaCommand::AbsolutePosition {
        speed,
        pan: degrees_to_units(pan),
        tilt: degrees_to_units(tilt),
    })
}

/// Pan-tilt drive stop at full speed bytes.
pub fn encode_stop() -> ViscaFrame {
    encode_stop_with(SpeedBytes::MAX)
}

pub fn encode_stop_with(speed: SpeedBytes) -> ViscaFrame {
    encode(&ViscaCommand::Stop { speed }).expect("stop frame")
}

pub fn encode(cmd: &ViscaCommand) -> Result<ViscaFrame, EncodeError> {
    let mut out = vec![ADDRESS];
    match *cmd {
        ViscaCommand::AbsolutePosition { speed, pan, tilt } => {
            if !speed.valid() {
                return Err(EncodeError::SpeedBytes(speed));
            }
            out.extend([0x01, 0x06, 0x02, speed.pan, speed.tilt]);
            push_word(&mut out, pan);
            push_word(&mut out, tilt);
        }
        ViscaCommand::Drive { speed, direction } => {
            if !speed.valid() {
                return Err(EncodeError::SpeedBytes(speed));
            }
            let (p, t) = direction.nibbles();
            out.extend([0x01, 0x06, 0x01, speed.pan, speed.tilt, p, t]);
        }
        ViscaCommand::Stop { speed } => {
            if !speed.valid() {
                return Err(EncodeError::SpeedBytes(speed));
            }
            out.extend([0x01, 0x06, 0x01, speed.pan, speed.tilt, 0x03, 0x03]);
        }
        ViscaCommand::Home => out.extend([0x01, 0x06, 0x04]),
        ViscaCommand::PositionInquiry => out.extend([0x09, 0x06, 0x12]),
    }
    out.push(TERMINATOR);
    Ok(ViscaFrame(out))
}

pub fn decode(frame: &ViscaFrame) -> Result<ViscaCommand, DecodeError> {
    let b = frame.as_bytes();
    let body = &b[1..b.len() - 1];
    let speed = |pan: u8, tilt: u8| {
        let s = SpeedBytes { pan, tilt };
        s.valid().then_some(s).ok_or(DecodeError::Unsupported)
    };
    match body {
        [0x01, 0x06, 0x02, vv, ww, rest @ ..] if rest.len() == 8 => Ok(ViscaCommand::AbsolutePosition {
            speed: speed(*vv, *ww)?,
            pan: read_word(&rest[..4]).ok_or(DecodeError::Unsupported)?,
            tilt: read_word(&rest[4..]).ok_or(DecodeError::Unsupported)?,
        }),
        [0x01, 0x06, 0x01, vv, ww, 0x03, 0x03] => Ok(ViscaCommand::Stop { speed: speed(*vv, *ww)? }),
        [0x01, 0x06, 0x01, vv, ww, p, t] => Ok(ViscaCommand::Drive {
            speed: speed(*vv, *ww)?,
            direction: DriveDirection::from_nibbles(*p, *t).ok_or(DecodeError::Unsupported)?,
        }),
        [0x01, 0x06, 0x04] => Ok(ViscaCommand::Home),
        [0x09, 0x06, 0x12] => Ok(ViscaCommand::PositionInquiry),
        _ => Err(DecodeError::Unsupported),
    }
}

pub fn encode_reply(reply: &ViscaReply) -> Vec<u8> {
    let mut out = vec![REPLY_ADDRESS];
    match *reply {
        ViscaReply::Ack { socket } => out.push(0x40 | (socket & 0x0F)),
        ViscaReply::Completion { socket } => out.push(0x50 | (socket & 0x0F)),
        ViscaReply::Error { socket, code } => out.extend([0x60 | (socket & 0x0F), code]),
        ViscaReply::Position { pan, tilt } => {
            out.push(0x50);
            push_word(&mut out, pan);
            push_word(&mut out, tilt);
        }
    }
    out.push(TERMINATOR);
    out
}

/// Decode one reply packet (`90 .. FF`).
pub fn decode_reply(bytes: &[u8]) -> Result<ViscaReply, DecodeError> {
    if bytes.len() < 3 || bytes.len() > MAX_FRAME_LEN {
        return Err(DecodeError::Length(bytes.len()));
    }
    if bytes[0] != REPLY_ADDRESS {
        return Err(DecodeError::Address(bytes[0]));
    }
    if bytes[bytes.len() - 1] != TERMINATOR {
        return Err(DecodeError::Terminator);
    }
    let body = &bytes[1..bytes.len() - 1];
    match body {
        [0x50, rest @ ..] if rest.len() == 8 => Ok(ViscaReply::Position {
            pan: read_word(&rest[..4]).ok_or(DecodeError::Unsupported)?,
            tilt: read_word(&rest[4..]).ok_or(DecodeError::Unsupported)?,
        }),
        [b] if b & 0xF0 == 0x40 => Ok(ViscaReply::Ack { socket: b & 0x0F }),
        [b] if b & 0xF0 == 0x50 => Ok(ViscaReply::Completion { socket: b & 0x0F }),
        [b, code] if b & 0xF0 == 0x60 => Ok(ViscaReply::Error { socket: b & 0x0F, code: *code }),
        _ => Err(DecodeError::Unsupported),
    }
}

/// Split a datagram that may carry several replies back to back.
pub fn split_replies(bytes: &[u8]) -> Vec<&[u8]> {
    bytes
        .split_inclusive(|&b| b == TERMINATOR)
        .filter(|chunk| chunk.last() == Some(&TERMINATOR))
        .collect()
}

/// Sony VISCA-over-IP payload types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpPayloadType {
    Command,
    Inquiry,
    Reply,
}

impl IpPayloadType {
    fn code(self) -> [u8; 2] {
        match self {
            IpPayloadType::Command => [0x01, 0x00],
            IpPayloadType::Inquiry => [0x01, 0x10],
            IpPayloadType::Reply => [0x01, 0x11],
        }
    }
}

/// Prefix a VISCA message with the 8-byte IP header: type, length, sequence.
pub fn wrap_ip(kind: IpPayloadType, seq: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + payload.len());
    out.extend(kind.code());
    out.extend((payload.len() as u16).to_be_bytes());
    out.extend(seq.to_be_bytes());
    out.extend(payload);
    out
}

pub fn unwrap_ip(bytes: &[u8]) -> Result<(IpPayloadType, u32, &[u8]), DecodeError> {
    if bytes.len() < 8 {
        return Err(DecodeError::Length(bytes.len()));
    }
    let kind = match [bytes[0], bytes[1]] {
        [0x01, 0x00] => IpPayloadType::Command,
        [0x01, 0x10] => IpPayloadType::Inquiry,
        [0x01, 0x11] => IpPayloadType::Reply,
        _ => return Err(DecodeError::Unsupported),
    };
    let len = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    let seq = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let payload = &bytes[8..];
    if payload.len() != len {
        return Err(DecodeError::Length(payload.len()));
    }
    Ok((kind, seq, payload))
}
