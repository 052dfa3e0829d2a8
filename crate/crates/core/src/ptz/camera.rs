use std::sync::Arc;

use crate::clock::Clock;
use crate::codebook::Kinematics;
use crate::score::Bearing;

use super::transport::Transport;
use super::visca::{
    self, decode_reply, encode_reply, split_replies, units_to_degrees, SpeedBytes, ViscaCommand,
    ViscaFrame, ViscaReply, PAN_SPEED_MAX, TILT_SPEED_MAX,
};
use super::{CameraPose, DriverConfig, DriverError};

/// Something that can be pointed. Positions are in degrees.
pub trait Camera: Send {
    fn move_to(&mut self, target: Bearing, speed: f64) -> Result<(), DriverError>;
    fn pose(&mut self) -> Result<CameraPose, DriverError>;
    fn stop(&mut self) -> Result<(), DriverError>;
}

/// Analytic camera: each axis slews at its rate times the commanded speed
/// and stops dead on target.
pub struct SimCamera {
    clock: Arc<dyn Clock>,
    kin: Kinematics,
    origin: Bearing,
    target: Bearing,
    pan_speed: f64,
    tilt_speed: f64,
    started_ms: u64,
}

impl SimCamera {
    pub fn new(clock: Arc<dyn Clock>, kin: Kinematics, home: Bearing) -> Self {
        let now = clock.now_ms();
        SimCamera {
            clock,
            kin,
            origin: home,
            target: home,
            pan_speed: 1.0,
            tilt_speed: 1.0,
            started_ms: now,
        }
    }

    pub fn pose_at(&self, t_ms: u64) -> CameraPose {
        let dt = t_ms.saturating_sub(self.started_ms) as f64 / 1000.0;
        let axis = |from: f64, to: f64, rate: f64| {
            let dist = to - from;
            let travelled = rate * dt;
            if travelled >= dist.abs() {
                (to, false)
            } else {
                (from + dist.signum() * travelled, true)
            }
        };
        let (pan, pan_moving) = axis(self.origin.pan, self.target.pan, self.kin.pan_deg_per_s * self.pan_speed);
        let (tilt, tilt_moving) =
            axis(self.origin.tilt, self.target.tilt, self.kin.tilt_deg_per_s * self.tilt_speed);
        CameraPose { pan, tilt, moving: pan_moving || tilt_moving }
    }

    fn command(&mut self, target: Bearing, pan_speed: f64, tilt_speed: f64) {
        let now = self.clock.now_ms();
        let here = self.pose_at(now);
        self.origin = Bearing::new(here.pan, here.tilt);
        self.target = target.clamped();
        self.pan_speed = pan_speed;
        self.tilt_speed = tilt_speed;
        self.started_ms = now;
    }

    fn halt(&mut self) {
        let here = self.pose_at(self.clock.now_ms());
        self.command(Bearing::new(here.pan, here.tilt), self.pan_speed, self.tilt_speed);
    }
}

impl Camera for SimCamera {
    fn move_to(&mut self, target: Bearing, speed: f64) -> Result<(), DriverError> {
        if !(speed > 0.0 && speed <= 1.0) {
            return Err(visca::EncodeError::Speed(speed).into());
        }
        if !target.is_finite() {
            return Err(visca::EncodeError::Position { pan: target.pan, tilt: target.tilt }.into());
        }
        self.command(target, speed, speed);
        Ok(())
    }

    fn pose(&mut self) -> Result<CameraPose, DriverError> {
        Ok(self.pose_at(self.clock.now_ms()))
    }

    fn stop(&mut self) -> Result<(), DriverError> {
        self.halt();
        Ok(())
    }
}

/// Answers VISCA frames the way a camera would, backed by a [`SimCamera`].
pub struct ViscaResponder {
    camera: SimCamera,
    received: Vec<ViscaFrame>,
}

impl ViscaResponder {
    pub fn new(camera: SimCamera) -> Self {
        ViscaResponder { camera, received: Vec::new() }
    }

    pub fn received(&self) -> &[ViscaFrame] {
        &self.received
    }

    pub fn camera(&self) -> &SimCamera {
        &self.camera
    }

    /// Replies for one incoming message (without IP header).
    pub fn handle(&mut self, bytes: &[u8]) -> Vec<Vec<u8>> {
        const SYNTAX_ERROR: u8 = 0x02;
        let Ok(frame) = ViscaFrame::from_bytes(bytes.to_vec()) else {
            return vec![encode_reply(&ViscaReply::Error { socket: 0, code: SYNTAX_ERROR })];
        };
        let cmd = visca::decode(&frame);
        self.received.push(frame);
        let fraction = |s: SpeedBytes| (s.pan as f64 / PAN_SPEED_MAX as f64, s.tilt as f64 / TILT_SPEED_MAX as f64);
        let done = || {
            vec![
                encode_reply(&ViscaReply::Ack { socket: 1 }),
                encode_reply(&ViscaReply::Completion { socket: 1 }),
            ]
        };
        match cmd {
            Ok(ViscaCommand::AbsolutePosition { speed, pan, tilt }) => {
                let (ps, ts) = fraction(speed);
                self.camera.command(Bearing::new(units_to_degrees(pan), units_to_degrees(tilt)), ps, ts);
                done()
            }
            Ok(ViscaCommand::Drive { speed, direction }) => {
                use visca::DriveDirection::*;
                let here = self.camera.pose_at(self.camera.clock.now_ms());
                let (dp, dt) = match direction {
                    Up => (0.0, 1.0),
                    Down => (0.0, -1.0),
                    Left => (-1.0, 0.0),
                    Right => (1.0, 0.0),
                    UpLeft => (-1.0, 1.0),
                    UpRight => (1.0, 1.0),
                    DownLeft => (-1.0, -1.0),
                    DownRight => (1.0, -1.0),
                };
                let far = Bearing::new(here.pan + dp * 1000.0, here.tilt + dt * 1000.0);
                let (ps, ts) = fraction(speed);
                self.camera.command(far, ps, ts);
                done()
            }
            Ok(ViscaCommand::Stop { .. }) => {
                self.camera.halt();
                done()
            }
            Ok(ViscaCommand::Home) => {
                self.camera.command(Bearing::default(), 1.0, 1.0);
                done()
            }
            Ok(ViscaCommand::PositionInquiry) => {
                let p = self.camera.pose_at(self.camera.clock.now_ms());
                vec![encode_reply(&ViscaReply::Position {
                    pan: visca::degrees_to_units(p.pan),
                    tilt: visca::degrees_to_units(p.tilt),
                })]
            }
            Err(_) => vec![encode_reply(&ViscaReply::Error { socket: 0, code: SYNTAX_ERROR })],
        }
    }
}

/// A camera reached through VISCA frames over some [`Transport`].
pub struct ViscaCamera<T: Transport> {
    transport: T,
    config: DriverConfig,
    speed: SpeedBytes,
    target: Option<Bearing>,
}

impl<T: Transport> ViscaCamera<T> {
    pub fn new(transport: T, config: DriverConfig) -> Self {
        ViscaCamera { transport, config, speed: SpeedBytes::MAX, target: None }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Send and wait for a matching reply, resending on silence.
    fn exchange<R>(
        &mut self,
        frame: &ViscaFrame,
        mut accept: impl FnMut(ViscaReply) -> Option<Result<R, DriverError>>,
    ) -> Result<R, DriverError> {
        let attempts = self.config.retries + 1;
        for _ in 0..attempts {
            self.transport.send(frame)?;
            while let Some(datagram) = self.transport.recv(self.config.reply_timeout())? {
                for chunk in split_replies(&datagram) {
                    let Ok(reply) = decode_reply(chunk) else { continue };
                    if let ViscaReply::Error { code, .. } = reply {
                        return Err(DriverError::CameraError(code));
                    }
                    if let Some(result) = accept(reply) {
                        return result;
                    }
                }
            }
        }
        Err(DriverError::Transport(format!("no reply to {frame} after {attempts} attempt(s)")))
    }

    fn command(&mut self, frame: &ViscaFrame) -> Result<(), DriverError> {
        self.exchange(frame, |r| matches!(r, ViscaReply::Ack { .. } | ViscaReply::Completion { .. }).then_some(Ok(())))
    }
}

impl<T: Transport> Camera for ViscaCamera<T> {
    fn move_to(&mut self, target: Bearing, speed: f64) -> Result<(), DriverError> {
        let target = target.clamped();
        let frame = visca::encode_absolute_position(target.pan, target.tilt, speed)?;
        self.speed = SpeedBytes::from_fraction(speed)?;
        self.target = Some(target);
        self.command(&frame)
    }

    fn pose(&mut self) -> Result<CameraPose, DriverError> {
        let inquiry = visca::encode(&ViscaCommand::PositionInquiry)?;
        let (pan, tilt) = self.exchange(&inquiry, |r| match r {
            ViscaReply::Position { pan, tilt } => Some(Ok((units_to_degrees(pan), units_to_degrees(tilt)))),
            _ => None,
        })?;
        let tol = self.config.arrival_tolerance_deg;
        let moving = self
            .target
            .is_some_and(|t| (t.pan - pan).abs() > tol || (t.tilt - tilt).abs() > tol);
        Ok(CameraPose { pan, tilt, moving })
    }

    fn stop(&mut self) -> Result<(), DriverError> {
        let frame = visca::encode_stop_with(self.speed);
        self.target = None;
        self.command(&frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::ptz::LoopbackTransport;

    fn sim(clock: &VirtualClock) -> SimCamera {
        SimCamera::new(Arc::new(clock.clone()), Kinematics::default(), Bearing::default())
    }

    #[test]
    fn sim_camera_slews_at_rate() {
        let clock = VirtualClock::new(0);
        let mut cam = sim(&clock);
        cam.move_to(Bearing::new(60.0, 0.0), 0.5).unwrap();
        clock.sleep_ms(500);
        let p = cam.pose().unwrap();
        assert!((p.pan - 30.0).abs() < 1e-9 && p.moving);
        clock.sleep_ms(500);
        let p = cam.pose().unwrap();
        assert_eq!((p.pan, p.moving), (60.0, false));
    }

    #[test]
    fn sim_camera_stop_freezes_pose() {
        let clock = VirtualClock::new(0);
        let mut cam = sim(&clock);
        cam.move_to(Bearing::new(0.0, 80.0), 1.0).unwrap();
        clock.sleep_ms(250);
        cam.stop().unwrap();
        clock.sleep_ms(1000);
        let p = cam.pose().unwrap();
        assert!((p.tilt - 20.0).abs() < 1e-9 && !p.moving);
    }

    #[test]
    fn visca_camera_over_loopback() {
        let clock = VirtualClock::new(0);
        let transport = LoopbackTransport::new(ViscaResponder::new(sim(&clock)));
        let mut cam = ViscaCamera::new(transport, DriverConfig::default());
        cam.move_to(Bearing::new(-30.0, 0.0), 1.0).unwrap();
        let p = cam.pose().unwrap();
        assert!(p.moving);
        clock.sleep_ms(1000);
        let p = cam.pose().unwrap();
        assert!((p.pan + 30.0).abs() < 0.1 && !p.moving);
        cam.stop().unwrap();
        let sent: Vec<String> = cam.transport().received().iter().map(|f| f.to_string()).collect();
        assert_eq!(sent[0], "81 01 06 02 18 14 0F 0E 05 00 00 00 00 00 FF");
        assert_eq!(sent[1], "81 09 06 12 FF");
        assert_eq!(sent.last().unwrap(), "81 01 06 01 18 14 03 03 FF");
    }

    #[test]
    fn silent_camera_is_a_transport_error() {
        let clock = VirtualClock::new(0);
        let mut transport = LoopbackTransport::new(ViscaResponder::new(sim(&clock)));
        transport.mute = true;
        let mut cam = ViscaCamera::new(transport, DriverConfig { retries: 1, ..Default::default() });
        let err = cam.move_to(Bearing::new(10.0, 0.0), 1.0).unwrap_err();
        assert!(matches!(err, DriverError::Transport(_)), "{err}");
        assert_eq!(cam.transport().received().len(), 2);
    }

    #[test]
    fn responder_rejects_garbage() {
        let clock = VirtualClock::new(0);
        let mut r = ViscaResponder::new(sim(&clock));
        let replies = r.handle(&[0x81, 0x01, 0x06, 0x05, 0xFF]);
        assert_eq!(decode_reply(&replies[0]), Ok(ViscaReply::Error { socket: 0, code: 2 }));
    }
}
