use std::io::ErrorKind;
use std::net::{ToSocketAddrs, UdpSocket};
use std::time::Duration;

use super::camera::ViscaResponder;
use super::visca::{self, IpPayloadType, ViscaFrame};
use super::DriverError;

/// Moves VISCA frames to a camera and reply bytes back.
pub trait Transport: Send {
    fn send(&mut self, frame: &ViscaFrame) -> Result<(), DriverError>;
    /// Next reply datagram, or `None` if nothing arrived within `timeout`.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, DriverError>;
}

pub struct UdpTransport {
    socket: UdpSocket,
    ip_header: bool,
    seq: u32,
}

impl UdpTransport {
    pub fn connect(addr: impl ToSocketAddrs, ip_header: bool) -> Result<Self, DriverError> {
        let socket = UdpSocket::bind("0.0.0.0:0")?;
        socket.connect(addr)?;
        Ok(UdpTransport { socket, ip_header, seq: 0 })
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, frame: &ViscaFrame) -> Result<(), DriverError> {
        let bytes = if self.ip_header {
            self.seq = self.seq.wrapping_add(1);
            let kind = if frame.is_inquiry() { IpPayloadType::Inquiry } else { IpPayloadType::Command };
            visca::wrap_ip(kind, self.seq, frame.as_bytes())
        } else {
            frame.as_bytes().to_vec()
        };
        self.socket.send(&bytes)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, DriverError> {
        self.socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut buf = [0u8; 1024];
        match self.socket.recv(&mut buf) {
            Ok(n) => {
                let data = &buf[..n];
                if self.ip_header {
                    let (_, _, payload) =
                        visca::unwrap_ip(data).map_err(|e| DriverError::Transport(e.to_string()))?;
                    Ok(Some(payload.to_vec()))
                } else {
                    Ok(Some(data.to_vec()))
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// An in-process VISCA camera: frames go straight to a [`ViscaResponder`].
pub struct LoopbackTransport {
    responder: ViscaResponder,
    inbox: std::collections::VecDeque<Vec<u8>>,
    /// Drop every reply, simulating a camera that went away.
    pub mute: bool,
}

impl LoopbackTransport {
    pub fn new(responder: ViscaResponder) -> Self {
        LoopbackTransport { responder, inbox: Default::default(), mute: false }
    }

    /// Frames the camera has received, oldest first.
    pub fn received(&self) -> &[ViscaFrame] {
        self.responder.received()
    }
}

impl Transport for LoopbackTransport {
    fn send(&mut self, frame: &ViscaFrame) -> Result<(), DriverError> {
        let replies = self.responder.handle(frame.as_bytes());
        if !self.mute {
            self.inbox.extend(replies);
        }
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<Option<Vec<u8>>, DriverError> {
        Ok(self.inbox.pop_front())
    }
}
