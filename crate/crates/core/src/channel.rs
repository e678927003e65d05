//! Simulated data channel: wire codec, latency law, ordered delivery and an
//! optional loopback TCP transport.
//!
//! Wire layout, all little-endian:
//!
//! ```text
//! 0x55 0x53 | kind: u8 | seq: u32 | timestamp_us: u64 | payload
//! ```
//!
//! | kind | payload                                              | total |
//! |------|------------------------------------------------------|-------|
//! | 1    | PoseCmd: px py pz qw qx qy qz (f64)                  | 71    |
//! | 2    | ForceFb: fx fy fz (f64)                              | 39    |
//! | 3    | FrameMeta: frame_id (u64), cx cy w h e found (f64)   | 71    |

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::error::ConfigError;
use crate::rng::mix;
use crate::spatial::{Pose, SimClock, Vec3};
use crate::ultrasound::VesselMeasure;

pub const MAGIC: [u8; 2] = [0x55, 0x53];
pub const HEADER_LEN: usize = 15;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("transport failure: {0}")]
    Transport(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    PoseCmd(Pose),
    ForceFb(Vec3),
    FrameMeta { frame_id: u64, measure: VesselMeasure },
}

impl Payload {
    pub fn kind(&self) -> u8 {
        match self {
            Payload::PoseCmd(_) => 1,
            Payload::ForceFb(_) => 2,
            Payload::FrameMeta { .. } => 3,
        }
    }

    fn len(kind: u8) -> Option<usize> {
        match kind {
            1 => Some(56),
            2 => Some(24),
            3 => Some(56),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMessage {
    pub seq: u32,
    pub timestamp: u64,
    pub payload: Payload,
}

pub fn encode(msg: &ChannelMessage) -> Vec<u8> {
    let kind = msg.payload.kind();
    let mut out = Vec::with_capacity(HEADER_LEN + Payload::len(kind).unwrap_or(0));
    out.extend_from_slice(&MAGIC);
    out.push(kind);
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&msg.timestamp.to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    match &msg.payload {
        Payload::PoseCmd(p) => {
            let q = p.orientation.as_ref();
            for v in [p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k] {
                put(v);
            }
        }
        Payload::ForceFb(f) => {
            for v in [f.x, f.y, f.z] {
                put(v);
            }
        }
        Payload::FrameMeta { frame_id, measure } => {
            out.extend_from_slice(&frame_id.to_le_bytes());
            let m = measure;
            for v in [m.centroid.0, m.centroid.1, m.w, m.h, m.e, if m.found { 1.0 } else { 0.0 }] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn malformed(why: impl Into<String>) -> ChannelError {
    ChannelError::MalformedMessage(why.into())
}

pub fn decode(bytes: &[u8]) -> Result<ChannelMessage, ChannelError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..2] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let kind = bytes[2];
    let body_len = Payload::len(kind).ok_or_else(|| malformed(format!("unknown kind {kind}")))?;
    if bytes.len() != HEADER_LEN + body_len {
        return Err(malformed(format!(
            "kind {kind} needs {} bytes, got {}",
            HEADER_LEN + body_len,
            bytes.len()
        )));
    }
    let seq = u32::from_le_bytes(bytes[3..7].try_into().unwrap());
    let timestamp = u64::from_le_bytes(bytes[7..15].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let f = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap());
    let payload = match kind {
        1 => Payload::PoseCmd(Pose::from_raw(Vec3::new(f(0), f(1), f(2)), f(3), f(4), f(5), f(6))),
        2 => Payload::ForceFb(Vec3::new(f(0), f(1), f(2))),
        _ => {
            let frame_id = u64::from_le_bytes(body[..8].try_into().unwrap());
            let found = match f(6) {
                1.0 => true,
                0.0 => false,
                v => return Err(malformed(format!("found flag {v} is not 0 or 1"))),
            };
            Payload::FrameMeta {
                frame_id,
                measure: VesselMeasure {
                    centroid: (f(1), f(2)),
                    w: f(3),
                    h: f(4),
                    e: f(5),
                    found,
                },
            }
        }
    };
    Ok(ChannelMessage {
        seq,
        timestamp,
        payload,
    })
}

/// One-way delay law: Gaussian clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub one_way_mean_us: f64,
    pub one_way_std_us: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            one_way_mean_us: 2500.0,
            one_way_std_us: 2000.0,
            seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.one_way_mean_us >= 0.0 && self.one_way_std_us >= 0.0)
            || !self.one_way_mean_us.is_finite()
            || !self.one_way_std_us.is_finite()
        {
            return Err(ConfigError::Invalid("latency mean and std must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Delay for message `seq`, a pure function of `(seed, seq)`.
    pub fn sample_us(&self, seq: u32) -> u64 {
        if self.one_way_std_us == 0.0 {
            return self.one_way_mean_us.round() as u64;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, seq as u64));
        let z: f64 = StandardNormal.sample(&mut rng);
        (self.one_way_mean_us + self.one_way_std_us * z).max(0.0).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    InProcess,
    /// Loopback relay on the given port.
    Tcp(u16),
}

impl std::str::FromStr for TransportKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "inproc" {
            return Ok(TransportKind::InProcess);
        }
        s.strip_prefix("tcp:")
            .and_then(|p| p.parse().ok())
            .map(TransportKind::Tcp)
            .ok_or_else(|| ConfigError::Invalid(format!("transport must be inproc or tcp:<port>, got {s}")))
    }
}

pub fn write_frame(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

pub fn read_frame(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Loopback echo relay: every length-prefixed frame is sent straight back.
pub struct TcpRelay {
    port: u16,
}

impl TcpRelay {
    /// Binds `127.0.0.1:port` (0 picks a free port) and serves in the background.
    pub fn start(port: u16) -> std::io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let port = listener.local_addr()?.port();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                thread::spawn(move || {
                    let _ = stream.set_nodelay(true);
                    let mut rd = &stream;
                    let mut wr = &stream;
                    while let Ok(frame) = read_frame(&mut rd) {
                        if write_frame(&mut wr, &frame).is_err() {
                            break;
                        }
                    }
                });
            }
        });
        Ok(Self { port })
    }

    pub fn port(&self) -> u16 {
        self.port
    }
}

#[derive(Debug, Clone, PartialEq)]
struct InFlight {
    deliver_at: u64,
    bytes: Vec<u8>,
}

/// Receiving side of one direction of the link. Senders write into it via
/// [`ChannelEndpoint::send`]; the owner drains it with [`ChannelEndpoint::poll`].
#[derive(Debug)]
pub struct ChannelEndpoint {
    inbox: VecDeque<InFlight>,
    latency: LatencyModel,
    last_delivery: u64,
    next_seq: u32,
    last_timestamp: u64,
    tcp: Option<TcpStream>,
}

impl ChannelEndpoint {
    pub fn new(latency: LatencyModel) -> Self {
        Self {
            inbox: VecDeque::new(),
            latency,
            last_delivery: 0,
            next_seq: 0,
            last_timestamp: 0,
            tcp: None,
        }
    }

    pub fn with_transport(latency: LatencyModel, transport: TransportKind) -> Result<Self, ChannelError> {
        let mut ep = Self::new(latency);
        if let TransportKind::Tcp(port) = transport {
            let s = TcpStream::connect(("127.0.0.1", port))?;
            s.set_nodelay(true)?;
            ep.tcp = Some(s);
        }
        Ok(ep)
    }

    /// Stamps `payload` with the next sequence number and the current time.
    pub fn send_payload(&mut self, payload: Payload, clock: &SimClock) -> Result<(), ChannelError> {
        let msg = ChannelMessage {
            seq: self.next_seq,
            timestamp: clock.now_us(),
            payload,
        };
        self.send(&msg, clock)
    }

    pub fn send(&mut self, msg: &ChannelMessage, clock: &SimClock) -> Result<(), ChannelError> {
        let delay = self.latency.sample_us(msg.seq);
        self.send_with_delay(msg, clock, delay)
    }

    /// Schedules `msg` after an explicit delay, still subject to FIFO clamping.
    pub fn send_with_delay(&mut self, msg: &ChannelMessage, clock: &SimClock, delay_us: u64) -> Result<(), ChannelError> {
        debug_assert!(clock.now_us() >= msg.timestamp);
        if msg.seq < self.next_seq || msg.timestamp < self.last_timestamp {
            return Err(malformed("sequence or timestamp went backwards"));
        }
        self.next_seq = msg.seq.wrapping_add(1);
        self.last_timestamp = msg.timestamp;
        let mut bytes = encode(msg);
        if let Some(s) = self.tcp.as_mut() {
            write_frame(s, &bytes)?;
            bytes = read_frame(s)?;
        }
        let deliver_at = (clock.now_us() + delay_us).max(self.last_delivery);
        self.last_delivery = deliver_at;
        self.inbox.push_back(InFlight { deliver_at, bytes });
        Ok(())
    }

    /// Removes and returns every message due at or before `clock.now`.
    pub fn poll(&mut self, clock: &SimClock) -> Result<Vec<ChannelMessage>, ChannelError> {
        let mut out = Vec::new();
        while self.inbox.front().is_some_and(|m| m.deliver_at <= clock.now_us()) {
            let m = self.inbox.pop_front().unwrap();
            out.push(decode(&m.bytes)?);
        }
        Ok(out)
    }

    /// Delivery times still pending, in order.
    pub fn pending(&self) -> impl Iterator<Item = u64> + '_ {
        self.inbox.iter().map(|m| m.deliver_at)
    }
}
