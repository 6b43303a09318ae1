//! Communication adapter between the robot stack and console clients.
//!
//! Frames are a 4-byte big-endian body length followed by a UTF-8 JSON
//! envelope `{"seq", "t", "correlation_id"?, "type", "payload"}`. The same
//! envelopes travel over TCP (framed) and over the WebSocket console
//! endpoint (one JSON text message per envelope).

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventKind, MediumKind};
use crate::geometry::Pose;
use crate::kinematics::{JointConfiguration, RobotModel};
use crate::plan::PlanPhase;
use crate::planner::TrajectoryPoint;
use crate::world::{World, WorldObject};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
const LENGTH_PREFIX: usize = 4;

/// Every message type tag on the wire.
pub const CATALOG: [&str; 13] = [
    "hello",
    "calibrate",
    "calibration_result",
    "object_pose_request",
    "object_pose_response",
    "trajectory",
    "joint_state",
    "user_input",
    "intervention",
    "plan_status",
    "collision_event",
    "act_completed",
    "error",
];

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("non-finite value in {0}")]
    UnencodableValue(&'static str),
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed body: {0}")]
    MalformedBody(String),
}

#[derive(Debug, Error)]
pub enum CommError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("remote error {code:?}: {message}")]
    RemoteError { code: ErrorCode, message: String },
    #[error("connection closed")]
    Closed,
    #[error("unexpected reply {0}")]
    UnexpectedReply(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindError {
    pub addr: String,
    #[source]
    pub source: io::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Server,
    Console,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownObject,
    UnknownType,
    MalformedBody,
    Rejected,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol_version: u32,
    pub role: Role,
    /// Kinematic chain so clients render with the server's model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_model: Option<RobotModel>,
    /// World snapshot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<WorldObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Calibrate {
        marker_pose: Pose,
    },
    CalibrationResult {
        base_in_viewer: Pose,
        marker_pose_used: Pose,
        timestamp: f64,
    },
    ObjectPoseRequest {
        object_id: String,
    },
    ObjectPoseResponse {
        object_id: String,
        pose: Pose,
    },
    Trajectory {
        act_id: u64,
        medium: MediumKind,
        start_time: f64,
        points: Vec<TrajectoryPoint>,
    },
    JointState {
        q: JointConfiguration,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act_id: Option<u64>,
    },
    UserInput {
        value: bool,
    },
    Intervention {
        object_id: String,
        new_pose: Pose,
    },
    PlanStatus {
        cursor: usize,
        total: usize,
        phase: PlanPhase,
        instruction: String,
    },
    CollisionEvent {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act_id: Option<u64>,
        link: usize,
        object_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paused_until: Option<f64>,
    },
    ActCompleted {
        act_id: u64,
        step: u32,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

fn finite(v: f64, field: &'static str) -> Result<(), CodecError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CodecError::UnencodableValue(field))
    }
}

fn finite_pose(p: &Pose, field: &'static str) -> Result<(), CodecError> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(CodecError::UnencodableValue(field))
    }
}

fn finite_q(q: &JointConfiguration, field: &'static str) -> Result<(), CodecError> {
    if q.is_finite() {
        Ok(())
    } else {
        Err(CodecError::UnencodableValue(field))
    }
}

impl Message {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::Calibrate { .. } => "calibrate",
            Message::CalibrationResult { .. } => "calibration_result",
            Message::ObjectPoseRequest { .. } => "object_pose_request",
            Message::ObjectPoseResponse { .. } => "object_pose_response",
            Message::Trajectory { .. } => "trajectory",
            Message::JointState { .. } => "joint_state",
            Message::UserInput { .. } => "user_input",
            Message::Intervention { .. } => "intervention",
            Message::PlanStatus { .. } => "plan_status",
            Message::CollisionEvent { .. } => "collision_event",
            Message::ActCompleted { .. } => "act_completed",
            Message::Error { .. } => "error",
        }
    }

    /// JSON has no encoding for NaN or infinities.
    pub fn check_finite(&self) -> Result<(), CodecError> {
        match self {
            Message::Hello(h) => {
                if let Some(dt) = h.delta_t {
                    finite(dt, "hello.delta_t")?;
                }
                if let Some(m) = &h.robot_model {
                    finite_pose(&m.base_frame, "hello.robot_model")?;
                    for j in &m.joints {
                        for v in [j.dh.a, j.dh.alpha, j.dh.d, j.dh.theta_offset, j.limits.lower, j.limits.upper, j.v_max, j.a_max] {
                            finite(v, "hello.robot_model")?;
                        }
                    }
                }
                for o in &h.objects {
                    finite_pose(&o.pose, "hello.objects")?;
                    finite_pose(&o.grasp_offset, "hello.objects")?;
                }
                Ok(())
            }
            Message::Calibrate { marker_pose } => finite_pose(marker_pose, "calibrate.marker_pose"),
            Message::CalibrationResult { base_in_viewer, marker_pose_used, timestamp } => {
                finite_pose(base_in_viewer, "calibration_result.base_in_viewer")?;
                finite_pose(marker_pose_used, "calibration_result.marker_pose_used")?;
                finite(*timestamp, "calibration_result.timestamp")
            }
            Message::ObjectPoseResponse { pose, .. } => finite_pose(pose, "object_pose_response.pose"),
            Message::Trajectory { start_time, points, .. } => {
                finite(*start_time, "trajectory.start_time")?;
                for p in points {
                    finite(p.time, "trajectory.points.time")?;
                    finite_q(&p.q, "trajectory.points.q")?;
                }
                Ok(())
            }
            Message::JointState { q, .. } => finite_q(q, "joint_state.q"),
            Message::Intervention { new_pose, .. } => finite_pose(new_pose, "intervention.new_pose"),
            Message::CollisionEvent { paused_until: Some(t), .. } => finite(*t, "collision_event.paused_until"),
            _ => Ok(()),
        }
    }

    /// Outbound form of a simulation event, if it is published.
    pub fn from_event(ev: &Event) -> Option<Message> {
        Some(match &ev.kind {
            EventKind::StreamStarted { act_id, medium, start_time, points } => Message::Trajectory {
                act_id: *act_id,
                medium: *medium,
                start_time: *start_time,
                points: points.clone(),
            },
            EventKind::JointState { q, act_id } => Message::JointState { q: q.clone(), act_id: *act_id },
            EventKind::Collision { act_id, link, object_id, paused_until } => Message::CollisionEvent {
                act_id: *act_id,
                link: *link,
                object_id: object_id.clone(),
                paused_until: *paused_until,
            },
            EventKind::ActCompleted { act_id, step } => Message::ActCompleted { act_id: *act_id, step: *step },
            EventKind::PlanStatus { cursor, total, phase, instruction } => Message::PlanStatus {
                cursor: *cursor,
                total: *total,
                phase: *phase,
                instruction: instruction.clone(),
            },
            EventKind::Intervention { object_id, pose } | EventKind::ObjectMoved { object_id, pose } => {
                Message::Intervention { object_id: object_id.clone(), new_pose: *pose }
            }
            EventKind::Calibrated { base_in_viewer, marker_pose } => Message::CalibrationResult {
                base_in_viewer: *base_in_viewer,
                marker_pose_used: *marker_pose,
                timestamp: ev.t,
            },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<u64>,
    #[serde(flatten)]
    pub message: Message,
}

impl Envelope {
    pub fn new(seq: u64, t: f64, message: Message) -> Self {
        Self { seq, t, correlation_id: None, message }
    }

    pub fn with_correlation(mut self, id: u64) -> Self {
        self.correlation_id = Some(id);
        self
    }

    pub fn type_tag(&self) -> &'static str {
        self.message.type_tag()
    }
}

/// JSON body without the length prefix.
pub fn encode_body(env: &Envelope) -> Result<Vec<u8>, CodecError> {
    finite(env.t, "envelope.t")?;
    env.message.check_finite()?;
    serde_json::to_vec(env).map_err(|e| CodecError::UnencodableValue(if e.is_data() { "payload" } else { "envelope" }))
}

pub fn encode(env: &Envelope) -> Result<Vec<u8>, CodecError> {
    let body = encode_body(env)?;
    let mut out = Vec::with_capacity(LENGTH_PREFIX + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

#[derive(Deserialize)]
struct TypeProbe {
    #[serde(rename = "type")]
    kind: String,
}

pub fn decode_body(body: &[u8]) -> Result<Envelope, CodecError> {
    let probe: TypeProbe = serde_json::from_slice(body).map_err(|e| CodecError::MalformedBody(e.to_string()))?;
    if !CATALOG.contains(&probe.kind.as_str()) {
        return Err(CodecError::UnknownType(probe.kind));
    }
    serde_json::from_slice(body).map_err(|e| CodecError::MalformedBody(e.to_string()))
}

/// Reads one frame from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Envelope, usize), CodecError> {
    let len = frame_len(bytes)?;
    let end = LENGTH_PREFIX + len;
    if bytes.len() < end {
        return Err(CodecError::Truncated { needed: end, available: bytes.len() });
    }
    Ok((decode_body(&bytes[LENGTH_PREFIX..end])?, end))
}

/// Decodes exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let (env, used) = decode_frame(bytes)?;
    if used != bytes.len() {
        return Err(CodecError::MalformedBody(format!("{} trailing bytes after frame", bytes.len() - used)));
    }
    Ok(env)
}

fn frame_len(bytes: &[u8]) -> Result<usize, CodecError> {
    if bytes.len() < LENGTH_PREFIX {
        return Err(CodecError::Truncated { needed: LENGTH_PREFIX, available: bytes.len() });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(CodecError::MalformedBody(format!("frame length {len} exceeds {MAX_FRAME_LEN}")));
    }
    Ok(len)
}

/// Blocking read of one frame; `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, CommError> {
    let mut prefix = [0u8; LENGTH_PREFIX];
    match r.read_exact(&mut prefix) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = frame_len(&prefix)?;
    let mut frame = Vec::with_capacity(LENGTH_PREFIX + len);
    frame.extend_from_slice(&prefix);
    frame.resize(LENGTH_PREFIX + len, 0);
    r.read_exact(&mut frame[LENGTH_PREFIX..])?;
    Ok(Some(frame))
}

/// A bidirectional frame transport.
pub trait Endpoint {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), CommError>;
    /// Next inbound frame, or `None` if nothing arrived within `timeout`.
    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, CommError>;
}

/// In-process endpoint; see [`channel_pair`].
pub struct ChannelEndpoint {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn channel_pair() -> (ChannelEndpoint, ChannelEndpoint) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (ChannelEndpoint { tx: a_tx, rx: a_rx }, ChannelEndpoint { tx: b_tx, rx: b_rx })
}

impl Endpoint for ChannelEndpoint {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), CommError> {
        self.tx.send(frame).map_err(|_| CommError::Closed)
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, CommError> {
        match self.rx.recv_timeout(timeout) {
            Ok(f) => Ok(Some(f)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(CommError::Closed),
        }
    }
}

/// Client side of a framed TCP connection.
pub struct TcpEndpoint {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpEndpoint {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, buf: Vec::new() })
    }

    fn take_frame(&mut self) -> Result<Option<Vec<u8>>, CommError> {
        if self.buf.len() < LENGTH_PREFIX {
            return Ok(None);
        }
        let end = LENGTH_PREFIX + frame_len(&self.buf)?;
        if self.buf.len() < end {
            return Ok(None);
        }
        let rest = self.buf.split_off(end);
        Ok(Some(std::mem::replace(&mut self.buf, rest)))
    }
}

impl Endpoint for TcpEndpoint {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), CommError> {
        self.stream.write_all(&frame)?;
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, CommError> {
        let deadline = Instant::now() + timeout;
        let mut chunk = [0u8; 8192];
        loop {
            if let Some(f) = self.take_frame()? {
                return Ok(Some(f));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(CommError::Closed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Answers object pose requests from a world registry, standing in for a remote viewer.
pub struct LoopbackAdapter {
    world: World,
    outbox: VecDeque<Vec<u8>>,
    seq: u64,
}

impl LoopbackAdapter {
    pub fn new(world: World) -> Self {
        Self { world, outbox: VecDeque::new(), seq: 0 }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    fn reply(&mut self, t: f64, correlation_id: Option<u64>, message: Message) -> Result<(), CommError> {
        self.seq += 1;
        let mut env = Envelope::new(self.seq, t, message);
        env.correlation_id = correlation_id;
        self.outbox.push_back(encode(&env)?);
        Ok(())
    }
}

impl Endpoint for LoopbackAdapter {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), CommError> {
        let env = decode(&frame)?;
        let reply = match env.message {
            Message::ObjectPoseRequest { object_id } => match self.world.object_pose(&object_id) {
                Ok(pose) => Message::ObjectPoseResponse { object_id, pose },
                Err(e) => Message::Error { code: ErrorCode::UnknownObject, message: e.to_string() },
            },
            Message::Calibrate { marker_pose } => {
                let r = crate::world::calibrate(&marker_pose, &Pose::identity(), env.t);
                self.world.set_calibration(r.clone());
                Message::CalibrationResult {
                    base_in_viewer: r.base_in_viewer,
                    marker_pose_used: r.marker_pose_used,
                    timestamp: r.timestamp,
                }
            }
            _ => return Ok(()),
        };
        self.reply(env.t, env.correlation_id, reply)
    }

    fn recv_frame(&mut self, _timeout: Duration) -> Result<Option<Vec<u8>>, CommError> {
        Ok(self.outbox.pop_front())
    }
}

/// One end of a connection: stamps outbound sequence numbers and matches replies.
pub struct Session<E: Endpoint> {
    endpoint: E,
    next_seq: u64,
    next_correlation: u64,
    last_rx_seq: Option<u64>,
    gaps: u64,
    pending: VecDeque<Envelope>,
}

impl<E: Endpoint> Session<E> {
    pub fn new(endpoint: E) -> Self {
        Self { endpoint, next_seq: 1, next_correlation: 1, last_rx_seq: None, gaps: 0, pending: VecDeque::new() }
    }

    pub fn endpoint(&self) -> &E {
        &self.endpoint
    }

    pub fn endpoint_mut(&mut self) -> &mut E {
        &mut self.endpoint
    }

    /// Sequence gaps or reorders observed on inbound frames.
    pub fn gaps(&self) -> u64 {
        self.gaps
    }

    pub fn send(&mut self, t: f64, message: Message, correlation_id: Option<u64>) -> Result<u64, CommError> {
        let seq = self.next_seq;
        let mut env = Envelope::new(seq, t, message);
        env.correlation_id = correlation_id;
        self.endpoint.send_frame(encode(&env)?)?;
        self.next_seq += 1;
        Ok(seq)
    }

    fn recv_raw(&mut self, timeout: Duration) -> Result<Option<Envelope>, CommError> {
        let Some(frame) = self.endpoint.recv_frame(timeout)? else { return Ok(None) };
        let env = decode(&frame)?;
        if let Some(last) = self.last_rx_seq {
            if env.seq != last + 1 {
                self.gaps += 1;
            }
        }
        self.last_rx_seq = Some(env.seq);
        Ok(Some(env))
    }

    /// Next inbound envelope, including ones set aside while awaiting a reply.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Envelope>, CommError> {
        if let Some(env) = self.pending.pop_front() {
            return Ok(Some(env));
        }
        self.recv_raw(timeout)
    }

    /// Sends `message` with a fresh correlation id and waits for the matching reply.
    pub fn request(&mut self, t: f64, message: Message, timeout: Duration) -> Result<Envelope, CommError> {
        let id = self.next_correlation;
        self.next_correlation += 1;
        self.send(t, message, Some(id))?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let env = match self.recv_raw(left)? {
                Some(env) => env,
                None if left.is_zero() => return Err(CommError::Timeout(timeout)),
                None => continue,
            };
            if env.correlation_id != Some(id) {
                self.pending.push_back(env);
                continue;
            }
            if let Message::Error { code, message } = env.message {
                return Err(CommError::RemoteError { code, message });
            }
            return Ok(env);
        }
    }

    pub fn request_object_pose(&mut self, t: f64, object_id: &str, timeout: Duration) -> Result<Pose, CommError> {
        let reply = self.request(t, Message::ObjectPoseRequest { object_id: object_id.to_owned() }, timeout)?;
        match reply.message {
            Message::ObjectPoseResponse { pose, .. } => Ok(pose),
            other => Err(CommError::UnexpectedReply(other.type_tag())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisconnectReason {
    QueueOverflow,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisconnectEvent {
    pub subscriber: u64,
    pub reason: DisconnectReason,
    /// Last broadcast sim time seen by the hub.
    pub t: f64,
}

struct Subscriber {
    id: u64,
    next_seq: u64,
    tx: SyncSender<Vec<u8>>,
}

#[derive(Default)]
struct HubInner {
    subscribers: Vec<Subscriber>,
    next_id: u64,
    disconnects: Vec<DisconnectEvent>,
}

/// Fan-out to connected clients with a bounded queue per subscriber.
///
/// Each subscriber gets its own gap-free sequence numbers. A subscriber
/// whose queue is full is dropped rather than blocking the sender.
pub struct Hub {
    capacity: usize,
    inner: Mutex<HubInner>,
}

pub struct Subscription {
    pub id: u64,
    pub frames: Receiver<Vec<u8>>,
}

impl Default for Hub {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl Hub {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { capacity, inner: Mutex::new(HubInner { next_id: 1, ..Default::default() }) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HubInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn subscribe(&self) -> Subscription {
        let (tx, frames) = mpsc::sync_channel(self.capacity);
        let mut inner = self.lock();
        let id = inner.next_id;
        inner.next_id += 1;
        inner.subscribers.push(Subscriber { id, next_seq: 1, tx });
        Subscription { id, frames }
    }

    pub fn unsubscribe(&self, id: u64) {
        self.lock().subscribers.retain(|s| s.id != id);
    }

    pub fn subscriber_count(&self) -> usize {
        self.lock().subscribers.len()
    }

    pub fn take_disconnects(&self) -> Vec<DisconnectEvent> {
        std::mem::take(&mut self.lock().disconnects)
    }

    /// Delivers `env` to every subscriber, restamping `seq` per subscriber.
    pub fn broadcast(&self, env: &Envelope) -> Result<usize, CodecError> {
        env.message.check_finite()?;
        finite(env.t, "envelope.t")?;
        let mut inner = self.lock();
        let mut dropped = Vec::new();
        let mut delivered = 0;
        let mut env = env.clone();
        for sub in inner.subscribers.iter_mut() {
            env.seq = sub.next_seq;
            match sub.tx.try_send(encode(&env)?) {
                Ok(()) => {
                    sub.next_seq += 1;
                    delivered += 1;
                }
                Err(TrySendError::Full(_)) => dropped.push((sub.id, DisconnectReason::QueueOverflow)),
                Err(TrySendError::Disconnected(_)) => dropped.push((sub.id, DisconnectReason::Closed)),
            }
        }
        for (id, reason) in dropped {
            if reason == DisconnectReason::QueueOverflow {
                log::warn!("subscriber {id} dropped: queue of {} frames full", self.capacity);
            }
            inner.subscribers.retain(|s| s.id != id);
            inner.disconnects.push(DisconnectEvent { subscriber: id, reason, t: env.t });
        }
        Ok(delivered)
    }

    /// Sends to one subscriber only.
    pub fn send_to(&self, id: u64, env: &Envelope) -> Result<bool, CodecError> {
        let mut inner = self.lock();
        let Some(sub) = inner.subscribers.iter_mut().find(|s| s.id == id) else { return Ok(false) };
        let mut env = env.clone();
        env.seq = sub.next_seq;
        let frame = encode(&env)?;
        match sub.tx.try_send(frame) {
            Ok(()) => {
                sub.next_seq += 1;
                Ok(true)
            }
            Err(e) => {
                let reason = match e {
                    TrySendError::Full(_) => DisconnectReason::QueueOverflow,
                    TrySendError::Disconnected(_) => DisconnectReason::Closed,
                };
                inner.subscribers.retain(|s| s.id != id);
                inner.disconnects.push(DisconnectEvent { subscriber: id, reason, t: env.t });
                Ok(false)
            }
        }
    }
}

/// What connection handlers feed into the simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Connected { connection: u64 },
    Message { connection: u64, envelope: Envelope },
    Invalid { connection: u64, error: String },
    Disconnected { connection: u64 },
}

/// A background listener; stops accepting when dropped.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn listen<F>(addr: &str, handler: F) -> Result<Server, BindError>
where
    F: Fn(TcpStream) + Send + 'static,
{
    let listener = TcpListener::bind(addr).map_err(|source| BindError { addr: addr.to_owned(), source })?;
    let local = listener.local_addr().map_err(|source| BindError { addr: addr.to_owned(), source })?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let acceptor = thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(s) => handler(s),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    Ok(Server { addr: local, stop, acceptor: Some(acceptor) })
}

/// Framed TCP listener bound to `addr` (`"127.0.0.1:0"` picks a free port).
pub fn serve_tcp(addr: &str, hub: Arc<Hub>, inbound: Sender<Inbound>) -> Result<Server, BindError> {
    listen(addr, move |stream| {
        let _ = stream.set_nodelay(true);
        let sub = hub.subscribe();
        let connection = sub.id;
        let Ok(mut writer) = stream.try_clone() else { return };
        let _ = inbound.send(Inbound::Connected { connection });
        thread::spawn(move || {
            for frame in sub.frames {
                if writer.write_all(&frame).is_err() {
                    break;
                }
            }
        });
        let hub = Arc::clone(&hub);
        let inbound = inbound.clone();
        thread::spawn(move || {
            let mut reader = io::BufReader::new(stream);
            while let Ok(Some(frame)) = read_frame(&mut reader) {
                let msg = match decode(&frame) {
                    Ok(envelope) => Inbound::Message { connection, envelope },
                    Err(e) => Inbound::Invalid { connection, error: e.to_string() },
                };
                if inbound.send(msg).is_err() {
                    break;
                }
            }
            hub.unsubscribe(connection);
            let _ = inbound.send(Inbound::Disconnected { connection });
        });
    })
}

/// WebSocket endpoint for browser consoles: one JSON envelope per text message.
///
/// Binary messages are accepted too and must hold one length-prefixed frame.
pub fn serve_console(addr: &str, hub: Arc<Hub>, inbound: Sender<Inbound>) -> Result<Server, BindError> {
    listen(addr, move |stream| {
        let hub = Arc::clone(&hub);
        let inbound = inbound.clone();
        thread::spawn(move || console_connection(stream, &hub, &inbound));
    })
}

fn console_connection(stream: TcpStream, hub: &Hub, inbound: &Sender<Inbound>) {
    use tungstenite::Message as Ws;
    let _ = stream.set_nodelay(true);
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(5))).is_err() {
        return;
    }
    let sub = hub.subscribe();
    let connection = sub.id;
    let _ = inbound.send(Inbound::Connected { connection });
    'conn: loop {
        loop {
            match sub.frames.try_recv() {
                Ok(frame) => {
                    let text = String::from_utf8_lossy(&frame[LENGTH_PREFIX..]).into_owned();
                    if ws.send(Ws::Text(text.into())).is_err() {
                        break 'conn;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => break 'conn,
            }
        }
        let decoded = match ws.read() {
            Ok(Ws::Text(t)) => decode_body(t.as_bytes()),
            Ok(Ws::Binary(b)) => decode(&b),
            Ok(Ws::Close(_)) => break,
            Ok(_) => continue,
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                continue
            }
            Err(_) => break,
        };
        let msg = match decoded {
            Ok(envelope) => Inbound::Message { connection, envelope },
            Err(e) => Inbound::Invalid { connection, error: e.to_string() },
        };
        if inbound.send(msg).is_err() {
            break;
        }
    }
    hub.unsubscribe(connection);
    let _ = inbound.send(Inbound::Disconnected { connection });
}
