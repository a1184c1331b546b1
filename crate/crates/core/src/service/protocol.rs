//! Length-prefixed binary wire protocol.
//!
//! Every message is `len: u32 LE | type: u8 | payload`, where `len` counts
//! the type byte plus the payload. All integers and floats are
//! little-endian.
//!
//! | type | message           | payload                                                  |
//! |------|-------------------|----------------------------------------------------------|
//! | 1    | frame             | `frame_id: u64`, PEG grid bytes                          |
//! | 2    | control           | `op: u8`, op-specific body (below)                       |
//! | 129  | frame response    | see [`FrameResponse`]                                    |
//! | 130  | control response  | `op: u8`, op-specific body                               |
//! | 255  | error             | `frame_id: u64`, `code: u8`, UTF-8 message               |
//!
//! Control ops: 1 = swap reference (`label_len: u16`, label, PEG bytes),
//! 2 = set threshold (`tau: f32`), 3 = query stats (empty).
//!
//! Frame response body: `frame_id: u64`, `latency_ms: f64`, `count: u32`,
//! `fraction: f64`, `max: f32`, `severity: u8`, `threshold: f32`,
//! `map_format: u8` (0 = PEG one-channel float map, 1 = heatmap PNG),
//! `map_len: u32`, map bytes, `mask_len: u32`, grayscale mask PNG bytes.
//!
//! Control response bodies: swap echoes `label_len: u16` + label; set
//! threshold echoes `tau: f32`; stats is `frames: u64`,
//! `mean_latency_ms: f64`, `max_latency_ms: f64`, `threshold: f32`,
//! `label_len: u16` + label.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::mapper::SceneScore;

pub const MSG_FRAME: u8 = 1;
pub const MSG_CONTROL: u8 = 2;
pub const MSG_FRAME_RESPONSE: u8 = 129;
pub const MSG_CONTROL_RESPONSE: u8 = 130;
pub const MSG_ERROR: u8 = 255;

pub const OP_SWAP_REFERENCE: u8 = 1;
pub const OP_SET_THRESHOLD: u8 = 2;
pub const OP_QUERY_STATS: u8 = 3;

/// Largest accepted message body (type byte plus payload).
pub const MAX_MESSAGE_LEN: u32 = 256 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("message truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unknown control op {0}")]
    UnknownOp(u8),
    #[error("message length {0} exceeds limit")]
    TooLong(u32),
    #[error("zero-length message")]
    Empty,
    #[error("invalid utf-8 in {0}")]
    Utf8(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    BadFrame = 2,
    Rejected = 3,
    OutOfOrder = 4,
}

impl ErrorCode {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => ErrorCode::Malformed,
            2 => ErrorCode::BadFrame,
            3 => ErrorCode::Rejected,
            4 => ErrorCode::OutOfOrder,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapFormat {
    #[default]
    Float,
    Png,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlCommand {
    SwapReference { label: String, payload: Vec<u8> },
    SetThreshold(f32),
    QueryStats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Frame { frame_id: u64, payload: Vec<u8> },
    Control(ControlCommand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResponse {
    pub frame_id: u64,
    pub latency_ms: f64,
    pub scene: SceneScore,
    pub severity: u8,
    pub threshold: f32,
    pub map_format: MapFormat,
    pub map: Vec<u8>,
    pub mask_png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceStats {
    pub frames: u64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    pub threshold: f32,
    pub reference_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlResponse {
    ReferenceSwapped { label: String },
    ThresholdSet(f32),
    Stats(ServiceStats),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorResponse {
    pub frame_id: u64,
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Frame(FrameResponse),
    Control(ControlResponse),
    Error(ErrorResponse),
}

/// Reads one message. Returns `Ok(None)` on a clean end of stream before a
/// length prefix. The body is read incrementally, so a large declared
/// length does not allocate up front.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<(u8, Vec<u8>)>, ProtocolError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated("length prefix")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len == 0 {
        return Err(ProtocolError::Empty);
    }
    if len > MAX_MESSAGE_LEN {
        return Err(ProtocolError::TooLong(len));
    }
    let mut body = Vec::new();
    reader.take(len as u64).read_to_end(&mut body)?;
    if body.len() < len as usize {
        return Err(ProtocolError::Truncated("message body"));
    }
    let payload = body.split_off(1);
    Ok(Some((body[0], payload)))
}

pub fn write_message<W: Write>(writer: &mut W, kind: u8, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len() + 1)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "message too large"))?;
    let mut buf = Vec::with_capacity(payload.len() + 5);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.push(kind);
    buf.extend_from_slice(payload);
    writer.write_all(&buf)?;
    writer.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() < n {
            return Err(ProtocolError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ProtocolError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, ProtocolError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string16(&mut self, what: &'static str) -> Result<String, ProtocolError> {
        let n = self.u16(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ProtocolError::Utf8(what))
    }

    fn bytes32(&mut self, what: &'static str) -> Result<Vec<u8>, ProtocolError> {
        let n = self.u32(what)? as usize;
        Ok(self.take(n, what)?.to_vec())
    }

    fn rest(self) -> &'a [u8] {
        self.buf
    }
}

fn put_string16(out: &mut Vec<u8>, s: &str) {
    // labels longer than u16::MAX bytes are cut at a char boundary
    let mut end = s.len().min(u16::MAX as usize);
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    out.extend_from_slice(&(end as u16).to_le_bytes());
    out.extend_from_slice(&s.as_bytes()[..end]);
}

impl Request {
    pub fn encode(&self) -> (u8, Vec<u8>) {
        match self {
            Request::Frame { frame_id, payload } => {
                let mut out = Vec::with_capacity(8 + payload.len());
                out.extend_from_slice(&frame_id.to_le_bytes());
                out.extend_from_slice(payload);
                (MSG_FRAME, out)
            }
            Request::Control(cmd) => {
                let mut out = Vec::new();
                match cmd {
                    ControlCommand::SwapReference { label, payload } => {
                        out.push(OP_SWAP_REFERENCE);
                        put_string16(&mut out, label);
                        out.extend_from_slice(payload);
                    }
                    ControlCommand::SetThreshold(tau) => {
                        out.push(OP_SET_THRESHOLD);
                        out.extend_from_slice(&tau.to_le_bytes());
                    }
                    ControlCommand::QueryStats => out.push(OP_QUERY_STATS),
                }
                (MSG_CONTROL, out)
            }
        }
    }

    pub fn decode(kind: u8, payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor { buf: payload };
        match kind {
            MSG_FRAME => {
                let frame_id = c.u64("frame id")?;
                Ok(Request::Frame {
                    frame_id,
                    payload: c.rest().to_vec(),
                })
            }
            MSG_CONTROL => {
                let cmd = match c.u8("control op")? {
                    OP_SWAP_REFERENCE => {
                        let label = c.string16("reference label")?;
                        ControlCommand::SwapReference {
                            label,
                            payload: c.rest().to_vec(),
                        }
                    }
                    OP_SET_THRESHOLD => ControlCommand::SetThreshold(c.f32("threshold")?),
                    OP_QUERY_STATS => ControlCommand::QueryStats,
                    op => return Err(ProtocolError::UnknownOp(op)),
                };
                Ok(Request::Control(cmd))
            }
            other => Err(ProtocolError::UnknownType(other)),
        }
    }
}

impl Response {
    pub fn encode(&self) -> (u8, Vec<u8>) {
        let mut out = Vec::new();
        match self {
            Response::Frame(r) => {
                out.extend_from_slice(&r.frame_id.to_le_bytes());
                out.extend_from_slice(&r.latency_ms.to_le_bytes());
                out.extend_from_slice(&(r.scene.patch_count_above as u32).to_le_bytes());
                out.extend_from_slice(&r.scene.fraction_above.to_le_bytes());
                out.extend_from_slice(&r.scene.max_patch_score.to_le_bytes());
                out.push(r.severity);
                out.extend_from_slice(&r.threshold.to_le_bytes());
                out.push(match r.map_format {
                    MapFormat::Float => 0,
                    MapFormat::Png => 1,
                });
                out.extend_from_slice(&(r.map.len() as u32).to_le_bytes());
                out.extend_from_slice(&r.map);
                out.extend_from_slice(&(r.mask_png.len() as u32).to_le_bytes());
                out.extend_from_slice(&r.mask_png);
                (MSG_FRAME_RESPONSE, out)
            }
            Response::Control(r) => {
                match r {
                    ControlResponse::ReferenceSwapped { label } => {
                        out.push(OP_SWAP_REFERENCE);
                        put_string16(&mut out, label);
                    }
                    ControlResponse::ThresholdSet(tau) => {
                        out.push(OP_SET_THRESHOLD);
                        out.extend_from_slice(&tau.to_le_bytes());
                    }
                    ControlResponse::Stats(s) => {
                        out.push(OP_QUERY_STATS);
                        out.extend_from_slice(&s.frames.to_le_bytes());
                        out.extend_from_slice(&s.mean_latency_ms.to_le_bytes());
                        out.extend_from_slice(&s.max_latency_ms.to_le_bytes());
                        out.extend_from_slice(&s.threshold.to_le_bytes());
                        put_string16(&mut out, &s.reference_label);
                    }
                }
                (MSG_CONTROL_RESPONSE, out)
            }
            Response::Error(e) => {
                out.extend_from_slice(&e.frame_id.to_le_bytes());
                out.push(e.code as u8);
                out.extend_from_slice(e.message.as_bytes());
                (MSG_ERROR, out)
            }
        }
    }

    pub fn decode(kind: u8, payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor { buf: payload };
        match kind {
            MSG_FRAME_RESPONSE => {
                let frame_id = c.u64("frame id")?;
                let latency_ms = c.f64("latency")?;
                let count = c.u32("count")? as usize;
                let fraction = c.f64("fraction")?;
                let max = c.f32("max")?;
                let severity = c.u8("severity")?;
                let threshold = c.f32("threshold")?;
                let map_format = match c.u8("map format")? {
                    0 => MapFormat::Float,
                    1 => MapFormat::Png,
                    _ => return Err(ProtocolError::Truncated("map format")),
                };
                let map = c.bytes32("map")?;
                let mask_png = c.bytes32("mask")?;
                Ok(Response::Frame(FrameResponse {
                    frame_id,
                    latency_ms,
                    scene: SceneScore {
                        patch_count_above: count,
                        fraction_above: fraction,
                        max_patch_score: max,
                    },
                    severity,
                    threshold,
                    map_format,
                    map,
                    mask_png,
                }))
            }
            MSG_CONTROL_RESPONSE => {
                let r = match c.u8("control op")? {
                    OP_SWAP_REFERENCE => ControlResponse::ReferenceSwapped {
                        label: c.string16("label")?,
                    },
                    OP_SET_THRESHOLD => ControlResponse::ThresholdSet(c.f32("threshold")?),
                    OP_QUERY_STATS => ControlResponse::Stats(ServiceStats {
                        frames: c.u64("frames")?,
                        mean_latency_ms: c.f64("mean latency")?,
                        max_latency_ms: c.f64("max latency")?,
                        threshold: c.f32("threshold")?,
                        reference_label: c.string16("label")?,
                    }),
                    op => return Err(ProtocolError::UnknownOp(op)),
                };
                Ok(Response::Control(r))
            }
            MSG_ERROR => {
                let frame_id = c.u64("frame id")?;
                let code = c.u8("error code")?;
                let code = ErrorCode::from_u8(code).unwrap_or(ErrorCode::Malformed);
                let message = String::from_utf8_lossy(c.rest()).into_owned();
                Ok(Response::Error(ErrorResponse {
                    frame_id,
                    code,
                    message,
                }))
            }
            other => Err(ProtocolError::UnknownType(other)),
        }
    }
}
