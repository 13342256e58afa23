//! Length-prefixed framing spoken between harness and VP.
//!
//! A frame is `type:u8 | length:u32 LE | payload[length]`.
//!
//! | type | message   | payload                                                    |
//! |------|-----------|------------------------------------------------------------|
//! | 0x01 | CONFIGURE | `text_len:u32`, config text (UTF-8), raw image bytes        |
//! | 0x02 | READY     | empty                                                      |
//! | 0x03 | RUN       | test case bytes                                            |
//! | 0x04 | RESULT    | `exit_kind:u8 crash_reason:u8 exit_value:u32 instr:u64 exec_us:u64 coverage[65536]` |
//! | 0x05 | SHUTDOWN  | empty                                                      |
//! | 0x06 | ERROR     | UTF-8 text                                                 |
//!
//! All integers are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::result::{CrashReason, ExitKind, RunResult};
use crate::coverage::{CoverageMap, MAP_SIZE};
use crate::isa::bus::FaultKind;

pub const MSG_CONFIGURE: u8 = 0x01;
pub const MSG_READY: u8 = 0x02;
pub const MSG_RUN: u8 = 0x03;
pub const MSG_RESULT: u8 = 0x04;
pub const MSG_SHUTDOWN: u8 = 0x05;
pub const MSG_ERROR: u8 = 0x06;

pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 16 << 20;
pub const RESULT_PAYLOAD_LEN: usize = 1 + 1 + 4 + 8 + 8 + MAP_SIZE;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Configure { config: String, image: Vec<u8> },
    Ready,
    Run(Vec<u8>),
    Result(Box<RunResult>),
    Shutdown,
    Error(String),
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Configure { .. } => MSG_CONFIGURE,
            Message::Ready => MSG_READY,
            Message::Run(_) => MSG_RUN,
            Message::Result(_) => MSG_RESULT,
            Message::Shutdown => MSG_SHUTDOWN,
            Message::Error(_) => MSG_ERROR,
        }
    }
}

/// Decoding failures. `offset` is the position of the offending frame's
/// first byte within the decoded buffer.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("incomplete frame at offset {offset}: need {needed} more bytes")]
    Incomplete { offset: usize, needed: usize },
    #[error("unknown message type 0x{msg_type:02x} at offset {offset}")]
    UnknownType { offset: usize, msg_type: u8 },
    #[error("frame at offset {offset} declares {length} payload bytes (max {MAX_PAYLOAD})")]
    TooLong { offset: usize, length: usize },
    #[error("malformed frame at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

impl FrameError {
    pub fn offset(&self) -> usize {
        match self {
            FrameError::Incomplete { offset, .. }
            | FrameError::UnknownType { offset, .. }
            | FrameError::TooLong { offset, .. }
            | FrameError::Malformed { offset, .. } => *offset,
        }
    }

    fn shifted(self, by: usize) -> Self {
        match self {
            FrameError::Incomplete { offset, needed } => FrameError::Incomplete { offset: offset + by, needed },
            FrameError::UnknownType { offset, msg_type } => FrameError::UnknownType { offset: offset + by, msg_type },
            FrameError::TooLong { offset, length } => FrameError::TooLong { offset: offset + by, length },
            FrameError::Malformed { offset, reason } => FrameError::Malformed { offset: offset + by, reason },
        }
    }
}

fn exit_fields(exit: &ExitKind) -> (u8, u8, u32) {
    match *exit {
        ExitKind::Ok => (0, 0, 0),
        ExitKind::Crash(CrashReason::ReturnValueNonzero(v)) => (1, 1, v),
        ExitKind::Crash(CrashReason::ErrorHandlerReached) => (1, 2, 0),
        ExitKind::Crash(CrashReason::HardwareFault(k)) => (1, 3, k.code() as u32),
        ExitKind::Timeout => (2, 0, 0),
        ExitKind::InputExhausted => (3, 0, 0),
    }
}

fn exit_from_fields(kind: u8, reason: u8, value: u32) -> Option<ExitKind> {
    Some(match (kind, reason) {
        (0, 0) if value == 0 => ExitKind::Ok,
        (1, 1) => ExitKind::Crash(CrashReason::ReturnValueNonzero(value)),
        (1, 2) if value == 0 => ExitKind::Crash(CrashReason::ErrorHandlerReached),
        (1, 3) => ExitKind::Crash(CrashReason::HardwareFault(FaultKind::from_code(value)?)),
        (2, 0) if value == 0 => ExitKind::Timeout,
        (3, 0) if value == 0 => ExitKind::InputExhausted,
        _ => return None,
    })
}

/// Encodes the payload only.
fn encode_payload(msg: &Message) -> Vec<u8> {
    match msg {
        Message::Configure { config, image } => {
            let mut p = Vec::with_capacity(4 + config.len() + image.len());
            p.extend_from_slice(&(config.len() as u32).to_le_bytes());
            p.extend_from_slice(config.as_bytes());
            p.extend_from_slice(image);
            p
        }
        Message::Ready | Message::Shutdown => Vec::new(),
        Message::Run(input) => input.clone(),
        Message::Result(r) => {
            assert_eq!(r.coverage.len(), MAP_SIZE, "RESULT carries a full-size coverage map");
            let (kind, reason, value) = exit_fields(&r.exit);
            let mut p = Vec::with_capacity(RESULT_PAYLOAD_LEN);
            p.push(kind);
            p.push(reason);
            p.extend_from_slice(&value.to_le_bytes());
            p.extend_from_slice(&r.instructions.to_le_bytes());
            p.extend_from_slice(&r.exec_us.to_le_bytes());
            p.extend_from_slice(r.coverage.as_bytes());
            p
        }
        Message::Error(text) => text.as_bytes().to_vec(),
    }
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = encode_payload(msg);
    assert!(payload.len() <= MAX_PAYLOAD, "payload exceeds frame limit");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.push(msg.msg_type());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn known_type(t: u8) -> bool {
    (MSG_CONFIGURE..=MSG_ERROR).contains(&t)
}

fn decode_payload(msg_type: u8, p: &[u8]) -> Result<Message, String> {
    let empty = |m: Message| if p.is_empty() { Ok(m) } else { Err(format!("expected empty payload, got {} bytes", p.len())) };
    match msg_type {
        MSG_CONFIGURE => {
            if p.len() < 4 {
                return Err("CONFIGURE payload shorter than its text length field".into());
            }
            let text_len = u32::from_le_bytes(p[..4].try_into().unwrap()) as usize;
            if text_len > p.len() - 4 {
                return Err(format!("CONFIGURE text length {text_len} exceeds payload"));
            }
            let config = std::str::from_utf8(&p[4..4 + text_len]).map_err(|e| format!("CONFIGURE text: {e}"))?;
            Ok(Message::Configure { config: config.to_owned(), image: p[4 + text_len..].to_vec() })
        }
        MSG_READY => empty(Message::Ready),
        MSG_RUN => Ok(Message::Run(p.to_vec())),
        MSG_RESULT => {
            if p.len() != RESULT_PAYLOAD_LEN {
                return Err(format!("RESULT payload is {} bytes, expected {RESULT_PAYLOAD_LEN}", p.len()));
            }
            let value = u32::from_le_bytes(p[2..6].try_into().unwrap());
            let exit = exit_from_fields(p[0], p[1], value)
                .ok_or_else(|| format!("invalid exit fields kind={} reason={} value={value}", p[0], p[1]))?;
            Ok(Message::Result(Box::new(RunResult {
                exit,
                instructions: u64::from_le_bytes(p[6..14].try_into().unwrap()),
                exec_us: u64::from_le_bytes(p[14..22].try_into().unwrap()),
                coverage: CoverageMap::from_bytes(p[22..].to_vec()),
                probe_reads: None,
            })))
        }
        MSG_SHUTDOWN => empty(Message::Shutdown),
        MSG_ERROR => std::str::from_utf8(p).map(|s| Message::Error(s.to_owned())).map_err(|e| format!("ERROR text: {e}")),
        _ => unreachable!(),
    }
}

/// Decodes one frame from the front of `buf`, returning the message and
/// the number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    let Some(&msg_type) = buf.first() else {
        return Err(FrameError::Incomplete { offset: 0, needed: HEADER_LEN });
    };
    if !known_type(msg_type) {
        return Err(FrameError::UnknownType { offset: 0, msg_type });
    }
    if buf.len() < HEADER_LEN {
        return Err(FrameError::Incomplete { offset: 0, needed: HEADER_LEN - buf.len() });
    }
    let length = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as usize;
    if length > MAX_PAYLOAD {
        return Err(FrameError::TooLong { offset: 0, length });
    }
    let total = HEADER_LEN + length;
    if buf.len() < total {
        return Err(FrameError::Incomplete { offset: 0, needed: total - buf.len() });
    }
    let msg = decode_payload(msg_type, &buf[HEADER_LEN..total]).map_err(|reason| FrameError::Malformed { offset: 0, reason })?;
    Ok((msg, total))
}

/// Decodes a whole buffer of back-to-back frames.
pub fn decode_stream(mut buf: &[u8]) -> Result<Vec<Message>, FrameError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while !buf.is_empty() {
        let (msg, used) = decode_frame(buf).map_err(|e| e.shifted(pos))?;
        out.push(msg);
        pos += used;
        buf = &buf[used..];
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Reads one frame from a blocking stream. `Ok(None)` is a clean EOF on a
/// frame boundary; EOF inside a frame is `Incomplete`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Incomplete { offset: 0, needed: HEADER_LEN - got }.into()),
            Ok(n) => {
                got += n;
                if !known_type(header[0]) {
                    return Err(FrameError::UnknownType { offset: 0, msg_type: header[0] }.into());
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let length = u32::from_le_bytes(header[1..5].try_into().unwrap()) as usize;
    if length > MAX_PAYLOAD {
        return Err(FrameError::TooLong { offset: 0, length }.into());
    }
    let mut payload = vec![0u8; length];
    let mut filled = 0;
    while filled < length {
        match r.read(&mut payload[filled..]) {
            Ok(0) => return Err(FrameError::Incomplete { offset: 0, needed: length - filled }.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    decode_payload(header[0], &payload)
        .map(Some)
        .map_err(|reason| FrameError::Malformed { offset: 0, reason }.into())
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}
