//! Length-prefixed binary framing.
//!
//! ```text
//! "SPKT" | version u8 | type u8 | length u32 | payload[length]
//! ```
//!
//! All integers are little-endian. Payloads:
//!
//! - HELLO: `channels u16, height u16, width u16`
//! - FRAME: `window u32, encoding u8, channels u16, height u16, width u16`, then
//!   either `count u32` and `count` triples `(c, y, x)` of u16 (encoding 0), or a
//!   raster-order bitmap packed LSB first (encoding 1)
//! - RESULT: `window u32, layers u16, count u32 * layers, latency f64, maps u8`;
//!   when `maps` is 1, each layer follows as `bits u32` plus its packed bitmap
//! - RESET, END: empty
//! - ERROR: `code u16` then a UTF-8 message

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::events::{SpikeCoord, SpikeList};
use crate::model::Shape;

pub const MAGIC: [u8; 4] = *b"SPKT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Largest accepted payload.
pub const MAX_PAYLOAD: u32 = 64 << 20;

pub const TYPE_HELLO: u8 = 1;
pub const TYPE_FRAME: u8 = 2;
pub const TYPE_RESULT: u8 = 3;
pub const TYPE_RESET: u8 = 4;
pub const TYPE_END: u8 = 5;
pub const TYPE_ERROR: u8 = 6;

pub const ENCODING_SPARSE: u8 = 0;
pub const ENCODING_BITMAP: u8 = 1;

/// Error codes carried by ERROR messages.
pub mod codes {
    pub const PROTOCOL: u16 = 1;
    pub const VERSION: u16 = 2;
    pub const UNKNOWN_TYPE: u16 = 3;
    pub const GEOMETRY: u16 = 4;
    pub const MALFORMED: u16 = 5;
    pub const NO_HELLO: u16 = 6;
    pub const ENGINE: u16 = 7;
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("malformed {kind} payload: {message}")]
    Malformed { kind: &'static str, message: String },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A message as it arrives, before the payload is interpreted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    pub version: u8,
    pub kind: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePayload {
    pub window: u32,
    pub shape: Shape,
    /// Raster-ordered active inputs.
    pub spikes: Vec<SpikeCoord>,
}

impl FramePayload {
    pub fn from_spikes(window: u32, shape: Shape, list: &SpikeList) -> Self {
        FramePayload {
            window,
            shape,
            spikes: list.entries.clone(),
        }
    }

    /// Sparse below 50 % density, bitmap otherwise.
    pub fn preferred_encoding(&self) -> u8 {
        if self.spikes.len() * 2 < self.shape.len() {
            ENCODING_SPARSE
        } else {
            ENCODING_BITMAP
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultPayload {
    pub window: u32,
    /// Spike counts of each extraction layer.
    pub counts: Vec<u32>,
    /// Estimated pipeline latency of this window in seconds.
    pub latency_s: f64,
    /// Packed output maps `(bits, bytes)` per extraction layer, if requested.
    pub maps: Option<Vec<(u32, Vec<u8>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Shape),
    Frame(FramePayload),
    Result(ResultPayload),
    Reset,
    End,
    Error { code: u16, message: String },
}

/// Packs raster indices into an LSB-first bitmap of `bits` bits.
pub fn pack_bits(bits: usize, set: impl IntoIterator<Item = usize>) -> Vec<u8> {
    let mut out = vec![0u8; bits.div_ceil(8)];
    for i in set {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

fn dim(v: usize, kind: &'static str) -> Result<u16, WireError> {
    u16::try_from(v).map_err(|_| WireError::Malformed {
        kind,
        message: format!("dimension {v} exceeds u16"),
    })
}

fn put_shape(out: &mut Vec<u8>, s: Shape, kind: &'static str) -> Result<(), WireError> {
    for v in [s.channels, s.height, s.width] {
        out.extend(dim(v, kind)?.to_le_bytes());
    }
    Ok(())
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Hello(_) => TYPE_HELLO,
            Message::Frame(_) => TYPE_FRAME,
            Message::Result(_) => TYPE_RESULT,
            Message::Reset => TYPE_RESET,
            Message::End => TYPE_END,
            Message::Error { .. } => TYPE_ERROR,
        }
    }

    pub fn error(code: u16, message: impl Into<String>) -> Self {
        Message::Error {
            code,
            message: message.into(),
        }
    }

    /// FRAME payloads use [`FramePayload::preferred_encoding`].
    pub fn payload(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::new();
        match self {
            Message::Hello(shape) => put_shape(&mut out, *shape, "HELLO")?,
            Message::Frame(f) => {
                let encoding = f.preferred_encoding();
                out.extend(f.window.to_le_bytes());
                out.push(encoding);
                put_shape(&mut out, f.shape, "FRAME")?;
                if encoding == ENCODING_SPARSE {
                    out.extend((f.spikes.len() as u32).to_le_bytes());
                    for s in &f.spikes {
                        for v in [s.c, s.y, s.x] {
                            out.extend(v.to_le_bytes());
                        }
                    }
                } else {
                    let shape = f.shape;
                    out.extend(pack_bits(
                        shape.len(),
                        f.spikes.iter().map(|s| shape.index(s.c as usize, s.y as usize, s.x as usize)),
                    ));
                }
            }
            Message::Result(r) => {
                out.extend(r.window.to_le_bytes());
                out.extend(dim(r.counts.len(), "RESULT")?.to_le_bytes());
                for c in &r.counts {
                    out.extend(c.to_le_bytes());
                }
                out.extend(r.latency_s.to_le_bytes());
                match &r.maps {
                    None => out.push(0),
                    Some(maps) => {
                        out.push(1);
                        for (bits, bytes) in maps {
                            out.extend(bits.to_le_bytes());
                            out.extend(bytes);
                        }
                    }
                }
            }
            Message::Reset | Message::End => {}
            Message::Error { code, message } => {
                out.extend(code.to_le_bytes());
                out.extend(message.as_bytes());
            }
        }
        Ok(out)
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let payload = self.payload()?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend(MAGIC);
        out.push(VERSION);
        out.push(self.kind());
        out.extend((payload.len() as u32).to_le_bytes());
        out.extend(payload);
        Ok(out)
    }

    pub fn decode(raw: &RawMessage) -> Result<Message, WireError> {
        let mut r = Cursor {
            buf: &raw.payload,
            pos: 0,
            kind: "message",
        };
        let msg = match raw.kind {
            TYPE_HELLO => {
                r.kind = "HELLO";
                Message::Hello(r.shape()?)
            }
            TYPE_FRAME => {
                r.kind = "FRAME";
                let window = r.u32()?;
                let encoding = r.u8()?;
                let shape = r.shape()?;
                let spikes = match encoding {
                    ENCODING_SPARSE => {
                        let n = r.u32()? as usize;
                        if n > r.remaining() / 6 {
                            return Err(r.err(format!("{n} spikes do not fit the payload")));
                        }
                        let mut spikes = Vec::with_capacity(n);
                        for _ in 0..n {
                            let (c, y, x) = (r.u16()?, r.u16()?, r.u16()?);
                            if c as usize >= shape.channels || y as usize >= shape.height || x as usize >= shape.width {
                                return Err(r.err(format!("spike ({c}, {y}, {x}) outside {shape}")));
                            }
                            spikes.push(SpikeCoord { c, y, x });
                        }
                        if spikes.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(r.err("spikes not in strict raster order".into()));
                        }
                        spikes
                    }
                    ENCODING_BITMAP => {
                        let bytes = r.take(shape.len().div_ceil(8))?;
                        let mut spikes = Vec::new();
                        for i in 0..shape.len() {
                            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                                let (c, rest) = (i / shape.plane(), i % shape.plane());
                                spikes.push(SpikeCoord::new(c, rest / shape.width, rest % shape.width));
                            }
                        }
                        spikes
                    }
                    e => return Err(r.err(format!("unknown encoding {e}"))),
                };
                Message::Frame(FramePayload { window, shape, spikes })
            }
            TYPE_RESULT => {
                r.kind = "RESULT";
                let window = r.u32()?;
                let n = r.u16()? as usize;
                let counts = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
                let latency_s = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                let maps = match r.u8()? {
                    0 => None,
                    1 => Some(
                        (0..n)
                            .map(|_| {
                                let bits = r.u32()?;
                                Ok((bits, r.take((bits as usize).div_ceil(8))?.to_vec()))
                            })
                            .collect::<Result<Vec<_>, WireError>>()?,
                    ),
                    f => return Err(r.err(format!("bad map flag {f}"))),
                };
                Message::Result(ResultPayload {
                    window,
                    counts,
                    latency_s,
                    maps,
                })
            }
            TYPE_RESET => Message::Reset,
            TYPE_END => Message::End,
            TYPE_ERROR => {
                r.kind = "ERROR";
                let code = r.u16()?;
                let text = r.take(r.remaining())?;
                let message = String::from_utf8(text.to_vec()).map_err(|_| r.err("message is not UTF-8".into()))?;
                Message::Error { code, message }
            }
            other => return Err(WireError::UnknownType(other)),
        };
        if r.remaining() != 0 {
            return Err(r.err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(msg)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: String) -> WireError {
        WireError::Malformed {
            kind: self.kind,
            message,
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(self.err("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn shape(&mut self) -> Result<Shape, WireError> {
        let (c, h, w) = (self.u16()?, self.u16()?, self.u16()?);
        Ok(Shape::new(c as usize, h as usize, w as usize))
    }
}

/// Reads one message; `Ok(None)` on a clean end of stream before a header.
pub fn read_raw(reader: &mut impl Read) -> Result<Option<RawMessage>, WireError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let len = u32::from_le_bytes(header[6..10].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    reader.read_exact(&mut payload)?;
    Ok(Some(RawMessage {
        version: header[4],
        kind: header[5],
        payload,
    }))
}

pub fn write_message(writer: &mut impl Write, msg: &Message) -> Result<(), WireError> {
    writer.write_all(&msg.encode()?)?;
    writer.flush()?;
    Ok(())
}
