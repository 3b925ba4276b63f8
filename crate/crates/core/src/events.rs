//! Event-camera streams, temporal windows and event frames.
//!
//! Streams come either as CSV (`t,x,y,p` per line, optional header) or as
//! packed little-endian records `t: u64 (µs), x: u16, y: u16, p: u8`.
//! Frames have two channels, negative polarity first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::Shape;

pub const NEGATIVE_CHANNEL: usize = 0;
pub const POSITIVE_CHANNEL: usize = 1;

/// Size of one packed binary record.
pub const BIN_RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventRecord {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// 0 = negative, 1 = positive.
    pub p: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub width: u16,
    pub height: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamFormat {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumulationMode {
    #[default]
    Binary,
    Sum,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("record {record}: malformed: {message}")]
    Malformed { record: usize, message: String },
    #[error("record {record}: event ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        record: usize,
        x: u64,
        y: u64,
        width: u16,
        height: u16,
    },
    #[error("binary stream length {0} is not a multiple of {BIN_RECORD_LEN}")]
    PartialRecord(usize),
    #[error("frame value {value} at index {index} is not binary")]
    NotBinary { index: usize, value: u16 },
    #[error("spike ({c}, {y}, {x}) outside {shape}")]
    SpikeOutOfBounds { c: u16, y: u16, x: u16, shape: Shape },
}

fn check_bounds(record: usize, x: u64, y: u64, geometry: Geometry) -> Result<(u16, u16), EventError> {
    if x >= geometry.width as u64 || y >= geometry.height as u64 {
        return Err(EventError::OutOfBounds {
            record,
            x,
            y,
            width: geometry.width,
            height: geometry.height,
        });
    }
    Ok((x as u16, y as u16))
}

fn parse_csv(text: &str, geometry: Geometry) -> Result<Vec<EventRecord>, EventError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let record = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
            continue; // header row
        }
        let [t, x, y, p] = fields[..] else {
            return Err(EventError::Malformed {
                record,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        };
        let num = |s: &str, name: &str| {
            s.parse::<u64>().map_err(|_| EventError::Malformed {
                record,
                message: format!("{name} `{s}` is not a non-negative integer"),
            })
        };
        let (t, x, y, p) = (num(t, "t")?, num(x, "x")?, num(y, "y")?, num(p, "p")?);
        if p > 1 {
            return Err(EventError::Malformed {
                record,
                message: format!("polarity {p} is not 0 or 1"),
            });
        }
        let (x, y) = check_bounds(record, x, y, geometry)?;
        events.push(EventRecord { t, x, y, p: p as u8 });
    }
    Ok(events)
}

fn parse_bin(bytes: &[u8], geometry: Geometry) -> Result<Vec<EventRecord>, EventError> {
    if !bytes.len().is_multiple_of(BIN_RECORD_LEN) {
        return Err(EventError::PartialRecord(bytes.len()));
    }
    bytes
        .chunks_exact(BIN_RECORD_LEN)
        .enumerate()
        .map(|(i, r)| {
            let t = u64::from_le_bytes(r[0..8].try_into().unwrap());
            let x = u16::from_le_bytes([r[8], r[9]]);
            let y = u16::from_le_bytes([r[10], r[11]]);
            let p = r[12];
            if p > 1 {
                return Err(EventError::Malformed {
                    record: i + 1,
                    message: format!("polarity {p} is not 0 or 1"),
                });
            }
            check_bounds(i + 1, x as u64, y as u64, geometry)?;
            Ok(EventRecord { t, x, y, p })
        })
        .collect()
}

/// Parses a stream and stable-sorts it by timestamp.
pub fn parse_event_stream(bytes: &[u8], format: StreamFormat, geometry: Geometry) -> Result<Vec<EventRecord>, EventError> {
    let mut events = match format {
        StreamFormat::Csv => {
            let text = std::str::from_utf8(bytes).map_err(|e| EventError::Malformed {
                record: 0,
                message: format!("not utf-8: {e}"),
            })?;
            parse_csv(text, geometry)?
        }
        StreamFormat::Bin => parse_bin(bytes, geometry)?,
    };
    if !events.windows(2).all(|w| w[0].t <= w[1].t) {
        events.sort_by_key(|e| e.t);
    }
    Ok(events)
}

pub fn encode_bin(events: &[EventRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * BIN_RECORD_LEN);
    for e in events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
    }
    out
}

pub fn encode_csv(events: &[EventRecord]) -> String {
    let mut out = String::from("t,x,y,p\n");
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    out
}

/// Splits time-sorted events into half-open windows `[k*w, (k+1)*w)` starting
/// at t = 0. Empty windows before the last event are kept.
pub fn window_events(events: &[EventRecord], window_us: u64) -> Vec<&[EventRecord]> {
    let count = events.last().map_or(0, |e| (e.t / window_us) as usize + 1);
    window_events_over(events, window_us, count)
}

/// Like [`window_events`] but always returns exactly `count` windows; events
/// past the last window are dropped.
pub fn window_events_over(events: &[EventRecord], window_us: u64, count: usize) -> Vec<&[EventRecord]> {
    assert!(window_us > 0, "window must be positive");
    let mut groups = Vec::with_capacity(count);
    let mut start = 0;
    for k in 0..count as u64 {
        let end_t = (k + 1).saturating_mul(window_us);
        let len = events[start..].partition_point(|e| e.t < end_t);
        groups.push(&events[start..start + len]);
        start += len;
    }
    groups
}

/// Number of windows covering `duration_us`.
pub fn window_count(duration_us: u64, window_us: u64) -> usize {
    duration_us.div_ceil(window_us) as usize
}

/// Dense activation frame. Event frames have two polarity channels; network
/// inputs of other shapes reuse the same container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `(channel, y, x)` counts or flags.
    pub values: Vec<u16>,
    pub window_index: usize,
}

impl EventFrame {
    pub fn zeros(shape: Shape, window_index: usize) -> Self {
        EventFrame {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            values: vec![0; shape.len()],
            window_index,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u16 {
        self.values[self.shape().index(c, y, x)]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v <= 1)
    }

    /// `min(v, 1)` elementwise.
    pub fn binarized(&self) -> EventFrame {
        EventFrame {
            values: self.values.iter().map(|&v| v.min(1)).collect(),
            ..self.clone()
        }
    }

    pub fn nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Accumulates one window of events into a two-channel frame.
pub fn accumulate_frame(group: &[EventRecord], mode: AccumulationMode, geometry: Geometry, window_index: usize) -> EventFrame {
    let shape = Shape::new(2, geometry.height as usize, geometry.width as usize);
    let mut frame = EventFrame::zeros(shape, window_index);
    for e in group {
        let channel = if e.p == 0 { NEGATIVE_CHANNEL } else { POSITIVE_CHANNEL };
        let v = &mut frame.values[shape.index(channel, e.y as usize, e.x as usize)];
        *v = match mode {
            AccumulationMode::Binary => 1,
            AccumulationMode::Sum => v.saturating_add(1),
        };
    }
    frame
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpikeCoord {
    pub c: u16,
    pub y: u16,
    pub x: u16,
}

impl SpikeCoord {
    pub fn new(c: usize, y: usize, x: usize) -> Self {
        SpikeCoord {
            c: c as u16,
            y: y as u16,
            x: x as u16,
        }
    }
}

/// Sparse binary activations of one timestep, sorted in raster order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpikeList {
    pub timestep: usize,
    pub entries: Vec<SpikeCoord>,
}

impl SpikeList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted and duplicate-free.
    pub fn is_canonical(&self) -> bool {
        self.entries.windows(2).all(|w| w[0] < w[1])
    }

    pub fn densify(&self, shape: Shape) -> Result<EventFrame, EventError> {
        let mut frame = EventFrame::zeros(shape, self.timestep);
        for s in &self.entries {
            let (c, y, x) = (s.c as usize, s.y as usize, s.x as usize);
            if c >= shape.channels || y >= shape.height || x >= shape.width {
                return Err(EventError::SpikeOutOfBounds {
                    c: s.c,
                    y: s.y,
                    x: s.x,
                    shape,
                });
            }
            frame.values[shape.index(c, y, x)] = 1;
        }
        Ok(frame)
    }
}

/// Raster-ordered coordinates of the nonzero entries of a binary frame.
pub fn frame_to_spikelist(frame: &EventFrame) -> Result<SpikeList, EventError> {
    let shape = frame.shape();
    let mut entries = Vec::new();
    for (index, &value) in frame.values.iter().enumerate() {
        match value {
            0 => {}
            1 => {
                let c = index / shape.plane();
                let rem = index % shape.plane();
                entries.push(SpikeCoord::new(c, rem / shape.width, rem % shape.width));
            }
            _ => return Err(EventError::NotBinary { index, value }),
        }
    }
    Ok(SpikeList {
        timestep: frame.window_index,
        entries,
    })
}

/// Seeded random event stream: `rate_hz` events per second spread uniformly
/// over the sensor and over `[0, duration_us)`.
pub fn synthetic_stream(geometry: Geometry, duration_us: u64, rate_hz: f64, seed: u64) -> Vec<EventRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (rate_hz * duration_us as f64 / 1e6).round() as usize;
    let mut events: Vec<EventRecord> = (0..count)
        .map(|_| EventRecord {
            t: rng.gen_range(0..duration_us.max(1)),
            x: rng.gen_range(0..geometry.width),
            y: rng.gen_range(0..geometry.height),
            p: rng.gen_range(0..=1),
        })
        .collect();
    events.sort();
    events
}
