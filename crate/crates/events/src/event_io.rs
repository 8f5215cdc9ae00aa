//! Event streams, frame timelines and box annotations on disk.
//!
//! `EVT1` layout (little-endian): magic `EVT1`, `u16` width, `u16` height, `u64` record count,
//! then `count` 16-byte records of `u64` timestamp (µs), `u16` x, `u16` y, `u8` polarity
//! (1 = positive, 0 = negative) and three zero bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;
/// Number of class ids the annotation schema allows (`0..NUM_CLASSES`).
pub const NUM_CLASSES: u8 = 8;

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("bad magic, expected EVT1")]
    BadMagic,
    #[error("truncated file at record {0}")]
    TruncatedFile(u64),
    #[error("{0} trailing bytes after the last record")]
    TrailingData(usize),
    #[error("timestamp decreases at record {0}")]
    NonMonotonicTimestamp(u64),
    #[error("event out of bounds at record {0}")]
    OutOfBoundsEvent(u64),
    #[error("malformed record {0}: {1}")]
    InvalidRecord(u64, &'static str),
    #[error("parse error on line {0}: {1}")]
    ParseError(usize, String),
    #[error("invalid box on line {0}: {1}")]
    InvalidBox(usize, String),
    #[error("invalid frame record on line {0}: {1}")]
    InvalidFrame(usize, String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EventIoError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EventIoError + '_ {
    move |source| EventIoError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn to_byte(self) -> u8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => 0,
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds since sequence start.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Time-ordered, in-bounds events of one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        validate(width, height, &events)?;
        Ok(Self { width, height, events })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self { width, height, events: Vec::new() }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t_start <= t < t_end`, found by two binary searches.
    pub fn slice_window(&self, t_start: u64, t_end: u64) -> &[Event] {
        if t_end <= t_start {
            return &[];
        }
        let lo = self.events.partition_point(|e| e.t < t_start);
        let hi = self.events.partition_point(|e| e.t < t_end);
        &self.events[lo..hi]
    }
}

fn validate(width: u16, height: u16, events: &[Event]) -> Result<()> {
    let mut prev = 0u64;
    for (i, e) in events.iter().enumerate() {
        if e.t < prev {
            return Err(EventIoError::NonMonotonicTimestamp(i as u64));
        }
        if e.x >= width || e.y >= height {
            return Err(EventIoError::OutOfBoundsEvent(i as u64));
        }
        prev = e.t;
    }
    Ok(())
}

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(EVT_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&[e.polarity.to_byte(), 0, 0, 0]);
    }
    out
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 4 || &bytes[..4] != EVT_MAGIC {
        return Err(EventIoError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(EventIoError::TruncatedFile(0));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    let available = (body.len() / RECORD_LEN) as u64;
    if available < count {
        return Err(EventIoError::TruncatedFile(available));
    }
    let expected = count as usize * RECORD_LEN;
    if body.len() > expected {
        return Err(EventIoError::TrailingData(body.len() - expected));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev = 0u64;
    for (i, r) in body.chunks_exact(RECORD_LEN).enumerate() {
        let i = i as u64;
        let t = u64::from_le_bytes(r[..8].try_into().expect("8 bytes"));
        let x = u16::from_le_bytes([r[8], r[9]]);
        let y = u16::from_le_bytes([r[10], r[11]]);
        let polarity = match r[12] {
            1 => Polarity::Positive,
            0 => Polarity::Negative,
            _ => return Err(EventIoError::InvalidRecord(i, "polarity byte must be 0 or 1")),
        };
        if r[13..16] != [0, 0, 0] {
            return Err(EventIoError::InvalidRecord(i, "nonzero padding"));
        }
        if t < prev {
            return Err(EventIoError::NonMonotonicTimestamp(i));
        }
        if x >= width || y >= height {
            return Err(EventIoError::OutOfBoundsEvent(i));
        }
        prev = t;
        events.push(Event { t, x, y, polarity });
    }
    Ok(EventStream { width, height, events })
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    decode_events(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_events(stream: &EventStream, path: &Path) -> Result<()> {
    fs::write(path, encode_events(stream)).map_err(io_err(path))
}

/// One RGB frame and its exposure interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub t_exp_start: u64,
    pub t_exp_end: u64,
    pub image_path: String,
}

impl FrameRecord {
    pub fn exposure(&self) -> u64 {
        self.t_exp_end - self.t_exp_start
    }
}

pub const TIMELINE_HEADER: &str = "frame_id,t_exp_start_us,t_exp_end_us,image_path";
pub const ANNOTATION_HEADER: &str = "frame_id,class_id,x1,y1,x2,y2";

fn data_lines<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, &'a str)> + 'a> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((n, h)) => return Err(EventIoError::ParseError(n, format!("expected header `{header}`, got `{h}`"))),
        None => return Err(EventIoError::ParseError(1, format!("missing header `{header}`"))),
    }
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()))
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: Option<&str>) -> Result<T> {
    let s = s.ok_or_else(|| EventIoError::ParseError(line, format!("missing {name}")))?;
    s.trim().parse().map_err(|_| EventIoError::ParseError(line, format!("bad {name} `{s}`")))
}

pub fn parse_timeline(text: &str) -> Result<Vec<FrameRecord>> {
    let mut out: Vec<FrameRecord> = Vec::new();
    for (n, line) in data_lines(text, TIMELINE_HEADER)? {
        let mut parts = line.splitn(4, ',');
        let frame_id = field(n, "frame_id", parts.next())?;
        let t_exp_start: u64 = field(n, "t_exp_start_us", parts.next())?;
        let t_exp_end: u64 = field(n, "t_exp_end_us", parts.next())?;
        let image_path = parts
            .next()
            .map(|s| s.trim().to_string())
            .ok_or_else(|| EventIoError::ParseError(n, "missing image_path".into()))?;
        if t_exp_start >= t_exp_end {
            return Err(EventIoError::InvalidFrame(n, "exposure start must precede end".into()));
        }
        if out.last().is_some_and(|p| p.t_exp_end >= t_exp_end) {
            return Err(EventIoError::InvalidFrame(n, "frames must be strictly ordered by exposure end".into()));
        }
        out.push(FrameRecord { frame_id, t_exp_start, t_exp_end, image_path });
    }
    Ok(out)
}

pub fn format_timeline(frames: &[FrameRecord]) -> String {
    let mut s = format!("{TIMELINE_HEADER}\n");
    for f in frames {
        s.push_str(&format!("{},{},{},{}\n", f.frame_id, f.t_exp_start, f.t_exp_end, f.image_path));
    }
    s
}

pub fn read_timeline(path: &Path) -> Result<Vec<FrameRecord>> {
    parse_timeline(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_timeline(frames: &[FrameRecord], path: &Path) -> Result<()> {
    fs::write(path, format_timeline(frames)).map_err(io_err(path))
}

/// Axis-aligned box in pixel coordinates, `x2 > x1` and `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, width: f32, height: f32) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn translate(&self, dx: f32, dy: f32) -> Self {
        Self { x1: self.x1 + dx, y1: self.y1 + dy, x2: self.x2 + dx, y2: self.y2 + dy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationBox {
    pub frame_id: u64,
    pub class_id: u8,
    pub bbox: BBox,
}

pub type Annotations = BTreeMap<u64, Vec<AnnotationBox>>;

pub fn parse_annotations(text: &str) -> Result<Annotations> {
    let mut out = Annotations::new();
    for (n, line) in data_lines(text, ANNOTATION_HEADER)? {
        let mut parts = line.split(',');
        let frame_id = field(n, "frame_id", parts.next())?;
        let class_id: u32 = field(n, "class_id", parts.next())?;
        let x1 = field(n, "x1", parts.next())?;
        let y1 = field(n, "y1", parts.next())?;
        let x2 = field(n, "x2", parts.next())?;
        let y2 = field(n, "y2", parts.next())?;
        if parts.next().is_some() {
            return Err(EventIoError::ParseError(n, "too many fields".into()));
        }
        if class_id >= NUM_CLASSES as u32 {
            return Err(EventIoError::InvalidBox(n, format!("class {class_id} outside 0..{NUM_CLASSES}")));
        }
        let bbox = BBox::new(x1, y1, x2, y2);
        if !bbox.is_valid() {
            return Err(EventIoError::InvalidBox(n, "requires x2 > x1 and y2 > y1".into()));
        }
        out.entry(frame_id).or_default().push(AnnotationBox { frame_id, class_id: class_id as u8, bbox });
    }
    Ok(out)
}

pub fn format_annotations(ann: &Annotations) -> String {
    let mut s = format!("{ANNOTATION_HEADER}\n");
    for boxes in ann.values() {
        for a in boxes {
            let b = a.bbox;
            s.push_str(&format!("{},{},{},{},{},{}\n", a.frame_id, a.class_id, b.x1, b.y1, b.x2, b.y2));
        }
    }
    s
}

pub fn read_annotations(path: &Path) -> Result<Annotations> {
    parse_annotations(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_annotations(ann: &Annotations, path: &Path) -> Result<()> {
    fs::write(path, format_annotations(ann)).map_err(io_err(path))
}
