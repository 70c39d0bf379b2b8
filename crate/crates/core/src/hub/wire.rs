//! LTNT framing for latent records.
//!
//! ```text
//! "LTNT" | version u8 | flags u8 | body_len u32 | body | crc32 u32
//! crc32 covers every byte before it, header included.
//! body = device u32 | record u64 | label u16 | ndim u8 | dims u32*ndim | dtype u8 | f32*
//! ```
//! Every integer and float is little-endian.

use thiserror::Error;

use crate::edge::{LatentRecord, MAX_DIMS};

pub const MAGIC: [u8; 4] = *b"LTNT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
pub const DTYPE_F32: u8 = 0;
/// Flag bit marking a record as belonging to the test split.
pub const FLAG_TEST_SPLIT: u8 = 0x01;
/// Streams refuse bodies above this size instead of buffering without bound.
pub const DEFAULT_MAX_BODY: usize = 64 << 20;

const FIXED_BODY: usize = 4 + 8 + 2 + 1 + 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: header says {expected:#010x}, body hashes to {actual:#010x}")]
    BadCrc { expected: u32, actual: u32 },
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("shape/payload mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame body of {0} bytes exceeds the stream limit")]
    FrameTooLarge(usize),
    #[error("record body of {0} bytes does not fit a u32 length")]
    Oversize(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub record: LatentRecord,
    pub flags: u8,
}

fn body_len(record: &LatentRecord) -> usize {
    FIXED_BODY + 4 * record.shape.len() + 4 * record.payload.len()
}

/// Frame a record with no flags set.
pub fn encode_record(record: &LatentRecord) -> Result<Vec<u8>, WireError> {
    encode_frame(record, 0)
}

pub fn encode_frame(record: &LatentRecord, flags: u8) -> Result<Vec<u8>, WireError> {
    record.validate().map_err(|e| WireError::ShapeMismatch(e.to_string()))?;
    let len = body_len(record);
    let len32 = u32::try_from(len).map_err(|_| WireError::Oversize(len))?;
    let mut out = Vec::with_capacity(HEADER_LEN + len + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(flags);
    out.extend_from_slice(&len32.to_le_bytes());
    out.extend_from_slice(&record.device_id.to_le_bytes());
    out.extend_from_slice(&record.record_id.to_le_bytes());
    out.extend_from_slice(&record.label.to_le_bytes());
    out.push(record.shape.len() as u8);
    for d in &record.shape {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(DTYPE_F32);
    for v in &record.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        if self.0.len() < N {
            return Err(WireError::ShapeMismatch("body ends inside a fixed field".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("split length"))
    }
}

/// Parse a CRC-checked body.
fn parse_body(body: &[u8]) -> Result<LatentRecord, WireError> {
    let mut r = Reader(body);
    let device_id = u32::from_le_bytes(r.take()?);
    let record_id = u64::from_le_bytes(r.take()?);
    let label = u16::from_le_bytes(r.take()?);
    let [ndim] = r.take()?;
    let ndim = ndim as usize;
    if ndim == 0 || ndim > MAX_DIMS {
        return Err(WireError::ShapeMismatch(format!("ndim {ndim} outside 1..={MAX_DIMS}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u32::from_le_bytes(r.take()?));
    }
    let [dtype] = r.take()?;
    if dtype != DTYPE_F32 {
        return Err(WireError::ShapeMismatch(format!("unsupported dtype {dtype}")));
    }
    let expected: u64 = shape.iter().map(|&d| d as u64).product();
    let rest = r.0;
    if shape.contains(&0) || rest.len() % 4 != 0 || (rest.len() / 4) as u64 != expected {
        return Err(WireError::ShapeMismatch(format!(
            "shape {shape:?} needs {expected} floats, body carries {} bytes",
            rest.len()
        )));
    }
    let payload = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk"))).collect();
    Ok(LatentRecord { device_id, record_id, label, shape, payload })
}

/// Decode one frame from the start of `bytes`, returning it and the bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
    decode_frame_limited(bytes, usize::MAX)
}

fn decode_frame_limited(bytes: &[u8], max_body: usize) -> Result<(Frame, usize), WireError> {
    let truncated = |needed| WireError::Truncated { needed, available: bytes.len() };
    let prefix = bytes.len().min(MAGIC.len());
    if bytes[..prefix] != MAGIC[..prefix] {
        return Err(WireError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    if bytes[4] != VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let flags = bytes[5];
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("len field")) as usize;
    if len > max_body {
        return Err(WireError::FrameTooLarge(len));
    }
    let total = HEADER_LEN + len + TRAILER_LEN;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + len];
    let expected = u32::from_le_bytes(bytes[HEADER_LEN + len..total].try_into().expect("crc field"));
    let actual = crc32fast::hash(&bytes[..HEADER_LEN + len]);
    if expected != actual {
        return Err(WireError::BadCrc { expected, actual });
    }
    Ok((Frame { record: parse_body(body)?, flags }, total))
}

/// Decode exactly one record; trailing bytes are ignored.
pub fn decode_record(bytes: &[u8]) -> Result<LatentRecord, WireError> {
    decode_frame(bytes).map(|(frame, _)| frame.record)
}

/// Decode back-to-back frames, stopping at the first error.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<Frame>, WireError> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        let (frame, used) = decode_frame(bytes)?;
        frames.push(frame);
        bytes = &bytes[used..];
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanEvent {
    Frame(Frame),
    Rejected(WireError),
}

/// Incremental frame extractor for byte streams.
///
/// Each corrupt frame or run of garbage yields exactly one `Rejected` event; the
/// scanner then skips forward to the next occurrence of the magic.
#[derive(Debug)]
pub struct FrameScanner {
    buf: Vec<u8>,
    pos: usize,
    max_body: usize,
    /// Set while skipping bytes already reported.
    skipping: bool,
}

impl Default for FrameScanner {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_BODY)
    }
}

impl FrameScanner {
    pub fn new(max_body: usize) -> Self {
        Self { buf: Vec::new(), pos: 0, max_body, skipping: false }
    }

    pub fn feed(&mut self, data: &[u8]) {
        if self.pos > 0 && self.pos * 2 >= self.buf.len() {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(data);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn reject(&mut self, skip: usize, err: WireError) -> Option<ScanEvent> {
        self.pos += skip;
        let first = !self.skipping;
        self.skipping = true;
        first.then_some(ScanEvent::Rejected(err))
    }

    /// Next complete event, or `None` if more input is required.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<ScanEvent> {
        loop {
            let avail = &self.buf[self.pos..];
            if avail.is_empty() {
                return None;
            }
            if !avail.starts_with(&MAGIC) {
                let found = avail.windows(MAGIC.len()).position(|w| w == MAGIC);
                // Keep a tail that might be the start of a split magic.
                let skip = found.unwrap_or_else(|| {
                    let keep = (1..MAGIC.len().min(avail.len() + 1))
                        .rev()
                        .find(|&k| avail.len() >= k && avail[avail.len() - k..] == MAGIC[..k])
                        .unwrap_or(0);
                    avail.len() - keep
                });
                if skip == 0 {
                    return None;
                }
                if let Some(event) = self.reject(skip, WireError::BadMagic) {
                    return Some(event);
                }
                continue;
            }
            match decode_frame_limited(avail, self.max_body) {
                Ok((frame, used)) => {
                    self.pos += used;
                    self.skipping = false;
                    return Some(ScanEvent::Frame(frame));
                }
                Err(WireError::Truncated { .. }) => return None,
                Err(err @ WireError::ShapeMismatch(_)) => {
                    // Framing was intact, so the whole frame can be dropped.
                    let used = HEADER_LEN
                        + u32::from_le_bytes(avail[6..10].try_into().expect("len field")) as usize
                        + TRAILER_LEN;
                    self.pos += used;
                    self.skipping = false;
                    return Some(ScanEvent::Rejected(err));
                }
                Err(err) => {
                    // Header or CRC damage: the length can't be trusted, rescan from the next byte.
                    self.skipping = false;
                    let event = self.reject(1, err);
                    if event.is_some() {
                        return event;
                    }
                }
            }
        }
    }

    /// Flush at end of stream: leftover bytes become one final rejection.
    pub fn finish(&mut self) -> Option<ScanEvent> {
        let avail = &self.buf[self.pos..];
        if avail.is_empty() {
            return None;
        }
        let err = if MAGIC.starts_with(&avail[..avail.len().min(MAGIC.len())]) {
            WireError::Truncated { needed: HEADER_LEN.max(avail.len() + 1), available: avail.len() }
        } else {
            WireError::BadMagic
        };
        let skip = avail.len();
        let was_skipping = self.skipping;
        self.pos += skip;
        self.skipping = false;
        (!was_skipping || matches!(err, WireError::Truncated { .. })).then_some(ScanEvent::Rejected(err))
    }
}
