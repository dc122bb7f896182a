//! On-disk trace format.
//!
//! ```text
//! KATLAS01                      8-byte magic, no newline
//! Blocks:<n>\n
//! Flags:<addr|noaddr>\n
//! Compression:<none|deflate>\n
//! <payload>                     raw text, or one raw DEFLATE stream of it
//! ```
//!
//! The payload is one key-value line per event (`BasicBlock:5`,
//! `LoadAddress:7f10,4`, `StoreAddress:0,1`) followed by a single
//! `End:<event count>` line. A reader that reaches end of input without the
//! `End` line reports truncation, for both raw and compressed payloads.
//!
//! Lines are gathered in a burst buffer and only handed to the compressor (or
//! the sink) in `burst_bytes` chunks; the final partial chunk goes out at
//! finalize.

use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression as FlateLevel;

use crate::trace::{Address, BlockId, Trace, TraceError, TraceEvent};

pub const MAGIC: &[u8; 8] = b"KATLAS01";
pub const MIN_BURST_BYTES: usize = 4096;
pub const MAX_BURST_BYTES: usize = 131_072;
pub const DEFAULT_BURST_BYTES: usize = 65_536;
pub const DEFAULT_DEFLATE_LEVEL: u32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("burst buffer of {0} bytes is outside 4096..=131072")]
    BurstOutOfRange(usize),
    #[error("deflate level {0} is outside 1..=9")]
    LevelOutOfRange(u32),
    #[error("sink write failed after {durable} durable bytes: {source}")]
    Sink {
        durable: u64,
        #[source]
        source: io::Error,
    },
    #[error("bad magic, not a katlas trace")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("payload line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("truncated trace at input byte {offset}")]
    Truncated { offset: u64 },
    #[error("corrupt compressed payload at input byte {offset}: {source}")]
    Decode {
        offset: u64,
        #[source]
        source: io::Error,
    },
    #[error("trailer counts {expected} events but {found} were decoded")]
    CountMismatch { expected: u64, found: u64 },
    #[error("data after end-of-trace marker at line {line}")]
    TrailingData { line: u64 },
    #[error("decoded trace is structurally invalid: {0}")]
    Structure(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Compression {
    None,
    Deflate,
}

impl Compression {
    pub fn as_str(self) -> &'static str {
        match self {
            Compression::None => "none",
            Compression::Deflate => "deflate",
        }
    }
}

impl std::str::FromStr for Compression {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Compression::None),
            "deflate" => Ok(Compression::Deflate),
            other => Err(format!("unknown compression '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    pub burst_bytes: usize,
    pub compression: Compression,
    pub deflate_level: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            burst_bytes: DEFAULT_BURST_BYTES,
            compression: Compression::Deflate,
            deflate_level: DEFAULT_DEFLATE_LEVEL,
        }
    }
}

impl CodecConfig {
    pub fn new(
        burst_bytes: usize,
        compression: Compression,
        deflate_level: u32,
    ) -> Result<Self, CodecError> {
        let cfg = Self {
            burst_bytes,
            compression,
            deflate_level,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(MIN_BURST_BYTES..=MAX_BURST_BYTES).contains(&self.burst_bytes) {
            return Err(CodecError::BurstOutOfRange(self.burst_bytes));
        }
        if !(1..=9).contains(&self.deflate_level) {
            return Err(CodecError::LevelOutOfRange(self.deflate_level));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub block_count: u32,
    pub addresses: bool,
    pub compression: Compression,
}

impl Header {
    fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(
            format!(
                "Blocks:{}\nFlags:{}\nCompression:{}\n",
                self.block_count,
                if self.addresses { "addr" } else { "noaddr" },
                self.compression.as_str()
            )
            .as_bytes(),
        );
        out
    }
}

/// Appends the key-value line for one event.
pub fn encode_event_into(event: &TraceEvent, out: &mut String) {
    // Writing into a String cannot fail.
    let _ = match event {
        TraceEvent::BlockEnter(b) => writeln!(out, "BasicBlock:{}", b.0),
        TraceEvent::Load(a) => writeln!(out, "LoadAddress:{:x},{}", a.value, a.size),
        TraceEvent::Store(a) => writeln!(out, "StoreAddress:{:x},{}", a.value, a.size),
    };
}

pub fn encode_event(event: &TraceEvent) -> String {
    let mut s = String::with_capacity(24);
    encode_event_into(event, &mut s);
    s
}

/// Parses one payload line (without its newline).
pub fn decode_line(line: &str) -> Result<Line, String> {
    let (key, value) = line
        .split_once(':')
        .ok_or_else(|| format!("missing ':' in {line:?}"))?;
    let parse_addr = |v: &str| -> Result<Address, String> {
        let (hex, size) = v
            .split_once(',')
            .ok_or_else(|| format!("missing ',' in address {v:?}"))?;
        if hex.is_empty() || hex.bytes().any(|c| c.is_ascii_uppercase()) {
            return Err(format!("address {hex:?} is not lowercase hex"));
        }
        let value = u64::from_str_radix(hex, 16).map_err(|e| format!("address {hex:?}: {e}"))?;
        let size: u32 = parse_decimal(size)?;
        if size == 0 {
            return Err("zero-width access".into());
        }
        Ok(Address { value, size })
    };
    match key {
        "BasicBlock" => Ok(Line::Event(TraceEvent::BlockEnter(BlockId(parse_decimal(
            value,
        )?)))),
        "LoadAddress" => Ok(Line::Event(TraceEvent::Load(parse_addr(value)?))),
        "StoreAddress" => Ok(Line::Event(TraceEvent::Store(parse_addr(value)?))),
        "End" => Ok(Line::End(parse_decimal(value)?)),
        other => Err(format!("unknown key {other:?}")),
    }
}

fn parse_decimal<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() || !s.bytes().all(|c| c.is_ascii_digit()) {
        return Err(format!("{s:?} is not a decimal number"));
    }
    s.parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Line {
    Event(TraceEvent),
    End(u64),
}

/// Counts bytes that the inner writer has accepted.
struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

enum Stage<W: Write> {
    Raw(CountingWriter<W>),
    Deflate(DeflateEncoder<CountingWriter<W>>),
}

impl<W: Write> Stage<W> {
    fn durable(&self) -> u64 {
        match self {
            Stage::Raw(w) => w.written,
            Stage::Deflate(e) => e.get_ref().written,
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
        match self {
            Stage::Raw(w) => w.write_all(buf),
            Stage::Deflate(e) => e.write_all(buf),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteStats {
    pub events: u64,
    /// Encoded text bytes of the events, excluding header and trailer.
    pub text_bytes: u64,
    /// Bytes delivered to the sink, header included.
    pub bytes_written: u64,
    /// Burst buffers handed to the compressor or sink.
    pub flushes: u64,
}

/// Streaming encoder; events become durable only when a burst is flushed.
pub struct TraceWriter<W: Write> {
    stage: Stage<W>,
    burst: Vec<u8>,
    burst_bytes: usize,
    addresses: bool,
    line: String,
    stats: WriteStats,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(
        sink: W,
        block_count: u32,
        addresses: bool,
        config: CodecConfig,
    ) -> Result<Self, CodecError> {
        config.validate()?;
        let header = Header {
            block_count,
            addresses,
            compression: config.compression,
        };
        let mut sink = CountingWriter {
            inner: sink,
            written: 0,
        };
        if let Err(source) = sink.write_all(&header.encode()) {
            return Err(CodecError::Sink {
                durable: sink.written,
                source,
            });
        }
        let stage = match config.compression {
            Compression::None => Stage::Raw(sink),
            Compression::Deflate => Stage::Deflate(DeflateEncoder::new(
                sink,
                FlateLevel::new(config.deflate_level),
            )),
        };
        Ok(Self {
            stage,
            burst: Vec::with_capacity(config.burst_bytes),
            burst_bytes: config.burst_bytes,
            addresses,
            line: String::with_capacity(32),
            stats: WriteStats::default(),
        })
    }

    fn sink_err(&self, source: io::Error) -> CodecError {
        CodecError::Sink {
            durable: self.stage.durable(),
            source,
        }
    }

    fn flush_chunk(&mut self, len: usize) -> Result<(), CodecError> {
        if let Err(e) = self.stage.write_all(&self.burst[..len]) {
            return Err(self.sink_err(e));
        }
        self.burst.drain(..len);
        self.stats.flushes += 1;
        Ok(())
    }

    /// Appends one event. A writer opened without address logging drops
    /// loads and stores.
    pub fn push(&mut self, event: &TraceEvent) -> Result<(), CodecError> {
        if !self.addresses && event.is_memory() {
            return Ok(());
        }
        self.line.clear();
        encode_event_into(event, &mut self.line);
        self.burst.extend_from_slice(self.line.as_bytes());
        self.stats.events += 1;
        self.stats.text_bytes += self.line.len() as u64;
        while self.burst.len() >= self.burst_bytes {
            self.flush_chunk(self.burst_bytes)?;
        }
        Ok(())
    }

    /// Flushes the final partial burst, writes the trailer and closes the
    /// compressed stream.
    pub fn finish(mut self) -> Result<(WriteStats, W), CodecError> {
        if !self.burst.is_empty() {
            self.flush_chunk(self.burst.len())?;
        }
        let trailer = format!("End:{}\n", self.stats.events);
        if let Err(e) = self.stage.write_all(trailer.as_bytes()) {
            return Err(self.sink_err(e));
        }
        let mut sink = match self.stage {
            Stage::Raw(w) => w,
            Stage::Deflate(enc) => match enc.finish() {
                Ok(w) => w,
                // The encoder is gone, so the durable count is unknown past
                // the last successful flush.
                Err(source) => {
                    return Err(CodecError::Sink {
                        durable: 0,
                        source,
                    })
                }
            },
        };
        if let Err(source) = sink.flush() {
            return Err(CodecError::Sink {
                durable: sink.written,
                source,
            });
        }
        self.stats.bytes_written = sink.written;
        Ok((self.stats, sink.inner))
    }
}

/// Encodes a whole event stream into `sink`.
pub fn write_trace<'a, W, I>(
    events: I,
    block_count: u32,
    addresses: bool,
    config: CodecConfig,
    sink: W,
) -> Result<WriteStats, CodecError>
where
    W: Write,
    I: IntoIterator<Item = &'a TraceEvent>,
{
    let mut w = TraceWriter::new(sink, block_count, addresses, config)?;
    for ev in events {
        w.push(ev)?;
    }
    Ok(w.finish()?.0)
}

/// Encodes a trace into a fresh byte vector.
pub fn encode_trace(trace: &Trace, config: CodecConfig) -> Result<(Vec<u8>, WriteStats), CodecError> {
    let mut out = Vec::new();
    let stats = write_trace(
        trace.events(),
        trace.block_count(),
        trace.has_addresses(),
        config,
        &mut out,
    )?;
    Ok((out, stats))
}

struct CountingReader<R> {
    inner: R,
    read: u64,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.read += n as u64;
        Ok(n)
    }
}

enum Payload<R: Read> {
    Raw(BufReader<CountingReader<R>>),
    Deflate(BufReader<DeflateDecoder<CountingReader<R>>>),
}

impl<R: Read> Payload<R> {
    fn offset(&self) -> u64 {
        match self {
            Payload::Raw(r) => r.get_ref().read - r.buffer().len() as u64,
            Payload::Deflate(r) => r.get_ref().get_ref().read,
        }
    }

    fn read_line(&mut self, buf: &mut Vec<u8>) -> io::Result<usize> {
        match self {
            Payload::Raw(r) => r.read_until(b'\n', buf),
            Payload::Deflate(r) => r.read_until(b'\n', buf),
        }
    }
}

/// Streaming decoder yielding events in file order.
///
/// Memory use is bounded by the read buffers, independent of trace length.
pub struct TraceReader<R: Read> {
    header: Header,
    payload: Payload<R>,
    line_no: u64,
    decoded: u64,
    buf: Vec<u8>,
    done: bool,
    seen_block: bool,
}

const READ_BUFFER: usize = 64 * 1024;

fn read_header_line<R: Read>(src: &mut R, key: &str) -> Result<String, CodecError> {
    let mut bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match src.read(&mut byte)? {
            0 => return Err(CodecError::BadHeader(format!("missing {key} line"))),
            _ if byte[0] == b'\n' => break,
            _ => bytes.push(byte[0]),
        }
        if bytes.len() > 64 {
            return Err(CodecError::BadHeader(format!("{key} line too long")));
        }
    }
    let text = String::from_utf8(bytes).map_err(|_| CodecError::BadHeader("not UTF-8".into()))?;
    text.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(':'))
        .map(str::to_owned)
        .ok_or_else(|| CodecError::BadHeader(format!("expected {key}, found {text:?}")))
}

impl<R: Read> TraceReader<R> {
    pub fn new(source: R) -> Result<Self, CodecError> {
        let mut src = CountingReader {
            inner: source,
            read: 0,
        };
        let mut magic = [0u8; 8];
        let mut filled = 0;
        while filled < magic.len() {
            match src.read(&mut magic[filled..])? {
                0 => return Err(CodecError::BadMagic),
                n => filled += n,
            }
        }
        if &magic != MAGIC {
            return Err(CodecError::BadMagic);
        }
        let block_count = read_header_line(&mut src, "Blocks")?
            .parse::<u32>()
            .map_err(|e| CodecError::BadHeader(format!("Blocks: {e}")))?;
        let addresses = match read_header_line(&mut src, "Flags")?.as_str() {
            "addr" => true,
            "noaddr" => false,
            other => return Err(CodecError::BadHeader(format!("Flags: {other:?}"))),
        };
        let compression: Compression = read_header_line(&mut src, "Compression")?
            .parse()
            .map_err(CodecError::BadHeader)?;
        let payload = match compression {
            Compression::None => Payload::Raw(BufReader::with_capacity(READ_BUFFER, src)),
            Compression::Deflate => {
                Payload::Deflate(BufReader::with_capacity(READ_BUFFER, DeflateDecoder::new(src)))
            }
        };
        Ok(Self {
            header: Header {
                block_count,
                addresses,
                compression,
            },
            payload,
            line_no: 0,
            decoded: 0,
            buf: Vec::with_capacity(64),
            done: false,
            seen_block: false,
        })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    fn next_event(&mut self) -> Result<Option<TraceEvent>, CodecError> {
        if self.done {
            return Ok(None);
        }
        self.buf.clear();
        let n = match self.payload.read_line(&mut self.buf) {
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Err(CodecError::Truncated {
                    offset: self.payload.offset(),
                })
            }
            Err(source) => {
                return Err(CodecError::Decode {
                    offset: self.payload.offset(),
                    source,
                })
            }
        };
        if n == 0 || self.buf.last() != Some(&b'\n') {
            return Err(CodecError::Truncated {
                offset: self.payload.offset(),
            });
        }
        self.line_no += 1;
        let text = std::str::from_utf8(&self.buf[..n - 1]).map_err(|_| CodecError::Parse {
            line: self.line_no,
            message: "not UTF-8".into(),
        })?;
        match decode_line(text).map_err(|message| CodecError::Parse {
            line: self.line_no,
            message,
        })? {
            Line::Event(ev) => {
                match ev {
                    TraceEvent::BlockEnter(b) => {
                        if b.0 >= self.header.block_count {
                            return Err(CodecError::Parse {
                                line: self.line_no,
                                message: format!(
                                    "block {b} exceeds header count {}",
                                    self.header.block_count
                                ),
                            });
                        }
                        self.seen_block = true;
                    }
                    _ if !self.header.addresses => {
                        return Err(CodecError::Parse {
                            line: self.line_no,
                            message: "memory event in a trace flagged noaddr".into(),
                        })
                    }
                    _ if !self.seen_block => {
                        return Err(TraceError::OrphanMemoryEvent {
                            index: self.decoded as usize,
                        }
                        .into())
                    }
                    _ => {}
                }
                self.decoded += 1;
                Ok(Some(ev))
            }
            Line::End(expected) => {
                if expected != self.decoded {
                    return Err(CodecError::CountMismatch {
                        expected,
                        found: self.decoded,
                    });
                }
                self.buf.clear();
                let extra = match self.payload.read_line(&mut self.buf) {
                    Ok(n) => n,
                    Err(source) => {
                        return Err(CodecError::Decode {
                            offset: self.payload.offset(),
                            source,
                        })
                    }
                };
                if extra != 0 {
                    return Err(CodecError::TrailingData {
                        line: self.line_no + 1,
                    });
                }
                self.done = true;
                Ok(None)
            }
        }
    }

    /// Drains the stream into an in-memory trace.
    pub fn into_trace(self) -> Result<Trace, CodecError> {
        let Header {
            block_count,
            addresses,
            ..
        } = self.header;
        let events = self.collect::<Result<Vec<_>, _>>()?;
        Ok(Trace::new(events, block_count)?.with_address_log(addresses))
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_event() {
            Ok(Some(ev)) => Some(Ok(ev)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_trace<R: Read>(source: R) -> Result<TraceReader<R>, CodecError> {
    TraceReader::new(source)
}

pub fn decode_trace(bytes: &[u8]) -> Result<Trace, CodecError> {
    TraceReader::new(bytes)?.into_trace()
}

/// Width of every synthetic instruction line in the naive dump.
pub const NAIVE_LINE_WIDTH: usize = 40;
pub const DEFAULT_NAIVE_INSTRUCTIONS: usize = 4;

/// Writes the uncompressed "dump everything" baseline: each block entry
/// spells out a label plus `instructions_per_block` synthetic IR lines of
/// exactly [`NAIVE_LINE_WIDTH`] characters; each memory event becomes one
/// more such line carrying its address.
pub fn write_naive<W: Write>(
    trace: &Trace,
    instructions_per_block: usize,
    mut sink: W,
) -> io::Result<u64> {
    let mut line = String::with_capacity(NAIVE_LINE_WIDTH + 1);
    let mut total = 0u64;
    let mut emit = |line: &mut String, sink: &mut W| -> io::Result<()> {
        let width = line.chars().count();
        if width < NAIVE_LINE_WIDTH {
            line.extend(std::iter::repeat_n(' ', NAIVE_LINE_WIDTH - width));
        } else {
            line.truncate(NAIVE_LINE_WIDTH);
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
        total += line.len() as u64;
        line.clear();
        Ok(())
    };
    for ev in trace.events() {
        match ev {
            TraceEvent::BlockEnter(b) => {
                let _ = write!(line, "bb{}:", b.0);
                emit(&mut line, &mut sink)?;
                for k in 0..instructions_per_block {
                    let _ = write!(line, "  %b{}.{} = add nsw i64 %b{}.{}, {}", b.0, k + 1, b.0, k, k);
                    emit(&mut line, &mut sink)?;
                }
            }
            TraceEvent::Load(a) => {
                let _ = write!(line, "  %ld = load i{}, ptr 0x{:x}", a.size * 8, a.value);
                emit(&mut line, &mut sink)?;
            }
            TraceEvent::Store(a) => {
                let _ = write!(line, "  store i{} %v, ptr 0x{:x}", a.size * 8, a.value);
                emit(&mut line, &mut sink)?;
            }
        }
    }
    Ok(total)
}

pub fn naive_size(trace: &Trace, instructions_per_block: usize) -> u64 {
    write_naive(trace, instructions_per_block, io::sink()).expect("io::sink never fails")
}
