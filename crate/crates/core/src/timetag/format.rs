use std::io::{BufReader, ErrorKind, Read, Write};

use crate::error::{Error, Result};

use super::{TimeTag, CHANNEL_COUNT};

pub const HEADER_MAGIC: [u8; 8] = *b"PNRTAG01";
pub const FORMAT_VERSION: u16 = 1;
/// Resolution code 1 means 0.1 ps per timestamp tick; no other code is defined.
pub const RESOLUTION_TENTH_PS: u16 = 1;
pub const RECORD_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub resolution_code: u16,
    pub channel_count: u16,
    pub epoch_note: String,
}

impl Default for StreamHeader {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            resolution_code: RESOLUTION_TENTH_PS,
            channel_count: CHANNEL_COUNT,
            epoch_note: String::new(),
        }
    }
}

impl StreamHeader {
    pub fn with_note(note: impl Into<String>) -> Self {
        Self {
            epoch_note: note.into(),
            ..Self::default()
        }
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        8 + 2 + 2 + 2 + 2 + self.epoch_note.len()
    }

    fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.version)));
        }
        if self.resolution_code != RESOLUTION_TENTH_PS {
            return Err(Error::Format(format!(
                "unsupported resolution code {}",
                self.resolution_code
            )));
        }
        if self.channel_count == 0 || self.channel_count > CHANNEL_COUNT {
            return Err(Error::Format(format!(
                "channel count {} outside 1..={CHANNEL_COUNT}",
                self.channel_count
            )));
        }
        if self.epoch_note.len() > u16::MAX as usize {
            return Err(Error::Format("epoch note longer than 65535 bytes".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, sink: &mut W) -> Result<usize> {
        self.validate()?;
        sink.write_all(&HEADER_MAGIC)?;
        sink.write_all(&self.version.to_le_bytes())?;
        sink.write_all(&self.resolution_code.to_le_bytes())?;
        sink.write_all(&self.channel_count.to_le_bytes())?;
        sink.write_all(&(self.epoch_note.len() as u16).to_le_bytes())?;
        sink.write_all(self.epoch_note.as_bytes())?;
        Ok(self.encoded_len())
    }

    pub fn read_from<R: Read>(source: &mut R) -> Result<Self> {
        let mut fixed = [0u8; 16];
        read_full(source, &mut fixed, 0)?;
        if fixed[..8] != HEADER_MAGIC {
            return Err(Error::Format("bad magic, expected PNRTAG01".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([fixed[i], fixed[i + 1]]);
        let note_len = u16_at(14) as usize;
        let mut note = vec![0u8; note_len];
        read_full(source, &mut note, 16)?;
        let header = Self {
            version: u16_at(8),
            resolution_code: u16_at(10),
            channel_count: u16_at(12),
            epoch_note: String::from_utf8(note)
                .map_err(|_| Error::Format("epoch note is not valid UTF-8".into()))?,
        };
        header.validate()?;
        Ok(header)
    }
}

/// Fills `buf` completely; a short read is reported as truncation at `offset`.
fn read_full<R: Read>(source: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    match fill(source, buf)? {
        n if n == buf.len() => Ok(()),
        _ => Err(Error::Truncated { offset }),
    }
}

/// Reads until `buf` is full or EOF, returning the number of bytes read.
fn fill<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

fn encode_record(tag: &TimeTag) -> [u8; RECORD_SIZE] {
    let mut rec = [0u8; RECORD_SIZE];
    rec[0] = tag.channel;
    // bytes 1..8: flags and reserved fields, always zero
    rec[8..16].copy_from_slice(&tag.timestamp.to_le_bytes());
    rec
}

/// Streaming writer that enforces stream order and channel range.
pub struct TagWriter<W: Write> {
    sink: W,
    channel_count: u16,
    last: Option<TimeTag>,
    records: usize,
    bytes: u64,
}

impl<W: Write> TagWriter<W> {
    pub fn new(mut sink: W, header: &StreamHeader) -> Result<Self> {
        let bytes = header.write_to(&mut sink)? as u64;
        Ok(Self {
            sink,
            channel_count: header.channel_count,
            last: None,
            records: 0,
            bytes,
        })
    }

    pub fn push(&mut self, tag: TimeTag) -> Result<()> {
        if u16::from(tag.channel) >= self.channel_count {
            return Err(Error::Domain(format!(
                "channel {} at record {} outside 0..{}",
                tag.channel, self.records, self.channel_count
            )));
        }
        if let Some(prev) = self.last {
            if tag < prev {
                return Err(Error::Ordering {
                    index: self.records,
                    previous: prev.timestamp,
                    timestamp: tag.timestamp,
                });
            }
        }
        self.sink.write_all(&encode_record(&tag))?;
        self.last = Some(tag);
        self.records += 1;
        self.bytes += RECORD_SIZE as u64;
        Ok(())
    }

    pub fn records(&self) -> usize {
        self.records
    }

    /// Flushes the sink and returns the total number of bytes written.
    pub fn finish(mut self) -> Result<u64> {
        self.sink.flush()?;
        Ok(self.bytes)
    }
}

/// Writes a default header followed by `tags`; returns bytes written.
pub fn write_stream<I, W>(tags: I, sink: W) -> Result<u64>
where
    I: IntoIterator<Item = TimeTag>,
    W: Write,
{
    let mut writer = TagWriter::new(sink, &StreamHeader::default())?;
    for tag in tags {
        writer.push(tag)?;
    }
    writer.finish()
}

/// Streaming reader over a `.pnrtag` source. Memory use is one fixed buffer.
pub struct TagReader<R: Read> {
    source: BufReader<R>,
    header: StreamHeader,
    offset: u64,
    last: Option<TimeTag>,
    index: usize,
    done: bool,
}

impl<R: Read> TagReader<R> {
    pub fn new(source: R) -> Result<Self> {
        let mut source = BufReader::with_capacity(1 << 16, source);
        let header = StreamHeader::read_from(&mut source)?;
        let offset = header.encoded_len() as u64;
        Ok(Self {
            source,
            header,
            offset,
            last: None,
            index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<TimeTag>> {
        let mut rec = [0u8; RECORD_SIZE];
        let n = fill(&mut self.source, &mut rec)?;
        if n == 0 {
            return Ok(None);
        }
        if n < RECORD_SIZE {
            return Err(Error::Truncated { offset: self.offset });
        }
        if rec[1..8].iter().any(|&b| b != 0) {
            return Err(Error::Format(format!(
                "non-zero flags/reserved bytes in record at offset {}",
                self.offset
            )));
        }
        let tag = TimeTag {
            channel: rec[0],
            timestamp: i64::from_le_bytes(rec[8..16].try_into().expect("8 bytes")),
        };
        if u16::from(tag.channel) >= self.header.channel_count {
            return Err(Error::Domain(format!(
                "channel {} at byte offset {} outside 0..{}",
                tag.channel, self.offset, self.header.channel_count
            )));
        }
        if let Some(prev) = self.last {
            if tag < prev {
                return Err(Error::Ordering {
                    index: self.index,
                    previous: prev.timestamp,
                    timestamp: tag.timestamp,
                });
            }
        }
        self.offset += RECORD_SIZE as u64;
        self.last = Some(tag);
        self.index += 1;
        Ok(Some(tag))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTag>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(tag)) => Some(Ok(tag)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a streaming reader; tags are produced lazily in file order.
pub fn read_stream<R: Read>(source: R) -> Result<TagReader<R>> {
    TagReader::new(source)
}
