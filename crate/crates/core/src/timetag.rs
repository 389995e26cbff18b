//! `QTT1` time-tag stream format.
//!
//! All integers little-endian. A file is a 32-byte header followed by
//! `record_count` 16-byte records:
//!
//! ```text
//! header  0..4   magic "QTT1"
//!         4..6   version (u16, = 1)
//!         6..8   resolution, ps per tick (u16, = 1)
//!         8..10  channel_count (u16)
//!        10..12  basis label, 2 ASCII bytes, XX arm first ("--" if unset)
//!        12..20  record_count (u64)
//!        20..32  zero padding
//! record  0..8   timestamp, ticks since stream epoch (u64)
//!         8..10  channel (u16)
//!        10..12  flags (u16, bit 0 = simulated dark count)
//!        12..16  reserved (u32, = 0)
//! ```
//!
//! Records are non-decreasing in timestamp. Readers hold one fixed-size chunk
//! buffer regardless of file length.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::quantum::BasisState;

pub const MAGIC: [u8; 4] = *b"QTT1";
pub const VERSION: u16 = 1;
pub const RESOLUTION_PS: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;
pub const FLAG_DARK: u16 = 1;
pub const UNSET_LABEL: [u8; 2] = *b"--";

/// Default reader chunk: 1 MiB.
pub const DEFAULT_BUFFER_BYTES: usize = 1 << 20;
/// Upper bound accepted for a reader chunk: 64 MiB.
pub const MAX_BUFFER_BYTES: usize = 64 << 20;

/// One detection event. The on-disk `reserved` word is always zero.
///
/// The derived ordering (timestamp, channel, flags) is the canonical
/// tie-break for equal timestamps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTagRecord {
    pub timestamp: u64,
    pub channel: u16,
    pub flags: u16,
}

impl TimeTagRecord {
    pub fn new(timestamp: u64, channel: u16) -> Self {
        TimeTagRecord {
            timestamp,
            channel,
            flags: 0,
        }
    }

    pub fn is_dark(&self) -> bool {
        self.flags & FLAG_DARK != 0
    }

    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[0..8].copy_from_slice(&self.timestamp.to_le_bytes());
        out[8..10].copy_from_slice(&self.channel.to_le_bytes());
        out[10..12].copy_from_slice(&self.flags.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> (Self, u32) {
        let rec = TimeTagRecord {
            timestamp: u64::from_le_bytes(bytes[0..8].try_into().unwrap()),
            channel: u16::from_le_bytes(bytes[8..10].try_into().unwrap()),
            flags: u16::from_le_bytes(bytes[10..12].try_into().unwrap()),
        };
        let reserved = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        (rec, reserved)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub resolution_ps: u16,
    pub channel_count: u16,
    pub basis_label: [u8; 2],
    pub record_count: u64,
}

impl StreamHeader {
    pub fn new(channel_count: u16) -> Self {
        StreamHeader {
            version: VERSION,
            resolution_ps: RESOLUTION_PS,
            channel_count,
            basis_label: UNSET_LABEL,
            record_count: 0,
        }
    }

    pub fn with_basis(mut self, xx: BasisState, x: BasisState) -> Self {
        self.basis_label = [xx.label() as u8, x.label() as u8];
        self
    }

    pub fn label_str(&self) -> String {
        String::from_utf8_lossy(&self.basis_label).into_owned()
    }

    /// Decoded basis pair, `None` when the label is unset or not a basis.
    pub fn basis(&self) -> Option<(BasisState, BasisState)> {
        let xx = BasisState::from_label(self.basis_label[0] as char)?;
        let x = BasisState::from_label(self.basis_label[1] as char)?;
        Some((xx, x))
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.resolution_ps.to_le_bytes());
        out[8..10].copy_from_slice(&self.channel_count.to_le_bytes());
        out[10..12].copy_from_slice(&self.basis_label);
        out[12..20].copy_from_slice(&self.record_count.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self> {
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let resolution_ps = u16::from_le_bytes([bytes[6], bytes[7]]);
        if resolution_ps != RESOLUTION_PS {
            return Err(Error::Format(format!(
                "resolution {resolution_ps} ps/tick, version 1 requires 1"
            )));
        }
        if bytes[20..32].iter().any(|&b| b != 0) {
            return Err(Error::Format("nonzero header padding".into()));
        }
        Ok(StreamHeader {
            version,
            resolution_ps,
            channel_count: u16::from_le_bytes([bytes[8], bytes[9]]),
            basis_label: [bytes[10], bytes[11]],
            record_count: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
        })
    }
}

/// `<XX><X>.qtt`, e.g. `HV.qtt`.
pub fn tomography_file_name(xx: BasisState, x: BasisState) -> String {
    format!("{}{}.qtt", xx.label(), x.label())
}

/// Incremental writer. Data goes to `<path>.part` and is renamed into place by
/// [`StreamWriter::finish`], which also patches the record count.
pub struct StreamWriter {
    out: Option<BufWriter<File>>,
    header: StreamHeader,
    tmp_path: PathBuf,
    path: PathBuf,
    last: Option<u64>,
}

impl StreamWriter {
    pub fn create(path: impl AsRef<Path>, header: StreamHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut tmp_path = path.clone().into_os_string();
        tmp_path.push(".part");
        let tmp_path = PathBuf::from(tmp_path);
        let file = File::create(&tmp_path).map_err(|e| Error::io(&tmp_path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        let header = StreamHeader {
            record_count: 0,
            ..header
        };
        out.write_all(&header.encode())
            .map_err(|e| Error::io(&tmp_path, e))?;
        Ok(StreamWriter {
            out: Some(out),
            header,
            tmp_path,
            path,
            last: None,
        })
    }

    pub fn push(&mut self, record: &TimeTagRecord) -> Result<()> {
        if let Some(prev) = self.last {
            if record.timestamp < prev {
                return Err(Error::Unsorted {
                    position: self.header.record_count,
                    previous: prev,
                    current: record.timestamp,
                });
            }
        }
        self.last = Some(record.timestamp);
        self.out
            .as_mut()
            .expect("writer already finished")
            .write_all(&record.encode())
            .map_err(|e| Error::io(&self.tmp_path, e))?;
        self.header.record_count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<StreamHeader> {
        let tmp = self.tmp_path.clone();
        let io = |e| Error::io(&tmp, e);
        let mut out = self.out.take().expect("writer already finished");
        out.flush().map_err(io)?;
        let mut file = out.into_inner().map_err(|e| io(e.into_error()))?;
        file.seek(SeekFrom::Start(0)).map_err(io)?;
        file.write_all(&self.header.encode()).map_err(io)?;
        file.sync_all().map_err(io)?;
        drop(file);
        std::fs::rename(&self.tmp_path, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(self.header)
    }
}

impl Drop for StreamWriter {
    fn drop(&mut self) {
        if self.out.is_some() {
            let _ = std::fs::remove_file(&self.tmp_path);
        }
    }
}

/// Writes a complete stream; the header's `record_count` is set from the data.
pub fn write_stream<'a>(
    path: impl AsRef<Path>,
    header: StreamHeader,
    records: impl IntoIterator<Item = &'a TimeTagRecord>,
) -> Result<StreamHeader> {
    let mut w = StreamWriter::create(path, header)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()
}

/// Chunked record iterator over one file.
pub struct StreamReader<R: Read = File> {
    src: R,
    header: StreamHeader,
    path: PathBuf,
    buf: Vec<u8>,
    pos: usize,
    len: usize,
    read: u64,
    last: Option<u64>,
    done: bool,
}

impl StreamReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_buffer(path, DEFAULT_BUFFER_BYTES)
    }

    /// `buffer_bytes` is rounded down to whole records and must not exceed
    /// [`MAX_BUFFER_BYTES`].
    pub fn open_with_buffer(path: impl AsRef<Path>, buffer_bytes: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path, buffer_bytes)
    }
}

impl<R: Read> StreamReader<R> {
    pub fn from_reader(mut src: R, path: impl AsRef<Path>, buffer_bytes: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if buffer_bytes > MAX_BUFFER_BYTES {
            return Err(Error::invalid(format!(
                "reader buffer {buffer_bytes} B exceeds {MAX_BUFFER_BYTES} B"
            )));
        }
        let mut head = [0u8; HEADER_LEN];
        read_full(&mut src, &mut head)
            .map_err(|e| Error::io(&path, e))
            .and_then(|n| {
                if n < HEADER_LEN {
                    Err(Error::Truncated(format!(
                        "{}: header has {n} of {HEADER_LEN} bytes",
                        path.display()
                    )))
                } else {
                    Ok(())
                }
            })?;
        let header = StreamHeader::decode(&head)?;
        let cap = (buffer_bytes / RECORD_LEN).max(1) * RECORD_LEN;
        Ok(StreamReader {
            src,
            header,
            path,
            buf: vec![0u8; cap],
            pos: 0,
            len: 0,
            read: 0,
            last: None,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Bytes held by the chunk buffer.
    pub fn buffer_capacity(&self) -> usize {
        self.buf.len()
    }

    fn refill(&mut self) -> Result<bool> {
        let n = read_full(&mut self.src, &mut self.buf).map_err(|e| Error::io(&self.path, e))?;
        if n % RECORD_LEN != 0 {
            return Err(Error::Truncated(format!(
                "{}: partial record after {} records",
                self.path.display(),
                self.read + (n / RECORD_LEN) as u64
            )));
        }
        self.pos = 0;
        self.len = n;
        Ok(n > 0)
    }

    fn next_record(&mut self) -> Result<Option<TimeTagRecord>> {
        if self.done {
            return Ok(None);
        }
        if self.pos >= self.len && !self.refill()? {
            self.done = true;
            if self.read != self.header.record_count {
                return Err(Error::Truncated(format!(
                    "{}: header announces {} records, file holds {}",
                    self.path.display(),
                    self.header.record_count,
                    self.read
                )));
            }
            return Ok(None);
        }
        let (rec, reserved) = TimeTagRecord::decode(&self.buf[self.pos..self.pos + RECORD_LEN]);
        self.pos += RECORD_LEN;
        if reserved != 0 {
            return Err(Error::Format(format!(
                "record {} has nonzero reserved word",
                self.read
            )));
        }
        if let Some(prev) = self.last {
            if rec.timestamp < prev {
                return Err(Error::Unsorted {
                    position: self.read,
                    previous: prev,
                    current: rec.timestamp,
                });
            }
        }
        if self.read >= self.header.record_count {
            return Err(Error::Format(format!(
                "{}: more records than the {} announced",
                self.path.display(),
                self.header.record_count
            )));
        }
        self.last = Some(rec.timestamp);
        self.read += 1;
        Ok(Some(rec))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<TimeTagRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Opens `path` and returns its header plus a record iterator.
pub fn read_stream(path: impl AsRef<Path>) -> Result<(StreamHeader, StreamReader)> {
    let r = StreamReader::open(path)?;
    Ok((*r.header(), r))
}

/// Loads a whole stream into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<(StreamHeader, Vec<TimeTagRecord>)> {
    let (header, reader) = read_stream(path)?;
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// K-way merge by timestamp. Equal timestamps are ordered by channel, flags
/// and finally input index. Differing basis labels are an error unless
/// `allow_label_mismatch`, in which case the output label is `--`.
pub fn merge_streams(
    inputs: &[impl AsRef<Path>],
    output: impl AsRef<Path>,
    allow_label_mismatch: bool,
) -> Result<StreamHeader> {
    if inputs.is_empty() {
        return Err(Error::invalid("merge needs at least one input"));
    }
    let mut readers = inputs
        .iter()
        .map(StreamReader::open)
        .collect::<Result<Vec<_>>>()?;
    let first = *readers[0].header();
    let mut label = first.basis_label;
    for (r, p) in readers.iter().zip(inputs).skip(1) {
        let h = r.header();
        if h.resolution_ps != first.resolution_ps || h.channel_count != first.channel_count {
            return Err(Error::IncompatibleHeaders(format!(
                "{}: resolution/channels {}/{} vs {}/{}",
                p.as_ref().display(),
                h.resolution_ps,
                h.channel_count,
                first.resolution_ps,
                first.channel_count
            )));
        }
        if h.basis_label != first.basis_label {
            if !allow_label_mismatch {
                return Err(Error::IncompatibleHeaders(format!(
                    "{}: basis label {} vs {}",
                    p.as_ref().display(),
                    h.label_str(),
                    first.label_str()
                )));
            }
            label = UNSET_LABEL;
        }
    }

    let mut heap = BinaryHeap::new();
    for (i, r) in readers.iter_mut().enumerate() {
        if let Some(rec) = r.next().transpose()? {
            heap.push(Reverse((rec, i)));
        }
    }
    let header = StreamHeader {
        basis_label: label,
        ..first
    };
    let mut w = StreamWriter::create(output, header)?;
    while let Some(Reverse((rec, i))) = heap.pop() {
        w.push(&rec)?;
        if let Some(next) = readers[i].next().transpose()? {
            heap.push(Reverse((next, i)));
        }
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> StreamHeader {
        StreamHeader::new(2).with_basis(BasisState::H, BasisState::V)
    }

    #[test]
    fn empty_stream_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.qtt");
        write_stream(&p, header(), &[]).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 32);
        let (h, recs) = read_all(&p).unwrap();
        assert_eq!(h.record_count, 0);
        assert!(recs.is_empty());
    }

    #[test]
    fn single_record_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.qtt");
        write_stream(&p, header(), &[TimeTagRecord::new(100, 1)]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 48);
        let expected: [u8; 48] = [
            0x51, 0x54, 0x54, 0x31, 0x01, 0x00, 0x01, 0x00, 0x02, 0x00, 0x48, 0x56, 0x01, 0x00,
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
            0x00, 0x00, 0x00, 0x00, //
            0x64, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00,
            0x00, 0x00,
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn unsorted_input_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.qtt");
        let err = write_stream(&p, header(), &[TimeTagRecord::new(10, 0), TimeTagRecord::new(5, 1)]).unwrap_err();
        assert!(matches!(err, Error::Unsorted { position: 1, .. }));
        assert!(!p.exists());
        assert!(!dir.path().join("u.qtt.part").exists());
    }

    #[test]
    fn corrupted_magic_names_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.qtt");
        write_stream(&p, header(), &[TimeTagRecord::new(1, 0)]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0..4].copy_from_slice(b"XYZ!");
        std::fs::write(&p, &bytes).unwrap();
        let err = read_stream(&p).err().unwrap();
        assert!(matches!(err, Error::BadMagic { found } if &found == b"XYZ!"));
        assert!(err.to_string().contains("58, 59, 5a, 21"), "{err}");
    }

    #[test]
    fn bad_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.qtt");
        let recs: Vec<_> = (0..10).map(|i| TimeTagRecord::new(i * 7, 0)).collect();
        write_stream(&p, header(), &recs).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut v2 = good.clone();
        v2[4] = 2;
        std::fs::write(&p, &v2).unwrap();
        assert!(matches!(read_stream(&p).err().unwrap(), Error::BadVersion(2)));

        // cut mid-record
        std::fs::write(&p, &good[..good.len() - 5]).unwrap();
        let res: Result<Vec<_>> = read_stream(&p).unwrap().1.collect();
        assert!(matches!(res, Err(Error::Truncated(_))));

        // cut on a record boundary: count mismatch at the end
        std::fs::write(&p, &good[..good.len() - 16]).unwrap();
        let res: Result<Vec<_>> = read_stream(&p).unwrap().1.collect();
        assert!(matches!(res, Err(Error::Truncated(_))));
    }

    #[test]
    fn regression_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.qtt");
        let mut bytes = header().encode().to_vec();
        for t in [5u64, 9, 3] {
            bytes.extend_from_slice(&TimeTagRecord::new(t, 0).encode());
        }
        bytes[12] = 3;
        std::fs::write(&p, &bytes).unwrap();
        let res: Result<Vec<_>> = read_stream(&p).unwrap().1.collect();
        match res {
            Err(Error::Unsorted { position, previous, current }) => {
                assert_eq!((position, previous, current), (2, 9, 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_buffer_reads_everything() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.qtt");
        let recs: Vec<_> = (0..1000).map(|i| TimeTagRecord::new(i * 3, (i % 2) as u16)).collect();
        write_stream(&p, header(), &recs).unwrap();
        let r = StreamReader::open_with_buffer(&p, 40).unwrap();
        assert_eq!(r.buffer_capacity(), 32);
        let back: Vec<_> = r.collect::<Result<_>>().unwrap();
        assert_eq!(back, recs);
        assert!(StreamReader::open_with_buffer(&p, MAX_BUFFER_BYTES + 1).is_err());
    }

    #[test]
    fn merge_examples() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.qtt");
        let b = dir.path().join("b.qtt");
        let out = dir.path().join("out.qtt");
        let ra: Vec<_> = [1u64, 4, 4, 9].iter().map(|&t| TimeTagRecord::new(t, 1)).collect();
        let rb: Vec<_> = [2u64, 4, 8].iter().map(|&t| TimeTagRecord::new(t, 0)).collect();
        write_stream(&a, header(), &ra).unwrap();
        write_stream(&b, header(), &rb).unwrap();

        merge_streams(&[&a], &out, false).unwrap();
        assert_eq!(read_all(&out).unwrap().1, ra);

        let h = merge_streams(&[&a, &b], &out, false).unwrap();
        assert_eq!(h.record_count, 7);
        let merged = read_all(&out).unwrap().1;
        let ts: Vec<_> = merged.iter().map(|r| (r.timestamp, r.channel)).collect();
        assert_eq!(ts, vec![(1, 1), (2, 0), (4, 0), (4, 1), (4, 1), (8, 0), (9, 1)]);

        let c = dir.path().join("c.qtt");
        write_stream(&c, StreamHeader::new(2).with_basis(BasisState::D, BasisState::D), &rb).unwrap();
        assert!(matches!(merge_streams(&[&a, &c], &out, false), Err(Error::IncompatibleHeaders(_))));
        let h = merge_streams(&[&a, &c], &out, true).unwrap();
        assert_eq!(&h.basis_label, b"--");

        let d = dir.path().join("d.qtt");
        write_stream(&d, StreamHeader::new(4).with_basis(BasisState::H, BasisState::V), &rb).unwrap();
        assert!(merge_streams(&[&a, &d], &out, true).is_err());
    }
}
