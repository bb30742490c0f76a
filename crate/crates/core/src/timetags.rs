//! Detector timestamp streams and their binary file format.
//!
//! A file is a 32-byte header followed by fixed 16-byte records, all fields
//! little-endian:
//!
//! ```text
//! header:  magic "QTT1" | version u16 | channel_count u16 | record_count u64 | reserved [u8; 16]
//! record:  time_ps u64 | channel u16 | flags u16 | reserved u32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QTT1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;

/// One detection event: a channel id and a picosecond timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTag {
    // Field order gives the (time, channel) sort order.
    pub time_ps: u64,
    pub channel: u16,
}

impl TimeTag {
    pub fn new(channel: u16, time_ps: u64) -> Self {
        Self { time_ps, channel }
    }
}

/// Metadata that travels with a stream in memory. Not persisted in the
/// binary format.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochInfo {
    pub label: String,
    pub duration_s: Option<f64>,
}

/// A finalized, time-sorted stream of tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    channel_count: u16,
    pub epoch: EpochInfo,
}

/// What happened while loading a file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub records: u64,
    /// Records whose (time, channel) key was smaller than the previous record's.
    pub out_of_order: u64,
}

impl TagStream {
    /// Builds a stream from tags in any order. Tags are sorted by
    /// (time, channel).
    pub fn new(channel_count: u16, mut tags: Vec<TimeTag>) -> Result<Self> {
        if let Some(bad) = tags.iter().find(|t| t.channel >= channel_count) {
            return Err(Error::Argument(format!(
                "tag channel {} out of range for {} channels",
                bad.channel, channel_count
            )));
        }
        if !tags.windows(2).all(|w| w[0] <= w[1]) {
            tags.sort_unstable();
        }
        Ok(Self {
            tags,
            channel_count,
            epoch: EpochInfo::default(),
        })
    }

    pub fn empty(channel_count: u16) -> Self {
        Self {
            tags: Vec::new(),
            channel_count,
            epoch: EpochInfo::default(),
        }
    }

    pub fn with_epoch(mut self, epoch: EpochInfo) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn channel_count(&self) -> u16 {
        self.channel_count
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Per-channel tag counts (the N of each detector).
    pub fn channel_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.channel_count as usize];
        for t in &self.tags {
            counts[t.channel as usize] += 1;
        }
        counts
    }

    /// Sorted timestamps of one channel.
    pub fn channel_times(&self, channel: u16) -> Result<Vec<u64>> {
        self.check_channel(channel)?;
        Ok(self
            .tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.time_ps)
            .collect())
    }

    /// Sub-stream holding only `channel`; the channel count is kept.
    pub fn slice_channel(&self, channel: u16) -> Result<TagStream> {
        self.check_channel(channel)?;
        Ok(TagStream {
            tags: self
                .tags
                .iter()
                .filter(|t| t.channel == channel)
                .copied()
                .collect(),
            channel_count: self.channel_count,
            epoch: self.epoch.clone(),
        })
    }

    /// Applies `f` to every timestamp, re-sorting afterwards.
    pub fn map_times(&self, mut f: impl FnMut(TimeTag) -> u64) -> TagStream {
        let tags = self
            .tags
            .iter()
            .map(|&t| TimeTag::new(t.channel, f(t)))
            .collect();
        // channels unchanged, so this cannot fail
        let mut out = TagStream::new(self.channel_count, tags).expect("channels preserved");
        out.epoch = self.epoch.clone();
        out
    }

    fn check_channel(&self, channel: u16) -> Result<()> {
        if channel >= self.channel_count {
            return Err(Error::Argument(format!(
                "channel {} out of range (stream has {} channels)",
                channel, self.channel_count
            )));
        }
        Ok(())
    }
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<TagStream> {
    read_stream_with_summary(path).map(|(s, _)| s)
}

/// Loads a time-tag file. Out-of-order records are sorted and counted in
/// the returned summary.
pub fn read_stream_with_summary(path: impl AsRef<Path>) -> Result<(TagStream, LoadSummary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    decode(&mut reader).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_stream(stream: &TagStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(stream, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode<W: Write>(stream: &TagStream, w: &mut W) -> std::io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&stream.channel_count.to_le_bytes());
    header[8..16].copy_from_slice(&(stream.tags.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; RECORD_LEN];
    for t in &stream.tags {
        rec[0..8].copy_from_slice(&t.time_ps.to_le_bytes());
        rec[8..10].copy_from_slice(&t.channel.to_le_bytes());
        // flags and reserved stay zero
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn decode<R: Read>(r: &mut R) -> Result<(TagStream, LoadSummary)> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(r, &mut header).map_err(|e| Error::io("<stream>", e))?;
    if got < HEADER_LEN {
        return Err(Error::Format(format!(
            "header is {got} bytes, expected {HEADER_LEN}"
        )));
    }
    if &header[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"QTT1\"",
            &header[0..4]
        )));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let channel_count = u16::from_le_bytes([header[6], header[7]]);
    let record_count = u64::from_le_bytes(header[8..16].try_into().unwrap());

    let mut tags = Vec::with_capacity(record_count.min(1 << 24) as usize);
    let mut summary = LoadSummary {
        records: record_count,
        out_of_order: 0,
    };
    let mut rec = [0u8; RECORD_LEN];
    let mut prev: Option<TimeTag> = None;
    for i in 0..record_count {
        let got = read_full(r, &mut rec).map_err(|e| Error::io("<stream>", e))?;
        if got < RECORD_LEN {
            return Err(Error::Truncated {
                offset: HEADER_LEN as u64 + i * RECORD_LEN as u64,
            });
        }
        let time_ps = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let channel = u16::from_le_bytes([rec[8], rec[9]]);
        if channel >= channel_count {
            return Err(Error::Format(format!(
                "record {i} has channel {channel} but header declares {channel_count} channels"
            )));
        }
        let tag = TimeTag::new(channel, time_ps);
        if prev.is_some_and(|p| tag < p) {
            summary.out_of_order += 1;
        }
        prev = Some(tag);
        tags.push(tag);
    }
    if summary.out_of_order > 0 {
        log::warn!(
            "{} of {} records were out of order; sorted on load",
            summary.out_of_order,
            record_count
        );
    }
    let stream = TagStream::new(channel_count, tags)?;
    Ok((stream, summary))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes_of(stream: &TagStream) -> Vec<u8> {
        let mut v = Vec::new();
        encode(stream, &mut v).unwrap();
        v
    }

    fn raw_file(channel_count: u16, records: &[(u16, u64)]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(MAGIC);
        v.extend_from_slice(&1u16.to_le_bytes());
        v.extend_from_slice(&channel_count.to_le_bytes());
        v.extend_from_slice(&(records.len() as u64).to_le_bytes());
        v.extend_from_slice(&[0u8; 16]);
        for &(ch, t) in records {
            v.extend_from_slice(&t.to_le_bytes());
            v.extend_from_slice(&ch.to_le_bytes());
            v.extend_from_slice(&[0u8; 6]);
        }
        v
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = bytes_of(&TagStream::empty(3));
        assert_eq!(bytes.len(), 32);
        let (s, summary) = decode(&mut bytes.as_slice()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.channel_count(), 3);
        assert_eq!(summary.records, 0);
    }

    #[test]
    fn single_record_layout() {
        let s = TagStream::new(3, vec![TimeTag::new(2, 12500)]).unwrap();
        let bytes = bytes_of(&s);
        assert_eq!(bytes.len(), 48);
        assert_eq!(&bytes[32..40], &12500u64.to_le_bytes());
        assert_eq!(&bytes[40..42], &2u16.to_le_bytes());
        assert_eq!(&bytes[42..48], &[0u8; 6]);
    }

    #[test]
    fn unsorted_file_is_sorted_on_load() {
        let raw = raw_file(2, &[(0, 100), (1, 50)]);
        let (s, summary) = decode(&mut raw.as_slice()).unwrap();
        assert_eq!(s.tags(), &[TimeTag::new(1, 50), TimeTag::new(0, 100)]);
        assert_eq!(summary.out_of_order, 1);
    }

    #[test]
    fn ties_order_by_channel() {
        let s = TagStream::new(3, vec![TimeTag::new(2, 7), TimeTag::new(0, 7)]).unwrap();
        assert_eq!(s.tags()[0].channel, 0);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut raw = raw_file(1, &[]);
        raw[0] = b'X';
        assert!(matches!(decode(&mut raw.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn short_header_is_format_error() {
        let raw = raw_file(1, &[]);
        assert!(matches!(
            decode(&mut &raw[..20]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_record_reports_offset() {
        let raw = raw_file(2, &[(0, 1), (1, 2)]);
        let cut = &raw[..raw.len() - 5];
        match decode(&mut &cut[..]) {
            Err(Error::Truncated { offset }) => assert_eq!(offset, 48),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn record_channel_out_of_range_rejected() {
        let raw = raw_file(2, &[(5, 1)]);
        assert!(matches!(decode(&mut raw.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn slice_channel_selects_and_keeps_count() {
        let s = TagStream::new(
            3,
            vec![TimeTag::new(0, 1), TimeTag::new(1, 2), TimeTag::new(0, 3)],
        )
        .unwrap();
        let s0 = s.slice_channel(0).unwrap();
        assert_eq!(s0.tags(), &[TimeTag::new(0, 1), TimeTag::new(0, 3)]);
        assert_eq!(s0.channel_count(), 3);
        assert!(s.slice_channel(2).unwrap().is_empty());
        assert!(matches!(s.slice_channel(3), Err(Error::Argument(_))));
    }

    #[test]
    fn file_round_trip_million_records() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let tags: Vec<_> = (0..1_000_000)
            .map(|_| TimeTag::new(rng.random_range(0..4), rng.random::<u64>() >> 8))
            .collect();
        let s = TagStream::new(4, tags).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.qtt");
        write_stream(&s, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = read_stream(&path).unwrap();
        assert_eq!(back, s);
        write_stream(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let s = TagStream::empty(1);
        let err = write_stream(&s, "/nonexistent-dir/x.qtt").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn arb_stream() -> impl Strategy<Value = TagStream> {
        (1u16..6).prop_flat_map(|nch| {
            prop::collection::vec((0..nch, any::<u64>()), 0..400).prop_map(move |v| {
                TagStream::new(nch, v.into_iter().map(|(c, t)| TimeTag::new(c, t)).collect())
                    .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(s in arb_stream()) {
            let bytes = bytes_of(&s);
            prop_assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN * s.len());
            let (back, summary) = decode(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(summary.out_of_order, 0);
            prop_assert_eq!(&back, &s);
        }

        #[test]
        fn channel_slices_partition_stream(s in arb_stream()) {
            let mut all = Vec::new();
            for ch in 0..s.channel_count() {
                let slice = s.slice_channel(ch).unwrap();
                prop_assert!(slice.tags().iter().all(|t| t.channel == ch));
                prop_assert!(slice.tags().windows(2).all(|w| w[0] <= w[1]));
                all.extend_from_slice(slice.tags());
            }
            let rebuilt = TagStream::new(s.channel_count(), all).unwrap();
            prop_assert_eq!(rebuilt, s);
        }
    }
}
