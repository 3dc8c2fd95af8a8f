//! Video storage layouts over the record store.
//!
//! * `frame_file`: one raw record per frame under its 8-byte big-endian
//!   frame number. Value: `width:u32 height:u32 channels:u8 encoding:u8`
//!   then row-major pixels.
//! * `encoded_file`: the whole video as a single clip blob under key 0.
//! * `segmented_file`: independent clips of `clip_len` frames keyed by
//!   their start frame.
//!
//! The descriptor and video shape live as JSON under the reserved key
//! `0xFF * 8`, which sorts after every frame key.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use patchdb_core::codec::{ClipDecoder, ClipEncoder, CodecConfig};
use patchdb_core::patch::CHANNELS;
use patchdb_core::Frame;

use crate::error::{Error, Result};
use crate::recstore::{Loc, RecordStore};

pub const DEFAULT_CLIP_LEN: u32 = 64;
pub const META_KEY: [u8; 8] = [0xFF; 8];
const RAW_ENCODING: u8 = 0;
const FRAME_HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    FrameFile,
    EncodedFile,
    SegmentedFile,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::FrameFile, Layout::EncodedFile, Layout::SegmentedFile];

    pub fn name(self) -> &'static str {
        match self {
            Layout::FrameFile => "frame_file",
            Layout::EncodedFile => "encoded_file",
            Layout::SegmentedFile => "segmented_file",
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layout `{s}`")))
    }
}

fn default_clip_len() -> u32 {
    DEFAULT_CLIP_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreDescriptor {
    pub layout: Layout,
    /// Ignored by `frame_file`, which stores raw pixels.
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default = "default_clip_len")]
    pub clip_len: u32,
    pub path: PathBuf,
}

impl StoreDescriptor {
    pub fn new(layout: Layout, path: impl Into<PathBuf>) -> Self {
        Self { layout, codec: CodecConfig::lossless(), clip_len: DEFAULT_CLIP_LEN, path: path.into() }
    }

    pub fn with_codec(mut self, codec: CodecConfig) -> Self {
        self.codec = codec;
        self
    }

    pub fn with_clip_len(mut self, clip_len: u32) -> Self {
        self.clip_len = clip_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 {
            return Err(Error::Config("clip_len must be at least 1".into()));
        }
        self.codec.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Sidecar record: the descriptor plus the stored video's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub descriptor: StoreDescriptor,
    pub video_id: String,
    pub frames: u64,
    pub width: u32,
    pub height: u32,
}

/// Storage work done on behalf of one reader.
#[derive(Debug, Default)]
pub struct IoCounters {
    records_read: AtomicU64,
    frames_decoded: AtomicU64,
    bytes_read: AtomicU64,
    clips_decoded: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoStats {
    pub records_read: u64,
    pub frames_decoded: u64,
    pub bytes_read: u64,
    pub clips_decoded: u64,
}

impl std::ops::Add for IoStats {
    type Output = IoStats;

    fn add(self, o: IoStats) -> IoStats {
        IoStats {
            records_read: self.records_read + o.records_read,
            frames_decoded: self.frames_decoded + o.frames_decoded,
            bytes_read: self.bytes_read + o.bytes_read,
            clips_decoded: self.clips_decoded + o.clips_decoded,
        }
    }
}

impl IoCounters {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn snapshot(&self) -> IoStats {
        IoStats {
            records_read: self.records_read.load(Ordering::Relaxed),
            frames_decoded: self.frames_decoded.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            clips_decoded: self.clips_decoded.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn record(&self, bytes: u64) {
        self.records_read.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }

    fn frame_decoded(&self) {
        self.frames_decoded.fetch_add(1, Ordering::Relaxed);
    }

    fn clip_opened(&self) {
        self.clips_decoded.fetch_add(1, Ordering::Relaxed);
    }
}

struct Inner {
    rs: RecordStore,
    meta: StoreMeta,
}

/// A stored video. Cheap to clone; read-only once ingest returns.
#[derive(Clone)]
pub struct VideoStore {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for VideoStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VideoStore").field("meta", &self.inner.meta).finish()
    }
}

fn frame_key(n: u64) -> [u8; 8] {
    n.to_be_bytes()
}

fn key_number(k: &[u8]) -> u64 {
    u64::from_be_bytes(k.try_into().expect("8-byte frame key"))
}

impl VideoStore {
    /// Writes `frames` (ascending from 0, no gaps) in the chosen layout.
    pub fn ingest<I>(frames: I, desc: &StoreDescriptor) -> Result<Self>
    where
        I: IntoIterator<Item = Frame>,
    {
        desc.validate()?;
        let mut rs = RecordStore::create(&desc.path)?;
        let mut meta = StoreMeta {
            descriptor: desc.clone(),
            video_id: String::new(),
            frames: 0,
            width: 0,
            height: 0,
        };
        let mut clip: Option<(u64, ClipEncoder)> = None;
        for f in frames {
            if f.frame_no() != meta.frames {
                return Err(Error::OutOfOrderFrame { expected: meta.frames, found: f.frame_no() });
            }
            if meta.frames == 0 {
                meta.video_id = f.video_id().to_string();
                meta.width = f.width();
                meta.height = f.height();
            } else if f.video_id() != meta.video_id {
                return Err(Error::ForeignFrame {
                    video: meta.video_id.clone(),
                    found_video: f.video_id().to_string(),
                    frame_no: f.frame_no(),
                });
            } else if (f.width(), f.height()) != (meta.width, meta.height) {
                return Err(Error::Config(format!(
                    "frame {} is {}x{}, video is {}x{}",
                    f.frame_no(),
                    f.width(),
                    f.height(),
                    meta.width,
                    meta.height
                )));
            }
            match desc.layout {
                Layout::FrameFile => {
                    let mut v = Vec::with_capacity(FRAME_HEADER_LEN + f.pixels().len());
                    v.extend_from_slice(&f.width().to_be_bytes());
                    v.extend_from_slice(&f.height().to_be_bytes());
                    v.push(CHANNELS as u8);
                    v.push(RAW_ENCODING);
                    v.extend_from_slice(f.pixels());
                    rs.put(&frame_key(f.frame_no()), &v)?;
                }
                Layout::EncodedFile | Layout::SegmentedFile => {
                    let starts_clip = match desc.layout {
                        Layout::SegmentedFile => f.frame_no() % u64::from(desc.clip_len) == 0,
                        _ => f.frame_no() == 0,
                    };
                    if starts_clip {
                        if let Some((start, enc)) = clip.take() {
                            rs.put(&frame_key(start), &enc.finish()?)?;
                        }
                        clip = Some((f.frame_no(), ClipEncoder::new(f.width(), f.height(), desc.codec)?));
                    }
                    clip.as_mut().expect("clip opened at its first frame").1.push(f.pixels())?;
                }
            }
            meta.frames += 1;
        }
        if let Some((start, enc)) = clip.take() {
            rs.put(&frame_key(start), &enc.finish()?)?;
        }
        // the location is supplied again on open, so identical videos give
        // identical files wherever they are written
        let mut stored = meta.clone();
        stored.descriptor.path = PathBuf::new();
        rs.put(&META_KEY, &serde_json::to_vec(&stored).expect("store meta serializes"))?;
        rs.sync()?;
        Ok(Self { inner: Arc::new(Inner { rs, meta }) })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rs = RecordStore::open(path)?;
        let raw = rs.get(&META_KEY)?.ok_or_else(|| Error::corrupt(path, "missing store metadata"))?;
        let mut meta: StoreMeta =
            serde_json::from_slice(&raw).map_err(|e| Error::corrupt(path, e.to_string()))?;
        meta.descriptor.path = path.to_path_buf();
        Ok(Self { inner: Arc::new(Inner { rs, meta }) })
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.inner.meta
    }

    pub fn layout(&self) -> Layout {
        self.inner.meta.descriptor.layout
    }

    pub fn video_id(&self) -> &str {
        &self.inner.meta.video_id
    }

    pub fn len(&self) -> u64 {
        self.inner.meta.frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes on disk, including keys and record framing.
    pub fn store_size(&self) -> u64 {
        self.inner.rs.size()
    }

    /// Frames in ascending order, restricted to `[lo, hi)` when given.
    pub fn scan(&self, range: Option<(u64, u64)>, counters: Arc<IoCounters>) -> Result<FrameScan> {
        let n = self.len();
        let (lo, hi) = match range {
            Some((lo, hi)) if lo >= hi => {
                return Err(Error::Config(format!("empty scan range [{lo}, {hi})")));
            }
            Some((lo, hi)) => (lo.min(n), hi.min(n)),
            None => (0, n),
        };
        let rs = &self.inner.rs;
        let state = match self.layout() {
            Layout::FrameFile => {
                let keys = rs.range(&frame_key(lo), &frame_key(hi)).map(|(_, l)| l).collect();
                ScanState::Records { locs: keys, pos: 0 }
            }
            Layout::EncodedFile => {
                let clips = if lo < hi { rs.locate(&frame_key(0)).map(|l| (0, l)).into_iter().collect() } else { Vec::new() };
                ScanState::Clips { clips, pos: 0, current: None, whole_clips: false }
            }
            Layout::SegmentedFile => {
                let clip_len = u64::from(self.inner.meta.descriptor.clip_len);
                let clips = if lo < hi {
                    let first = lo / clip_len * clip_len;
                    rs.range(&frame_key(first), &frame_key(hi)).map(|(k, l)| (key_number(k), l)).collect()
                } else {
                    Vec::new()
                };
                ScanState::Clips { clips, pos: 0, current: None, whole_clips: true }
            }
        };
        Ok(FrameScan { store: self.clone(), counters, lo, hi, state })
    }

    /// One frame by number, decoding only as the layout requires.
    pub fn random_access(&self, frame_no: u64, counters: &IoCounters) -> Result<Frame> {
        if frame_no >= self.len() {
            return Err(Error::MissingFrame(frame_no));
        }
        let rs = &self.inner.rs;
        match self.layout() {
            Layout::FrameFile => {
                let loc = rs.locate(&frame_key(frame_no)).ok_or(Error::MissingFrame(frame_no))?;
                self.read_raw(loc, frame_no, counters)
            }
            Layout::EncodedFile => {
                let loc = rs.locate(&frame_key(0)).ok_or(Error::MissingFrame(frame_no))?;
                let blob = self.read_blob(loc, counters)?;
                let mut dec = ClipDecoder::new(blob)?;
                counters.clip_opened();
                for _ in 0..frame_no {
                    dec.next_frame()?;
                    counters.frame_decoded();
                }
                let px = dec.next_frame()?.ok_or(Error::MissingFrame(frame_no))?.to_vec();
                counters.frame_decoded();
                self.frame(frame_no, px)
            }
            Layout::SegmentedFile => {
                let clip_len = u64::from(self.inner.meta.descriptor.clip_len);
                let start = frame_no / clip_len * clip_len;
                let loc = rs.locate(&frame_key(start)).ok_or(Error::MissingFrame(frame_no))?;
                let blob = self.read_blob(loc, counters)?;
                let mut dec = ClipDecoder::new(blob)?;
                counters.clip_opened();
                let mut found = None;
                let mut t = start;
                while let Some(px) = dec.next_frame()? {
                    counters.frame_decoded();
                    if t == frame_no {
                        found = Some(px.to_vec());
                    }
                    t += 1;
                }
                self.frame(frame_no, found.ok_or(Error::MissingFrame(frame_no))?)
            }
        }
    }

    fn read_blob(&self, loc: Loc, counters: &IoCounters) -> Result<Vec<u8>> {
        let v = self.inner.rs.read(loc)?;
        counters.record(u64::from(loc.len));
        Ok(v)
    }

    fn read_raw(&self, loc: Loc, frame_no: u64, counters: &IoCounters) -> Result<Frame> {
        let mut v = self.read_blob(loc, counters)?;
        let path = self.inner.rs.path();
        if v.len() < FRAME_HEADER_LEN {
            return Err(Error::corrupt(path, format!("frame {frame_no} record too short")));
        }
        let w = u32::from_be_bytes(v[0..4].try_into().unwrap());
        let h = u32::from_be_bytes(v[4..8].try_into().unwrap());
        if v[8] as usize != CHANNELS || v[9] != RAW_ENCODING {
            return Err(Error::corrupt(path, format!("frame {frame_no} has unsupported encoding")));
        }
        v.drain(..FRAME_HEADER_LEN);
        Ok(Frame::new(self.video_id(), frame_no, w, h, v)?)
    }

    fn frame(&self, frame_no: u64, px: Vec<u8>) -> Result<Frame> {
        let m = &self.inner.meta;
        Ok(Frame::new(m.video_id.as_str(), frame_no, m.width, m.height, px)?)
    }
}

enum ScanState {
    Records { locs: Vec<Loc>, pos: usize },
    Clips {
        clips: Vec<(u64, Loc)>,
        pos: usize,
        /// Decoder and the frame number its next frame will carry.
        current: Option<(ClipDecoder<Vec<u8>>, u64)>,
        /// Segmented clips decode to their end; the single encoded stream
        /// stops once the range is exhausted.
        whole_clips: bool,
    },
}

/// Pull iterator over a frame range.
pub struct FrameScan {
    store: VideoStore,
    counters: Arc<IoCounters>,
    lo: u64,
    hi: u64,
    state: ScanState,
}

impl FrameScan {
    pub fn counters(&self) -> &Arc<IoCounters> {
        &self.counters
    }

    fn advance(&mut self) -> Result<Option<Frame>> {
        match &mut self.state {
            ScanState::Records { locs, pos } => {
                let Some(&loc) = locs.get(*pos) else { return Ok(None) };
                *pos += 1;
                let frame_no = self.lo + (*pos as u64 - 1);
                self.store.read_raw(loc, frame_no, &self.counters).map(Some)
            }
            ScanState::Clips { clips, pos, current, whole_clips } => loop {
                if let Some((dec, t)) = current {
                    if *t >= self.hi && !*whole_clips {
                        *current = None;
                        clips.clear();
                        return Ok(None);
                    }
                    match dec.next_frame()? {
                        Some(px) => {
                            self.counters.frame_decoded();
                            let n = *t;
                            *t += 1;
                            if n >= self.lo && n < self.hi {
                                let px = px.to_vec();
                                return self.store.frame(n, px).map(Some);
                            }
                            continue;
                        }
                        None => *current = None,
                    }
                }
                let Some(&(start, loc)) = clips.get(*pos) else { return Ok(None) };
                *pos += 1;
                let blob = self.store.read_blob(loc, &self.counters)?;
                self.counters.clip_opened();
                *current = Some((ClipDecoder::new(blob)?, start));
            },
        }
    }
}

impl Iterator for FrameScan {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.advance().transpose()
    }
}
