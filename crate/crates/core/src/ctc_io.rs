//! Cell Tracking Challenge file conventions and the `CTKR` raster container.
//!
//! Label masks are grayscale TIFF. The reader accepts both byte orders,
//! uncompressed or deflate strips and 8, 16 or 32 bit unsigned samples; the
//! writer always emits little-endian 16-bit single-strip files, so output is
//! byte-for-byte deterministic. Byte layouts are documented in `FORMATS.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;

use crate::detection::CellClass;
use crate::imaging::{self, LabelMap, Raster};
use crate::tracker::{LineageForest, StatusRow, TrackState, Trajectory};
use crate::{Error, Result};

// ---------------------------------------------------------------- layout

/// Paths of one sequence inside a CTC dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub root: PathBuf,
    /// Two-digit sequence name, e.g. `"01"`.
    pub sequence: String,
}

impl SequenceLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SequenceLayout { root: root.into(), sequence: "01".to_string() }
    }

    pub fn image_dir(&self) -> PathBuf {
        self.root.join(&self.sequence)
    }

    pub fn image_path(&self, t: usize) -> PathBuf {
        self.image_dir().join(format!("t{t:03}.tif"))
    }

    pub fn res_dir(&self) -> PathBuf {
        self.root.join(format!("{}_RES", self.sequence))
    }

    pub fn res_mask_path(&self, t: usize) -> PathBuf {
        self.res_dir().join(format!("mask{t:03}.tif"))
    }

    pub fn res_track_path(&self) -> PathBuf {
        self.res_dir().join("res_track.txt")
    }

    pub fn gt_dir(&self) -> PathBuf {
        self.root.join(format!("{}_GT", self.sequence))
    }

    pub fn tra_dir(&self) -> PathBuf {
        self.gt_dir().join("TRA")
    }

    pub fn tra_mask_path(&self, t: usize) -> PathBuf {
        self.tra_dir().join(format!("man_track{t:03}.tif"))
    }

    pub fn tra_track_path(&self) -> PathBuf {
        self.tra_dir().join("man_track.txt")
    }

    pub fn seg_dir(&self) -> PathBuf {
        self.gt_dir().join("SEG")
    }

    pub fn seg_mask_path(&self, t: usize) -> PathBuf {
        self.seg_dir().join(format!("man_seg{t:03}.tif"))
    }

    /// Number of consecutive frames `0, 1, ...` whose file exists.
    pub fn count_frames(&self, path_of: impl Fn(&Self, usize) -> PathBuf) -> usize {
        (0..).take_while(|&t| path_of(self, t).is_file()).count()
    }
}

/// Which tracking directory a forest is written to or read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackTarget {
    Result,
    GroundTruth,
}

impl TrackTarget {
    fn dir(self, layout: &SequenceLayout) -> PathBuf {
        match self {
            TrackTarget::Result => layout.res_dir(),
            TrackTarget::GroundTruth => layout.tra_dir(),
        }
    }

    fn mask_path(self, layout: &SequenceLayout, t: usize) -> PathBuf {
        match self {
            TrackTarget::Result => layout.res_mask_path(t),
            TrackTarget::GroundTruth => layout.tra_mask_path(t),
        }
    }

    fn track_path(self, layout: &SequenceLayout) -> PathBuf {
        match self {
            TrackTarget::Result => layout.res_track_path(),
            TrackTarget::GroundTruth => layout.tra_track_path(),
        }
    }
}

// ------------------------------------------------------------------ TIFF

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiffCompression {
    None,
    #[default]
    Deflate,
}

const TAG_WIDTH: u16 = 256;
const TAG_HEIGHT: u16 = 257;
const TAG_BITS: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTES: u16 = 279;
const TAG_PLANAR: u16 = 284;
const TAG_PREDICTOR: u16 = 317;
const TAG_SAMPLE_FORMAT: u16 = 339;

const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;

/// Writes a single-channel 16-bit grayscale TIFF.
pub fn write_u16_tiff(raster: &Raster<u16>, path: &Path, compression: TiffCompression) -> Result<()> {
    fs::write(path, encode_u16_tiff(raster, compression)?)?;
    Ok(())
}

pub fn encode_u16_tiff(raster: &Raster<u16>, compression: TiffCompression) -> Result<Vec<u8>> {
    if raster.channels() != 1 {
        return Err(Error::invalid(format!("TIFF writer needs 1 channel, got {}", raster.channels())));
    }
    let (w, h) = raster.extent();
    let width = u32::try_from(w).map_err(|_| Error::Range(format!("width {w}")))?;
    let height = u32::try_from(h).map_err(|_| Error::Range(format!("height {h}")))?;
    let mut raw = Vec::with_capacity(w * h * 2);
    for v in raster.data() {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let (strip, code) = match compression {
        TiffCompression::None => (raw, 1u16),
        TiffCompression::Deflate => {
            let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::new(6));
            enc.write_all(&raw)?;
            (enc.finish()?, 8u16)
        }
    };
    let strip_len = u32::try_from(strip.len()).map_err(|_| Error::Range("strip exceeds 4 GiB".into()))?;

    let entries: [(u16, u16, u32); 11] = [
        (TAG_WIDTH, TYPE_LONG, width),
        (TAG_HEIGHT, TYPE_LONG, height),
        (TAG_BITS, TYPE_SHORT, 16),
        (TAG_COMPRESSION, TYPE_SHORT, code as u32),
        (TAG_PHOTOMETRIC, TYPE_SHORT, 1),
        (TAG_STRIP_OFFSETS, TYPE_LONG, 0), // patched below
        (TAG_SAMPLES, TYPE_SHORT, 1),
        (TAG_ROWS_PER_STRIP, TYPE_LONG, height),
        (TAG_STRIP_BYTES, TYPE_LONG, strip_len),
        (TAG_PLANAR, TYPE_SHORT, 1),
        (TAG_SAMPLE_FORMAT, TYPE_SHORT, 1),
    ];
    let ifd_len = 2 + entries.len() * 12 + 4;
    let strip_offset = (8 + ifd_len) as u32;

    let mut out = Vec::with_capacity(8 + ifd_len + strip.len());
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&8u32.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for (tag, ty, value) in entries {
        let value = if tag == TAG_STRIP_OFFSETS { strip_offset } else { value };
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&ty.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        if ty == TYPE_SHORT {
            out.extend_from_slice(&(value as u16).to_le_bytes());
            out.extend_from_slice(&[0, 0]);
        } else {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&strip);
    Ok(out)
}

/// Writes a label map as 16-bit TIFF. Labels above 65535 are a range error.
pub fn write_label_tiff(map: &LabelMap, path: &Path, compression: TiffCompression) -> Result<()> {
    fs::write(path, encode_label_tiff(map, compression)?)?;
    Ok(())
}

pub fn encode_label_tiff(map: &LabelMap, compression: TiffCompression) -> Result<Vec<u8>> {
    if let Some(&big) = map.data().iter().find(|&&v| v > u16::MAX as u32) {
        return Err(Error::Range(format!("label {big} does not fit in 16 bits")));
    }
    encode_u16_tiff(&map.map(|v| v as u16), compression)
}

pub fn read_label_tiff(path: &Path) -> Result<LabelMap> {
    decode_label_tiff(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Cursor<'_> {
    fn slice(&self, offset: u64, len: u64, what: &str) -> Result<&[u8]> {
        let end = offset.checked_add(len).filter(|&e| e <= self.bytes.len() as u64);
        match end {
            Some(end) => Ok(&self.bytes[offset as usize..end as usize]),
            None => Err(Error::format(
                offset.min(self.bytes.len() as u64),
                format!("{what} needs {len} bytes at offset {offset}, file has {}", self.bytes.len()),
            )),
        }
    }

    fn u16(&self, offset: u64) -> Result<u16> {
        let b: [u8; 2] = self.slice(offset, 2, "u16")?.try_into().expect("2 bytes");
        Ok(if self.big_endian { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) })
    }

    fn u32(&self, offset: u64) -> Result<u32> {
        let b: [u8; 4] = self.slice(offset, 4, "u32")?.try_into().expect("4 bytes");
        Ok(if self.big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
    }
}

struct IfdEntry {
    at: u64,
    ty: u16,
    count: u32,
    value_at: u64,
}

impl IfdEntry {
    fn values(&self, cur: &Cursor) -> Result<Vec<u32>> {
        let size = match self.ty {
            1 => 1,
            3 => 2,
            4 => 4,
            t => return Err(Error::format(self.at, format!("unsupported field type {t}"))),
        };
        let total = size * self.count as u64;
        let base = if total <= 4 { self.value_at } else { cur.u32(self.value_at)? as u64 };
        cur.slice(base, total, "tag values")?;
        (0..self.count as u64)
            .map(|i| match size {
                1 => Ok(cur.bytes[(base + i) as usize] as u32),
                2 => cur.u16(base + 2 * i).map(u32::from),
                _ => cur.u32(base + 4 * i),
            })
            .collect()
    }

    fn scalar(&self, cur: &Cursor) -> Result<u32> {
        let v = self.values(cur)?;
        v.first().copied().ok_or_else(|| Error::format(self.at, "tag has no value"))
    }
}

/// Decodes a grayscale TIFF into labels. Only the first image is read.
pub fn decode_label_tiff(bytes: &[u8]) -> Result<LabelMap> {
    let big_endian = match bytes.get(..2) {
        Some(b"II") => false,
        Some(b"MM") => true,
        _ => return Err(Error::format(0, "missing II/MM byte-order mark")),
    };
    let cur = Cursor { bytes, big_endian };
    match cur.u16(2)? {
        42 => {}
        43 => return Err(Error::format(2, "BigTIFF is not supported")),
        m => return Err(Error::format(2, format!("bad magic number {m}"))),
    }
    let ifd = cur.u32(4)? as u64;
    let n = cur.u16(ifd)? as u64;
    let mut tags = BTreeMap::new();
    for i in 0..n {
        let at = ifd + 2 + 12 * i;
        cur.slice(at, 12, "IFD entry")?;
        let tag = cur.u16(at)?;
        tags.insert(tag, IfdEntry { at, ty: cur.u16(at + 2)?, count: cur.u32(at + 4)?, value_at: at + 8 });
    }
    let entry_at = |tag| tags.get(&tag).map_or(ifd, |e: &IfdEntry| e.at);
    let get = |tag: u16, default: Option<u32>| -> Result<u32> {
        match tags.get(&tag) {
            Some(e) => e.scalar(&cur),
            None => default.ok_or_else(|| Error::format(ifd, format!("required tag {tag} missing"))),
        }
    };

    let width = get(TAG_WIDTH, None)? as usize;
    let height = get(TAG_HEIGHT, None)? as usize;
    if width == 0 || height == 0 {
        return Err(Error::format(entry_at(TAG_WIDTH), format!("empty image {width}x{height}")));
    }
    let bits = get(TAG_BITS, Some(1))?;
    if !matches!(bits, 8 | 16 | 32) {
        return Err(Error::format(entry_at(TAG_BITS), format!("unsupported bits per sample {bits}")));
    }
    let samples = get(TAG_SAMPLES, Some(1))?;
    if samples != 1 {
        return Err(Error::format(entry_at(TAG_SAMPLES), format!("expected 1 sample per pixel, got {samples}")));
    }
    let compression = get(TAG_COMPRESSION, Some(1))?;
    if !matches!(compression, 1 | 8 | 32946) {
        return Err(Error::format(entry_at(TAG_COMPRESSION), format!("unsupported compression {compression}")));
    }
    let predictor = get(TAG_PREDICTOR, Some(1))?;
    if predictor != 1 {
        return Err(Error::format(entry_at(TAG_PREDICTOR), format!("unsupported predictor {predictor}")));
    }
    let sample_format = get(TAG_SAMPLE_FORMAT, Some(1))?;
    if sample_format != 1 {
        return Err(Error::format(entry_at(TAG_SAMPLE_FORMAT), "only unsigned integer samples are supported"));
    }
    let rows_per_strip = (get(TAG_ROWS_PER_STRIP, Some(u32::MAX))? as usize).clamp(1, height);

    let offsets = tags
        .get(&TAG_STRIP_OFFSETS)
        .ok_or_else(|| Error::format(ifd, "strip offsets missing"))?
        .values(&cur)?;
    let counts = tags
        .get(&TAG_STRIP_BYTES)
        .ok_or_else(|| Error::format(ifd, "strip byte counts missing"))?
        .values(&cur)?;
    let strips = height.div_ceil(rows_per_strip);
    if offsets.len() != strips || counts.len() != strips {
        return Err(Error::format(
            entry_at(TAG_STRIP_OFFSETS),
            format!("expected {strips} strips, found {} offsets and {} counts", offsets.len(), counts.len()),
        ));
    }

    let bytes_per = (bits / 8) as usize;
    let row_bytes = width * bytes_per;
    let mut pixels = Vec::with_capacity(width * height * bytes_per);
    for (s, (&off, &len)) in offsets.iter().zip(&counts).enumerate() {
        let rows = rows_per_strip.min(height - s * rows_per_strip);
        let want = rows * row_bytes;
        let data = cur.slice(off as u64, len as u64, "strip")?;
        let start = pixels.len();
        if compression == 1 {
            if data.len() < want {
                return Err(Error::format(off as u64, format!("strip {s} holds {} of {want} bytes", data.len())));
            }
            pixels.extend_from_slice(&data[..want]);
        } else {
            ZlibDecoder::new(data)
                .take(want as u64)
                .read_to_end(&mut pixels)
                .map_err(|e| Error::format(off as u64, format!("strip {s}: {e}")))?;
            if pixels.len() - start != want {
                return Err(Error::format(
                    off as u64,
                    format!("strip {s} inflates to {} of {want} bytes", pixels.len() - start),
                ));
            }
        }
    }

    let values: Vec<u32> = match bytes_per {
        1 => pixels.iter().map(|&b| b as u32).collect(),
        2 => pixels
            .chunks_exact(2)
            .map(|c| if big_endian { u16::from_be_bytes([c[0], c[1]]) } else { u16::from_le_bytes([c[0], c[1]]) } as u32)
            .collect(),
        _ => pixels
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }
            })
            .collect(),
    };
    Raster::from_vec(width, height, 1, values)
}

// ----------------------------------------------------------- track files

/// One line of a CTC track file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackRecord {
    pub label: u32,
    pub begin: usize,
    pub end: usize,
    /// 0 when the track has no parent.
    pub parent: u32,
}

impl TrackRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.label == 0 {
            return Err("label must be at least 1".into());
        }
        if self.begin > self.end {
            return Err(format!("begin {} after end {}", self.begin, self.end));
        }
        if self.parent == self.label {
            return Err(format!("track {} is its own parent", self.label));
        }
        Ok(())
    }
}

pub fn format_track_records(records: &[TrackRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!("{} {} {} {}\n", r.label, r.begin, r.end, r.parent));
    }
    s
}

pub fn write_track_file(records: &[TrackRecord], path: &Path) -> Result<()> {
    fs::write(path, format_track_records(records))?;
    Ok(())
}

/// Parses track records. Blank lines are skipped; every other line must hold
/// exactly four unsigned integers.
pub fn parse_track_records(text: &str) -> Result<Vec<TrackRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let syntax = |message: String| Error::Syntax { line: line_no, message };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(syntax(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<u64> {
            fields[k].parse::<u64>().map_err(|_| syntax(format!("field {} is not an unsigned integer: {:?}", k + 1, fields[k])))
        };
        let label = u32::try_from(num(0)?).map_err(|_| syntax("label exceeds 32 bits".into()))?;
        let parent = u32::try_from(num(3)?).map_err(|_| syntax("parent exceeds 32 bits".into()))?;
        let rec = TrackRecord { label, begin: num(1)? as usize, end: num(2)? as usize, parent };
        rec.validate().map_err(syntax)?;
        if !seen.insert(rec.label) {
            return Err(syntax(format!("duplicate label {}", rec.label)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_track_file(path: &Path) -> Result<Vec<TrackRecord>> {
    parse_track_records(&fs::read_to_string(path)?)
}

/// Track records of a forest, ordered by label.
pub fn forest_records(forest: &LineageForest) -> Vec<TrackRecord> {
    forest
        .trajectories
        .values()
        .filter(|t| !t.rows.is_empty())
        .map(|t| TrackRecord { label: t.id, begin: t.start(), end: t.end(), parent: t.parent })
        .collect()
}

// ------------------------------------------------------ raster container

pub const CONTAINER_MAGIC: &[u8; 4] = b"CTKR";
pub const CONTAINER_VERSION: u8 = 1;
const CONTAINER_HEADER: usize = 18;

/// Sample types storable in a `CTKR` container.
pub trait ContainerSample: Copy + Sized {
    const CODE: u8;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl ContainerSample for u8 {
    const CODE: u8 = 1;
    const SIZE: usize = 1;
    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn take(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl ContainerSample for u16 {
    const CODE: u8 = 2;
    const SIZE: usize = 2;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        u16::from_le_bytes([bytes[0], bytes[1]])
    }
}

impl ContainerSample for f32 {
    const CODE: u8 = 3;
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_bits(u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

/// A container payload of whichever sample type the file declares.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyRaster {
    U8(Raster<u8>),
    U16(Raster<u16>),
    F32(Raster<f32>),
}

impl AnyRaster {
    pub fn into_f32(self) -> Raster<f32> {
        match self {
            AnyRaster::U8(r) => r.map(|v| v as f32),
            AnyRaster::U16(r) => r.map(|v| v as f32),
            AnyRaster::F32(r) => r,
        }
    }
}

pub fn encode_raster_container<T: ContainerSample>(raster: &Raster<T>) -> Result<Vec<u8>> {
    let dim = |v: usize, name: &str| u32::try_from(v).map_err(|_| Error::Range(format!("{name} {v} exceeds u32")));
    let mut out = Vec::with_capacity(CONTAINER_HEADER + raster.data().len() * T::SIZE);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.push(CONTAINER_VERSION);
    out.push(T::CODE);
    out.extend_from_slice(&dim(raster.width(), "width")?.to_le_bytes());
    out.extend_from_slice(&dim(raster.height(), "height")?.to_le_bytes());
    out.extend_from_slice(&dim(raster.channels(), "channels")?.to_le_bytes());
    for &v in raster.data() {
        v.put(&mut out);
    }
    Ok(out)
}

pub fn write_raster_container<T: ContainerSample>(raster: &Raster<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_raster_container(raster)?)?;
    Ok(())
}

fn decode_payload<T: ContainerSample>(w: usize, h: usize, c: usize, payload: &[u8]) -> Result<Raster<T>> {
    let data = payload.chunks_exact(T::SIZE).map(T::take).collect();
    Raster::from_vec(w, h, c, data)
}

pub fn decode_raster_container(bytes: &[u8]) -> Result<AnyRaster> {
    if bytes.len() < CONTAINER_HEADER {
        return Err(Error::format(bytes.len() as u64, format!("header needs {CONTAINER_HEADER} bytes")));
    }
    if &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::format(0, "bad magic, expected CTKR"));
    }
    if bytes[4] != CONTAINER_VERSION {
        return Err(Error::format(4, format!("unsupported version {}", bytes[4])));
    }
    let size = match bytes[5] {
        1 => 1,
        2 => 2,
        3 => 4,
        d => return Err(Error::format(5, format!("unknown dtype code {d}"))),
    };
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, c) = (dim(6), dim(10), dim(14));
    if w == 0 || h == 0 || c == 0 {
        return Err(Error::format(6, format!("empty extent {w}x{h}x{c}")));
    }
    let want = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(size))
        .ok_or_else(|| Error::format(6, "extent overflows"))?;
    let payload = &bytes[CONTAINER_HEADER..];
    if payload.len() != want {
        return Err(Error::format(
            (CONTAINER_HEADER + payload.len().min(want)) as u64,
            format!("payload is {} bytes, header implies {want}", payload.len()),
        ));
    }
    Ok(match bytes[5] {
        1 => AnyRaster::U8(decode_payload(w, h, c, payload)?),
        2 => AnyRaster::U16(decode_payload(w, h, c, payload)?),
        _ => AnyRaster::F32(decode_payload(w, h, c, payload)?),
    })
}

pub fn read_raster_container(path: &Path) -> Result<AnyRaster> {
    decode_raster_container(&fs::read(path)?)
}

// ------------------------------------------------------ forest transfer

/// Labels whose mask presence disagrees with their track span.
fn inconsistent_labels(forest: &LineageForest, maps: &[LabelMap]) -> BTreeSet<u32> {
    let mut bad = BTreeSet::new();
    for (f, map) in maps.iter().enumerate() {
        let present: BTreeSet<u32> = map.data().iter().copied().filter(|&v| v != 0).collect();
        for &l in &present {
            match forest.trajectories.get(&l) {
                Some(t) if !t.rows.is_empty() && t.start() <= f && f <= t.end() => {}
                _ => {
                    bad.insert(l);
                }
            }
        }
        for t in forest.trajectories.values() {
            if !t.rows.is_empty() && t.start() <= f && f <= t.end() && !present.contains(&t.id) {
                bad.insert(t.id);
            }
        }
    }
    for t in forest.trajectories.values() {
        if t.rows.is_empty() || t.end() >= maps.len() {
            bad.insert(t.id);
        }
    }
    bad
}

/// Writes one mask per frame and the track file. Nothing is written when the
/// maps disagree with the forest.
pub fn export_forest(
    forest: &LineageForest,
    maps: &[LabelMap],
    layout: &SequenceLayout,
    target: TrackTarget,
    compression: TiffCompression,
) -> Result<()> {
    forest.validate()?;
    let bad = inconsistent_labels(forest, maps);
    if !bad.is_empty() {
        return Err(Error::Consistency {
            labels: bad.into_iter().collect(),
            message: "mask presence does not match track spans".into(),
        });
    }
    let encoded = maps
        .iter()
        .map(|m| encode_label_tiff(m, compression))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(target.dir(layout))?;
    for (t, bytes) in encoded.iter().enumerate() {
        fs::write(target.mask_path(layout, t), bytes)?;
    }
    write_track_file(&forest_records(forest), &target.track_path(layout))
}

/// Writes segmentation ground truth masks `man_seg%03d.tif`.
pub fn export_seg_gt(maps: &[LabelMap], layout: &SequenceLayout, compression: TiffCompression) -> Result<()> {
    fs::create_dir_all(layout.seg_dir())?;
    for (t, m) in maps.iter().enumerate() {
        write_label_tiff(m, &layout.seg_mask_path(t), compression)?;
    }
    Ok(())
}

/// Reads a forest back from masks and track file. Row positions are mask
/// centroids; class information is not stored in CTC files, so every row is
/// marked normal.
pub fn import_forest(layout: &SequenceLayout, target: TrackTarget) -> Result<(LineageForest, Vec<LabelMap>)> {
    let records = read_track_file(&target.track_path(layout))?;
    let n = layout.count_frames(|l, t| target.mask_path(l, t));
    let maps = (0..n)
        .map(|t| read_label_tiff(&target.mask_path(layout, t)))
        .collect::<Result<Vec<_>>>()?;
    let stats: Vec<BTreeMap<u32, imaging::RegionStats>> = maps
        .iter()
        .map(|m| imaging::label_stats(m).into_iter().map(|s| (s.label, s)).collect())
        .collect();

    let mut trajectories = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for r in &records {
        let mut rows = Vec::with_capacity(r.end - r.begin + 1);
        for f in r.begin..=r.end {
            match stats.get(f).and_then(|s| s.get(&r.label)) {
                Some(s) => rows.push(StatusRow { x: s.centroid.x, y: s.centroid.y, frame: f, status: CellClass::Normal }),
                None => {
                    missing.insert(r.label);
                    break;
                }
            }
        }
        trajectories.insert(r.label, Trajectory { id: r.label, rows, parent: r.parent, state: TrackState::Terminated });
    }
    if !missing.is_empty() {
        return Err(Error::Consistency {
            labels: missing.into_iter().collect(),
            message: "track span covers frames where the label is absent".into(),
        });
    }
    let forest = LineageForest { trajectories };
    forest.validate()?;
    Ok((forest, maps))
}
