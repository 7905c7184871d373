//! FWKV binary container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "FWKV" | u16 version | u8 kind | u32 rows | u32 d_x | u32 d_y
//! kind 0: keys f64[rows·d_x] | values f64[rows·d_y]
//! kind 1: keys f64[rows·d_x] | labels u32[rows] | u32 classes
//!         | classes × (u32 id | u32 name_len | name utf-8 | f64[d_y])
//! kind 2: rows == d_x | weights f64[d_x·d_y] | f64 count | u8 flags
//!         | flags & 1: gram f64[d_x·d_x] | cross f64[d_x·d_y] | f64 stats_count
//! ```

use std::fs;
use std::path::Path;

use crate::classify::ClassHead;
use crate::datasets::{KvDataset, Targets};
use crate::error::{Error, Result};
use crate::fast_weights::{FastWeights, SufficientStats};
use crate::tensor::EmbeddingMatrix;

pub const FWKV_MAGIC: [u8; 4] = *b"FWKV";
pub const FWKV_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 12;
const FLAG_STATS: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FwkvKind {
    Pairs = 0,
    Labeled = 1,
    Weights = 2,
}

impl FwkvKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Pairs),
            1 => Some(Self::Labeled),
            2 => Some(Self::Weights),
            _ => None,
        }
    }
}

/// Fast weights with optional sufficient statistics for exact updates.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredWeights {
    pub weights: FastWeights,
    pub stats: Option<SufficientStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FwkvFile {
    Dataset(KvDataset),
    Weights(StoredWeights),
}

fn header(out: &mut Vec<u8>, kind: FwkvKind, rows: usize, d_x: usize, d_y: usize) -> Result<()> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} does not fit in u32")))
    };
    out.extend_from_slice(&FWKV_MAGIC);
    out.extend_from_slice(&FWKV_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&dim(rows, "row count")?.to_le_bytes());
    out.extend_from_slice(&dim(d_x, "d_x")?.to_le_bytes());
    out.extend_from_slice(&dim(d_y, "d_y")?.to_le_bytes());
    Ok(())
}

fn put_floats(out: &mut Vec<u8>, xs: &[f64]) {
    out.reserve(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_dataset(ds: &KvDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match ds.targets() {
        Targets::Values(values) => {
            header(&mut out, FwkvKind::Pairs, ds.len(), ds.d_x(), ds.d_y())?;
            put_floats(&mut out, ds.keys().as_slice());
            put_floats(&mut out, values.as_slice());
        }
        Targets::Labels { labels, head } => {
            header(&mut out, FwkvKind::Labeled, ds.len(), ds.d_x(), ds.d_y())?;
            put_floats(&mut out, ds.keys().as_slice());
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
            out.extend_from_slice(&(head.len() as u32).to_le_bytes());
            for (c, (id, name)) in head.ids().iter().zip(head.names()).enumerate() {
                out.extend_from_slice(&id.to_le_bytes());
                let len = u32::try_from(name.len()).map_err(|_| {
                    Error::InvalidInput(format!("class name of {} bytes", name.len()))
                })?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                put_floats(&mut out, head.values().row(c));
            }
        }
    }
    Ok(out)
}

pub fn encode_weights(stored: &StoredWeights) -> Result<Vec<u8>> {
    let fw = &stored.weights;
    if let Some(s) = &stored.stats {
        if (s.d_x(), s.d_y()) != (fw.d_x(), fw.d_y()) {
            return Err(Error::shape(format!(
                "statistics are {}x{}, weights are {}x{}",
                s.d_x(),
                s.d_y(),
                fw.d_x(),
                fw.d_y()
            )));
        }
    }
    let mut out = Vec::new();
    header(&mut out, FwkvKind::Weights, fw.d_x(), fw.d_x(), fw.d_y())?;
    put_floats(&mut out, fw.weights().as_slice());
    put_floats(&mut out, &[fw.count()]);
    match &stored.stats {
        Some(s) => {
            out.push(FLAG_STATS);
            put_floats(&mut out, s.gram().as_slice());
            put_floats(&mut out, s.cross().as_slice());
            put_floats(&mut out, &[s.count()]);
        }
        None => out.push(0),
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!(
                    "truncated {what}: need {n} bytes from offset {}, {remaining} available",
                    self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Byte length of `count` elements of `width` bytes, checked against
    /// the remaining input before anything is allocated.
    fn block_len(&self, count: usize, width: usize, what: &str) -> Result<usize> {
        let remaining = self.bytes.len() - self.pos;
        match count.checked_mul(width) {
            Some(n) if n <= remaining => Ok(n),
            _ => Err(Error::format(
                self.bytes.len() as u64,
                format!(
                    "truncated {what}: need {count} × {width} bytes from offset {}, {remaining} available",
                    self.pos
                ),
            )),
        }
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.block_len(count, 8, what)?;
        let start = self.pos;
        let raw = self.take(n, what)?;
        raw.chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let x = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::format(
                        (start + 8 * i) as u64,
                        format!("non-finite value in {what}"),
                    ))
                }
            })
            .collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<EmbeddingMatrix> {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(self.offset(), format!("{what} size overflows")))?;
        let data = self.floats(count, what)?;
        EmbeddingMatrix::new(rows, cols, data)
            .map_err(|e| Error::format(self.offset(), e.to_string()))
    }

    fn scalar(&mut self, what: &str) -> Result<f64> {
        Ok(self.floats(1, what)?[0])
    }
}

/// Parses an FWKV byte buffer. Every read is bounds-checked; errors carry
/// the byte offset at which decoding failed (the file length for
/// truncation).
pub fn decode(bytes: &[u8]) -> Result<FwkvFile> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != FWKV_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected \"FWKV\""),
        ));
    }
    let version = r.u16("version")?;
    if version != FWKV_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let kind_byte = r.u8("kind")?;
    let kind = FwkvKind::from_byte(kind_byte)
        .ok_or_else(|| Error::format(6, format!("unknown kind {kind_byte}")))?;
    let rows = r.u32("row count")? as usize;
    let d_x = r.u32("d_x")? as usize;
    let d_y = r.u32("d_y")? as usize;
    debug_assert_eq!(r.pos, HEADER_LEN);
    if d_x == 0 || d_y == 0 {
        return Err(Error::format(
            11,
            format!("dimensions must be positive, got {d_x}x{d_y}"),
        ));
    }

    let file = match kind {
        FwkvKind::Pairs => {
            let keys = r.matrix(rows, d_x, "keys block")?;
            let values = r.matrix(rows, d_y, "values block")?;
            FwkvFile::Dataset(KvDataset::with_values("", keys, values)?)
        }
        FwkvKind::Labeled => {
            let keys = r.matrix(rows, d_x, "keys block")?;
            let labels_at = r.offset();
            let n = r.block_len(rows, 4, "labels")?;
            let labels: Vec<u32> = r
                .take(n, "labels")?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            let table_at = r.offset();
            let classes = r.u32("class count")? as usize;
            // Each class entry needs at least 8 header bytes plus its floats.
            r.block_len(classes, 8 + 8 * d_y, "class table")?;
            let mut ids = Vec::with_capacity(classes);
            let mut names = Vec::with_capacity(classes);
            let mut values = Vec::with_capacity(classes * d_y);
            for _ in 0..classes {
                ids.push(r.u32("class id")?);
                let len = r.u32("class name length")? as usize;
                let name_at = r.offset();
                let raw = r.take(len, "class name")?;
                let name = std::str::from_utf8(raw).map_err(|e| {
                    Error::format(name_at + e.valid_up_to() as u64, "class name is not UTF-8")
                })?;
                names.push(name.to_owned());
                values.extend(r.floats(d_y, "class embedding")?);
            }
            let head = ClassHead::new(ids, names, EmbeddingMatrix::new(classes, d_y, values)?)
                .map_err(|e| Error::format(table_at, e.to_string()))?;
            let ds = KvDataset::with_labels("", keys, labels, head).map_err(|e| match e {
                Error::Label(l) => {
                    Error::format(labels_at, format!("label {l} is not in the class table"))
                }
                other => other,
            })?;
            FwkvFile::Dataset(ds)
        }
        FwkvKind::Weights => {
            if rows != d_x {
                return Err(Error::format(
                    7,
                    format!("weights file has {rows} rows but d_x = {d_x}"),
                ));
            }
            let at = r.offset();
            let w = r.matrix(d_x, d_y, "weights")?;
            let count = r.scalar("count")?;
            let weights =
                FastWeights::new(w, count).map_err(|e| Error::format(at, e.to_string()))?;
            let flags_at = r.offset();
            let flags = r.u8("flags")?;
            if flags & !FLAG_STATS != 0 {
                return Err(Error::format(
                    flags_at,
                    format!("unknown flags {flags:#04x}"),
                ));
            }
            let stats = if flags & FLAG_STATS != 0 {
                let at = r.offset();
                let s = r.matrix(d_x, d_x, "gram block")?;
                let t = r.matrix(d_x, d_y, "cross block")?;
                let c = r.scalar("statistics count")?;
                Some(
                    SufficientStats::from_parts(s, t, c)
                        .map_err(|e| Error::format(at, e.to_string()))?,
                )
            } else {
                None
            };
            FwkvFile::Weights(StoredWeights { weights, stats })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    Ok(file)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads any FWKV file; datasets are named after the file stem.
pub fn load_any(path: impl AsRef<Path>) -> Result<FwkvFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(match decode(&bytes)? {
        FwkvFile::Dataset(mut ds) => {
            ds.set_name(stem(path));
            FwkvFile::Dataset(ds)
        }
        w => w,
    })
}

pub fn save_fwkv(path: impl AsRef<Path>, ds: &KvDataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(ds)?).map_err(io_err(path))
}

pub fn load_fwkv(path: impl AsRef<Path>) -> Result<KvDataset> {
    match load_any(path)? {
        FwkvFile::Dataset(ds) => Ok(ds),
        FwkvFile::Weights(_) => Err(Error::format(6, "file holds fast weights, not a dataset")),
    }
}

pub fn save_weights(path: impl AsRef<Path>, stored: &StoredWeights) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(stored)?).map_err(io_err(path))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<StoredWeights> {
    match load_any(path)? {
        FwkvFile::Weights(w) => Ok(w),
        FwkvFile::Dataset(_) => Err(Error::format(6, "file holds a dataset, not fast weights")),
    }
}
