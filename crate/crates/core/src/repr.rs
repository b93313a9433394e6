//! RPRB: a little-endian container for representation matrices.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "RPRB"
//! 4       4         version (u32) = 1
//! 8       8         n rows (u64)
//! 16      4         d columns (u32)
//! 20      4         k label-space size (u32)
//! 24      8n        ids (u64)
//! ..      4n        labels (u32)
//! ..      4nd       data (f32, row-major)
//! ```

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::probing::ProbingExample;

pub const MAGIC: &[u8; 4] = b"RPRB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: u128, found: usize },
    #[error("shape error: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum JoinError {
    #[error("{count} probing ids missing from representations (first: {listed:?})")]
    MissingIds { count: usize, listed: Vec<u64> },
    #[error("train split is empty")]
    EmptyTrain,
    #[error("source id {0} requested by more than one split of a single matrix")]
    SharedAcrossSplits(u64),
}

/// An n×d matrix of representation vectors with per-row ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprMatrix {
    ids: Vec<u64>,
    labels: Vec<u32>,
    k: u32,
    d: usize,
    data: Vec<f32>,
}

/// Header fields of an RPRB file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReprHeader {
    pub version: u32,
    pub n: u64,
    pub d: u32,
    pub k: u32,
}

impl ReprMatrix {
    pub fn new(
        ids: Vec<u64>,
        labels: Vec<u32>,
        k: u32,
        d: usize,
        data: Vec<f32>,
    ) -> Result<Self, ReprError> {
        let n = ids.len();
        if labels.len() != n {
            return Err(ReprError::Shape(format!(
                "{n} ids but {} labels",
                labels.len()
            )));
        }
        if u32::try_from(d).is_err() {
            return Err(ReprError::Shape(format!("dimension {d} exceeds u32")));
        }
        if data.len() != n * d {
            return Err(ReprError::Shape(format!(
                "data has {} values, expected {n}×{d}",
                data.len()
            )));
        }
        let m = Self {
            ids,
            labels,
            k,
            d,
            data,
        };
        m.validate().map_err(ReprError::Corrupt)?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), String> {
        if let Some((row, label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.k) {
            return Err(format!(
                "row {row}: label {label} out of range for k={}",
                self.k
            ));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(format!(
                "non-finite value {} at row {}",
                self.data[pos],
                pos / self.d.max(1)
            ));
        }
        let mut seen = HashSet::with_capacity(self.ids.len());
        if let Some(id) = self.ids.iter().find(|id| !seen.insert(**id)) {
            return Err(format!("duplicate id {id}"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn header(&self) -> ReprHeader {
        ReprHeader {
            version: VERSION,
            n: self.n() as u64,
            d: self.d as u32,
            k: self.k,
        }
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.n() * (8 + 4 + 4 * self.d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for label in &self.labels {
            out.extend_from_slice(&label.to_le_bytes());
        }
        for value in &self.data {
            out.extend_from_slice(&value.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReprError> {
        let header = parse_header(bytes)?;
        let n = usize::try_from(header.n)
            .map_err(|_| ReprError::Format(format!("row count {} too large", header.n)))?;
        let d = header.d as usize;
        let expected = HEADER_LEN as u128 + header.n as u128 * (12 + 4 * d as u128);
        if expected != bytes.len() as u128 {
            return Err(ReprError::Length {
                expected,
                found: bytes.len(),
            });
        }
        let mut cursor = HEADER_LEN;
        let mut take = |len: usize| {
            let slice = &bytes[cursor..cursor + len];
            cursor += len;
            slice
        };
        let ids = take(8 * n)
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = take(4 * n)
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = take(4 * n * d)
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = Self {
            ids,
            labels,
            k: header.k,
            d,
            data,
        };
        m.validate().map_err(ReprError::Corrupt)?;
        Ok(m)
    }
}

/// Decodes and checks the 24-byte header.
pub fn parse_header(bytes: &[u8]) -> Result<ReprHeader, ReprError> {
    if bytes.len() < HEADER_LEN {
        return Err(ReprError::Length {
            expected: HEADER_LEN as u128,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(ReprError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ReprError::Format(format!("unsupported version {version}")));
    }
    Ok(ReprHeader {
        version,
        n: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        d: u32::from_le_bytes(bytes[16..20].try_into().unwrap()),
        k: u32::from_le_bytes(bytes[20..24].try_into().unwrap()),
    })
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path` once fully written.
pub fn write_repr(m: &ReprMatrix, path: impl AsRef<Path>) -> Result<(), ReprError> {
    let path = path.as_ref();
    let io_err = |source| ReprError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(&m.to_bytes()).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn read_repr(path: impl AsRef<Path>) -> Result<ReprMatrix, ReprError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ReprError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ReprMatrix::from_bytes(&bytes)
}

/// Reads only the header of a file.
pub fn read_header(path: impl AsRef<Path>) -> Result<ReprHeader, ReprError> {
    use std::io::Read;
    let path = path.as_ref();
    let io_err = |source| ReprError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::with_capacity(HEADER_LEN);
    std::fs::File::open(path)
        .map_err(io_err)?
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(io_err)?;
    parse_header(&buf)
}

/// Probe-ready rows: binary property labels over representation vectors,
/// ordered train, then valid, then test.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeInput {
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    /// n×d, promoted to 64-bit.
    pub features: Array2<f64>,
    pub k: usize,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl ProbeInput {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        k: usize,
        train: Range<usize>,
        valid: Range<usize>,
        test: Range<usize>,
    ) -> Result<Self, ReprError> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(ReprError::Shape(format!(
                "{n} rows but {} labels",
                labels.len()
            )));
        }
        if train.start != 0 || train.end != valid.start || valid.end != test.start || test.end != n
        {
            return Err(ReprError::Shape(format!(
                "spans {train:?} {valid:?} {test:?} do not tile 0..{n}"
            )));
        }
        if train.is_empty() {
            return Err(ReprError::Shape("train span is empty".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(ReprError::Corrupt(format!(
                "label {l} out of range for k={k}"
            )));
        }
        Ok(Self {
            ids: (0..n as u64).collect(),
            labels,
            features,
            k,
            train,
            valid,
            test,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }
}

/// Joins per-split probing examples against one matrix whose ids cover all
/// splits. Each split is emitted in ascending `source_id` order.
pub fn join(
    train: &[ProbingExample],
    valid: &[ProbingExample],
    test: &[ProbingExample],
    m: &ReprMatrix,
) -> Result<ProbeInput, JoinError> {
    let mut seen = HashSet::new();
    for e in train.iter().chain(valid).chain(test) {
        if !seen.insert(e.source_id) {
            return Err(JoinError::SharedAcrossSplits(e.source_id));
        }
    }
    join_per_split([(train, m), (valid, m), (test, m)])
}

/// Joins each split against its own matrix; ids only need to be unique
/// within a split.
pub fn join_per_split(
    parts: [(&[ProbingExample], &ReprMatrix); 3],
) -> Result<ProbeInput, JoinError> {
    if parts[0].0.is_empty() {
        return Err(JoinError::EmptyTrain);
    }
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    let mut bounds = [0usize; 3];
    let d = parts[0].1.d();
    for (split, (examples, m)) in parts.iter().enumerate() {
        let index: HashMap<u64, usize> =
            m.ids().iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let mut sorted: Vec<&ProbingExample> = examples.iter().collect();
        sorted.sort_by_key(|e| e.source_id);
        for e in sorted {
            match index.get(&e.source_id) {
                Some(&r) => rows.push((e.source_id, e.prop_label as usize, *m, r)),
                None => missing.push(e.source_id),
            }
        }
        bounds[split] = rows.len();
    }
    if !missing.is_empty() {
        return Err(JoinError::MissingIds {
            count: missing.len(),
            listed: missing.into_iter().take(10).collect(),
        });
    }
    let mut features = Array2::zeros((rows.len(), d));
    for (i, (_, _, m, r)) in rows.iter().enumerate() {
        assert_eq!(m.d(), d, "per-split matrices must share one dimension");
        for (dst, &src) in features.row_mut(i).iter_mut().zip(m.row(*r)) {
            *dst = src as f64;
        }
    }
    Ok(ProbeInput {
        ids: rows.iter().map(|r| r.0).collect(),
        labels: rows.iter().map(|r| r.1).collect(),
        features,
        k: 2,
        train: 0..bounds[0],
        valid: bounds[0]..bounds[1],
        test: bounds[1]..bounds[2],
    })
}
