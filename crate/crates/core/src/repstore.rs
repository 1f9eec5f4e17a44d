//! Labeled representation sets and their on-disk format.
//!
//! A representation file holds one concept at one layer:
//!
//! ```text
//! "GCSR" | version: u32 | d: u32 | n: u64 | n*d f32 (row-major) | n u8 labels
//! ```
//!
//! All integers and floats are little-endian. The CRC-32 of everything after
//! the header (matrix bytes followed by label bytes) is recorded in a JSON
//! sidecar named `<stem>.manifest.json` next to the payload file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GcsError, Result};

pub const REPR_MAGIC: [u8; 4] = *b"GCSR";
pub const REPR_VERSION: u32 = 1;
pub const REPR_HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Last-token hidden states for one concept at one layer, with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledReprSet {
    pub concept_id: String,
    pub layer: u32,
    dim: usize,
    reprs: Vec<f32>,
    labels: Vec<u8>,
}

impl LabeledReprSet {
    /// Builds a set from a row-major `n x dim` matrix and `n` labels.
    pub fn new(
        concept_id: impl Into<String>,
        layer: u32,
        dim: usize,
        reprs: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(GcsError::InvalidSet("dimension must be positive".into()));
        }
        if labels.is_empty() || reprs.is_empty() {
            return Err(GcsError::EmptySet);
        }
        if reprs.len() != labels.len() * dim {
            return Err(GcsError::InvalidSet(format!(
                "{} labels but {} values for dimension {}",
                labels.len(),
                reprs.len(),
                dim
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l > 1) {
            return Err(GcsError::InvalidSet(format!(
                "label {} at row {pos} is not binary",
                labels[pos]
            )));
        }
        if let Some(pos) = reprs.iter().position(|x| !x.is_finite()) {
            return Err(GcsError::InvalidSet(format!(
                "non-finite value in row {}",
                pos / dim
            )));
        }
        Ok(Self {
            concept_id: concept_id.into(),
            layer,
            dim,
            reprs,
            labels,
        })
    }

    /// Builds a set from individual rows.
    pub fn from_rows(
        concept_id: impl Into<String>,
        layer: u32,
        rows: &[Vec<f32>],
        labels: Vec<u8>,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(GcsError::EmptySet)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(GcsError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        let reprs = rows.iter().flatten().copied().collect();
        Self::new(concept_id, layer, dim, reprs, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false for a constructed set; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.reprs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.reprs.chunks_exact(self.dim)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn reprs(&self) -> &[f32] {
        &self.reprs
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == 1).collect()
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == 0).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    /// New set made of the given rows, duplicates and order preserved.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut reprs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            reprs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.concept_id.clone(), self.layer, self.dim, reprs, labels)
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.reprs.len() * 4 + self.labels.len());
        for v in &self.reprs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        out
    }

    /// Full file image: header followed by payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload_bytes();
        let mut out = Vec::with_capacity(REPR_HEADER_LEN + payload.len());
        out.extend_from_slice(&REPR_MAGIC);
        out.extend_from_slice(&REPR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// CRC-32 of the payload (matrix then labels).
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.payload_bytes())
    }
}

/// Provenance sidecar for a representation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReprManifest {
    pub concept_id: String,
    pub layer: u32,
    pub source_model: String,
    pub n_positive: u64,
    pub n_negative: u64,
    pub seed: u64,
    pub checksum: u32,
}

impl ReprManifest {
    /// Manifest describing `set`, with counts and checksum filled in.
    pub fn describe(set: &LabeledReprSet, source_model: impl Into<String>, seed: u64) -> Self {
        Self {
            concept_id: set.concept_id.clone(),
            layer: set.layer,
            source_model: source_model.into(),
            n_positive: set.n_positive() as u64,
            n_negative: set.n_negative() as u64,
            seed,
            checksum: set.checksum(),
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Parsed file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    dim: usize,
    n: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(GcsError::Truncated {
            needed: REPR_HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != REPR_MAGIC {
        return Err(GcsError::BadMagic {
            expected: REPR_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < REPR_HEADER_LEN {
        return Err(GcsError::Truncated {
            needed: REPR_HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != REPR_VERSION {
        return Err(GcsError::VersionMismatch {
            expected: REPR_VERSION,
            found: version,
        });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    Ok(Header { dim, n })
}

/// Writes `set` and its manifest sidecar. The manifest's counts and checksum
/// are recomputed from `set`; the finalized manifest is returned.
pub fn write_repr_set(
    set: &LabeledReprSet,
    manifest: &ReprManifest,
    path: &Path,
) -> Result<ReprManifest> {
    if set.is_empty() {
        return Err(GcsError::EmptySet);
    }
    let n_pos = set.n_positive() as u64;
    let n_neg = set.n_negative() as u64;
    if manifest.n_positive + manifest.n_negative != set.len() as u64 {
        return Err(GcsError::InvalidSet(format!(
            "manifest counts {}+{} do not match {} rows",
            manifest.n_positive,
            manifest.n_negative,
            set.len()
        )));
    }
    let bytes = set.to_bytes();
    let recorded = ReprManifest {
        concept_id: set.concept_id.clone(),
        layer: set.layer,
        n_positive: n_pos,
        n_negative: n_neg,
        checksum: crc32fast::hash(&bytes[REPR_HEADER_LEN..]),
        ..manifest.clone()
    };
    fs::write(path, &bytes)?;
    let json = serde_json::to_string_pretty(&recorded).expect("manifest serializes");
    fs::write(manifest_path(path), json + "\n")?;
    Ok(recorded)
}

/// Reads and validates a representation file and its manifest sidecar.
pub fn read_repr_set(path: &Path) -> Result<(LabeledReprSet, ReprManifest)> {
    if !path.exists() {
        return Err(GcsError::MissingInput(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let header = parse_header(&bytes)?;
    let matrix_len = header
        .n
        .checked_mul(header.dim)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| GcsError::InvalidSet("header sizes overflow".into()))?;
    let needed = REPR_HEADER_LEN + matrix_len + header.n;
    if bytes.len() < needed {
        return Err(GcsError::Truncated {
            needed: needed as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() > needed {
        return Err(GcsError::InvalidSet(format!(
            "{} trailing bytes after payload",
            bytes.len() - needed
        )));
    }

    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Err(GcsError::MissingInput(mpath));
    }
    let text = fs::read_to_string(&mpath)?;
    let manifest: ReprManifest =
        serde_json::from_str(&text).map_err(|source| GcsError::Manifest {
            path: mpath.clone(),
            source,
        })?;
    let found = crc32fast::hash(&bytes[REPR_HEADER_LEN..]);
    if found != manifest.checksum {
        return Err(GcsError::ChecksumMismatch {
            expected: manifest.checksum,
            found,
        });
    }

    let reprs = bytes[REPR_HEADER_LEN..REPR_HEADER_LEN + matrix_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = bytes[REPR_HEADER_LEN + matrix_len..].to_vec();
    let set = LabeledReprSet::new(
        manifest.concept_id.clone(),
        manifest.layer,
        header.dim,
        reprs,
        labels,
    )?;
    if manifest.n_positive + manifest.n_negative != set.len() as u64 {
        return Err(GcsError::InvalidSet(format!(
            "manifest counts {}+{} do not match {} rows",
            manifest.n_positive,
            manifest.n_negative,
            set.len()
        )));
    }
    Ok((set, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledReprSet {
        LabeledReprSet::new("c", 3, 3, vec![1., 0., 0., 0., 1., 0.], vec![1, 0]).unwrap()
    }

    #[test]
    fn tiny_set_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.gcsr");
        let set = tiny();
        write_repr_set(&set, &ReprManifest::describe(&set, "unit", 0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), REPR_HEADER_LEN + 24 + 2);
        assert_eq!(&bytes[..4], b"GCSR");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[44..], &[1, 0]);
        let (back, manifest) = read_repr_set(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(manifest.n_positive, 1);
        assert_eq!(manifest.n_negative, 1);
        assert!(dir.path().join("c.manifest.json").exists());
    }

    #[test]
    fn empty_set_rejected() {
        let err = LabeledReprSet::new("c", 0, 3, vec![], vec![]).unwrap_err();
        assert_eq!(err.to_string(), "empty representation set");
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(
            LabeledReprSet::new("c", 0, 2, vec![1.0, f32::NAN], vec![1]),
            Err(GcsError::InvalidSet(_))
        ));
        assert!(matches!(
            LabeledReprSet::new("c", 0, 2, vec![1.0, 2.0], vec![2]),
            Err(GcsError::InvalidSet(_))
        ));
        assert!(matches!(
            LabeledReprSet::new("c", 0, 2, vec![1.0, 2.0, 3.0], vec![1]),
            Err(GcsError::InvalidSet(_))
        ));
        assert!(matches!(
            LabeledReprSet::new("c", 0, 0, vec![], vec![1]),
            Err(GcsError::InvalidSet(_))
        ));
    }

    #[test]
    fn manifest_count_mismatch_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.gcsr");
        let set = tiny();
        let mut m = ReprManifest::describe(&set, "unit", 0);
        m.n_negative = 5;
        assert!(write_repr_set(&set, &m, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn corrupted_payload_is_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.gcsr");
        let set = tiny();
        write_repr_set(&set, &ReprManifest::describe(&set, "unit", 0), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[REPR_HEADER_LEN + 5] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_repr_set(&path),
            Err(GcsError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.gcsr");
        let set = tiny();
        write_repr_set(&set, &ReprManifest::describe(&set, "unit", 0), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_repr_set(&path), Err(GcsError::BadMagic { .. })));

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            read_repr_set(&path),
            Err(GcsError::VersionMismatch { found: 2, .. })
        ));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_repr_set(&path), Err(GcsError::Truncated { .. })));

        fs::write(&path, &good[..10]).unwrap();
        assert!(matches!(read_repr_set(&path), Err(GcsError::Truncated { .. })));
    }

    #[test]
    fn missing_file_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.gcsr");
        assert!(matches!(read_repr_set(&path), Err(GcsError::MissingInput(_))));
        let set = tiny();
        fs::write(&path, set.to_bytes()).unwrap();
        assert!(matches!(read_repr_set(&path), Err(GcsError::MissingInput(p)) if p.ends_with("nope.manifest.json")));
    }

    #[test]
    fn writes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny();
        let m = ReprManifest::describe(&set, "unit", 9);
        let a = dir.path().join("a.gcsr");
        let b = dir.path().join("b.gcsr");
        write_repr_set(&set, &m, &a).unwrap();
        write_repr_set(&set, &m, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(manifest_path(&a)).unwrap(),
            fs::read(manifest_path(&b)).unwrap()
        );
    }
}
