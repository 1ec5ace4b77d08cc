//! Persistence and geo-indexed retrieval of history records.
//!
//! `.sqh` layout (little-endian):
//!
//! | field             | type          |
//! |-------------------|---------------|
//! | magic `SQH1`      | 4 bytes       |
//! | version           | u16           |
//! | anchor position   | 3 x f64       |
//! | anchor arclength  | f64           |
//! | delta_m           | f32           |
//! | d                 | u32           |
//! | t_used            | u32           |
//! | cfg fingerprint   | u64           |
//! | entry count       | u64           |
//! | entries           | count x (3 x i32, d x f32), sorted by (i, j, k) |
//! | CRC-32            | u32 over every preceding byte |
//!
//! A store directory holds one `.sqh` per anchor and a `store.json` index.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bytes::{checked_len, Reader};
use crate::error::{DecodeError, Error, Result};
use crate::sparse_grid::{SparseFeatureGrid, VoxelCoord};
use crate::squash_builder::{Anchor, SquashRecord};

pub const SQH_MAGIC: [u8; 4] = *b"SQH1";
pub const SQH_VERSION: u16 = 1;
/// Bytes before the first entry.
pub const SQH_HEADER_LEN: usize = 66;
pub const SQH_TRAILER_LEN: usize = 4;
pub const STORE_MANIFEST: &str = "store.json";

/// Serialized size of one entry of width `d`.
pub fn entry_len(d: usize) -> usize {
    12 + 4 * d
}

pub fn encode_record(record: &SquashRecord) -> Vec<u8> {
    let grid = record.grid();
    let d = grid.d();
    let mut out = Vec::with_capacity(SQH_HEADER_LEN + grid.len() * entry_len(d) + SQH_TRAILER_LEN);
    out.extend_from_slice(&SQH_MAGIC);
    out.extend_from_slice(&SQH_VERSION.to_le_bytes());
    for v in record.anchor.position {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&record.anchor.arclength.to_le_bytes());
    out.extend_from_slice(&grid.delta_m().to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&record.t_used.to_le_bytes());
    out.extend_from_slice(&record.cfg_fingerprint.to_le_bytes());
    out.extend_from_slice(&(grid.len() as u64).to_le_bytes());
    debug_assert_eq!(out.len(), SQH_HEADER_LEN);
    for (c, f) in grid.sorted_entries() {
        out.extend_from_slice(&c.i.to_le_bytes());
        out.extend_from_slice(&c.j.to_le_bytes());
        out.extend_from_slice(&c.k.to_le_bytes());
        for v in f {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a `.sqh` buffer. Accepts only canonical encodings, so a buffer that
/// decodes re-encodes to identical bytes.
pub fn decode_record(buf: &[u8]) -> Result<SquashRecord, DecodeError> {
    let mut r = Reader::new(buf);
    r.magic(SQH_MAGIC)?;
    let version = r.u16()?;
    if version != SQH_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let min = SQH_HEADER_LEN + SQH_TRAILER_LEN;
    if buf.len() < min {
        return Err(DecodeError::Truncated { needed: min, available: buf.len() });
    }
    let position = [r.f64()?, r.f64()?, r.f64()?];
    let arclength = r.f64()?;
    let delta_m = r.f32()?;
    let d = r.u32()? as usize;
    let t_used = r.u32()?;
    let cfg_fingerprint = r.u64()?;
    let count = usize::try_from(r.u64()?).unwrap_or(usize::MAX);

    let expected = checked_len(&[count, entry_len(d)])
        .ok()
        .and_then(|b| b.checked_add(min))
        .unwrap_or(usize::MAX);
    let body_end = buf.len() - SQH_TRAILER_LEN;
    let stored = u32::from_le_bytes(buf[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&buf[..body_end]);
    if stored != computed {
        if buf.len() < expected {
            return Err(DecodeError::Truncated { needed: expected, available: buf.len() });
        }
        return Err(DecodeError::ChecksumMismatch { stored, computed });
    }
    if buf.len() != expected {
        return Err(DecodeError::malformed(format!(
            "length {} does not match {count} entries of width {d}",
            buf.len()
        )));
    }
    if !(delta_m.is_finite() && delta_m > 0.0) {
        return Err(DecodeError::malformed("delta_m must be positive"));
    }
    if d == 0 || t_used == 0 {
        return Err(DecodeError::malformed("d and t_used must be >= 1"));
    }
    if !position.iter().chain([&arclength]).all(|v| v.is_finite()) {
        return Err(DecodeError::malformed("anchor must be finite"));
    }
    let mut grid = SparseFeatureGrid::new(delta_m, d).map_err(|e| DecodeError::malformed(e.to_string()))?;
    let mut prev: Option<VoxelCoord> = None;
    for _ in 0..count {
        let c = VoxelCoord::new(r.i32()?, r.i32()?, r.i32()?);
        if prev.is_some_and(|p| p >= c) {
            return Err(DecodeError::malformed("entries not strictly sorted by (i, j, k)"));
        }
        prev = Some(c);
        let f = r.finite_f32s(d, "features")?;
        if f.iter().all(|&v| v == 0.0) {
            return Err(DecodeError::malformed("stored all-zero feature vector"));
        }
        grid.insert(c, &f).map_err(|e| DecodeError::malformed(e.to_string()))?;
    }
    r.take(SQH_TRAILER_LEN)?;
    r.finish()?;
    SquashRecord::new(Anchor { arclength, position }, grid, t_used, cfg_fingerprint)
        .map_err(|e| DecodeError::malformed(e.to_string()))
}

pub fn save_record(path: impl AsRef<Path>, record: &SquashRecord) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_record(record)).map_err(|e| Error::io(path, e))
}

pub fn load_record(path: impl AsRef<Path>) -> Result<SquashRecord> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_record(&buf).map_err(|e| Error::decode_at(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub arclength: f64,
    pub position: [f64; 3],
    pub file: String,
}

/// Contents of `store.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub route_id: String,
    /// Hex-encoded so JSON readers without 64-bit integers keep it intact.
    pub cfg_fingerprint: String,
    pub anchors: Vec<AnchorEntry>,
}

impl StoreManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: StoreManifest = serde_json::from_str(text)?;
        parse_fingerprint(&m.cfg_fingerprint)?;
        for a in &m.anchors {
            let p = Path::new(&a.file);
            if p.components().count() != 1 || !matches!(p.components().next(), Some(std::path::Component::Normal(_))) {
                return Err(Error::validation(format!("anchor file `{}` must be a bare file name", a.file)));
            }
        }
        Ok(m)
    }

    pub fn fingerprint(&self) -> Result<u64> {
        parse_fingerprint(&self.cfg_fingerprint)
    }
}

fn format_fingerprint(f: u64) -> String {
    format!("{f:016x}")
}

fn parse_fingerprint(s: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::validation(format!("bad cfg fingerprint `{s}`")))
}

/// Result of a nearest-anchor lookup.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub record: &'a SquashRecord,
    /// Euclidean distance from the query position to the anchor.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordSize {
    pub anchor_arclength: f64,
    pub delta_m: f32,
    pub voxels: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaGroup {
    pub delta_m: f32,
    pub records: usize,
    pub bytes: usize,
}

/// Uncompressed serialized sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageReport {
    pub records: Vec<RecordSize>,
    pub total_bytes: usize,
    /// Grouped by voxel size, ascending.
    pub by_delta: Vec<DeltaGroup>,
}

/// Records of one route, ordered by anchor arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashStore {
    route_id: String,
    records: Vec<SquashRecord>,
}

impl SquashStore {
    /// Anchors must have distinct arclengths and positions.
    pub fn new(route_id: impl Into<String>, mut records: Vec<SquashRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.anchor.arclength.total_cmp(&b.anchor.arclength));
        for w in records.windows(2) {
            if w[0].anchor.arclength == w[1].anchor.arclength || w[0].anchor.position == w[1].anchor.position {
                return Err(Error::validation(format!(
                    "duplicate anchor at arclength {}",
                    w[1].anchor.arclength
                )));
            }
        }
        Ok(Self {
            route_id: route_id.into(),
            records,
        })
    }

    pub fn route_id(&self) -> &str {
        &self.route_id
    }

    pub fn records(&self) -> &[SquashRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record whose anchor is nearest to `position`; ties go to the lower
    /// arclength.
    pub fn retrieve(&self, position: [f64; 3]) -> Result<Retrieved<'_>> {
        let mut best: Option<Retrieved<'_>> = None;
        for record in &self.records {
            let p = record.anchor.position;
            let distance = ((p[0] - position[0]).powi(2) + (p[1] - position[1]).powi(2) + (p[2] - position[2]).powi(2)).sqrt();
            // records are sorted by arclength, so strict < keeps the lower one on ties
            if best.map_or(true, |b| distance < b.distance) {
                best = Some(Retrieved { record, distance });
            }
        }
        best.ok_or_else(|| Error::NotFound("store has no records".into()))
    }

    pub fn storage_report(&self) -> StorageReport {
        let records: Vec<RecordSize> = self
            .records
            .iter()
            .map(|r| RecordSize {
                anchor_arclength: r.anchor.arclength,
                delta_m: r.grid().delta_m(),
                voxels: r.grid().len(),
                bytes: SQH_HEADER_LEN + r.grid().len() * entry_len(r.grid().d()) + SQH_TRAILER_LEN,
            })
            .collect();
        let mut groups: BTreeMap<u32, DeltaGroup> = BTreeMap::new();
        for r in &records {
            // positive floats order like their bit patterns
            let g = groups.entry(r.delta_m.to_bits()).or_insert(DeltaGroup {
                delta_m: r.delta_m,
                records: 0,
                bytes: 0,
            });
            g.records += 1;
            g.bytes += r.bytes;
        }
        StorageReport {
            total_bytes: records.iter().map(|r| r.bytes).sum(),
            records,
            by_delta: groups.into_values().collect(),
        }
    }

    fn manifest(&self) -> StoreManifest {
        let fingerprint = self.records.first().map_or(0, |r| r.cfg_fingerprint);
        StoreManifest {
            route_id: self.route_id.clone(),
            cfg_fingerprint: format_fingerprint(fingerprint),
            anchors: self
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| AnchorEntry {
                    arclength: r.anchor.arclength,
                    position: r.anchor.position,
                    file: format!("anchor_{i:06}.sqh"),
                })
                .collect(),
        }
    }

    /// Writes the store into a sibling temporary directory and renames it
    /// over `dir`, so a failed write leaves no partial store behind.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let name = dir
            .file_name()
            .ok_or_else(|| Error::validation(format!("{} has no file name", dir.display())))?;
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp: PathBuf = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
        let result = self.write_into(&tmp).and_then(|()| {
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
        });
        if result.is_err() {
            let _ = fs::remove_dir_all(&tmp);
        }
        result
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        for (entry, record) in manifest.anchors.iter().zip(&self.records) {
            save_record(dir.join(&entry.file), record)?;
        }
        let path = dir.join(STORE_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(STORE_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = StoreManifest::parse(&text)?;
        let fingerprint = manifest.fingerprint()?;
        let mut records = Vec::with_capacity(manifest.anchors.len());
        for entry in &manifest.anchors {
            let rec = load_record(dir.join(&entry.file))?;
            if rec.cfg_fingerprint != fingerprint {
                return Err(Error::validation(format!(
                    "{}: fingerprint {:016x} differs from store {:016x}",
                    entry.file, rec.cfg_fingerprint, fingerprint
                )));
            }
            if rec.anchor.arclength.to_bits() != entry.arclength.to_bits() {
                return Err(Error::validation(format!("{}: anchor does not match store.json", entry.file)));
            }
            records.push(rec);
        }
        Self::new(manifest.route_id, records)
    }
}
