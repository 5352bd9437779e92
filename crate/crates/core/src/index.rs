//! The on-disk index: per-projection bucket files plus a bitmap catalog.
//!
//! Layout under the index directory:
//!
//! ```text
//! manifest.json            parameters, dataset shape, file inventory, sizes
//! proj_<i>/cell_<j>.bkt    bucket file for cell j of projection i
//! proj_<i>/bitmaps.cat     per-cell image bitmaps with an offset table
//! ```
//!
//! A bucket file holds fixed-width `(point_id, image_id, projected_value)`
//! records sorted by projected value; one file per nonempty cell makes the
//! per-radius file set literal and gives the bitmap skip test file
//! granularity. Empty cells produce no file. The catalog is loaded into
//! memory when the index is opened; catalog bytes count as storage overhead,
//! not query IO.
//!
//! All integers are little-endian. Building is deterministic: the same
//! dataset, parameters and seed produce a byte-identical directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitmap::CompressedBitmap;
use crate::data::DatasetBundle;
use crate::hashing::ProjectionFamily;
use crate::model::Params;
use crate::{Error, Result};

pub const BUCKET_MAGIC: [u8; 4] = *b"BKT1";
pub const CATALOG_MAGIC: [u8; 4] = *b"BCT1";
const BUCKET_HEADER_LEN: usize = 8;
const BUCKET_RECORD_LEN: usize = 16;
const CATALOG_TABLE_ENTRY_LEN: usize = 20;
pub const MANIFEST_NAME: &str = "manifest.json";

/// One record of a bucket file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketEntry {
    pub point_id: u32,
    pub image_id: u32,
    pub projected: f64,
}

/// Byte-exact IO accounting for one query. Bucket bytes cover index files
/// actually read from disk; data bytes cover raw vectors fetched for
/// candidate verification. Catalog bitmaps are memory-resident and excluded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoMeter {
    pub bucket_bytes_read: u64,
    pub bucket_files_read: u64,
    pub bucket_files_skipped: u64,
    pub data_bytes_read: u64,
}

impl IoMeter {
    pub fn reset(&mut self) {
        *self = IoMeter::default();
    }
}

/// Inventory row for one bucket file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub projection: usize,
    pub cell: i64,
    pub entries: u32,
    pub bytes: u64,
}

/// Everything needed to reopen and query an index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub params: Params,
    /// Point count.
    pub n: u64,
    /// Image count; also the bit length of every catalog bitmap.
    pub s: u32,
    /// Descriptor dimensionality.
    pub d: usize,
    pub bucket_bytes_total: u64,
    pub bitmap_bytes_total: u64,
    pub files: Vec<FileEntry>,
}

impl IndexManifest {
    /// Bitmap catalog bytes over bucket bytes: the storage cost of the
    /// pruning structure.
    pub fn bitmap_overhead_ratio(&self) -> f64 {
        self.bitmap_bytes_total as f64 / self.bucket_bytes_total as f64
    }
}

pub fn encode_bucket(entries: &[BucketEntry]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(BUCKET_HEADER_LEN + entries.len() * BUCKET_RECORD_LEN);
    buf.extend_from_slice(&BUCKET_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&e.point_id.to_le_bytes());
        buf.extend_from_slice(&e.image_id.to_le_bytes());
        buf.extend_from_slice(&e.projected.to_le_bytes());
    }
    buf
}

pub fn decode_bucket(bytes: &[u8]) -> Result<Vec<BucketEntry>> {
    if bytes.len() < BUCKET_HEADER_LEN || bytes[0..4] != BUCKET_MAGIC {
        return Err(Error::Format("bad bucket file header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != BUCKET_HEADER_LEN + count * BUCKET_RECORD_LEN {
        return Err(Error::Format(format!(
            "bucket file length {} does not match {count} entries",
            bytes.len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for chunk in bytes[BUCKET_HEADER_LEN..].chunks_exact(BUCKET_RECORD_LEN) {
        entries.push(BucketEntry {
            point_id: u32::from_le_bytes(chunk[0..4].try_into().unwrap()),
            image_id: u32::from_le_bytes(chunk[4..8].try_into().unwrap()),
            projected: f64::from_le_bytes(chunk[8..16].try_into().unwrap()),
        });
    }
    Ok(entries)
}

/// Serializes one projection's bitmaps: magic, cell count, then a table of
/// (cell, absolute offset, length) rows followed by the bitmap records.
pub fn encode_catalog(cells: &BTreeMap<i64, CompressedBitmap>) -> Vec<u8> {
    let blobs: Vec<(i64, Vec<u8>)> = cells
        .iter()
        .map(|(&cell, bitmap)| (cell, bitmap.serialize()))
        .collect();
    let header_len = 8 + blobs.len() * CATALOG_TABLE_ENTRY_LEN;
    let mut buf = Vec::with_capacity(header_len);
    buf.extend_from_slice(&CATALOG_MAGIC);
    buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for (cell, blob) in &blobs {
        buf.extend_from_slice(&cell.to_le_bytes());
        buf.extend_from_slice(&offset.to_le_bytes());
        buf.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        offset += blob.len() as u64;
    }
    for (_, blob) in &blobs {
        buf.extend_from_slice(blob);
    }
    buf
}

pub fn decode_catalog(bytes: &[u8]) -> Result<BTreeMap<i64, CompressedBitmap>> {
    if bytes.len() < 8 || bytes[0..4] != CATALOG_MAGIC {
        return Err(Error::Format("bad bitmap catalog header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_len = 8 + count * CATALOG_TABLE_ENTRY_LEN;
    if bytes.len() < header_len {
        return Err(Error::Format("bitmap catalog table truncated".into()));
    }
    let mut cells = BTreeMap::new();
    let mut prev_cell: Option<i64> = None;
    for row in 0..count {
        let at = 8 + row * CATALOG_TABLE_ENTRY_LEN;
        let cell = i64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let offset = u64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap()) as usize;
        let len = u32::from_le_bytes(bytes[at + 16..at + 20].try_into().unwrap()) as usize;
        if prev_cell.is_some_and(|p| p >= cell) {
            return Err(Error::Format("bitmap catalog cells out of order".into()));
        }
        prev_cell = Some(cell);
        let end = offset
            .checked_add(len)
            .ok_or_else(|| Error::Format("bitmap catalog offset overflow".into()))?;
        if end > bytes.len() {
            return Err(Error::Format("bitmap catalog blob out of range".into()));
        }
        cells.insert(cell, CompressedBitmap::deserialize(&bytes[offset..end])?);
    }
    Ok(cells)
}

fn proj_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("proj_{i}"))
}

fn bucket_path(root: &Path, i: usize, cell: i64) -> PathBuf {
    proj_dir(root, i).join(format!("cell_{cell}.bkt"))
}

/// Builds the full index for a dataset under `out_dir` (which must be empty
/// or absent) and returns the manifest that was written.
pub fn build_index(bundle: &DatasetBundle, params: &Params, out_dir: &Path) -> Result<IndexManifest> {
    params.validate()?;
    if bundle.points.is_empty() {
        return Err(Error::Build("cannot index an empty dataset".into()));
    }
    fs::create_dir_all(out_dir)?;
    if fs::read_dir(out_dir)?.next().is_some() {
        return Err(Error::Build(format!(
            "output directory {} is not empty",
            out_dir.display()
        )));
    }

    let family = ProjectionFamily::new(params.seed, params.m, bundle.dim, params.w, params.c);
    let s = bundle.image_count() as u32;
    let mut files = Vec::new();
    let mut bucket_bytes_total = 0u64;
    let mut bitmap_bytes_total = 0u64;

    for i in 0..params.m {
        let mut cells: BTreeMap<i64, Vec<BucketEntry>> = BTreeMap::new();
        for p in &bundle.points {
            let projected = family.project(i, &p.vector)?;
            cells.entry(family.cell_of(projected)).or_default().push(BucketEntry {
                point_id: p.point_id,
                image_id: p.image_id,
                projected,
            });
        }
        fs::create_dir_all(proj_dir(out_dir, i))?;
        let mut catalog: BTreeMap<i64, CompressedBitmap> = BTreeMap::new();
        for (&cell, entries) in cells.iter_mut() {
            entries.sort_by(|a, b| a.projected.total_cmp(&b.projected).then(a.point_id.cmp(&b.point_id)));
            let bytes = encode_bucket(entries);
            fs::write(bucket_path(out_dir, i, cell), &bytes)?;
            let mut bitmap = CompressedBitmap::empty(s);
            for e in entries.iter() {
                bitmap.set(e.image_id)?;
            }
            catalog.insert(cell, bitmap);
            files.push(FileEntry {
                projection: i,
                cell,
                entries: entries.len() as u32,
                bytes: bytes.len() as u64,
            });
            bucket_bytes_total += bytes.len() as u64;
        }
        let catalog_bytes = encode_catalog(&catalog);
        fs::write(proj_dir(out_dir, i).join("bitmaps.cat"), &catalog_bytes)?;
        bitmap_bytes_total += catalog_bytes.len() as u64;
    }

    let manifest = IndexManifest {
        format_version: 1,
        params: params.clone(),
        n: bundle.n() as u64,
        s,
        d: bundle.dim,
        bucket_bytes_total,
        bitmap_bytes_total,
        files,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(out_dir.join(MANIFEST_NAME), json)?;
    Ok(manifest)
}

/// Read access to a built index. The bitmap catalogs are held in memory for
/// the life of the reader; bucket files are read from disk on demand, each
/// read metered at its exact on-disk size.
pub struct IndexReader {
    root: PathBuf,
    manifest: IndexManifest,
    catalogs: Vec<BTreeMap<i64, CompressedBitmap>>,
    inventory: HashMap<(usize, i64), u64>,
}

impl IndexReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_bytes = fs::read(dir.join(MANIFEST_NAME))?;
        let manifest: IndexManifest = serde_json::from_slice(&manifest_bytes)?;
        if manifest.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported index format version {}",
                manifest.format_version
            )));
        }
        let mut catalogs = Vec::with_capacity(manifest.params.m);
        for i in 0..manifest.params.m {
            let path = proj_dir(dir, i).join("bitmaps.cat");
            let catalog = decode_catalog(&fs::read(&path)?)?;
            for bitmap in catalog.values() {
                if bitmap.bit_len() != manifest.s {
                    return Err(Error::Format(format!(
                        "catalog bitmap length {} does not match image count {}",
                        bitmap.bit_len(),
                        manifest.s
                    )));
                }
            }
            catalogs.push(catalog);
        }
        let inventory = manifest
            .files
            .iter()
            .map(|f| ((f.projection, f.cell), f.bytes))
            .collect();
        Ok(IndexReader {
            root: dir.to_path_buf(),
            manifest,
            catalogs,
            inventory,
        })
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    /// Rebuilds the projection family the index was constructed with;
    /// projections are derived from the manifest, never stored.
    pub fn family(&self) -> ProjectionFamily {
        let p = &self.manifest.params;
        ProjectionFamily::new(p.seed, p.m, self.manifest.d, p.w, p.c)
    }

    /// Reads the bucket file for `(projection, cell)`. A cell with no file is
    /// a valid empty cell: no bytes are metered. Every real read is metered
    /// at the file's exact size, with no caching between calls.
    pub fn read_bucket(&self, projection: usize, cell: i64, meter: &mut IoMeter) -> Result<Vec<BucketEntry>> {
        if !self.inventory.contains_key(&(projection, cell)) {
            return Ok(Vec::new());
        }
        let bytes = fs::read(bucket_path(&self.root, projection, cell))?;
        meter.bucket_bytes_read += bytes.len() as u64;
        meter.bucket_files_read += 1;
        decode_bucket(&bytes)
    }

    /// The catalog bitmap of a cell, without touching the bucket meter.
    pub fn bucket_bitmap(&self, projection: usize, cell: i64) -> Option<&CompressedBitmap> {
        self.catalogs.get(projection)?.get(&cell)
    }

    /// Nonempty cells of one projection, ascending.
    pub fn cells(&self, projection: usize) -> impl Iterator<Item = i64> + '_ {
        self.catalogs[projection].keys().copied()
    }

    /// Smallest and largest nonempty cell of a projection. Query windows can
    /// be clamped to this span: cells outside it never hold a file.
    pub fn cell_bounds(&self, projection: usize) -> Option<(i64, i64)> {
        let catalog = self.catalogs.get(projection)?;
        let mut keys = catalog.keys();
        let first = keys.next()?;
        let last = catalog.keys().next_back()?;
        Some((*first, *last))
    }
}
