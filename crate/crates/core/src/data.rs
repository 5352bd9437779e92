//! Dataset ingestion and synthetic data generation.
//!
//! Descriptor vectors are read from fvecs/bvecs files (per record: a 32-bit
//! little-endian dimension, then that many values). Point-to-image ownership
//! comes from a sidecar image map: UTF-8 text, one line per point in file
//! order, `imageId` or `imageId,category`. The synthetic generator produces
//! clustered bags with ground-truth categories for desk-scale evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{DescriptorPoint, ImageRecord};
use crate::{Error, Result};

/// A fully loaded dataset: every descriptor point plus the image records that
/// own them. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    /// Indexed by point id.
    pub points: Vec<DescriptorPoint>,
    /// Indexed by image id.
    pub images: Vec<ImageRecord>,
    pub dim: usize,
}

impl DatasetBundle {
    pub fn from_parts(points: Vec<DescriptorPoint>, images: Vec<ImageRecord>) -> Result<Self> {
        let dim = points.first().map(|p| p.vector.len()).unwrap_or(0);
        let bundle = DatasetBundle { points, images, dim };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn point(&self, id: u32) -> Result<&DescriptorPoint> {
        self.points.get(id as usize).ok_or(Error::OutOfBounds {
            index: id as usize,
            len: self.points.len(),
        })
    }

    pub fn image(&self, id: u32) -> Result<&ImageRecord> {
        self.images.get(id as usize).ok_or(Error::UnknownImage(id))
    }

    pub fn has_categories(&self) -> bool {
        !self.images.is_empty() && self.images.iter().all(|img| img.category.is_some())
    }

    /// Single validation routine shared by the loaders and the generator.
    /// Ids must be dense, dimensions consistent with the first point, and
    /// every point owned by exactly one image.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Format("dataset has no points".into()));
        }
        if self.images.is_empty() {
            return Err(Error::Format("dataset has no images".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.point_id as usize != i {
                return Err(Error::Format(format!(
                    "point id {} stored at position {i}",
                    p.point_id
                )));
            }
            if p.vector.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: p.vector.len(),
                });
            }
            if p.image_id as usize >= self.images.len() {
                return Err(Error::UnknownImage(p.image_id));
            }
        }
        let mut owned = vec![0u32; self.points.len()];
        for (j, img) in self.images.iter().enumerate() {
            if img.image_id as usize != j {
                return Err(Error::Format(format!(
                    "image id {} stored at position {j}",
                    img.image_id
                )));
            }
            if img.descriptor_ids.is_empty() {
                return Err(Error::EmptyDescriptorSet(img.image_id));
            }
            for &pid in &img.descriptor_ids {
                let p = self.point(pid)?;
                if p.image_id != img.image_id {
                    return Err(Error::Format(format!(
                        "point {pid} listed by image {} but owned by {}",
                        img.image_id, p.image_id
                    )));
                }
                owned[pid as usize] += 1;
            }
        }
        if let Some(pid) = owned.iter().position(|&c| c != 1) {
            return Err(Error::Format(format!(
                "point {pid} owned by {} images",
                owned[pid]
            )));
        }
        Ok(())
    }
}

fn read_vecs(path: &Path, bytes_per_value: usize) -> Result<(Vec<Vec<f32>>, usize)> {
    let raw = fs::read(path)?;
    let mut vectors = Vec::new();
    let mut dim: Option<usize> = None;
    let mut cursor = 0usize;
    while cursor < raw.len() {
        if cursor + 4 > raw.len() {
            return Err(Error::Format(format!(
                "{}: truncated record header at byte {cursor}",
                path.display()
            )));
        }
        let d = u32::from_le_bytes(raw[cursor..cursor + 4].try_into().unwrap()) as usize;
        cursor += 4;
        if d == 0 {
            return Err(Error::Format(format!("{}: zero-dimension record", path.display())));
        }
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Format(format!(
                    "{}: inconsistent dimension {d}, expected {expected}",
                    path.display()
                )));
            }
            _ => {}
        }
        let payload = d * bytes_per_value;
        if cursor + payload > raw.len() {
            return Err(Error::Format(format!(
                "{}: truncated vector payload at byte {cursor}",
                path.display()
            )));
        }
        let vector: Vec<f32> = match bytes_per_value {
            4 => raw[cursor..cursor + payload]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            1 => raw[cursor..cursor + payload].iter().map(|&b| b as f32).collect(),
            _ => unreachable!(),
        };
        cursor += payload;
        vectors.push(vector);
    }
    let dim = dim.ok_or_else(|| Error::Format(format!("{}: empty vector file", path.display())))?;
    Ok((vectors, dim))
}

/// Reads an fvecs file: 32-bit little-endian floats.
pub fn load_fvecs(path: &Path) -> Result<(Vec<Vec<f32>>, usize)> {
    read_vecs(path, 4)
}

/// Reads a bvecs file: one byte per value, widened to f32.
pub fn load_bvecs(path: &Path) -> Result<(Vec<Vec<f32>>, usize)> {
    read_vecs(path, 1)
}

/// Reads the sidecar image map: per point, its image id and optional category.
pub fn load_image_map(path: &Path) -> Result<Vec<(u32, Option<u32>)>> {
    let text = fs::read_to_string(path)?;
    let mut map = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let image_id: u32 = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad image id", path.display(), lineno + 1)))?;
        let category = match parts.next() {
            None => None,
            Some(c) => Some(c.trim().parse::<u32>().map_err(|_| {
                Error::Format(format!("{}:{}: bad category", path.display(), lineno + 1))
            })?),
        };
        map.push((image_id, category));
    }
    Ok(map)
}

fn assemble(vectors: Vec<Vec<f32>>, map: Vec<(u32, Option<u32>)>) -> Result<DatasetBundle> {
    if vectors.len() != map.len() {
        return Err(Error::Format(format!(
            "image map has {} entries for {} vectors",
            map.len(),
            vectors.len()
        )));
    }
    let mut points = Vec::with_capacity(vectors.len());
    let mut grouped: BTreeMap<u32, (Vec<u32>, Option<u32>)> = BTreeMap::new();
    for (pid, (vector, (image_id, category))) in vectors.into_iter().zip(map).enumerate() {
        points.push(DescriptorPoint {
            point_id: pid as u32,
            image_id,
            vector,
        });
        let entry = grouped.entry(image_id).or_insert_with(|| (Vec::new(), category));
        entry.0.push(pid as u32);
        if entry.1 != category {
            return Err(Error::Format(format!(
                "image {image_id} has conflicting categories"
            )));
        }
    }
    let s = grouped.len() as u32;
    let mut images = Vec::with_capacity(s as usize);
    for (expected, (image_id, (descriptor_ids, category))) in grouped.into_iter().enumerate() {
        if image_id != expected as u32 {
            return Err(Error::Format(format!(
                "image ids must be dense 0..{s}, missing {expected}"
            )));
        }
        images.push(ImageRecord {
            image_id,
            descriptor_ids,
            category,
        });
    }
    DatasetBundle::from_parts(points, images)
}

/// Loads a complete dataset from a vector file plus its image map. The
/// vector format is chosen by extension: `.bvecs` for bytes, fvecs otherwise.
pub fn load_dataset(vectors_path: &Path, map_path: &Path) -> Result<DatasetBundle> {
    let (vectors, _) = if vectors_path.extension().is_some_and(|e| e == "bvecs") {
        load_bvecs(vectors_path)?
    } else {
        load_fvecs(vectors_path)?
    };
    assemble(vectors, load_image_map(map_path)?)
}

/// Writes the bundle's vectors as fvecs, in point-id order.
pub fn write_fvecs(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in &bundle.points {
        out.write_all(&(p.vector.len() as u32).to_le_bytes())?;
        for &v in &p.vector {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes the sidecar image map matching [`write_fvecs`] order.
pub fn write_image_map(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in &bundle.points {
        match bundle.images[p.image_id as usize].category {
            Some(c) => writeln!(out, "{},{}", p.image_id, c)?,
            None => writeln!(out, "{}", p.image_id)?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Shape of a synthetic clustered dataset.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub images: u32,
    pub per_image: u32,
    pub dim: usize,
    pub categories: u32,
    pub spread: f64,
    pub seed: u64,
}

/// Range of the uniform category-center coordinates.
const CATEGORY_CENTER_RANGE: f64 = 20.0;

/// Generates a clustered dataset: each category gets a random center, each
/// image a center perturbed from its category center by `spread`, and each
/// descriptor is sampled around the image center with the same spread.
/// Deterministic in the seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    if cfg.images == 0 || cfg.per_image == 0 || cfg.dim == 0 || cfg.categories == 0 {
        return Err(Error::InvalidParams("counts must be positive".into()));
    }
    if !cfg.images.is_multiple_of(cfg.categories) {
        return Err(Error::InvalidParams(format!(
            "images ({}) must be divisible by categories ({})",
            cfg.images, cfg.categories
        )));
    }
    if cfg.spread < 0.0 {
        return Err(Error::InvalidParams("spread must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.categories)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| rng.random::<f64>() * CATEGORY_CENTER_RANGE)
                .collect()
        })
        .collect();
    let per_category = cfg.images / cfg.categories;

    let mut points = Vec::with_capacity((cfg.images * cfg.per_image) as usize);
    let mut images = Vec::with_capacity(cfg.images as usize);
    for image_id in 0..cfg.images {
        let category = image_id / per_category;
        let image_center: Vec<f64> = centers[category as usize]
            .iter()
            .map(|&c| c + cfg.spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut descriptor_ids = Vec::with_capacity(cfg.per_image as usize);
        for _ in 0..cfg.per_image {
            let vector: Vec<f32> = image_center
                .iter()
                .map(|&c| (c + cfg.spread * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            let point_id = points.len() as u32;
            points.push(DescriptorPoint {
                point_id,
                image_id,
                vector,
            });
            descriptor_ids.push(point_id);
        }
        images.push(ImageRecord {
            image_id,
            descriptor_ids,
            category: Some(category),
        });
    }
    DatasetBundle::from_parts(points, images)
}

/// Accuracy of a returned ranking against the query's ground-truth category:
/// true positives divided by the number of desired results `k` (the
/// denominator stays `k` even when fewer images were returned).
pub fn accuracy(returned: &[u32], query_category: u32, bundle: &DatasetBundle, k: usize) -> Result<f64> {
    if returned.len() > k {
        return Err(Error::InvalidParams(format!(
            "{} results returned for k={k}",
            returned.len()
        )));
    }
    let mut true_positives = 0usize;
    for &id in returned {
        let image = bundle.image(id)?;
        if image.category == Some(query_category) {
            true_positives += 1;
        }
    }
    Ok(true_positives as f64 / k as f64)
}
