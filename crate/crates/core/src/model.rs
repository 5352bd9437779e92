//! Core domain types and the exact image-level similarity definitions.
//!
//! An image is a bag of d-dimensional descriptor points. Similarity between
//! two images at radius `R` is the fraction of cross descriptor pairs within
//! Euclidean distance `R`; distance is its complement. [`exact_top_k`] is the
//! quadratic-scan oracle used as ground truth by the benchmark harness.

use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::{Error, Result};

/// One d-dimensional feature vector together with its owning image.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorPoint {
    pub point_id: u32,
    pub image_id: u32,
    pub vector: Vec<f32>,
}

/// An image: the ids of its descriptor points plus an optional ground-truth
/// category label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u32,
    pub descriptor_ids: Vec<u32>,
    pub category: Option<u32>,
}

impl ImageRecord {
    pub fn descriptor_count(&self) -> usize {
        self.descriptor_ids.len()
    }
}

/// A query image given as a bag of descriptor vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub descriptors: Vec<Vec<f32>>,
}

impl QueryImage {
    pub fn new(descriptors: Vec<Vec<f32>>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::InvalidParams("query image has no descriptors".into()));
        }
        let d = descriptors[0].len();
        for v in &descriptors {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                });
            }
        }
        Ok(Self { descriptors })
    }

    /// Builds a query from an indexed image's own descriptor bag.
    pub fn from_image(bundle: &DatasetBundle, image_id: u32) -> Result<Self> {
        let image = bundle.image(image_id)?;
        let descriptors = image
            .descriptor_ids
            .iter()
            .map(|&pid| bundle.point(pid).map(|p| p.vector.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(descriptors)
    }
}

/// Tunable parameters shared by index construction and query processing.
///
/// `m`, `w`, `c` and `seed` are structural (baked into an index); the rest
/// are query-time knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Number of random projections.
    pub m: usize,
    /// Base bucket width in projected units.
    pub w: f64,
    /// Approximation ratio; also the base of the radius schedule.
    pub c: f64,
    /// Collision threshold: projections a point must collide in to become a
    /// candidate.
    pub l: usize,
    /// Collision-index threshold for an image to count as gamma-close.
    pub gamma: f64,
    /// Minimum fraction of images a bucket file must share with the live
    /// maybe-useful set to be worth reading.
    pub uthres: f64,
    /// Requested number of result images.
    pub k: usize,
    /// Per-descriptor candidate target for point queries.
    pub k_prime: usize,
    /// Allowed false-positive images (slack on the classification lower bound).
    pub v_images: usize,
    /// Allowed false-positive points per descriptor query.
    pub v_prime_points: usize,
    /// Hard cap on rehashing rounds; the radius at round t is c^t.
    pub max_radius_exponent: u32,
    /// Seed for the projection family and everything downstream.
    pub seed: u64,
    /// Use the literal reading of the S1 acceptance test (c_dist >= gamma)
    /// instead of the default verified-similarity reading.
    #[serde(default)]
    pub s1_literal: bool,
}

impl Params {
    /// Defaults scaled to a dataset of `n` points.
    pub fn for_dataset_size(n: usize) -> Self {
        let m = (8 * (n.max(2) as f64).log2().ceil() as usize).clamp(8, 64);
        let k = 20;
        Params {
            m,
            w: 2.0,
            c: 2.0,
            l: (0.6 * m as f64).ceil() as usize,
            gamma: 0.000475,
            uthres: 0.03,
            k,
            k_prime: 100,
            v_images: k,
            v_prime_points: 100,
            max_radius_exponent: 20,
            seed: 0,
            s1_literal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c <= 1.0 {
            return Err(Error::InvalidParams(format!("c must be > 1, got {}", self.c)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParams(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.uthres) {
            return Err(Error::InvalidParams(format!(
                "uthres must be in [0, 1], got {}",
                self.uthres
            )));
        }
        if self.l < 1 || self.l > self.m {
            return Err(Error::InvalidParams(format!(
                "l must satisfy 1 <= l <= m, got l={} m={}",
                self.l, self.m
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidParams("k must be >= 1".into()));
        }
        if self.k_prime < self.k {
            return Err(Error::InvalidParams(format!(
                "k_prime must be >= k, got k_prime={} k={}",
                self.k_prime, self.k
            )));
        }
        if self.w <= 0.0 {
            return Err(Error::InvalidParams(format!("w must be > 0, got {}", self.w)));
        }
        Ok(())
    }
}

/// Euclidean distance between two descriptor vectors, accumulated in f64.
pub fn euclidean(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let diff = x as f64 - y as f64;
        sum += diff * diff;
    }
    Ok(sum.sqrt())
}

fn sim_between(a: &[&[f32]], b: &[&[f32]], radius: f64) -> Result<f64> {
    let mut within = 0u64;
    for &x in a {
        for &y in b {
            if euclidean(x, y)? <= radius {
                within += 1;
            }
        }
    }
    Ok(within as f64 / (a.len() as u64 * b.len() as u64) as f64)
}

fn image_vectors<'a>(bundle: &'a DatasetBundle, image: &ImageRecord) -> Result<Vec<&'a [f32]>> {
    if image.descriptor_ids.is_empty() {
        return Err(Error::EmptyDescriptorSet(image.image_id));
    }
    image
        .descriptor_ids
        .iter()
        .map(|&pid| bundle.point(pid).map(|p| p.vector.as_slice()))
        .collect()
}

/// Fraction of descriptor pairs of the two images within distance `radius`.
pub fn sim_images(
    a: &ImageRecord,
    b: &ImageRecord,
    radius: f64,
    bundle: &DatasetBundle,
) -> Result<f64> {
    let va = image_vectors(bundle, a)?;
    let vb = image_vectors(bundle, b)?;
    sim_between(&va, &vb, radius)
}

/// Image distance: 1 - sim.
pub fn dist_images(
    a: &ImageRecord,
    b: &ImageRecord,
    radius: f64,
    bundle: &DatasetBundle,
) -> Result<f64> {
    Ok(1.0 - sim_images(a, b, radius, bundle)?)
}

/// Similarity of a query bag against an indexed image.
pub fn sim_query(
    query: &QueryImage,
    image: &ImageRecord,
    radius: f64,
    bundle: &DatasetBundle,
) -> Result<f64> {
    if query.descriptors.is_empty() {
        return Err(Error::InvalidParams("query image has no descriptors".into()));
    }
    let qa: Vec<&[f32]> = query.descriptors.iter().map(|v| v.as_slice()).collect();
    let vb = image_vectors(bundle, image)?;
    sim_between(&qa, &vb, radius)
}

/// Exact top-k images by ascending image distance to the query, ties broken
/// by ascending image id. This is the ground-truth oracle: a full quadratic
/// scan over every descriptor pair.
pub fn exact_top_k(
    query: &QueryImage,
    k: usize,
    radius: f64,
    bundle: &DatasetBundle,
) -> Result<Vec<u32>> {
    if k > bundle.images.len() {
        return Err(Error::InvalidParams(format!(
            "k={} exceeds image count {}",
            k,
            bundle.images.len()
        )));
    }
    let mut scored: Vec<(f64, u32)> = bundle
        .images
        .iter()
        .map(|img| {
            let sim = sim_query(query, img, radius, bundle)?;
            Ok((1.0 - sim, img.image_id))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}
