//! The image query processor.
//!
//! A query interleaves its descriptors through every projection, growing the
//! search radius geometrically. Per image it maintains a collision index
//! (fraction of descriptor pairs that became candidates) and a verified
//! similarity (fraction of pairs whose true distance passed the `c * R`
//! check). At the end of each round images are classified:
//!
//! * `Useful`    - gamma-close with verified similarity at least gamma;
//!   a confirmed result.
//! * `Useless`   - collision index positive but below the running lower
//!   bound (the k+v-th ranked collision index); safely ignored.
//! * `MaybeUseful` - everything else; the only class still scanned.
//!
//! Both decided classes are terminal and their bits are cleared from the
//! live image bitmap. Before a bucket file is read, its catalog bitmap is
//! ANDed with the live bitmap; files holding fewer maybe-useful images than
//! the `uthres` floor are skipped without touching the disk. Processing
//! stops at S1 (k useful images), S2 (every descriptor has k' + v'
//! candidate points), or the radius cap.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bitmap::CompressedBitmap;
use crate::data::DatasetBundle;
use crate::hashing::{radius_schedule, ProjectionFamily};
use crate::index::{BucketEntry, IndexReader, IoMeter};
use crate::model::{euclidean, Params, QueryImage};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageClass {
    MaybeUseful,
    Useful,
    Useless,
}

/// Per-image running score state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: u32,
    /// |desc(Q)| * |desc(X)|.
    pub pair_denominator: u64,
    /// Descriptor pairs whose collision count reached the threshold.
    pub collision_pairs: u64,
    /// Candidate pairs whose true distance passed the c*R check.
    pub verified_pairs: u64,
    pub class: ImageClass,
}

impl ImageScore {
    pub fn collision_index(&self) -> f64 {
        self.collision_pairs as f64 / self.pair_denominator as f64
    }

    pub fn verified_similarity(&self) -> f64 {
        self.verified_pairs as f64 / self.pair_denominator as f64
    }

    pub fn c_dist(&self) -> f64 {
        1.0 - self.verified_similarity()
    }
}

/// Why a query stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    S1,
    S2,
    #[serde(rename = "radius-cap")]
    RadiusCap,
    /// Per-descriptor point queries fused afterwards; no image-level stop.
    #[serde(rename = "baseline")]
    Baseline,
    /// Exact scan; no index involved.
    #[serde(rename = "exact")]
    Exact,
}

/// One returned image. `score` is the method's ranking score: the collision
/// index for the engine, the Borda score for the baseline, and the exact
/// similarity for the oracle. `c_dist` is engine-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub image_id: u32,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c_dist: Option<f64>,
}

/// Per-query outcome in the shape shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub top_k: Vec<RankedImage>,
    pub stop_reason: StopReason,
    pub final_radius_exponent: u32,
    pub io: IoMeter,
    /// Informational only; cleared by callers that need reproducible output.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<f64>,
}

/// Audit record for one skipped bucket file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEvent {
    pub round: u32,
    pub projection: usize,
    pub cell: i64,
    pub and_popcount: u32,
    pub threshold: u32,
}

/// Full engine result: the report plus the internal per-image states and the
/// skip log, for auditing and tests.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub report: QueryReport,
    pub images: Vec<ImageScore>,
    pub skips: Vec<SkipEvent>,
    /// Candidate points found per query descriptor.
    pub descriptor_candidates: Vec<u32>,
}

/// Minimum AND popcount a bucket file needs to be read: the ceiling of
/// `uthres * s`, floored at 1 so an all-zero AND is always skipped.
/// The ceiling tolerates float error so that e.g. 3% of 1000 is 30, not 31.
pub fn uthres_threshold(uthres: f64, s: u32) -> u32 {
    let t = uthres * s as f64;
    let nearest = t.round();
    let ceiled = if (t - nearest).abs() < 1e-9 { nearest } else { t.ceil() };
    (ceiled as u32).max(1)
}

/// Whether a bucket file can be skipped: it shares fewer than the `uthres`
/// floor of images with the live maybe-useful bitmap.
pub fn should_skip_file(
    file_bitmap: &CompressedBitmap,
    image_bitmap: &CompressedBitmap,
    uthres: f64,
    s: u32,
) -> Result<bool> {
    Ok(file_bitmap.and_popcount(image_bitmap)? < uthres_threshold(uthres, s))
}

/// End-of-round classification. The lower bound is the collision index of
/// the (k + v_images)-th image ranked by collision index descending, or 0
/// when fewer images have a positive index. Images with an index strictly
/// between 0 and the bound become useless; remaining maybe-useful images
/// meeting both gamma conditions become useful. Images with index 0 are
/// left undecided, and decided classes never change.
pub fn classify_images(images: &mut [ImageScore], gamma: f64, k: usize, v_images: usize, s1_literal: bool) {
    let mut positive: Vec<f64> = images
        .iter()
        .map(|s| s.collision_index())
        .filter(|&ci| ci > 0.0)
        .collect();
    positive.sort_by(|a, b| b.total_cmp(a));
    let rank = k + v_images;
    let lower_bound = if rank > 0 && positive.len() >= rank {
        positive[rank - 1]
    } else {
        0.0
    };

    for img in images.iter_mut() {
        if img.class != ImageClass::MaybeUseful {
            continue;
        }
        let ci = img.collision_index();
        if ci <= 0.0 {
            continue;
        }
        if ci < lower_bound {
            img.class = ImageClass::Useless;
            continue;
        }
        let useful = if s1_literal {
            ci >= gamma && img.c_dist() >= gamma
        } else {
            ci >= gamma && img.verified_similarity() >= gamma && img.verified_pairs >= 1
        };
        if useful {
            img.class = ImageClass::Useful;
        }
    }
}

/// S1: at least k images are classified useful.
pub fn stop_s1(images: &[ImageScore], k: usize) -> bool {
    images.iter().filter(|s| s.class == ImageClass::Useful).count() >= k
}

/// S2: every query descriptor has found at least `needed` candidate points.
pub fn stop_s2(descriptor_candidates: &[u32], needed: usize) -> bool {
    descriptor_candidates.iter().all(|&c| c as usize >= needed)
}

/// Cells covered by `(lo, hi)` but not by the previous round's range.
/// Ranges are nested, so the new cells form at most two runs.
pub(crate) fn newly_covered(prev: Option<(i64, i64)>, lo: i64, hi: i64) -> impl Iterator<Item = i64> {
    let ((a, b), (c, d)) = match prev {
        None => ((lo, hi), (0, -1)),
        Some((plo, phi)) => ((lo, plo - 1), (phi + 1, hi)),
    };
    (a..=b).chain(c..=d)
}

struct DescriptorState {
    /// Projection of this descriptor under every hash function.
    projections: Vec<f64>,
    /// Collision counts per data point.
    cc: Vec<u16>,
    candidates: u32,
    /// Per projection: the cell range already covered.
    frontier: Vec<Option<(i64, i64)>>,
    /// Per projection: boundary-cell points read but not yet inside the
    /// window; re-tested as the radius grows.
    pending: Vec<Vec<BucketEntry>>,
}

pub struct QueryEngine<'a> {
    reader: &'a IndexReader,
    bundle: &'a DatasetBundle,
    params: Params,
    family: ProjectionFamily,
}

impl<'a> QueryEngine<'a> {
    pub fn new(reader: &'a IndexReader, bundle: &'a DatasetBundle, params: Params) -> Result<Self> {
        params.validate()?;
        let manifest = reader.manifest();
        if manifest.d != bundle.dim
            || manifest.n != bundle.n() as u64
            || manifest.s != bundle.image_count() as u32
        {
            return Err(Error::Query(format!(
                "index shape (n={}, s={}, d={}) does not match dataset (n={}, s={}, d={})",
                manifest.n,
                manifest.s,
                manifest.d,
                bundle.n(),
                bundle.image_count(),
                bundle.dim
            )));
        }
        let mp = &manifest.params;
        if params.m != mp.m || params.w != mp.w || params.c != mp.c || params.seed != mp.seed {
            return Err(Error::Query(
                "structural parameters (m, w, c, seed) differ from the index manifest".into(),
            ));
        }
        Ok(QueryEngine {
            reader,
            bundle,
            params,
            family: reader.family(),
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn run(&self, query: &QueryImage) -> Result<QueryOutcome> {
        let start = Instant::now();
        let params = &self.params;
        let s = self.bundle.image_count() as u32;
        let n = self.bundle.n();
        let dim = self.bundle.dim;
        if query.descriptors.is_empty() {
            return Err(Error::Query("query image has no descriptors".into()));
        }
        for v in &query.descriptors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }

        let q_count = query.descriptors.len() as u64;
        let mut images: Vec<ImageScore> = self
            .bundle
            .images
            .iter()
            .map(|img| ImageScore {
                image_id: img.image_id,
                pair_denominator: q_count * img.descriptor_count() as u64,
                collision_pairs: 0,
                verified_pairs: 0,
                class: ImageClass::MaybeUseful,
            })
            .collect();

        let mut descs: Vec<DescriptorState> = query
            .descriptors
            .iter()
            .map(|q| {
                let projections = (0..params.m)
                    .map(|i| self.family.project(i, q))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(DescriptorState {
                    projections,
                    cc: vec![0u16; n],
                    candidates: 0,
                    frontier: vec![None; params.m],
                    pending: vec![Vec::new(); params.m],
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut live = CompressedBitmap::all_set(s);
        let mut unverified: Vec<(u32, f64)> = Vec::new();
        let mut meter = IoMeter::default();
        let mut skips: Vec<SkipEvent> = Vec::new();
        let threshold = uthres_threshold(params.uthres, s);
        let s2_needed = params.k_prime + params.v_prime_points;

        let mut stop_reason = StopReason::RadiusCap;
        let mut final_radius_exponent = params.max_radius_exponent;

        'rounds: for t in 0..=params.max_radius_exponent {
            let radius = radius_schedule(params.c, t);
            let c_radius = params.c * radius;
            for i in 0..params.m {
                #[allow(clippy::needless_range_loop)]
                for qi in 0..query.descriptors.len() {
                    let qp = descs[qi].projections[i];

                    // Boundary points from earlier rounds may have entered
                    // the (now wider) window.
                    let pending = std::mem::take(&mut descs[qi].pending[i]);
                    for p in pending {
                        if images[p.image_id as usize].class != ImageClass::MaybeUseful {
                            continue;
                        }
                        if self.family.within_window(qp - p.projected, radius) {
                            self.register_collision(
                                &mut descs[qi],
                                &query.descriptors[qi],
                                p,
                                c_radius,
                                &mut images,
                                &mut unverified,
                                &mut meter,
                            )?;
                        } else {
                            descs[qi].pending[i].push(p);
                        }
                    }

                    // Clamp the window to the projection's nonempty span so
                    // huge radii do not enumerate empty cells one by one.
                    let Some((min_cell, max_cell)) = self.reader.cell_bounds(i) else {
                        continue;
                    };
                    let (lo, hi) = self.family.cell_range(qp, radius);
                    let (lo, hi) = (lo.max(min_cell), hi.min(max_cell));
                    if lo > hi {
                        continue;
                    }
                    let prev = descs[qi].frontier[i];
                    for cell in newly_covered(prev, lo, hi) {
                        let Some(file_bitmap) = self.reader.bucket_bitmap(i, cell) else {
                            continue;
                        };
                        let and_popcount = file_bitmap.and_popcount(&live)?;
                        if and_popcount < threshold {
                            meter.bucket_files_skipped += 1;
                            skips.push(SkipEvent {
                                round: t,
                                projection: i,
                                cell,
                                and_popcount,
                                threshold,
                            });
                            continue;
                        }
                        let entries = self.reader.read_bucket(i, cell, &mut meter)?;
                        for e in entries {
                            if images[e.image_id as usize].class != ImageClass::MaybeUseful {
                                continue;
                            }
                            if self.family.within_window(qp - e.projected, radius) {
                                self.register_collision(
                                    &mut descs[qi],
                                    &query.descriptors[qi],
                                    e,
                                    c_radius,
                                    &mut images,
                                    &mut unverified,
                                    &mut meter,
                                )?;
                            } else {
                                descs[qi].pending[i].push(e);
                            }
                        }
                    }
                    descs[qi].frontier[i] = Some((lo, hi));
                }
            }

            // Round end: retry verification at the wider radius, classify,
            // shrink the live bitmap, then evaluate the stopping conditions.
            unverified.retain(|&(image_id, dist)| {
                let img = &mut images[image_id as usize];
                if img.class != ImageClass::MaybeUseful {
                    return false;
                }
                if dist <= c_radius {
                    img.verified_pairs += 1;
                    return false;
                }
                true
            });
            classify_images(&mut images, params.gamma, params.k, params.v_images, params.s1_literal);
            live = CompressedBitmap::from_positions(
                s,
                images
                    .iter()
                    .filter(|img| img.class == ImageClass::MaybeUseful)
                    .map(|img| img.image_id),
            )?;

            final_radius_exponent = t;
            if stop_s1(&images, params.k) {
                stop_reason = StopReason::S1;
                break 'rounds;
            }
            let candidate_counts: Vec<u32> = descs.iter().map(|d| d.candidates).collect();
            if stop_s2(&candidate_counts, s2_needed) {
                stop_reason = StopReason::S2;
                break 'rounds;
            }
        }

        let mut ranked: Vec<&ImageScore> = images.iter().filter(|s| s.collision_pairs > 0).collect();
        ranked.sort_by(|a, b| {
            b.collision_index()
                .total_cmp(&a.collision_index())
                .then(b.verified_similarity().total_cmp(&a.verified_similarity()))
                .then(a.image_id.cmp(&b.image_id))
        });
        let top_k: Vec<RankedImage> = ranked
            .into_iter()
            .take(params.k)
            .map(|img| RankedImage {
                image_id: img.image_id,
                score: img.collision_index(),
                c_dist: Some(img.c_dist()),
            })
            .collect();

        let report = QueryReport {
            top_k,
            stop_reason,
            final_radius_exponent,
            io: meter,
            wall_time_ms: Some(start.elapsed().as_secs_f64() * 1000.0),
        };
        Ok(QueryOutcome {
            report,
            descriptor_candidates: descs.iter().map(|d| d.candidates).collect(),
            images,
            skips,
        })
    }

    /// Records one more projection collision for `(descriptor, point)`. When
    /// the count crosses the threshold the pair becomes a candidate: the
    /// image's pair count rises and the true distance is fetched (metered)
    /// and checked against `c * R` now, or parked for later rounds.
    #[allow(clippy::too_many_arguments)]
    fn register_collision(
        &self,
        desc: &mut DescriptorState,
        q_vec: &[f32],
        entry: BucketEntry,
        c_radius: f64,
        images: &mut [ImageScore],
        unverified: &mut Vec<(u32, f64)>,
        meter: &mut IoMeter,
    ) -> Result<()> {
        let cc = &mut desc.cc[entry.point_id as usize];
        *cc += 1;
        if *cc as usize != self.params.l {
            return Ok(());
        }
        desc.candidates += 1;
        images[entry.image_id as usize].collision_pairs += 1;
        let point = self.bundle.point(entry.point_id)?;
        meter.data_bytes_read += (point.vector.len() * 4) as u64;
        let dist = euclidean(q_vec, &point.vector)?;
        if dist <= c_radius {
            images[entry.image_id as usize].verified_pairs += 1;
        } else {
            unverified.push((entry.image_id, dist));
        }
        Ok(())
    }
}
