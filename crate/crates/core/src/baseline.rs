//! The comparison pipeline: every query descriptor runs as an independent
//! c-approximate point query over the same index (collision counting plus
//! virtual rehashing, no image-level logic), and the per-descriptor top-k'
//! lists are fused with a Borda count into an image ranking.
//!
//! Descriptor queries are deliberately independent of each other: the point
//! of the comparison is measuring what that independence costs in index IO.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::data::DatasetBundle;
use crate::engine::{newly_covered, QueryReport, RankedImage, StopReason};
use crate::hashing::{radius_schedule, ProjectionFamily};
use crate::index::{BucketEntry, IndexReader, IoMeter};
use crate::model::{euclidean, Params, QueryImage};
use crate::{Error, Result};

/// One candidate point returned by a descriptor query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointHit {
    pub point_id: u32,
    pub image_id: u32,
    pub distance: f64,
}

/// Ranked result of a single descriptor query: at most k' points by
/// ascending true distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorResult {
    pub descriptor_index: usize,
    pub points: Vec<PointHit>,
    pub final_radius_exponent: u32,
}

/// Single-descriptor c-approximate top-k' query. Terminates at the end of a
/// round once k' candidates verify within `c * R` or k' + v' candidates have
/// been collected, whichever comes first. Bucket reads are metered exactly
/// like the engine path.
pub fn point_top_k(
    descriptor_index: usize,
    q: &[f32],
    family: &ProjectionFamily,
    reader: &IndexReader,
    bundle: &DatasetBundle,
    params: &Params,
    meter: &mut IoMeter,
) -> Result<DescriptorResult> {
    if q.len() != bundle.dim {
        return Err(Error::DimensionMismatch {
            expected: bundle.dim,
            actual: q.len(),
        });
    }
    let projections: Vec<f64> = (0..params.m)
        .map(|i| family.project(i, q))
        .collect::<Result<_>>()?;
    let mut cc = vec![0u16; bundle.n()];
    let mut candidates: Vec<PointHit> = Vec::new();
    let mut frontier: Vec<Option<(i64, i64)>> = vec![None; params.m];
    let mut pending: Vec<Vec<BucketEntry>> = vec![Vec::new(); params.m];
    let mut final_radius_exponent = params.max_radius_exponent;

    let register = |entry: BucketEntry,
                        cc: &mut Vec<u16>,
                        candidates: &mut Vec<PointHit>,
                        meter: &mut IoMeter|
     -> Result<()> {
        let count = &mut cc[entry.point_id as usize];
        *count += 1;
        if *count as usize == params.l {
            let point = bundle.point(entry.point_id)?;
            meter.data_bytes_read += (point.vector.len() * 4) as u64;
            candidates.push(PointHit {
                point_id: entry.point_id,
                image_id: entry.image_id,
                distance: euclidean(q, &point.vector)?,
            });
        }
        Ok(())
    };

    'rounds: for t in 0..=params.max_radius_exponent {
        let radius = radius_schedule(params.c, t);
        for i in 0..params.m {
            let qp = projections[i];
            let parked = std::mem::take(&mut pending[i]);
            for p in parked {
                if family.within_window(qp - p.projected, radius) {
                    register(p, &mut cc, &mut candidates, meter)?;
                } else {
                    pending[i].push(p);
                }
            }
            let Some((min_cell, max_cell)) = reader.cell_bounds(i) else {
                continue;
            };
            let (lo, hi) = family.cell_range(qp, radius);
            let (lo, hi) = (lo.max(min_cell), hi.min(max_cell));
            if lo > hi {
                continue;
            }
            for cell in newly_covered(frontier[i], lo, hi) {
                for e in reader.read_bucket(i, cell, meter)? {
                    if family.within_window(qp - e.projected, radius) {
                        register(e, &mut cc, &mut candidates, meter)?;
                    } else {
                        pending[i].push(e);
                    }
                }
            }
            frontier[i] = Some((lo, hi));
        }

        final_radius_exponent = t;
        let c_radius = params.c * radius;
        let verified = candidates.iter().filter(|h| h.distance <= c_radius).count();
        if verified >= params.k_prime {
            break 'rounds;
        }
        if candidates.len() >= params.k_prime + params.v_prime_points {
            break 'rounds;
        }
    }

    candidates.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.point_id.cmp(&b.point_id)));
    candidates.truncate(params.k_prime);
    Ok(DescriptorResult {
        descriptor_index,
        points: candidates,
        final_radius_exponent,
    })
}

/// Borda-count fusion: each point hit awards its image `k' - rank` (rank is
/// 1-based within its list), so a hit at rank k' contributes nothing. Images
/// whose total stays zero are not ranked. Top-k images by score descending,
/// ties by ascending image id.
pub fn borda_aggregate(results: &[DescriptorResult], k: usize, k_prime: usize) -> Vec<(u32, u64)> {
    let mut scores: BTreeMap<u32, u64> = BTreeMap::new();
    for r in results {
        for (idx, hit) in r.points.iter().enumerate() {
            let rank = idx + 1;
            *scores.entry(hit.image_id).or_insert(0) += (k_prime - rank) as u64;
        }
    }
    let mut ranked: Vec<(u32, u64)> = scores.into_iter().filter(|&(_, s)| s > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Everything a baseline image query produces.
#[derive(Debug, Clone)]
pub struct BordaOutcome {
    pub report: QueryReport,
    pub per_descriptor: Vec<DescriptorResult>,
    pub scores: Vec<(u32, u64)>,
}

pub struct BordaBaseline<'a> {
    reader: &'a IndexReader,
    bundle: &'a DatasetBundle,
    params: Params,
    family: ProjectionFamily,
}

impl<'a> BordaBaseline<'a> {
    pub fn new(reader: &'a IndexReader, bundle: &'a DatasetBundle, params: Params) -> Result<Self> {
        params.validate()?;
        let manifest = reader.manifest();
        if manifest.d != bundle.dim
            || manifest.n != bundle.n() as u64
            || manifest.s != bundle.image_count() as u32
        {
            return Err(Error::Query("index does not match dataset".into()));
        }
        let mp = &manifest.params;
        if params.m != mp.m || params.w != mp.w || params.c != mp.c || params.seed != mp.seed {
            return Err(Error::Query(
                "structural parameters (m, w, c, seed) differ from the index manifest".into(),
            ));
        }
        Ok(BordaBaseline {
            reader,
            bundle,
            params,
            family: reader.family(),
        })
    }

    pub fn run(&self, query: &QueryImage) -> Result<BordaOutcome> {
        let start = Instant::now();
        if query.descriptors.is_empty() {
            return Err(Error::Query("query image has no descriptors".into()));
        }
        let mut meter = IoMeter::default();
        let mut per_descriptor = Vec::with_capacity(query.descriptors.len());
        let mut final_radius_exponent = 0;
        for (qi, q) in query.descriptors.iter().enumerate() {
            let result = point_top_k(qi, q, &self.family, self.reader, self.bundle, &self.params, &mut meter)?;
            final_radius_exponent = final_radius_exponent.max(result.final_radius_exponent);
            per_descriptor.push(result);
        }
        let scores = borda_aggregate(&per_descriptor, self.params.k, self.params.k_prime);
        let top_k = scores
            .iter()
            .map(|&(image_id, score)| RankedImage {
                image_id,
                score: score as f64,
                c_dist: None,
            })
            .collect();
        let report = QueryReport {
            top_k,
            stop_reason: StopReason::Baseline,
            final_radius_exponent,
            io: meter,
            wall_time_ms: Some(start.elapsed().as_secs_f64() * 1000.0),
        };
        Ok(BordaOutcome {
            report,
            per_descriptor,
            scores,
        })
    }
}
