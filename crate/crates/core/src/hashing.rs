//! Random-projection hash family and the virtual-rehashing schedule.
//!
//! The scheme is query-aware: the index stores raw projected values and the
//! collision window of width `w * R` is centered on the query's projection,
//! so no random shift is needed. Growing the radius geometrically widens the
//! window in place instead of rebuilding hash tables.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// `m` random projection vectors with i.i.d. standard-normal entries,
/// derived deterministically from a seed.
#[derive(Debug, Clone)]
pub struct ProjectionFamily {
    projections: Vec<Vec<f64>>,
    dim: usize,
    w: f64,
    c: f64,
    seed: u64,
}

impl ProjectionFamily {
    pub fn new(seed: u64, m: usize, dim: usize, w: f64, c: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projections = (0..m)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        ProjectionFamily {
            projections,
            dim,
            w,
            c,
            seed,
        }
    }

    pub fn m(&self) -> usize {
        self.projections.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Dot product of projection `i` with `x`.
    pub fn project(&self, i: usize, x: &[f32]) -> Result<f64> {
        let proj = self.projections.get(i).ok_or(Error::OutOfBounds {
            index: i,
            len: self.projections.len(),
        })?;
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(proj.iter().zip(x.iter()).map(|(&g, &v)| g * v as f64).sum())
    }

    /// Whether two projected values collide at the given radius: the gap must
    /// lie within the half-window `w * radius / 2`.
    pub fn within_window(&self, gap: f64, radius: f64) -> bool {
        gap.abs() <= self.w * radius / 2.0
    }

    /// Collision test in projection `i` between a query point and a data
    /// point at radius `radius`.
    pub fn collides(&self, i: usize, q: &[f32], x: &[f32], radius: f64) -> Result<bool> {
        let gap = self.project(i, q)? - self.project(i, x)?;
        Ok(self.within_window(gap, radius))
    }

    /// Cell index of a projected value: cells are half-open intervals
    /// `[j*w, (j+1)*w)`.
    pub fn cell_of(&self, value: f64) -> i64 {
        (value / self.w).floor() as i64
    }

    /// Contiguous range of cells overlapped by the query window
    /// `[p - w*radius/2, p + w*radius/2)` for a query projected to `p`.
    /// Ranges for growing radii are nested.
    pub fn cell_range(&self, projected: f64, radius: f64) -> (i64, i64) {
        let half = self.w * radius / 2.0;
        let lo = ((projected - half) / self.w).floor() as i64;
        let hi = ((projected + half) / self.w).ceil() as i64 - 1;
        (lo, hi.max(lo))
    }
}

/// Search radius at rehashing round `t`: c^t, so R = 1 at round 0.
pub fn radius_schedule(c: f64, t: u32) -> f64 {
    c.powi(t as i32)
}
