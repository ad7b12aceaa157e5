//! Assembly time and memory of sparse versus dense visibility storage.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::{SceneConfig, VoxelGrid};

use super::visibility::{dense_visibility_bytes, VisibilitySet};

/// Dense matrices are costed at single precision.
pub const DENSE_BYTES_PER_VALUE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub voxels: [usize; 3],
    pub wall_pixels: usize,
    pub emitter_pixels: usize,
    /// Best of the repeats.
    pub sparse_time: Duration,
    pub sparse_bytes: usize,
    pub sparse_nnz: usize,
    /// `None` when the dense stack exceeds the cap and was not built.
    pub dense_time: Option<Duration>,
    pub dense_bytes: Option<u64>,
    pub dense_projected_bytes: u64,
}

/// Builds the sparse visibility `repeat` times and, when its projected size
/// is at most `dense_cap` bytes, the dense `f32` stack as well.
pub fn measure_footprint(cfg: &SceneConfig, repeat: usize, dense_cap: u64) -> Result<Footprint> {
    if repeat == 0 {
        return Err(Error::InvalidInput("repeat must be at least 1".into()));
    }
    let grid = VoxelGrid::from_config(cfg)?;
    let projected = dense_visibility_bytes(cfg, DENSE_BYTES_PER_VALUE)
        .ok_or_else(|| Error::InvalidInput("dense size overflows u64".into()))?;
    let (rows, cols) = (cfg.num_wall_pixels(), cfg.num_emitter_pixels());

    let mut sparse_time = Duration::MAX;
    let mut vis = None;
    for _ in 0..repeat {
        let t = Instant::now();
        let v = VisibilitySet::from_config(cfg, &grid);
        sparse_time = sparse_time.min(t.elapsed());
        vis = Some(v);
    }
    let vis = vis.expect("repeat >= 1");

    let (dense_time, dense_bytes) = if projected <= dense_cap {
        let mut best = Duration::MAX;
        let mut bytes = 0u64;
        for _ in 0..repeat {
            let t = Instant::now();
            let stack: Vec<Vec<f32>> = vis
                .items
                .iter()
                .map(|item| {
                    let mut m = vec![0.0f32; rows * cols];
                    for (w, n) in item.pairs() {
                        m[w * cols + n] = 1.0;
                    }
                    m
                })
                .collect();
            best = best.min(t.elapsed());
            bytes = stack
                .iter()
                .map(|m| (m.len() * std::mem::size_of::<f32>()) as u64)
                .sum();
            std::hint::black_box(&stack);
        }
        (Some(best), Some(bytes))
    } else {
        (None, None)
    };

    Ok(Footprint {
        voxels: grid.counts,
        wall_pixels: rows,
        emitter_pixels: cols,
        sparse_time,
        sparse_bytes: vis.bytes(),
        sparse_nnz: vis.nnz(),
        dense_time,
        dense_bytes,
        dense_projected_bytes: projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_builds_both_and_sparse_is_smaller() {
        let cfg = SceneConfig::square((1.0, 12), (0.5, 4), 1.0, (3, 2, 3));
        let f = measure_footprint(&cfg, 1, u64::MAX).unwrap();
        assert_eq!(f.dense_projected_bytes, 144 * 16 * 18 * 4);
        assert_eq!(f.dense_bytes, Some(f.dense_projected_bytes));
        assert!((f.sparse_bytes as u64) < f.dense_projected_bytes);
        let capped = measure_footprint(&cfg, 1, 10).unwrap();
        assert!(capped.dense_time.is_none() && capped.dense_bytes.is_none());
        assert!(measure_footprint(&cfg, 0, 10).is_err());
    }
}
