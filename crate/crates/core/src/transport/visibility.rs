//! Sparse per-voxel visibility masks.
//!
//! Voxel `k` blocks the pair `(m, n)` when the segment from emitter pixel `n`
//! to wall pixel `m` touches the voxel box. For a fixed wall pixel the blocked
//! emitter pixels form the central projection of a convex box, so within one
//! emitter row they are contiguous. Masks are therefore stored as runs of
//! consecutive emitter indices, sorted by `(m, n)`.

use nalgebra::DMatrix;

use crate::geometry::{segment_intersects_voxel, SceneConfig, Vec3, VoxelGrid};
use crate::par;

/// Consecutive emitter pixels `emitter_start .. emitter_start + len` blocked
/// from wall pixel `wall`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BlockedRun {
    pub wall: u32,
    pub emitter_start: u32,
    pub len: u32,
}

/// Blocked `(m, n)` pairs of one voxel, in `(m, n)` order without duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseVisibility {
    pub voxel: usize,
    pub runs: Vec<BlockedRun>,
}

impl SparseVisibility {
    /// Number of blocked pairs.
    pub fn nnz(&self) -> usize {
        self.runs.iter().map(|r| r.len as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.runs.iter().flat_map(|r| {
            let m = r.wall as usize;
            (r.emitter_start..r.emitter_start + r.len).map(move |n| (m, n as usize))
        })
    }

    /// Dense pinhole mask: 1 at blocked pairs, 0 elsewhere.
    pub fn to_dense(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(rows, cols);
        for (m, n) in self.pairs() {
            v[(m, n)] = 1.0;
        }
        v
    }

    /// Storage used by the run list.
    pub fn bytes(&self) -> usize {
        self.runs.len() * std::mem::size_of::<BlockedRun>()
    }
}

fn box_corners(center: &Vec3, half: &Vec3) -> [Vec3; 8] {
    let mut out = [Vec3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
        *c = center + Vec3::new(sx * half.x, sy * half.y, sz * half.z);
    }
    out
}

/// Index range of pixel centres whose coordinate lies in `[lo, hi]`, padded by
/// one pixel on each side. Pixel `i` sits at `-extent/2 + (i + 0.5) * pitch`.
fn pixel_span(lo: f64, hi: f64, extent: f64, res: usize) -> Option<(usize, usize)> {
    let pitch = extent / res as f64;
    let a = ((lo + 0.5 * extent) / pitch - 0.5).floor() - 1.0;
    let b = ((hi + 0.5 * extent) / pitch - 0.5).ceil() + 1.0;
    if b < 0.0 || a > (res - 1) as f64 {
        return None;
    }
    Some((a.max(0.0) as usize, (b.min((res - 1) as f64)) as usize))
}

/// Same as [`pixel_span`] but for image rows, where row 0 is at `+extent/2`.
fn row_span(lo_z: f64, hi_z: f64, extent: f64, res: usize) -> Option<(usize, usize)> {
    pixel_span(-hi_z, -lo_z, extent, res)
}

struct VoxelShadow<'a> {
    cfg: &'a SceneConfig,
    walls: &'a [Vec3],
    emitters: &'a [Vec3],
}

impl VoxelShadow<'_> {
    fn compute(&self, voxel: usize, center: &Vec3, half: &Vec3) -> SparseVisibility {
        let cfg = self.cfg;
        let depth = cfg.emitter_depth;
        let corners = box_corners(center, half);
        let (rx, rz) = (cfg.wall_res_x, cfg.wall_res_z);
        let (ex, ez) = (cfg.emitter_res_x, cfg.emitter_res_z);

        // Wall footprint: project every box corner from every emitter corner.
        let touches_emitter = corners.iter().any(|c| c.y >= depth);
        let wall_box = if touches_emitter {
            Some(((0, rz - 1), (0, rx - 1)))
        } else {
            let (hw, hh) = (0.5 * cfg.emitter_width, 0.5 * cfg.emitter_height);
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for c in &corners {
                let s = depth / (depth - c.y);
                for (sx, sz) in [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)] {
                    let px = sx + (c.x - sx) * s;
                    let pz = sz + (c.z - sz) * s;
                    lo[0] = lo[0].min(px);
                    hi[0] = hi[0].max(px);
                    lo[1] = lo[1].min(pz);
                    hi[1] = hi[1].max(pz);
                }
            }
            row_span(lo[1], hi[1], cfg.wall_height, rz).zip(pixel_span(
                lo[0],
                hi[0],
                cfg.wall_width,
                rx,
            ))
        };
        let Some(((row0, row1), (col0, col1))) = wall_box else {
            return SparseVisibility {
                voxel,
                runs: Vec::new(),
            };
        };

        let touches_wall = corners.iter().any(|c| c.y <= 0.0);
        let mut runs = Vec::new();
        for row in row0..=row1 {
            for col in col0..=col1 {
                let m = row * rx + col;
                let p = self.walls[m];
                // Candidate emitter pixels: project the box from p onto y = D.
                let span = if touches_wall {
                    Some(((0, ez - 1), (0, ex - 1)))
                } else {
                    let mut lo = [f64::INFINITY; 2];
                    let mut hi = [f64::NEG_INFINITY; 2];
                    for c in &corners {
                        let s = depth / c.y;
                        let qx = p.x + (c.x - p.x) * s;
                        let qz = p.z + (c.z - p.z) * s;
                        lo[0] = lo[0].min(qx);
                        hi[0] = hi[0].max(qx);
                        lo[1] = lo[1].min(qz);
                        hi[1] = hi[1].max(qz);
                    }
                    row_span(lo[1], hi[1], cfg.emitter_height, ez).zip(pixel_span(
                        lo[0],
                        hi[0],
                        cfg.emitter_width,
                        ex,
                    ))
                };
                let Some(((er0, er1), (ec0, ec1))) = span else {
                    continue;
                };
                for erow in er0..=er1 {
                    let mut open: Option<u32> = None;
                    for ecol in ec0..=ec1 {
                        let n = erow * ex + ecol;
                        let hit = segment_intersects_voxel(&self.emitters[n], &p, center, half);
                        match (hit, open) {
                            (true, None) => open = Some(n as u32),
                            (false, Some(start)) => {
                                runs.push(BlockedRun {
                                    wall: m as u32,
                                    emitter_start: start,
                                    len: n as u32 - start,
                                });
                                open = None;
                            }
                            _ => {}
                        }
                    }
                    if let Some(start) = open {
                        let end = (erow * ex + ec1 + 1) as u32;
                        runs.push(BlockedRun {
                            wall: m as u32,
                            emitter_start: start,
                            len: end - start,
                        });
                    }
                }
            }
        }
        SparseVisibility { voxel, runs }
    }
}

/// Bytes a dense stack of every voxel's `M x N` visibility matrix would take
/// at `bytes_per_value` bytes per entry, or `None` on overflow.
pub fn dense_visibility_bytes(cfg: &SceneConfig, bytes_per_value: u64) -> Option<u64> {
    [
        cfg.num_wall_pixels(),
        cfg.num_emitter_pixels(),
        cfg.num_voxels(),
    ]
    .iter()
    .try_fold(bytes_per_value, |acc, &n| acc.checked_mul(n as u64))
}

/// Sparse visibility of every voxel in `grid`.
pub fn build_visibility(cfg: &SceneConfig, grid: &VoxelGrid) -> Vec<SparseVisibility> {
    let all: Vec<usize> = (0..grid.len()).collect();
    build_visibility_for(cfg, grid, &all)
}

/// Sparse visibility for a subset of voxels, in the order given.
pub fn build_visibility_for(
    cfg: &SceneConfig,
    grid: &VoxelGrid,
    voxels: &[usize],
) -> Vec<SparseVisibility> {
    let walls = cfg.wall_pixels();
    let emitters = cfg.emitter_pixels();
    let shadow = VoxelShadow {
        cfg,
        walls: &walls,
        emitters: &emitters,
    };
    par::map_slice(voxels, |&k| {
        shadow.compute(k, &grid.centers[k], &grid.half_extents)
    })
}

/// Entry of a [`VisibilitySet`] row: voxel slot plus a blocked emitter run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowEntry {
    pub slot: u32,
    pub emitter_start: u32,
    pub len: u32,
}

/// A list of voxel masks with a wall-pixel-major index over all of them.
///
/// `slot` refers to the position in `items`, not to the grid voxel index.
#[derive(Debug, Clone)]
pub struct VisibilitySet {
    pub rows: usize,
    pub cols: usize,
    pub items: Vec<SparseVisibility>,
    offsets: Vec<usize>,
    entries: Vec<RowEntry>,
}

impl VisibilitySet {
    pub fn new(rows: usize, cols: usize, items: Vec<SparseVisibility>) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for item in &items {
            for r in &item.runs {
                counts[r.wall as usize + 1] += 1;
            }
        }
        for m in 0..rows {
            counts[m + 1] += counts[m];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut entries = vec![
            RowEntry {
                slot: 0,
                emitter_start: 0,
                len: 0
            };
            offsets[rows]
        ];
        for (slot, item) in items.iter().enumerate() {
            for r in &item.runs {
                let m = r.wall as usize;
                entries[cursor[m]] = RowEntry {
                    slot: slot as u32,
                    emitter_start: r.emitter_start,
                    len: r.len,
                };
                cursor[m] += 1;
            }
        }
        VisibilitySet {
            rows,
            cols,
            items,
            offsets,
            entries,
        }
    }

    pub fn from_config(cfg: &SceneConfig, grid: &VoxelGrid) -> Self {
        Self::new(
            cfg.num_wall_pixels(),
            cfg.num_emitter_pixels(),
            build_visibility(cfg, grid),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Runs touching wall pixel `m`, ordered by slot then emitter index.
    #[inline]
    pub fn row(&self, m: usize) -> &[RowEntry] {
        &self.entries[self.offsets[m]..self.offsets[m + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.items.iter().map(SparseVisibility::nnz).sum()
    }

    /// Bytes held by the run lists and the row index.
    pub fn bytes(&self) -> usize {
        self.items
            .iter()
            .map(SparseVisibility::bytes)
            .sum::<usize>()
            + self.entries.len() * std::mem::size_of::<RowEntry>()
            + self.offsets.len() * std::mem::size_of::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelGrid;

    fn brute_force(cfg: &SceneConfig, grid: &VoxelGrid, k: usize) -> Vec<(usize, usize)> {
        let walls = cfg.wall_pixels();
        let emitters = cfg.emitter_pixels();
        let mut out = Vec::new();
        for (m, p) in walls.iter().enumerate() {
            for (n, x) in emitters.iter().enumerate() {
                if segment_intersects_voxel(x, p, &grid.centers[k], &grid.half_extents) {
                    out.push((m, n));
                }
            }
        }
        out
    }

    #[test]
    fn runs_match_brute_force_on_prism_and_frustum() {
        for cfg in [
            SceneConfig::square((1.0, 12), (1.0, 6), 1.0, (3, 2, 3)),
            SceneConfig::square((1.6, 10), (0.7, 7), 1.3, (2, 3, 2)),
        ] {
            let grid = VoxelGrid::from_config(&cfg).unwrap();
            let vis = build_visibility(&cfg, &grid);
            for (k, v) in vis.iter().enumerate() {
                let pairs: Vec<_> = v.pairs().collect();
                assert_eq!(pairs, brute_force(&cfg, &grid, k), "voxel {k}");
                assert!(pairs.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn voxel_on_segment_blocks_that_pair() {
        // single wall pixel straight below a single emitter pixel, voxel between
        let cfg = SceneConfig::square((0.1, 1), (0.1, 1), 1.0, (1, 3, 1));
        let grid = VoxelGrid::from_config(&cfg).unwrap();
        let vis = build_visibility(&cfg, &grid);
        assert!(vis
            .iter()
            .all(|v| v.pairs().collect::<Vec<_>>() == vec![(0, 0)]));
    }

    #[test]
    fn off_corridor_voxel_blocks_nothing_for_that_pair() {
        let cfg = SceneConfig::square((2.0, 2), (2.0, 2), 1.0, (4, 1, 4));
        let grid = VoxelGrid::from_config(&cfg).unwrap();
        // corner voxel (ix=0, iz=0) sits off the straight segment joining the
        // opposite corner pixels of wall and emitter
        let k = grid.index(0, 0, 0);
        let vis = &build_visibility_for(&cfg, &grid, &[k])[0];
        let m_far = 1; // top-right wall pixel
        let n_far = 1; // top-right emitter pixel
        assert!(!vis.pairs().any(|p| p == (m_far, n_far)));
    }

    #[test]
    fn set_rows_cover_all_runs() {
        let cfg = SceneConfig::square((1.0, 8), (1.0, 4), 1.0, (2, 2, 2));
        let grid = VoxelGrid::from_config(&cfg).unwrap();
        let set = VisibilitySet::from_config(&cfg, &grid);
        let total: usize = (0..set.rows)
            .map(|m| set.row(m).iter().map(|e| e.len as usize).sum::<usize>())
            .sum();
        assert_eq!(total, set.nnz());
        for m in 0..set.rows {
            assert!(set
                .row(m)
                .windows(2)
                .all(|w| (w[0].slot, w[0].emitter_start) < (w[1].slot, w[1].emitter_start)));
        }
    }
}
