//! Occluder placement by projector-energy grid search.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SceneConfig, Vec3, VoxelGrid};
use crate::par;
use crate::transport::{build_visibility_for, SparseVisibility, TransportMatrix, VisibilitySet};

use super::tikhonov::{transport_gram, RidgeSystem};

/// Ridge used for projector scores, relative to the mean diagonal of `A^T A`.
pub const PROJECTOR_RIDGE: f64 = 1e-8;

/// `A` with every ray blocked by any voxel of `vis` zeroed out.
pub fn union_transport(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    active: &[bool],
) -> TransportMatrix {
    let cols = a.cols;
    let mut data = a.data.clone();
    par::for_each_row_mut(&mut data, cols, |m, row| {
        for e in vis.row(m) {
            if active[e.slot as usize] {
                let s = e.emitter_start as usize;
                row[s..s + e.len as usize].fill(0.0);
            }
        }
    });
    TransportMatrix {
        rows: a.rows,
        cols,
        data,
        scene_hash: a.scene_hash,
    }
}

/// `|H y|^2` summed over channels, with `H` the ridge projector of `a`.
pub fn projector_score(a: &TransportMatrix, channels: &[Vec<f64>]) -> Result<f64> {
    let (a_cm, gram) = transport_gram(a);
    let ridge = PROJECTOR_RIDGE * gram.diagonal().mean();
    if ridge == 0.0 {
        return Ok(0.0);
    }
    let sys = RidgeSystem::with_gram(a_cm, gram, ridge)?;
    let mut total = 0.0;
    for y in channels {
        if y.len() != a.rows {
            return Err(Error::dims(a.rows, y.len()));
        }
        let fit = sys.a_mul(&sys.solve(y));
        total += fit.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

/// Variable-projection objective for a binary occupancy under union occlusion.
pub fn vp_objective_occupancy(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    alpha: &[bool],
    y: &[f64],
    lambda: f64,
) -> Result<f64> {
    if alpha.len() != vis.len() {
        return Err(Error::dims(vis.len(), alpha.len()));
    }
    if y.len() != a.rows {
        return Err(Error::dims(a.rows, y.len()));
    }
    let at = union_transport(a, vis, alpha);
    let sys = RidgeSystem::from_transport(&at, lambda)?;
    Ok(super::tikhonov::residual_norm2(&sys, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub index: usize,
    pub translation: Vec3,
    pub scores: Vec<f64>,
    pub occupancy: Vec<bool>,
}

/// Picks the translation whose occluder maximizes `|H(theta) y|^2`.
///
/// `shape` is already scaled to scene units; each candidate is added to its
/// points before voxelization. Ties resolve to the lowest candidate index.
pub fn localize(
    a: &TransportMatrix,
    cfg: &SceneConfig,
    grid: &VoxelGrid,
    shape: &PointCloud,
    candidates: &[Vec3],
    channels: &[Vec<f64>],
) -> Result<Localization> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate translations".into()));
    }
    if shape.is_empty() || !shape.is_finite() {
        return Err(Error::InvalidInput(
            "shape cloud must be nonempty and finite".into(),
        ));
    }
    if a.rows != cfg.num_wall_pixels() || a.cols != cfg.num_emitter_pixels() {
        return Err(Error::dims(
            format!(
                "{}x{} transport",
                cfg.num_wall_pixels(),
                cfg.num_emitter_pixels()
            ),
            format!("{}x{}", a.rows, a.cols),
        ));
    }
    let occupancies: Vec<Vec<bool>> =
        par::map_slice(candidates, |d| grid.voxelize(&shape.translated(d)));
    let needed: BTreeSet<usize> = occupancies
        .iter()
        .flat_map(|occ| {
            occ.iter()
                .enumerate()
                .filter(|(_, on)| **on)
                .map(|(k, _)| k)
        })
        .collect();
    let needed: Vec<usize> = needed.into_iter().collect();
    let masks = build_visibility_for(cfg, grid, &needed);
    let lookup = |k: usize| -> &SparseVisibility {
        &masks[needed.binary_search(&k).expect("voxel visibility computed")]
    };

    let scores = par::map_range(candidates.len(), |i| -> Result<f64> {
        let items: Vec<SparseVisibility> = occupancies[i]
            .iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .map(|(k, _)| lookup(k).clone())
            .collect();
        let active = vec![true; items.len()];
        let vis = VisibilitySet::new(a.rows, a.cols, items);
        projector_score(&union_transport(a, &vis, &active), channels)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(Localization {
        index: best,
        translation: candidates[best],
        scores,
        occupancy: occupancies[best].clone(),
    })
}

/// Regular `n x n x n` lattice of translations centred on `center`.
pub fn candidate_lattice(center: &Vec3, step: &Vec3, n: usize) -> Vec<Vec3> {
    let half = (n as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n * n * n);
    for iy in 0..n {
        for iz in 0..n {
            for ix in 0..n {
                out.push(
                    center
                        + Vec3::new(
                            (ix as f64 - half) * step.x,
                            (iy as f64 - half) * step.y,
                            (iz as f64 - half) * step.z,
                        ),
                );
            }
        }
    }
    out
}
