//! Penumbra renderers.
//!
//! `render_exact` blocks a ray when any active voxel blocks it. The linearized
//! renderer subtracts every active voxel's shadow independently, which
//! double-counts rays blocked by more than one voxel.

use crate::error::{Error, Result};
use crate::par;

use super::matrix::{dot, TransportMatrix};
use super::visibility::VisibilitySet;

fn check_inputs(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    alpha: &[f64],
    f: &[f64],
    b: &[f64],
) -> Result<()> {
    if f.len() != a.cols {
        return Err(Error::dims(format!("{} emitter values", a.cols), f.len()));
    }
    if b.len() != a.rows {
        return Err(Error::dims(
            format!("{} background values", a.rows),
            b.len(),
        ));
    }
    if alpha.len() != vis.len() {
        return Err(Error::dims(
            format!("{} occupancies", vis.len()),
            alpha.len(),
        ));
    }
    if vis.rows != a.rows || vis.cols != a.cols {
        return Err(Error::dims(
            format!("visibility {}x{}", a.rows, a.cols),
            format!("{}x{}", vis.rows, vis.cols),
        ));
    }
    if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "emitter radiosity must be finite and nonnegative".into(),
        ));
    }
    if b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "background must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

/// Renders with union occlusion: a ray is blocked if any active voxel blocks it.
pub fn render_exact(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    alpha: &[bool],
    f: &[f64],
    b: &[f64],
) -> Result<Vec<f64>> {
    let weights: Vec<f64> = alpha.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
    check_inputs(a, vis, &weights, f, b)?;
    let n_cols = a.cols;
    Ok(par::map_range(a.rows, |m| {
        let row = a.row(m);
        let mut blocked = vec![false; n_cols];
        for e in vis.row(m) {
            if alpha[e.slot as usize] {
                let s = e.emitter_start as usize;
                blocked[s..s + e.len as usize].fill(true);
            }
        }
        let lit: f64 = row
            .iter()
            .zip(f)
            .zip(&blocked)
            .filter(|(_, hidden)| !**hidden)
            .map(|((a, f), _)| a * f)
            .sum();
        lit + b[m]
    }))
}

/// Renders `(A - sum_k alpha_k (A . V_k)) f + b` from the sparse runs.
pub fn render_linearized(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    alpha: &[f64],
    f: &[f64],
    b: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(a, vis, alpha, f, b)?;
    if alpha.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(
            "relaxed occupancies must lie in [0, 1]".into(),
        ));
    }
    let n_cols = a.cols;
    Ok(par::map_range(a.rows, |m| {
        // per-ray transmittance, summed in the same order as `render_exact`
        // so a single voxel gives bit-identical images
        let mut t = vec![1.0; n_cols];
        for e in vis.row(m) {
            let w = alpha[e.slot as usize];
            if w != 0.0 {
                let s = e.emitter_start as usize;
                t[s..s + e.len as usize].iter_mut().for_each(|v| *v -= w);
            }
        }
        let lit: f64 = a
            .row(m)
            .iter()
            .zip(f)
            .zip(&t)
            .map(|((a, f), t)| a * f * t)
            .sum();
        lit + b[m]
    }))
}

/// Pinhole, pinspeck and unoccluded renders for a single voxel slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Complementarity {
    pub pinhole: Vec<f64>,
    pub pinspeck: Vec<f64>,
    pub unoccluded: Vec<f64>,
}

/// Renders the three images for voxel `slot`, each from its own sum.
pub fn complementarity_check(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    slot: usize,
    f: &[f64],
) -> Result<Complementarity> {
    if slot >= vis.len() {
        return Err(Error::InvalidInput(format!(
            "voxel slot {slot} out of range"
        )));
    }
    if f.len() != a.cols {
        return Err(Error::dims(a.cols, f.len()));
    }
    let pairs = par::map_range(a.rows, |m| {
        let row = a.row(m);
        let mut through = vec![false; a.cols];
        for e in vis.row(m).iter().filter(|e| e.slot as usize == slot) {
            let s = e.emitter_start as usize;
            through[s..s + e.len as usize].fill(true);
        }
        let mut hole = 0.0;
        let mut speck = 0.0;
        for n in 0..a.cols {
            let v = row[n] * f[n];
            if through[n] {
                hole += v;
            } else {
                speck += v;
            }
        }
        (hole, speck, dot(row, f))
    });
    Ok(Complementarity {
        pinhole: pairs.iter().map(|p| p.0).collect(),
        pinspeck: pairs.iter().map(|p| p.1).collect(),
        unoccluded: pairs.iter().map(|p| p.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SceneConfig, VoxelGrid};
    use crate::transport::build_transport;

    fn scene() -> (TransportMatrix, VisibilitySet) {
        let cfg = SceneConfig::square((1.0, 8), (1.0, 4), 1.0, (2, 2, 2));
        let grid = VoxelGrid::from_config(&cfg).unwrap();
        (
            build_transport(&cfg).unwrap(),
            VisibilitySet::from_config(&cfg, &grid),
        )
    }

    #[test]
    fn no_occluder_is_plain_transport() {
        let (a, vis) = scene();
        let f: Vec<f64> = (0..a.cols).map(|i| 0.5 + i as f64 * 0.1).collect();
        let b = vec![0.25; a.rows];
        let exact = render_exact(&a, &vis, &vec![false; vis.len()], &f, &b).unwrap();
        let lin = render_linearized(&a, &vis, &vec![0.0; vis.len()], &f, &b).unwrap();
        let af = a.apply(&f);
        for m in 0..a.rows {
            assert_eq!(exact[m], af[m] + 0.25);
            assert_eq!(lin[m], af[m] + 0.25);
        }
    }

    #[test]
    fn single_voxel_equals_shadow_subtraction() {
        let (a, vis) = scene();
        let f = vec![1.0; a.cols];
        let b = vec![0.0; a.rows];
        let mut on = vec![false; vis.len()];
        on[3] = true;
        let exact = render_exact(&a, &vis, &on, &f, &b).unwrap();
        let c = complementarity_check(&a, &vis, 3, &f).unwrap();
        for m in 0..a.rows {
            assert!((exact[m] - (c.unoccluded[m] - c.pinhole[m])).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_inputs() {
        let (a, vis) = scene();
        let mut f = vec![1.0; a.cols];
        f[0] = -1.0;
        assert!(render_exact(&a, &vis, &vec![false; vis.len()], &f, &vec![0.0; a.rows]).is_err());
        let f = vec![1.0; a.cols];
        let mut b = vec![0.0; a.rows];
        b[2] = -0.1;
        assert!(render_linearized(&a, &vis, &vec![0.0; vis.len()], &f, &b).is_err());
    }

    #[test]
    fn zero_emitter_gives_zero_images() {
        let (a, vis) = scene();
        let c = complementarity_check(&a, &vis, 0, &vec![0.0; a.cols]).unwrap();
        assert!(c
            .pinhole
            .iter()
            .chain(&c.pinspeck)
            .chain(&c.unoccluded)
            .all(|v| *v == 0.0));
    }

    #[test]
    fn exact_is_monotone_in_occupancy() {
        let (a, vis) = scene();
        let f = vec![1.0; a.cols];
        let b = vec![0.0; a.rows];
        let mut on = vec![false; vis.len()];
        let mut prev = render_exact(&a, &vis, &on, &f, &b).unwrap();
        for k in [5, 1, 6, 2] {
            on[k] = true;
            let next = render_exact(&a, &vis, &on, &f, &b).unwrap();
            assert!(next.iter().zip(&prev).all(|(n, p)| n <= p));
            prev = next;
        }
    }
}
