//! Evaluation metrics: image error, point-cloud distance, occupancy overlap
//! and signal-to-background ratios.

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::par;
use crate::transport::PenumbraImage;

/// Mean squared difference over every pixel and channel.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("mse of empty images".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// [`mse`] on images, which must agree in width, height and channel count.
pub fn image_mse(a: &PenumbraImage, b: &PenumbraImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::dims(
            format!("{}x{}x{}", a.width, a.height, a.channels),
            format!("{}x{}x{}", b.width, b.height, b.channels),
        ));
    }
    mse(&a.values, &b.values)
}

fn mean_nearest_sq(from: &PointCloud, to: &PointCloud) -> f64 {
    let nearest = par::map_slice(&from.points, |p| {
        to.points
            .iter()
            .map(|q| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min)
    });
    nearest.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric chamfer distance with squared nearest-neighbour distances,
/// each direction averaged over its source cloud. Neighbours are exact.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidInput(
            "chamfer distance of an empty cloud".into(),
        ));
    }
    Ok(mean_nearest_sq(p, q) + mean_nearest_sq(q, p))
}

/// Intersection over union of two binary occupancies; 1 when both are empty.
pub fn voxel_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `10 log10(mean(signal^2) / mean(background^2))`.
pub fn sbr_db(signal: &[f64], background: &[f64]) -> Result<f64> {
    if signal.len() != background.len() {
        return Err(Error::dims(signal.len(), background.len()));
    }
    let ps = signal.iter().map(|v| v * v).sum::<f64>();
    let pb = background.iter().map(|v| v * v).sum::<f64>();
    if pb == 0.0 {
        return Err(Error::InvalidInput("background is identically zero".into()));
    }
    Ok(10.0 * (ps / pb).log10())
}

/// `10 log10(mean(clean^2) / mean((noisy - clean)^2))`.
pub fn snr_db(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    if clean.len() != noisy.len() {
        return Err(Error::dims(clean.len(), noisy.len()));
    }
    if noise.iter().all(|v| *v == 0.0) {
        return Ok(f64::INFINITY);
    }
    sbr_db(clean, &noise)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // average rank for ties, 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with a two-sided p-value from the t
/// approximation `t = rho sqrt((n-2)/(1-rho^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::dims(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(
            "spearman needs at least 3 pairs".into(),
        ));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput(
            "spearman of a constant sequence".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Spearman { rho, p_value })
}

/// One evaluation record. Renders as a single line of `key:value` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mse_2d: f64,
    pub chamfer_3d: f64,
    pub voxel_iou: f64,
    pub sbr_db: f64,
    pub snr_db: f64,
    pub scene_hash: u64,
    pub seed: u64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.mse_2d,
            self.chamfer_3d,
            self.voxel_iou,
            self.sbr_db,
            self.snr_db,
        ];
        if vals.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("report contains NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.voxel_iou) {
            return Err(Error::InvalidInput(format!(
                "iou {} outside [0, 1]",
                self.voxel_iou
            )));
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{mse_2d:{:e}, chamfer_3d:{:e}, voxel_iou:{}, sbr_db:{}, snr_db:{}, chamfer:\"squared,mean-per-cloud\", scene_hash:\"{:016x}\", seed:{}}}",
            self.mse_2d, self.chamfer_3d, self.voxel_iou, self.sbr_db, self.snr_db, self.scene_hash, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Vec3};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(
            pts.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            Frame::Scene,
        )
    }

    #[test]
    fn mse_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse(&a, &[1.0]).is_err());
    }

    #[test]
    fn chamfer_cases() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&p, &q).unwrap(), 2.0);
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        assert!(chamfer(&p, &cloud(&[])).is_err());
    }

    #[test]
    fn iou_cases() {
        assert_eq!(voxel_iou(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(voxel_iou(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(voxel_iou(&[true, false], &[true, true]).unwrap(), 0.5);
        assert_eq!(voxel_iou(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert!(voxel_iou(&[true], &[true, true]).is_err());
    }

    #[test]
    fn sbr_cases() {
        assert!(sbr_db(&[1.0, -1.0], &[1.0, 1.0]).unwrap().abs() < 1e-12);
        let s = [1.0; 4];
        let b = [10f64.sqrt(); 4];
        assert!((sbr_db(&s, &b).unwrap() + 10.0).abs() < 1e-12);
        assert!(sbr_db(&s, &[0.0; 4]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_of_monotone_sequences() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        let s = spearman(&x, &y).unwrap();
        assert_eq!(s.rho, -1.0);
        assert_eq!(s.p_value, 0.0);
    }

    #[test]
    fn report_line() {
        let r = EvalReport {
            mse_2d: 0.5,
            chamfer_3d: 0.25,
            voxel_iou: 1.0,
            sbr_db: 15.0,
            snr_db: 30.0,
            scene_hash: 255,
            seed: 7,
        };
        r.validate().unwrap();
        let line = r.to_string();
        assert!(!line.contains('\n'));
        assert!(line.contains("voxel_iou:1,"));
        assert!(line.contains("scene_hash:\"00000000000000ff\""));
    }
}
