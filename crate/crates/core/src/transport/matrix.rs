use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{SceneConfig, Vec3};
use crate::par;

/// Wall surface normal, facing the hidden scene.
pub const WALL_NORMAL: Vec3 = Vec3::new(0.0, 1.0, 0.0);
/// Emitter surface normal, facing the wall.
pub const EMITTER_NORMAL: Vec3 = Vec3::new(0.0, -1.0, 0.0);

/// Lambertian reflection and foreshortening factor between a wall point and
/// an emitter point. Back-facing pairs contribute zero.
pub fn lambert_kernel(p: &Vec3, n_p: &Vec3, x: &Vec3, n_x: &Vec3) -> Result<f64> {
    let d = p - x;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::InvalidInput(
            "wall and emitter points coincide".into(),
        ));
    }
    let cos_x = (d.dot(n_x) / r).max(0.0);
    let cos_p = (-d.dot(n_p) / r).max(0.0);
    Ok(cos_x * cos_p)
}

/// Dense `M x N` Lambertian transport from emitter pixels to wall pixels,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub scene_hash: u64,
}

impl TransportMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len()));
        }
        Ok(TransportMatrix {
            rows,
            cols,
            data,
            scene_hash: 0,
        })
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.cols + n]
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// `A f`
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.cols);
        par::map_range(self.rows, |m| dot(self.row(m), f))
    }

    /// Elementwise product with a row-major mask of the same shape.
    pub fn masked(&self, mask: &[f64]) -> TransportMatrix {
        assert_eq!(mask.len(), self.data.len());
        TransportMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(mask).map(|(a, w)| a * w).collect(),
            scene_hash: self.scene_hash,
        }
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds `A[m, n] = g(p_m, x_n) / |x_n - p_m|^2 * area`, sampling pixel
/// centres.
pub fn build_transport(cfg: &SceneConfig) -> Result<TransportMatrix> {
    cfg.validate()?;
    let walls = cfg.wall_pixels();
    let emitters = cfg.emitter_pixels();
    let area = cfg.emitter_pixel_area();
    let cols = emitters.len();
    let mut data = vec![0.0; walls.len() * cols];
    par::for_each_row_mut(&mut data, cols, |m, row| {
        let p = walls[m];
        for (n, x) in emitters.iter().enumerate() {
            let r2 = (x - p).norm_squared();
            // points lie on distinct parallel planes, so r2 > 0
            let g = lambert_kernel(&p, &WALL_NORMAL, x, &EMITTER_NORMAL).unwrap_or(0.0);
            row[n] = g / r2 * area;
        }
    });
    Ok(TransportMatrix {
        rows: walls.len(),
        cols,
        data,
        scene_hash: cfg.hash(),
    })
}
