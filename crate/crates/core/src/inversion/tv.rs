//! Emitter recovery with a squared total-variation penalty.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par;
use crate::transport::TransportMatrix;

use super::tikhonov::transport_gram;

/// Smoothing inside the isotropic TV norm.
pub const TV_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for TvOptions {
    fn default() -> Self {
        TvOptions {
            max_iter: 5000,
            rel_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvChannel {
    pub f: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Isotropic smoothed total variation of a `width x height` row-major image,
/// with forward differences and replicated borders.
pub fn total_variation(f: &[f64], width: usize, height: usize) -> f64 {
    let mut tv = 0.0;
    for i in 0..height {
        for j in 0..width {
            let v = f[i * width + j];
            let dx = if j + 1 < width {
                f[i * width + j + 1] - v
            } else {
                0.0
            };
            let dz = if i + 1 < height {
                f[(i + 1) * width + j] - v
            } else {
                0.0
            };
            tv += (dx * dx + dz * dz + TV_EPSILON).sqrt();
        }
    }
    tv
}

fn tv_gradient(f: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut g = vec![0.0; f.len()];
    for i in 0..height {
        for j in 0..width {
            let k = i * width + j;
            let dx = if j + 1 < width { f[k + 1] - f[k] } else { 0.0 };
            let dz = if i + 1 < height {
                f[k + width] - f[k]
            } else {
                0.0
            };
            let s = (dx * dx + dz * dz + TV_EPSILON).sqrt();
            if j + 1 < width {
                g[k] -= dx / s;
                g[k + 1] += dx / s;
            }
            if i + 1 < height {
                g[k] -= dz / s;
                g[k + width] += dz / s;
            }
        }
    }
    g
}

struct Problem<'a> {
    gram: &'a DMatrix<f64>,
    c: DVector<f64>,
    yy: f64,
    lambda: f64,
    width: usize,
    height: usize,
}

impl Problem<'_> {
    /// `|y - A f|^2 + lambda TV(f)^2`
    fn objective(&self, f: &DVector<f64>) -> f64 {
        let gf = self.gram * f;
        let data = f.dot(&gf) - 2.0 * self.c.dot(f) + self.yy;
        let tv = total_variation(f.as_slice(), self.width, self.height);
        data.max(0.0) + self.lambda * tv * tv
    }

    fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut g = (self.gram * f - &self.c) * 2.0;
        if self.lambda > 0.0 {
            let tv = total_variation(f.as_slice(), self.width, self.height);
            let gt = tv_gradient(f.as_slice(), self.width, self.height);
            for (gi, ti) in g.iter_mut().zip(gt) {
                *gi += 2.0 * self.lambda * tv * ti;
            }
        }
        g
    }

    fn solve(&self, start: DVector<f64>, opts: &TvOptions) -> Result<TvChannel> {
        let mut f = start.map(|v| v.max(0.0));
        let mut obj = self.objective(&f);
        // trace(A^T A) bounds the data-term curvature from above
        let trace: f64 = self.gram.diagonal().sum();
        let mut step = if trace > 0.0 { 0.5 / trace } else { 1.0 };
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let g = self.gradient(&f);
            let mut accepted = None;
            step *= 2.0;
            for _ in 0..60 {
                let cand = (&f - &g * step).map(|v| v.max(0.0));
                let d = &cand - &f;
                let c_obj = self.objective(&cand);
                if c_obj <= obj + g.dot(&d) + d.norm_squared() / (2.0 * step) {
                    accepted = Some((cand, c_obj));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, next_obj)) = accepted else {
                break;
            };
            if !next_obj.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    reason: "TV objective is not finite".into(),
                });
            }
            let change = (obj - next_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
            f = next;
            obj = next_obj;
            if change <= opts.rel_tol {
                break;
            }
        }
        Ok(TvChannel {
            f: f.as_slice().to_vec(),
            objective: obj,
            iterations,
        })
    }
}

/// Minimizes `|y_c - A f_c|^2 + lambda_tv TV(f_c)^2` independently for every
/// channel, with `f_c >= 0`.
///
/// The emitter grid is `width x height` (row-major). Each channel starts from
/// the best-fitting constant image and runs projected gradient descent with
/// backtracking.
pub fn tv_reconstruct(
    a: &TransportMatrix,
    channels: &[Vec<f64>],
    lambda_tv: f64,
    width: usize,
    height: usize,
    opts: &TvOptions,
) -> Result<Vec<TvChannel>> {
    if !(lambda_tv >= 0.0 && lambda_tv.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda_tv must be >= 0, got {lambda_tv}"
        )));
    }
    if width * height != a.cols {
        return Err(Error::dims(
            a.cols,
            format!("{width}x{height} emitter grid"),
        ));
    }
    for y in channels {
        if y.len() != a.rows {
            return Err(Error::dims(a.rows, y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "measurement contains non-finite values".into(),
            ));
        }
    }
    let (a_cm, gram) = transport_gram(a);
    let ones = DVector::from_element(a.cols, 1.0);
    let g1 = &gram * &ones;
    let curvature = ones.dot(&g1);
    let results = par::map_slice(channels, |y| {
        let c = a_cm.tr_mul(&DVector::from_column_slice(y));
        // best constant image as the starting point
        let level = if curvature > 0.0 {
            (ones.dot(&c) / curvature).max(0.0)
        } else {
            0.0
        };
        let problem = Problem {
            gram: &gram,
            c,
            yy: y.iter().map(|v| v * v).sum(),
            lambda: lambda_tv,
            width,
            height,
        };
        problem.solve(&ones * level, opts)
    });
    results.into_iter().collect()
}
