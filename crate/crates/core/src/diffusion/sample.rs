//! Ancestral sampling of the learned reverse chain.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud, Vec3};
use crate::par;
use crate::transport::PenumbraImage;

use super::model::DenoiserParams;
use super::schedule::NoiseSchedule;

/// Points per parallel chunk when evaluating the denoiser.
const CHUNK: usize = 512;

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(3, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Runs `t = T..1` from `u_T`, with
/// `u_{t-1} = (u_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sqrt(beta_t) z`.
///
/// `z` comes from `noise` and is zero at `t = 1`; passing `None` suppresses
/// it at every step.
pub fn reverse_chain(
    u_t: DMatrix<f64>,
    sched: &NoiseSchedule,
    predict: &mut dyn FnMut(&DMatrix<f64>, usize) -> DMatrix<f64>,
    mut noise: Option<&mut ChaCha8Rng>,
) -> DMatrix<f64> {
    let mut u = u_t;
    for t in (1..=sched.steps).rev() {
        let eps = predict(&u, t);
        let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
        let mut next = (u - eps * coef) / sched.alpha(t).sqrt();
        if t > 1 {
            if let Some(rng) = noise.as_deref_mut() {
                next += normal_matrix(rng, next.ncols()) * sched.beta(t).sqrt();
            }
        }
        u = next;
    }
    u
}

/// Draws `k` points conditioned on `y` using the averaged weights.
pub fn reverse_sample(
    y: &PenumbraImage,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    k: usize,
    seed: u64,
) -> Result<PointCloud> {
    if params.step == 0 {
        return Err(Error::InvalidInput("denoiser has not been trained".into()));
    }
    if sched.steps != params.config().steps {
        return Err(Error::InvalidConfig(format!(
            "schedule has {} steps, model was trained with {}",
            sched.steps,
            params.config().steps
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let latent = params.encode(y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_t = normal_matrix(&mut rng, k);
    let mut predict = |u: &DMatrix<f64>, t: usize| {
        let chunks = u.ncols().div_ceil(CHUNK);
        let parts = par::map_range(chunks, |c| {
            let start = c * CHUNK;
            let len = CHUNK.min(u.ncols() - start);
            params.predict_with(&params.ema, &u.columns(start, len).into_owned(), t, &latent)
        });
        let mut out = DMatrix::zeros(3, u.ncols());
        for (c, part) in parts.into_iter().enumerate() {
            out.columns_mut(c * CHUNK, part.ncols()).copy_from(&part);
        }
        out
    };
    let u0 = reverse_chain(u_t, sched, &mut predict, Some(&mut rng));
    let points: Vec<Vec3> = u0
        .column_iter()
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Divergence {
            iteration: sched.steps,
            reason: "reverse chain produced non-finite points".into(),
        });
    }
    Ok(PointCloud::new(points, Frame::Normalized))
}
