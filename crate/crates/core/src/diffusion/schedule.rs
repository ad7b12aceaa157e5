//! Cosine variance schedule and the Gaussian forward process.

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud, Vec3};

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
const BETA_MIN: f64 = 1e-8;
const BETA_MAX: f64 = 0.999;

/// Per-step variances `beta_t` and the derived retention factors, for
/// `t = 1..=T`. Index with the accessor methods, which take `t` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// `alpha_bar_t = h(t) / h(0)` with `h(t) = cos^2(((t/T + s)/(1 + s)) pi/2)`.
///
/// Betas are clipped to `[1e-8, 0.999]` and `alpha_bar` is then recomputed
/// as the running product of `1 - beta`, so the three sequences stay
/// mutually consistent.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "diffusion needs at least one step".into(),
        ));
    }
    let h = |t: f64| {
        let a = ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET))
            * std::f64::consts::FRAC_PI_2;
        a.cos().powi(2)
    };
    let h0 = h(0.0);
    let mut betas = Vec::with_capacity(steps);
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prev_raw = 1.0;
    let mut running = 1.0;
    for t in 1..=steps {
        let raw = h(t as f64) / h0;
        let beta = (1.0 - raw / prev_raw).clamp(BETA_MIN, BETA_MAX);
        prev_raw = raw;
        running *= 1.0 - beta;
        betas.push(beta);
        alpha_bars.push(running);
    }
    Ok(NoiseSchedule {
        steps,
        betas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `alpha_bar_t`; `t = 0` gives 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidInput(format!(
                "timestep {t} outside 1..={}",
                self.steps
            )));
        }
        Ok(())
    }
}

fn combine(u: &[Vec3], eps: &[Vec3], keep: f64, noise: f64) -> Result<Vec<Vec3>> {
    if u.len() != eps.len() {
        return Err(Error::dims(u.len(), eps.len()));
    }
    Ok(u.iter()
        .zip(eps)
        .map(|(p, e)| p * keep + e * noise)
        .collect())
}

/// Closed-form marginal `u_t = sqrt(abar_t) u0 + sqrt(1 - abar_t) eps`.
pub fn forward_noising(
    u0: &PointCloud,
    t: usize,
    eps: &[Vec3],
    sched: &NoiseSchedule,
) -> Result<PointCloud> {
    sched.check(t)?;
    let ab = sched.alpha_bar(t);
    let pts = combine(&u0.points, eps, ab.sqrt(), (1.0 - ab).sqrt())?;
    Ok(PointCloud::new(pts, Frame::Normalized))
}

/// One step of the Markov chain, `u_t = sqrt(alpha_t) u_{t-1} + sqrt(beta_t) eps`.
pub fn forward_step(
    u_prev: &PointCloud,
    t: usize,
    eps: &[Vec3],
    sched: &NoiseSchedule,
) -> Result<PointCloud> {
    sched.check(t)?;
    let pts = combine(
        &u_prev.points,
        eps,
        sched.alpha(t).sqrt(),
        sched.beta(t).sqrt(),
    )?;
    Ok(PointCloud::new(pts, Frame::Normalized))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape_and_monotonicity() {
        let s = cosine_schedule(256).unwrap();
        assert_eq!(s.steps, 256);
        assert!(s.alpha_bar(256) < 1e-3);
        assert!(s.alpha_bar(1) > 0.999);
        for t in 1..=256 {
            assert!(s.beta(t) > 0.0 && s.beta(t) <= 0.999);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let prod: f64 = (1..=t).map(|k| s.alpha(k)).product();
            assert!((prod - s.alpha_bar(t)).abs() <= 1e-12);
        }
        assert!(cosine_schedule(0).is_err());
    }

    #[test]
    fn zero_noise_scales_the_cloud() {
        let s = cosine_schedule(16).unwrap();
        let u0 = PointCloud::new(vec![Vec3::new(0.2, -0.1, 0.4)], Frame::Normalized);
        let ut = forward_noising(&u0, 5, &[Vec3::zeros()], &s).unwrap();
        assert_eq!(ut.points[0], u0.points[0] * s.alpha_bar(5).sqrt());
        assert!(forward_noising(&u0, 0, &[Vec3::zeros()], &s).is_err());
        assert!(forward_noising(&u0, 17, &[Vec3::zeros()], &s).is_err());
    }
}
