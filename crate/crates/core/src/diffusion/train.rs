//! Simplified noise-prediction training.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::par;
use crate::transport::PenumbraImage;

use super::model::DenoiserParams;
use super::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub ema_decay: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 16,
            ema_decay: 0.9999,
            iterations: 2000,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steps > 0
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.ema_decay > 0.0
            && self.ema_decay < 1.0
            && self.iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid training config {self:?}"
            )))
        }
    }
}

/// One training pair: a normalized cloud and the measurement it produced.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub cloud: &'a PointCloud,
    pub image: &'a PenumbraImage,
}

/// A noised cloud handed to the predictor.
#[derive(Debug, Clone)]
pub struct NoisyTerm {
    pub example: usize,
    pub t: usize,
    /// `3 x n` noised points.
    pub u_t: DMatrix<f64>,
    /// `3 x n` noise that produced them.
    pub eps: DMatrix<f64>,
}

pub(crate) fn cloud_matrix(c: &PointCloud) -> DMatrix<f64> {
    DMatrix::from_fn(3, c.len(), |i, j| c.points[j][i])
}

/// Draws `t ~ U{1..T}` and standard normal noise for every example, in
/// example order, from one seeded stream.
pub fn draw_terms(batch: &[Example<'_>], sched: &NoiseSchedule, seed: u64) -> Vec<NoisyTerm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let t = rng.random_range(1..=sched.steps);
            let n = ex.cloud.len();
            let eps = DMatrix::from_fn(3, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let ab = sched.alpha_bar(t);
            let u_t = cloud_matrix(ex.cloud) * ab.sqrt() + &eps * (1.0 - ab).sqrt();
            NoisyTerm {
                example: i,
                t,
                u_t,
                eps,
            }
        })
        .collect()
}

fn check_batch(batch: &[Example<'_>]) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let mut points = 0;
    for ex in batch {
        if ex.cloud.is_empty() || !ex.cloud.is_finite() {
            return Err(Error::InvalidInput(
                "training clouds must be nonempty and finite".into(),
            ));
        }
        points += ex.cloud.len();
    }
    Ok(points)
}

/// Mean over points of `|eps - predict(term)|^2` for one draw of the
/// training terms. The predictor sees the true noise, so frozen predictors
/// (exact or zero) can be injected.
pub fn denoising_loss_with(
    batch: &[Example<'_>],
    sched: &NoiseSchedule,
    seed: u64,
    predict: &mut dyn FnMut(&NoisyTerm) -> DMatrix<f64>,
) -> Result<f64> {
    let points = check_batch(batch)?;
    let total: f64 = draw_terms(batch, sched, seed)
        .iter()
        .map(|term| (&term.eps - predict(term)).norm_squared())
        .sum();
    Ok(total / points as f64)
}

/// Loss and gradient of the model on fixed terms.
pub fn loss_and_gradient(
    params: &DenoiserParams,
    weights: &[f64],
    batch: &[Example<'_>],
    terms: &[NoisyTerm],
) -> Result<(f64, Vec<f64>)> {
    let points = check_batch(batch)?;
    let images = batch
        .iter()
        .map(|ex| params.net.prepare_image(ex.image))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / points as f64;
    let n = params.len();
    let parts = par::map_slice(terms, |term| {
        let mut g = vec![0.0; n];
        let one = [(term.t, term.u_t.clone(), term.eps.clone())];
        let loss =
            params
                .net
                .example_loss_grad(weights, &images[term.example], &one, scale, &mut g);
        (loss, g)
    });
    // combine in term order so the result does not depend on threading
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss * scale, grad))
}

/// Decay actually applied at 1-based step `step`: the configured decay,
/// warmed up as `(1 + step) / (10 + step)` so early averages track the
/// weights.
pub fn ema_decay_at(decay: f64, step: u64) -> f64 {
    decay.min((1.0 + step as f64) / (10.0 + step as f64))
}

pub fn ema_update(ema: &mut [f64], weights: &[f64], decay: f64) {
    for (e, w) in ema.iter_mut().zip(weights) {
        *e = decay * *e + (1.0 - decay) * w;
    }
}

/// One optimizer step on a freshly drawn set of noise terms. Returns the
/// batch loss before the update.
pub fn training_step(
    batch: &[Example<'_>],
    params: &mut DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<f64> {
    if sched.steps != params.config().steps {
        return Err(Error::InvalidConfig(format!(
            "schedule has {} steps, model was built for {}",
            sched.steps,
            params.config().steps
        )));
    }
    let terms = draw_terms(batch, sched, seed);
    let (loss, grad) = loss_and_gradient(params, &params.weights, batch, &terms)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            iteration: params.step as usize + 1,
            reason: "training loss is not finite".into(),
        });
    }
    params.step += 1;
    let step = params.step;
    params.optimizer.step(&mut params.weights, &grad, step);
    let decay = ema_decay_at(cfg.ema_decay, step);
    ema_update(&mut params.ema, &params.weights, decay);
    Ok(loss)
}

/// Runs `cfg.iterations` steps over `data`, drawing each batch uniformly
/// with replacement. `observer` receives `(iteration, loss)`.
pub fn train(
    data: &[Example<'_>],
    params: &mut DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &TrainingConfig,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let batch: Vec<Example<'_>> = (0..cfg.batch_size)
            .map(|_| data[rng.random_range(0..data.len())])
            .collect();
        let step_seed = rng.random::<u64>();
        let loss = training_step(&batch, params, sched, cfg, step_seed)?;
        observer(it, loss);
        losses.push(loss);
    }
    Ok(losses)
}
