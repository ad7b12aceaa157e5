//! Three-stage reconstruction from one photograph: sample an occluder cloud
//! from the diffusion model, place it by projector-energy search, then
//! recover the emitter with TV regularization behind the placed occluder.

use crate::diffusion::{
    reverse_sample, DatasetConfig, DenoiserParams, Instance, NoiseSchedule, ToyScene,
};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::inversion::{localize, tv_reconstruct, union_transport, TvOptions};
use crate::metrics::{chamfer, mse, voxel_iou, EvalReport};
use crate::transport::{add_noise, background_level, PenumbraImage};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Points drawn in the generation stage.
    pub points: usize,
    /// TV weight relative to the mean diagonal of `A^T A`.
    pub tv_weight: f64,
    pub tv: TvOptions,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            points: 256,
            tv_weight: 1e-3,
            tv: TvOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Generated cloud in the normalized frame.
    pub cloud: PointCloud,
    pub translation: Vec3,
    pub scores: Vec<f64>,
    pub occupancy: Vec<bool>,
    pub emitter: PenumbraImage,
    /// Re-render of the measurement from the recovered occluder and emitter.
    pub fit: PenumbraImage,
}

pub fn run_pipeline(
    scene: &ToyScene,
    data: &DatasetConfig,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    y: &PenumbraImage,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let a = &scene.transport;
    if y.num_pixels() != a.rows {
        return Err(Error::dims(a.rows, y.num_pixels()));
    }
    if !(cfg.tv_weight >= 0.0 && cfg.tv_weight.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "tv weight must be >= 0, got {}",
            cfg.tv_weight
        )));
    }
    let channels = y.planes();

    let cloud = reverse_sample(y, params, sched, cfg.points, cfg.seed)?;

    let shape = cloud.place(data.shape_scale, &Vec3::zeros());
    let loc = localize(
        a,
        &scene.cfg,
        &scene.grid,
        &shape,
        &data.candidates(),
        &channels,
    )?;

    let vis = scene.active_visibility(&loc.occupancy);
    let at = union_transport(a, &vis, &vec![true; vis.len()]);
    let diag = at.data.iter().map(|v| v * v).sum::<f64>() / at.cols as f64;
    let (w, h) = (scene.cfg.emitter_res_x, scene.cfg.emitter_res_z);
    let solved = tv_reconstruct(&at, &channels, cfg.tv_weight * diag, w, h, &cfg.tv)?;
    let planes: Vec<Vec<f64>> = solved.into_iter().map(|c| c.f).collect();
    let fit: Vec<Vec<f64>> = planes.iter().map(|f| at.apply(f)).collect();

    Ok(PipelineOutput {
        cloud,
        translation: loc.translation,
        scores: loc.scores,
        occupancy: loc.occupancy,
        emitter: PenumbraImage::from_planes(w, h, &planes)?,
        fit: PenumbraImage::from_planes(y.width, y.height, &fit)?,
    })
}

/// Scores a pipeline run against the instance that produced the measurement.
/// `sbr_db` and `snr_db` record the corruption applied to that measurement.
pub fn evaluate(
    out: &PipelineOutput,
    truth: &Instance,
    scene: &ToyScene,
    sbr_db: f64,
    snr_db: f64,
) -> Result<EvalReport> {
    let report = EvalReport {
        mse_2d: mse(&out.emitter.values, &truth.emitter.values)?,
        chamfer_3d: chamfer(&out.cloud, &truth.cloud)?,
        voxel_iou: voxel_iou(&out.occupancy, &truth.occupancy)?,
        sbr_db,
        snr_db,
        scene_hash: scene.transport.scene_hash,
        seed: truth.seed,
    };
    report.validate()?;
    Ok(report)
}

/// Adds a constant background at `sbr_db` (relative to the whole image) and
/// then white noise at `snr_db`. `None` skips either step.
pub fn corrupt(
    y: &PenumbraImage,
    sbr_db: Option<f64>,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<PenumbraImage> {
    let mut out = y.clone();
    if let Some(sbr) = sbr_db {
        let level = background_level(&y.values, sbr)?;
        out.values.iter_mut().for_each(|v| *v += level);
    }
    match snr_db {
        Some(snr) => add_noise(&out, snr, seed),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub seed: u64,
    pub report: EvalReport,
}

/// Runs the pipeline on every `(instance, sbr)` pair with the sampling seed
/// `cfg.seed + i` for the `i`-th instance, so that every SBR level sees the
/// same draws.
pub fn sbr_sweep(
    scene: &ToyScene,
    data: &DatasetConfig,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    instances: &[&Instance],
    sbr_levels: &[f64],
    cfg: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(instances.len() * sbr_levels.len());
    for (i, inst) in instances.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        for &sbr in sbr_levels {
            let y = corrupt(&inst.measurement, Some(sbr), None, seed)?;
            let run = PipelineConfig {
                seed,
                ..cfg.clone()
            };
            let out = run_pipeline(scene, data, params, sched, &y, &run)?;
            let report = evaluate(&out, inst, scene, sbr, f64::INFINITY)?;
            rows.push(SweepRow {
                index: inst.index,
                seed,
                report,
            });
        }
    }
    Ok(rows)
}
