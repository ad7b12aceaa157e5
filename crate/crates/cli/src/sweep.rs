use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use penumbra_core::diffusion::{cosine_schedule, generate_instance, DenoiserParams, ToyScene};
use penumbra_core::metrics::spearman;
use penumbra_core::pipeline::{sbr_sweep, PipelineConfig};
use serde::Serialize;

use crate::common::{parse_f64_list, write_text, DatasetDir, DATASET_MANIFEST, DATASET_SPEC};
use crate::manifest::{beside, Recorder};
use crate::Context;

pub const SWEEP_HEADER: &str = "index,seed,sbr_db,mse_2d,chamfer_3d,voxel_iou";

/// Rank correlation is reported over levels at or below this SBR.
const LOW_SBR_DB: f64 = 20.0;

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated SBR levels in dB.
    #[arg(long)]
    sbr_db: Option<String>,
    /// Number of held-out instances, each with its own noise seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    tv_weight: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn sweep(ctx: &Context, a: SweepArgs) -> anyhow::Result<()> {
    let d = &ctx.defaults.sweep;
    let mut rec = Recorder::new("sweep", &ctx.defaults, ctx.threads);
    rec.config(&a);
    rec.seed(a.seed);
    let levels = parse_f64_list(a.sbr_db.as_deref().unwrap_or(&d.sbr_db))?;
    let count = a.seeds.unwrap_or(d.seeds);
    let data = DatasetDir::open(&a.dataset)?;
    rec.input(&a.dataset.join(DATASET_SPEC));
    rec.input(&a.dataset.join(DATASET_MANIFEST));
    let pool = data.held_out();
    if count == 0 || count > pool.len() {
        bail!(
            "--seeds must be between 1 and the {} held-out instances",
            pool.len()
        );
    }
    let params = DenoiserParams::load(&a.model)?;
    rec.input(&a.model);
    let sched = cosine_schedule(params.config().steps)?;
    let scene = ToyScene::new(&data.config.scene)?;
    let instances = pool
        .take(count)
        .map(|i| generate_instance(&scene, &data.config, data.spec.seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<_> = instances.iter().collect();
    let cfg = PipelineConfig {
        points: a.points.unwrap_or(ctx.defaults.sample.points),
        tv_weight: a.tv_weight.unwrap_or(ctx.defaults.pipeline.tv_weight),
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let rows = sbr_sweep(&scene, &data.config, &params, &sched, &refs, &levels, &cfg)?;

    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        let e = &r.report;
        writeln!(
            csv,
            "{},{},{},{:e},{:e},{}",
            r.index, r.seed, e.sbr_db, e.mse_2d, e.chamfer_3d, e.voxel_iou
        )?;
    }
    write_text(&a.out, &csv)?;
    rec.output(&a.out);

    for &sbr in &levels {
        let at: Vec<_> = rows
            .iter()
            .filter(|r| r.report.sbr_db == sbr)
            .map(|r| &r.report)
            .collect();
        let n = at.len() as f64;
        println!(
            "sbr {sbr:>5} dB: mse {:.4e}  chamfer {:.4e}",
            at.iter().map(|e| e.mse_2d).sum::<f64>() / n,
            at.iter().map(|e| e.chamfer_3d).sum::<f64>() / n
        );
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.report.sbr_db <= LOW_SBR_DB)
        .map(|r| (r.report.sbr_db, r.report.mse_2d))
        .unzip();
    match spearman(&x, &y) {
        Ok(s) => println!(
            "spearman(sbr, mse) at <= {LOW_SBR_DB} dB: rho {:.3}, p {:.3e}",
            s.rho, s.p_value
        ),
        Err(e) => println!("spearman(sbr, mse) unavailable: {e}"),
    }
    rec.finish(&beside(&a.out))
}
