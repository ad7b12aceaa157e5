use std::path::PathBuf;

use anyhow::{bail, Context as _};
use clap::{Args, ValueEnum};
use penumbra_core::geometry::VoxelGrid;
use penumbra_core::inversion::{
    alternating_minimize_with, BackgroundMode, BackgroundShape, Relaxation, SolverOptions, TraceRow,
};
use penumbra_core::io::{occupancy_to_text, trace_to_csv};
use penumbra_core::transport::{build_transport, PenumbraImage, VisibilitySet};
use serde::Serialize;

use crate::common::{create_dir, load_image, load_scene, save_image, write_text};
use crate::manifest::{inside, Recorder};
use crate::Context;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationArg {
    Product,
    Sum,
    MeanSum,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeArg {
    Uniform,
    Field,
}

#[derive(Debug, Args, Serialize)]
pub struct InvertArgs {
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eta_z: Option<f64>,
    #[arg(long)]
    eta_b: Option<f64>,
    #[arg(long)]
    eta_lambda: Option<f64>,
    /// Initial regularization, relative to the mean diagonal of A^T A.
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Drop the background term entirely.
    #[arg(long)]
    no_background: bool,
    #[arg(long, value_enum)]
    background_shape: Option<ShapeArg>,
    #[arg(long, value_enum)]
    relaxation: Option<RelaxationArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

impl InvertArgs {
    fn options(&self, ctx: &Context) -> anyhow::Result<SolverOptions> {
        let d = &ctx.defaults.solver;
        let relaxation = match self.relaxation {
            Some(r) => r,
            None => RelaxationArg::from_str(&d.relaxation, true).map_err(anyhow::Error::msg)?,
        };
        let shape = match self.background_shape {
            Some(s) => s,
            None => ShapeArg::from_str(&d.background_shape, true).map_err(anyhow::Error::msg)?,
        };
        let opts = SolverOptions {
            num_iter: self.iters.unwrap_or(d.iters),
            eta_z: self.eta_z.unwrap_or(d.eta_z),
            eta_b: self.eta_b.unwrap_or(d.eta_b),
            eta_lambda: self.eta_lambda.unwrap_or(d.eta_lambda),
            lambda0: self.lambda0.unwrap_or(d.lambda0),
            threshold: self.threshold.unwrap_or(d.threshold),
            background: if self.no_background {
                BackgroundMode::Neglect
            } else {
                BackgroundMode::Estimate
            },
            background_shape: match shape {
                ShapeArg::Uniform => BackgroundShape::Uniform,
                ShapeArg::Field => BackgroundShape::Field,
            },
            relaxation: match relaxation {
                RelaxationArg::Product => Relaxation::Product,
                RelaxationArg::Sum => Relaxation::Sum,
                RelaxationArg::MeanSum => Relaxation::MeanSum,
            },
            seed: self.seed,
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

pub fn invert(ctx: &Context, a: InvertArgs) -> anyhow::Result<()> {
    let opts = a.options(ctx)?;
    let mut rec = Recorder::new("invert-grad", &ctx.defaults, ctx.threads);
    rec.config(serde_json::json!({ "args": &a, "solver": format!("{opts:?}") }));
    rec.seed(a.seed);

    let cfg = load_scene(&a.scene)?;
    rec.input(&a.scene);
    let y = load_image(&a.measurement)?;
    rec.input(&a.measurement);
    if y.width != cfg.wall_res_x || y.height != cfg.wall_res_z {
        bail!(
            "measurement is {}x{}, scene expects {}x{}",
            y.width,
            y.height,
            cfg.wall_res_x,
            cfg.wall_res_z
        );
    }
    if y.channels != 1 {
        bail!(
            "invert-grad takes a single-channel measurement, got {} channels",
            y.channels
        );
    }

    let grid = VoxelGrid::from_config(&cfg)?;
    let at = build_transport(&cfg)?;
    let vis = VisibilitySet::from_config(&cfg, &grid);
    create_dir(&a.out_dir)?;
    let trace_path = a.out_dir.join("trace.csv");

    let mut rows: Vec<TraceRow> = Vec::new();
    let result =
        alternating_minimize_with(&at, &vis, &y.values, &opts, &mut |row, _| rows.push(*row));
    // the trace is written even when the solver fails part way
    write_text(&trace_path, &trace_to_csv(&rows))?;
    rec.output(&trace_path);
    let inv = result
        .with_context(|| format!("solver stopped; partial trace in {}", trace_path.display()))?;

    let occ_path = a.out_dir.join("occupancy.txt");
    let soft = inv.state.occupancy();
    write_text(
        &occ_path,
        &occupancy_to_text(&grid, &inv.alpha, Some(&soft)),
    )?;
    rec.output(&occ_path);
    let emitter_path = a.out_dir.join("emitter.nlsi");
    save_image(
        &emitter_path,
        &PenumbraImage::new(cfg.emitter_res_x, cfg.emitter_res_z, 1, inv.f.clone())?,
    )?;
    rec.output(&emitter_path);
    println!(
        "active voxels {} of {}, final loss {:e}",
        inv.alpha.iter().filter(|v| **v).count(),
        inv.alpha.len(),
        rows.last().map_or(f64::NAN, |r| r.loss)
    );
    rec.finish(&inside(&a.out_dir))
}
