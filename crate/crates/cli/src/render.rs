use std::path::PathBuf;

use anyhow::{bail, Context as _};
use clap::{Args, ValueEnum};
use penumbra_core::geometry::{Frame, SceneConfig, VoxelGrid};
use penumbra_core::io::{load_cloud, occupancy_from_text};
use penumbra_core::pipeline::corrupt;
use penumbra_core::transport::{
    build_transport, render_exact, render_linearized, PenumbraImage, VisibilitySet,
};
use serde::Serialize;

use crate::common::{load_image, load_scene, parse_grid, read_text, save_image, write_text};
use crate::manifest::{beside, Recorder};
use crate::Context;

#[derive(Debug, Args, Serialize)]
pub struct SceneArgs {
    /// Wall side length.
    #[arg(long)]
    wall_size: Option<f64>,
    /// Wall pixels per side.
    #[arg(long)]
    wall_res: Option<usize>,
    #[arg(long)]
    emitter_size: Option<f64>,
    #[arg(long)]
    emitter_res: Option<usize>,
    /// Wall-to-emitter distance.
    #[arg(long)]
    depth: Option<f64>,
    /// Voxel counts as NXxNYxNZ.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl SceneArgs {
    fn config(&self, ctx: &Context) -> anyhow::Result<SceneConfig> {
        let d = &ctx.defaults.scene;
        let grid = parse_grid(self.grid.as_deref().unwrap_or(&d.grid))?;
        let mut cfg = SceneConfig::square(
            (
                self.wall_size.unwrap_or(d.wall_size),
                self.wall_res.unwrap_or(d.wall_res),
            ),
            (
                self.emitter_size.unwrap_or(d.emitter_size),
                self.emitter_res.unwrap_or(d.emitter_res),
            ),
            self.depth.unwrap_or(d.depth),
            grid,
        );
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The scene described by the `[scene]` defaults alone.
pub fn scene_from_defaults(ctx: &Context) -> anyhow::Result<SceneConfig> {
    SceneArgs {
        wall_size: None,
        wall_res: None,
        emitter_size: None,
        emitter_res: None,
        depth: None,
        grid: None,
        seed: 0,
        out: PathBuf::new(),
    }
    .config(ctx)
}

pub fn scene(ctx: &Context, a: SceneArgs) -> anyhow::Result<()> {
    let cfg = a.config(ctx)?;
    let mut rec = Recorder::new("scene", &ctx.defaults, ctx.threads);
    rec.config(cfg.to_text());
    rec.seed(a.seed);
    write_text(&a.out, &cfg.to_text())?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// Union occlusion.
    Exact,
    /// Sum of per-voxel shadows.
    Linearized,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Occupancy list (`ix iy iz value` per line).
    #[arg(long, conflicts_with = "cloud", required_unless_present = "cloud")]
    occupancy: Option<PathBuf>,
    /// Scene-frame point cloud to voxelize.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Emitter image (one plane per color channel).
    #[arg(long)]
    emitter: PathBuf,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    sbr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn render(ctx: &Context, a: RenderArgs) -> anyhow::Result<()> {
    let model = match a.model {
        Some(m) => m,
        None => Model::from_str(&ctx.defaults.render.model, true).map_err(anyhow::Error::msg)?,
    };
    let mut rec = Recorder::new("render", &ctx.defaults, ctx.threads);
    rec.config(serde_json::json!({ "args": &a, "model": model }));
    rec.seed(a.seed);

    let cfg = load_scene(&a.scene)?;
    rec.input(&a.scene);
    let grid = VoxelGrid::from_config(&cfg)?;
    let occupancy = match (&a.occupancy, &a.cloud) {
        (Some(p), _) => {
            rec.input(p);
            occupancy_from_text(&grid, &read_text(p)?)
                .with_context(|| format!("invalid occupancy {}", p.display()))?
        }
        (None, Some(p)) => {
            rec.input(p);
            grid.voxelize(
                &load_cloud(p, Frame::Scene)
                    .with_context(|| format!("invalid cloud {}", p.display()))?,
            )
        }
        (None, None) => bail!("one of --occupancy or --cloud is required"),
    };
    let emitter = load_image(&a.emitter)?;
    rec.input(&a.emitter);
    if emitter.width != cfg.emitter_res_x || emitter.height != cfg.emitter_res_z {
        bail!(
            "emitter image is {}x{}, scene expects {}x{}",
            emitter.width,
            emitter.height,
            cfg.emitter_res_x,
            cfg.emitter_res_z
        );
    }

    let y = render_image(&cfg, &grid, &occupancy, &emitter, model)?;
    let y = corrupt(&y, a.sbr_db, a.snr_db, a.seed)?;
    save_image(&a.out, &y)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))
}

/// Noise-free render of every emitter channel.
pub fn render_image(
    cfg: &SceneConfig,
    grid: &VoxelGrid,
    occupancy: &[bool],
    emitter: &PenumbraImage,
    model: Model,
) -> anyhow::Result<PenumbraImage> {
    let a = build_transport(cfg)?;
    let vis = VisibilitySet::from_config(cfg, grid);
    let zeros = vec![0.0; a.rows];
    let weights: Vec<f64> = occupancy
        .iter()
        .map(|&on| if on { 1.0 } else { 0.0 })
        .collect();
    let planes = emitter
        .planes()
        .iter()
        .map(|f| match model {
            Model::Exact => render_exact(&a, &vis, occupancy, f, &zeros),
            Model::Linearized => render_linearized(&a, &vis, &weights, f, &zeros),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PenumbraImage::from_planes(
        cfg.wall_res_x,
        cfg.wall_res_z,
        &planes,
    )?)
}
