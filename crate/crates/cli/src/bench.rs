use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use penumbra_core::transport::measure_footprint;
use serde::Serialize;

use crate::common::{load_scene, parse_grid, write_text};
use crate::manifest::{beside, Recorder};
use crate::render::scene_from_defaults;
use crate::Context;

pub const BENCH_HEADER: &str = "grid,wall_pixels,emitter_pixels,voxels,sparse_ms,sparse_bytes,dense_ms,dense_bytes,dense_projected_bytes,dense_status";

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Base scene whose voxel grid is replaced per entry; the default scene otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Comma-separated voxel grids, each NXxNYxNZ.
    #[arg(long)]
    grids: Option<String>,
    #[arg(long)]
    repeat: Option<usize>,
    /// Dense stacks projected above this many bytes are reported, not built.
    #[arg(long)]
    dense_cap_bytes: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn millis(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn bench(ctx: &Context, a: BenchArgs) -> anyhow::Result<()> {
    let d = &ctx.defaults.bench;
    let mut rec = Recorder::new("bench", &ctx.defaults, ctx.threads);
    rec.config(&a);
    let base = match &a.scene {
        Some(p) => {
            rec.input(p);
            load_scene(p)?
        }
        None => scene_from_defaults(ctx)?,
    };
    let repeat = a.repeat.unwrap_or(d.repeat);
    let cap = a.dense_cap_bytes.unwrap_or(d.dense_cap_bytes);

    let mut csv = format!("{BENCH_HEADER}\n");
    for spec in a.grids.as_deref().unwrap_or(&d.grids).split(',') {
        let (nx, ny, nz) = parse_grid(spec.trim())?;
        let mut cfg = base.clone();
        (cfg.voxel_nx, cfg.voxel_ny, cfg.voxel_nz) = (nx, ny, nz);
        cfg.validate()?;
        let fp = measure_footprint(&cfg, repeat, cap)?;
        let (dense_ms, dense_bytes, status) = match (fp.dense_time, fp.dense_bytes) {
            (Some(t), Some(b)) => (format!("{:.3}", millis(t)), b.to_string(), "built"),
            _ => (String::new(), String::new(), "over_cap"),
        };
        writeln!(
            csv,
            "{nx}x{ny}x{nz},{},{},{},{:.3},{},{dense_ms},{dense_bytes},{},{status}",
            fp.wall_pixels,
            fp.emitter_pixels,
            nx * ny * nz,
            millis(fp.sparse_time),
            fp.sparse_bytes,
            fp.dense_projected_bytes
        )?;
        eprintln!(
            "{nx}x{ny}x{nz}: sparse {:.1} ms, {} bytes; dense projected {} bytes ({status})",
            millis(fp.sparse_time),
            fp.sparse_bytes,
            fp.dense_projected_bytes
        );
    }
    write_text(&a.out, &csv)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))
}
