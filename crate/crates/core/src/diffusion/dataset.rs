//! Procedural (shape, emitter, measurement) triples for desk-scale training.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SceneConfig, Vec3, VoxelGrid};
use crate::inversion::candidate_lattice;
use crate::par;
use crate::transport::{
    build_transport, build_visibility_for, render_exact, PenumbraImage, TransportMatrix,
    VisibilitySet,
};

use super::shapes::{fps_resample, sample_surface_points, Primitive, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    /// Thin slab, square in the wall plane.
    Box,
    Sphere,
    /// Rod lying along x.
    Cylinder,
    /// Sphere fused with a box.
    Union,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Box,
        ShapeClass::Sphere,
        ShapeClass::Cylinder,
        ShapeClass::Union,
    ];
    pub const PRIMITIVES: [ShapeClass; 3] =
        [ShapeClass::Box, ShapeClass::Sphere, ShapeClass::Cylinder];

    /// Instance with dimensions jittered by up to `jitter` (relative).
    pub fn shape(&self, jitter: f64, rng: &mut ChaCha8Rng) -> Shape {
        let mut j = |v: f64| v * (1.0 + rng.random_range(-jitter..=jitter));
        let o = Vec3::zeros();
        match self {
            ShapeClass::Box => Shape::new(vec![Primitive::Box {
                center: o,
                half: Vec3::new(0.5, j(0.12), j(0.5)),
            }]),
            ShapeClass::Sphere => Shape::new(vec![Primitive::Sphere {
                center: o,
                radius: 0.5,
            }]),
            ShapeClass::Cylinder => Shape::new(vec![Primitive::Cylinder {
                center: o,
                radius: j(0.16),
                half_length: 0.5,
            }]),
            ShapeClass::Union => Shape::new(vec![
                Primitive::Sphere {
                    center: Vec3::new(-0.2, 0.0, 0.0),
                    radius: j(0.3),
                },
                Primitive::Box {
                    center: Vec3::new(0.25, 0.0, 0.0),
                    half: Vec3::new(j(0.25), j(0.15), j(0.15)),
                },
            ]),
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeClass::Box => "box",
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Union => "union",
        })
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(ShapeClass::Box),
            "sphere" => Ok(ShapeClass::Sphere),
            "cylinder" => Ok(ShapeClass::Cylinder),
            "union" => Ok(ShapeClass::Union),
            other => Err(Error::InvalidInput(format!(
                "unknown shape class '{other}'"
            ))),
        }
    }
}

/// Scene and sampling parameters of a procedural dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub classes: Vec<ShapeClass>,
    pub dense_points: usize,
    pub cloud_points: usize,
    /// Side of the normalized unit cube in scene units.
    pub shape_scale: f64,
    pub jitter: f64,
    /// Placements are drawn from an `n x n x n` lattice.
    pub lattice_center: Vec3,
    pub lattice_step: Vec3,
    pub lattice_n: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::square((1.0, 64), (0.4, 8), 1.0, (16, 8, 16)),
            classes: ShapeClass::PRIMITIVES.to_vec(),
            dense_points: 4096,
            cloud_points: 256,
            shape_scale: 0.3,
            jitter: 0.15,
            lattice_center: Vec3::new(0.0, 0.3, 0.0),
            lattice_step: Vec3::new(0.08, 0.08, 0.08),
            lattice_n: 3,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one shape class is required".into(),
            ));
        }
        if self.cloud_points == 0 || self.dense_points < self.cloud_points {
            return Err(Error::InvalidConfig(
                "need 0 < cloud_points <= dense_points".into(),
            ));
        }
        if !(self.shape_scale > 0.0) || !(0.0..1.0).contains(&self.jitter) || self.lattice_n == 0 {
            return Err(Error::InvalidConfig(
                "invalid shape scale, jitter or lattice".into(),
            ));
        }
        Ok(())
    }

    pub fn candidates(&self) -> Vec<Vec3> {
        candidate_lattice(&self.lattice_center, &self.lattice_step, self.lattice_n)
    }
}

/// Precomputed geometry shared by every instance of a dataset.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub cfg: SceneConfig,
    pub grid: VoxelGrid,
    pub transport: TransportMatrix,
}

impl ToyScene {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        Ok(ToyScene {
            cfg: cfg.clone(),
            grid: VoxelGrid::from_config(cfg)?,
            transport: build_transport(cfg)?,
        })
    }

    /// Visibility of just the active voxels, with every slot switched on.
    pub fn active_visibility(&self, occupancy: &[bool]) -> VisibilitySet {
        let active: Vec<usize> = (0..occupancy.len()).filter(|&k| occupancy[k]).collect();
        let items = build_visibility_for(&self.cfg, &self.grid, &active);
        VisibilitySet::new(self.transport.rows, self.transport.cols, items)
    }

    /// Union-occlusion render of `occupancy` lit by `f`, plus a constant
    /// background.
    pub fn render(&self, occupancy: &[bool], f: &[f64], background: f64) -> Result<PenumbraImage> {
        let vis = self.active_visibility(occupancy);
        let on = vec![true; vis.len()];
        let b = vec![background; self.transport.rows];
        let values = render_exact(&self.transport, &vis, &on, f, &b)?;
        PenumbraImage::new(self.cfg.wall_res_x, self.cfg.wall_res_z, 1, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub index: usize,
    pub class: ShapeClass,
    /// Normalized cloud in `[-0.5, 0.5]^3`.
    pub cloud: PointCloud,
    pub translation: Vec3,
    pub occupancy: Vec<bool>,
    pub emitter: PenumbraImage,
    pub measurement: PenumbraImage,
    pub seed: u64,
}

/// Positive, smooth random emitter image on an `nx x nz` grid.
pub fn smooth_emitter(nx: usize, nz: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (p, q) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let (ph, amp) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.2..0.4),
    );
    (0..nx * nz)
        .map(|n| {
            let u = (n % nx) as f64 / (nx.max(2) - 1) as f64;
            let v = (n / nx) as f64 / (nz.max(2) - 1) as f64;
            0.6 + amp * (p * u + ph).sin() * (q * v).cos()
        })
        .collect()
}

fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Instance `index` of the dataset with base seed `seed`.
pub fn generate_instance(
    scene: &ToyScene,
    cfg: &DatasetConfig,
    seed: u64,
    index: usize,
) -> Result<Instance> {
    let mut rng = instance_rng(seed, index);
    let class = cfg.classes[rng.random_range(0..cfg.classes.len())];
    let shape = class.shape(cfg.jitter, &mut rng);
    let dense =
        sample_surface_points(&shape, cfg.dense_points, rng.random())?.normalize_to_unit_cube();
    let cloud = fps_resample(&dense, cfg.cloud_points, rng.random())?;
    let candidates = cfg.candidates();
    let translation = candidates[rng.random_range(0..candidates.len())];
    let occupancy = scene
        .grid
        .voxelize(&dense.place(cfg.shape_scale, &translation));
    let f = smooth_emitter(cfg.scene.emitter_res_x, cfg.scene.emitter_res_z, &mut rng);
    let measurement = scene.render(&occupancy, &f, 0.0)?;
    let emitter = PenumbraImage::new(cfg.scene.emitter_res_x, cfg.scene.emitter_res_z, 1, f)?;
    Ok(Instance {
        index,
        class,
        cloud,
        translation,
        occupancy,
        emitter,
        measurement,
        seed,
    })
}

/// `n` instances, independent per `(seed, index)`.
pub fn generate_dataset(
    n: usize,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<(ToyScene, Vec<Instance>)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput(
            "dataset size must be at least 1".into(),
        ));
    }
    let scene = ToyScene::new(&cfg.scene)?;
    let items = par::map_range(n, |i| generate_instance(&scene, cfg, seed, i));
    let items = items.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((scene, items))
}

/// Number of held-out instances for a dataset of `n`, at the ratio
/// 3,000 of 262,000 and never fewer than one.
pub fn held_out_count(n: usize) -> usize {
    ((n as f64 * 3000.0 / 262_000.0).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}
