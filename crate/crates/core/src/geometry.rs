//! Scene frame, computational field of view, voxel grids and segment tests.
//!
//! The visible wall lies in the plane `y = 0` and the emitter (non-occluding)
//! plane in `y = D`. `x` is lateral and `z` points up. Both rectangles are
//! centred on the `y` axis.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Full geometric description of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub wall_width: f64,
    pub wall_height: f64,
    pub wall_res_x: usize,
    pub wall_res_z: usize,
    /// Distance `D` from the wall plane to the emitter plane.
    pub emitter_depth: f64,
    pub emitter_width: f64,
    pub emitter_height: f64,
    pub emitter_res_x: usize,
    pub emitter_res_z: usize,
    pub voxel_nx: usize,
    pub voxel_ny: usize,
    pub voxel_nz: usize,
    pub seed: u64,
}

const CONFIG_KEYS: [&str; 13] = [
    "wall_width",
    "wall_height",
    "wall_res_x",
    "wall_res_z",
    "emitter_depth",
    "emitter_width",
    "emitter_height",
    "emitter_res_x",
    "emitter_res_z",
    "voxel_nx",
    "voxel_ny",
    "voxel_nz",
    "seed",
];

impl SceneConfig {
    /// A square coaxial scene: `wall` and `emitter` are (extent, resolution),
    /// `depth` is `D`.
    pub fn square(
        wall: (f64, usize),
        emitter: (f64, usize),
        depth: f64,
        voxels: (usize, usize, usize),
    ) -> Self {
        SceneConfig {
            wall_width: wall.0,
            wall_height: wall.0,
            wall_res_x: wall.1,
            wall_res_z: wall.1,
            emitter_depth: depth,
            emitter_width: emitter.0,
            emitter_height: emitter.0,
            emitter_res_x: emitter.1,
            emitter_res_z: emitter.1,
            voxel_nx: voxels.0,
            voxel_ny: voxels.1,
            voxel_nz: voxels.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("wall_width", self.wall_width),
            ("wall_height", self.wall_height),
            ("emitter_depth", self.emitter_depth),
            ("emitter_width", self.emitter_width),
            ("emitter_height", self.emitter_height),
        ];
        for (name, v) in extents {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let counts = [
            ("wall_res_x", self.wall_res_x),
            ("wall_res_z", self.wall_res_z),
            ("emitter_res_x", self.emitter_res_x),
            ("emitter_res_z", self.emitter_res_z),
            ("voxel_nx", self.voxel_nx),
            ("voxel_ny", self.voxel_ny),
            ("voxel_nz", self.voxel_nz),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Number of wall (camera) pixels `M`.
    pub fn num_wall_pixels(&self) -> usize {
        self.wall_res_x * self.wall_res_z
    }

    /// Number of emitter pixels `N`.
    pub fn num_emitter_pixels(&self) -> usize {
        self.emitter_res_x * self.emitter_res_z
    }

    /// Number of voxels `K`.
    pub fn num_voxels(&self) -> usize {
        self.voxel_nx * self.voxel_ny * self.voxel_nz
    }

    /// Area of one emitter pixel.
    pub fn emitter_pixel_area(&self) -> f64 {
        (self.emitter_width / self.emitter_res_x as f64)
            * (self.emitter_height / self.emitter_res_z as f64)
    }

    /// Centre of wall pixel `m` (row-major, row 0 at the top edge).
    pub fn wall_pixel(&self, m: usize) -> Vec3 {
        let (row, col) = (m / self.wall_res_x, m % self.wall_res_x);
        pixel_center(
            row,
            col,
            self.wall_width,
            self.wall_height,
            self.wall_res_x,
            self.wall_res_z,
            0.0,
        )
    }

    /// Centre of emitter pixel `n` (row-major, row 0 at the top edge).
    pub fn emitter_pixel(&self, n: usize) -> Vec3 {
        let (row, col) = (n / self.emitter_res_x, n % self.emitter_res_x);
        pixel_center(
            row,
            col,
            self.emitter_width,
            self.emitter_height,
            self.emitter_res_x,
            self.emitter_res_z,
            self.emitter_depth,
        )
    }

    pub fn wall_pixels(&self) -> Vec<Vec3> {
        (0..self.num_wall_pixels())
            .map(|m| self.wall_pixel(m))
            .collect()
    }

    pub fn emitter_pixels(&self) -> Vec<Vec3> {
        (0..self.num_emitter_pixels())
            .map(|n| self.emitter_pixel(n))
            .collect()
    }

    /// Serializes to the flat `key=value` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key}={}", self.value_of(key));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "wall_width" => fmt_f64(self.wall_width),
            "wall_height" => fmt_f64(self.wall_height),
            "wall_res_x" => self.wall_res_x.to_string(),
            "wall_res_z" => self.wall_res_z.to_string(),
            "emitter_depth" => fmt_f64(self.emitter_depth),
            "emitter_width" => fmt_f64(self.emitter_width),
            "emitter_height" => fmt_f64(self.emitter_height),
            "emitter_res_x" => self.emitter_res_x.to_string(),
            "emitter_res_z" => self.emitter_res_z.to_string(),
            "voxel_nx" => self.voxel_nx.to_string(),
            "voxel_ny" => self.voxel_ny.to_string(),
            "voxel_nz" => self.voxel_nz.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Stable 64-bit FNV-1a hash of the canonical text form.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

fn fmt_f64(v: f64) -> String {
    // `{:?}` round-trips exactly.
    format!("{v:?}")
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn pixel_center(
    row: usize,
    col: usize,
    width: f64,
    height: f64,
    res_x: usize,
    res_z: usize,
    y: f64,
) -> Vec3 {
    let x = -0.5 * width + (col as f64 + 0.5) * width / res_x as f64;
    let z = 0.5 * height - (row as f64 + 0.5) * height / res_z as f64;
    Vec3::new(x, y, z)
}

impl FromStr for SceneConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut values: [Option<String>; 13] = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let idx = CONFIG_KEYS.iter().position(|k| *k == key).ok_or_else(|| {
                Error::Format(format!("line {}: unknown key '{key}'", lineno + 1))
            })?;
            if values[idx].is_some() {
                return Err(Error::Format(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            values[idx] = Some(value.trim().to_string());
        }
        let get = |i: usize| -> Result<&str> {
            values[i]
                .as_deref()
                .ok_or_else(|| Error::Format(format!("missing key '{}'", CONFIG_KEYS[i])))
        };
        let real = |i: usize| -> Result<f64> {
            get(i)?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{}: {e}", CONFIG_KEYS[i])))
        };
        let count = |i: usize| -> Result<usize> {
            get(i)?
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("{}: {e}", CONFIG_KEYS[i])))
        };
        let cfg = SceneConfig {
            wall_width: real(0)?,
            wall_height: real(1)?,
            wall_res_x: count(2)?,
            wall_res_z: count(3)?,
            emitter_depth: real(4)?,
            emitter_width: real(5)?,
            emitter_height: real(6)?,
            emitter_res_x: count(7)?,
            emitter_res_z: count(8)?,
            voxel_nx: count(9)?,
            voxel_ny: count(10)?,
            voxel_nz: count(11)?,
            seed: get(12)?
                .parse::<u64>()
                .map_err(|e| Error::Format(format!("seed: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The occluding volume: a frustum joining the wall field of view to the
/// emitter rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    /// Wall-side corners at `y = 0`, counter-clockwise from (-x, -z).
    pub wall_corners: [Vec3; 4],
    /// Emitter-side corners at `y = D`, same order.
    pub emitter_corners: [Vec3; 4],
}

fn rect_corners(width: f64, height: f64, y: f64) -> [Vec3; 4] {
    let (hw, hh) = (0.5 * width, 0.5 * height);
    [
        Vec3::new(-hw, y, -hh),
        Vec3::new(hw, y, -hh),
        Vec3::new(hw, y, hh),
        Vec3::new(-hw, y, hh),
    ]
}

pub fn build_cfov_frustum(cfg: &SceneConfig) -> Result<Frustum> {
    cfg.validate()?;
    Ok(Frustum {
        wall_corners: rect_corners(cfg.wall_width, cfg.wall_height, 0.0),
        emitter_corners: rect_corners(cfg.emitter_width, cfg.emitter_height, cfg.emitter_depth),
    })
}

impl Frustum {
    pub fn depth(&self) -> f64 {
        self.emitter_corners[0].y - self.wall_corners[0].y
    }

    /// All eight corners, wall side first.
    pub fn corners(&self) -> [Vec3; 8] {
        let w = &self.wall_corners;
        let e = &self.emitter_corners;
        [w[0], w[1], w[2], w[3], e[0], e[1], e[2], e[3]]
    }

    /// Half width and half height of the cross-section at depth `y`.
    pub fn half_section(&self, y: f64) -> (f64, f64) {
        let s = y / self.depth();
        let hw = (1.0 - s) * self.wall_corners[2].x + s * self.emitter_corners[2].x;
        let hh = (1.0 - s) * self.wall_corners[2].z + s * self.emitter_corners[2].z;
        (hw, hh)
    }

    /// Slab-normalized coordinates of `p`, each in `[0, 1]` inside the frustum.
    pub fn normalized(&self, p: &Vec3) -> Vec3 {
        let (hw, hh) = self.half_section(p.y);
        Vec3::new(
            (p.x + hw) / (2.0 * hw),
            p.y / self.depth(),
            (p.z + hh) / (2.0 * hh),
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let q = self.normalized(p);
        (0.0..=1.0).contains(&q.x) && (0.0..=1.0).contains(&q.y) && (0.0..=1.0).contains(&q.z)
    }
}

/// Uniform voxel subdivision of a frustum.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub frustum: Frustum,
    pub counts: [usize; 3],
    /// Centres ordered by `(iy, iz, ix)`, `ix` fastest.
    pub centers: Vec<Vec3>,
    /// Box half extents along x, y, z, taken at mid depth.
    pub half_extents: Vec3,
}

pub fn make_voxel_grid(frustum: &Frustum, nx: usize, ny: usize, nz: usize) -> Result<VoxelGrid> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidConfig(
            "voxel counts must be at least 1".into(),
        ));
    }
    let depth = frustum.depth();
    let mut centers = Vec::with_capacity(nx * ny * nz);
    for iy in 0..ny {
        let y = depth * (iy as f64 + 0.5) / ny as f64;
        let (hw, hh) = frustum.half_section(y);
        for iz in 0..nz {
            let z = -hh + 2.0 * hh * (iz as f64 + 0.5) / nz as f64;
            for ix in 0..nx {
                let x = -hw + 2.0 * hw * (ix as f64 + 0.5) / nx as f64;
                centers.push(Vec3::new(x, y, z));
            }
        }
    }
    let (hw, hh) = frustum.half_section(0.5 * depth);
    Ok(VoxelGrid {
        frustum: frustum.clone(),
        counts: [nx, ny, nz],
        centers,
        half_extents: Vec3::new(hw / nx as f64, 0.5 * depth / ny as f64, hh / nz as f64),
    })
}

impl VoxelGrid {
    pub fn from_config(cfg: &SceneConfig) -> Result<Self> {
        let frustum = build_cfov_frustum(cfg)?;
        make_voxel_grid(&frustum, cfg.voxel_nx, cfg.voxel_ny, cfg.voxel_nz)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [nx, _, nz] = self.counts;
        (iy * nz + iz) * nx + ix
    }

    /// Inverse of [`VoxelGrid::index`], returning `(ix, iy, iz)`.
    pub fn coords(&self, k: usize) -> (usize, usize, usize) {
        let [nx, _, nz] = self.counts;
        (k % nx, k / (nx * nz), (k / nx) % nz)
    }

    /// Voxel containing `p` in slab-normalized coordinates, if inside.
    pub fn locate(&self, p: &Vec3) -> Option<usize> {
        let q = self.frustum.normalized(p);
        let [nx, ny, nz] = self.counts;
        let cell = |u: f64, n: usize| -> Option<usize> {
            if !(0.0..=1.0).contains(&u) {
                return None;
            }
            Some(((u * n as f64) as usize).min(n - 1))
        };
        Some(self.index(cell(q.x, nx)?, cell(q.y, ny)?, cell(q.z, nz)?))
    }

    /// Binary occupancy of the voxels hit by any point of `cloud`.
    pub fn voxelize(&self, cloud: &PointCloud) -> Vec<bool> {
        let mut occ = vec![false; self.len()];
        for p in &cloud.points {
            if let Some(k) = self.locate(p) {
                occ[k] = true;
            }
        }
        occ
    }
}

/// Closed-segment versus axis-aligned box test (slab clipping).
///
/// Touching the box boundary counts as an intersection.
pub fn segment_intersects_voxel(a: &Vec3, b: &Vec3, center: &Vec3, half_extents: &Vec3) -> bool {
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for axis in 0..3 {
        let lo = center[axis] - half_extents[axis];
        let hi = center[axis] + half_extents[axis];
        let origin = a[axis];
        let d = b[axis] - origin;
        if d == 0.0 {
            if origin < lo || origin > hi {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - origin) / d, (hi - origin) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Which coordinate frame a point cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Scene,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Self {
        PointCloud { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        sum / self.points.len().max(1) as f64
    }

    /// Centres the bounding box at the origin and scales its largest side to 1.
    pub fn normalize_to_unit_cube(&self) -> PointCloud {
        let Some((lo, hi)) = self.bounds() else {
            return PointCloud::new(Vec::new(), Frame::Normalized);
        };
        let mid = 0.5 * (lo + hi);
        let extent = (hi - lo).max();
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        PointCloud::new(
            self.points.iter().map(|p| (p - mid) * scale).collect(),
            Frame::Normalized,
        )
    }

    /// Maps a normalized cloud into the scene: `p * scale + offset`.
    pub fn place(&self, scale: f64, offset: &Vec3) -> PointCloud {
        PointCloud::new(
            self.points.iter().map(|p| p * scale + offset).collect(),
            Frame::Scene,
        )
    }

    pub fn translated(&self, delta: &Vec3) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| p + delta).collect(), self.frame)
    }
}
