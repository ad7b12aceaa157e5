//! Shared parsing and file helpers.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use penumbra_core::diffusion::{DatasetConfig, ShapeClass};
use penumbra_core::geometry::{SceneConfig, Vec3};
use penumbra_core::transport::PenumbraImage;
use serde::{Deserialize, Serialize};

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// 3 when the failure came from the numerics, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .filter_map(|c| c.downcast_ref::<penumbra_core::Error>())
        .any(penumbra_core::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn load_scene(path: &Path) -> anyhow::Result<SceneConfig> {
    let cfg: SceneConfig = read_text(path)?
        .parse()
        .with_context(|| format!("invalid scene file {}", path.display()))?;
    cfg.validate()
        .with_context(|| format!("invalid scene file {}", path.display()))?;
    Ok(cfg)
}

pub fn load_image(path: &Path) -> anyhow::Result<PenumbraImage> {
    PenumbraImage::load(path).with_context(|| format!("cannot load image {}", path.display()))
}

pub fn save_image(path: &Path, img: &PenumbraImage) -> anyhow::Result<()> {
    ensure_parent(path)?;
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Parses `NXxNYxNZ`.
pub fn parse_grid(s: &str) -> anyhow::Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.trim().split('x').collect();
    if parts.len() != 3 {
        bail!("grid '{s}' must look like 10x5x10");
    }
    let n = |p: &str| {
        p.parse::<usize>()
            .with_context(|| format!("bad grid size '{p}' in '{s}'"))
    };
    Ok((n(parts[0])?, n(parts[1])?, n(parts[2])?))
}

pub fn parse_f64_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{t}' in '{s}'"))
        })
        .collect()
}

/// Dataset parameters stored next to the generated files, enough to
/// regenerate any instance exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    /// The last `held_out` instances are never used for training.
    pub held_out: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    pub dense_points: usize,
    pub cloud_points: usize,
    pub shape_scale: f64,
    pub jitter: f64,
    pub lattice_center: [f64; 3],
    pub lattice_step: [f64; 3],
    pub lattice_n: usize,
}

pub const DATASET_SPEC: &str = "dataset.toml";
pub const DATASET_SCENE: &str = "scene.cfg";
pub const DATASET_MANIFEST: &str = "manifest.csv";

impl DatasetSpec {
    pub fn from_config(cfg: &DatasetConfig, n: usize, held_out: usize, seed: u64) -> Self {
        DatasetSpec {
            n,
            held_out,
            seed,
            classes: cfg.classes.iter().map(|c| c.to_string()).collect(),
            dense_points: cfg.dense_points,
            cloud_points: cfg.cloud_points,
            shape_scale: cfg.shape_scale,
            jitter: cfg.jitter,
            lattice_center: cfg.lattice_center.into(),
            lattice_step: cfg.lattice_step.into(),
            lattice_n: cfg.lattice_n,
        }
    }

    pub fn to_config(&self, scene: SceneConfig) -> anyhow::Result<DatasetConfig> {
        let classes = self
            .classes
            .iter()
            .map(|c| c.parse::<ShapeClass>())
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = DatasetConfig {
            scene,
            classes,
            dense_points: self.dense_points,
            cloud_points: self.cloud_points,
            shape_scale: self.shape_scale,
            jitter: self.jitter,
            lattice_center: Vec3::from(self.lattice_center),
            lattice_step: Vec3::from(self.lattice_step),
            lattice_n: self.lattice_n,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A dataset directory written by `ssd dataset-gen`.
pub struct DatasetDir {
    pub root: PathBuf,
    pub spec: DatasetSpec,
    pub config: DatasetConfig,
    pub rows: Vec<penumbra_core::io::ManifestRow>,
}

impl DatasetDir {
    pub fn open(root: &Path) -> anyhow::Result<Self> {
        let spec: DatasetSpec = toml::from_str(&read_text(&root.join(DATASET_SPEC))?)
            .with_context(|| format!("invalid {}", root.join(DATASET_SPEC).display()))?;
        let scene = load_scene(&root.join(DATASET_SCENE))?;
        let config = spec.to_config(scene)?;
        let rows = penumbra_core::io::manifest_from_csv(&read_text(&root.join(DATASET_MANIFEST))?)?;
        if spec.held_out >= spec.n {
            bail!(
                "held-out count {} leaves no training data out of {}",
                spec.held_out,
                spec.n
            );
        }
        if rows.len() != spec.n {
            bail!(
                "dataset manifest lists {} instances, spec says {}",
                rows.len(),
                spec.n
            );
        }
        Ok(DatasetDir {
            root: root.to_path_buf(),
            spec,
            config,
            rows,
        })
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn training(&self) -> std::ops::Range<usize> {
        0..self.spec.n - self.spec.held_out
    }

    pub fn held_out(&self) -> std::ops::Range<usize> {
        self.spec.n - self.spec.held_out..self.spec.n
    }
}
