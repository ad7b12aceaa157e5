//! Checked-in numeric defaults, overridable per run.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const BUILTIN: &str = include_str!("../defaults.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub scene: SceneDefaults,
    pub render: RenderDefaults,
    pub solver: SolverDefaults,
    pub dataset: DatasetDefaults,
    pub train: TrainDefaults,
    pub sample: SampleDefaults,
    pub pipeline: PipelineDefaults,
    pub bench: BenchDefaults,
    pub sweep: SweepDefaults,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDefaults {
    pub wall_size: f64,
    pub wall_res: usize,
    pub emitter_size: f64,
    pub emitter_res: usize,
    pub depth: f64,
    pub grid: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderDefaults {
    pub model: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDefaults {
    pub iters: usize,
    pub eta_z: f64,
    pub eta_b: f64,
    pub eta_lambda: f64,
    pub lambda0: f64,
    pub threshold: f64,
    pub relaxation: String,
    pub background_shape: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDefaults {
    pub n: usize,
    pub held_out: usize,
    pub dense_points: usize,
    pub cloud_points: usize,
    pub shape_scale: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDefaults {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub steps: usize,
    pub base_channels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDefaults {
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineDefaults {
    pub tv_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchDefaults {
    pub grids: String,
    pub repeat: usize,
    pub dense_cap_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDefaults {
    pub sbr_db: String,
    pub seeds: usize,
}

impl Defaults {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(toml::from_str(BUILTIN).expect("built-in defaults parse")),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing defaults {}", p.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_defaults_parse() {
        let d = Defaults::load(None).unwrap();
        assert_eq!(d.train.steps, 256);
        assert_eq!(d.solver.iters, 2000);
    }
}
