//! Text formats: occupancy lists, `.xyz` clouds, loss traces and dataset
//! manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud, Vec3, VoxelGrid};
use crate::inversion::TraceRow;

fn parse_f64(tok: &str, what: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}: bad {what} '{tok}'")))
}

fn parse_usize(tok: &str, what: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::Format(format!("line {line}: bad {what} '{tok}'")))
}

/// One `ix iy iz value` line per active voxel. `values` gives the per-voxel
/// value to print (for instance the relaxed occupancy); 1 is used otherwise.
pub fn occupancy_to_text(grid: &VoxelGrid, occ: &[bool], values: Option<&[f64]>) -> String {
    let mut s = String::new();
    for (k, _) in occ.iter().enumerate().filter(|(_, on)| **on) {
        let (ix, iy, iz) = grid.coords(k);
        let v = values.map_or(1.0, |v| v[k]);
        let _ = writeln!(s, "{ix} {iy} {iz} {v}");
    }
    s
}

/// Parses an occupancy list; voxels listed with value >= 0.5 are active.
/// Blank lines and `#` comments are skipped.
pub fn occupancy_from_text(grid: &VoxelGrid, text: &str) -> Result<Vec<bool>> {
    let [nx, ny, nz] = grid.counts;
    let mut occ = vec![false; grid.len()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(Error::Format(format!(
                "line {}: expected 'ix iy iz value'",
                i + 1
            )));
        }
        let ix = parse_usize(toks[0], "ix", i + 1)?;
        let iy = parse_usize(toks[1], "iy", i + 1)?;
        let iz = parse_usize(toks[2], "iz", i + 1)?;
        let v = parse_f64(toks[3], "value", i + 1)?;
        if ix >= nx || iy >= ny || iz >= nz {
            return Err(Error::Format(format!(
                "line {}: voxel ({ix}, {iy}, {iz}) outside {nx}x{ny}x{nz} grid",
                i + 1
            )));
        }
        if v >= 0.5 {
            occ[grid.index(ix, iy, iz)] = true;
        }
    }
    Ok(occ)
}

pub fn cloud_to_text(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 40);
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn cloud_from_text(text: &str, frame: Frame) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 'x y z'", i + 1)));
        }
        let p = Vec3::new(
            parse_f64(toks[0], "x", i + 1)?,
            parse_f64(toks[1], "y", i + 1)?,
            parse_f64(toks[2], "z", i + 1)?,
        );
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Format(format!(
                "line {}: non-finite coordinate",
                i + 1
            )));
        }
        pts.push(p);
    }
    Ok(PointCloud::new(pts, frame))
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, cloud_to_text(cloud))?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>, frame: Frame) -> Result<PointCloud> {
    cloud_from_text(&fs::read_to_string(path)?, frame)
}

pub const TRACE_HEADER: &str = "iter,loss,lambda,b_norm";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", r.iter, r.loss, r.lambda, r.b_norm);
    }
    s
}

pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(Error::Format(format!(
            "loss trace must start with '{TRACE_HEADER}'"
        )));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 4 fields", i + 2)));
            }
            Ok(TraceRow {
                iter: parse_usize(f[0], "iter", i + 2)?,
                loss: parse_f64(f[1], "loss", i + 2)?,
                lambda: parse_f64(f[2], "lambda", i + 2)?,
                b_norm: parse_f64(f[3], "b_norm", i + 2)?,
            })
        })
        .collect()
}

pub const MANIFEST_HEADER: &str = "index,class,cloud_path,emitter_path,measurement_path,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub class: String,
    pub cloud_path: PathBuf,
    pub emitter_path: PathBuf,
    pub measurement_path: PathBuf,
    pub seed: u64,
}

fn csv_path(p: &Path) -> Result<String> {
    let s = p.to_string_lossy().into_owned();
    if s.contains(',') || s.contains('\n') {
        return Err(Error::InvalidInput(format!(
            "path '{s}' cannot be stored in the manifest"
        )));
    }
    Ok(s)
}

pub fn manifest_to_csv(rows: &[ManifestRow]) -> Result<String> {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.index,
            r.class,
            csv_path(&r.cloud_path)?,
            csv_path(&r.emitter_path)?,
            csv_path(&r.measurement_path)?,
            r.seed
        );
    }
    Ok(s)
}

pub fn manifest_from_csv(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::Format(format!(
            "manifest must start with '{MANIFEST_HEADER}'"
        )));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 6 fields",
                    i + 2
                )));
            }
            Ok(ManifestRow {
                index: parse_usize(f[0], "index", i + 2)?,
                class: f[1].to_string(),
                cloud_path: PathBuf::from(f[2]),
                emitter_path: PathBuf::from(f[3]),
                measurement_path: PathBuf::from(f[4]),
                seed: f[5]
                    .parse()
                    .map_err(|_| Error::Format(format!("manifest line {}: bad seed", i + 2)))?,
            })
        })
        .collect()
}
