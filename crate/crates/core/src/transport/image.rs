//! Multi-channel images on the wall or emitter pixel grid, and the `NLSI`
//! binary file format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NLSI";
const VERSION: u8 = 0x01;

/// Row-major, channel-interleaved image of nonnegative linear values.
#[derive(Debug, Clone, PartialEq)]
pub struct PenumbraImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl PenumbraImage {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if values.len() != width * height * channels {
            return Err(Error::dims(width * height * channels, values.len()));
        }
        Ok(PenumbraImage {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        PenumbraImage {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
        }
    }

    /// Builds an image from per-channel planes of `width * height` values.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let px = width * height;
        if let Some(bad) = planes.iter().find(|p| p.len() != px) {
            return Err(Error::dims(px, bad.len()));
        }
        let mut values = vec![0.0; px * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                values[i * channels + c] = *v;
            }
        }
        Self::new(width, height, channels, values)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Copy of channel `c` as a plane of `width * height` values.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.values.iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn same_shape(&self, other: &PenumbraImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        for dim in [self.width, self.height, self.channels] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 17];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("truncated NLSI header".into()))?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected NLSI".into()));
        }
        if head[4] != VERSION {
            return Err(Error::Format(format!(
                "unsupported NLSI version {}",
                head[4]
            )));
        }
        let dim =
            |i: usize| u32::from_le_bytes(head[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
        let (width, height, channels) = (dim(0), dim(1), dim(2));
        let count = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() != count * 4 {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                count * 4,
                data.len()
            )));
        }
        let values = data
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Self::new(width, height, channels, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
