//! Procedural primitives, area-uniform surface sampling and farthest point
//! resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud, Vec3};

/// Inside-test slack so that points on a shared boundary survive union
/// rejection.
const INSIDE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box.
    Box {
        center: Vec3,
        half: Vec3,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Cylinder with its axis along x.
    Cylinder {
        center: Vec3,
        radius: f64,
        half_length: f64,
    },
}

impl Primitive {
    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Box { half, .. } => {
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z)
            }
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Primitive::Cylinder {
                radius,
                half_length,
                ..
            } => 2.0 * std::f64::consts::PI * radius * (2.0 * half_length + radius),
        }
    }

    fn is_valid(&self) -> bool {
        let dims_ok = match *self {
            Primitive::Box { half, .. } => half.iter().all(|v| *v > 0.0 && v.is_finite()),
            Primitive::Sphere { radius, .. } => radius > 0.0 && radius.is_finite(),
            Primitive::Cylinder {
                radius,
                half_length,
                ..
            } => radius > 0.0 && half_length > 0.0 && radius.is_finite() && half_length.is_finite(),
        };
        dims_ok && self.center().iter().all(|v| v.is_finite())
    }

    pub fn center(&self) -> Vec3 {
        match *self {
            Primitive::Box { center, .. }
            | Primitive::Sphere { center, .. }
            | Primitive::Cylinder { center, .. } => center,
        }
    }

    /// Strictly inside (by more than a small tolerance).
    pub fn contains_strictly(&self, p: &Vec3) -> bool {
        let d = p - self.center();
        match *self {
            Primitive::Box { half, .. } => (0..3).all(|i| d[i].abs() < half[i] - INSIDE_TOL),
            Primitive::Sphere { radius, .. } => d.norm() < radius - INSIDE_TOL,
            Primitive::Cylinder {
                radius,
                half_length,
                ..
            } => {
                d.x.abs() < half_length - INSIDE_TOL
                    && (d.y * d.y + d.z * d.z).sqrt() < radius - INSIDE_TOL
            }
        }
    }

    /// Distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let d = p - self.center();
        match *self {
            Primitive::Box { half, .. } => {
                let q = d.abs() - half;
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
            Primitive::Sphere { radius, .. } => (d.norm() - radius).abs(),
            Primitive::Cylinder {
                radius,
                half_length,
                ..
            } => {
                let r = (d.y * d.y + d.z * d.z).sqrt();
                let q = (r - radius, d.x.abs() - half_length);
                let outside = (q.0.max(0.0).powi(2) + q.1.max(0.0).powi(2)).sqrt();
                let inside = q.0.max(q.1).min(0.0);
                (outside + inside).abs()
            }
        }
    }

    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let c = self.center();
        match *self {
            Primitive::Box { half, .. } => {
                // pick a face pair by area, then a side, then a uniform point
                let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let mut p = Vec3::zeros();
                for i in 0..3 {
                    p[i] = if i == axis {
                        if rng.random::<bool>() {
                            half[i]
                        } else {
                            -half[i]
                        }
                    } else {
                        rng.random_range(-half[i]..=half[i])
                    };
                }
                c + p
            }
            Primitive::Sphere { radius, .. } => {
                let v = loop {
                    let v = Vec3::new(
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    );
                    let n = v.norm();
                    if n > 1e-12 {
                        break v / n;
                    }
                };
                c + v * radius
            }
            Primitive::Cylinder {
                radius,
                half_length,
                ..
            } => {
                let side = 4.0 * half_length * radius;
                let cap = radius * radius;
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random::<f64>() * (side + 2.0 * cap) < side {
                    let x = rng.random_range(-half_length..=half_length);
                    c + Vec3::new(x, radius * theta.cos(), radius * theta.sin())
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let x = if rng.random::<bool>() {
                        half_length
                    } else {
                        -half_length
                    };
                    c + Vec3::new(x, r * theta.cos(), r * theta.sin())
                }
            }
        }
    }
}

/// A union of primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub parts: Vec<Primitive>,
}

impl Shape {
    pub fn new(parts: Vec<Primitive>) -> Self {
        Shape { parts }
    }

    /// Distance from `p` to the union surface, for points on some part and
    /// inside no other.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.parts
            .iter()
            .map(|s| s.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `n` points drawn uniformly by area from the surface of the union.
///
/// Points of one part that fall strictly inside another are rejected, so
/// interior faces of overlapping parts are never sampled.
pub fn sample_surface_points(shape: &Shape, n: usize, seed: u64) -> Result<PointCloud> {
    if shape.parts.is_empty() || shape.parts.iter().any(|p| !p.is_valid()) {
        return Err(Error::InvalidInput(
            "shape has no parts or a degenerate part".into(),
        ));
    }
    let areas: Vec<f64> = shape.parts.iter().map(|p| p.area()).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("shape has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while points.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) {
            return Err(Error::InvalidInput(
                "union surface is fully enclosed".into(),
            ));
        }
        let mut pick = rng.random::<f64>() * total;
        let mut part = shape.parts.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                part = i;
                break;
            }
            pick -= a;
        }
        let p = shape.parts[part].sample_surface(&mut rng);
        let hidden = shape
            .parts
            .iter()
            .enumerate()
            .any(|(j, other)| j != part && other.contains_strictly(&p));
        if !hidden {
            points.push(p);
        }
    }
    Ok(PointCloud::new(points, Frame::Normalized))
}

/// Greedy farthest point subsampling to exactly `k` points, starting from a
/// seed-chosen index. Ties go to the lowest index.
pub fn fps_resample(dense: &PointCloud, k: usize, seed: u64) -> Result<PointCloud> {
    let n = dense.len();
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cannot pick {k} of {n} points"
        )));
    }
    if k == 0 {
        return Ok(PointCloud::new(Vec::new(), dense.frame));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = rng.random_range(0..n);
    let mut dist = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        out.push(dense.points[current]);
        let c = dense.points[current];
        let mut best = 0;
        let mut best_d = -1.0;
        for (i, p) in dense.points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best_d {
                best_d = dist[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(PointCloud::new(out, dense.frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_sphere() -> Shape {
        Shape::new(vec![Primitive::Sphere {
            center: Vec3::zeros(),
            radius: 1.0,
        }])
    }

    #[test]
    fn samples_lie_on_the_surface() {
        let shapes = [
            unit_sphere(),
            Shape::new(vec![Primitive::Box {
                center: Vec3::new(0.1, 0.0, 0.0),
                half: Vec3::new(0.5, 0.2, 0.3),
            }]),
            Shape::new(vec![Primitive::Cylinder {
                center: Vec3::zeros(),
                radius: 0.2,
                half_length: 0.5,
            }]),
        ];
        for s in &shapes {
            let c = sample_surface_points(s, 500, 1).unwrap();
            assert_eq!(c.len(), 500);
            for p in &c.points {
                assert!(s.surface_distance(p) <= 1e-9);
            }
        }
    }

    #[test]
    fn union_skips_buried_faces() {
        let s = Shape::new(vec![
            Primitive::Sphere {
                center: Vec3::zeros(),
                radius: 0.5,
            },
            Primitive::Box {
                center: Vec3::zeros(),
                half: Vec3::new(0.1, 0.1, 0.1),
            },
        ]);
        let c = sample_surface_points(&s, 300, 2).unwrap();
        assert!(c.points.iter().all(|p| (p.norm() - 0.5).abs() < 1e-9));
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        let flat = Shape::new(vec![Primitive::Sphere {
            center: Vec3::zeros(),
            radius: 0.0,
        }]);
        assert!(sample_surface_points(&flat, 10, 0).is_err());
        assert!(sample_surface_points(&Shape::new(vec![]), 10, 0).is_err());
    }

    #[test]
    fn fps_full_size_is_a_permutation() {
        let c = sample_surface_points(&unit_sphere(), 64, 3).unwrap();
        let f = fps_resample(&c, 64, 9).unwrap();
        let mut a: Vec<[u64; 3]> = c
            .points
            .iter()
            .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            .collect();
        let mut b: Vec<[u64; 3]> = f
            .points
            .iter()
            .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(fps_resample(&c, 65, 0).is_err());
    }
}
