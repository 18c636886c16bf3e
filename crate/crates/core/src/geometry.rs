//! 3D primitives, the floorplan model and the geometric predicates used by
//! the graph builder, the propagation engine and the objectives.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use thiserror::Error;

/// Offset below which a ray hit is treated as a self-intersection.
pub const RAY_EPSILON: f64 = 1e-6;

/// Tolerance used for perpendicularity and in-rectangle checks.
pub const GEOM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("degenerate link segment: endpoints coincide")]
    DegenerateLink,
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("surface {0} lies outside the floorplan bounds")]
    SurfaceOutOfBounds(usize),
    #[error("invalid sphere radius {0}")]
    InvalidSphere(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector along `self`. Returns `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-15 || !n.is_finite() {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Angle between two vectors in radians, in `[0, pi]`.
    pub fn angle_to(self, o: Vec3) -> f64 {
        let c = self.cross(o).norm();
        let d = self.dot(o);
        c.atan2(d)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Mirror direction `d` about the plane with unit normal `n`.
pub fn specular_reflect(d: Vec3, n: Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

/// A rectangular panel. The normal points towards the side that rays
/// interact with (into the room for walls).
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub normal: Vec3,
    pub coated: bool,
}

/// Local result of a ray/panel intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelHit {
    pub distance: f64,
    pub point: Vec3,
    /// Fractional coordinates along `edge_u` and `edge_v`, in `[0, 1]`.
    pub s: f64,
    pub t: f64,
}

impl Surface {
    pub fn new(
        origin: Vec3,
        edge_u: Vec3,
        edge_v: Vec3,
        normal: Vec3,
        coated: bool,
    ) -> Result<Self, GeometryError> {
        let lu = edge_u.norm();
        let lv = edge_v.norm();
        if lu < GEOM_TOLERANCE || lv < GEOM_TOLERANCE {
            return Err(GeometryError::InvalidSurface("zero-length edge".into()));
        }
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidSurface("normal is not unit length".into()));
        }
        if (normal.dot(edge_u) / lu).abs() > GEOM_TOLERANCE
            || (normal.dot(edge_v) / lv).abs() > GEOM_TOLERANCE
        {
            return Err(GeometryError::InvalidSurface("normal not perpendicular to edges".into()));
        }
        if (edge_u.dot(edge_v) / (lu * lv)).abs() > GEOM_TOLERANCE {
            return Err(GeometryError::InvalidSurface("edges are not perpendicular".into()));
        }
        Ok(Surface { origin, edge_u, edge_v, normal, coated })
    }

    /// Axis-aligned rectangle spanning `min`..`max` where exactly one
    /// coordinate is constant. `facing` selects the normal sign along that axis.
    pub fn axis_aligned(min: Vec3, max: Vec3, facing_positive: bool, coated: bool) -> Result<Self, GeometryError> {
        let d = max - min;
        let flat: Vec<usize> = [d.x, d.y, d.z]
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() < GEOM_TOLERANCE)
            .map(|(i, _)| i)
            .collect();
        if flat.len() != 1 {
            return Err(GeometryError::InvalidSurface(
                "axis-aligned panel needs exactly one flat axis".into(),
            ));
        }
        let sign = if facing_positive { 1.0 } else { -1.0 };
        let (u, v, n) = match flat[0] {
            0 => (Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z), Vec3::new(sign, 0.0, 0.0)),
            1 => (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, 0.0, d.z), Vec3::new(0.0, sign, 0.0)),
            _ => (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, sign)),
        };
        if u.x < 0.0 || u.y < 0.0 || v.y < 0.0 || v.z < 0.0 {
            return Err(GeometryError::InvalidSurface("max must not be below min".into()));
        }
        Surface::new(min, u, v, n, coated)
    }

    pub fn width(&self) -> f64 {
        self.edge_u.norm()
    }

    pub fn height(&self) -> f64 {
        self.edge_v.norm()
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn corners(&self) -> [Vec3; 4] {
        [
            self.origin,
            self.origin + self.edge_u,
            self.origin + self.edge_v,
            self.origin + self.edge_u + self.edge_v,
        ]
    }

    /// Point at fractional coordinates `(s, t)`.
    pub fn point_at(&self, s: f64, t: f64) -> Vec3 {
        self.origin + self.edge_u * s + self.edge_v * t
    }

    /// Intersection of the ray `origin + k*dir` (k > `min_dist`) with this panel.
    pub fn intersect(&self, origin: Vec3, dir: Vec3, min_dist: f64) -> Option<PanelHit> {
        let denom = dir.dot(self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let k = (self.origin - origin).dot(self.normal) / denom;
        if !(k > min_dist) || !k.is_finite() {
            return None;
        }
        let p = origin + dir * k;
        let rel = p - self.origin;
        let s = rel.dot(self.edge_u) / self.edge_u.dot(self.edge_u);
        let t = rel.dot(self.edge_v) / self.edge_v.dot(self.edge_v);
        let tol_s = GEOM_TOLERANCE / self.width();
        let tol_t = GEOM_TOLERANCE / self.height();
        if s < -tol_s || s > 1.0 + tol_s || t < -tol_t || t > 1.0 + tol_t {
            return None;
        }
        Some(PanelHit {
            distance: k,
            point: p,
            s: s.clamp(0.0, 1.0),
            t: t.clamp(0.0, 1.0),
        })
    }

    /// Does the open segment `p0`-`p1` cross this panel strictly between
    /// its endpoints (excluding `RAY_EPSILON` at both ends)?
    pub fn blocks_segment(&self, p0: Vec3, p1: Vec3) -> bool {
        let d = p1 - p0;
        let len = d.norm();
        if len <= 2.0 * RAY_EPSILON {
            return false;
        }
        let dir = d * (1.0 / len);
        match self.intersect(p0, dir, RAY_EPSILON) {
            Some(h) => h.distance < len - RAY_EPSILON,
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: Vec3, eps: f64) -> bool {
        p.x >= self.min.x - eps
            && p.y >= self.min.y - eps
            && p.z >= self.min.z - eps
            && p.x <= self.max.x + eps
            && p.y <= self.max.y + eps
            && p.z <= self.max.z + eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Floorplan {
    pub surfaces: Vec<Surface>,
    pub bounds: Aabb,
}

impl Floorplan {
    pub fn new(surfaces: Vec<Surface>, bounds: Aabb) -> Result<Self, GeometryError> {
        for (i, s) in surfaces.iter().enumerate() {
            if !s.corners().iter().all(|c| bounds.contains(*c, 1e-6)) {
                return Err(GeometryError::SurfaceOutOfBounds(i));
            }
        }
        Ok(Floorplan { surfaces, bounds })
    }

    /// Closed box room `[0,lx] x [0,ly] x [0,lz]` with inward normals.
    /// Surface order: floor, ceiling, wall y=0, wall y=ly, wall x=0, wall x=lx.
    pub fn box_room(lx: f64, ly: f64, lz: f64, coated: [bool; 6]) -> Result<Self, GeometryError> {
        let o = Vec3::ZERO;
        let surfaces = vec![
            Surface::axis_aligned(o, Vec3::new(lx, ly, 0.0), true, coated[0])?,
            Surface::axis_aligned(Vec3::new(0.0, 0.0, lz), Vec3::new(lx, ly, lz), false, coated[1])?,
            Surface::axis_aligned(o, Vec3::new(lx, 0.0, lz), true, coated[2])?,
            Surface::axis_aligned(Vec3::new(0.0, ly, 0.0), Vec3::new(lx, ly, lz), false, coated[3])?,
            Surface::axis_aligned(o, Vec3::new(0.0, ly, lz), true, coated[4])?,
            Surface::axis_aligned(Vec3::new(lx, 0.0, 0.0), Vec3::new(lx, ly, lz), false, coated[5])?,
        ];
        Floorplan::new(surfaces, Aabb::new(o, Vec3::new(lx, ly, lz)))
    }

    /// True when any surface crosses the open segment `p0`-`p1`.
    pub fn segment_occluded(&self, p0: Vec3, p1: Vec3) -> bool {
        self.surfaces.iter().any(|s| s.blocks_segment(p0, p1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub surface: usize,
    pub point: Vec3,
    pub distance: f64,
    pub s: f64,
    pub t: f64,
}

/// Nearest surface hit strictly ahead of `origin`; `None` means the ray escapes.
/// Equal distances prefer a surface facing the ray, then the lower index,
/// so the two faces of a thin wall resolve to the side the ray came from.
pub fn ray_hit(origin: Vec3, dir: Vec3, floorplan: &Floorplan) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, surf) in floorplan.surfaces.iter().enumerate() {
        if let Some(h) = surf.intersect(origin, dir, RAY_EPSILON) {
            let replace = match best {
                None => true,
                Some(b) => {
                    let facing = dir.dot(surf.normal) < 0.0;
                    let b_facing = dir.dot(floorplan.surfaces[b.surface].normal) < 0.0;
                    h.distance < b.distance - 1e-12 || (h.distance <= b.distance + 1e-12 && facing && !b_facing)
                }
            };
            if replace {
                best = Some(Hit { surface: i, point: h.point, distance: h.distance, s: h.s, t: h.t });
            }
        }
    }
    best.filter(|h| floorplan.bounds.contains(h.point, 1e-6))
}

/// `ray_hit`, falling back to `corner_hit` when nothing is hit from the front.
pub fn surface_hit(origin: Vec3, dir: Vec3, floorplan: &Floorplan, from_normal: Option<Vec3>) -> Option<Hit> {
    let hit = ray_hit(origin, dir, floorplan);
    if hit.map_or(true, |h| dir.dot(floorplan.surfaces[h.surface].normal) >= 0.0) {
        if let Some(c) = corner_hit(origin, dir, floorplan, from_normal) {
            return Some(c);
        }
    }
    hit
}

/// A facing surface touched at the ray origin itself, as happens when a ray
/// reflects exactly on the edge between two surfaces. Surfaces anti-parallel
/// to `from_normal` (the far face of a thin wall) are skipped.
pub fn corner_hit(origin: Vec3, dir: Vec3, floorplan: &Floorplan, from_normal: Option<Vec3>) -> Option<Hit> {
    for (i, surf) in floorplan.surfaces.iter().enumerate() {
        if dir.dot(surf.normal) >= 0.0 {
            continue;
        }
        if from_normal.is_some_and(|n| n.dot(surf.normal) < -0.999) {
            continue;
        }
        if let Some(h) = surf.intersect(origin - dir * (2.0 * RAY_EPSILON), dir, 0.0) {
            if h.distance <= 3.0 * RAY_EPSILON {
                return Some(Hit { surface: i, point: origin, distance: 0.0, s: h.s, t: h.t });
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(GeometryError::InvalidSphere(radius));
        }
        Ok(Sphere { center, radius })
    }
}

/// Distance from `c` to the closed segment `p0`-`p1`.
pub fn point_segment_distance(p0: Vec3, p1: Vec3, c: Vec3) -> f64 {
    let d = p1 - p0;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p0.distance(c);
    }
    let k = ((c - p0).dot(d) / len2).clamp(0.0, 1.0);
    (p0 + d * k).distance(c)
}

pub fn segment_intersects_sphere(p0: Vec3, p1: Vec3, s: &Sphere) -> bool {
    point_segment_distance(p0, p1, s.center) <= s.radius
}

/// Distance along a unit ray at which it first comes within the sphere,
/// limited to `max_dist`. A ray starting inside the sphere reports 0.
pub fn ray_sphere_entry(origin: Vec3, dir: Vec3, s: &Sphere, max_dist: f64) -> Option<f64> {
    let oc = origin - s.center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - s.radius * s.radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let k = -b - disc.sqrt();
    if k <= max_dist {
        Some(k.max(0.0))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Vec3>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Vec3>) -> Result<Self, GeometryError> {
        let t = Trajectory { waypoints };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.waypoints.len() < 2 {
            return Err(GeometryError::MalformedTrajectory("needs at least 2 waypoints".into()));
        }
        for (i, w) in self.waypoints.windows(2).enumerate() {
            if w[0].distance(w[1]) < GEOM_TOLERANCE {
                return Err(GeometryError::MalformedTrajectory(format!(
                    "waypoints {} and {} coincide",
                    i,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn reversed(&self) -> Trajectory {
        let mut w = self.waypoints.clone();
        w.reverse();
        Trajectory { waypoints: w }
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Index of the segment whose closest point to `at` is nearest.
    /// Ties go to the earlier segment.
    pub fn segment_of(&self, at: Vec3) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let d = point_segment_distance(w[0], w[1], at);
            if d < best.0 - 1e-12 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Unit tangent of the segment containing the projection of `at`.
    pub fn tangent_at(&self, at: Vec3) -> Result<Vec3, GeometryError> {
        if self.waypoints.len() < 2 {
            return Err(GeometryError::MalformedTrajectory("needs at least 2 waypoints".into()));
        }
        let i = self.segment_of(at);
        (self.waypoints[i + 1] - self.waypoints[i])
            .normalized()
            .ok_or_else(|| GeometryError::MalformedTrajectory(format!("segment {} is degenerate", i)))
    }

    /// Positions along the polyline. Each segment is divided into
    /// `round(len / step)` equal steps, so corners are always sampled.
    pub fn sample(&self, step: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for w in self.waypoints.windows(2) {
            let len = w[0].distance(w[1]);
            let n = ((len / step).round() as usize).max(1);
            for k in 0..n {
                out.push(w[0] + (w[1] - w[0]) * (k as f64 / n as f64));
            }
        }
        if let Some(last) = self.waypoints.last() {
            out.push(*last);
        }
        out
    }
}

/// `|angle(link, tangent) - 90deg|` in degrees, within `[0, 90]`.
pub fn deviation_from_perpendicular(
    p0: Vec3,
    p1: Vec3,
    traj: &Trajectory,
    at: Vec3,
) -> Result<f64, GeometryError> {
    let link = (p1 - p0).normalized().ok_or(GeometryError::DegenerateLink)?;
    let tangent = traj.tangent_at(at)?;
    let along = link.dot(tangent).abs();
    let across = link.cross(tangent).norm();
    Ok(along.atan2(across).to_degrees().clamp(0.0, 90.0))
}
