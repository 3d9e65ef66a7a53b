//! Closed-form vector math shared by every backend.
//!
//! Geometry is stored in 32-bit floats; trigonometry and the per-edge
//! quadratic are evaluated in 64-bit and rounded on output, which keeps the
//! stored data compatible with the 32-bit sortable distance encoding while
//! suppressing cancellation in the cone intersection.

use thiserror::Error;

/// Numerical guard for degenerate configurations: origin on the triangle
/// plane, near-linear quadratic, centroid-distance clamp.
pub const GUARD_EPS: f64 = 1e-4;

/// Crossing points closer than this are merged into one (metres).
pub const DEDUP_EPS: f64 = 1e-5;

/// Triangles below this area are rejected at ingest (square metres).
pub const DEGENERATE_AREA: f32 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate direction: point coincides with the origin")]
    DegenerateDirection,
    #[error("point lies on the spin axis: azimuth undefined")]
    OnSpinAxis,
    #[error("basis vectors are not orthonormal")]
    SkewedFrame,
}

// ---------------------------------------------------------------------------
// Vectors

/// World-space vector/point, metres (dimensionless for directions).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length_squared(self) -> f32 {
        self.dot(self)
    }

    pub fn length(self) -> f32 {
        self.length_squared().sqrt()
    }

    /// Unit vector in the same direction; `None` if the length underflows.
    pub fn normalized(self) -> Option<Vec3> {
        let len = DVec3::from(self).length();
        if len < 1e-30 {
            return None;
        }
        Some((DVec3::from(self) / len).to_f32())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f32> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f32) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// 64-bit working vector for intermediate evaluation. Not part of the
/// stored representation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct DVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<Vec3> for DVec3 {
    fn from(v: Vec3) -> DVec3 {
        DVec3 { x: v.x as f64, y: v.y as f64, z: v.z as f64 }
    }
}

impl DVec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        DVec3 { x, y, z }
    }

    pub fn dot(self, o: DVec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: DVec3) -> DVec3 {
        DVec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    pub fn to_f32(self) -> Vec3 {
        Vec3::new(self.x as f32, self.y as f32, self.z as f32)
    }
}

impl std::ops::Add for DVec3 {
    type Output = DVec3;
    fn add(self, o: DVec3) -> DVec3 {
        DVec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for DVec3 {
    type Output = DVec3;
    fn sub(self, o: DVec3) -> DVec3 {
        DVec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for DVec3 {
    type Output = DVec3;
    fn mul(self, s: f64) -> DVec3 {
        DVec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Div<f64> for DVec3 {
    type Output = DVec3;
    fn div(self, s: f64) -> DVec3 {
        DVec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Difference of two stored points, evaluated in 64-bit.
pub(crate) fn dsub(a: Vec3, b: Vec3) -> DVec3 {
    DVec3::new(
        a.x as f64 - b.x as f64,
        a.y as f64 - b.y as f64,
        a.z as f64 - b.z as f64,
    )
}

// ---------------------------------------------------------------------------
// Sensor frame

/// Orthonormal (forward, right, up) basis defining a sensor's pose.
///
/// Azimuth increases from forward toward right; elevation from the
/// horizontal plane toward up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedFrame {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

impl OrientedFrame {
    /// forward = +X, right = +Y, up = +Z.
    pub fn identity() -> OrientedFrame {
        OrientedFrame { forward: Vec3::X, right: Vec3::Y, up: Vec3::Z }
    }

    /// Builds the basis from a forward and an approximate up direction.
    pub fn from_forward_up(forward: Vec3, up_hint: Vec3) -> Result<OrientedFrame, GeometryError> {
        let f = forward.normalized().ok_or(GeometryError::SkewedFrame)?;
        let r = up_hint.cross(f).normalized().ok_or(GeometryError::SkewedFrame)?;
        let u = f.cross(r).normalized().ok_or(GeometryError::SkewedFrame)?;
        let frame = OrientedFrame { forward: f, right: r, up: u };
        frame.validate()?;
        Ok(frame)
    }

    /// Checks unit lengths, pairwise orthogonality, and handedness
    /// consistent with the identity frame, all within 1e-6.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let (f, r, u) = (self.forward, self.right, self.up);
        let unit = |v: Vec3| (v.length() - 1.0).abs() <= 1e-6;
        if !unit(f) || !unit(r) || !unit(u) {
            return Err(GeometryError::SkewedFrame);
        }
        if f.dot(r).abs() > 1e-6 || f.dot(u).abs() > 1e-6 || r.dot(u).abs() > 1e-6 {
            return Err(GeometryError::SkewedFrame);
        }
        if (u.dot(f.cross(r)) - 1.0).abs() > 1e-5 {
            return Err(GeometryError::SkewedFrame);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Triangles

/// Triangle vertex positions, metres. Edges iterate (0,1), (1,2), (2,0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v0: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
}

impl Triangle {
    pub const fn new(v0: Vec3, v1: Vec3, v2: Vec3) -> Self {
        Triangle { v0, v1, v2 }
    }

    pub fn vertices(&self) -> [Vec3; 3] {
        [self.v0, self.v1, self.v2]
    }
}

/// Cached per-triangle data: centroid, winding unit normal, area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleDerived {
    pub centroid: Vec3,
    pub normal: Vec3,
    pub area: f32,
}

impl TriangleDerived {
    /// `None` when the triangle area is below [`DEGENERATE_AREA`].
    pub fn new(tri: &Triangle) -> Option<TriangleDerived> {
        let e1 = dsub(tri.v1, tri.v0);
        let e2 = dsub(tri.v2, tri.v0);
        let n = e1.cross(e2);
        let n_len = n.length();
        let area = 0.5 * n_len;
        if !(area as f32).is_finite() || (area as f32) < DEGENERATE_AREA {
            return None;
        }
        let c = (DVec3::from(tri.v0) + DVec3::from(tri.v1) + DVec3::from(tri.v2)) / 3.0;
        Some(TriangleDerived {
            centroid: c.to_f32(),
            normal: (n / n_len).to_f32(),
            area: area as f32,
        })
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Inverted box that unions to identity.
    pub fn empty() -> Aabb {
        Aabb {
            min: Vec3::new(f32::INFINITY, f32::INFINITY, f32::INFINITY),
            max: Vec3::new(f32::NEG_INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY),
        }
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3>) -> Aabb {
        let mut b = Aabb::empty();
        for p in points {
            b.extend(p);
        }
        b
    }

    pub fn extend(&mut self, p: Vec3) {
        self.min = Vec3::new(self.min.x.min(p.x), self.min.y.min(p.y), self.min.z.min(p.z));
        self.max = Vec3::new(self.max.x.max(p.x), self.max.y.max(p.y), self.max.z.max(p.z));
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        let mut b = *self;
        b.extend(o.min);
        b.extend(o.max);
        b
    }

    pub fn contains(&self, p: Vec3, tol: f32) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
            && p.z >= self.min.z - tol
            && p.z <= self.max.z + tol
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// 0, 1, or 2 for the widest extent.
    pub fn longest_axis(&self) -> usize {
        let s = self.size();
        if s.x >= s.y && s.x >= s.z {
            0
        } else if s.y >= s.z {
            1
        } else {
            2
        }
    }
}

/// Which side of a triangle counts as visible from a ray origin.
///
/// `Toward` keeps triangles whose winding normal points at the origin (the
/// usual outward-normal reading); `Away` keeps the opposite side. The same
/// convention must be applied by every backend that shares a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Facing {
    #[default]
    Toward,
    Away,
}

impl Facing {
    /// +1 when triangles with `(c-o)·n > 0` pass, -1 for the opposite.
    pub fn sign(self) -> f64 {
        match self {
            Facing::Toward => -1.0,
            Facing::Away => 1.0,
        }
    }
}

/// Visibility filter shared by the pipeline and the reference casters.
///
/// Skips triangles whose plane passes within [`GUARD_EPS`] of the origin
/// regardless of convention.
pub fn faces_origin(derived: &TriangleDerived, origin: Vec3, facing: Facing) -> bool {
    let d = dsub(derived.centroid, origin).dot(derived.normal.into());
    facing.sign() * d >= GUARD_EPS
}

// ---------------------------------------------------------------------------
// Ray direction and angular indexing

/// Direction of the ray at azimuth `theta` and elevation `phi`:
/// `cosθcosφ·f + sinθcosφ·r + sinφ·u`. Unit length within 1e-6.
pub fn ray_direction(theta: f64, phi: f64, frame: &OrientedFrame) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let f = DVec3::from(frame.forward);
    let r = DVec3::from(frame.right);
    let u = DVec3::from(frame.up);
    (f * (ct * cp) + r * (st * cp) + u * sp).to_f32()
}

/// Nearest channel index for a world point: rounds the point's elevation
/// onto the channel grid and clamps to `[0, gamma_n)`.
pub fn channel_index_of_point(
    p: Vec3,
    origin: Vec3,
    frame: &OrientedFrame,
    phi0: f64,
    dphi: f64,
    gamma_n: usize,
) -> Result<usize, GeometryError> {
    let w = dsub(p, origin);
    let len = w.length();
    if len < 1e-12 {
        return Err(GeometryError::DegenerateDirection);
    }
    let sn = (w.dot(frame.up.into()) / len).clamp(-1.0, 1.0);
    let raw = ((sn.asin() - phi0) / dphi).round();
    Ok(raw.clamp(0.0, (gamma_n - 1) as f64) as usize)
}

/// Nearest ray index for a world point: azimuth of the horizontal
/// projection, rounded onto the ray grid and clamped to `[0, chi_n)`.
pub fn ray_index_of_point(
    p: Vec3,
    origin: Vec3,
    frame: &OrientedFrame,
    theta0: f64,
    dtheta: f64,
    chi_n: usize,
) -> Result<usize, GeometryError> {
    let theta = azimuth_of_point(p, origin, frame)?;
    Ok(ray_index_of_azimuth(theta, theta0, dtheta, chi_n))
}

/// Azimuth of a world point in the frame: `atan2(q·r, q·f)` where `q` is
/// the horizontal projection of `p - origin`. atan2 is scale-invariant so
/// `q` is never normalized.
pub fn azimuth_of_point(p: Vec3, origin: Vec3, frame: &OrientedFrame) -> Result<f64, GeometryError> {
    let w = dsub(p, origin);
    let u = DVec3::from(frame.up);
    let q = w - u * w.dot(u);
    if q.length_squared() < 1e-20 {
        return Err(GeometryError::OnSpinAxis);
    }
    Ok(q.dot(frame.right.into()).atan2(q.dot(frame.forward.into())))
}

pub fn ray_index_of_azimuth(theta: f64, theta0: f64, dtheta: f64, chi_n: usize) -> usize {
    let raw = ((theta - theta0) / dtheta).round();
    raw.clamp(0.0, (chi_n - 1) as f64) as usize
}

// ---------------------------------------------------------------------------
// Möller–Trumbore

/// Ray/triangle intersection. Returns the distance `t >= 0` at which
/// `origin + t*dir` lies inside the triangle (both faces), or `None`.
/// Near-zero determinants (ray parallel to the plane, or a degenerate
/// triangle) report no hit.
pub fn moller_trumbore(origin: Vec3, dir: Vec3, tri: &Triangle) -> Option<f32> {
    let e1 = dsub(tri.v1, tri.v0);
    let e2 = dsub(tri.v2, tri.v0);
    let d = DVec3::from(dir);
    let pvec = d.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() <= 1e-12 * (e1.length() * e2.length()).max(1e-30) {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = dsub(origin, tri.v0);
    let u = tvec.dot(pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = d.dot(qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t >= 0.0 {
        Some(t as f32)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Closest point on triangle

/// Euclidean distance from `p` to the nearest point of the closed triangle
/// (face, edge, or vertex region).
pub fn closest_point_distance(p: Vec3, tri: &Triangle) -> f32 {
    let a = DVec3::from(tri.v0);
    let b = DVec3::from(tri.v1);
    let c = DVec3::from(tri.v2);
    let q = DVec3::from(p);

    let ab = b - a;
    let ac = c - a;
    let ap = q - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (q - a).length() as f32;
    }

    let bp = q - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (q - b).length() as f32;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return (q - (a + ab * t)).length() as f32;
    }

    let cp = q - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (q - c).length() as f32;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return (q - (a + ac * t)).length() as f32;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (q - (b + (c - b) * t)).length() as f32;
    }

    // Interior: project onto the plane.
    let denom = va + vb + vc;
    let v = vb / denom;
    let w = vc / denom;
    (q - (a + ab * v + ac * w)).length() as f32
}

// ---------------------------------------------------------------------------
// Sweep-surface intersection
//
// All rays of one channel sweep a cone around the spin axis (a horizontal
// plane at zero elevation). Testing that surface against a triangle tells
// which azimuths of this channel can reach it.

/// Whether the axial rays `+up` / `-up` pierce the triangle. Computed once
/// per (triangle, origin) and reused across channels: the surrounding-cone
/// check only depends on the elevation sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ApexHits {
    pub up: bool,
    pub down: bool,
}

pub fn apex_ray_hits(origin: Vec3, up: Vec3, tri: &Triangle) -> ApexHits {
    ApexHits {
        up: moller_trumbore(origin, up, tri).is_some(),
        down: moller_trumbore(origin, -up, tri).is_some(),
    }
}

/// Result of the full surface/triangle test.
///
/// Holds up to two world-space crossing points. `full_span` marks the
/// degenerate case of more than two distinct crossings, where the caller
/// must assume every azimuth can reach the triangle; the point list is
/// empty in that case. `apex_hit` marks a cone that surrounds the triangle
/// (axial ray pierces it within reach), which also implies a full span when
/// no edge crossing exists.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurfaceCrossings {
    points: [Vec3; 2],
    count: u8,
    pub full_span: bool,
    pub apex_hit: bool,
}

impl SurfaceCrossings {
    pub fn points(&self) -> &[Vec3] {
        &self.points[..self.count as usize]
    }

    pub fn count(&self) -> usize {
        self.count as usize
    }

    /// True when at least one azimuth of this channel can reach the
    /// triangle.
    pub fn intersects(&self) -> bool {
        self.count > 0 || self.apex_hit || self.full_span
    }

    fn push(&mut self, p: DVec3) {
        let q = p.to_f32();
        for existing in &self.points[..self.count as usize] {
            if dsub(q, *existing).length() < DEDUP_EPS {
                return;
            }
        }
        if self.count == 2 {
            // More than two distinct crossings: conic degeneracy.
            self.full_span = true;
            self.count = 0;
            self.points = [Vec3::ZERO; 2];
            return;
        }
        self.points[self.count as usize] = q;
        self.count += 1;
    }
}

/// Vertex classification against the cone at elevation `phi != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConeClass {
    /// Triangle entirely in the opposite axial half-space.
    WrongHalf,
    /// All vertices strictly inside the cone: the surface cannot cross.
    AllInside,
    /// Some vertices inside, some outside: the surface crosses an edge.
    Mixed,
    /// All vertices outside: either clear, or the cone surrounds the
    /// triangle (apex-ray case).
    AllOutside,
}

struct ConeVertexData {
    rel: [DVec3; 3],
    h: [f64; 3],
    class: ConeClass,
}

fn classify_vertices(tri: &Triangle, origin: Vec3, up: Vec3, sin_phi: f64) -> ConeVertexData {
    let u = DVec3::from(up);
    let verts = tri.vertices();
    let mut rel = [DVec3::default(); 3];
    let mut h = [0.0f64; 3];
    let mut sn = [0.0f64; 3];
    for k in 0..3 {
        rel[k] = dsub(verts[k], origin);
        h[k] = rel[k].dot(u);
        sn[k] = h[k] / rel[k].length().max(1e-12);
    }
    let positive = sin_phi > 0.0;
    let wrong_half = if positive {
        h.iter().all(|&hk| hk < 0.0)
    } else {
        h.iter().all(|&hk| hk > 0.0)
    };
    if wrong_half {
        return ConeVertexData { rel, h, class: ConeClass::WrongHalf };
    }
    let inside = |snk: f64| {
        if positive {
            snk >= sin_phi
        } else {
            snk <= sin_phi
        }
    };
    let inside_count = sn.iter().filter(|&&s| inside(s)).count();
    let class = match inside_count {
        3 => ConeClass::AllInside,
        0 => ConeClass::AllOutside,
        _ => ConeClass::Mixed,
    };
    ConeVertexData { rel, h, class }
}

const EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Solves the cone equation along one edge and feeds valid roots to `emit`.
/// Roots are accepted for an edge parameter in `[0, 1]` on the forward cone
/// half, rejecting the mirror cone behind the apex. Returns true if any
/// root was emitted.
fn edge_quadratic(
    data: &ConeVertexData,
    i0: usize,
    i1: usize,
    sin_phi: f64,
    mut emit: impl FnMut(f64),
) -> bool {
    let w = data.rel[i0];
    let e = data.rel[i1] - data.rel[i0];
    let e_len2 = e.length_squared();
    if e_len2 < 1e-24 {
        return false;
    }
    let e_a = data.h[i1] - data.h[i0];
    let h0 = data.h[i0];
    let s2 = sin_phi * sin_phi;
    let c2 = e_a * e_a - s2 * e_len2;
    let c1 = 2.0 * (e_a * h0 - s2 * w.dot(e));
    let c0 = h0 * h0 - s2 * w.length_squared();
    let mut any = false;
    let mut accept = |lambda: f64, emit: &mut dyn FnMut(f64)| {
        if !(0.0..=1.0).contains(&lambda) {
            return;
        }
        let h = h0 + lambda * e_a;
        let forward = if sin_phi > 0.0 { h >= 0.0 } else { h <= 0.0 };
        if forward {
            emit(lambda);
            any = true;
        }
    };
    // Near-linear edge (parallel to a cone ruling): the quadratic is
    // ill-conditioned, fall back to the linear equation. The guard scales
    // with the squared edge length so millimetre and hectometre meshes
    // behave alike.
    if c2.abs() < GUARD_EPS * e_len2 {
        if c1.abs() > 1e-30 {
            accept(-c0 / c1, &mut emit);
        }
        return any;
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return false;
    }
    let sq = disc.sqrt();
    for lambda in [(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)] {
        accept(lambda, &mut emit);
    }
    any
}

fn plane_crossings(tri: &Triangle, origin: Vec3, up: Vec3) -> SurfaceCrossings {
    let u = DVec3::from(up);
    let verts = tri.vertices();
    let h: Vec<f64> = verts.iter().map(|v| dsub(*v, origin).dot(u)).collect();
    let mut out = SurfaceCrossings::default();
    for (i0, i1) in EDGES {
        if h[i0] * h[i1] < 0.0 {
            let a = DVec3::from(verts[i0]);
            let b = DVec3::from(verts[i1]);
            let x = a + (b - a) * (h[i0] / (h[i0] - h[i1]));
            out.push(x);
        }
    }
    out
}

/// Full surface/triangle intersection for the channel at elevation `phi`.
///
/// At `phi == 0` the surface is the horizontal plane through the origin and
/// each edge is solved linearly. Otherwise vertices are classified first
/// (wrong half-space, all inside, mixed, all outside) and the per-edge
/// quadratic runs only when it can produce a crossing. In the all-outside
/// case the cone may still surround the triangle: the precomputed axial-ray
/// hit plus the axial-reach condition `delta_min <= d_max*sin|phi|` decides
/// that, flagged via `apex_hit`.
pub fn surface_crossings(
    tri: &Triangle,
    origin: Vec3,
    up: Vec3,
    phi: f64,
    delta_min: f32,
    d_max: f32,
    apex: ApexHits,
) -> SurfaceCrossings {
    if phi == 0.0 {
        return plane_crossings(tri, origin, up);
    }
    let sin_phi = phi.sin();
    let data = classify_vertices(tri, origin, up, sin_phi);
    let mut out = SurfaceCrossings::default();
    match data.class {
        ConeClass::WrongHalf | ConeClass::AllInside => out,
        ConeClass::Mixed => {
            collect_edge_roots(&data, tri, sin_phi, &mut out);
            out
        }
        ConeClass::AllOutside => {
            let apex_pierce = if sin_phi > 0.0 { apex.up } else { apex.down };
            let within_reach = (delta_min as f64) <= (d_max as f64) * sin_phi.abs();
            if apex_pierce && within_reach {
                out.apex_hit = true;
            }
            collect_edge_roots(&data, tri, sin_phi, &mut out);
            out
        }
    }
}

fn collect_edge_roots(
    data: &ConeVertexData,
    tri: &Triangle,
    sin_phi: f64,
    out: &mut SurfaceCrossings,
) {
    let verts = tri.vertices();
    for (i0, i1) in EDGES {
        let a = DVec3::from(verts[i0]);
        let b = DVec3::from(verts[i1]);
        edge_quadratic(data, i0, i1, sin_phi, |lambda| {
            out.push(a + (b - a) * lambda);
        });
        if out.full_span {
            return;
        }
    }
}

/// Boolean form of [`surface_crossings`] used by the early pass: same
/// classification, but mixed and surrounding cones short-circuit to true
/// and the all-outside fallthrough stops at the first valid root.
pub fn surface_intersects(
    tri: &Triangle,
    origin: Vec3,
    up: Vec3,
    phi: f64,
    delta_min: f32,
    d_max: f32,
    apex: ApexHits,
) -> bool {
    if phi == 0.0 {
        let u = DVec3::from(up);
        let verts = tri.vertices();
        let h: Vec<f64> = verts.iter().map(|v| dsub(*v, origin).dot(u)).collect();
        return EDGES.iter().any(|&(i0, i1)| h[i0] * h[i1] < 0.0);
    }
    let sin_phi = phi.sin();
    let data = classify_vertices(tri, origin, up, sin_phi);
    match data.class {
        ConeClass::WrongHalf | ConeClass::AllInside => false,
        ConeClass::Mixed => true,
        ConeClass::AllOutside => {
            let apex_pierce = if sin_phi > 0.0 { apex.up } else { apex.down };
            if apex_pierce && (delta_min as f64) <= (d_max as f64) * sin_phi.abs() {
                return true;
            }
            EDGES
                .iter()
                .any(|&(i0, i1)| edge_quadratic(&data, i0, i1, sin_phi, |_| {}))
        }
    }
}

/// Reflects a direction across the spin axis: the axial component is kept
/// and the horizontal part negated, mapping azimuth to azimuth + pi at the
/// same elevation.
pub fn reflect_across_axis(d: Vec3, axis: Vec3) -> Vec3 {
    let dd = DVec3::from(d);
    let u = DVec3::from(axis);
    (u * (2.0 * dd.dot(u)) - dd).to_f32()
}

/// Residual of the cone/plane membership equation for a point, used to
/// check that reported crossings actually lie on the surface.
pub fn surface_residual(p: Vec3, origin: Vec3, up: Vec3, phi: f64) -> f64 {
    let w = dsub(p, origin);
    (w.dot(up.into()) - w.length() * phi.sin()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> Triangle {
        Triangle::new(
            Vec3::new(a[0], a[1], a[2]),
            Vec3::new(b[0], b[1], b[2]),
            Vec3::new(c[0], c[1], c[2]),
        )
    }

    fn approx(a: f32, b: f32, tol: f32) -> bool {
        (a - b).abs() <= tol
    }

    fn vec_approx(a: Vec3, b: Vec3, tol: f32) -> bool {
        approx(a.x, b.x, tol) && approx(a.y, b.y, tol) && approx(a.z, b.z, tol)
    }

    const NO_APEX: ApexHits = ApexHits { up: false, down: false };

    #[test]
    fn ray_direction_axes() {
        let f = OrientedFrame::identity();
        assert!(vec_approx(ray_direction(0.0, 0.0, &f), Vec3::X, 1e-6));
        assert!(vec_approx(
            ray_direction(std::f64::consts::FRAC_PI_2, 0.0, &f),
            Vec3::Y,
            1e-6
        ));
        assert!(vec_approx(
            ray_direction(0.0, std::f64::consts::FRAC_PI_2, &f),
            Vec3::Z,
            1e-6
        ));
    }

    #[test]
    fn ray_direction_unit_length_over_grid() {
        let frame = OrientedFrame::from_forward_up(Vec3::new(0.3, -0.8, 0.1), Vec3::Z).unwrap();
        for i in 0..64 {
            for j in 0..16 {
                let theta = -std::f64::consts::PI + i as f64 * (2.0 * std::f64::consts::PI / 64.0);
                let phi = -0.7 + j as f64 * 0.09;
                let d = ray_direction(theta, phi, &frame);
                assert!((d.length() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn channel_index_demo_sensor() {
        // 4 channels, dphi = pi/4, phi0 = -pi/2.
        let f = OrientedFrame::identity();
        let o = Vec3::ZERO;
        let dphi = std::f64::consts::FRAC_PI_4;
        let phi0 = -std::f64::consts::FRAC_PI_2;
        assert_eq!(channel_index_of_point(Vec3::X, o, &f, phi0, dphi, 4).unwrap(), 2);
        assert_eq!(channel_index_of_point(Vec3::Z, o, &f, phi0, dphi, 4).unwrap(), 3);
        assert_eq!(channel_index_of_point(-Vec3::Z, o, &f, phi0, dphi, 4).unwrap(), 0);
        assert_eq!(
            channel_index_of_point(o, o, &f, phi0, dphi, 4),
            Err(GeometryError::DegenerateDirection)
        );
    }

    #[test]
    fn ray_index_demo_sensor() {
        // 8 rays, dtheta = pi/4, theta0 = -pi.
        let f = OrientedFrame::identity();
        let o = Vec3::ZERO;
        let dtheta = std::f64::consts::FRAC_PI_4;
        let theta0 = -std::f64::consts::PI;
        assert_eq!(ray_index_of_point(Vec3::X, o, &f, theta0, dtheta, 8).unwrap(), 4);
        assert_eq!(ray_index_of_point(Vec3::Y, o, &f, theta0, dtheta, 8).unwrap(), 6);
        assert_eq!(ray_index_of_point(-Vec3::X, o, &f, theta0, dtheta, 8).unwrap(), 7);
        assert_eq!(
            ray_index_of_point(Vec3::Z, o, &f, theta0, dtheta, 8),
            Err(GeometryError::OnSpinAxis)
        );
    }

    #[test]
    fn grid_round_trip() {
        let frame = OrientedFrame::identity();
        let o = Vec3::new(2.0, -1.0, 0.5);
        let (gamma, chi) = (16usize, 64usize);
        let dphi = std::f64::consts::PI / gamma as f64;
        let dtheta = 2.0 * std::f64::consts::PI / chi as f64;
        let phi0 = -((gamma / 2) as f64) * dphi;
        let theta0 = -((chi / 2) as f64) * dtheta;
        for kappa in [0.5f32, 10.0, 500.0] {
            for j in 1..gamma - 1 {
                for i in 1..chi - 1 {
                    let d = ray_direction(theta0 + i as f64 * dtheta, phi0 + j as f64 * dphi, &frame);
                    let p = o + d * kappa;
                    assert_eq!(
                        channel_index_of_point(p, o, &frame, phi0, dphi, gamma).unwrap(),
                        j,
                        "channel mismatch at ({j},{i}) kappa={kappa}"
                    );
                    assert_eq!(
                        ray_index_of_point(p, o, &frame, theta0, dtheta, chi).unwrap(),
                        i,
                        "ray mismatch at ({j},{i}) kappa={kappa}"
                    );
                }
            }
        }
    }

    #[test]
    fn moller_trumbore_axis_aligned() {
        let t = tri([5.0, -1.0, -1.0], [5.0, 1.0, -1.0], [5.0, 0.0, 1.0]);
        let hit = moller_trumbore(Vec3::ZERO, Vec3::X, &t).unwrap();
        assert!(approx(hit, 5.0, 1e-5));
        assert!(moller_trumbore(Vec3::ZERO, -Vec3::X, &t).is_none());
        // Direction parallel to the triangle plane: zero determinant.
        assert!(moller_trumbore(Vec3::ZERO, Vec3::Y, &t).is_none());
    }

    #[test]
    fn closest_point_face_and_vertex_regions() {
        let face = tri([3.0, -5.0, -5.0], [3.0, 5.0, -5.0], [3.0, 0.0, 5.0]);
        assert!(approx(closest_point_distance(Vec3::ZERO, &face), 3.0, 1e-6));

        let vertex = tri([4.0, 1.0, 0.0], [5.0, 1.0, 0.0], [4.0, 2.0, 0.0]);
        let d = closest_point_distance(Vec3::ZERO, &vertex);
        assert!(approx(d, 17.0f32.sqrt(), 1e-5));

        let coincident = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!(approx(closest_point_distance(Vec3::ZERO, &coincident), 0.0, 1e-7));
    }

    /// Dense point-sampling oracle: minimum distance over a barycentric grid.
    fn sampled_min_distance(p: Vec3, t: &Triangle, n: usize) -> f32 {
        let mut best = f32::INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let u = i as f32 / n as f32;
                let v = j as f32 / n as f32;
                let w = 1.0 - u - v;
                let q = t.v0 * w + t.v1 * u + t.v2 * v;
                best = best.min((q - p).length());
            }
        }
        best
    }

    #[test]
    fn closest_point_matches_dense_sampling() {
        let cases = [
            tri([4.0, 1.0, 0.0], [5.0, 1.0, 0.0], [4.0, 2.0, 0.0]),
            tri([1.0, -2.0, 3.0], [2.5, 0.5, -1.0], [-1.0, 1.0, 1.0]),
            tri([10.0, 10.0, 10.0], [11.0, 10.0, 10.5], [10.0, 12.0, 9.0]),
        ];
        for t in &cases {
            let exact = closest_point_distance(Vec3::ZERO, t);
            // 141 subdivisions give just over ten thousand sample points.
            let sampled = sampled_min_distance(Vec3::ZERO, t, 141);
            assert!(
                (exact - sampled).abs() <= 1e-3,
                "exact {exact} vs sampled {sampled}"
            );
        }
    }

    #[test]
    fn plane_case_two_crossings() {
        let t = tri([1.0, 0.0, 1.0], [1.0, 1.0, -1.0], [2.0, 0.0, 1.0]);
        let out = surface_crossings(&t, Vec3::ZERO, Vec3::Z, 0.0, 0.1, 100.0, NO_APEX);
        assert_eq!(out.count(), 2);
        assert!(vec_approx(out.points()[0], Vec3::new(1.0, 0.5, 0.0), 1e-6));
        assert!(vec_approx(out.points()[1], Vec3::new(1.5, 0.5, 0.0), 1e-6));
        assert!(!out.full_span && !out.apex_hit);
        assert!(surface_intersects(&t, Vec3::ZERO, Vec3::Z, 0.0, 0.1, 100.0, NO_APEX));
    }

    #[test]
    fn cone_edge_quadratic_known_root() {
        // Edge (1,0,0)->(1,0,2) against the 45-degree cone crosses at (1,0,1).
        let t = tri([1.0, 0.0, 0.0], [1.0, 0.0, 2.0], [3.0, 0.0, 0.0]);
        let phi = std::f64::consts::FRAC_PI_4;
        let out = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, 0.5, 100.0, NO_APEX);
        assert_eq!(out.count(), 2, "{out:?}");
        let expect_a = Vec3::new(1.0, 0.0, 1.0);
        let expect_b = Vec3::new(1.5, 0.0, 1.5);
        assert!(out.points().iter().any(|p| vec_approx(*p, expect_a, 1e-5)));
        assert!(out.points().iter().any(|p| vec_approx(*p, expect_b, 1e-5)));
        for p in out.points() {
            assert!(surface_residual(*p, Vec3::ZERO, Vec3::Z, phi) <= 1e-3 * dsub(*p, Vec3::ZERO).length());
        }
        assert!(surface_intersects(&t, Vec3::ZERO, Vec3::Z, phi, 0.5, 100.0, NO_APEX));
    }

    #[test]
    fn cone_all_inside_no_crossing() {
        // Small triangle straight above: every vertex elevation exceeds 60 deg.
        let t = tri([0.05, 0.0, 5.0], [0.0, 0.05, 5.0], [-0.05, -0.05, 5.0]);
        let phi = std::f64::consts::FRAC_PI_3;
        let apex = apex_ray_hits(Vec3::ZERO, Vec3::Z, &t);
        let out = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, 4.9, 100.0, apex);
        assert_eq!(out.count(), 0);
        assert!(!out.intersects());
        assert!(!surface_intersects(&t, Vec3::ZERO, Vec3::Z, phi, 4.9, 100.0, apex));
    }

    #[test]
    fn cone_wrong_half_space() {
        let t = tri([1.0, 0.0, -2.0], [2.0, 1.0, -3.0], [1.5, -1.0, -2.5]);
        let phi = 0.4;
        assert!(!surface_intersects(&t, Vec3::ZERO, Vec3::Z, phi, 1.0, 100.0, NO_APEX));
        let out = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, 1.0, 100.0, NO_APEX);
        assert_eq!(out.count(), 0);
    }

    #[test]
    fn cone_surrounds_triangle_apex_hit() {
        // Wide flat triangle pierced by the axis; a steep cone passes inside
        // all edges, so the only evidence of intersection is the apex ray.
        let t = tri([1.0, 1.0, 1.0], [-1.0, 1.0, 1.0], [0.0, -1.0, 1.0]);
        let phi = 80.0f64.to_radians();
        let apex = apex_ray_hits(Vec3::ZERO, Vec3::Z, &t);
        assert!(apex.up && !apex.down);
        let delta_min = closest_point_distance(Vec3::ZERO, &t);
        let out = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, delta_min, 100.0, apex);
        assert!(out.apex_hit);
        assert_eq!(out.count(), 0);
        assert!(out.intersects());
        assert!(surface_intersects(&t, Vec3::ZERO, Vec3::Z, phi, delta_min, 100.0, apex));

        // Out of axial reach: d_max*sin(phi) < delta_min.
        let short = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, delta_min, 0.5, apex);
        assert!(!short.apex_hit && short.count() == 0);
        assert!(!surface_intersects(&t, Vec3::ZERO, Vec3::Z, phi, delta_min, 0.5, apex));
    }

    #[test]
    fn negative_elevation_mirror() {
        let t = tri([1.0, 0.0, -0.0], [1.0, 0.0, -2.0], [3.0, 0.0, -0.0]);
        let phi = -std::f64::consts::FRAC_PI_4;
        let out = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, 0.5, 100.0, NO_APEX);
        assert_eq!(out.count(), 2);
        assert!(out
            .points()
            .iter()
            .any(|p| vec_approx(*p, Vec3::new(1.0, 0.0, -1.0), 1e-5)));
    }

    #[test]
    fn bool_matches_full_on_random_samples() {
        // Cheap in-module consistency sweep; the acceptance suite runs the
        // full 1e5-sample version.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state >> 30;
            state = state.wrapping_mul(0xbf58476d1ce4e5b9);
            state ^= state >> 27;
            state = state.wrapping_mul(0x94d049bb133111eb);
            state ^= state >> 31;
            state
        };
        let mut unit = move || (next() >> 11) as f64 / (1u64 << 53) as f64;
        for _ in 0..2000 {
            let mut v = [[0.0f32; 3]; 3];
            for vk in v.iter_mut() {
                for c in vk.iter_mut() {
                    *c = (unit() * 20.0 - 10.0) as f32;
                }
            }
            let t = tri(v[0], v[1], v[2]);
            if TriangleDerived::new(&t).is_none() {
                continue;
            }
            let phi = (unit() - 0.5) * std::f64::consts::PI * 0.96;
            let apex = apex_ray_hits(Vec3::ZERO, Vec3::Z, &t);
            let delta_min = closest_point_distance(Vec3::ZERO, &t);
            let full = surface_crossings(&t, Vec3::ZERO, Vec3::Z, phi, delta_min, 50.0, apex);
            let fast = surface_intersects(&t, Vec3::ZERO, Vec3::Z, phi, delta_min, 50.0, apex);
            assert_eq!(fast, full.intersects(), "phi={phi} tri={t:?} full={full:?}");
        }
    }

    #[test]
    fn reflect_flips_azimuth() {
        assert!(vec_approx(reflect_across_axis(Vec3::X, Vec3::Z), -Vec3::X, 1e-7));
        let d = ray_direction(0.7, 0.3, &OrientedFrame::identity());
        let r = reflect_across_axis(d, Vec3::Z);
        let expect = ray_direction(0.7 + std::f64::consts::PI, 0.3, &OrientedFrame::identity());
        assert!(vec_approx(r, expect, 1e-6));
    }

    #[test]
    fn frame_validation() {
        assert!(OrientedFrame::identity().validate().is_ok());
        let skew = OrientedFrame {
            forward: Vec3::X,
            right: Vec3::new(0.4, 0.9, 0.0),
            up: Vec3::Z,
        };
        assert_eq!(skew.validate(), Err(GeometryError::SkewedFrame));
        let f = OrientedFrame::from_forward_up(Vec3::new(1.0, 1.0, 0.0), Vec3::Z).unwrap();
        f.validate().unwrap();
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let t = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        assert!(TriangleDerived::new(&t).is_none());
        let ok = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let d = TriangleDerived::new(&ok).unwrap();
        assert!(approx(d.area, 0.5, 1e-7));
        assert!(vec_approx(d.normal, Vec3::Z, 1e-6));
        assert!(vec_approx(d.centroid, Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0), 1e-6));
    }

    #[test]
    fn facing_convention() {
        // Normal +Z (winding CCW seen from +Z); origin above sees the front.
        let t = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let d = TriangleDerived::new(&t).unwrap();
        let above = Vec3::new(0.2, 0.2, 3.0);
        let below = Vec3::new(0.2, 0.2, -3.0);
        assert!(faces_origin(&d, above, Facing::Toward));
        assert!(!faces_origin(&d, below, Facing::Toward));
        assert!(faces_origin(&d, below, Facing::Away));
        // Origin within the plane guard: skipped under both conventions.
        let flush = Vec3::new(0.2, 0.2, splat_eps());
        assert!(!faces_origin(&d, flush, Facing::Toward));
        assert!(!faces_origin(&d, flush, Facing::Away));
    }

    fn splat_eps() -> f32 {
        (GUARD_EPS / 2.0) as f32
    }
}
