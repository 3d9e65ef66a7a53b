//! Mesh ingestion, multi-instance dynamic transforms, and the seeded
//! motion/deformation streams that drive the benchmark scenes.
//!
//! World state is addressed, never mutated: the pose of instance `k` at
//! frame `f` is a pure function of the run seed, so every backend replays
//! the identical world and a recorded pose stream round-trips byte-exactly.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Aabb, Triangle, TriangleDerived, Vec3};
use crate::stream;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("mesh contains no faces")]
    EmptyMesh,
    #[error("every face of the mesh is degenerate")]
    AllDegenerate,
    #[error("face references vertex {0} but only {1} are defined")]
    IndexOutOfRange(isize, usize),
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a pose stream file")]
    BadMagic,
    #[error("unsupported pose stream version {0}")]
    Version(u32),
    #[error("pose stream file is truncated")]
    Truncated,
}

// ---------------------------------------------------------------------------
// Mesh

/// Indexed triangle mesh with its object bounding box. Degenerate faces are
/// dropped at load and counted in `dropped_faces`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub bounds: Aabb,
    pub dropped_faces: usize,
}

impl Mesh {
    pub fn load(path: &Path) -> Result<Mesh, MeshError> {
        let text = std::fs::read_to_string(path)?;
        parse_obj(&text)
    }

    pub fn from_triangles(tris: &[Triangle]) -> Mesh {
        let mut positions = Vec::with_capacity(tris.len() * 3);
        let mut triangles = Vec::with_capacity(tris.len());
        for t in tris {
            let base = positions.len() as u32;
            positions.extend_from_slice(&t.vertices());
            triangles.push([base, base + 1, base + 2]);
        }
        let bounds = Aabb::from_points(positions.iter().copied());
        Mesh { positions, triangles, bounds, dropped_faces: 0 }
    }

    /// Random triangle soup: `count` triangles with edge extent around
    /// `size` scattered in `volume`. Fixture generator for configs and
    /// tests that ship no mesh files.
    pub fn soup(seed: u64, count: usize, volume: Aabb, size: f32) -> Mesh {
        let mut tris = Vec::with_capacity(count);
        let span = volume.size();
        for t in 0..count as u64 {
            let anchor = Vec3::new(
                volume.min.x + span.x * stream::unit_f64(&[seed, 0xA0, t, 0]) as f32,
                volume.min.y + span.y * stream::unit_f64(&[seed, 0xA0, t, 1]) as f32,
                volume.min.z + span.z * stream::unit_f64(&[seed, 0xA0, t, 2]) as f32,
            );
            let offset = |k: u64, axis: u64| {
                size * (stream::unit_f64(&[seed, 0xA1, t, k, axis]) as f32 - 0.5)
            };
            let tri = Triangle::new(
                anchor,
                anchor + Vec3::new(offset(1, 0), offset(1, 1), offset(1, 2)),
                anchor + Vec3::new(offset(2, 0), offset(2, 1), offset(2, 2)),
            );
            if TriangleDerived::new(&tri).is_some() {
                tris.push(tri);
            }
        }
        Mesh::from_triangles(&tris)
    }

    pub fn triangle(&self, i: usize) -> Triangle {
        let [a, b, c] = self.triangles[i];
        Triangle::new(
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        )
    }
}

/// Parses the OBJ subset used by the harness: `v` positions and `f` faces.
/// Polygon faces are fan-triangulated; normals, texture coordinates,
/// materials, and groups are ignored (normals are recomputed from winding).
pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut dropped = 0usize;
    let mut saw_face = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = [0.0f32; 3];
                for c in coord.iter_mut() {
                    let tok = it.next().ok_or_else(|| MeshError::Parse {
                        line: lineno + 1,
                        what: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| MeshError::Parse {
                        line: lineno + 1,
                        what: format!("bad coordinate {tok:?}"),
                    })?;
                }
                positions.push(Vec3::new(coord[0], coord[1], coord[2]));
            }
            Some("f") => {
                saw_face = true;
                let mut verts: Vec<u32> = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let idx: isize = first.parse().map_err(|_| MeshError::Parse {
                        line: lineno + 1,
                        what: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = if idx > 0 {
                        idx as usize - 1
                    } else if idx < 0 {
                        let back = positions.len() as isize + idx;
                        if back < 0 {
                            return Err(MeshError::IndexOutOfRange(idx, positions.len()));
                        }
                        back as usize
                    } else {
                        return Err(MeshError::IndexOutOfRange(0, positions.len()));
                    };
                    if resolved >= positions.len() {
                        return Err(MeshError::IndexOutOfRange(idx, positions.len()));
                    }
                    verts.push(resolved as u32);
                }
                if verts.len() < 3 {
                    return Err(MeshError::Parse {
                        line: lineno + 1,
                        what: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..verts.len() - 1 {
                    let tri = [verts[0], verts[k], verts[k + 1]];
                    let geom = Triangle::new(
                        positions[tri[0] as usize],
                        positions[tri[1] as usize],
                        positions[tri[2] as usize],
                    );
                    if TriangleDerived::new(&geom).is_some() {
                        triangles.push(tri);
                    } else {
                        dropped += 1;
                    }
                }
            }
            // vn/vt/vp/usemtl/mtllib/o/g/s/l: ignored.
            _ => {}
        }
    }

    if !saw_face {
        return Err(MeshError::EmptyMesh);
    }
    if triangles.is_empty() {
        return Err(MeshError::AllDegenerate);
    }
    let bounds = Aabb::from_points(positions.iter().copied());
    Ok(Mesh { positions, triangles, bounds, dropped_faces: dropped })
}

// ---------------------------------------------------------------------------
// Quaternions

/// Unit quaternion, used only for instance rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f32,
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Uniform over the rotation group from three unit samples.
    pub fn uniform(u1: f64, u2: f64, u3: f64) -> Quat {
        let tau = 2.0 * std::f64::consts::PI;
        let (s1, c1) = (tau * u2).sin_cos();
        let (s2, c2) = (tau * u3).sin_cos();
        let r1 = (1.0 - u1).sqrt();
        let r2 = u1.sqrt();
        Quat {
            w: (r2 * c2) as f32,
            x: (r1 * s1) as f32,
            y: (r1 * c1) as f32,
            z: (r2 * s2) as f32,
        }
    }

    pub fn normalized(self) -> Quat {
        let n = ((self.w as f64).powi(2)
            + (self.x as f64).powi(2)
            + (self.y as f64).powi(2)
            + (self.z as f64).powi(2))
        .sqrt();
        Quat {
            w: (self.w as f64 / n) as f32,
            x: (self.x as f64 / n) as f32,
            y: (self.y as f64 / n) as f32,
            z: (self.z as f64 / n) as f32,
        }
    }

    /// Normalized linear interpolation along the shorter arc.
    pub fn nlerp(a: Quat, b: Quat, t: f32) -> Quat {
        let dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        Quat {
            w: a.w + (sign * b.w - a.w) * t,
            x: a.x + (sign * b.x - a.x) * t,
            y: a.y + (sign * b.y - a.y) * t,
            z: a.z + (sign * b.z - a.z) * t,
        }
        .normalized()
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        // q v q* via the expanded cross form, evaluated in f64.
        let (qw, qx, qy, qz) = (self.w as f64, self.x as f64, self.y as f64, self.z as f64);
        let (vx, vy, vz) = (v.x as f64, v.y as f64, v.z as f64);
        let tx = 2.0 * (qy * vz - qz * vy);
        let ty = 2.0 * (qz * vx - qx * vz);
        let tz = 2.0 * (qx * vy - qy * vx);
        Vec3::new(
            (vx + qw * tx + (qy * tz - qz * ty)) as f32,
            (vy + qw * ty + (qz * tx - qx * tz)) as f32,
            (vz + qw * tz + (qx * ty - qy * tx)) as f32,
        )
    }
}

// ---------------------------------------------------------------------------
// Motion

/// Per-instance pose and per-axis scale for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceState {
    pub position: Vec3,
    pub rotation: Quat,
    pub scale: [f32; 3],
}

impl InstanceState {
    pub fn transform(&self, v: Vec3) -> Vec3 {
        let scaled = Vec3::new(v.x * self.scale[0], v.y * self.scale[1], v.z * self.scale[2]);
        self.rotation.rotate(scaled) + self.position
    }
}

/// How one degree of freedom evolves: resampled every frame, or linearly
/// interpolated over ten-frame keyframe intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    Smooth,
    Instant,
}

pub const SMOOTH_INTERVAL: u32 = 10;

/// Per-DOF motion modes. Labels name the smooth DOFs: `pos`, `rot`, `sc`,
/// `p+r`, `r+sc`, `p+sc`, `f.sm` (all smooth), `f.i` (all instant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionConfig {
    pub position: Dof,
    pub rotation: Dof,
    pub scale: Dof,
}

impl MotionConfig {
    pub const FULL_INSTANT: MotionConfig =
        MotionConfig { position: Dof::Instant, rotation: Dof::Instant, scale: Dof::Instant };

    pub fn from_label(label: &str) -> Option<MotionConfig> {
        use Dof::*;
        let (p, r, s) = match label {
            "pos" => (Smooth, Instant, Instant),
            "rot" => (Instant, Smooth, Instant),
            "sc" => (Instant, Instant, Smooth),
            "p+r" => (Smooth, Smooth, Instant),
            "r+sc" => (Instant, Smooth, Smooth),
            "p+sc" => (Smooth, Instant, Smooth),
            "f.sm" => (Smooth, Smooth, Smooth),
            "f.i" => (Instant, Instant, Instant),
            _ => return None,
        };
        Some(MotionConfig { position: p, rotation: r, scale: s })
    }

    pub fn label(&self) -> &'static str {
        use Dof::*;
        match (self.position, self.rotation, self.scale) {
            (Smooth, Instant, Instant) => "pos",
            (Instant, Smooth, Instant) => "rot",
            (Instant, Instant, Smooth) => "sc",
            (Smooth, Smooth, Instant) => "p+r",
            (Instant, Smooth, Smooth) => "r+sc",
            (Smooth, Instant, Smooth) => "p+sc",
            (Smooth, Smooth, Smooth) => "f.sm",
            (Instant, Instant, Instant) => "f.i",
        }
    }
}

/// Sampling bounds for instance poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    pub world_box: Aabb,
    /// Per-axis scale is drawn log-uniformly from this range.
    pub scale_range: (f32, f32),
}

const DOF_POS: u64 = 0x50;
const DOF_ROT: u64 = 0x52;
const DOF_SCALE: u64 = 0x53;

/// Deterministic pose source: every (instance, frame) state is a pure
/// function of the seed.
#[derive(Debug, Clone, Copy)]
pub struct MotionStream {
    pub seed: u64,
    pub params: MotionParams,
    pub config: MotionConfig,
}

impl MotionStream {
    fn sample_position(&self, instance: u32, index: u32) -> Vec3 {
        let b = self.params.world_box;
        let s = b.size();
        let u = |axis: u64| {
            stream::unit_f64(&[self.seed, DOF_POS, instance as u64, index as u64, axis]) as f32
        };
        Vec3::new(b.min.x + s.x * u(0), b.min.y + s.y * u(1), b.min.z + s.z * u(2))
    }

    fn sample_rotation(&self, instance: u32, index: u32) -> Quat {
        let u = |k: u64| stream::unit_f64(&[self.seed, DOF_ROT, instance as u64, index as u64, k]);
        Quat::uniform(u(0), u(1), u(2))
    }

    fn sample_scale(&self, instance: u32, index: u32) -> [f32; 3] {
        let (lo, hi) = self.params.scale_range;
        let u = |axis: u64| {
            stream::log_uniform(
                &[self.seed, DOF_SCALE, instance as u64, index as u64, axis],
                lo as f64,
                hi as f64,
            ) as f32
        };
        [u(0), u(1), u(2)]
    }

    /// Pose of one instance at one frame. Instant DOFs resample per frame;
    /// smooth DOFs interpolate linearly between keyframes every
    /// [`SMOOTH_INTERVAL`] frames.
    pub fn state_at(&self, instance: u32, frame: u32) -> InstanceState {
        let key = frame / SMOOTH_INTERVAL;
        let t = (frame % SMOOTH_INTERVAL) as f32 / SMOOTH_INTERVAL as f32;

        let position = match self.config.position {
            Dof::Instant => self.sample_position(instance, frame),
            Dof::Smooth => {
                let a = self.sample_position(instance, key);
                let b = self.sample_position(instance, key + 1);
                a + (b - a) * t
            }
        };
        let rotation = match self.config.rotation {
            Dof::Instant => self.sample_rotation(instance, frame),
            Dof::Smooth => Quat::nlerp(
                self.sample_rotation(instance, key),
                self.sample_rotation(instance, key + 1),
                t,
            ),
        };
        let scale = match self.config.scale {
            Dof::Instant => self.sample_scale(instance, frame),
            Dof::Smooth => {
                let a = self.sample_scale(instance, key);
                let b = self.sample_scale(instance, key + 1);
                [
                    a[0] + (b[0] - a[0]) * t,
                    a[1] + (b[1] - a[1]) * t,
                    a[2] + (b[2] - a[2]) * t,
                ]
            }
        };
        InstanceState { position, rotation, scale }
    }
}

// ---------------------------------------------------------------------------
// Pose stream file

const POSE_MAGIC: &[u8; 4] = b"PSTR";
const POSE_VERSION: u32 = 1;

/// Recorded per-frame instance states: the single world-state source that
/// every backend replays, so no backend sees a different world.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStream {
    pub seed: u64,
    pub frames: u32,
    pub instances: u32,
    states: Vec<InstanceState>,
}

impl PoseStream {
    pub fn record(motion: &MotionStream, frames: u32, instances: u32) -> PoseStream {
        let mut states = Vec::with_capacity((frames * instances) as usize);
        for frame in 0..frames {
            for instance in 0..instances {
                states.push(motion.state_at(instance, frame));
            }
        }
        PoseStream { seed: motion.seed, frames, instances, states }
    }

    pub fn state(&self, frame: u32, instance: u32) -> InstanceState {
        self.states[(frame * self.instances + instance) as usize]
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), StreamError> {
        w.write_all(POSE_MAGIC)?;
        w.write_all(&POSE_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.frames.to_le_bytes())?;
        w.write_all(&self.instances.to_le_bytes())?;
        for s in &self.states {
            for f in [
                s.position.x,
                s.position.y,
                s.position.z,
                s.rotation.w,
                s.rotation.x,
                s.rotation.y,
                s.rotation.z,
                s.scale[0],
                s.scale[1],
                s.scale[2],
            ] {
                w.write_all(&f.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<PoseStream, StreamError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != POSE_MAGIC {
            return Err(StreamError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != POSE_VERSION {
            return Err(StreamError::Version(version));
        }
        let mut seed_bytes = [0u8; 8];
        read_exact(r, &mut seed_bytes)?;
        let seed = u64::from_le_bytes(seed_bytes);
        let frames = read_u32(r)?;
        let instances = read_u32(r)?;
        let count = frames as usize * instances as usize;
        let mut states = Vec::with_capacity(count);
        for _ in 0..count {
            let mut f = [0.0f32; 10];
            for v in f.iter_mut() {
                let mut b = [0u8; 4];
                read_exact(r, &mut b)?;
                *v = f32::from_le_bytes(b);
            }
            states.push(InstanceState {
                position: Vec3::new(f[0], f[1], f[2]),
                rotation: Quat { w: f[3], x: f[4], y: f[5], z: f[6] },
                scale: [f[7], f[8], f[9]],
            });
        }
        Ok(PoseStream { seed, frames, instances, states })
    }

    pub fn save(&self, path: &Path) -> Result<(), StreamError> {
        let mut f = std::fs::File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<PoseStream, StreamError> {
        let mut f = std::fs::File::open(path)?;
        PoseStream::read_from(&mut f)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), StreamError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            StreamError::Truncated
        } else {
            StreamError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, StreamError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

// ---------------------------------------------------------------------------
// Deformation and world assembly

/// Deformation regime for dynamic geometry. Deformed frames re-draw every
/// triangle corner inside the bound, breaking shared-vertex topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Deformation {
    #[default]
    None,
    /// Scatter bound: the instance's world-space object bounding box.
    ObjectBound,
    /// Scatter bound: the scene's world bounding box, fixed per session.
    SceneWide,
}

impl Deformation {
    pub fn from_label(label: &str) -> Option<Deformation> {
        match label {
            "nd" => Some(Deformation::None),
            "obd" => Some(Deformation::ObjectBound),
            "swd" => Some(Deformation::SceneWide),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Deformation::None => "nd",
            Deformation::ObjectBound => "obd",
            Deformation::SceneWide => "swd",
        }
    }
}

const DEFORM_TAG: u64 = 0xDF;

/// World-space AABB of a mesh under an instance transform, from its eight
/// transformed corners.
pub fn instance_bounds(mesh: &Mesh, state: &InstanceState) -> Aabb {
    let b = mesh.bounds;
    let corners = [
        Vec3::new(b.min.x, b.min.y, b.min.z),
        Vec3::new(b.max.x, b.min.y, b.min.z),
        Vec3::new(b.min.x, b.max.y, b.min.z),
        Vec3::new(b.max.x, b.max.y, b.min.z),
        Vec3::new(b.min.x, b.min.y, b.max.z),
        Vec3::new(b.max.x, b.min.y, b.max.z),
        Vec3::new(b.min.x, b.max.y, b.max.z),
        Vec3::new(b.max.x, b.max.y, b.max.z),
    ];
    Aabb::from_points(corners.iter().map(|c| state.transform(*c)))
}

/// Emits one instance's triangles for a frame: transformed vertices under
/// no-deformation, or per-corner scatter within the deformation bound.
#[allow(clippy::too_many_arguments)]
pub fn deformed_instance_triangles(
    mesh: &Mesh,
    state: &InstanceState,
    deformation: Deformation,
    world_box: &Aabb,
    seed: u64,
    frame: u32,
    instance: u32,
    out: &mut Vec<Triangle>,
) {
    match deformation {
        Deformation::None => {
            for i in 0..mesh.triangles.len() {
                let t = mesh.triangle(i);
                out.push(Triangle::new(
                    state.transform(t.v0),
                    state.transform(t.v1),
                    state.transform(t.v2),
                ));
            }
        }
        Deformation::ObjectBound | Deformation::SceneWide => {
            let bound = match deformation {
                Deformation::ObjectBound => instance_bounds(mesh, state),
                _ => *world_box,
            };
            let span = bound.size();
            let corner = |tri: u64, k: u64| {
                let u = |axis: u64| {
                    stream::unit_f64(&[
                        seed,
                        DEFORM_TAG,
                        frame as u64,
                        instance as u64,
                        tri,
                        k,
                        axis,
                    ]) as f32
                };
                Vec3::new(
                    bound.min.x + span.x * u(0),
                    bound.min.y + span.y * u(1),
                    bound.min.z + span.z * u(2),
                )
            };
            for i in 0..mesh.triangles.len() as u64 {
                out.push(Triangle::new(corner(i, 0), corner(i, 1), corner(i, 2)));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Prepared scene

/// Per-frame immutable triangle buffer with cached derived data and a
/// geometry digest. Degenerate triangles are dropped here so every backend
/// casts against the identical set.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub triangles: Vec<Triangle>,
    pub derived: Vec<TriangleDerived>,
    pub digest: u64,
    pub dropped: usize,
}

impl PreparedScene {
    pub fn from_triangles(tris: impl IntoIterator<Item = Triangle>) -> PreparedScene {
        let mut triangles = Vec::new();
        let mut derived = Vec::new();
        let mut dropped = 0usize;
        for t in tris {
            match TriangleDerived::new(&t) {
                Some(d) => {
                    triangles.push(t);
                    derived.push(d);
                }
                None => dropped += 1,
            }
        }
        let digest = digest_triangles(&triangles);
        PreparedScene { triangles, derived, digest, dropped }
    }

    pub fn empty() -> PreparedScene {
        PreparedScene::from_triangles([])
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// FNV-1a over the raw little-endian vertex bytes; identical across
/// backends fed the same stream.
pub fn digest_triangles(tris: &[Triangle]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    let mut eat = |f: f32| {
        for b in f.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for t in tris {
        for v in t.vertices() {
            eat(v.x);
            eat(v.y);
            eat(v.z);
        }
    }
    h
}

// ---------------------------------------------------------------------------
// Scene model

/// One mesh entry of a scene: static scenery placed as authored, or a
/// dynamic mesh instanced `instances` times under the motion stream.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub mesh: Mesh,
    pub instances: u32,
    pub dynamic: bool,
}

/// Complete scene description driving per-frame world assembly.
#[derive(Debug)]
pub struct SceneModel {
    pub objects: Vec<SceneObject>,
    pub motion: MotionStream,
    pub deformation: Deformation,
}

impl SceneModel {
    /// Total dynamic instance count; the pose stream carries one row per
    /// instance per frame.
    pub fn dynamic_instances(&self) -> u32 {
        self.objects.iter().filter(|o| o.dynamic).map(|o| o.instances).sum()
    }

    pub fn record_poses(&self, frames: u32) -> PoseStream {
        PoseStream::record(&self.motion, frames, self.dynamic_instances())
    }

    pub fn static_scene(&self) -> PreparedScene {
        let mut tris = Vec::new();
        for obj in self.objects.iter().filter(|o| !o.dynamic) {
            for i in 0..obj.mesh.triangles.len() {
                tris.push(obj.mesh.triangle(i));
            }
        }
        PreparedScene::from_triangles(tris)
    }

    /// Dynamic subset of one frame, replayed from the pose stream.
    pub fn dynamic_scene(&self, poses: &PoseStream, frame: u32) -> PreparedScene {
        let mut tris = Vec::new();
        let mut instance = 0u32;
        for obj in self.objects.iter().filter(|o| o.dynamic) {
            for _ in 0..obj.instances {
                let state = poses.state(frame, instance);
                deformed_instance_triangles(
                    &obj.mesh,
                    &state,
                    self.deformation,
                    &self.motion.params.world_box,
                    self.motion.seed,
                    frame,
                    instance,
                    &mut tris,
                );
                instance += 1;
            }
        }
        PreparedScene::from_triangles(tris)
    }

    /// Full frame: static geometry first, then dynamic instances in
    /// declaration order.
    pub fn frame_scene(&self, poses: &PoseStream, frame: u32) -> PreparedScene {
        let mut tris = self.static_scene().triangles;
        let dynamic = self.dynamic_scene(poses, frame);
        tris.extend_from_slice(&dynamic.triangles);
        PreparedScene::from_triangles(tris)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT_TRI_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";

    #[test]
    fn parse_unit_triangle() {
        let mesh = parse_obj(UNIT_TRI_OBJ).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        let d = TriangleDerived::new(&mesh.triangle(0)).unwrap();
        assert!((d.area - 0.5).abs() < 1e-7);
    }

    #[test]
    fn parse_quad_fans_to_two_triangles() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let mesh = parse_obj(obj).unwrap();
        assert_eq!(mesh.triangles.len(), 2);
        assert_eq!(mesh.triangles[0], [0, 1, 2]);
        assert_eq!(mesh.triangles[1], [0, 2, 3]);
    }

    #[test]
    fn parse_drops_zero_area_face() {
        let obj = "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 4\n";
        let mesh = parse_obj(obj).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(mesh.dropped_faces, 1);
    }

    #[test]
    fn parse_slash_forms_and_negative_indices() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf 1/1/1 2/1/1 3/1/1\nf -3//1 -2//1 -1//1\n";
        let mesh = parse_obj(obj).unwrap();
        assert_eq!(mesh.triangles.len(), 2);
        assert_eq!(mesh.triangles[1], [0, 1, 2]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_obj("v 0 0 0\n"), Err(MeshError::EmptyMesh)));
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"),
            Err(MeshError::AllDegenerate)
        ));
        assert!(matches!(
            parse_obj("v 0 0 0\nf 1 2 9\n"),
            Err(MeshError::IndexOutOfRange(..))
        ));
        assert!(matches!(parse_obj("v a b c\n"), Err(MeshError::Parse { line: 1, .. })));
    }

    #[test]
    fn quat_rotation_basics() {
        // 90 degrees about z maps +x to +y.
        let half = std::f64::consts::FRAC_PI_4;
        let q = Quat { w: half.cos() as f32, x: 0.0, y: 0.0, z: half.sin() as f32 };
        let r = q.rotate(Vec3::X);
        assert!((r - Vec3::Y).length() < 1e-6);
        let n = Quat::uniform(0.3, 0.7, 0.1);
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert!((n.rotate(v).length() - v.length()).abs() < 1e-4);
    }

    #[test]
    fn motion_modes() {
        let params = MotionParams {
            world_box: Aabb::from_points([Vec3::new(-5.0, -5.0, -5.0), Vec3::new(5.0, 5.0, 5.0)]),
            scale_range: (0.5, 2.0),
        };
        let instant = MotionStream { seed: 3, params, config: MotionConfig::FULL_INSTANT };
        let a = instant.state_at(0, 4);
        let b = instant.state_at(0, 5);
        assert_ne!(a.position, b.position);
        assert_ne!(a.scale, b.scale);
        // Same seed and frame replays exactly.
        assert_eq!(a, instant.state_at(0, 4));

        let smooth = MotionStream {
            seed: 3,
            params,
            config: MotionConfig::from_label("f.sm").unwrap(),
        };
        let k0 = smooth.state_at(1, 0);
        let k1 = smooth.state_at(1, 10);
        let mid = smooth.state_at(1, 5);
        let expect = k0.position + (k1.position - k0.position) * 0.5;
        assert!((mid.position - expect).length() < 1e-5);

        for label in ["pos", "rot", "sc", "p+r", "r+sc", "p+sc", "f.sm", "f.i"] {
            assert_eq!(MotionConfig::from_label(label).unwrap().label(), label);
        }
        for (inst, frame) in [(0u32, 3u32), (2, 17)] {
            let s = instant.state_at(inst, frame);
            for c in s.scale {
                assert!((0.5..2.0).contains(&c));
            }
        }
    }

    #[test]
    fn pose_stream_round_trip() {
        let params = MotionParams {
            world_box: Aabb::from_points([Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)]),
            scale_range: (0.001, 30.0),
        };
        let motion = MotionStream { seed: 99, params, config: MotionConfig::FULL_INSTANT };
        let stream = PoseStream::record(&motion, 50, 10);
        assert_eq!(stream.len(), 500);

        let mut bytes = Vec::new();
        stream.write_to(&mut bytes).unwrap();
        let replayed = PoseStream::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(stream, replayed);

        let mut rewritten = Vec::new();
        replayed.write_to(&mut rewritten).unwrap();
        assert_eq!(bytes, rewritten);

        // Truncation and bad magic are detected.
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(PoseStream::read_from(&mut &cut[..]), Err(StreamError::Truncated)));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            PoseStream::read_from(&mut wrong.as_slice()),
            Err(StreamError::BadMagic)
        ));
    }

    fn demo_model(deformation: Deformation) -> SceneModel {
        let mesh = parse_obj(UNIT_TRI_OBJ).unwrap();
        let params = MotionParams {
            world_box: Aabb::from_points([
                Vec3::new(-10.0, -10.0, -10.0),
                Vec3::new(10.0, 10.0, 10.0),
            ]),
            scale_range: (0.5, 2.0),
        };
        SceneModel {
            objects: vec![
                SceneObject { mesh: mesh.clone(), instances: 1, dynamic: false },
                SceneObject { mesh, instances: 3, dynamic: true },
            ],
            motion: MotionStream { seed: 5, params, config: MotionConfig::FULL_INSTANT },
            deformation,
        }
    }

    #[test]
    fn deformation_bounds() {
        let model = demo_model(Deformation::ObjectBound);
        let poses = model.record_poses(4);
        for frame in 0..4 {
            let mut instance = 0u32;
            for obj in model.objects.iter().filter(|o| o.dynamic) {
                for _ in 0..obj.instances {
                    let state = poses.state(frame, instance);
                    let bound = instance_bounds(&obj.mesh, &state);
                    let mut tris = Vec::new();
                    deformed_instance_triangles(
                        &obj.mesh,
                        &state,
                        Deformation::ObjectBound,
                        &model.motion.params.world_box,
                        model.motion.seed,
                        frame,
                        instance,
                        &mut tris,
                    );
                    for t in &tris {
                        for v in t.vertices() {
                            assert!(bound.contains(v, 1e-4));
                        }
                    }
                    instance += 1;
                }
            }
        }

        let swd = demo_model(Deformation::SceneWide);
        let poses = swd.record_poses(2);
        let scene = swd.dynamic_scene(&poses, 1);
        for t in &scene.triangles {
            for v in t.vertices() {
                assert!(swd.motion.params.world_box.contains(v, 1e-4));
            }
        }

        let nd = demo_model(Deformation::None);
        let poses = nd.record_poses(2);
        // ND preserves triangle count modulo degenerate squashes.
        let scene = nd.dynamic_scene(&poses, 0);
        assert_eq!(scene.len() + scene.dropped, 3);
    }

    #[test]
    fn assembly_is_deterministic() {
        let model = demo_model(Deformation::SceneWide);
        let poses = model.record_poses(3);
        let a = model.frame_scene(&poses, 2);
        let b = model.frame_scene(&poses, 2);
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.triangles, b.triangles);
        let c = model.frame_scene(&poses, 1);
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn transform_scales_area() {
        let tri = Triangle::new(Vec3::ZERO, Vec3::X, Vec3::Y);
        let uniform = InstanceState {
            position: Vec3::new(3.0, -2.0, 1.0),
            rotation: Quat::uniform(0.4, 0.2, 0.9),
            scale: [2.0, 2.0, 2.0],
        };
        let t2 = Triangle::new(
            uniform.transform(tri.v0),
            uniform.transform(tri.v1),
            uniform.transform(tri.v2),
        );
        let a0 = TriangleDerived::new(&tri).unwrap().area;
        let a2 = TriangleDerived::new(&t2).unwrap().area;
        assert!((a2 / a0 - 4.0).abs() < 1e-3, "uniform scale area factor {}", a2 / a0);

        // Triangle in the xy-plane: z-scale must not change its area.
        let squash = InstanceState {
            position: Vec3::ZERO,
            rotation: Quat::IDENTITY,
            scale: [1.0, 1.0, 7.0],
        };
        let t3 = Triangle::new(
            squash.transform(tri.v0),
            squash.transform(tri.v1),
            squash.transform(tri.v2),
        );
        assert!((TriangleDerived::new(&t3).unwrap().area - a0).abs() < 1e-6);
    }

    #[test]
    fn soup_generator() {
        let volume = Aabb::from_points([Vec3::new(-4.0, -4.0, -4.0), Vec3::new(4.0, 4.0, 4.0)]);
        let mesh = Mesh::soup(11, 200, volume, 0.5);
        assert!(mesh.triangles.len() >= 199);
        for i in 0..mesh.triangles.len() {
            for v in mesh.triangle(i).vertices() {
                assert!(volume.contains(v, 0.5));
            }
        }
    }
}
