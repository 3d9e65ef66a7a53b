//! Emitter-centric ray casting for spinning-LiDAR simulation.
//!
//! Instead of asking what each ray hits, every triangle predicts which
//! sensor channels and rays can possibly reach it. Each vertical channel of
//! a spinning sensor sweeps a cone (a horizontal plane at zero elevation),
//! so one closed-form surface/triangle test per channel replaces thousands
//! of ray tests. Triangles with a small predicted index span are resolved
//! inline in an early pass; large ones are deferred to a late pass that
//! computes exact per-channel spans. No acceleration structure is built,
//! which keeps per-frame cost flat no matter how much geometry moved.
//!
//! Modules:
//! - [`geometry`]: vector math, angular indexing, sweep-surface/triangle
//!   intersection, Möller–Trumbore, closest-point distance.
//! - [`sensor`]: sensor configuration, ray grids, order-preserving distance
//!   encoding, the shared hit buffer, and the angular noise model.
//! - [`pipeline`]: the two-pass caster and the hybrid static/dynamic merge.
//! - [`scene`]: OBJ ingestion, instance motion and deformation streams,
//!   pose-stream recording for cross-backend replay.
//! - [`reference`]: brute-force and BVH ground-truth casters plus the
//!   hit-buffer comparator.

pub mod geometry;
pub mod pipeline;
pub mod reference;
pub mod scene;
pub mod sensor;

mod stream;

pub use geometry::{Facing, OrientedFrame, Triangle, TriangleDerived, Vec3};
pub use pipeline::{CastCounters, Thresholds};
pub use reference::{compare_hit_buffers, MatchReport, ReferenceBvh};
pub use scene::PreparedScene;
pub use sensor::{HitBuffer, SensorConfig, SensorSet};
