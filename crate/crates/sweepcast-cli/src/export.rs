//! Point-cloud export: ASCII PLY or CSV, one record per hit ray ordered by
//! global ray index, misses omitted. Output is byte-deterministic.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use sweepcast::sensor::RayRecord;
use sweepcast::{SensorSet, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Csv,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<CloudFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("csv") => Ok(CloudFormat::Csv),
            other => bail!("unsupported point-cloud extension {other:?} (use .ply or .csv)"),
        }
    }
}

/// World-space points of every hit ray: sensor origin plus direction
/// scaled by distance.
pub fn hit_points(records: &[RayRecord], set: &SensorSet) -> Vec<Vec3> {
    let mut points = Vec::new();
    for (config, _) in set.iter() {
        for local in 0..config.ray_count() {
            let r = &records[config.ray_offset + local];
            if r.distance.is_finite() {
                points.push(config.origin + r.direction * r.distance);
            }
        }
    }
    points
}

pub fn write_cloud(
    w: &mut impl Write,
    records: &[RayRecord],
    set: &SensorSet,
    format: CloudFormat,
) -> Result<()> {
    let points = hit_points(records, set);
    match format {
        CloudFormat::PlyAscii => {
            writeln!(w, "ply")?;
            writeln!(w, "format ascii 1.0")?;
            writeln!(w, "element vertex {}", points.len())?;
            writeln!(w, "property float x")?;
            writeln!(w, "property float y")?;
            writeln!(w, "property float z")?;
            writeln!(w, "end_header")?;
            for p in &points {
                writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
        CloudFormat::Csv => {
            writeln!(w, "x,y,z")?;
            for p in &points {
                writeln!(w, "{},{},{}", p.x, p.y, p.z)?;
            }
        }
    }
    Ok(())
}

pub fn export_to_file(path: &Path, records: &[RayRecord], set: &SensorSet) -> Result<()> {
    let format = CloudFormat::from_path(path)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    write_cloud(&mut file, records, set, format)
}
