//! Frame statistics: accumulation during the run and the structured-text
//! report. Floats are written in shortest round-trip form so the summary
//! can be recomputed exactly from the emitted per-frame series.

use std::fmt::Write as _;

#[cfg(test)]
use anyhow::{bail, Context, Result};

use sweepcast::reference::MatchReport;
use sweepcast::CastCounters;

#[derive(Debug, Clone)]
pub struct FrameRow {
    pub frame: u32,
    pub ms: f64,
    pub triangles: usize,
    pub digest: u64,
    pub counters: CastCounters,
}

#[derive(Debug, Clone)]
pub struct VerifyRow {
    pub frame: u32,
    pub report: MatchReport,
}

#[derive(Debug, Default, Clone)]
pub struct RunStats {
    pub frames: Vec<FrameRow>,
    pub verifies: Vec<VerifyRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_ms: f64,
    pub within_20pct: f64,
    pub below_mean: f64,
}

/// Mean frame time plus the pacing fractions: frames within +-20% of the
/// mean, and frames below it.
pub fn summarize(ms: &[f64]) -> Summary {
    if ms.is_empty() {
        return Summary { mean_ms: 0.0, within_20pct: 0.0, below_mean: 0.0 };
    }
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let within = ms.iter().filter(|&&t| (t - mean).abs() <= 0.2 * mean).count();
    let below = ms.iter().filter(|&&t| t < mean).count();
    Summary {
        mean_ms: mean,
        within_20pct: within as f64 / ms.len() as f64,
        below_mean: below as f64 / ms.len() as f64,
    }
}

pub struct Header<'a> {
    pub backend: &'a str,
    pub seed: u64,
    pub motion: &'a str,
    pub deformation: &'a str,
    pub threads: usize,
}

pub fn render(header: &Header, stats: &RunStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# sweepcast stats v1");
    let _ = writeln!(out, "backend {}", header.backend);
    let _ = writeln!(out, "seed {}", header.seed);
    let _ = writeln!(out, "motion {}", header.motion);
    let _ = writeln!(out, "deformation {}", header.deformation);
    let _ = writeln!(out, "threads {}", header.threads);
    let _ = writeln!(
        out,
        "columns frame ms triangles digest inline_pairs deferred_pairs deferred_entries \
         intersection_tests rejected_backface rejected_area rejected_range rejected_no_channel"
    );
    for row in &stats.frames {
        let c = &row.counters;
        let _ = writeln!(
            out,
            "frame {} {} {} {:016x} {} {} {} {} {} {} {} {}",
            row.frame,
            row.ms,
            row.triangles,
            row.digest,
            c.inline_pairs,
            c.deferred_pairs,
            c.deferred_entries,
            c.intersection_tests(),
            c.rejected_backface,
            c.rejected_area,
            c.rejected_range,
            c.rejected_no_channel,
        );
    }
    for v in &stats.verifies {
        let r = &v.report;
        let _ = writeln!(
            out,
            "verify {} rays {} reference_hits {} matched_hits {} fraction {} miss_vs_hit {} hit_vs_miss {} distance_mismatch {}",
            v.frame,
            r.rays_compared,
            r.reference_hits,
            r.matched_hits,
            r.match_fraction,
            r.miss_vs_hit,
            r.hit_vs_miss,
            r.distance_mismatch,
        );
    }
    let summary = summarize(&stats.frames.iter().map(|f| f.ms).collect::<Vec<_>>());
    let _ = writeln!(out, "summary mean_ms {}", summary.mean_ms);
    let _ = writeln!(out, "summary within_20pct {}", summary.within_20pct);
    let _ = writeln!(out, "summary below_mean {}", summary.below_mean);
    out
}

/// Parsed-back view of a stats file, used by the self-check tests and the
/// cross-backend digest comparison.
#[cfg(test)]
#[derive(Debug, Default)]
pub struct ParsedStats {
    pub frame_ms: Vec<f64>,
    pub digests: Vec<u64>,
    pub summary_mean: f64,
    pub summary_within: f64,
    pub summary_below: f64,
    pub verify_fractions: Vec<f64>,
}

#[cfg(test)]
pub fn parse(text: &str) -> Result<ParsedStats> {
    let mut parsed = ParsedStats::default();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first() {
            Some(&"frame") => {
                if fields.len() < 5 {
                    bail!("short frame row: {line}");
                }
                parsed.frame_ms.push(fields[2].parse().context("frame ms")?);
                parsed
                    .digests
                    .push(u64::from_str_radix(fields[4], 16).context("frame digest")?);
            }
            Some(&"verify") => {
                let idx = fields
                    .iter()
                    .position(|&f| f == "fraction")
                    .context("verify row without fraction")?;
                parsed.verify_fractions.push(fields[idx + 1].parse().context("fraction")?);
            }
            Some(&"summary") => match fields.get(1) {
                Some(&"mean_ms") => parsed.summary_mean = fields[2].parse()?,
                Some(&"within_20pct") => parsed.summary_within = fields[2].parse()?,
                Some(&"below_mean") => parsed.summary_below = fields[2].parse()?,
                _ => bail!("unknown summary field: {line}"),
            },
            _ => {}
        }
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trips_through_text() {
        let stats = RunStats {
            frames: (0..7)
                .map(|i| FrameRow {
                    frame: i,
                    ms: 10.0 + (i as f64) * 1.7 + 0.123456789,
                    triangles: 100,
                    digest: 0xdead_beef ^ i as u64,
                    counters: CastCounters::default(),
                })
                .collect(),
            verifies: vec![],
        };
        let text = render(
            &Header { backend: "sweep", seed: 1, motion: "f.i", deformation: "nd", threads: 0 },
            &stats,
        );
        let parsed = parse(&text).unwrap();
        let recomputed = summarize(&parsed.frame_ms);
        assert_eq!(recomputed.mean_ms, parsed.summary_mean);
        assert_eq!(recomputed.within_20pct, parsed.summary_within);
        assert_eq!(recomputed.below_mean, parsed.summary_below);
        assert_eq!(parsed.digests.len(), 7);
    }

    #[test]
    fn pacing_fractions() {
        let s = summarize(&[10.0, 10.0, 10.0, 22.0]);
        // mean = 13; within 20% -> |t-13| <= 2.6 -> none of 10 or 22.
        assert_eq!(s.mean_ms, 13.0);
        assert_eq!(s.within_20pct, 0.0);
        assert_eq!(s.below_mean, 0.75);

        let t = summarize(&[10.0, 11.0, 12.0]);
        assert_eq!(t.within_20pct, 1.0);
    }
}
