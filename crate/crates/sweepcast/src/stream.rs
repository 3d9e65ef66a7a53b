//! Seedable counter-based sample streams.
//!
//! Every random quantity in the artifact is addressed, not drawn: a sample
//! is a pure function of (seed, tag, indices), so replay is exact, order
//! independent, and safe to evaluate from any thread.

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Hashes an address tuple into one 64-bit word.
pub(crate) fn key(parts: &[u64]) -> u64 {
    let mut acc = 0x243f6a8885a308d3u64;
    for &p in parts {
        acc = mix64(acc ^ p);
    }
    acc
}

/// Uniform sample in [0, 1).
pub(crate) fn unit_f64(parts: &[u64]) -> f64 {
    (key(parts) >> 11) as f64 / (1u64 << 53) as f64
}

/// Uniform sample in [lo, hi).
pub(crate) fn uniform(parts: &[u64], lo: f64, hi: f64) -> f64 {
    lo + unit_f64(parts) * (hi - lo)
}

/// Log-uniform sample in [lo, hi), lo > 0.
pub(crate) fn log_uniform(parts: &[u64], lo: f64, hi: f64) -> f64 {
    (unit_f64(parts) * (hi.ln() - lo.ln()) + lo.ln()).exp()
}

/// Standard normal via Box-Muller on two decorrelated uniforms.
pub(crate) fn gaussian(parts: &[u64]) -> f64 {
    let k = key(parts);
    let u1 = ((mix64(k) >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (mix64(k ^ 0x5851f42d4c957f2d) >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
