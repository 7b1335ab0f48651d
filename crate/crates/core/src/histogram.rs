//! Per-channel histogram matching on [0, 1] with 256 fixed bins.

use crate::frame::Frame;

pub const BINS: usize = 256;

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * BINS as f32) as usize).min(BINS - 1)
}

fn cdf(frame: &Frame, channel: usize) -> Vec<f64> {
    let mut counts = [0u64; BINS];
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            counts[bin_of(frame.get(y, x, channel))] += 1;
        }
    }
    let total = (frame.height() * frame.width()) as f64;
    let mut acc = 0u64;
    counts
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / total
        })
        .collect()
}

/// Map each channel of `input` so its histogram matches `reference`.
///
/// Values keep their relative position inside the bin they move to, and a
/// bin that maps to itself passes values through untouched, so matching an
/// image against itself is exact.
pub fn match_histogram(input: &Frame, reference: &Frame) -> Frame {
    let mut out = input.clone();
    for c in 0..3 {
        let src_cdf = cdf(input, c);
        let ref_cdf = cdf(reference, c);
        // monotone bin-to-bin transfer matched at bin-midpoint mass
        let mut transfer = [0usize; BINS];
        let mut rb = 0usize;
        for (b, t) in transfer.iter_mut().enumerate() {
            let below = if b == 0 { 0.0 } else { src_cdf[b - 1] };
            let mid = 0.5 * (below + src_cdf[b]);
            while rb + 1 < BINS && ref_cdf[rb] + 1e-12 < mid {
                rb += 1;
            }
            *t = rb;
        }
        for y in 0..input.height() {
            for x in 0..input.width() {
                let v = input.get(y, x, c);
                let b = bin_of(v);
                let target = transfer[b];
                if target != b {
                    let within = (v.clamp(0.0, 1.0) * BINS as f32 - b as f32).clamp(0.0, 1.0);
                    out.set(y, x, c, (target as f32 + within) / BINS as f32);
                }
            }
        }
    }
    out
}

/// Largest CDF displacement beyond one neighboring bin; zero means the two
/// histograms agree up to single-bin transport.
pub fn cdf_transport_excess(a: &Frame, b: &Frame) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..3 {
        let ca = cdf(a, c);
        let cb = cdf(b, c);
        for bin in 0..BINS {
            let lo = if bin == 0 { 0.0 } else { cb[bin - 1] };
            let hi = if bin + 1 < BINS { cb[bin + 1] } else { 1.0 };
            let v = ca[bin];
            let excess = (lo - v).max(v - hi).max(0.0);
            worst = worst.max(excess);
        }
    }
    worst
}

/// Heaviest single bin across channels; the granularity limit of any
/// bin-level transfer (a bin's mass moves as one unit).
pub fn max_bin_mass(frame: &Frame) -> f64 {
    let total = (frame.height() * frame.width()) as f64;
    let mut worst = 0u64;
    for c in 0..3 {
        let mut counts = [0u64; BINS];
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                counts[bin_of(frame.get(y, x, c))] += 1;
            }
        }
        worst = worst.max(*counts.iter().max().unwrap());
    }
    worst as f64 / total
}
