//! Optical flow estimation, forward-backward occlusion masking, and
//! flow-based warping of frames and latents.
//!
//! Flow fields live on the grid of the frame being synthesized and map its
//! coordinates back into the reference frame: warping samples the reference
//! at `p + flow(p)` (backward warping with bilinear lookup, clamp-to-edge).
//!
//! Occlusion masks store `1` where a pixel is occluded (the forward and
//! backward fields disagree) and `0` where it is visible. Consistency
//! lookups that leave the image are treated as occluded.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::latent::Latent;

pub const OCCLUDED: u8 = 1;
pub const VISIBLE: u8 = 0;

/// Relative slack added to the consistency threshold, scaled by the local
/// flow magnitudes.
pub const CONSISTENCY_REL_WEIGHT: f32 = 0.01;

const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel displacement field `(dx, dy)` on the target frame's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    // (height, width, 2), last axis = (dx, dy)
    data: Array3<f32>,
}

impl FlowField {
    pub fn new(data: Array3<f32>) -> Self {
        debug_assert_eq!(data.shape()[2], 2);
        FlowField { data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            data: Array3::zeros((height, width, 2)),
        }
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let mut f = FlowField::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                f.data[[y, x, 0]] = dx;
                f.data[[y, x, 1]] = dy;
            }
        }
        f
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        (self.data[[y, x, 0]], self.data[[y, x, 1]])
    }

    pub fn set(&mut self, y: usize, x: usize, dx: f32, dy: f32) {
        self.data[[y, x, 0]] = dx;
        self.data[[y, x, 1]] = dy;
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// Bilinear lookup at a real-valued position; clamps to the border.
    pub fn sample(&self, x: f32, y: f32) -> (f32, f32) {
        let dx = bilinear_plane(&self.data, x, y, 0);
        let dy = bilinear_plane(&self.data, x, y, 1);
        (dx, dy)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binary map of occluded pixels (1 = occluded, 0 = visible/consistent).
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    data: Array2<u8>,
}

impl OcclusionMask {
    pub fn new(data: Array2<u8>) -> Self {
        OcclusionMask { data }
    }

    pub fn all_visible(height: usize, width: usize) -> Self {
        OcclusionMask {
            data: Array2::from_elem((height, width), VISIBLE),
        }
    }

    pub fn all_occluded(height: usize, width: usize) -> Self {
        OcclusionMask {
            data: Array2::from_elem((height, width), OCCLUDED),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[[y, x]]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[[y, x]] = v;
    }

    pub fn is_occluded(&self, y: usize, x: usize) -> bool {
        self.data[[y, x]] == OCCLUDED
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn occluded_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == OCCLUDED).count()
    }

    /// Pixels occluded in both masks.
    pub fn intersect(&self, other: &OcclusionMask) -> OcclusionMask {
        debug_assert_eq!(self.data.shape(), other.data.shape());
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(other.data.iter()) {
            *o = if *o == OCCLUDED && *b == OCCLUDED {
                OCCLUDED
            } else {
                VISIBLE
            };
        }
        out
    }
}

/// A forward/backward flow pair between two frames plus the occlusion mask
/// derived from their consistency, all on the target frame's grid (forward)
/// and the reference frame's grid (backward).
#[derive(Debug, Clone)]
pub struct FlowPair {
    /// Maps target-frame coordinates into the reference frame.
    pub forward: FlowField,
    /// Maps reference-frame coordinates into the target frame.
    pub backward: FlowField,
    /// Occlusion on the target grid.
    pub mask: OcclusionMask,
    pub consistency_threshold: f32,
}

impl FlowPair {
    pub fn from_fields(
        forward: FlowField,
        backward: FlowField,
        consistency_threshold: f32,
    ) -> Result<Self> {
        let mask = occlusion_mask(&forward, &backward, consistency_threshold)?;
        Ok(FlowPair {
            forward,
            backward,
            mask,
            consistency_threshold,
        })
    }

    /// Estimate both directions between two frames and derive the mask.
    pub fn estimate(
        reference: &Frame,
        target: &Frame,
        params: &FlowParams,
        consistency_threshold: f32,
    ) -> Result<Self> {
        let forward = estimate_flow_with(reference, target, params)?;
        let backward = estimate_flow_with(target, reference, params)?;
        Self::from_fields(forward, backward, consistency_threshold)
    }

    /// Identity pair for a frame mapped onto itself.
    pub fn identity(height: usize, width: usize, consistency_threshold: f32) -> Self {
        FlowPair {
            forward: FlowField::zeros(height, width),
            backward: FlowField::zeros(height, width),
            mask: OcclusionMask::all_visible(height, width),
            consistency_threshold,
        }
    }

    /// Chain `self: a->b` with `next: b->c` into `a->c`, accumulating
    /// occlusion along the way: a chained pixel stays visible only if every
    /// link is visible at its looked-up position.
    pub fn compose(&self, next: &FlowPair) -> Result<FlowPair> {
        if self.forward.height() != next.forward.height()
            || self.forward.width() != next.forward.width()
        {
            return Err(Error::dim(
                "flow composition",
                format!("{}x{}", self.forward.height(), self.forward.width()),
                format!("{}x{}", next.forward.height(), next.forward.width()),
            ));
        }
        let (h, w) = (next.forward.height(), next.forward.width());
        let mut forward = FlowField::zeros(h, w);
        let mut mask = OcclusionMask::all_occluded(h, w);
        for y in 0..h {
            for x in 0..w {
                let (bx, by) = next.forward.get(y, x);
                let (px, py) = (x as f32 + bx, y as f32 + by);
                let (ax, ay) = self.forward.sample(px, py);
                forward.set(y, x, bx + ax, by + ay);
                let in_bounds =
                    px >= 0.0 && py >= 0.0 && px <= (w - 1) as f32 && py <= (h - 1) as f32;
                if in_bounds
                    && !next.mask.is_occluded(y, x)
                    && !sample_mask_occluded(&self.mask, px, py)
                {
                    mask.set(y, x, VISIBLE);
                }
            }
        }
        let mut backward = FlowField::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (bx, by) = self.backward.get(y, x);
                let (px, py) = (x as f32 + bx, y as f32 + by);
                let (ax, ay) = next.backward.sample(px, py);
                backward.set(y, x, bx + ax, by + ay);
            }
        }
        Ok(FlowPair {
            forward,
            backward,
            mask,
            consistency_threshold: self.consistency_threshold,
        })
    }
}

/// Bilinear sample of a float-valued occlusion mask; above one half counts
/// as occluded, as do out-of-bounds lookups.
pub fn sample_mask_occluded(mask: &OcclusionMask, x: f32, y: f32) -> bool {
    let (h, w) = (mask.height(), mask.width());
    if x < 0.0 || y < 0.0 || x > (w - 1) as f32 || y > (h - 1) as f32 {
        return true;
    }
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let v00 = mask.get(y0, x0) as f32;
    let v10 = mask.get(y0, x1) as f32;
    let v01 = mask.get(y1, x0) as f32;
    let v11 = mask.get(y1, x1) as f32;
    let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
    v > 0.5
}

fn bilinear_plane(data: &Array3<f32>, x: f32, y: f32, c: usize) -> f32 {
    let h = data.shape()[0];
    let w = data.shape()[1];
    let xc = x.clamp(0.0, (w - 1) as f32);
    let yc = y.clamp(0.0, (h - 1) as f32);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let fx = xc - x0 as f32;
    let fy = yc - y0 as f32;
    // integer fast path keeps exact values exact
    if fx == 0.0 && fy == 0.0 {
        return data[[y0, x0, c]];
    }
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v00 = data[[y0, x0, c]];
    let v10 = data[[y0, x1, c]];
    let v01 = data[[y1, x0, c]];
    let v11 = data[[y1, x1, c]];
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
}

/// Parameters for the coarse-to-fine variational estimator.
#[derive(Debug, Clone)]
pub struct FlowParams {
    pub levels: usize,
    /// Relaxation sweeps per warp refinement.
    pub iterations: usize,
    /// Smoothness weight; images are in [0, 1].
    pub alpha: f32,
    /// Warp refinements per pyramid level.
    pub warps: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 4,
            iterations: 80,
            alpha: 0.08,
            warps: 3,
        }
    }
}

impl FlowParams {
    pub fn new(levels: usize, iterations: usize) -> Self {
        FlowParams {
            levels,
            iterations,
            ..Default::default()
        }
    }
}

/// Estimate flow mapping `target` coordinates back into `reference` with a
/// coarse-to-fine variational scheme (quadratic data term, first-order
/// smoothness, Jacobi relaxation). Deterministic for fixed inputs.
pub fn estimate_flow(
    reference: &Frame,
    target: &Frame,
    levels: usize,
    iterations: usize,
) -> Result<FlowField> {
    estimate_flow_with(reference, target, &FlowParams::new(levels, iterations))
}

pub fn estimate_flow_with(
    reference: &Frame,
    target: &Frame,
    params: &FlowParams,
) -> Result<FlowField> {
    reference.require_same_size(target, "estimate_flow")?;
    let (h, w) = (reference.height(), reference.width());
    if h < 16 || w < 16 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            levels: params.levels,
        });
    }
    if params.levels == 0 {
        return Err(Error::InvalidParameter("levels must be >= 1".into()));
    }
    if (h.min(w) >> (params.levels - 1)) < 8 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            levels: params.levels,
        });
    }

    let ref_pyr = pyramid(&reference.to_luma_plane(), h, w, params.levels);
    let tgt_pyr = pyramid(&target.to_luma_plane(), h, w, params.levels);

    let (ch, cw) = (ref_pyr.last().unwrap().1, ref_pyr.last().unwrap().2);
    let mut u = vec![0.0f32; ch * cw];
    let mut v = vec![0.0f32; ch * cw];

    for level in (0..params.levels).rev() {
        let (ref_img, lh, lw) = &ref_pyr[level];
        let (tgt_img, _, _) = &tgt_pyr[level];
        if level != params.levels - 1 {
            let (ph, pw) = (ref_pyr[level + 1].1, ref_pyr[level + 1].2);
            u = upsample_flow_plane(&u, ph, pw, *lh, *lw);
            v = upsample_flow_plane(&v, ph, pw, *lh, *lw);
        }
        for _ in 0..params.warps {
            refine_level(
                ref_img,
                tgt_img,
                *lh,
                *lw,
                &mut u,
                &mut v,
                params.alpha,
                params.iterations / params.warps.max(1),
            );
        }
    }

    let mut out = FlowField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, u[y * w + x], v[y * w + x]);
        }
    }
    Ok(out)
}

/// One incremental refinement: warp the reference toward the target under
/// the current flow, linearize, and relax the increment with Jacobi sweeps
/// (order-independent, so results do not depend on traversal).
#[allow(clippy::too_many_arguments)]
fn refine_level(
    reference: &[f32],
    target: &[f32],
    h: usize,
    w: usize,
    u: &mut [f32],
    v: &mut [f32],
    alpha: f32,
    iterations: usize,
) {
    let idx = |y: usize, x: usize| y * w + x;
    let sample = |img: &[f32], x: f32, y: f32| -> f32 {
        let xc = x.clamp(0.0, (w - 1) as f32);
        let yc = y.clamp(0.0, (h - 1) as f32);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let fx = xc - x0 as f32;
        let fy = yc - y0 as f32;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        (1.0 - fy) * ((1.0 - fx) * img[idx(y0, x0)] + fx * img[idx(y0, x1)])
            + fy * ((1.0 - fx) * img[idx(y1, x0)] + fx * img[idx(y1, x1)])
    };

    // warped reference and linearized data term coefficients
    let mut ix = vec![0.0f32; h * w];
    let mut iy = vec![0.0f32; h * w];
    let mut it = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = idx(y, x);
            let (wx, wy) = (x as f32 + u[i], y as f32 + v[i]);
            let warped = sample(reference, wx, wy);
            ix[i] = 0.5 * (sample(reference, wx + 1.0, wy) - sample(reference, wx - 1.0, wy));
            iy[i] = 0.5 * (sample(reference, wx, wy + 1.0) - sample(reference, wx, wy - 1.0));
            it[i] = warped - target[i];
        }
    }

    let a2 = alpha * alpha;
    let mut du = vec![0.0f32; h * w];
    let mut dv = vec![0.0f32; h * w];
    let mut du_next = vec![0.0f32; h * w];
    let mut dv_next = vec![0.0f32; h * w];
    for _ in 0..iterations.max(1) {
        for y in 0..h {
            for x in 0..w {
                let i = idx(y, x);
                let up = du[idx(y.saturating_sub(1), x)];
                let down = du[idx((y + 1).min(h - 1), x)];
                let left = du[idx(y, x.saturating_sub(1))];
                let right = du[idx(y, (x + 1).min(w - 1))];
                let du_bar = 0.25 * (up + down + left + right);
                let vp = dv[idx(y.saturating_sub(1), x)];
                let vd = dv[idx((y + 1).min(h - 1), x)];
                let vl = dv[idx(y, x.saturating_sub(1))];
                let vr = dv[idx(y, (x + 1).min(w - 1))];
                let dv_bar = 0.25 * (vp + vd + vl + vr);
                let t = (ix[i] * du_bar + iy[i] * dv_bar + it[i])
                    / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                du_next[i] = du_bar - ix[i] * t;
                dv_next[i] = dv_bar - iy[i] * t;
            }
        }
        std::mem::swap(&mut du, &mut du_next);
        std::mem::swap(&mut dv, &mut dv_next);
    }
    for i in 0..h * w {
        u[i] += du[i];
        v[i] += dv[i];
    }
}

/// Gaussian-ish pyramid: 2x2 area averaging after a small binomial blur.
fn pyramid(plane: &[f32], h: usize, w: usize, levels: usize) -> Vec<(Vec<f32>, usize, usize)> {
    let mut out = vec![(plane.to_vec(), h, w)];
    for _ in 1..levels {
        let (prev, ph, pw) = out.last().unwrap();
        let blurred = binomial_blur(prev, *ph, *pw);
        let nh = (ph / 2).max(1);
        let nw = (pw / 2).max(1);
        let mut next = vec![0.0f32; nh * nw];
        for y in 0..nh {
            for x in 0..nw {
                let y0 = (2 * y).min(ph - 1);
                let y1 = (2 * y + 1).min(ph - 1);
                let x0 = (2 * x).min(pw - 1);
                let x1 = (2 * x + 1).min(pw - 1);
                next[y * nw + x] = 0.25
                    * (blurred[y0 * pw + x0]
                        + blurred[y0 * pw + x1]
                        + blurred[y1 * pw + x0]
                        + blurred[y1 * pw + x1]);
            }
        }
        out.push((next, nh, nw));
    }
    out
}

fn binomial_blur(plane: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut tmp = vec![0.0f32; h * w];
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = plane[y * w + x.saturating_sub(1)];
            let c = plane[y * w + x];
            let r = plane[y * w + (x + 1).min(w - 1)];
            tmp[y * w + x] = 0.25 * l + 0.5 * c + 0.25 * r;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let u = tmp[y.saturating_sub(1) * w + x];
            let c = tmp[y * w + x];
            let d = tmp[(y + 1).min(h - 1) * w + x];
            out[y * w + x] = 0.25 * u + 0.5 * c + 0.25 * d;
        }
    }
    out
}

fn upsample_flow_plane(
    plane: &[f32],
    ph: usize,
    pw: usize,
    nh: usize,
    nw: usize,
) -> Vec<f32> {
    let sx = pw as f32 / nw as f32;
    let sy = ph as f32 / nh as f32;
    let scale = 1.0 / sx; // displacement grows with resolution
    let mut out = vec![0.0f32; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            let px = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (pw - 1) as f32);
            let py = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (ph - 1) as f32);
            let x0 = px.floor() as usize;
            let y0 = py.floor() as usize;
            let fx = px - x0 as f32;
            let fy = py - y0 as f32;
            let x1 = (x0 + 1).min(pw - 1);
            let y1 = (y0 + 1).min(ph - 1);
            let v = (1.0 - fy)
                * ((1.0 - fx) * plane[y0 * pw + x0] + fx * plane[y0 * pw + x1])
                + fy * ((1.0 - fx) * plane[y1 * pw + x0] + fx * plane[y1 * pw + x1]);
            out[y * nw + x] = v * scale;
        }
    }
    out
}

/// Forward-backward consistency check. A pixel is marked occluded when the
/// round trip `forward(p) + backward(p + forward(p))` exceeds the threshold
/// plus a small slack proportional to the local flow magnitudes, or when the
/// lookup leaves the image.
pub fn occlusion_mask(
    forward: &FlowField,
    backward: &FlowField,
    threshold: f32,
) -> Result<OcclusionMask> {
    if forward.height() != backward.height() || forward.width() != backward.width() {
        return Err(Error::dim(
            "occlusion_mask",
            format!("{}x{}", forward.height(), forward.width()),
            format!("{}x{}", backward.height(), backward.width()),
        ));
    }
    if threshold <= 0.0 {
        return Err(Error::InvalidParameter(
            "consistency threshold must be > 0".into(),
        ));
    }
    let (h, w) = (forward.height(), forward.width());
    let mut mask = OcclusionMask::all_visible(h, w);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = forward.get(y, x);
            let (px, py) = (x as f32 + fx, y as f32 + fy);
            if px < 0.0 || py < 0.0 || px > (w - 1) as f32 || py > (h - 1) as f32 {
                mask.set(y, x, OCCLUDED);
                continue;
            }
            let (bx, by) = backward.sample(px, py);
            let residual = ((fx + bx) * (fx + bx) + (fy + by) * (fy + by)).sqrt();
            let f_mag = (fx * fx + fy * fy).sqrt();
            let b_mag = (bx * bx + by * by).sqrt();
            if residual > threshold + CONSISTENCY_REL_WEIGHT * (f_mag + b_mag) {
                mask.set(y, x, OCCLUDED);
            }
        }
    }
    Ok(mask)
}

/// Backward-warp a frame: `out(p) = image(p + flow(p))` with bilinear
/// sampling and clamp-to-edge.
pub fn warp_frame(image: &Frame, flow: &FlowField) -> Result<Frame> {
    if image.height() != flow.height() || image.width() != flow.width() {
        return Err(Error::dim(
            "warp",
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", flow.height(), flow.width()),
        ));
    }
    let (h, w) = (image.height(), image.width());
    let mut out = Frame::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            let (sx, sy) = (x as f32 + dx, y as f32 + dy);
            for c in 0..3 {
                out.set(y, x, c, bilinear_plane(image.data(), sx, sy, c));
            }
        }
    }
    Ok(out)
}

/// Backward-warp a latent with a flow already at latent resolution.
pub fn warp_latent(latent: &Latent, flow: &FlowField) -> Result<Latent> {
    if latent.height() != flow.height() || latent.width() != flow.width() {
        return Err(Error::dim(
            "warp",
            format!("{}x{}", latent.height(), latent.width()),
            format!("{}x{}", flow.height(), flow.width()),
        ));
    }
    let (ch, h, w) = (latent.channels(), latent.height(), latent.width());
    let mut out = Latent::zeros(ch, h, w);
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = flow.get(y, x);
                let (sx, sy) = (x as f32 + dx, y as f32 + dy);
                out.set(c, y, x, bilinear_channel_first(latent, c, sx, sy));
            }
        }
    }
    Ok(out)
}

fn bilinear_channel_first(latent: &Latent, c: usize, x: f32, y: f32) -> f32 {
    let (h, w) = (latent.height(), latent.width());
    let xc = x.clamp(0.0, (w - 1) as f32);
    let yc = y.clamp(0.0, (h - 1) as f32);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let fx = xc - x0 as f32;
    let fy = yc - y0 as f32;
    if fx == 0.0 && fy == 0.0 {
        return latent.get(c, y0, x0);
    }
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v00 = latent.get(c, y0, x0);
    let v10 = latent.get(c, y0, x1);
    let v01 = latent.get(c, y1, x0);
    let v11 = latent.get(c, y1, x1);
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
}

/// Reduce flow and mask to a coarser grid so they can guide latent-space
/// operations: the flow is area-averaged with displacements rescaled by
/// `1/factor`; a coarse cell stays visible only if at least half of its
/// footprint is visible.
pub fn downsample_guidance(
    flow: &FlowField,
    mask: &OcclusionMask,
    factor: usize,
) -> Result<(FlowField, OcclusionMask)> {
    if factor == 0 {
        return Err(Error::InvalidParameter("factor must be >= 1".into()));
    }
    let (h, w) = (flow.height(), flow.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(
            "downsample_guidance",
            format!("dimensions divisible by {factor}"),
            format!("{h}x{w}"),
        ));
    }
    if mask.height() != h || mask.width() != w {
        return Err(Error::dim(
            "downsample_guidance",
            format!("{h}x{w}"),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    if factor == 1 {
        return Ok((flow.clone(), mask.clone()));
    }
    let (nh, nw) = (h / factor, w / factor);
    let mut out_flow = FlowField::zeros(nh, nw);
    let inv = 1.0 / (factor * factor) as f32;
    for y in 0..nh {
        for x in 0..nw {
            let mut sx = 0.0f32;
            let mut sy = 0.0f32;
            for by in 0..factor {
                for bx in 0..factor {
                    let (dx, dy) = flow.get(y * factor + by, x * factor + bx);
                    sx += dx;
                    sy += dy;
                }
            }
            out_flow.set(y, x, sx * inv / factor as f32, sy * inv / factor as f32);
        }
    }
    Ok((out_flow, downsample_mask(mask, factor)?))
}

/// Footprint rule on its own: a coarse cell stays visible only if at least
/// half of its fine pixels are visible.
pub fn downsample_mask(mask: &OcclusionMask, factor: usize) -> Result<OcclusionMask> {
    if factor == 0 {
        return Err(Error::InvalidParameter("factor must be >= 1".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(
            "downsample_mask",
            format!("dimensions divisible by {factor}"),
            format!("{h}x{w}"),
        ));
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (nh, nw) = (h / factor, w / factor);
    let mut out = OcclusionMask::all_visible(nh, nw);
    for y in 0..nh {
        for x in 0..nw {
            let mut visible = 0usize;
            for by in 0..factor {
                for bx in 0..factor {
                    if !mask.is_occluded(y * factor + by, x * factor + bx) {
                        visible += 1;
                    }
                }
            }
            if visible * 2 < factor * factor {
                out.set(y, x, OCCLUDED);
            }
        }
    }
    Ok(out)
}

/// Read a Middlebury `.flo` file: float magic 202021.25 ("PIEH"), i32 width,
/// i32 height, then interleaved (u, v) little-endian f32, row-major.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let mut file = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    if buf.len() < 12 {
        return Err(Error::FloFormat {
            path: path.to_path_buf(),
            reason: "file shorter than header".into(),
        });
    }
    let magic = f32::from_le_bytes(buf[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::FloFormat {
            path: path.to_path_buf(),
            reason: format!("bad magic {magic}"),
        });
    }
    let width = i32::from_le_bytes(buf[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(buf[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width > 32768 || height > 32768 {
        return Err(Error::FloFormat {
            path: path.to_path_buf(),
            reason: format!("implausible dimensions {width}x{height}"),
        });
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 12 + w * h * 2 * 4;
    if buf.len() != expected {
        return Err(Error::FloFormat {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", buf.len()),
        });
    }
    let mut flow = FlowField::zeros(h, w);
    let mut off = 12;
    for y in 0..h {
        for x in 0..w {
            let u = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
            let v = f32::from_le_bytes(buf[off + 4..off + 8].try_into().unwrap());
            flow.set(y, x, u, v);
            off += 8;
        }
    }
    Ok(flow)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + flow.width() * flow.height() * 8);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    buf.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let (u, v) = flow.get(y, x);
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}
