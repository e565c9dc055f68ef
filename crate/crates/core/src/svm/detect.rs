//! Multi-scale sliding-window detection over an already enlarged image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{group_detections, DetectionBox, GroupParams, MapSource, SvrModel};
use crate::error::{Error, Result};
use crate::hog::{BlockGrid, GradientField, HogLayout};
use crate::raster::{resize, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    /// Window growth between pyramid levels.
    pub scale_factor: f64,
    pub hit_threshold: f64,
    /// Window step on each pyramid level, in pixels; a multiple of the block stride.
    pub stride: usize,
    /// Enlargement the caller applied; boxes are divided by it on output.
    pub enlargement: usize,
    /// Optional cap on the number of downscaled levels after the base.
    pub max_levels: Option<usize>,
    pub group: GroupParams,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.05,
            hit_threshold: 0.5,
            stride: 8,
            enlargement: 8,
            max_levels: None,
            group: GroupParams::default(),
        }
    }
}

impl DetectParams {
    pub fn validate(&self, layout: &HogLayout) -> Result<()> {
        if !(self.scale_factor > 1.0) || !self.scale_factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale factor must exceed 1, got {}",
                self.scale_factor
            )));
        }
        if self.stride == 0 || !self.stride.is_multiple_of(layout.block_stride) {
            return Err(Error::InvalidParameter(format!(
                "detection stride {} must be a positive multiple of the block stride {}",
                self.stride, layout.block_stride
            )));
        }
        if self.enlargement == 0 {
            return Err(Error::InvalidParameter("enlargement must be at least 1".into()));
        }
        if !self.hit_threshold.is_finite() {
            return Err(Error::InvalidParameter("hit threshold must be finite".into()));
        }
        self.group.validate()
    }
}

/// Number of downscaled levels below the base for which the window still
/// fits: floor(ln(min(W/ww, H/wh)) / ln(scale_factor)).
pub fn pyramid_depth(width: usize, height: usize, layout: &HogLayout, scale_factor: f64) -> usize {
    let ratio = (width as f64 / layout.window_width as f64).min(height as f64 / layout.window_height as f64);
    if ratio < 1.0 {
        return 0;
    }
    // Nudge for ratios that are exact powers of the scale factor.
    ((ratio.ln() / scale_factor.ln()) + 1e-9).floor() as usize
}

/// Window top-left blocks worth scoring on one level, with the blocks and
/// stride cells they read. `None` scores everything.
struct LevelGate {
    windows: Vec<bool>,
    blocks: Vec<bool>,
    cells: Vec<bool>,
}

/// Gate of the windows whose footprint, grown by `margin` original pixels,
/// holds one of `points` (original coordinates).
#[allow(clippy::too_many_arguments)]
fn level_gate(
    lw: usize,
    lh: usize,
    factors: (f64, f64),
    enl: f64,
    layout: &HogLayout,
    step: usize,
    points: &[(f64, f64)],
    margin: f64,
) -> Option<LevelGate> {
    let (bs, st) = (layout.block_size(), layout.block_stride);
    let gbx = (lw - bs) / st + 1;
    let gby = (lh - bs) / st + 1;
    let (nbx, nby) = (layout.blocks_x(), layout.blocks_y());
    if gbx < nbx || gby < nby {
        return None;
    }
    let (nwx, nwy) = (gbx - nbx + 1, gby - nby + 1);
    let (sx, sy) = (enl / factors.0, enl / factors.1);
    let (ww, wh) = (layout.window_width as f64, layout.window_height as f64);
    let range = |p: f64, m: f64, win: f64, n: usize| -> Option<(usize, usize)> {
        let lo = ((p - win - m) / st as f64).ceil().max(0.0) as usize;
        let lo = lo.div_ceil(step) * step;
        let hi = ((p + m) / st as f64).floor();
        if hi < 0.0 {
            return None;
        }
        let hi = (hi as usize).min(n - 1);
        (lo <= hi).then_some((lo, hi))
    };
    let mut windows = vec![false; gbx * gby];
    let mut any = false;
    for &(x, y) in points {
        let (Some((x0, x1)), Some((y0, y1))) =
            (range(x * sx, margin * sx, ww, nwx), range(y * sy, margin * sy, wh, nwy))
        else {
            continue;
        };
        for by in (y0..=y1).step_by(step) {
            for bx in (x0..=x1).step_by(step) {
                windows[by * gbx + bx] = true;
                any = true;
            }
        }
    }
    if !any {
        return Some(LevelGate {
            windows,
            blocks: vec![false; gbx * gby],
            cells: Vec::new(),
        });
    }
    let mut blocks = vec![false; gbx * gby];
    for by in 0..gby {
        for bx in 0..gbx {
            if windows[by * gbx + bx] {
                for j in by..by + nby {
                    blocks[j * gbx + bx..j * gbx + bx + nbx]
                        .iter_mut()
                        .for_each(|b| *b = true);
                }
            }
        }
    }
    let span = bs.div_ceil(st);
    let cells_x = lw.div_ceil(st);
    let mut cells = vec![false; cells_x * lh.div_ceil(st)];
    for by in 0..gby {
        for bx in 0..gbx {
            if blocks[by * gbx + bx] {
                for j in by..by + span {
                    cells[j * cells_x + bx..j * cells_x + bx + span]
                        .iter_mut()
                        .for_each(|c| *c = true);
                }
            }
        }
    }
    Some(LevelGate { windows, blocks, cells })
}

/// Per-level window scores laid out as 9 rows of contiguous block features;
/// the dot product is split so the inner loop runs over one block row.
fn level_hits(
    level: &Raster,
    weights: &[f32],
    bias: f64,
    layout: &HogLayout,
    params: &DetectParams,
    gate: Option<&LevelGate>,
) -> Vec<(usize, usize, f64)> {
    let field = match gate {
        Some(g) => GradientField::new_in_cells(level, layout.bins, layout.block_stride, &g.cells),
        None => GradientField::new(level, layout.bins),
    };
    let grid = BlockGrid::new_masked(&field, layout, gate.map(|g| g.blocks.as_slice()));
    let (nbx, nby) = (layout.blocks_x(), layout.blocks_y());
    if grid.blocks_x < nbx || grid.blocks_y < nby {
        return Vec::new();
    }
    let step = params.stride / layout.block_stride;
    let row_len = nbx * grid.block_len;
    let mut hits = Vec::new();
    for by in (0..=grid.blocks_y - nby).step_by(step) {
        for bx in (0..=grid.blocks_x - nbx).step_by(step) {
            if gate.is_some_and(|g| !g.windows[by * grid.blocks_x + bx]) {
                continue;
            }
            let mut s = bias;
            for j in 0..nby {
                let start = ((by + j) * grid.blocks_x + bx) * grid.block_len;
                s += dot8(
                    &grid.feats[start..start + row_len],
                    &weights[j * row_len..(j + 1) * row_len],
                ) as f64;
            }
            if s >= params.hit_threshold {
                hits.push((bx * layout.block_stride, by * layout.block_stride, s));
            }
        }
    }
    hits
}

#[inline]
fn dot8(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Raw (ungrouped) window hits, mapped to original coordinates.
pub fn detect_raw(
    img: &Raster,
    model: &SvrModel,
    params: &DetectParams,
    source: MapSource,
) -> Result<Vec<DetectionBox>> {
    detect_impl(img, model, params, source, None)
}

/// [`detect_raw`] restricted to windows whose footprint, grown by `margin`
/// original pixels, contains one of `points` (original coordinates). Scores
/// of the windows evaluated equal those of the full scan.
pub fn detect_raw_near(
    img: &Raster,
    model: &SvrModel,
    params: &DetectParams,
    source: MapSource,
    points: &[(f64, f64)],
    margin: f64,
) -> Result<Vec<DetectionBox>> {
    detect_impl(img, model, params, source, Some((points, margin)))
}

fn detect_impl(
    img: &Raster,
    model: &SvrModel,
    params: &DetectParams,
    source: MapSource,
    near: Option<(&[(f64, f64)], f64)>,
) -> Result<Vec<DetectionBox>> {
    let layout = model.layout;
    model.validate()?;
    params.validate(&layout)?;
    let (w, h) = img.dims();
    if w < layout.window_width || h < layout.window_height {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} is smaller than the {}x{} detection window",
            layout.window_width, layout.window_height
        )));
    }
    let mut depth = pyramid_depth(w, h, &layout, params.scale_factor);
    if let Some(cap) = params.max_levels {
        depth = depth.min(cap);
    }
    let weights: Vec<f32> = model.weights.iter().map(|&v| v as f32).collect();
    let enl = params.enlargement as f64;
    let (ow, oh) = (w as f64 / enl, h as f64 / enl);

    let per_level: Vec<Result<Vec<DetectionBox>>> = (0..=depth)
        .into_par_iter()
        .map(|k| {
            let scale = params.scale_factor.powi(k as i32);
            let lw = ((w as f64 / scale).round() as usize).max(1);
            let lh = ((h as f64 / scale).round() as usize).max(1);
            if lw < layout.window_width || lh < layout.window_height {
                return Ok(Vec::new());
            }
            // Exact per-axis factor back to the base, since sizes are rounded.
            let (fx, fy) = (w as f64 / lw as f64, h as f64 / lh as f64);
            let step = params.stride / layout.block_stride;
            let gate = match near {
                Some((points, margin)) => match level_gate(lw, lh, (fx, fy), enl, &layout, step, points, margin) {
                    Some(g) if g.cells.is_empty() => return Ok(Vec::new()),
                    Some(g) => Some(g),
                    None => return Ok(Vec::new()),
                },
                None => None,
            };
            let level = if k == 0 { img.clone() } else { resize(img, lw, lh)? };
            let out = level_hits(&level, &weights, model.bias, &layout, params, gate.as_ref())
                .into_iter()
                .map(|(x, y, s)| {
                    let x0 = (x as f64 * fx / enl).clamp(0.0, ow);
                    let y0 = (y as f64 * fy / enl).clamp(0.0, oh);
                    let x1 = ((x + layout.window_width) as f64 * fx / enl).clamp(0.0, ow);
                    let y1 = ((y + layout.window_height) as f64 * fy / enl).clamp(0.0, oh);
                    DetectionBox {
                        x: x0,
                        y: y0,
                        w: x1 - x0,
                        h: y1 - y0,
                        score: s,
                        source,
                    }
                })
                .collect();
            Ok(out)
        })
        .collect();
    let mut raw = Vec::new();
    for level in per_level {
        raw.extend(level?);
    }
    Ok(raw)
}

/// Slide the model's window over a pyramid of `img` (already enlarged by
/// `params.enlargement`), keep windows scoring at least the hit threshold and
/// merge overlapping hits.
pub fn detect_multiscale(
    img: &Raster,
    model: &SvrModel,
    params: &DetectParams,
    source: MapSource,
) -> Result<Vec<DetectionBox>> {
    let raw = detect_raw(img, model, params, source)?;
    log::trace!("{} raw {} hits", raw.len(), source.as_str());
    Ok(group_detections(&raw, &params.group))
}
