//! Tile-wise residual co-registration of an ortho-rectified image pair.
//!
//! Each tile of the `before` image is aligned to the matching `after` tile by a
//! pure translation found with Enhanced Correlation Coefficient (ECC)
//! maximisation. Alignment runs on bilateral-filtered, range-normalised copies;
//! the translation is then applied to the unfiltered `before` pixels.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{bilateral_filter, normalize_to_reference, BilateralParams, Raster, Translation};

pub const DEFAULT_TILE_SIZE: usize = 200;
const MIN_TILE_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub origin_x: usize,
    pub origin_y: usize,
    pub width: usize,
    pub height: usize,
}

impl Tile {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.origin_x as f64
            && y >= self.origin_y as f64
            && x < (self.origin_x + self.width) as f64
            && y < (self.origin_y + self.height) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    /// Row-major.
    pub tiles: Vec<Tile>,
}

/// Split one axis into spans of `size`, folding a remainder shorter than half a
/// tile into the last span.
fn axis_spans(len: usize, size: usize) -> Vec<(usize, usize)> {
    let full = len / size;
    let rem = len % size;
    if full == 0 {
        return vec![(0, len)];
    }
    let mut spans: Vec<(usize, usize)> = (0..full).map(|i| (i * size, size)).collect();
    if rem > 0 {
        if rem * 2 < size {
            spans.last_mut().unwrap().1 += rem;
        } else {
            spans.push((full * size, rem));
        }
    }
    spans
}

pub fn tile_grid(width: usize, height: usize, tile_size: usize) -> Result<TileGrid> {
    if tile_size < MIN_TILE_SIZE {
        return Err(Error::InvalidParameter(format!(
            "tile size must be >= {MIN_TILE_SIZE}, got {tile_size}"
        )));
    }
    if width * 2 < tile_size || height * 2 < tile_size {
        return Err(Error::ImageTooSmall(format!(
            "{width}x{height} is smaller than half a {tile_size}px tile"
        )));
    }
    let xs = axis_spans(width, tile_size);
    let ys = axis_spans(height, tile_size);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &(oy, h) in &ys {
        for &(ox, w) in &xs {
            tiles.push(Tile {
                origin_x: ox,
                origin_y: oy,
                width: w,
                height: h,
            });
        }
    }
    Ok(TileGrid { tile_size, tiles })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EccParams {
    pub max_iter: usize,
    /// Stop once the correlation gain of an accepted step falls below this.
    pub tol: f64,
    /// Largest admissible translation magnitude in pixels.
    pub search_bound: f64,
    /// Minimum final correlation for a run to count as converged.
    pub correlation_floor: f64,
    /// Coarse-to-fine levels (1 = single resolution).
    pub pyramid_levels: usize,
}

impl Default for EccParams {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-4,
            search_bound: 20.0,
            correlation_floor: 0.5,
            pyramid_levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub translation: Translation,
    pub final_correlation: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Correlation after each accepted step at the finest level, starting
    /// with the initial estimate.
    pub history: Vec<f64>,
}

struct Gradients {
    gx: Raster,
    gy: Raster,
}

fn central_gradients(img: &Raster) -> Gradients {
    let (w, h) = img.dims();
    let gx = Raster::from_fn(w, h, |x, y| {
        0.5 * (img.get_clamped(x as isize + 1, y as isize) - img.get_clamped(x as isize - 1, y as isize))
    });
    let gy = Raster::from_fn(w, h, |x, y| {
        0.5 * (img.get_clamped(x as isize, y as isize + 1) - img.get_clamped(x as isize, y as isize - 1))
    });
    Gradients { gx, gy }
}

/// Everything one ECC update needs, evaluated at a translation.
struct EccState {
    rho: f64,
    delta: Option<(f64, f64)>,
}

fn evaluate(template: &Raster, moving: &Raster, grads: &Gradients, p: Translation) -> Option<EccState> {
    let (w, h) = template.dims();
    let maxx = (w - 1) as f64;
    let maxy = (h - 1) as f64;
    let n_est = w * h;
    let mut tv = Vec::with_capacity(n_est);
    let mut iv = Vec::with_capacity(n_est);
    let mut jx = Vec::with_capacity(n_est);
    let mut jy = Vec::with_capacity(n_est);
    for y in 0..h {
        let sy = y as f64 + p.dy;
        if sy < 0.0 || sy > maxy {
            continue;
        }
        for x in 0..w {
            let sx = x as f64 + p.dx;
            if sx < 0.0 || sx > maxx {
                continue;
            }
            tv.push(template.get(x, y) as f64);
            iv.push(moving.sample_bilinear(sx, sy) as f64);
            jx.push(grads.gx.sample_bilinear(sx, sy) as f64);
            jy.push(grads.gy.sample_bilinear(sx, sy) as f64);
        }
    }
    let n = tv.len();
    if n < 16 {
        return None;
    }
    let tmean = tv.iter().sum::<f64>() / n as f64;
    let imean = iv.iter().sum::<f64>() / n as f64;
    let (mut tt, mut ii, mut ti) = (0.0, 0.0, 0.0);
    let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
    let (mut ipx, mut ipy, mut tpx, mut tpy) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let t = tv[k] - tmean;
        let i = iv[k] - imean;
        tt += t * t;
        ii += i * i;
        ti += t * i;
        hxx += jx[k] * jx[k];
        hxy += jx[k] * jy[k];
        hyy += jy[k] * jy[k];
        ipx += jx[k] * i;
        ipy += jy[k] * i;
        tpx += jx[k] * t;
        tpy += jy[k] * t;
    }
    if tt <= 0.0 || ii <= 0.0 {
        return None;
    }
    let rho = ti / (tt.sqrt() * ii.sqrt());
    let det = hxx * hyy - hxy * hxy;
    if det.abs() < 1e-12 {
        return Some(EccState { rho, delta: None });
    }
    let inv = |a: f64, b: f64| ((hyy * a - hxy * b) / det, (-hxy * a + hxx * b) / det);
    let (iphx, iphy) = inv(ipx, ipy);
    let lambda_n = ii - (ipx * iphx + ipy * iphy);
    let lambda_d = ti - (tpx * iphx + tpy * iphy);
    if lambda_d <= 0.0 {
        return Some(EccState { rho, delta: None });
    }
    let lambda = lambda_n / lambda_d;
    // Projection of the error image (lambda * t - i) onto the Jacobian.
    let epx = lambda * tpx - ipx;
    let epy = lambda * tpy - ipy;
    let delta = inv(epx, epy);
    Some(EccState {
        rho,
        delta: Some(delta),
    })
}

fn check_texture(img: &Raster) -> Result<()> {
    if img.std_dev() < 1e-6 {
        return Err(Error::NoTexture);
    }
    Ok(())
}

/// Single-resolution ECC from an initial translation.
fn ecc_single(template: &Raster, moving: &Raster, init: Translation, params: &EccParams) -> Result<AlignmentResult> {
    let grads = central_gradients(moving);
    let mut p = init;
    let mut state = evaluate(template, moving, &grads, p).ok_or(Error::NoTexture)?;
    let mut history = vec![state.rho];
    let mut iterations = 0;
    let mut converged_by_tol = false;

    while iterations < params.max_iter {
        iterations += 1;
        let Some((ddx, ddy)) = state.delta else {
            break;
        };
        // Backtrack on the Gauss-Newton step until correlation does not drop.
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..5 {
            let cand = Translation::new(p.dx + scale * ddx, p.dy + scale * ddy);
            if cand.magnitude() > params.search_bound {
                return Err(Error::Diverged(cand.magnitude(), params.search_bound));
            }
            if let Some(next) = evaluate(template, moving, &grads, cand) {
                if next.rho >= state.rho {
                    accepted = Some((cand, next));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((cand, next)) = accepted else {
            converged_by_tol = true;
            break;
        };
        let gain = next.rho - state.rho;
        p = cand;
        state = next;
        history.push(state.rho);
        if gain < params.tol {
            converged_by_tol = true;
            break;
        }
    }
    if !p.dx.is_finite() || !p.dy.is_finite() {
        return Err(Error::Diverged(f64::INFINITY, params.search_bound));
    }
    Ok(AlignmentResult {
        translation: p,
        final_correlation: state.rho,
        iterations,
        converged: converged_by_tol && state.rho >= params.correlation_floor,
        history,
    })
}

/// Binomial [1 3 3 1] / 8 low-pass followed by 2x decimation. Output pixel
/// `x` sits at input coordinate `2x + 0.5`, like a 2x2 average.
fn half_size(img: &Raster) -> Raster {
    const K: [f32; 4] = [0.125, 0.375, 0.375, 0.125];
    let (w, h) = ((img.width() / 2).max(1), (img.height() / 2).max(1));
    let rows = Raster::from_fn(w, img.height(), |x, y| {
        (0..4)
            .map(|k| K[k] * img.get_clamped(2 * x as isize + k as isize - 1, y as isize))
            .sum()
    });
    Raster::from_fn(w, h, |x, y| {
        (0..4)
            .map(|k| K[k] * rows.get_clamped(x as isize, 2 * y as isize + k as isize - 1))
            .sum()
    })
}

/// Correlation of `template(x)` with `moving(x + (dx, dy))` over the overlap.
fn correlation_at_integer(template: &Raster, moving: &Raster, dx: i64, dy: i64) -> Option<f64> {
    let (w, h) = (template.width() as i64, template.height() as i64);
    let (x0, x1) = (0.max(-dx), w.min(w - dx));
    let (y0, y1) = (0.max(-dy), h.min(h - dy));
    if x1 - x0 < 4 || y1 - y0 < 4 {
        return None;
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let (mut st, mut si, mut stt, mut sii, mut sti) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let t = template.get(x as usize, y as usize) as f64;
            let i = moving.get((x + dx) as usize, (y + dy) as usize) as f64;
            st += t;
            si += i;
            stt += t * t;
            sii += i * i;
            sti += t * i;
        }
    }
    let vt = stt - st * st / n;
    let vi = sii - si * si / n;
    if vt <= 0.0 || vi <= 0.0 {
        return None;
    }
    Some((sti - st * si / n) / (vt * vi).sqrt())
}

/// Integer translation within `radius` with the highest correlation.
fn best_integer_start(template: &Raster, moving: &Raster, radius: i64) -> Translation {
    let mut best = (f64::NEG_INFINITY, Translation::default());
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if let Some(rho) = correlation_at_integer(template, moving, dx, dy) {
                if rho > best.0 {
                    best = (rho, Translation::new(dx as f64, dy as f64));
                }
            }
        }
    }
    best.1
}

/// Find the translation `t` maximising the correlation between `template(x)`
/// and `moving(x + t)`.
pub fn ecc_align_translation(template: &Raster, moving: &Raster, params: &EccParams) -> Result<AlignmentResult> {
    template.check_same_dims(moving)?;
    check_texture(template)?;
    check_texture(moving)?;
    if params.max_iter == 0 || params.tol <= 0.0 {
        return Err(Error::InvalidParameter("ECC needs max_iter > 0 and tol > 0".into()));
    }

    let mut templates = vec![template.clone()];
    let mut movings = vec![moving.clone()];
    for _ in 1..params.pyramid_levels.max(1) {
        let t = templates.last().unwrap();
        if t.width() < 64 || t.height() < 64 {
            break;
        }
        let m = movings.last().unwrap();
        let (t2, m2) = (half_size(t), half_size(m));
        templates.push(t2);
        movings.push(m2);
    }

    let mut init = Translation::default();
    for level in (1..templates.len()).rev() {
        let coarse_params = EccParams {
            search_bound: params.search_bound / 2f64.powi(level as i32),
            ..*params
        };
        let coarse_init = if level == templates.len() - 1 {
            let radius = (coarse_params.search_bound.floor() as i64).min(8);
            best_integer_start(&templates[level], &movings[level], radius)
        } else {
            Translation::new(init.dx / 2f64.powi(level as i32), init.dy / 2f64.powi(level as i32))
        };
        match ecc_single(&templates[level], &movings[level], coarse_init, &coarse_params) {
            Ok(r) => {
                // Centre-aligned halving: full-res offset is twice the coarse one.
                init = Translation::new(
                    r.translation.dx * 2f64.powi(level as i32),
                    r.translation.dy * 2f64.powi(level as i32),
                );
            }
            Err(Error::Diverged(..)) | Err(Error::NoTexture) => {
                init = Translation::new(
                    coarse_init.dx * 2f64.powi(level as i32),
                    coarse_init.dy * 2f64.powi(level as i32),
                );
            }
            Err(e) => return Err(e),
        }
    }
    ecc_single(template, moving, init, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoregisterConfig {
    pub tile_size: usize,
    pub bilateral: BilateralParams,
    pub ecc: EccParams,
}

impl Default for CoregisterConfig {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            bilateral: BilateralParams::default(),
            ecc: EccParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileStatus {
    Aligned,
    NotConverged,
    NoTexture,
    Diverged,
}

impl TileStatus {
    /// Detections in tiles that were not aligned carry a low-confidence mark.
    pub fn low_confidence(&self) -> bool {
        !matches!(self, TileStatus::Aligned)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileAlignment {
    pub tile_index: usize,
    pub tile: Tile,
    pub translation: Translation,
    pub correlation: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: TileStatus,
}

#[derive(Debug, Clone)]
pub struct AlignedTilePair {
    pub alignment: TileAlignment,
    pub before: Raster,
    pub after: Raster,
}

#[derive(Debug, Clone)]
pub struct CoregisteredPair {
    pub grid: TileGrid,
    pub tiles: Vec<AlignedTilePair>,
}

impl CoregisteredPair {
    pub fn log(&self) -> Vec<TileAlignment> {
        self.tiles.iter().map(|t| t.alignment.clone()).collect()
    }
}

/// Align one tile; failures are reported through the status instead of an error.
pub fn align_tile(
    before: &Raster,
    after: &Raster,
    index: usize,
    tile: Tile,
    config: &CoregisterConfig,
) -> Result<TileAlignment> {
    let b = before.crop(tile.origin_x, tile.origin_y, tile.width, tile.height)?;
    let a = after.crop(tile.origin_x, tile.origin_y, tile.width, tile.height)?;
    let fa = bilateral_filter(&a, config.bilateral)?;
    let fb = bilateral_filter(&b, config.bilateral)?;
    let fb = normalize_to_reference(&fb, &fa)?.raster;
    let (translation, correlation, iterations, converged, status) = match ecc_align_translation(&fa, &fb, &config.ecc) {
        Ok(r) => {
            let status = if r.converged {
                TileStatus::Aligned
            } else {
                TileStatus::NotConverged
            };
            let t = if r.converged {
                r.translation
            } else {
                Translation::default()
            };
            (t, r.final_correlation, r.iterations, r.converged, status)
        }
        Err(Error::NoTexture) => (Translation::default(), 0.0, 0, false, TileStatus::NoTexture),
        Err(Error::Diverged(..)) => (Translation::default(), 0.0, 0, false, TileStatus::Diverged),
        Err(e) => return Err(e),
    };
    Ok(TileAlignment {
        tile_index: index,
        tile,
        translation,
        correlation,
        iterations,
        converged,
        status,
    })
}

/// Resample the `before` pixels of `tile` shifted by `t`, reading across tile
/// borders from the full image.
pub fn resample_tile(before: &Raster, tile: Tile, t: Translation) -> Raster {
    Raster::from_fn(tile.width, tile.height, |x, y| {
        before.sample_bilinear((tile.origin_x + x) as f64 + t.dx, (tile.origin_y + y) as f64 + t.dy)
    })
    .with_pixel_scale(before.pixel_scale())
}

pub fn coregister_pair(before: &Raster, after: &Raster, config: &CoregisterConfig) -> Result<CoregisteredPair> {
    before.check_same_dims(after)?;
    let grid = tile_grid(after.width(), after.height(), config.tile_size)?;
    let tiles = grid
        .tiles
        .par_iter()
        .enumerate()
        .map(|(i, &tile)| {
            let alignment = align_tile(before, after, i, tile, config)?;
            let b = resample_tile(before, tile, alignment.translation);
            let a = after.crop(tile.origin_x, tile.origin_y, tile.width, tile.height)?;
            Ok(AlignedTilePair {
                alignment,
                before: b,
                after: a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoregisteredPair { grid, tiles })
}

/// Full-size `before` image with each tile resampled by its own translation.
pub fn assemble_aligned(before: &Raster, log: &[TileAlignment]) -> Raster {
    let mut out = before.clone();
    for entry in log {
        let t = resample_tile(before, entry.tile, entry.translation);
        out.paste(&t, entry.tile.origin_x, entry.tile.origin_y);
    }
    out
}

pub fn write_alignment_csv(path: &Path, log: &[TileAlignment]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "tile_index,origin_x,origin_y,dx,dy,correlation,iterations,converged")?;
    for e in log {
        writeln!(
            f,
            "{},{},{},{:.4},{:.4},{:.6},{},{}",
            e.tile_index,
            e.tile.origin_x,
            e.tile.origin_y,
            e.translation.dx,
            e.translation.dy,
            e.correlation,
            e.iterations,
            e.converged
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::translate;

    /// Smooth multi-frequency texture with analytic values.
    pub(crate) fn texture(w: usize, h: usize) -> Raster {
        Raster::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let v = 128.0
                + 40.0 * (x / 13.0).sin() * (y / 17.0).cos()
                + 25.0 * ((x + 2.0 * y) / 7.0).sin()
                + 20.0 * ((3.0 * x - y) / 23.0).cos();
            v as f32
        })
    }

    #[test]
    fn grid_exact_division() {
        let g = tile_grid(1000, 1000, 200).unwrap();
        assert_eq!(g.tiles.len(), 25);
        assert!(g.tiles.iter().all(|t| t.width == 200 && t.height == 200));
    }

    #[test]
    fn grid_merges_narrow_remainder() {
        let g = tile_grid(1050, 1000, 200).unwrap();
        assert_eq!(g.tiles.len(), 25);
        let last_col: Vec<_> = g.tiles.iter().filter(|t| t.origin_x == 800).collect();
        assert_eq!(last_col.len(), 5);
        assert!(last_col.iter().all(|t| t.width == 250));
    }

    #[test]
    fn grid_keeps_wide_remainder() {
        let g = tile_grid(1120, 200, 200).unwrap();
        assert_eq!(g.tiles.len(), 6);
        assert_eq!(g.tiles[5].width, 120);
    }

    #[test]
    fn grid_single_small_tile() {
        let g = tile_grid(150, 150, 200).unwrap();
        assert_eq!(
            g.tiles,
            vec![Tile {
                origin_x: 0,
                origin_y: 0,
                width: 150,
                height: 150
            }]
        );
        assert!(tile_grid(90, 150, 200).is_err());
    }

    #[test]
    fn ecc_identity() {
        let t = texture(120, 120);
        let r = ecc_align_translation(&t, &t, &EccParams::default()).unwrap();
        assert!(r.translation.magnitude() < 0.05);
        assert!(r.final_correlation > 0.999);
        assert!(r.converged);
    }

    #[test]
    fn ecc_recovers_known_shift() {
        let t = texture(160, 160);
        let s = Translation::new(3.25, -1.5);
        let moving = translate(&t, s);
        let r = ecc_align_translation(&t, &moving, &EccParams::default()).unwrap();
        assert!((r.translation.dx + s.dx).abs() < 0.1, "{:?}", r.translation);
        assert!((r.translation.dy + s.dy).abs() < 0.1, "{:?}", r.translation);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn ecc_constant_template_has_no_texture() {
        let c = Raster::new(64, 64, 9.0);
        let t = texture(64, 64);
        assert!(matches!(
            ecc_align_translation(&c, &t, &EccParams::default()),
            Err(Error::NoTexture)
        ));
    }

    #[test]
    fn alignment_csv_has_header_and_rows() {
        let before = texture(200, 200);
        let pair = coregister_pair(
            &before,
            &before,
            &CoregisterConfig {
                tile_size: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("align.csv");
        write_alignment_csv(&p, &pair.log()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("tile_index,origin_x,origin_y,dx,dy,correlation,iterations,converged"));
    }
}
