//! Deterministic synthetic before/after scenes with exact ground truth.
//!
//! Blocks are bright ellipses with a one-pixel soft edge; each may cast a
//! dark elliptical shadow abutting it along the anti-sun azimuth, with length
//! `0.5 · equivalent diameter · tan(incidence)`. The background is a pure
//! function of continuous coordinates, so a global misregistration is an
//! exact resampling of the same terrain.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BlockRecord;
use crate::hog::{Annotation, SampleLabel, MIN_SAMPLE_HEIGHT, MIN_SAMPLE_WIDTH};
use crate::io::{write_label_png, write_png, LabelMap};
use crate::raster::{Raster, SunGeometry, Translation, DEFAULT_PIXEL_SCALE};
use crate::region::{Mask, Point, Polarity, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Flat,
    Textured,
    /// Smoothed horizontal strata.
    Layered,
    /// Textured, with soft brightness patches that differ between the dates.
    Changing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub n_blocks: usize,
    pub block_area_range_px: (f64, f64),
    /// Brightness added at the block core.
    pub block_contrast_range: (f64, f64),
    pub background: BackgroundMode,
    pub noise_sigma: f64,
    pub sun: SunGeometry,
    pub shadow_fraction: f64,
    /// The 'before' image samples the terrain at `(x + dx, y + dy)`.
    pub global_shift_px: Translation,
    /// Boulders present on both dates, drawn like blocks.
    pub n_static_blocks: usize,
    pub pixel_scale: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 400,
            height: 400,
            seed: 0,
            n_blocks: 20,
            block_area_range_px: (8.0, 200.0),
            block_contrast_range: (50.0, 90.0),
            background: BackgroundMode::Textured,
            noise_sigma: 2.0,
            sun: SunGeometry::default(),
            shadow_fraction: 0.8,
            global_shift_px: Translation::default(),
            n_static_blocks: 0,
            pixel_scale: DEFAULT_PIXEL_SCALE,
        }
    }
}

impl SceneSpec {
    /// Read a TOML scene description; missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        crate::pipeline::parse_toml(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!(
                "scene must be at least 16x16, got {}x{}",
                self.width, self.height
            ));
        }
        let (a0, a1) = self.block_area_range_px;
        if !(a0 >= 1.0 && a1 >= a0 && a1.is_finite()) {
            return bad(format!("block area range [{a0}, {a1}] is empty or invalid"));
        }
        let (c0, c1) = self.block_contrast_range;
        if !(c0 > 0.0 && c1 >= c0 && c1.is_finite()) {
            return bad(format!("block contrast range [{c0}, {c1}] is empty or invalid"));
        }
        if !(0.0..=1.0).contains(&self.shadow_fraction) {
            return bad(format!("shadow fraction {} outside [0, 1]", self.shadow_fraction));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        if !(self.global_shift_px.dx.is_finite() && self.global_shift_px.dy.is_finite()) {
            return bad("global shift must be finite".into());
        }
        if !(self.pixel_scale > 0.0) {
            return bad(format!("pixel scale {} must be positive", self.pixel_scale));
        }
        SunGeometry::new(self.sun.azimuth_deg, self.sun.incidence_deg)?;
        Ok(())
    }
}

/// A planted block with its shadow, both as pixel masks (soft coverage ≥ ½).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedBlock {
    pub id: usize,
    pub block: Region,
    pub shadow: Option<Region>,
    /// Ellipse area π·a·b.
    pub nominal_area_px: f64,
    pub contrast: f64,
}

impl PlantedBlock {
    pub fn record(&self) -> BlockRecord {
        BlockRecord::from_region(self.id, self.block.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub before: Raster,
    pub after: Raster,
    pub truth: Vec<PlantedBlock>,
    pub static_blocks: Vec<PlantedBlock>,
    /// Blocks asked for but not placeable without overlap.
    pub unplaced: usize,
    pub spec: SceneSpec,
}

impl SyntheticScene {
    pub fn truth_records(&self) -> Vec<BlockRecord> {
        self.truth.iter().map(PlantedBlock::record).collect()
    }

    /// Label map of the new blocks: block `i` gets label `i + 1`.
    pub fn truth_labels(&self) -> LabelMap {
        let mut map = LabelMap::new(self.spec.width, self.spec.height);
        for (i, b) in self.truth.iter().enumerate() {
            for p in b.block.pixels() {
                map.set(p.x as usize, p.y as usize, (i + 1).min(u16::MAX as usize) as u16);
            }
        }
        map
    }
}

/// Bilinearly interpolated lattice noise, defined on the whole plane.
struct ValueNoise {
    octaves: Vec<(f64, f64, usize, Vec<f32>)>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, octaves: &[(f64, f64)], extent: f64) -> Self {
        let octaves = octaves
            .iter()
            .map(|&(cell, amp)| {
                let n = (extent / cell).ceil() as usize + 4;
                let grid = (0..n * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                (cell, amp, n, grid)
            })
            .collect();
        Self { octaves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        for (cell, amp, n, grid) in &self.octaves {
            // Lattice origin two cells out so small negative shifts stay inside.
            let gx = (x / cell + 2.0).clamp(0.0, (*n - 2) as f64);
            let gy = (y / cell + 2.0).clamp(0.0, (*n - 2) as f64);
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            let g = |i: usize, j: usize| grid[j * n + i] as f64;
            let top = g(ix, iy) + (g(ix + 1, iy) - g(ix, iy)) * fx;
            let bot = g(ix, iy + 1) + (g(ix + 1, iy + 1) - g(ix, iy + 1)) * fx;
            v += amp * (top + (bot - top) * fy);
        }
        v
    }
}

struct Terrain {
    mode: BackgroundMode,
    base: f64,
    texture: ValueNoise,
    strata: ValueNoise,
}

impl Terrain {
    fn new(mode: BackgroundMode, rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let texture = ValueNoise::new(rng, &[(48.0, 14.0), (16.0, 8.0), (5.0, 4.0), (2.0, 2.0)], extent);
        let strata = ValueNoise::new(rng, &[(24.0, 22.0), (7.0, 8.0)], extent);
        Self {
            mode,
            base: rng.gen_range(95..125) as f64,
            texture,
            strata,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        match self.mode {
            BackgroundMode::Flat => self.base,
            BackgroundMode::Textured | BackgroundMode::Changing => self.base + self.texture.at(x, y),
            // Strata are rows of a 1-D profile, slightly tilted, with a weak texture.
            BackgroundMode::Layered => self.base + self.strata.at(0.0, y + 0.05 * x) + 0.35 * self.texture.at(x, y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Soft coverage of pixel `(x, y)`: 1 inside, 0 outside, a linear ramp of
    /// one pixel across the boundary (signed distance from the implicit form).
    fn coverage(&self, x: usize, y: usize) -> f64 {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let f = (u / self.a).powi(2) + (v / self.b).powi(2) - 1.0;
        let gu = 2.0 * u / (self.a * self.a);
        let gv = 2.0 * v / (self.b * self.b);
        let g = gu.hypot(gv);
        let d = if g > 1e-12 { f / g } else { -self.a.min(self.b) };
        (0.5 - d).clamp(0.0, 1.0)
    }

    /// Half-extent of the ellipse along the unit direction `(ux, uy)`.
    fn support(&self, ux: f64, uy: f64) -> f64 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = c * ux + s * uy;
        let v = -s * ux + c * uy;
        ((self.a * u).powi(2) + (self.b * v).powi(2)).sqrt()
    }

    fn bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let r = self.a.max(self.b) + 2.0;
        let x0 = (self.cx - r).floor().max(0.0) as usize;
        let y0 = (self.cy - r).floor().max(0.0) as usize;
        let x1 = ((self.cx + r).ceil().max(0.0) as usize).min(w);
        let y1 = ((self.cy + r).ceil().max(0.0) as usize).min(h);
        (x0, y0, x1, y1)
    }
}

struct Shape {
    block: Ellipse,
    shadow: Option<Ellipse>,
    contrast: f64,
    /// Fraction of the background removed at the shadow core.
    darkness: f64,
}

fn draw_shape(rng: &mut ChaCha8Rng, spec: &SceneSpec, with_shadow: bool) -> Shape {
    let (a0, a1) = spec.block_area_range_px;
    // Log-uniform areas favour the small blocks that dominate real counts.
    let area = if a1 > a0 {
        (rng.gen_range(a0.ln()..a1.ln())).exp()
    } else {
        a0
    };
    let aspect = rng.gen_range(0.6..1.0);
    let a = (area / (PI * aspect)).sqrt();
    let b = a * aspect;
    let margin = a + 2.0;
    let cx = rng.gen_range(margin..spec.width as f64 - margin);
    let cy = rng.gen_range(margin..spec.height as f64 - margin);
    let block = Ellipse {
        cx,
        cy,
        a,
        b,
        theta: rng.gen_range(0.0..PI),
    };
    let (c0, c1) = spec.block_contrast_range;
    let contrast = if c1 > c0 { rng.gen_range(c0..c1) } else { c0 };
    let darkness = rng.gen_range(0.45..0.7);
    let shadow = with_shadow.then(|| {
        let (ux, uy) = spec.sun.shadow_direction();
        let height = 0.5 * 2.0 * (area / PI).sqrt();
        let length = (height * spec.sun.incidence_deg.to_radians().tan()).max(2.0);
        let r = block.support(ux, uy);
        let half_width = block.support(-uy, ux).max(1.0);
        Ellipse {
            cx: cx + ux * (r + 0.5 * length - 0.5),
            cy: cy + uy * (r + 0.5 * length - 0.5),
            a: 0.5 * length + 0.5,
            b: half_width,
            theta: uy.atan2(ux),
        }
    });
    Shape {
        block,
        shadow,
        contrast,
        darkness,
    }
}

fn footprint(e: &Ellipse, w: usize, h: usize) -> Vec<Point> {
    let (x0, y0, x1, y1) = e.bounds(w, h);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            if e.coverage(x, y) >= 0.5 {
                out.push(Point::new(x as i32, y as i32));
            }
        }
    }
    out
}

/// Shadow pixels that render dark: effective shadow coverage at least ½
/// and almost no block light.
fn shadow_footprint(shadow: &Ellipse, block: &Ellipse, w: usize, h: usize) -> Vec<Point> {
    covered(shadow, w, h)
        .into_iter()
        .filter(|&(x, y, c)| {
            let cb = block.coverage(x, y);
            cb <= 0.1 && c * (1.0 - 2.0 * cb) >= 0.5
        })
        .map(|(x, y, _)| Point::new(x as i32, y as i32))
        .collect()
}

fn covered(e: &Ellipse, w: usize, h: usize) -> Vec<(usize, usize, f64)> {
    let (x0, y0, x1, y1) = e.bounds(w, h);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let c = e.coverage(x, y);
            if c > 0.0 {
                out.push((x, y, c));
            }
        }
    }
    out
}

/// Place up to `n` shapes without touching anything already in `occupied`
/// (which keeps a 2 px gap); 100 attempts per shape.
fn place(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    n: usize,
    occupied: &mut Mask,
    first_id: usize,
) -> (Vec<(Shape, PlantedBlock)>, usize) {
    let (w, h) = (spec.width, spec.height);
    let mut placed = Vec::new();
    let mut failed = 0;
    for k in 0..n {
        let with_shadow = rng.gen::<f64>() < spec.shadow_fraction;
        let mut done = false;
        for _ in 0..100 {
            let shape = draw_shape(rng, spec, with_shadow);
            let block_px = footprint(&shape.block, w, h);
            let n = block_px.len() as f64;
            if n < spec.block_area_range_px.0 || n > spec.block_area_range_px.1 {
                continue;
            }
            let shadow_px = shape.shadow.as_ref().map(|s| shadow_footprint(s, &shape.block, w, h));
            let all: Vec<Point> = block_px.iter().chain(shadow_px.iter().flatten()).copied().collect();
            // The shadow must fit inside the image in full.
            if let Some(e) = &shape.shadow {
                let r = e.a.max(e.b) + 1.0;
                if e.cx < r || e.cy < r || e.cx + r > w as f64 || e.cy + r > h as f64 {
                    continue;
                }
            }
            if all.iter().any(|p| occupied.get(p.x as usize, p.y as usize)) {
                continue;
            }
            let mut region_mask = Mask::new(w, h);
            region_mask.set_pixels(&all);
            let grown = region_mask.dilate(2);
            *occupied = occupied.or(&grown);
            let block = Region::new(block_px, Polarity::Bright);
            let shadow = shadow_px
                .filter(|p| !p.is_empty())
                .map(|p| Region::new(p, Polarity::Dark));
            let planted = PlantedBlock {
                id: first_id + k,
                nominal_area_px: PI * shape.block.a * shape.block.b,
                contrast: shape.contrast,
                block,
                shadow,
            };
            placed.push((shape, planted));
            done = true;
            break;
        }
        if !done {
            failed += 1;
        }
    }
    (placed, failed)
}

/// Blocks brighten additively; shadows scale the terrain down, fading out
/// under the block so that no block pixel is darkened.
fn render(img: &mut Raster, shapes: &[&Shape]) {
    let (w, h) = img.dims();
    for s in shapes {
        if let Some(e) = &s.shadow {
            for (x, y, c) in covered(e, w, h) {
                let c = c * (1.0 - 2.0 * s.block.coverage(x, y)).max(0.0);
                let v = img.get(x, y) as f64;
                img.set(x, y, (v * (1.0 - s.darkness * c)) as f32);
            }
        }
    }
    for s in shapes {
        for (x, y, c) in covered(&s.block, w, h) {
            let v = img.get(x, y) as f64;
            img.set(x, y, (v + s.contrast * c) as f32);
        }
    }
}

fn add_noise(img: &mut Raster, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked positive");
    for v in img.data_mut() {
        *v += normal.sample(rng) as f32;
    }
}

fn finish(img: Raster, pixel_scale: f64) -> Raster {
    img.map(|v| v.clamp(0.0, 255.0))
        .quantize()
        .with_pixel_scale(pixel_scale)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Render a scene; a pure function of `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let extent = w.max(h) as f64 + 32.0;
    let terrain = Terrain::new(spec.background, &mut stream(spec.seed, 1), extent);
    let mut place_rng = stream(spec.seed, 2);
    let mut occupied = Mask::new(w, h);
    let (statics, _) = place(&mut place_rng, spec, spec.n_static_blocks, &mut occupied, 0);
    let (blocks, unplaced) = place(&mut place_rng, spec, spec.n_blocks, &mut occupied, 1);
    if unplaced > 0 {
        log::warn!("placed {} of {} blocks", blocks.len(), spec.n_blocks);
    }

    let t = spec.global_shift_px;
    let mut after = Raster::from_fn(w, h, |x, y| terrain.at(x as f64, y as f64) as f32);
    let mut before = Raster::from_fn(w, h, |x, y| terrain.at(x as f64 + t.dx, y as f64 + t.dy) as f32);
    let static_shapes: Vec<&Shape> = statics.iter().map(|(s, _)| s).collect();
    render(&mut after, &static_shapes);
    // Static boulders move with the terrain on the 'before' date.
    let shifted: Vec<Shape> = statics
        .iter()
        .map(|(s, _)| {
            let mv = |e: &Ellipse| Ellipse {
                cx: e.cx - t.dx,
                cy: e.cy - t.dy,
                ..*e
            };
            Shape {
                block: mv(&s.block),
                shadow: s.shadow.as_ref().map(mv),
                contrast: s.contrast,
                darkness: s.darkness,
            }
        })
        .collect();
    render(&mut before, &shifted.iter().collect::<Vec<_>>());
    let new_shapes: Vec<&Shape> = blocks.iter().map(|(s, _)| s).collect();
    render(&mut after, &new_shapes);

    if spec.background == BackgroundMode::Changing {
        let mut rng = stream(spec.seed, 3);
        let n = ((w * h) as f64 / 60_000.0).ceil() as usize + 1;
        let patches: Vec<(f64, f64, f64, f64)> = (0..n)
            .map(|_| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                (
                    rng.gen_range(0.0..w as f64),
                    rng.gen_range(0.0..h as f64),
                    rng.gen_range(25.0..70.0),
                    sign * rng.gen_range(6.0..14.0),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let mut d = 0.0;
                for &(px, py, r, amp) in &patches {
                    let q = ((x as f64 - px).powi(2) + (y as f64 - py).powi(2)) / (r * r);
                    d += amp * (-q).exp();
                }
                before.set(x, y, before.get(x, y) + d as f32);
            }
        }
    }

    add_noise(&mut after, spec.noise_sigma, &mut stream(spec.seed, 4));
    add_noise(&mut before, spec.noise_sigma, &mut stream(spec.seed, 5));
    Ok(SyntheticScene {
        before: finish(before, spec.pixel_scale),
        after: finish(after, spec.pixel_scale),
        truth: blocks.into_iter().map(|(_, p)| p).collect(),
        static_blocks: statics.into_iter().map(|(_, p)| p).collect(),
        unplaced,
        spec: spec.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationParams {
    /// Negative boxes per positive.
    pub negatives_per_positive: f64,
    /// Pixels added around the block and shadow box.
    pub pad_px: i64,
    /// Extra background regions, each tiled with minimum-size negative boxes
    /// at `large_negative_stride_px`.
    pub large_negatives: usize,
    pub large_negative_size: (i64, i64),
    pub large_negative_stride_px: i64,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        Self {
            negatives_per_positive: 3.0,
            pad_px: 1,
            large_negatives: 16,
            large_negative_size: (24, 30),
            large_negative_stride_px: 4,
        }
    }
}

fn grow_to_min(x: i64, y: i64, w: i64, h: i64, iw: i64, ih: i64) -> (i64, i64, i64, i64) {
    let nw = w.max(MIN_SAMPLE_WIDTH).min(iw);
    let nh = h.max(MIN_SAMPLE_HEIGHT).min(ih);
    let nx = (x - (nw - w) / 2).clamp(0, iw - nw);
    let ny = (y - (nh - h) / 2).clamp(0, ih - nh);
    (nx, ny, nw, nh)
}

/// Training boxes for a scene: one positive per new block (block and shadow
/// box, padded, grown to at least 8×10), plus negatives of the same size
/// range on terrain clear of every block and boulder.
pub fn training_annotations(scene: &SyntheticScene, params: &AnnotationParams, seed: u64) -> Vec<Annotation> {
    let (iw, ih) = (scene.spec.width as i64, scene.spec.height as i64);
    let mut out = Vec::new();
    let mut sizes = Vec::new();
    let mut busy = Mask::new(scene.spec.width, scene.spec.height);
    for b in scene.truth.iter().chain(&scene.static_blocks) {
        busy.set_pixels(b.block.pixels());
        if let Some(s) = &b.shadow {
            busy.set_pixels(s.pixels());
        }
    }
    let busy = busy.dilate(2);
    for b in &scene.truth {
        let mut bb = b.block.bbox();
        if let Some(s) = &b.shadow {
            let sb = s.bbox();
            let x0 = bb.x.min(sb.x);
            let y0 = bb.y.min(sb.y);
            let x1 = (bb.x + bb.w).max(sb.x + sb.w);
            let y1 = (bb.y + bb.h).max(sb.y + sb.h);
            bb = crate::region::BoundingBox::new(x0, y0, x1 - x0, y1 - y0);
        }
        let p = params.pad_px;
        let x = (bb.x as i64 - p).max(0);
        let y = (bb.y as i64 - p).max(0);
        let w = ((bb.x + bb.w) as i64 + p).min(iw) - x;
        let h = ((bb.y + bb.h) as i64 + p).min(ih) - y;
        let (x, y, w, h) = grow_to_min(x, y, w, h, iw, ih);
        sizes.push((w, h));
        out.push(Annotation {
            x,
            y,
            w,
            h,
            label: SampleLabel::Positive,
        });
    }
    if sizes.is_empty() {
        sizes.push((MIN_SAMPLE_WIDTH, MIN_SAMPLE_HEIGHT));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wanted = ((scene.truth.len().max(1)) as f64 * params.negatives_per_positive).round() as usize;
    out.extend(place_negatives(&busy, &mut rng, wanted, |rng| {
        sizes[rng.gen_range(0..sizes.len())]
    }));
    let stride = params.large_negative_stride_px.max(1);
    for r in place_negatives(&busy, &mut rng, params.large_negatives, |_| params.large_negative_size) {
        for y in (r.y..=r.y + r.h - MIN_SAMPLE_HEIGHT).step_by(stride as usize) {
            for x in (r.x..=r.x + r.w - MIN_SAMPLE_WIDTH).step_by(stride as usize) {
                out.push(Annotation {
                    x,
                    y,
                    w: MIN_SAMPLE_WIDTH,
                    h: MIN_SAMPLE_HEIGHT,
                    label: SampleLabel::Negative,
                });
            }
        }
    }
    out
}

fn place_negatives(
    busy: &Mask,
    rng: &mut ChaCha8Rng,
    wanted: usize,
    size: impl Fn(&mut ChaCha8Rng) -> (i64, i64),
) -> Vec<Annotation> {
    let (iw, ih) = (busy.width() as i64, busy.height() as i64);
    let mut out = Vec::new();
    let mut tries = 0;
    let mut negatives = 0;
    while negatives < wanted && tries < wanted * 50 {
        tries += 1;
        let (w, h) = size(rng);
        if w > iw || h > ih {
            continue;
        }
        let x = rng.gen_range(0..=iw - w);
        let y = rng.gen_range(0..=ih - h);
        let a = Annotation {
            x,
            y,
            w,
            h,
            label: SampleLabel::Negative,
        };
        if a.intersects(busy) {
            continue;
        }
        out.push(a);
        negatives += 1;
    }
    out
}

#[derive(Debug, Serialize)]
struct TruthRow {
    id: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    area_px: usize,
    centroid_x: f64,
    centroid_y: f64,
    has_shadow: u8,
}

pub fn write_truth_csv(path: &Path, truth: &[PlantedBlock]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in truth {
        let bb = b.block.bbox();
        let (cx, cy) = b.block.centroid();
        w.serialize(TruthRow {
            id: b.id,
            x: bb.x,
            y: bb.y,
            w: bb.w,
            h: bb.h,
            area_px: b.block.area_px(),
            centroid_x: cx,
            centroid_y: cy,
            has_shadow: b.shadow.is_some() as u8,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// `before.png`, `after.png`, `truth.csv`, `truth_labels.png` and
/// `scene.toml` in `dir`.
pub fn write_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_png(&dir.join("before.png"), &scene.before)?;
    write_png(&dir.join("after.png"), &scene.after)?;
    write_truth_csv(&dir.join("truth.csv"), &scene.truth)?;
    write_label_png(&dir.join("truth_labels.png"), &scene.truth_labels())?;
    let spec = toml::to_string_pretty(&scene.spec).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(dir.join("scene.toml"), spec)?;
    Ok(())
}
