//! Histogram of Oriented Gradients descriptors over 64×80 windows and the
//! harvesting of training samples from annotated imagery.
//!
//! Block histograms only see pixels inside their own block, so a dense grid of
//! normalised blocks computed once per image can be shared by every window
//! that overlaps it (see [`BlockGrid`]).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resize, Raster};
use crate::region::Mask;

/// Guard added to every normalisation denominator.
pub const NORM_EPS: f64 = 1e-6;
/// L2-Hys clipping level.
pub const HYS_CLIP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogLayout {
    pub window_width: usize,
    pub window_height: usize,
    pub cell_size: usize,
    /// Cells per block side.
    pub block_cells: usize,
    pub block_stride: usize,
    /// Unsigned orientation bins over [0°, 180°).
    pub bins: usize,
}

impl Default for HogLayout {
    fn default() -> Self {
        Self {
            window_width: 64,
            window_height: 80,
            cell_size: 8,
            block_cells: 2,
            block_stride: 8,
            bins: 9,
        }
    }
}

impl HogLayout {
    pub fn block_size(&self) -> usize {
        self.cell_size * self.block_cells
    }

    pub fn blocks_x(&self) -> usize {
        (self.window_width - self.block_size()) / self.block_stride + 1
    }

    pub fn blocks_y(&self) -> usize {
        (self.window_height - self.block_size()) / self.block_stride + 1
    }

    pub fn block_len(&self) -> usize {
        self.block_cells * self.block_cells * self.bins
    }

    pub fn descriptor_len(&self) -> usize {
        self.blocks_x() * self.blocks_y() * self.block_len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.cell_size > 0
            && self.block_cells > 0
            && self.bins > 0
            && self.block_stride > 0
            && self.window_width.is_multiple_of(self.cell_size)
            && self.window_height.is_multiple_of(self.cell_size)
            && self.window_width >= self.block_size()
            && self.window_height >= self.block_size()
            && (self.window_width - self.block_size()).is_multiple_of(self.block_stride)
            && (self.window_height - self.block_size()).is_multiple_of(self.block_stride);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("inconsistent HOG layout {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f32>,
}

impl HogDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-pixel gradient magnitude with its orientation split across two bins.
pub struct GradientField {
    width: usize,
    height: usize,
    mag: Vec<f32>,
    bin_lo: Vec<u8>,
    /// Share of the magnitude going to `bin_lo + 1`.
    frac_hi: Vec<f32>,
}

impl GradientField {
    /// Centred `[-1, 0, 1]` derivatives with clamp-to-edge borders, no pre-smoothing.
    pub fn new(img: &Raster, bins: usize) -> Self {
        let mut f = Self::zeroed(img);
        let (w, h) = img.dims();
        for y in 0..h {
            for x in 0..w {
                f.compute(img, bins, x, y);
            }
        }
        f
    }

    /// Like [`GradientField::new`] but only inside the `cell`×`cell` tiles
    /// flagged in `cells` (row-major, `ceil(w / cell)` per row); elsewhere the
    /// magnitude is zero.
    pub fn new_in_cells(img: &Raster, bins: usize, cell: usize, cells: &[bool]) -> Self {
        let mut f = Self::zeroed(img);
        let (w, h) = img.dims();
        let cells_x = w.div_ceil(cell);
        for (k, _) in cells.iter().enumerate().filter(|(_, &on)| on) {
            let (cx, cy) = (k % cells_x, k / cells_x);
            for y in cy * cell..((cy + 1) * cell).min(h) {
                for x in cx * cell..((cx + 1) * cell).min(w) {
                    f.compute(img, bins, x, y);
                }
            }
        }
        f
    }

    fn zeroed(img: &Raster) -> Self {
        let (w, h) = img.dims();
        Self {
            width: w,
            height: h,
            mag: vec![0.0; w * h],
            bin_lo: vec![0; w * h],
            frac_hi: vec![0.0; w * h],
        }
    }

    #[inline]
    fn compute(&mut self, img: &Raster, bins: usize, x: usize, y: usize) {
        let (w, h) = (self.width, self.height);
        let d = img.data();
        let row = y * w;
        let gx = d[row + (x + 1).min(w - 1)] - d[row + x.saturating_sub(1)];
        let gy = d[(y + 1).min(h - 1) * w + x] - d[y.saturating_sub(1) * w + x];
        let m = (gx * gx + gy * gy).sqrt();
        let mut ang = gy.atan2(gx).to_degrees();
        if ang < 0.0 {
            ang += 180.0;
        }
        if ang >= 180.0 {
            ang -= 180.0;
        }
        let pos = ang / (180.0 / bins as f32);
        let lo = pos.floor();
        self.mag[row + x] = m;
        self.bin_lo[row + x] = (lo as usize % bins) as u8;
        self.frac_hi[row + x] = pos - lo;
    }
}

/// Tent weights of a pixel offset inside a block toward each of its cells.
fn cell_weights(layout: &HogLayout) -> Vec<[(usize, f64); 2]> {
    let cs = layout.cell_size as f64;
    let last = (layout.block_cells - 1) as f64;
    (0..layout.block_size())
        .map(|u| {
            let c = ((u as f64 + 0.5) / cs - 0.5).clamp(0.0, last);
            let lo = c.floor();
            let f = c - lo;
            let lo = lo as usize;
            let hi = (lo + 1).min(layout.block_cells - 1);
            [(lo, 1.0 - f), (hi, f)]
        })
        .collect()
}

fn l2_hys(v: &mut [f64]) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
    for x in v.iter_mut() {
        *x = (*x / norm).min(HYS_CLIP);
    }
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Normalised block histograms on the block-stride lattice of an image.
pub struct BlockGrid {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub block_len: usize,
    pub feats: Vec<f32>,
}

impl BlockGrid {
    pub fn new(field: &GradientField, layout: &HogLayout) -> Self {
        Self::new_masked(field, layout, None)
    }

    /// Blocks not flagged in `needed` (row-major over the block lattice) are
    /// left as zeros.
    pub fn new_masked(field: &GradientField, layout: &HogLayout, needed: Option<&[bool]>) -> Self {
        let bs = layout.block_size();
        if field.width < bs || field.height < bs {
            return Self {
                blocks_x: 0,
                blocks_y: 0,
                block_len: layout.block_len(),
                feats: Vec::new(),
            };
        }
        let blocks_x = (field.width - bs) / layout.block_stride + 1;
        let blocks_y = (field.height - bs) / layout.block_stride + 1;
        let block_len = layout.block_len();
        let weights = cell_weights(layout);
        let bins = layout.bins;
        let nc = layout.block_cells;
        let stride = layout.block_stride;
        let cell_len = nc * bins;
        let row_len = blocks_x * cell_len;
        let mut feats = Vec::with_capacity(blocks_x * blocks_y * block_len);
        let mut hist = vec![0.0f64; block_len];
        // Column-cell histograms of every block-row line, then summed down.
        let mut rows = vec![0.0f64; bs * row_len];
        for by in 0..blocks_y {
            let y0 = by * stride;
            rows.iter_mut().for_each(|h| *h = 0.0);
            for v in 0..bs {
                let line = (y0 + v) * field.width;
                let rb = &mut rows[v * row_len..(v + 1) * row_len];
                for bx in 0..blocks_x {
                    if needed.is_some_and(|n| !n[by * blocks_x + bx]) {
                        continue;
                    }
                    let x0 = bx * stride;
                    let out = &mut rb[bx * cell_len..(bx + 1) * cell_len];
                    for (u, wx) in weights.iter().enumerate() {
                        let i = line + x0 + u;
                        let m = field.mag[i] as f64;
                        if m == 0.0 {
                            continue;
                        }
                        let lo = field.bin_lo[i] as usize;
                        let hi = if lo + 1 == bins { 0 } else { lo + 1 };
                        let fh = field.frac_hi[i] as f64;
                        for &(cx, wxv) in wx {
                            if wxv == 0.0 {
                                continue;
                            }
                            let s = m * wxv;
                            out[cx * bins + lo] += s * (1.0 - fh);
                            out[cx * bins + hi] += s * fh;
                        }
                    }
                }
            }
            for bx in 0..blocks_x {
                hist.iter_mut().for_each(|h| *h = 0.0);
                if needed.is_some_and(|n| !n[by * blocks_x + bx]) {
                    feats.extend(hist.iter().map(|&v| v as f32));
                    continue;
                }
                for (v, wy) in weights.iter().enumerate() {
                    let src = &rows[v * row_len + bx * cell_len..v * row_len + (bx + 1) * cell_len];
                    for &(cy, wyv) in wy {
                        if wyv == 0.0 {
                            continue;
                        }
                        let dst = &mut hist[cy * cell_len..(cy + 1) * cell_len];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wyv * s;
                        }
                    }
                }
                l2_hys(&mut hist);
                feats.extend(hist.iter().map(|&v| v as f32));
            }
        }
        Self {
            blocks_x,
            blocks_y,
            block_len,
            feats,
        }
    }

    /// Descriptor of the window whose top-left block is (`bx`, `by`).
    pub fn window_descriptor(&self, bx: usize, by: usize, layout: &HogLayout) -> HogDescriptor {
        let (nx, ny) = (layout.blocks_x(), layout.blocks_y());
        let mut values = Vec::with_capacity(layout.descriptor_len());
        for j in 0..ny {
            let start = ((by + j) * self.blocks_x + bx) * self.block_len;
            values.extend_from_slice(&self.feats[start..start + nx * self.block_len]);
        }
        HogDescriptor { values }
    }
}

pub fn compute_hog(window: &Raster, layout: &HogLayout) -> Result<HogDescriptor> {
    layout.validate()?;
    if window.dims() != (layout.window_width, layout.window_height) {
        return Err(Error::InvalidParameter(format!(
            "HOG window must be {}x{}, got {}x{}",
            layout.window_width,
            layout.window_height,
            window.width(),
            window.height()
        )));
    }
    let field = GradientField::new(window, layout.bins);
    let grid = BlockGrid::new(&field, layout);
    Ok(grid.window_descriptor(0, 0, layout))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub label: SampleLabel,
}

impl Annotation {
    pub fn intersects(&self, mask: &Mask) -> bool {
        for y in self.y.max(0)..(self.y + self.h).min(mask.height() as i64) {
            for x in self.x.max(0)..(self.x + self.w).min(mask.width() as i64) {
                if mask.get(x as usize, y as usize) {
                    return true;
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    After,
    Difference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub layout: HogLayout,
    pub source: SampleSource,
    pub positives: Vec<HogDescriptor>,
    pub negatives: Vec<HogDescriptor>,
    /// Annotations skipped for being smaller than the minimum box.
    pub rejected: usize,
}

impl SampleSet {
    pub fn new(layout: HogLayout, source: SampleSource) -> Self {
        Self {
            layout,
            source,
            positives: Vec::new(),
            negatives: Vec::new(),
            rejected: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    pub fn extend(&mut self, other: SampleSet) {
        self.positives.extend(other.positives);
        self.negatives.extend(other.negatives);
        self.rejected += other.rejected;
    }
}

pub const MIN_SAMPLE_WIDTH: i64 = 8;
pub const MIN_SAMPLE_HEIGHT: i64 = 10;
pub const NEGATIVE_STRIDE: usize = 32;

/// Grow a box about its centre to the window aspect ratio, then shift it back
/// inside the image.
fn fit_aspect(a: &Annotation, layout: &HogLayout, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (ww, wh) = (layout.window_width as i64, layout.window_height as i64);
    let (mut w, mut h) = (a.w, a.h);
    if w * wh > h * ww {
        h = (w * wh + ww - 1) / ww;
    } else {
        w = (h * ww + wh - 1) / wh;
    }
    let w = w.min(width as i64);
    let h = h.min(height as i64);
    let cx2 = 2 * a.x + a.w;
    let cy2 = 2 * a.y + a.h;
    let x = ((cx2 - w) / 2).clamp(0, width as i64 - w);
    let y = ((cy2 - h) / 2).clamp(0, height as i64 - h);
    (x as usize, y as usize, w as usize, h as usize)
}

/// Image area a training annotation reads: the aspect-fitted box for
/// positives and small negatives, the annotation itself for negatives large
/// enough to tile with native windows.
pub fn sample_footprint(
    a: &Annotation,
    layout: &HogLayout,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let large = a.w >= layout.window_width as i64 && a.h >= layout.window_height as i64;
    if a.label == SampleLabel::Negative && large {
        (a.x.max(0) as usize, a.y.max(0) as usize, a.w as usize, a.h as usize)
    } else {
        fit_aspect(a, layout, width, height)
    }
}

fn describe_resized(image: &Raster, region: (usize, usize, usize, usize), layout: &HogLayout) -> Result<HogDescriptor> {
    let (x, y, w, h) = region;
    let crop = image.crop(x, y, w, h)?;
    let win = resize(&crop, layout.window_width, layout.window_height)?;
    compute_hog(&win, layout)
}

/// Describe every annotation: positives (and negatives smaller than a window)
/// are cropped at the window aspect ratio and resized to the window; larger
/// negative regions yield native-resolution sub-windows at a 32 px stride.
pub fn extract_samples(
    image: &Raster,
    annotations: &[Annotation],
    layout: &HogLayout,
    source: SampleSource,
) -> Result<SampleSet> {
    layout.validate()?;
    let (iw, ih) = image.dims();
    let mut set = SampleSet::new(*layout, source);
    for a in annotations {
        if a.x < 0 || a.y < 0 || a.w <= 0 || a.h <= 0 || a.x + a.w > iw as i64 || a.y + a.h > ih as i64 {
            return Err(Error::OutOfBounds((a.x, a.y, a.w, a.h), iw, ih));
        }
        if a.w < MIN_SAMPLE_WIDTH || a.h < MIN_SAMPLE_HEIGHT {
            log::warn!(
                "skipping {}x{} annotation at ({}, {}): below 8x10 px",
                a.w,
                a.h,
                a.x,
                a.y
            );
            set.rejected += 1;
            continue;
        }
        let (ww, wh) = (layout.window_width as i64, layout.window_height as i64);
        match a.label {
            SampleLabel::Positive => {
                let d = describe_resized(image, fit_aspect(a, layout, iw, ih), layout)?;
                set.positives.push(d);
            }
            SampleLabel::Negative if a.w >= ww && a.h >= wh => {
                let nx = (a.w - ww) as usize / NEGATIVE_STRIDE + 1;
                let ny = (a.h - wh) as usize / NEGATIVE_STRIDE + 1;
                for j in 0..ny {
                    for i in 0..nx {
                        let win = image.crop(
                            a.x as usize + i * NEGATIVE_STRIDE,
                            a.y as usize + j * NEGATIVE_STRIDE,
                            layout.window_width,
                            layout.window_height,
                        )?;
                        set.negatives.push(compute_hog(&win, layout)?);
                    }
                }
            }
            SampleLabel::Negative => {
                let d = describe_resized(image, fit_aspect(a, layout, iw, ih), layout)?;
                set.negatives.push(d);
            }
        }
    }
    log::debug!(
        "{:?} samples: {} positive, {} negative, {} rejected",
        source,
        set.positives.len(),
        set.negatives.len(),
        set.rejected
    );
    Ok(set)
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<Annotation>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let a: Annotation = rec?;
        out.push(a);
    }
    Ok(out)
}

pub fn write_annotations_csv(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for a in annotations {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}

const SAMPLE_MAGIC: &[u8; 8] = b"BFHOGSM1";

pub(crate) fn write_layout(w: &mut impl Write, l: &HogLayout) -> std::io::Result<()> {
    for v in [
        l.window_width,
        l.window_height,
        l.cell_size,
        l.block_cells,
        l.block_stride,
        l.bins,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_layout(r: &mut impl Read) -> std::io::Result<HogLayout> {
    let mut v = [0usize; 6];
    for x in &mut v {
        *x = read_u32(r)? as usize;
    }
    Ok(HogLayout {
        window_width: v[0],
        window_height: v[1],
        cell_size: v[2],
        block_cells: v[3],
        block_stride: v[4],
        bins: v[5],
    })
}

/// Layout: magic, layout (6 × u32), source (u8), positive count, negative
/// count, descriptor length (u32 each), then positives and negatives as
/// row-major little-endian f32.
pub fn write_sample_set(path: &Path, set: &SampleSet) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(SAMPLE_MAGIC)?;
    write_layout(&mut w, &set.layout)?;
    w.write_all(&[match set.source {
        SampleSource::After => 0u8,
        SampleSource::Difference => 1u8,
    }])?;
    for v in [set.positives.len(), set.negatives.len(), set.layout.descriptor_len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for d in set.positives.iter().chain(&set.negatives) {
        for v in &d.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sample_set(path: &Path) -> Result<SampleSet> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let bad = |m: &str| Error::format(path, m);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SAMPLE_MAGIC {
        return Err(bad("not a sample-set file"));
    }
    let layout = read_layout(&mut r)?;
    layout.validate().map_err(|_| bad("invalid layout"))?;
    let mut src = [0u8; 1];
    r.read_exact(&mut src)?;
    let source = match src[0] {
        0 => SampleSource::After,
        1 => SampleSource::Difference,
        _ => return Err(bad("unknown sample source")),
    };
    let n_pos = read_u32(&mut r)? as usize;
    let n_neg = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    if dim != layout.descriptor_len() {
        return Err(bad("descriptor length does not match layout"));
    }
    let read_desc = |r: &mut BufReader<fs::File>| -> Result<HogDescriptor> {
        let mut buf = vec![0u8; dim * 4];
        r.read_exact(&mut buf)?;
        Ok(HogDescriptor {
            values: buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        })
    };
    let mut set = SampleSet::new(layout, source);
    for _ in 0..n_pos {
        set.positives.push(read_desc(&mut r)?);
    }
    for _ in 0..n_neg {
        set.negatives.push(read_desc(&mut r)?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_length() {
        let l = HogLayout::default();
        assert_eq!((l.blocks_x(), l.blocks_y()), (7, 9));
        assert_eq!(l.descriptor_len(), ((64 - 16) / 8 + 1) * ((80 - 16) / 8 + 1) * 4 * 9);
        assert_eq!(l.descriptor_len(), 2268);
    }

    #[test]
    fn constant_window_is_zero() {
        let d = compute_hog(&Raster::new(64, 80, 93.0), &HogLayout::default()).unwrap();
        assert_eq!(d.len(), 2268);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_window_size() {
        assert!(compute_hog(&Raster::new(64, 64, 0.0), &HogLayout::default()).is_err());
    }

    #[test]
    fn vertical_step_energy_in_horizontal_bin() {
        let win = Raster::from_fn(64, 80, |x, _| if x < 37 { 40.0 } else { 200.0 });
        let d = compute_hog(&win, &HogLayout::default()).unwrap();
        let total: f64 = d.values.iter().map(|&v| (v as f64).powi(2)).sum();
        let bin0: f64 = d
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 9 == 0)
            .map(|(_, &v)| (v as f64).powi(2))
            .sum();
        assert!(total > 0.0);
        assert!(bin0 / total >= 0.9, "bin-0 share {}", bin0 / total);
    }

    #[test]
    fn blocks_are_unit_norm_after_hys() {
        let win = Raster::from_fn(64, 80, |x, y| ((x * 7 + y * 13) % 50) as f32 * 3.0);
        let d = compute_hog(&win, &HogLayout::default()).unwrap();
        for block in d.values.chunks(36) {
            let n: f64 = block.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-6);
            assert!(block.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn positive_box_resized_from_4_to_5() {
        let img = Raster::from_fn(100, 100, |x, y| ((x * 3) ^ (y * 5)) as f32 % 255.0);
        let ann = Annotation {
            x: 10,
            y: 10,
            w: 32,
            h: 40,
            label: SampleLabel::Positive,
        };
        assert_eq!(fit_aspect(&ann, &HogLayout::default(), 100, 100), (10, 10, 32, 40));
        let set = extract_samples(&img, &[ann], &HogLayout::default(), SampleSource::After).unwrap();
        assert_eq!(set.positives.len(), 1);
        let crop = img.crop(10, 10, 32, 40).unwrap();
        let direct = compute_hog(&crate::raster::upscale(&crop, 2).unwrap(), &HogLayout::default()).unwrap();
        assert_eq!(set.positives[0], direct);
    }

    #[test]
    fn negative_region_window_count() {
        let img = Raster::from_fn(200, 200, |x, y| ((x + y) % 17) as f32);
        let ann = Annotation {
            x: 0,
            y: 0,
            w: 128,
            h: 160,
            label: SampleLabel::Negative,
        };
        let set = extract_samples(&img, &[ann], &HogLayout::default(), SampleSource::Difference).unwrap();
        assert_eq!(set.negatives.len(), 9);
        assert!(set.positives.is_empty());
    }

    #[test]
    fn empty_and_invalid_annotations() {
        let img = Raster::new(50, 50, 0.0);
        let l = HogLayout::default();
        assert!(extract_samples(&img, &[], &l, SampleSource::After).unwrap().is_empty());
        let tiny = Annotation {
            x: 0,
            y: 0,
            w: 6,
            h: 6,
            label: SampleLabel::Positive,
        };
        let set = extract_samples(&img, &[tiny], &l, SampleSource::After).unwrap();
        assert_eq!((set.positives.len(), set.rejected), (0, 1));
        let outside = Annotation {
            x: 45,
            y: 0,
            w: 10,
            h: 10,
            label: SampleLabel::Positive,
        };
        assert!(matches!(
            extract_samples(&img, &[outside], &l, SampleSource::After),
            Err(Error::OutOfBounds(..))
        ));
    }

    #[test]
    fn sample_set_round_trip() {
        let img = Raster::from_fn(120, 120, |x, y| ((x * y) % 251) as f32);
        let anns = [
            Annotation {
                x: 5,
                y: 5,
                w: 16,
                h: 20,
                label: SampleLabel::Positive,
            },
            Annotation {
                x: 0,
                y: 0,
                w: 64,
                h: 80,
                label: SampleLabel::Negative,
            },
        ];
        let set = extract_samples(&img, &anns, &HogLayout::default(), SampleSource::Difference).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_sample_set(&p, &set).unwrap();
        let back = read_sample_set(&p).unwrap();
        assert_eq!(back.positives, set.positives);
        assert_eq!(back.negatives, set.negatives);
        assert_eq!(back.source, SampleSource::Difference);
    }
}
