//! Grayscale raster carrier and the pixel-level transforms shared by every stage.
//!
//! Values live on the 0–255 scale as `f32` so that filtering and resampling can
//! keep fractional intermediates; [`Raster::quantize`] snaps back to integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// HiRISE ground sampling distance in meters per pixel.
pub const DEFAULT_PIXEL_SCALE: f64 = 0.25;

/// Offset added to signed differences so static areas sit mid-scale.
pub const DIFFERENCE_OFFSET: f32 = 128.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pixel_scale: f64,
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Self {
            width,
            height,
            data: vec![fill; width * height],
            pixel_scale: DEFAULT_PIXEL_SCALE,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
            pixel_scale: DEFAULT_PIXEL_SCALE,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut r = Self::new(width, height, 0.0);
        for y in 0..height {
            for x in 0..width {
                r.data[y * width + x] = f(x, y);
            }
        }
        r
    }

    pub fn with_pixel_scale(mut self, pixel_scale: f64) -> Self {
        assert!(pixel_scale > 0.0, "pixel scale must be positive");
        self.pixel_scale = pixel_scale;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_scale(&self) -> f64 {
        self.pixel_scale
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Clamp-to-edge lookup for signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a fractional position with clamp-to-edge borders.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bot = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation around [`Raster::mean`].
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - m;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    /// Round to integers and clamp into [0, 255].
    pub fn quantize(mut self) -> Self {
        for v in &mut self.data {
            *v = v.round().clamp(0.0, 255.0);
        }
        self
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
            pixel_scale: self.pixel_scale,
        }
    }

    /// Copy of the `w`×`h` window starting at (`x`, `y`). The window must lie
    /// inside the raster.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::OutOfBounds(
                (x as i64, y as i64, w as i64, h as i64),
                self.width,
                self.height,
            ));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
            pixel_scale: self.pixel_scale,
        })
    }

    /// Write `src` into this raster with its top-left corner at (`x`, `y`),
    /// silently dropping pixels that fall outside.
    pub fn paste(&mut self, src: &Raster, x: usize, y: usize) {
        for sy in 0..src.height {
            let ty = y + sy;
            if ty >= self.height {
                break;
            }
            for sx in 0..src.width {
                let tx = x + sx;
                if tx >= self.width {
                    break;
                }
                self.set(tx, ty, src.get(sx, sy));
            }
        }
    }

    pub fn check_same_dims(&self, other: &Raster) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Sun direction and elevation used to orient block shadows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunGeometry {
    /// Direction toward the sun, degrees clockwise from image-up.
    pub azimuth_deg: f64,
    /// Angle between the sun and the surface normal, degrees.
    pub incidence_deg: f64,
}

impl SunGeometry {
    pub fn new(azimuth_deg: f64, incidence_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !(incidence_deg > 0.0 && incidence_deg < 90.0) {
            return Err(Error::InvalidParameter(format!(
                "sun geometry out of range: azimuth {azimuth_deg}, incidence {incidence_deg}"
            )));
        }
        Ok(Self {
            azimuth_deg: normalize_deg(azimuth_deg),
            incidence_deg,
        })
    }

    /// Direction in which shadows are cast.
    pub fn anti_sun_azimuth_deg(&self) -> f64 {
        normalize_deg(self.azimuth_deg + 180.0)
    }

    /// Unit vector (x right, y down) pointing away from the sun.
    pub fn shadow_direction(&self) -> (f64, f64) {
        azimuth_to_vector(self.anti_sun_azimuth_deg())
    }
}

impl Default for SunGeometry {
    /// Sun from the top left at the incidence of the reference image pair.
    fn default() -> Self {
        Self {
            azimuth_deg: 315.0,
            incidence_deg: 68.0,
        }
    }
}

pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Image-plane unit vector for an azimuth measured clockwise from up.
pub fn azimuth_to_vector(azimuth_deg: f64) -> (f64, f64) {
    let a = azimuth_deg.to_radians();
    (a.sin(), -a.cos())
}

/// Azimuth (clockwise from up, [0, 360)) of the vector (dx, dy) in image coordinates.
pub fn vector_to_azimuth(dx: f64, dy: f64) -> f64 {
    normalize_deg(dx.atan2(-dy).to_degrees())
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Sub-pixel translation. A raster warped by `t` samples its source at `(x + dx, y + dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Translation {
    pub dx: f64,
    pub dy: f64,
}

impl Translation {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn magnitude(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Signed after-minus-before difference, offset by 128 and clamped to [0, 255].
pub fn difference_image(before: &Raster, after: &Raster) -> Result<Raster> {
    before.check_same_dims(after)?;
    let data = after
        .data
        .iter()
        .zip(&before.data)
        .map(|(&a, &b)| (a - b + DIFFERENCE_OFFSET).round().clamp(0.0, 255.0))
        .collect();
    Ok(Raster {
        width: after.width,
        height: after.height,
        data,
        pixel_scale: after.pixel_scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilateralParams {
    pub diameter: usize,
    pub sigma_intensity: f64,
    pub sigma_space: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            diameter: 5,
            sigma_intensity: 25.0,
            sigma_space: 3.0,
        }
    }
}

/// Edge-preserving smoothing over a square `diameter`×`diameter` neighbourhood
/// with clamp-to-edge borders.
pub fn bilateral_filter(img: &Raster, params: BilateralParams) -> Result<Raster> {
    let BilateralParams {
        diameter,
        sigma_intensity,
        sigma_space,
    } = params;
    if diameter < 3 || diameter % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "bilateral diameter must be odd and >= 3, got {diameter}"
        )));
    }
    if !(sigma_intensity > 0.0 && sigma_space > 0.0) {
        return Err(Error::InvalidParameter("bilateral sigmas must be positive".into()));
    }
    let r = (diameter / 2) as isize;
    let space_coeff = -0.5 / (sigma_space * sigma_space);
    let range_coeff = -0.5 / (sigma_intensity * sigma_intensity);
    let mut spatial = Vec::with_capacity(diameter * diameter);
    for dy in -r..=r {
        for dx in -r..=r {
            spatial.push((dx, dy, ((dx * dx + dy * dy) as f64 * space_coeff).exp()));
        }
    }
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let center = img.get(x, y) as f64;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for &(dx, dy, ws) in &spatial {
                let v = img.get_clamped(x as isize + dx, y as isize + dy) as f64;
                let d = v - center;
                let w = ws * (d * d * range_coeff).exp();
                acc += w * v;
                norm += w;
            }
            out.set(x, y, (acc / norm) as f32);
        }
    }
    Ok(out)
}

/// Linear-interpolated percentile (`q` in [0, 100]) of a sorted slice.
pub fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - f) + sorted[hi] as f64 * f
}

pub fn percentile(img: &Raster, q: f64) -> f64 {
    let mut v = img.data.clone();
    v.sort_by(f32::total_cmp);
    percentile_sorted(&v, q)
}

pub const NORMALIZE_LOW_PERCENTILE: f64 = 2.0;
pub const NORMALIZE_HIGH_PERCENTILE: f64 = 98.0;

#[derive(Debug, Clone)]
pub struct Normalized {
    pub raster: Raster,
    /// Set when the tile had no intensity spread and was only shifted.
    pub degenerate: bool,
}

/// Linearly remap `tile` so its 2nd–98th percentile range lands on the
/// reference's, clamped to [0, 255].
pub fn normalize_to_reference(tile: &Raster, reference: &Raster) -> Result<Normalized> {
    tile.check_same_dims(reference)?;
    let mut t = tile.data.clone();
    t.sort_by(f32::total_cmp);
    let mut r = reference.data.clone();
    r.sort_by(f32::total_cmp);
    let t_lo = percentile_sorted(&t, NORMALIZE_LOW_PERCENTILE);
    let t_hi = percentile_sorted(&t, NORMALIZE_HIGH_PERCENTILE);
    let r_lo = percentile_sorted(&r, NORMALIZE_LOW_PERCENTILE);
    let r_hi = percentile_sorted(&r, NORMALIZE_HIGH_PERCENTILE);

    if t_hi - t_lo <= f64::EPSILON {
        let t_med = percentile_sorted(&t, 50.0);
        let r_med = percentile_sorted(&r, 50.0);
        let shift = (r_med - t_med) as f32;
        return Ok(Normalized {
            raster: tile.map(|v| (v + shift).clamp(0.0, 255.0)),
            degenerate: true,
        });
    }
    let gain = (r_hi - r_lo) / (t_hi - t_lo);
    Ok(Normalized {
        raster: tile.map(|v| ((v as f64 - t_lo) * gain + r_lo).clamp(0.0, 255.0) as f32),
        degenerate: false,
    })
}

/// Bilinear resize with half-pixel-centre alignment and clamp-to-edge borders.
pub fn resize(img: &Raster, width: usize, height: usize) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if (width, height) == img.dims() {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    // Per-column source taps are shared by every row.
    let cols: Vec<(usize, usize, f32)> = (0..width)
        .map(|x| tap((x as f64 + 0.5) * sx - 0.5, img.width))
        .collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = tap((y as f64 + 0.5) * sy - 0.5, img.height);
        let r0 = &img.data[y0 * img.width..(y0 + 1) * img.width];
        let r1 = &img.data[y1 * img.width..(y1 + 1) * img.width];
        for &(x0, x1, fx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            data.push(top + (bot - top) * fy);
        }
    }
    Ok(Raster {
        width,
        height,
        data,
        pixel_scale: img.pixel_scale * sx,
    })
}

#[inline]
fn tap(src: f64, len: usize) -> (usize, usize, f32) {
    let s = src.clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear enlargement by an integer factor.
pub fn upscale(img: &Raster, factor: usize) -> Result<Raster> {
    if factor < 1 {
        return Err(Error::InvalidParameter(format!(
            "upscale factor must be >= 1, got {factor}"
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    resize(img, img.width * factor, img.height * factor)
}

/// Resample `img` so that `out(x, y) = img(x + t.dx, y + t.dy)`, clamp-to-edge.
pub fn translate(img: &Raster, t: Translation) -> Raster {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(x, y, img.sample_bilinear(x as f64 + t.dx, y as f64 + t.dy));
        }
    }
    out
}
