//! Binary masks, labelled pixel regions and connected-component labelling.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as `false`.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a ^ b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Dilation by a 3×3 square structuring element, `radius` times.
    pub fn dilate(&self, radius: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..radius {
            let mut next = cur.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    if cur.get(x, y) {
                        continue;
                    }
                    let hit = (-1i64..=1).any(|dy| (-1i64..=1).any(|dx| cur.get_signed(x as i64 + dx, y as i64 + dy)));
                    next.set(x, y, hit);
                }
            }
            cur = next;
        }
        cur
    }

    pub fn set_pixels(&mut self, pixels: &[Point]) {
        for p in pixels {
            if p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height {
                self.set(p.x as usize, p.y as usize, true);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned pixel box: `x..x+w`, `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn intersection(&self, o: &BoundingBox) -> f64 {
        let ix = ((self.x + self.w).min(o.x + o.w) - self.x.max(o.x)).max(0.0);
        let iy = ((self.y + self.h).min(o.y + o.h) - self.y.max(o.y)).max(0.0);
        ix * iy
    }

    pub fn iou(&self, o: &BoundingBox) -> f64 {
        let inter = self.intersection(o);
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Bright,
    Dark,
}

/// Which blob detectors reported a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectorFlags {
    pub mser: bool,
    pub simple_blob: bool,
}

impl DetectorFlags {
    pub fn both(&self) -> bool {
        self.mser && self.simple_blob
    }
}

/// A labelled set of pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pixels: Vec<Point>,
    centroid: (f64, f64),
    pub polarity: Polarity,
    pub detectors: DetectorFlags,
}

impl Region {
    /// Pixels are sorted and deduplicated.
    pub fn new(mut pixels: Vec<Point>, polarity: Polarity) -> Self {
        pixels.sort_unstable_by_key(|p| (p.y, p.x));
        pixels.dedup();
        let n = pixels.len().max(1) as f64;
        let (sx, sy) = pixels
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x as f64, sy + p.y as f64));
        Self {
            pixels,
            centroid: (sx / n, sy / n),
            polarity,
            detectors: DetectorFlags::default(),
        }
    }

    pub fn with_detectors(mut self, detectors: DetectorFlags) -> Self {
        self.detectors = detectors;
        self
    }

    pub fn pixels(&self) -> &[Point] {
        &self.pixels
    }

    pub fn area_px(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Mean pixel position (pixel centres at integer coordinates).
    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    /// Diameter of the disc with the same area.
    pub fn equivalent_diameter(&self) -> f64 {
        2.0 * (self.area_px() as f64 / std::f64::consts::PI).sqrt()
    }

    /// Inclusive pixel bounds as a box spanning whole pixels.
    pub fn bbox(&self) -> BoundingBox {
        if self.pixels.is_empty() {
            return BoundingBox::new(0.0, 0.0, 0.0, 0.0);
        }
        let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
        for p in &self.pixels {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        BoundingBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.pixels.binary_search_by_key(&(p.y, p.x), |q| (q.y, q.x)).is_ok()
    }

    pub fn overlap(&self, other: &Region) -> usize {
        let (small, large) = if self.area_px() <= other.area_px() {
            (self, other)
        } else {
            (other, self)
        };
        small.pixels.iter().filter(|&&p| large.contains(p)).count()
    }

    pub fn iou(&self, other: &Region) -> f64 {
        let inter = self.overlap(other);
        let union = self.area_px() + other.area_px() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn is_four_connected(&self) -> bool {
        if self.pixels.is_empty() {
            return true;
        }
        let set: HashSet<Point> = self.pixels.iter().copied().collect();
        let mut seen = HashSet::with_capacity(set.len());
        let mut stack = vec![self.pixels[0]];
        seen.insert(self.pixels[0]);
        while let Some(p) = stack.pop() {
            for q in neighbors4(p) {
                if set.contains(&q) && seen.insert(q) {
                    stack.push(q);
                }
            }
        }
        seen.len() == set.len()
    }

    /// Pixel with the largest value in `img` (first in raster order on ties).
    pub fn argmax(&self, img: &Raster) -> Option<Point> {
        let mut best: Option<(Point, f32)> = None;
        for &p in &self.pixels {
            let v = img.get(p.x as usize, p.y as usize);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
        best.map(|(p, _)| p)
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Region {
        let mut r = self.clone();
        for p in &mut r.pixels {
            p.x += dx;
            p.y += dy;
        }
        r.centroid = (r.centroid.0 + dx as f64, r.centroid.1 + dy as f64);
        r
    }

    pub fn to_mask(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::new(width, height);
        m.set_pixels(&self.pixels);
        m
    }
}

pub(crate) fn neighbors4(p: Point) -> [Point; 4] {
    [
        Point::new(p.x - 1, p.y),
        Point::new(p.x + 1, p.y),
        Point::new(p.x, p.y - 1),
        Point::new(p.x, p.y + 1),
    ]
}

/// 4-connected components of `mask`, in raster order of their first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Vec<Point>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.push(Point::new(x as i32, y as i32));
            let mut visit = |j: usize| {
                if mask.data[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(comp);
    }
    out
}

/// Components of `pixels` (a subset of the plane) under 4-connectivity.
pub fn split_components(pixels: &[Point]) -> Vec<Vec<Point>> {
    let set: HashSet<Point> = pixels.iter().copied().collect();
    let mut seen: HashSet<Point> = HashSet::with_capacity(set.len());
    let mut sorted: Vec<Point> = set.iter().copied().collect();
    sorted.sort_unstable_by_key(|p| (p.y, p.x));
    let mut out = Vec::new();
    for &start in &sorted {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for q in neighbors4(p) {
                if set.contains(&q) && seen.insert(q) {
                    comp.push(q);
                    stack.push(q);
                }
            }
        }
        out.push(comp);
    }
    out
}
