//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression and hysteresis linking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::region::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub strong: f32,
    pub weak: f32,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            strong: 30.0,
            weak: 15.0,
            sigma: 1.0,
        }
    }
}

fn gaussian_blur(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = img.dims();
    let tmp = Raster::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * img.get_clamped(x as isize + i as isize - r, y as isize) as f64)
            .sum::<f64>() as f32
    });
    Raster::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * tmp.get_clamped(x as isize, y as isize + i as isize - r) as f64)
            .sum::<f64>() as f32
    })
}

/// Sobel derivatives (unnormalised) with clamp-to-edge borders.
pub(crate) fn sobel(img: &Raster) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = img.dims();
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy);
            gx[y * w + x] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[y * w + x] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Edge mask of `img`. Magnitude is the L2 norm of the Sobel response on the
/// smoothed image; pixels at or above `strong` seed edges, which grow through
/// 8-connected suppressed maxima at or above `weak`.
pub fn canny_edges(img: &Raster, params: &CannyParams) -> Result<Mask> {
    if !(params.weak > 0.0 && params.strong >= params.weak) {
        return Err(Error::InvalidParameter(format!(
            "Canny thresholds need strong >= weak > 0, got {} / {}",
            params.strong, params.weak
        )));
    }
    let (w, h) = img.dims();
    let smooth = gaussian_blur(img, params.sigma);
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let at = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // Non-maximum suppression along the gradient quantised to 4 directions.
    let mut cand = vec![0u8; w * h]; // 0 none, 1 weak, 2 strong
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m < params.weak {
                continue;
            }
            let ang = gy[i].atan2(gx[i]).to_degrees();
            let a = if ang < 0.0 { ang + 180.0 } else { ang };
            let (dx, dy) = if !(22.5..157.5).contains(&a) {
                (1, 0)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            // Ties break toward the forward neighbour so plateaus keep one pixel.
            if m > at(xi - dx, yi - dy) && m >= at(xi + dx, yi + dy) {
                cand[i] = if m >= params.strong { 2 } else { 1 };
            }
        }
    }

    let mut edges = Mask::new(w, h);
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| cand[i] == 2).collect();
    for &i in &stack {
        edges.set(i % w, i / w, true);
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if cand[j] != 0 && !edges.get(nx as usize, ny as usize) {
                    edges.set(nx as usize, ny as usize, true);
                    stack.push(j);
                }
            }
        }
    }
    Ok(edges)
}

/// Gradient magnitude compared against the hysteresis thresholds.
pub fn canny_magnitude(img: &Raster, sigma: f64) -> Vec<f32> {
    let (gx, gy) = sobel(&gaussian_blur(img, sigma));
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::connected_components;

    #[test]
    fn constant_raster_has_no_edges() {
        let e = canny_edges(&Raster::new(20, 20, 77.0), &CannyParams::default()).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn gentle_ramp_is_below_weak() {
        // Sobel of a ramp with slope 1 is 8 < 15.
        let img = Raster::from_fn(40, 40, |x, _| x as f32);
        assert!(canny_edges(&img, &CannyParams::default()).unwrap().is_empty());
    }

    #[test]
    fn square_outline() {
        let img = Raster::from_fn(50, 50, |x, y| {
            if (15..35).contains(&x) && (15..35).contains(&y) {
                150.0
            } else {
                50.0
            }
        });
        let e = canny_edges(&img, &CannyParams::default()).unwrap();
        // Every edge pixel is within 1 px of the square boundary.
        for y in 0..50 {
            for x in 0..50 {
                if e.get(x, y) {
                    let dx = (x as i32 - 15).abs().min((x as i32 - 34).abs());
                    let dy = (y as i32 - 15).abs().min((y as i32 - 34).abs());
                    let near_v = dx <= 1 && (14..=35).contains(&(y as i32));
                    let near_h = dy <= 1 && (14..=35).contains(&(x as i32));
                    assert!(near_v || near_h, "stray edge at ({x}, {y})");
                }
            }
        }
        // Closed: the outside of the outline is one component, and so is the inside.
        let outside = Mask::from_fn(50, 50, |x, y| !e.get(x, y));
        assert_eq!(connected_components(&outside).len(), 2);
        // Every side is traced.
        for k in 17..33 {
            assert!((13..=17).any(|x| e.get(x, k)));
            assert!((32..=36).any(|x| e.get(x, k)));
            assert!((13..=17).any(|y| e.get(k, y)));
            assert!((32..=36).any(|y| e.get(k, y)));
        }
    }

    #[test]
    fn bad_thresholds() {
        let p = CannyParams {
            strong: 10.0,
            weak: 20.0,
            sigma: 1.0,
        };
        assert!(canny_edges(&Raster::new(4, 4, 0.0), &p).is_err());
    }
}
