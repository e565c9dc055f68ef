//! Threshold-sweep blob detector and its merge with MSER output.

use serde::{Deserialize, Serialize};

use super::{ThresholdBands, MIN_REGION_AREA};
use crate::raster::Raster;
use crate::region::{connected_components, DetectorFlags, Mask, Point, Polarity, Region};

/// Pixels of a component and its centroid.
type Component = (Vec<Point>, (f64, f64));

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimpleBlobParams {
    /// Grey-level step between successive thresholds.
    pub step: f32,
    /// Largest centroid drift between consecutive thresholds for one blob.
    pub max_centroid_shift: f64,
    /// Consecutive thresholds a blob must persist over.
    pub min_repeat: usize,
    pub min_area: usize,
    /// Share of the smaller region two detections must overlap to be merged.
    pub merge_overlap: f64,
}

impl Default for SimpleBlobParams {
    fn default() -> Self {
        Self {
            step: 10.0,
            max_centroid_shift: 2.0,
            min_repeat: 2,
            min_area: MIN_REGION_AREA,
            merge_overlap: 0.5,
        }
    }
}

fn centroid(pixels: &[Point]) -> (f64, f64) {
    let n = pixels.len() as f64;
    let (sx, sy) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x as f64, b + p.y as f64));
    (sx / n, sy / n)
}

/// Sweep thresholds from the band edge outward in `step` increments, label
/// each binary image, and chain components whose centroids stay within
/// `max_centroid_shift` across consecutive thresholds. Chains spanning at
/// least `min_repeat` thresholds become blobs shaped like their outermost
/// component.
pub fn detect_simple_blobs(
    diff: &Raster,
    bands: &ThresholdBands,
    polarity: Polarity,
    params: &SimpleBlobParams,
) -> Vec<Region> {
    if bands.degenerate || !(params.step > 0.0) {
        return Vec::new();
    }
    let (w, h) = diff.dims();
    let mut thresholds = Vec::new();
    let mut t = match polarity {
        Polarity::Bright => bands.bright_min,
        Polarity::Dark => bands.dark_max,
    };
    while (0.0..=255.0).contains(&t) {
        thresholds.push(t);
        t += match polarity {
            Polarity::Bright => params.step,
            Polarity::Dark => -params.step,
        };
    }

    // Per threshold: components above the area floor with their centroids.
    let levels: Vec<Vec<Component>> = thresholds
        .iter()
        .map(|&t| {
            let mask = Mask::from_fn(w, h, |x, y| match polarity {
                Polarity::Bright => diff.get(x, y) > t,
                Polarity::Dark => diff.get(x, y) < t,
            });
            connected_components(&mask)
                .into_iter()
                .filter(|c| c.len() >= params.min_area)
                .map(|c| {
                    let cen = centroid(&c);
                    (c, cen)
                })
                .collect()
        })
        .collect();

    // `link[k][i]`: index of the component at level k+1 continuing component i.
    let mut has_pred: Vec<Vec<bool>> = levels.iter().map(|l| vec![false; l.len()]).collect();
    let mut link: Vec<Vec<Option<usize>>> = levels.iter().map(|l| vec![None; l.len()]).collect();
    for k in 0..levels.len().saturating_sub(1) {
        for (i, (_, ci)) in levels[k].iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (j, (_, cj)) in levels[k + 1].iter().enumerate() {
                if has_pred[k + 1][j] {
                    continue;
                }
                let d = (ci.0 - cj.0).hypot(ci.1 - cj.1);
                if d <= params.max_centroid_shift && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            if let Some((j, _)) = best {
                link[k][i] = Some(j);
                has_pred[k + 1][j] = true;
            }
        }
    }

    let mut out = Vec::new();
    for k in 0..levels.len() {
        for i in 0..levels[k].len() {
            if has_pred[k][i] {
                continue;
            }
            let mut len = 1;
            let (mut kk, mut ii) = (k, i);
            while let Some(j) = link[kk][ii] {
                len += 1;
                kk += 1;
                ii = j;
            }
            if len >= params.min_repeat.max(1) {
                out.push(
                    Region::new(levels[k][i].0.clone(), polarity).with_detectors(DetectorFlags {
                        mser: false,
                        simple_blob: true,
                    }),
                );
            }
        }
    }
    out.sort_by_key(|r| r.pixels()[0]);
    out
}

/// Union of both detectors' regions with provenance flags. MSER shapes are
/// kept; overlapping MSER regions collapse to the largest one; a simple blob
/// covering at least `merge_overlap` of the smaller of itself and an MSER
/// region marks that region as dual-detected, otherwise it is kept alone.
pub fn merge_detections(mser: Vec<Region>, simple: Vec<Region>) -> Vec<Region> {
    merge_with(mser, simple, SimpleBlobParams::default().merge_overlap)
}

pub(crate) fn merge_with(mut mser: Vec<Region>, simple: Vec<Region>, min_overlap: f64) -> Vec<Region> {
    let overlaps = |a: &Region, b: &Region| {
        let inter = a.overlap(b) as f64;
        inter > 0.0 && inter >= min_overlap * a.area_px().min(b.area_px()) as f64
    };
    mser.sort_by(|a, b| b.area_px().cmp(&a.area_px()).then(a.pixels()[0].cmp(&b.pixels()[0])));
    let mut kept: Vec<Region> = Vec::new();
    for r in mser {
        if !kept.iter().any(|k| overlaps(k, &r)) {
            kept.push(r);
        }
    }
    let mut extra = Vec::new();
    for s in simple {
        let mut matched = false;
        for k in kept.iter_mut() {
            if overlaps(k, &s) {
                k.detectors.simple_blob = true;
                matched = true;
            }
        }
        if !matched && !extra.iter().any(|e: &Region| overlaps(e, &s)) {
            extra.push(s);
        }
    }
    kept.extend(extra);
    kept.sort_by(|a, b| {
        let (ca, cb) = (a.centroid(), b.centroid());
        ca.1.total_cmp(&cb.1)
            .then(ca.0.total_cmp(&cb.0))
            .then(a.area_px().cmp(&b.area_px()))
    });
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blob::compute_thresholds;

    fn discs(size: usize, centers: &[(f64, f64)], r: f64, fg: f32) -> Raster {
        Raster::from_fn(size, size, |x, y| {
            if centers
                .iter()
                .any(|&(cx, cy)| (x as f64 - cx).hypot(y as f64 - cy) <= r)
            {
                fg
            } else {
                128.0
            }
        })
    }

    #[test]
    fn flat_raster_has_no_blobs() {
        let r = Raster::new(30, 30, 128.0);
        let b = compute_thresholds(&r);
        assert!(detect_simple_blobs(&r, &b, Polarity::Bright, &SimpleBlobParams::default()).is_empty());
    }

    #[test]
    fn one_disc_one_blob() {
        let img = discs(64, &[(30.0, 33.0)], 5.0, 200.0);
        let b = compute_thresholds(&img);
        let blobs = detect_simple_blobs(&img, &b, Polarity::Bright, &SimpleBlobParams::default());
        assert_eq!(blobs.len(), 1);
        let (cx, cy) = blobs[0].centroid();
        assert!((cx - 30.0).abs() <= 1.0 && (cy - 33.0).abs() <= 1.0);
        assert!(detect_simple_blobs(&img, &b, Polarity::Dark, &SimpleBlobParams::default()).is_empty());
    }

    #[test]
    fn close_discs_stay_separate() {
        // Radius 4 discs whose rims are 3 px apart.
        let img = discs(64, &[(20.0, 30.0), (31.0, 30.0)], 4.0, 200.0);
        let b = compute_thresholds(&img);
        let blobs = detect_simple_blobs(&img, &b, Polarity::Bright, &SimpleBlobParams::default());
        assert_eq!(blobs.len(), 2);
    }

    #[test]
    fn merge_flags_dual_detection() {
        let sq = |x0: i32, n: i32| {
            Region::new(
                (0..n)
                    .flat_map(|y| (0..n).map(move |x| Point::new(x0 + x, y)))
                    .collect(),
                Polarity::Bright,
            )
        };
        let m = vec![sq(0, 4).with_detectors(DetectorFlags {
            mser: true,
            simple_blob: false,
        })];
        let s = vec![
            sq(1, 3).with_detectors(DetectorFlags {
                mser: false,
                simple_blob: true,
            }),
            sq(20, 3).with_detectors(DetectorFlags {
                mser: false,
                simple_blob: true,
            }),
        ];
        let merged = merge_detections(m, s);
        assert_eq!(merged.len(), 2);
        assert!(merged.iter().any(|r| r.detectors.both() && r.area_px() == 16));
        assert!(merged.iter().any(|r| !r.detectors.mser && r.area_px() == 9));
    }
}
