//! Acceptance of blob candidates against the three SVM candidate maps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::blob::BlockCandidate;
use crate::error::Result;
use crate::io::to_bytes;
use crate::raster::Raster;
use crate::region::{Mask, Region};
use crate::svm::DetectionBox;

/// Which inputs fired for an accepted block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub after_svm: bool,
    pub diff_svm: bool,
    pub before_svm: bool,
    pub mser: bool,
    pub simple_blob: bool,
}

impl Provenance {
    /// Bit string `after diff before mser simple_blob`, e.g. `11010`.
    pub fn bits(&self) -> String {
        [
            self.after_svm,
            self.diff_svm,
            self.before_svm,
            self.mser,
            self.simple_blob,
        ]
        .iter()
        .map(|&b| if b { '1' } else { '0' })
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalBlock {
    /// Block pixels only; the shadow is not part of the shape.
    pub shape: Region,
    pub area_m2: f64,
    pub has_shadow: bool,
    pub provenance: Provenance,
    /// Set when the tile's co-registration did not converge.
    pub low_confidence_registration: bool,
    pub tile: usize,
}

impl FinalBlock {
    pub fn area_px(&self) -> usize {
        self.shape.area_px()
    }
}

/// Shadowed blocks need an 'after' or difference hit; shadow-less blocks
/// need both. Either way no 'before' box may cover the block.
pub fn acceptance_rule(has_shadow: bool, after_hit: bool, diff_hit: bool, before_hit: bool) -> bool {
    let svm = if has_shadow {
        after_hit || diff_hit
    } else {
        after_hit && diff_hit
    };
    svm && !before_hit
}

/// Region centroid in the continuous frame of detection boxes, where pixel
/// `(x, y)` spans `[x, x + 1) × [y, y + 1)`.
fn centre(r: &Region) -> (f64, f64) {
    let (cx, cy) = r.centroid();
    (cx + 0.5, cy + 0.5)
}

fn any_contains(boxes: &[DetectionBox], p: (f64, f64)) -> bool {
    boxes.iter().any(|b| b.contains(p.0, p.1))
}

/// Keep the candidates whose block centroid satisfies [`acceptance_rule`]
/// against the three box lists (all in the candidates' pixel frame).
pub fn fuse(
    candidates: &[BlockCandidate],
    before: &[DetectionBox],
    after: &[DetectionBox],
    diff: &[DetectionBox],
    pixel_scale: f64,
) -> Vec<FinalBlock> {
    candidates
        .iter()
        .filter_map(|c| {
            let p = centre(&c.block);
            let provenance = Provenance {
                after_svm: any_contains(after, p),
                diff_svm: any_contains(diff, p),
                before_svm: any_contains(before, p),
                mser: c.block.detectors.mser,
                simple_blob: c.block.detectors.simple_blob,
            };
            acceptance_rule(
                c.has_shadow(),
                provenance.after_svm,
                provenance.diff_svm,
                provenance.before_svm,
            )
            .then(|| FinalBlock {
                area_m2: c.block.area_px() as f64 * pixel_scale * pixel_scale,
                shape: c.block.clone(),
                has_shadow: c.has_shadow(),
                provenance,
                low_confidence_registration: false,
                tile: 0,
            })
        })
        .collect()
}

pub fn write_final_csv(path: &Path, blocks: &[FinalBlock]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(
        f,
        "id,tile,centroid_x,centroid_y,area_px,area_m2,has_shadow,provenance,low_confidence_registration"
    )?;
    for (i, b) in blocks.iter().enumerate() {
        let (cx, cy) = b.shape.centroid();
        writeln!(
            f,
            "{},{},{:.3},{:.3},{},{:.4},{},{},{}",
            i + 1,
            b.tile,
            cx,
            cy,
            b.area_px(),
            b.area_m2,
            b.has_shadow as u8,
            b.provenance.bits(),
            b.low_confidence_registration as u8
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Outline of `r`: its pixels with a 4-neighbour outside the region.
fn outline(r: &Region, w: usize, h: usize) -> Vec<(usize, usize)> {
    let m: Mask = r.to_mask(w, h);
    r.pixels()
        .iter()
        .filter(|p| p.x >= 0 && p.y >= 0 && (p.x as usize) < w && (p.y as usize) < h)
        .filter(|p| {
            [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|(dx, dy)| !m.get_signed(p.x as i64 + dx, p.y as i64 + dy))
        })
        .map(|p| (p.x as usize, p.y as usize))
        .collect()
}

/// Final blocks outlined in red over the 'after' image; outlines of
/// blocks in low-confidence tiles are drawn in yellow.
pub fn render_overlay(after: &Raster, blocks: &[FinalBlock]) -> RgbImage {
    let (w, h) = after.dims();
    let gray = to_bytes(after);
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = gray[y as usize * w + x as usize];
        Rgb([v, v, v])
    });
    for b in blocks {
        let colour = if b.low_confidence_registration {
            Rgb([255, 220, 0])
        } else {
            Rgb([255, 0, 0])
        };
        for (x, y) in outline(&b.shape, w, h) {
            img.put_pixel(x as u32, y as u32, colour);
        }
    }
    img
}

pub fn write_overlay_png(path: &Path, after: &Raster, blocks: &[FinalBlock]) -> Result<()> {
    render_overlay(after, blocks).save(path)?;
    Ok(())
}
