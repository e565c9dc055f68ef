//! Shape extraction of candidate blocks from the difference image:
//! half-sigma threshold bands, MSER and threshold-sweep blob detection,
//! Canny edges, block–shadow pairing, edge refinement and marker-based
//! watershed on the 'after' image.

mod canny;
mod mser;
mod pairing;
mod simple;
mod watershed;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use canny::{canny_edges, canny_magnitude, CannyParams};
pub use mser::{detect_mser, MserParams};
pub use pairing::{finalize_candidates, pair_blocks_shadows, pairing_valid, refine_with_edges, PairingParams};
pub use simple::{detect_simple_blobs, merge_detections, SimpleBlobParams};
pub use watershed::{gradient_magnitude, watershed_refine};

use crate::error::Result;
use crate::io::LabelMap;
use crate::raster::{Raster, SunGeometry};
use crate::region::{Mask, Polarity, Region};

/// Smallest region kept anywhere in the chain, in pixels.
pub const MIN_REGION_AREA: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBands {
    /// Pixels strictly below this are dark.
    pub dark_max: f32,
    /// Pixels strictly above this are bright.
    pub bright_min: f32,
    pub mean: f64,
    pub sigma: f64,
    /// Zero spread: both bands are empty.
    pub degenerate: bool,
}

/// Bands half a standard deviation either side of the mean (population σ).
pub fn compute_thresholds(diff: &Raster) -> ThresholdBands {
    let mean = diff.mean();
    let sigma = diff.std_dev();
    let degenerate = sigma == 0.0;
    ThresholdBands {
        dark_max: (mean - 0.5 * sigma).round() as f32,
        bright_min: (mean + 0.5 * sigma).round() as f32,
        mean,
        sigma,
        degenerate,
    }
}

/// `(bright, dark)` masks: `v > bright_min` and `v < dark_max`.
pub fn threshold_bands(diff: &Raster, bands: &ThresholdBands) -> (Mask, Mask) {
    let (w, h) = diff.dims();
    if bands.degenerate {
        return (Mask::new(w, h), Mask::new(w, h));
    }
    (
        Mask::from_fn(w, h, |x, y| diff.get(x, y) > bands.bright_min),
        Mask::from_fn(w, h, |x, y| diff.get(x, y) < bands.dark_max),
    )
}

/// A bright block region with its optional shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCandidate {
    pub block: Region,
    pub shadow: Option<Region>,
    /// Azimuth from block centroid to shadow centroid, when paired.
    pub pair_angle_deg: Option<f64>,
}

impl BlockCandidate {
    pub fn unpaired(block: Region) -> Self {
        Self {
            block,
            shadow: None,
            pair_angle_deg: None,
        }
    }

    pub fn has_shadow(&self) -> bool {
        self.shadow.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BlobParams {
    pub mser: MserParams,
    pub simple: SimpleBlobParams,
    pub canny: CannyParams,
    pub pairing: PairingParams,
}

/// Intermediate products of one run of the chain, kept for debugging output.
#[derive(Debug, Clone)]
pub struct BlobChainOutput {
    pub bands: ThresholdBands,
    pub bright_mask: Mask,
    pub dark_mask: Mask,
    pub bright: Vec<Region>,
    pub dark: Vec<Region>,
    pub edges: Mask,
    pub paired: Vec<BlockCandidate>,
    pub refined: Vec<BlockCandidate>,
    pub candidates: Vec<BlockCandidate>,
}

/// Full shape chain for one tile: thresholds, both detectors per polarity,
/// pairing, edge refinement, watershed on the 'after' tile, final pairing check.
pub fn run_blob_chain(
    diff: &Raster,
    after: &Raster,
    sun: &SunGeometry,
    params: &BlobParams,
) -> Result<BlobChainOutput> {
    diff.check_same_dims(after)?;
    let bands = compute_thresholds(diff);
    let (bright_mask, dark_mask) = threshold_bands(diff, &bands);
    let detect = |pol: Polarity| -> Vec<Region> {
        let m = detect_mser(diff, pol, &params.mser);
        let s = detect_simple_blobs(diff, &bands, pol, &params.simple);
        merge_detections(m, s)
    };
    let bright = detect(Polarity::Bright);
    let dark = detect(Polarity::Dark);
    let edges = canny_edges(diff, &params.canny)?;
    let paired = pair_blocks_shadows(&bright, &dark, sun, &params.pairing);
    let refined: Vec<BlockCandidate> = paired.iter().map(|c| refine_with_edges(c, &edges, diff)).collect();
    let threshold_mask = bright_mask.or(&dark_mask);
    let flooded = watershed_refine(after, &threshold_mask, &refined);
    let candidates = finalize_candidates(flooded, sun, &params.pairing);
    log::debug!(
        "blob chain: {} bright, {} dark, {} paired, {} final",
        bright.len(),
        dark.len(),
        paired.len(),
        candidates.len()
    );
    Ok(BlobChainOutput {
        bands,
        bright_mask,
        dark_mask,
        bright,
        dark,
        edges,
        paired,
        refined,
        candidates,
    })
}

/// Label map with block `i` as `2i + 1` and its shadow as `2i + 2`.
pub fn candidate_label_map(width: usize, height: usize, candidates: &[BlockCandidate]) -> LabelMap {
    let mut map = LabelMap::new(width, height);
    for (i, c) in candidates.iter().enumerate() {
        let base = (2 * i + 1).min(u16::MAX as usize - 1) as u16;
        let mut paint = |r: &Region, label: u16| {
            for p in r.pixels() {
                if p.x >= 0 && p.y >= 0 && (p.x as usize) < width && (p.y as usize) < height {
                    map.set(p.x as usize, p.y as usize, label);
                }
            }
        };
        paint(&c.block, base);
        if let Some(s) = &c.shadow {
            paint(s, base + 1);
        }
    }
    map
}

/// `id,centroid_x,centroid_y,area_px,has_shadow,mser,simple_blob` per candidate.
pub fn write_candidates_csv(path: &Path, candidates: &[BlockCandidate]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "id,centroid_x,centroid_y,area_px,has_shadow,mser,simple_blob")?;
    for (i, c) in candidates.iter().enumerate() {
        let (cx, cy) = c.block.centroid();
        writeln!(
            f,
            "{},{:.3},{:.3},{},{},{},{}",
            i + 1,
            cx,
            cy,
            c.block.area_px(),
            c.has_shadow() as u8,
            c.block.detectors.mser as u8,
            c.block.detectors.simple_blob as u8
        )?;
    }
    f.flush()?;
    Ok(())
}
