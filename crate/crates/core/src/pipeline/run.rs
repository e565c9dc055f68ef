use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require_file, PairManifest, PipelineConfig};
use crate::blob::{candidate_label_map, run_blob_chain, write_candidates_csv, BlockCandidate};
use crate::coregister::{
    assemble_aligned, coregister_pair, tile_grid, write_alignment_csv, Tile, TileAlignment, TileStatus,
};
use crate::error::{Error, Result};
use crate::eval::{self, BlockRecord, MatchParams, MetricsReport};
use crate::fusion::{fuse, write_final_csv, write_overlay_png, FinalBlock};
use crate::io::{read_label_png, read_raster, write_label_png, write_png, LabelMap};
use crate::raster::{difference_image, upscale, Raster, SunGeometry, Translation};
use crate::region::{Mask, Point};
use crate::svm::{
    detect_raw, detect_raw_near, group_detections, read_model, write_detections_csv, DetectionBox, MapSource, SvrModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub tiles: usize,
    pub low_confidence_tiles: usize,
    pub failed_tiles: usize,
    pub svm_boxes_before: usize,
    pub svm_boxes_after: usize,
    pub svm_boxes_difference: usize,
    pub blob_candidates: usize,
    pub final_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileFailure {
    pub tile_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub manifest: Option<PairManifest>,
    pub alignment: Vec<TileAlignment>,
    pub counts: StageCounts,
    /// Summed over tiles, in dataflow order.
    pub timings: Vec<StageTiming>,
    pub failures: Vec<TileFailure>,
    pub metrics: Option<eval::MetricsReport>,
}

/// Co-registered inputs on the full image grid.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub after: Raster,
    /// 'before' with each tile resampled by its own translation.
    pub aligned_before: Raster,
    pub difference: Raster,
    pub alignment: Vec<TileAlignment>,
}

/// Align tile by tile (or not at all when the stage is off) and form the
/// difference image.
pub fn prepare_pair(before: &Raster, after: &Raster, config: &PipelineConfig) -> Result<PreparedPair> {
    before.check_same_dims(after)?;
    let alignment = if config.stages.coregister {
        coregister_pair(before, after, &config.coregister)?.log()
    } else {
        let grid = tile_grid(after.width(), after.height(), config.coregister.tile_size)?;
        grid.tiles
            .iter()
            .enumerate()
            .map(|(i, &tile)| TileAlignment {
                tile_index: i,
                tile,
                translation: Translation::default(),
                correlation: 0.0,
                iterations: 0,
                converged: false,
                status: TileStatus::NotConverged,
            })
            .collect()
    };
    let aligned_before = assemble_aligned(before, &alignment);
    let difference = difference_image(&aligned_before, after)?;
    Ok(PreparedPair {
        after: after.clone(),
        aligned_before,
        difference,
        alignment,
    })
}

#[derive(Debug, Clone, Default)]
struct TileOutput {
    boxes: [Vec<DetectionBox>; 3],
    candidates: Vec<BlockCandidate>,
    blocks: Vec<FinalBlock>,
    bright: Vec<Point>,
    dark: Vec<Point>,
    edges: Vec<Point>,
    svm_time: Duration,
    blob_time: Duration,
    fusion_time: Duration,
}

fn translate_candidate(c: &BlockCandidate, dx: i32, dy: i32) -> BlockCandidate {
    BlockCandidate {
        block: c.block.translated(dx, dy),
        shadow: c.shadow.as_ref().map(|s| s.translated(dx, dy)),
        pair_angle_deg: c.pair_angle_deg,
    }
}

fn mask_points(m: &Mask, dx: usize, dy: usize, core: &Tile) -> Vec<Point> {
    let mut out = Vec::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            let (gx, gy) = (x + dx, y + dy);
            if m.get(x, y) && core.contains(gx as f64, gy as f64) {
                out.push(Point::new(gx as i32, gy as i32));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn process_tile(
    pair: &PreparedPair,
    entry: &TileAlignment,
    models: Option<(&SvrModel, &SvrModel)>,
    sun: &SunGeometry,
    pixel_scale: f64,
    config: &PipelineConfig,
    keep_masks: bool,
) -> Result<TileOutput> {
    let core = entry.tile;
    let (w, h) = pair.after.dims();
    let halo = config.tiling.halo_px;
    let x0 = core.origin_x.saturating_sub(halo);
    let y0 = core.origin_y.saturating_sub(halo);
    let x1 = (core.origin_x + core.width + halo).min(w);
    let y1 = (core.origin_y + core.height + halo).min(h);
    let (rw, rh) = (x1 - x0, y1 - y0);
    let after = pair.after.crop(x0, y0, rw, rh)?;
    let before = pair.aligned_before.crop(x0, y0, rw, rh)?;
    let diff = pair.difference.crop(x0, y0, rw, rh)?;
    let mut out = TileOutput::default();

    let t = Instant::now();
    let chain = run_blob_chain(&diff, &after, sun, &config.blob)?;
    let candidates: Vec<BlockCandidate> = chain
        .candidates
        .iter()
        .map(|c| translate_candidate(c, x0 as i32, y0 as i32))
        .filter(|c| {
            let (cx, cy) = c.block.centroid();
            core.contains(cx + 0.5, cy + 0.5)
        })
        .collect();
    if keep_masks {
        out.bright = mask_points(&chain.bright_mask, x0, y0, &core);
        out.dark = mask_points(&chain.dark_mask, x0, y0, &core);
        out.edges = mask_points(&chain.edges, x0, y0, &core);
    }
    out.blob_time = t.elapsed();

    let t = Instant::now();
    if let Some((after_model, diff_model)) = models {
        // Candidate centroids in the region's own frame.
        let points: Vec<(f64, f64)> = candidates
            .iter()
            .map(|c| {
                let (cx, cy) = c.block.centroid();
                (cx + 0.5 - x0 as f64, cy + 0.5 - y0 as f64)
            })
            .collect();
        let gate = config.tiling.gate_detection;
        if !(gate && points.is_empty()) {
            let maps = [
                (&before, after_model, MapSource::Before),
                (&after, after_model, MapSource::After),
                (&diff, diff_model, MapSource::Difference),
            ];
            for (k, (img, model, source)) in maps.into_iter().enumerate() {
                let big = upscale(img, config.detect.enlargement)?;
                let raw = if gate {
                    detect_raw_near(
                        &big,
                        model,
                        &config.detect,
                        source,
                        &points,
                        config.tiling.gate_margin_px,
                    )?
                } else {
                    detect_raw(&big, model, &config.detect, source)?
                };
                out.boxes[k] = group_detections(&raw, &config.detect.group)
                    .into_iter()
                    .map(|b| b.translated(x0 as f64, y0 as f64))
                    .collect();
            }
        }
    }
    out.svm_time = t.elapsed();

    let t = Instant::now();
    let mut blocks = if models.is_some() {
        fuse(&candidates, &out.boxes[0], &out.boxes[1], &out.boxes[2], pixel_scale)
    } else {
        fuse_unconditionally(&candidates, pixel_scale)
    };
    for b in &mut blocks {
        b.tile = entry.tile_index;
        b.low_confidence_registration = entry.status.low_confidence();
    }
    out.blocks = blocks;
    out.candidates = candidates;
    out.fusion_time = t.elapsed();
    Ok(out)
}

fn fuse_unconditionally(candidates: &[BlockCandidate], pixel_scale: f64) -> Vec<FinalBlock> {
    candidates
        .iter()
        .map(|c| FinalBlock {
            shape: c.block.clone(),
            area_m2: c.block.area_px() as f64 * pixel_scale * pixel_scale,
            has_shadow: c.has_shadow(),
            provenance: crate::fusion::Provenance {
                mser: c.block.detectors.mser,
                simple_blob: c.block.detectors.simple_blob,
                ..Default::default()
            },
            low_confidence_registration: false,
            tile: 0,
        })
        .collect()
}

/// Everything a run produces before it is written out.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub prepared: PreparedPair,
    pub blocks: Vec<FinalBlock>,
    pub candidates: Vec<BlockCandidate>,
    pub boxes_before: Vec<DetectionBox>,
    pub boxes_after: Vec<DetectionBox>,
    pub boxes_difference: Vec<DetectionBox>,
    pub bright_mask: Mask,
    pub dark_mask: Mask,
    pub edges: Mask,
}

/// The detection chain on in-memory rasters: co-registration, difference,
/// then per tile (with halo) shape extraction, SVM detection and fusion.
/// `models` is `(after_model, diff_model)`; the 'before' map is scored with
/// the 'after' model. A failing tile is logged and left empty.
pub fn detect_on_rasters(
    before: &Raster,
    after: &Raster,
    models: Option<(&SvrModel, &SvrModel)>,
    sun: &SunGeometry,
    pixel_scale: f64,
    config: &PipelineConfig,
) -> Result<RunOutput> {
    config.validate()?;
    let t = Instant::now();
    let prepared = prepare_pair(before, after, config)?;
    let coreg_time = t.elapsed();
    let models = if config.stages.svm { models } else { None };
    if config.stages.svm && models.is_none() {
        return Err(Error::Validation("SVM stage is on but no models were given".into()));
    }

    let results: Vec<Result<TileOutput>> = prepared
        .alignment
        .par_iter()
        .map(|entry| process_tile(&prepared, entry, models, sun, pixel_scale, config, true))
        .collect();

    let (w, h) = after.dims();
    let mut counts = StageCounts {
        tiles: prepared.alignment.len(),
        low_confidence_tiles: prepared.alignment.iter().filter(|a| a.status.low_confidence()).count(),
        ..Default::default()
    };
    let mut failures = Vec::new();
    let mut blocks = Vec::new();
    let mut candidates = Vec::new();
    let mut boxes: [Vec<DetectionBox>; 3] = Default::default();
    let (mut bright, mut dark, mut edges) = (Mask::new(w, h), Mask::new(w, h), Mask::new(w, h));
    let (mut svm_time, mut blob_time, mut fusion_time) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    for (entry, r) in prepared.alignment.iter().zip(results) {
        match r {
            Ok(o) => {
                for (acc, b) in boxes.iter_mut().zip(o.boxes) {
                    acc.extend(b);
                }
                candidates.extend(o.candidates);
                blocks.extend(o.blocks);
                bright.set_pixels(&o.bright);
                dark.set_pixels(&o.dark);
                edges.set_pixels(&o.edges);
                svm_time += o.svm_time;
                blob_time += o.blob_time;
                fusion_time += o.fusion_time;
            }
            Err(e) => {
                log::warn!("tile {} failed: {e}", entry.tile_index);
                failures.push(TileFailure {
                    tile_index: entry.tile_index,
                    error: e.to_string(),
                });
            }
        }
    }
    counts.failed_tiles = failures.len();
    counts.svm_boxes_before = boxes[0].len();
    counts.svm_boxes_after = boxes[1].len();
    counts.svm_boxes_difference = boxes[2].len();
    counts.blob_candidates = candidates.len();
    counts.final_blocks = blocks.len();
    let secs = |d: Duration| d.as_secs_f64();
    let timings = vec![
        StageTiming {
            stage: "coregister+difference".into(),
            seconds: secs(coreg_time),
        },
        StageTiming {
            stage: "svm".into(),
            seconds: secs(svm_time),
        },
        StageTiming {
            stage: "blob".into(),
            seconds: secs(blob_time),
        },
        StageTiming {
            stage: "fusion".into(),
            seconds: secs(fusion_time),
        },
    ];
    let [boxes_before, boxes_after, boxes_difference] = boxes;
    Ok(RunOutput {
        record: RunRecord {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            manifest: None,
            alignment: prepared.alignment.clone(),
            counts,
            timings,
            failures,
            metrics: None,
        },
        prepared,
        blocks,
        candidates,
        boxes_before,
        boxes_after,
        boxes_difference,
        bright_mask: bright,
        dark_mask: dark,
        edges,
    })
}

/// Label map of final blocks, block `i` labelled `i + 1`.
pub(crate) fn final_label_map(w: usize, h: usize, blocks: &[FinalBlock]) -> LabelMap {
    let mut map = LabelMap::new(w, h);
    for (i, b) in blocks.iter().enumerate() {
        for p in b.shape.pixels() {
            if p.x >= 0 && p.y >= 0 && (p.x as usize) < w && (p.y as usize) < h {
                map.set(p.x as usize, p.y as usize, (i + 1).min(u16::MAX as usize) as u16);
            }
        }
    }
    map
}

fn write_mask_png(path: &Path, m: &Mask) -> Result<()> {
    let r = Raster::from_fn(m.width(), m.height(), |x, y| if m.get(x, y) { 255.0 } else { 0.0 });
    write_png(path, &r)
}

/// Truth from a label PNG or a box CSV, chosen by extension.
/// Truth blocks from a label PNG or, for a `.csv` extension, a box list.
pub fn read_truth(path: &Path) -> Result<Vec<BlockRecord>> {
    if is_csv(path) {
        eval::read_truth_csv(path)
    } else {
        Ok(eval::truth_from_labels(&read_label_png(path)?))
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn score(truth: &[BlockRecord], predicted: &[BlockRecord], pixel_scale: f64, params: &MatchParams) -> MetricsReport {
    let matches = eval::match_detections(truth, predicted, params);
    eval::compute_rates(&matches, truth, predicted, pixel_scale, params)
}

/// Score predictions against truth and write `metrics.csv` and `metrics.txt`
/// to `output_dir`. Predictions are a label PNG (such as `final_labels.png`,
/// matched by pixel IoU) or a `final_blocks.csv`, matched by boxes.
pub fn evaluate_files(
    truth: &Path,
    predictions: &Path,
    pixel_scale: f64,
    params: &MatchParams,
    output_dir: &Path,
) -> Result<MetricsReport> {
    require_file(truth)?;
    require_file(predictions)?;
    if !(pixel_scale > 0.0 && pixel_scale.is_finite()) {
        return Err(Error::Validation(format!("pixel scale {pixel_scale} must be positive")));
    }
    let truth = read_truth(truth)?;
    let predicted = if is_csv(predictions) {
        eval::read_predictions_csv(predictions)?
    } else {
        eval::truth_from_labels(&read_label_png(predictions)?)
    };
    let report = score(&truth, &predicted, pixel_scale, params);
    fs::create_dir_all(output_dir)?;
    eval::write_report_csv(&output_dir.join("metrics.csv"), &report)?;
    eval::write_report_text(&output_dir.join("metrics.txt"), &report)?;
    Ok(report)
}

/// Run the manifest end to end and write its outputs; with `debug` the
/// intermediate maps are written too.
pub fn run_pipeline(manifest: &PairManifest, debug: bool) -> Result<RunOutput> {
    manifest.validate()?;
    let before = read_raster(&manifest.before)?;
    let after = read_raster(&manifest.after)?;
    before.check_same_dims(&after)?;
    let models = if manifest.config.stages.svm {
        let a = read_model(&manifest.models.after)?;
        let d = read_model(&manifest.models.difference)?;
        for m in [&a, &d] {
            if m.layout != manifest.config.hog {
                return Err(Error::Validation(
                    "model HOG layout differs from the configured layout".into(),
                ));
            }
        }
        Some((a, d))
    } else {
        None
    };
    let truth = manifest.truth.as_deref().map(read_truth).transpose()?;

    let mut out = detect_on_rasters(
        &before,
        &after,
        models.as_ref().map(|(a, d)| (a, d)),
        &manifest.sun,
        manifest.pixel_scale,
        &manifest.config,
    )?;
    out.record.manifest = Some(manifest.clone());

    let t = Instant::now();
    let dir = &manifest.output_dir;
    fs::create_dir_all(dir)?;
    let (w, h) = after.dims();
    write_alignment_csv(&dir.join("alignment.csv"), &out.prepared.alignment)?;
    write_final_csv(&dir.join("final_blocks.csv"), &out.blocks)?;
    write_label_png(&dir.join("final_labels.png"), &final_label_map(w, h, &out.blocks))?;
    write_candidates_csv(&dir.join("candidates.csv"), &out.candidates)?;
    write_detections_csv(&dir.join("detections_before.csv"), &out.boxes_before)?;
    write_detections_csv(&dir.join("detections_after.csv"), &out.boxes_after)?;
    write_detections_csv(&dir.join("detections_difference.csv"), &out.boxes_difference)?;
    if manifest.config.stages.overlay {
        write_overlay_png(&dir.join("overlay.png"), &after, &out.blocks)?;
    }
    if debug {
        write_png(&dir.join("aligned_before.png"), &out.prepared.aligned_before)?;
        write_png(&dir.join("difference.png"), &out.prepared.difference)?;
        write_label_png(
            &dir.join("candidate_labels.png"),
            &candidate_label_map(w, h, &out.candidates),
        )?;
        write_mask_png(&dir.join("threshold_bright.png"), &out.bright_mask)?;
        write_mask_png(&dir.join("threshold_dark.png"), &out.dark_mask)?;
        write_mask_png(&dir.join("edges.png"), &out.edges)?;
    }
    if let Some(truth) = truth {
        let predicted: Vec<BlockRecord> = out
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| BlockRecord::from_final(i + 1, b))
            .collect();
        let report = score(&truth, &predicted, manifest.pixel_scale, &manifest.config.matching);
        eval::write_report_csv(&dir.join("metrics.csv"), &report)?;
        eval::write_report_text(&dir.join("metrics.txt"), &report)?;
        out.record.metrics = Some(report);
    }
    out.record.timings.push(StageTiming {
        stage: "export".into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    let json = serde_json::to_string_pretty(&out.record).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(dir.join("run_record.json"), json)?;
    Ok(out)
}
