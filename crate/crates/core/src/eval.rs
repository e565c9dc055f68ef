//! Scoring against ground truth: one-to-one matching, TPR/FDR per size
//! class and the area regression of matched blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FinalBlock;
use crate::io::LabelMap;
use crate::region::{BoundingBox, Point, Polarity, Region};

/// A truth or predicted block. Coordinates are continuous: pixel `(x, y)`
/// spans `[x, x + 1) × [y, y + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub id: usize,
    pub shape: Option<Region>,
    pub bbox: BoundingBox,
    pub area_px: f64,
    pub centroid: (f64, f64),
}

pub type GroundTruthBlock = BlockRecord;

impl BlockRecord {
    pub fn from_region(id: usize, r: Region) -> Self {
        let (cx, cy) = r.centroid();
        Self {
            id,
            bbox: r.bbox(),
            area_px: r.area_px() as f64,
            centroid: (cx + 0.5, cy + 0.5),
            shape: Some(r),
        }
    }

    pub fn from_box(id: usize, bbox: BoundingBox, area_px: f64) -> Self {
        Self {
            id,
            centroid: (bbox.x + bbox.w / 2.0, bbox.y + bbox.h / 2.0),
            bbox,
            area_px,
            shape: None,
        }
    }

    pub fn from_final(id: usize, b: &FinalBlock) -> Self {
        Self::from_region(id, b.shape.clone())
    }

    fn contains_point(&self, p: (f64, f64)) -> bool {
        match &self.shape {
            Some(r) => r.contains(Point::new(p.0.floor() as i32, p.1.floor() as i32)),
            None => self.bbox.contains(p.0, p.1),
        }
    }

    /// Pixel IoU when both sides have shapes, box IoU otherwise.
    pub fn iou(&self, o: &BlockRecord) -> f64 {
        match (&self.shape, &o.shape) {
            (Some(a), Some(b)) => a.iou(b),
            _ => self.bbox.iou(&o.bbox),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    pub iou_min: f64,
    /// Also accept a prediction whose centroid falls inside the truth.
    pub centroid_inside: bool,
    /// Size-class boundary on actual area, m².
    pub large_area_m2: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            centroid_inside: true,
            large_area_m2: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub truth: usize,
    pub predicted: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching by descending IoU among admissible pairs.
/// Indices refer to positions in the input slices.
pub fn match_detections(truth: &[BlockRecord], predicted: &[BlockRecord], params: &MatchParams) -> Vec<Match> {
    let mut cands = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, p) in predicted.iter().enumerate() {
            if t.bbox.intersection(&p.bbox) <= 0.0 && !t.bbox.contains(p.centroid.0, p.centroid.1) {
                continue;
            }
            let iou = t.iou(p);
            if iou >= params.iou_min || (params.centroid_inside && t.contains_point(p.centroid)) {
                cands.push(Match {
                    truth: i,
                    predicted: j,
                    iou,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.truth.cmp(&b.truth))
            .then(a.predicted.cmp(&b.predicted))
    });
    let mut used_t = vec![false; truth.len()];
    let mut used_p = vec![false; predicted.len()];
    let mut out = Vec::new();
    for m in cands {
        if !used_t[m.truth] && !used_p[m.predicted] {
            used_t[m.truth] = true;
            used_p[m.predicted] = true;
            out.push(m);
        }
    }
    out.sort_by_key(|m| (m.truth, m.predicted));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub total_actual: usize,
    pub total_predicted: usize,
    pub true_positives: usize,
    pub tpr: f64,
    pub fdr: f64,
    /// No predictions: FDR reported as 0.
    pub fdr_degenerate: bool,
}

impl ClassMetrics {
    pub fn from_counts(name: &str, total_actual: usize, total_predicted: usize, true_positives: usize) -> Self {
        let tpr = if total_actual == 0 {
            0.0
        } else {
            100.0 * true_positives as f64 / total_actual as f64
        };
        let (fdr, fdr_degenerate) = if total_predicted == 0 {
            (0.0, true)
        } else {
            (
                100.0 * (total_predicted - true_positives) as f64 / total_predicted as f64,
                false,
            )
        };
        Self {
            name: name.to_string(),
            total_actual,
            total_predicted,
            true_positives,
            tpr,
            fdr,
            fdr_degenerate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaFit {
    pub slope: f64,
    pub offset: f64,
    pub r_squared: f64,
    pub mean_abs_error_px: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub area_fit: Option<AreaFit>,
}

/// Least-squares line `predicted = slope · actual + offset` with R² and the
/// mean absolute area error.
pub fn area_regression(pairs: &[(f64, f64)]) -> Result<AreaFit> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation(
            "area regression needs at least two distinct actual areas".into(),
        ));
    }
    let slope = sxy / sxx;
    let offset = my - slope * mx;
    let sse: f64 = pairs.iter().map(|p| (p.1 - slope * p.0 - offset).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let mae = pairs.iter().map(|p| (p.1 - p.0).abs()).sum::<f64>() / nf;
    Ok(AreaFit {
        slope,
        offset,
        r_squared,
        mean_abs_error_px: mae,
        n,
    })
}

/// Rates for all blocks and for blocks of actual area at least
/// `params.large_area_m2`. A prediction counts toward the size class when
/// its own area is in the class or its matched truth block is; true
/// positives of the class are matches whose truth block is in it.
pub fn compute_rates(
    matches: &[Match],
    truth: &[BlockRecord],
    predicted: &[BlockRecord],
    pixel_scale: f64,
    params: &MatchParams,
) -> MetricsReport {
    let large = |area_px: f64| area_px * pixel_scale * pixel_scale >= params.large_area_m2 - 1e-12;
    let mut matched_p = vec![None; predicted.len()];
    for m in matches {
        matched_p[m.predicted] = Some(m.truth);
    }
    let all = ClassMetrics::from_counts("all", truth.len(), predicted.len(), matches.len());
    let large_actual = truth.iter().filter(|t| large(t.area_px)).count();
    let large_tp = matches.iter().filter(|m| large(truth[m.truth].area_px)).count();
    let large_pred = predicted
        .iter()
        .zip(&matched_p)
        .filter(|(p, m)| large(p.area_px) || m.is_some_and(|t| large(truth[t].area_px)))
        .count();
    let name = format!("> {} m²", params.large_area_m2);
    let big = ClassMetrics::from_counts(&name, large_actual, large_pred, large_tp);
    let pairs: Vec<(f64, f64)> = matches
        .iter()
        .map(|m| (truth[m.truth].area_px, predicted[m.predicted].area_px))
        .collect();
    MetricsReport {
        classes: vec![all, big],
        area_fit: area_regression(&pairs).ok(),
    }
}

/// Plain-text table with the columns of the published results table.
pub fn format_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>12} {:>15} {:>14} {:>10} {:>10}",
        "class", "total actual", "total predicted", "true positives", "TPR (%)", "FDR (%)"
    );
    for c in &report.classes {
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>15} {:>14} {:>10.2} {:>10.2}{}",
            c.name,
            c.total_actual,
            c.total_predicted,
            c.true_positives,
            c.tpr,
            c.fdr,
            if c.fdr_degenerate { " (no predictions)" } else { "" }
        );
    }
    if let Some(f) = &report.area_fit {
        let _ = writeln!(
            s,
            "area fit: predicted = {:.3} * actual + {:.3}, R² = {:.3}, mean |error| = {:.2} px over {} blocks",
            f.slope, f.offset, f.r_squared, f.mean_abs_error_px, f.n
        );
    }
    s
}

pub fn write_report_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "class",
        "total_actual",
        "total_predicted",
        "true_positives",
        "tpr",
        "fdr",
        "fdr_degenerate",
    ])?;
    for c in &report.classes {
        w.write_record([
            c.name.clone(),
            c.total_actual.to_string(),
            c.total_predicted.to_string(),
            c.true_positives.to_string(),
            format!("{:.2}", c.tpr),
            format!("{:.2}", c.fdr),
            (c.fdr_degenerate as u8).to_string(),
        ])?;
    }
    if let Some(f) = &report.area_fit {
        w.write_record([
            "area_fit_slope".into(),
            format!("{:.6}", f.slope),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
        ])?;
        w.write_record([
            "area_fit_offset".into(),
            format!("{:.6}", f.offset),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
        ])?;
        w.write_record([
            "area_fit_r_squared".into(),
            format!("{:.6}", f.r_squared),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
        ])?;
        w.write_record([
            "area_fit_mae_px".into(),
            format!("{:.6}", f.mean_abs_error_px),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    id: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    area_px: Option<f64>,
}

/// Truth boxes from CSV with header `id,x,y,w,h[,area_px]`; the area
/// defaults to the box area.
pub fn read_truth_csv(path: &Path) -> Result<Vec<BlockRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: TruthRow = row?;
        let bbox = BoundingBox::new(r.x, r.y, r.w, r.h);
        out.push(BlockRecord::from_box(r.id, bbox, r.area_px.unwrap_or(bbox.area())));
    }
    Ok(out)
}

/// Truth shapes from a label map: each non-zero label is one block.
pub fn truth_from_labels(map: &LabelMap) -> Vec<BlockRecord> {
    let mut by_label: std::collections::BTreeMap<u16, Vec<Point>> = Default::default();
    for y in 0..map.height {
        for x in 0..map.width {
            let l = map.get(x, y);
            if l != 0 {
                by_label.entry(l).or_default().push(Point::new(x as i32, y as i32));
            }
        }
    }
    by_label
        .into_iter()
        .map(|(l, px)| BlockRecord::from_region(l as usize, Region::new(px, Polarity::Bright)))
        .collect()
}

/// Predicted blocks from a final-block CSV (`centroid_x`, `centroid_y`,
/// `area_px` columns); each becomes a square box of that area.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<BlockRecord>> {
    #[derive(Deserialize)]
    struct Row {
        id: usize,
        centroid_x: f64,
        centroid_y: f64,
        area_px: f64,
    }
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        let side = r.area_px.max(1.0).sqrt();
        let (cx, cy) = (r.centroid_x + 0.5, r.centroid_y + 0.5);
        let mut rec = BlockRecord::from_box(
            r.id,
            BoundingBox::new(cx - side / 2.0, cy - side / 2.0, side, side),
            r.area_px,
        );
        rec.centroid = (cx, cy);
        out.push(rec);
    }
    Ok(out)
}

pub fn write_report_text(path: &Path, report: &MetricsReport) -> Result<()> {
    fs::write(path, format_table(report))?;
    Ok(())
}
