//! Linear ε-SVR block detector: training, persistence, scoring and
//! multi-scale sliding-window detection.

mod detect;
mod group;
mod train;

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use detect::{detect_multiscale, detect_raw, detect_raw_near, pyramid_depth, DetectParams};
pub use group::{group_detections, GroupParams};
pub use train::{dual_objective, fit_linear_svr, primal_objective, train_svr, LinearSvrFit, SvrParams};

use crate::error::{Error, Result};
use crate::hog::{read_layout, read_u32, write_layout, HogDescriptor, HogLayout, SampleSource};
use crate::region::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub positives: usize,
    pub negatives: usize,
    pub seed: u64,
    pub passes: usize,
    /// Primal objective ½‖w‖² + C·Σ ε-insensitive loss at the returned solution.
    pub objective: f64,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub layout: HogLayout,
    pub source: SampleSource,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epsilon: f64,
    pub c: f64,
    pub meta: TrainingMeta,
}

impl SvrModel {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.layout.descriptor_len() {
            return Err(Error::LengthMismatch {
                expected: self.layout.descriptor_len(),
                got: self.weights.len(),
            });
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("model weights are not finite".into()));
        }
        Ok(())
    }
}

/// Linear decision value `w·d + b`.
pub fn score(model: &SvrModel, d: &HogDescriptor) -> Result<f64> {
    if d.len() != model.weights.len() {
        return Err(Error::LengthMismatch {
            expected: model.weights.len(),
            got: d.len(),
        });
    }
    Ok(model
        .weights
        .iter()
        .zip(&d.values)
        .map(|(&w, &v)| w * v as f64)
        .sum::<f64>()
        + model.bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    Before,
    After,
    Difference,
}

impl MapSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            MapSource::Before => "before",
            MapSource::After => "after",
            MapSource::Difference => "difference",
        }
    }
}

/// Candidate region reported by the sliding-window detector, in original
/// (pre-enlargement) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub source: MapSource,
}

impl DetectionBox {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.bbox().contains(x, y)
    }

    pub fn iou(&self, o: &DetectionBox) -> f64 {
        self.bbox().iou(&o.bbox())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

pub fn write_detections_csv(path: &Path, boxes: &[DetectionBox]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "x,y,w,h,score,source")?;
    for b in boxes {
        writeln!(
            f,
            "{:.3},{:.3},{:.3},{:.3},{:.6},{}",
            b.x,
            b.y,
            b.w,
            b.h,
            b.score,
            b.source.as_str()
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_detections_csv(path: &Path) -> Result<Vec<DetectionBox>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

const MODEL_MAGIC: &[u8; 8] = b"BFSVRMDL";
const MODEL_VERSION: u32 = 1;

/// Little-endian: magic, version, layout (6 × u32), source (u8), epsilon, C
/// (f64), seed (u64), objective, duality gap (f64), positives, negatives,
/// passes, dimension (u32), weights (f64 × dimension), bias (f64).
pub fn write_model(path: &Path, model: &SvrModel) -> Result<()> {
    model.validate()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    write_layout(&mut w, &model.layout)?;
    w.write_all(&[match model.source {
        SampleSource::After => 0u8,
        SampleSource::Difference => 1u8,
    }])?;
    w.write_all(&model.epsilon.to_le_bytes())?;
    w.write_all(&model.c.to_le_bytes())?;
    w.write_all(&model.meta.seed.to_le_bytes())?;
    w.write_all(&model.meta.objective.to_le_bytes())?;
    w.write_all(&model.meta.duality_gap.to_le_bytes())?;
    for v in [
        model.meta.positives,
        model.meta.negatives,
        model.meta.passes,
        model.weights.len(),
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in &model.weights {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&model.bias.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_model(path: &Path) -> Result<SvrModel> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = BufReader::new(fs::File::open(path)?);
    let bad = |m: &str| Error::format(path, m);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MODEL_MAGIC {
        return Err(bad("not a model file"));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(bad(&format!("unsupported model version {version}")));
    }
    let layout = read_layout(&mut r)?;
    layout.validate().map_err(|_| bad("invalid layout"))?;
    let mut src = [0u8; 1];
    r.read_exact(&mut src)?;
    let source = match src[0] {
        0 => SampleSource::After,
        1 => SampleSource::Difference,
        _ => return Err(bad("unknown model source")),
    };
    let epsilon = read_f64(&mut r)?;
    let c = read_f64(&mut r)?;
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)?;
    let seed = u64::from_le_bytes(seed);
    let objective = read_f64(&mut r)?;
    let duality_gap = read_f64(&mut r)?;
    let positives = read_u32(&mut r)? as usize;
    let negatives = read_u32(&mut r)? as usize;
    let passes = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    if dim != layout.descriptor_len() {
        return Err(bad("weight length does not match layout"));
    }
    let mut weights = Vec::with_capacity(dim);
    for _ in 0..dim {
        weights.push(read_f64(&mut r).map_err(|_| bad("truncated weights"))?);
    }
    let bias = read_f64(&mut r).map_err(|_| bad("truncated bias"))?;
    let model = SvrModel {
        layout,
        source,
        weights,
        bias,
        epsilon,
        c,
        meta: TrainingMeta {
            positives,
            negatives,
            seed,
            passes,
            objective,
            duality_gap,
        },
    };
    model.validate()?;
    Ok(model)
}
