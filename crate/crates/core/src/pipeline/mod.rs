//! End-to-end orchestration: manifests, model training, the tiled
//! detection run and its exports.

mod run;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use run::{
    detect_on_rasters, evaluate_files, prepare_pair, read_truth, run_pipeline, PreparedPair, RunOutput, RunRecord,
    StageCounts, StageTiming, TileFailure,
};
pub use train::{train_from_pairs, train_models, TrainingImage, TrainingManifest, TrainingPair, TrainingReport};

use crate::blob::BlobParams;
use crate::coregister::CoregisterConfig;
use crate::error::{Error, Result};
use crate::eval::MatchParams;
use crate::hog::HogLayout;
use crate::raster::{SunGeometry, DEFAULT_PIXEL_SCALE};
use crate::svm::{DetectParams, SvrParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingParams {
    /// Context added around each tile for detection and shape extraction,
    /// in original pixels. Only results centred in the tile itself are kept.
    pub halo_px: usize,
    /// Score only windows near blob candidates.
    pub gate_detection: bool,
    /// Extra reach of a gated window around a candidate centroid, original pixels.
    pub gate_margin_px: f64,
}

impl Default for TilingParams {
    fn default() -> Self {
        Self {
            halo_px: 16,
            gate_detection: true,
            gate_margin_px: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    /// Off: tiles are used as delivered, without translation.
    pub coregister: bool,
    /// Off: every blob candidate is accepted without the SVM rule.
    pub svm: bool,
    pub overlay: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            coregister: true,
            svm: true,
            overlay: true,
        }
    }
}

/// Every tunable of the chain, each defaulting to its reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub coregister: CoregisterConfig,
    pub hog: HogLayout,
    pub svr: SvrParams,
    pub detect: DetectParams,
    pub blob: BlobParams,
    pub matching: MatchParams,
    pub tiling: TilingParams,
    pub stages: StageToggles,
}

impl PipelineConfig {
    /// Read tunables from TOML; missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        parse_toml(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.hog.validate()?;
        self.detect.validate(&self.hog)?;
        if self.coregister.tile_size < 32 {
            return Err(Error::Validation(format!(
                "tile size {} is below the 32 px minimum",
                self.coregister.tile_size
            )));
        }
        if !(self.tiling.gate_margin_px >= 0.0) {
            return Err(Error::Validation("gate margin must be non-negative".into()));
        }
        if !(self.matching.iou_min > 0.0 && self.matching.iou_min <= 1.0) {
            return Err(Error::Validation(format!(
                "match IoU {} outside (0, 1]",
                self.matching.iou_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPaths {
    pub after: PathBuf,
    pub difference: PathBuf,
}

/// One before/after pair to process. Relative paths are resolved against
/// the manifest's directory by [`PairManifest::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub before: PathBuf,
    pub after: PathBuf,
    #[serde(default = "default_pixel_scale")]
    pub pixel_scale: f64,
    #[serde(default)]
    pub sun: SunGeometry,
    pub models: ModelPaths,
    pub output_dir: PathBuf,
    /// Optional truth (label PNG or box CSV) scored after the run.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(flatten)]
    pub config: PipelineConfig,
}

fn default_pixel_scale() -> f64 {
    DEFAULT_PIXEL_SCALE
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(p.to_path_buf()))
    }
}

impl PairManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: PairManifest = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.before = resolve(base, &m.before);
        m.after = resolve(base, &m.after);
        m.models.after = resolve(base, &m.models.after);
        m.models.difference = resolve(base, &m.models.difference);
        m.output_dir = resolve(base, &m.output_dir);
        m.truth = m.truth.map(|t| resolve(base, &t));
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Input files exist and every parameter is in range.
    pub fn validate(&self) -> Result<()> {
        require_file(&self.before)?;
        require_file(&self.after)?;
        if self.config.stages.svm {
            require_file(&self.models.after)?;
            require_file(&self.models.difference)?;
        }
        if let Some(t) = &self.truth {
            require_file(t)?;
        }
        if !(self.pixel_scale > 0.0 && self.pixel_scale.is_finite()) {
            return Err(Error::Validation(format!(
                "pixel scale {} must be positive",
                self.pixel_scale
            )));
        }
        SunGeometry::new(self.sun.azimuth_deg, self.sun.incidence_deg)?;
        self.config.validate()
    }
}
