use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_toml, prepare_pair, require_file, resolve, PipelineConfig};
use crate::error::{Error, Result};
use crate::hog::{extract_samples, read_annotations_csv, sample_footprint, Annotation, SampleSet, SampleSource};
use crate::io::read_raster;
use crate::raster::Raster;
use crate::region::Mask;
use crate::svm::{train_svr, write_model, SvrModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingImage {
    pub before: PathBuf,
    pub after: PathBuf,
    /// CSV `x,y,w,h,label` in 'after' pixel coordinates.
    pub annotations: PathBuf,
    /// Non-zero pixels are withheld from training.
    #[serde(default)]
    pub exclusion_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub images: Vec<TrainingImage>,
    pub after_model: PathBuf,
    pub diff_model: PathBuf,
    #[serde(flatten)]
    pub config: PipelineConfig,
}

impl TrainingManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: TrainingManifest = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for img in &mut m.images {
            img.before = resolve(base, &img.before);
            img.after = resolve(base, &img.after);
            img.annotations = resolve(base, &img.annotations);
            img.exclusion_mask = img.exclusion_mask.as_ref().map(|p| resolve(base, p));
        }
        m.after_model = resolve(base, &m.after_model);
        m.diff_model = resolve(base, &m.diff_model);
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Validation("training manifest lists no images".into()));
        }
        for img in &self.images {
            require_file(&img.before)?;
            require_file(&img.after)?;
            require_file(&img.annotations)?;
            if let Some(m) = &img.exclusion_mask {
                require_file(m)?;
            }
        }
        self.config.validate()
    }
}

/// One annotated image pair held in memory.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub before: Raster,
    pub after: Raster,
    pub annotations: Vec<Annotation>,
    pub exclusion: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub after: SvrModel,
    pub difference: SvrModel,
    /// Annotations dropped for touching an exclusion mask.
    pub excluded: usize,
}

fn footprint_hits(a: &Annotation, mask: &Mask, config: &PipelineConfig) -> bool {
    let (x, y, w, h) = sample_footprint(a, &config.hog, mask.width(), mask.height());
    let probe = Annotation {
        x: x as i64,
        y: y as i64,
        w: w as i64,
        h: h as i64,
        label: a.label,
    };
    probe.intersects(mask)
}

/// Train the 'after' and difference models. Each pair is co-registered to
/// form its difference image; annotations whose sampled window touches the
/// exclusion mask are skipped.
pub fn train_from_pairs(pairs: &[TrainingPair], config: &PipelineConfig) -> Result<TrainingReport> {
    config.validate()?;
    let mut after_set = SampleSet::new(config.hog, SampleSource::After);
    let mut diff_set = SampleSet::new(config.hog, SampleSource::Difference);
    let mut excluded = 0;
    for p in pairs {
        let kept: Vec<Annotation> = match &p.exclusion {
            Some(m) => {
                if m.width() != p.after.width() || m.height() != p.after.height() {
                    return Err(Error::DimensionMismatch(
                        m.width(),
                        m.height(),
                        p.after.width(),
                        p.after.height(),
                    ));
                }
                p.annotations
                    .iter()
                    .filter(|a| !footprint_hits(a, m, config))
                    .copied()
                    .collect()
            }
            None => p.annotations.clone(),
        };
        excluded += p.annotations.len() - kept.len();
        let prepared = prepare_pair(&p.before, &p.after, config)?;
        after_set.extend(extract_samples(
            &prepared.after,
            &kept,
            &config.hog,
            SampleSource::After,
        )?);
        diff_set.extend(extract_samples(
            &prepared.difference,
            &kept,
            &config.hog,
            SampleSource::Difference,
        )?);
    }
    log::info!(
        "training on {} positive / {} negative windows per map, {excluded} annotations excluded",
        after_set.positives.len(),
        after_set.negatives.len()
    );
    Ok(TrainingReport {
        after: train_svr(&after_set, &config.svr)?,
        difference: train_svr(&diff_set, &config.svr)?,
        excluded,
    })
}

fn read_mask(path: &Path) -> Result<Mask> {
    let r = read_raster(path)?;
    Ok(Mask::from_fn(r.width(), r.height(), |x, y| r.get(x, y) > 0.0))
}

/// Train both models from a manifest and write them to its model paths.
pub fn train_models(manifest: &TrainingManifest) -> Result<TrainingReport> {
    manifest.validate()?;
    let pairs = manifest
        .images
        .iter()
        .map(|img| {
            Ok(TrainingPair {
                before: read_raster(&img.before)?,
                after: read_raster(&img.after)?,
                annotations: read_annotations_csv(&img.annotations)?,
                exclusion: img.exclusion_mask.as_deref().map(read_mask).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = train_from_pairs(&pairs, &manifest.config)?;
    for p in [&manifest.after_model, &manifest.diff_model] {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
    }
    write_model(&manifest.after_model, &report.after)?;
    write_model(&manifest.diff_model, &report.difference)?;
    Ok(report)
}
