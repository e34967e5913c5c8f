//! Pipeline configuration file (TOML, one section per stage).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::EvalParams;
use crate::polygonize::SimplifyParams;
use crate::record::Source;
use crate::tiling::ScenePolicy;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub cloud: f64,
    pub probability: f64,
    pub overlap: f64,
    pub min_height_m: f64,
    pub dilation_m: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            cloud: 0.10,
            probability: 0.5,
            overlap: 0.1,
            min_height_m: 1.0,
            dilation_m: 250.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Acquisition {
    pub primary_year: i32,
    pub fallback_year: i32,
    /// Optional scene sidecar table for the mosaic stage.
    pub scenes: Option<PathBuf>,
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition {
            primary_year: 2019,
            fallback_year: 2018,
            scenes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolygonizeSection {
    pub tolerance_m: f64,
    pub min_area_m2: f64,
    pub min_ring_vertices: usize,
    pub regularize: bool,
}

impl Default for PolygonizeSection {
    fn default() -> Self {
        let s = SimplifyParams::default();
        PolygonizeSection {
            tolerance_m: s.tolerance_m,
            min_area_m2: s.min_area_m2,
            min_ring_vertices: s.min_ring_vertices,
            regularize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rasters {
    /// Building probability raster.
    pub probability: Option<PathBuf>,
    /// Shifted-window height predictions (1 to 4).
    pub height: Vec<PathBuf>,
    /// Built-up land-cover mask for false-positive filtering.
    pub landcover: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ground_truth: Option<PathBuf>,
    pub city: String,
    pub iou_resolution_m: f64,
    pub volume_cell_m: f64,
    pub area_ranked_ap: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = EvalParams::default();
        EvalSection {
            ground_truth: None,
            city: "city".into(),
            iou_resolution_m: p.iou_resolution_m,
            volume_cell_m: p.volume_cell_m,
            area_ranked_ap: p.area_ranked_ap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsSection {
    pub volume_cell_m: f64,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        AnalyticsSection {
            volume_cell_m: crate::analytics::DEFAULT_VOLUME_CELL_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Footprint files keyed by source label.
    pub sources: BTreeMap<String, PathBuf>,
    /// Administrative boundaries with `admin_id` and `continent`.
    pub admin: Option<PathBuf>,
    pub rasters: Rasters,
    pub thresholds: Thresholds,
    pub acquisition: Acquisition,
    pub polygonize: PolygonizeSection,
    pub eval: EvalSection,
    pub analytics: AnalyticsSection,
}

fn in_range(name: &str, v: f64, ok: bool, range: &str) -> Result<()> {
    if ok && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} outside {range}")))
    }
}

impl PipelineConfig {
    /// Parse without validation; relative paths stay relative.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    /// Read, resolve relative paths against the file's folder and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.sources.values_mut().for_each(fix);
        self.admin.iter_mut().for_each(fix);
        self.rasters.probability.iter_mut().for_each(fix);
        self.rasters.height.iter_mut().for_each(fix);
        self.rasters.landcover.iter_mut().for_each(fix);
        self.acquisition.scenes.iter_mut().for_each(fix);
        self.eval.ground_truth.iter_mut().for_each(fix);
    }

    /// Threshold ranges, then existence of every referenced path.
    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        in_range("thresholds.cloud", t.cloud, (0.0..=1.0).contains(&t.cloud), "[0, 1]")?;
        in_range("thresholds.probability", t.probability, t.probability > 0.0 && t.probability < 1.0, "(0, 1)")?;
        in_range("thresholds.overlap", t.overlap, t.overlap > 0.0 && t.overlap <= 1.0, "(0, 1]")?;
        in_range("thresholds.min_height_m", t.min_height_m, t.min_height_m >= 0.0, "[0, inf)")?;
        in_range("thresholds.dilation_m", t.dilation_m, t.dilation_m >= 0.0, "[0, inf)")?;
        let p = &self.polygonize;
        in_range("polygonize.tolerance_m", p.tolerance_m, p.tolerance_m >= 0.0, "[0, inf)")?;
        in_range("polygonize.min_area_m2", p.min_area_m2, p.min_area_m2 >= 0.0, "[0, inf)")?;
        if p.min_ring_vertices < 4 {
            return Err(Error::InvalidParameter("polygonize.min_ring_vertices must be >= 4".into()));
        }
        let e = &self.eval;
        in_range("eval.iou_resolution_m", e.iou_resolution_m, e.iou_resolution_m > 0.0, "(0, inf)")?;
        in_range("eval.volume_cell_m", e.volume_cell_m, e.volume_cell_m > 0.0, "(0, inf)")?;
        let a = &self.analytics;
        in_range("analytics.volume_cell_m", a.volume_cell_m, a.volume_cell_m > 0.0, "(0, inf)")?;
        if self.acquisition.fallback_year > self.acquisition.primary_year {
            return Err(Error::InvalidParameter("acquisition.fallback_year after primary_year".into()));
        }
        if self.rasters.height.len() > 4 {
            return Err(Error::InvalidParameter("rasters.height takes at most 4 layers".into()));
        }
        for label in self.sources.keys() {
            label.parse::<Source>()?;
        }
        for path in self.paths() {
            if !path.exists() {
                return Err(Error::MissingInput(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    fn paths(&self) -> Vec<&PathBuf> {
        let mut v: Vec<&PathBuf> = self.sources.values().collect();
        v.extend(&self.admin);
        v.extend(&self.rasters.probability);
        v.extend(&self.rasters.height);
        v.extend(&self.rasters.landcover);
        v.extend(&self.acquisition.scenes);
        v.extend(&self.eval.ground_truth);
        v
    }

    pub fn source_files(&self) -> Result<Vec<(Source, PathBuf)>> {
        self.sources
            .iter()
            .map(|(k, p)| Ok((k.parse()?, p.clone())))
            .collect()
    }

    pub fn simplify_params(&self) -> SimplifyParams {
        SimplifyParams {
            tolerance_m: self.polygonize.tolerance_m,
            min_area_m2: self.polygonize.min_area_m2,
            min_ring_vertices: self.polygonize.min_ring_vertices,
        }
    }

    pub fn scene_policy(&self) -> ScenePolicy {
        ScenePolicy {
            max_cloud: self.thresholds.cloud,
            primary_year: self.acquisition.primary_year,
            fallback_year: self.acquisition.fallback_year,
        }
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            iou_resolution_m: self.eval.iou_resolution_m,
            volume_cell_m: self.eval.volume_cell_m,
            min_height_m: self.thresholds.min_height_m,
            area_ranked_ap: self.eval.area_ranked_ap,
        }
    }
}
