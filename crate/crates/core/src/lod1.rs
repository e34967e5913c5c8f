//! Height assignment and LoD1 prism records.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{scan_polygon, RasterGrid, Semantic};
use crate::record::FootprintRecord;

/// Nodata sentinel used for aggregated height and variance rasters.
pub const NODATA: f64 = -9999.0;

/// Minimum height counted towards completeness.
pub const MIN_VALID_HEIGHT_M: f64 = 1.0;

/// Up to four height predictions of the same area from shifted windows.
#[derive(Debug, Clone)]
pub struct PredictionStack {
    layers: Vec<RasterGrid>,
}

impl PredictionStack {
    pub fn new(layers: Vec<RasterGrid>) -> Result<Self> {
        if layers.is_empty() || layers.len() > 4 {
            return Err(Error::InvalidParameter(format!(
                "prediction stack needs 1 to 4 layers, got {}",
                layers.len()
            )));
        }
        for l in &layers {
            l.expect_semantic(Semantic::HeightMeters)?;
            if !l.same_geometry(&layers[0]) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(PredictionStack { layers })
    }

    pub fn layers(&self) -> &[RasterGrid] {
        &self.layers
    }

    /// Number of valid layers at each pixel.
    pub fn coverage_count(&self) -> Vec<u8> {
        let n = self.layers[0].values.len();
        (0..n)
            .map(|i| {
                self.layers
                    .iter()
                    .filter(|l| !l.is_nodata(l.values[i]))
                    .count() as u8
            })
            .collect()
    }
}

/// Per-pixel mean and population variance over valid layers.
pub fn tta_aggregate(stack: &PredictionStack) -> (RasterGrid, RasterGrid) {
    let spec = stack.layers[0].spec;
    let n = spec.len();
    let mut mean = vec![NODATA; n];
    let mut var = vec![NODATA; n];
    for i in 0..n {
        let mut vals = [0.0f64; 4];
        let mut k = 0;
        for l in &stack.layers {
            let v = l.values[i];
            if !l.is_nodata(v) {
                vals[k] = v;
                k += 1;
            }
        }
        if k > 0 {
            let vals = &vals[..k];
            let m = vals.iter().sum::<f64>() / k as f64;
            mean[i] = m;
            var[i] = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k as f64;
        }
    }
    (
        RasterGrid {
            spec,
            values: mean,
            nodata: Some(NODATA),
            semantic: Semantic::HeightMeters,
        },
        RasterGrid {
            spec,
            values: var,
            nodata: Some(NODATA),
            semantic: Semantic::VarianceM2,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lod1Record {
    pub footprint: FootprintRecord,
    pub height_m: Option<f64>,
    pub uncertainty_m2: Option<f64>,
    pub volume_m3: Option<f64>,
}

impl Lod1Record {
    /// Heights below one meter are kept but flagged.
    pub fn has_valid_height(&self) -> bool {
        self.height_m.is_some_and(|h| h >= MIN_VALID_HEIGHT_M)
    }
}

/// Maximum clamped height over pixel centers inside the footprint, with
/// the variance at that pixel. The first pixel in row-major order wins
/// ties. Footprints containing no pixel center use the centroid's pixel.
pub fn assign_height(
    footprint: &FootprintRecord,
    height: &RasterGrid,
    variance: &RasterGrid,
) -> Lod1Record {
    let spec = height.spec;
    let mut best: Option<(f64, usize)> = None;
    let mut any_center = false;
    let mut consider = |c: usize, r: usize| {
        let idx = spec.index(c, r);
        if let Some(v) = height.valid(c, r) {
            let v = v.max(0.0);
            let better = match best {
                None => true,
                Some((bv, bi)) => v > bv || (v == bv && idx < bi),
            };
            if better {
                best = Some((v, idx));
            }
        }
    };
    scan_polygon(footprint.geometry.polygon(), &spec, |c, r| {
        any_center = true;
        consider(c, r);
    });
    if !any_center {
        let ctr = footprint.geometry.centroid();
        if let Some((c, r)) = spec.pixel_of(ctr.x, ctr.y) {
            consider(c, r);
        }
    }

    let (height_m, uncertainty_m2) = match best {
        None => (None, None),
        Some((h, idx)) => {
            let (c, r) = (idx % spec.width, idx / spec.width);
            let (x, y) = spec.pixel_center(c, r);
            let u = if variance.same_geometry(height) {
                variance.valid(c, r)
            } else {
                variance.sample(x, y)
            };
            (Some(h), u)
        }
    };
    let volume_m3 = height_m.map(|h| footprint.geometry.area_m2() * h);
    Lod1Record {
        footprint: footprint.clone(),
        height_m,
        uncertainty_m2,
        volume_m3,
    }
}

/// Heights for every record, plus the fraction with a height of at least
/// one meter (0 for an empty input).
pub fn build_lod1(
    fused: &[FootprintRecord],
    height: &RasterGrid,
    variance: &RasterGrid,
) -> (Vec<Lod1Record>, f64) {
    let records: Vec<Lod1Record> = fused
        .par_iter()
        .map(|f| assign_height(f, height, variance))
        .collect();
    let completeness = if records.is_empty() {
        0.0
    } else {
        records.iter().filter(|r| r.has_valid_height()).count() as f64 / records.len() as f64
    };
    (records, completeness)
}
