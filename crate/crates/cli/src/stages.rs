//! Pipeline stages shared by the individual subcommands and `pipeline`.

use std::collections::BTreeMap;
use std::path::Path;

use gba_core::fusion::{fuse_units_with, AdminUnit, FusionOutcome, SourceStore};
use gba_core::geom::{BBox, GeoPolygon};
use gba_core::io::features::{read_footprints, write_file, write_footprints, write_lod1, ReadReport};
use gba_core::io::geotiff::{read_raster_as, read_raster_bands, write_raster, write_raster_bands, SampleType};
use gba_core::io::tables::{fmt_opt, write_contributions, write_csv, write_eval_reports, write_lod1_table, SceneRow};
use gba_core::lod1::{build_lod1, tta_aggregate, Lod1Record, PredictionStack};
use gba_core::metrics::{evaluate, EvalFrame, EvalParams, EvalReport};
use gba_core::polygonize::{
    filter_false_positives, regularize_mask, simplify, threshold_mask, trace_polygons, FilterReport, SimplifyParams,
    Simplified,
};
use gba_core::raster::{GridSpec, RasterGrid, Semantic};
use gba_core::record::{FootprintRecord, Source};
use gba_core::tiling::{assign_priorities, default_scene_order, filter_scenes, mosaic_selection, apply_selection, tile_of, SceneEntry, ScenePolicy, TileId};
use rayon::prelude::*;
use serde_json::{json, Map};

use crate::{CliResult, Failure};

pub fn in_tile(rec: &FootprintRecord, tile: TileId) -> bool {
    let c = rec.geometry.centroid();
    tile_of(c.x, c.y).is_ok_and(|t| t == tile)
}

/// Read a footprint file, keeping records inside `tile` when given.
pub fn load_footprints(
    path: &Path,
    source: Option<Source>,
    tile: Option<TileId>,
    reports: &mut Vec<ReadReport>,
) -> CliResult<Vec<FootprintRecord>> {
    let (mut recs, report) = read_footprints(path, source)?;
    reports.push(report);
    if let Some(t) = tile {
        recs.retain(|r| in_tile(r, t));
    }
    Ok(recs)
}

/// Rejected records of every file read, one row each.
pub fn write_rejections(path: &Path, reports: &[ReadReport]) -> CliResult {
    let rows = reports.iter().flat_map(|r| {
        let file = r.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        r.rejected
            .iter()
            .map(move |x| vec![file.clone(), x.line.to_string(), x.id.clone().unwrap_or_default(), x.reason.clone()])
    });
    let rows: Vec<Vec<String>> = rows.collect();
    Ok(write_file(path, |w| write_csv(w, &["file", "line", "id", "reason"], rows))?)
}

// ---------------------------------------------------------------------------
// mosaic

/// Part of `spec` overlapping `b`, aligned to its pixels.
pub fn crop_spec(spec: &GridSpec, b: &BBox) -> Option<GridSpec> {
    let gb = spec.bbox();
    if !gb.intersects(b) {
        return None;
    }
    let c0 = ((b.min_x.max(gb.min_x) - spec.origin.0) / spec.pixel_size.0).floor() as usize;
    let c1 = ((b.max_x.min(gb.max_x) - spec.origin.0) / spec.pixel_size.0).ceil() as usize;
    let r0 = ((spec.origin.1 - b.max_y.min(gb.max_y)) / spec.pixel_size.1).floor() as usize;
    let r1 = ((spec.origin.1 - b.min_y.max(gb.min_y)) / spec.pixel_size.1).ceil() as usize;
    let (c1, r1) = (c1.min(spec.width), r1.min(spec.height));
    if c1 <= c0 || r1 <= r0 {
        return None;
    }
    GridSpec::new(
        (spec.origin.0 + c0 as f64 * spec.pixel_size.0, spec.origin.1 - r0 as f64 * spec.pixel_size.1),
        spec.pixel_size,
        c1 - c0,
        r1 - r0,
        spec.units,
    )
    .ok()
}

pub struct MosaicOutput {
    pub bands: Vec<RasterGrid>,
    /// Scene ids in priority order.
    pub used: Vec<String>,
}

pub fn mosaic(rows: &[SceneRow], policy: &ScenePolicy, target: Option<GridSpec>, tile: Option<TileId>) -> CliResult<MosaicOutput> {
    let mut scenes = Vec::new();
    let mut bands_of: BTreeMap<String, Vec<RasterGrid>> = BTreeMap::new();
    for row in rows {
        let mut bands = read_raster_bands(&row.path, Some(Semantic::Reflectance))?;
        let mask = read_raster_as(&row.mask_path, Some(Semantic::BinaryMask))?;
        let first = bands.remove(0);
        scenes.push(SceneEntry::new(row.scene_id.clone(), first.clone(), mask, row.cloud_fraction, row.year)?);
        bands.insert(0, first);
        bands_of.insert(row.scene_id.clone(), bands);
    }
    let mut kept = filter_scenes(scenes, policy);
    if kept.is_empty() {
        return Err(Failure::invalid("no scene passes the cloud and year filter"));
    }
    assign_priorities(&mut kept, default_scene_order);
    kept.sort_by_key(|s| s.priority);
    let n_bands = bands_of[&kept[0].id].len();
    if kept.iter().any(|s| bands_of[&s.id].len() != n_bands) {
        return Err(Failure::invalid("scenes have different band counts"));
    }
    let mut target = target.unwrap_or(kept[0].raster.spec);
    if let Some(t) = tile {
        target = crop_spec(&target, &t.bounds()).ok_or_else(|| Failure::invalid(format!("tile {t} does not overlap the target grid")))?;
    }
    let selection = mosaic_selection(&kept, &target);
    let nodata = kept[0].raster.nodata;
    let bands = (0..n_bands)
        .map(|b| {
            let rasters: Vec<&RasterGrid> = kept.iter().map(|s| &bands_of[&s.id][b]).collect();
            apply_selection(&selection, &rasters, &target, nodata, Semantic::Reflectance)
        })
        .collect();
    Ok(MosaicOutput { bands, used: kept.iter().map(|s| s.id.clone()).collect() })
}

/// Smallest lossless on-disk type among u16 and f64.
pub fn lossless_type(grids: &[&RasterGrid]) -> SampleType {
    let fits = |v: f64| v.fract() == 0.0 && (0.0..=65535.0).contains(&v);
    if grids.iter().all(|g| g.values.iter().chain(g.nodata.iter()).all(|&v| fits(v))) {
        SampleType::U16
    } else {
        SampleType::F64
    }
}

pub fn write_mosaic(dir: &Path, m: &MosaicOutput) -> CliResult {
    let refs: Vec<&RasterGrid> = m.bands.iter().collect();
    write_raster_bands(&dir.join("mosaic.tif"), &refs, lossless_type(&refs))?;
    let rows = m.used.iter().enumerate().map(|(k, id)| vec![id.clone(), k.to_string()]);
    Ok(write_file(&dir.join("mosaic_scenes.csv"), |w| write_csv(w, &["scene_id", "priority"], rows))?)
}

// ---------------------------------------------------------------------------
// polygonize

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolygonizeOptions {
    pub threshold: f64,
    pub regularize: bool,
    pub simplify: SimplifyParams,
    pub dilation_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolygonizeSummary {
    pub traced: usize,
    pub invalid: usize,
    pub dropped_small: usize,
    pub outside_tile: usize,
    pub filter: Option<FilterReport>,
}

pub struct PolygonizeOutput {
    pub records: Vec<FootprintRecord>,
    pub summary: PolygonizeSummary,
    pub tile: TileId,
}

pub fn polygonize(
    prob: &RasterGrid,
    landcover: Option<&RasterGrid>,
    opts: &PolygonizeOptions,
    tile: Option<TileId>,
) -> CliResult<PolygonizeOutput> {
    let label = match tile {
        Some(t) => t,
        None => {
            let (x, y) = prob.spec.bbox().center();
            tile_of(x, y)?
        }
    };
    let mut mask = threshold_mask(prob, opts.threshold)?;
    if opts.regularize {
        mask = regularize_mask(&mask);
    }
    let traced = trace_polygons(&mask);
    let mut summary = PolygonizeSummary { traced: traced.len(), ..Default::default() };
    let simplified: Vec<Option<Simplified<GeoPolygon>>> = traced
        .into_par_iter()
        .map(|p| GeoPolygon::from_polygon(p).ok().map(|g| simplify(&g, &opts.simplify)))
        .collect();
    let mut records = Vec::new();
    for s in simplified {
        match s {
            None => summary.invalid += 1,
            Some(Simplified::Dropped) => summary.dropped_small += 1,
            Some(Simplified::Kept(g)) => {
                let id = format!("psr_{label}_{:06}", records.len());
                records.push(FootprintRecord::new(id, g, Source::PsrDerived));
            }
        }
    }
    if let Some(t) = tile {
        let before = records.len();
        records.retain(|r| in_tile(r, t));
        summary.outside_tile = before - records.len();
    }
    if let Some(lc) = landcover {
        lc.expect_semantic(Semantic::BinaryMask)?;
        let (kept, report) = filter_false_positives(records, lc, opts.dilation_m);
        records = kept;
        summary.filter = Some(report);
    }
    Ok(PolygonizeOutput { records, summary, tile: label })
}

pub fn write_polygonize(dir: &Path, out: &PolygonizeOutput) -> CliResult {
    let mut extra = Map::new();
    extra.insert("tile".into(), json!(out.tile.to_string()));
    write_file(&dir.join("psr.jsonl"), |w| write_footprints(w, &out.records, &extra))?;
    let s = &out.summary;
    let f = s.filter.clone().unwrap_or_default();
    let row = vec![
        out.tile.to_string(),
        s.traced.to_string(),
        s.invalid.to_string(),
        s.dropped_small.to_string(),
        s.outside_tile.to_string(),
        f.kept.to_string(),
        f.removed.to_string(),
        f.outside_extent.to_string(),
        out.records.len().to_string(),
    ];
    let header = [
        "tile", "traced", "invalid", "dropped_small", "outside_tile", "filter_kept", "filter_removed",
        "filter_outside_extent", "written",
    ];
    Ok(write_file(&dir.join("polygonize_report.csv"), |w| write_csv(w, &header, [row]))?)
}

// ---------------------------------------------------------------------------
// fusion

/// Fuse all units; records of repeated source labels are pooled.
pub fn fuse(units: &[AdminUnit], sources: Vec<(Source, Vec<FootprintRecord>)>, overlap: f64) -> Vec<FusionOutcome> {
    let mut pooled: BTreeMap<Source, Vec<FootprintRecord>> = BTreeMap::new();
    for (s, recs) in sources {
        pooled.entry(s).or_default().extend(recs);
    }
    let stores: Vec<SourceStore> = pooled.into_iter().map(|(s, r)| SourceStore::new(s, r)).collect();
    fuse_units_with(units, &stores, overlap)
}

pub fn write_fusion(dir: &Path, units: &[AdminUnit], outcomes: &[FusionOutcome]) -> CliResult<Vec<FootprintRecord>> {
    let records: Vec<FootprintRecord> = outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect();
    write_file(&dir.join("fused.jsonl"), |w| write_footprints(w, &records, &Map::new()))?;
    let report: Vec<_> = outcomes.iter().flat_map(|o| o.report.iter().cloned()).collect();
    write_file(&dir.join("contributions.csv"), |w| write_contributions(w, &report))?;
    let rows = units.iter().zip(outcomes).map(|(u, o)| {
        let sec = o.secondary.as_ref();
        vec![
            u.admin_id.clone(),
            u.continent.to_string(),
            o.base.as_ref().map(|s| s.to_string()).unwrap_or_default(),
            sec.map(|s| s.source.to_string()).unwrap_or_default(),
            fmt_opt(sec.map(|s| s.recall)),
            fmt_opt(sec.map(|s| s.area_gain_m2)),
            fmt_opt(sec.map(|s| s.combined)),
            o.records.len().to_string(),
        ]
    });
    let header = ["admin_id", "continent", "base", "secondary", "recall", "area_gain_m2", "combined", "records"];
    let rows: Vec<Vec<String>> = rows.collect();
    write_file(&dir.join("fusion_sources.csv"), |w| write_csv(w, &header, rows))?;
    Ok(records)
}

// ---------------------------------------------------------------------------
// LoD1

pub struct Lod1Output {
    pub records: Vec<Lod1Record>,
    pub completeness: f64,
    pub mean: RasterGrid,
    pub variance: RasterGrid,
}

pub fn lod1(footprints: &[FootprintRecord], height_paths: &[impl AsRef<Path>]) -> CliResult<Lod1Output> {
    if height_paths.is_empty() {
        return Err(Failure::invalid("no height rasters given"));
    }
    let layers = height_paths
        .iter()
        .map(|p| read_raster_as(p.as_ref(), Some(Semantic::HeightMeters)))
        .collect::<gba_core::Result<Vec<_>>>()?;
    let stack = PredictionStack::new(layers)?;
    let (mean, variance) = tta_aggregate(&stack);
    let (records, completeness) = build_lod1(footprints, &mean, &variance);
    Ok(Lod1Output { records, completeness, mean, variance })
}

pub fn write_lod1_outputs(dir: &Path, out: &Lod1Output) -> CliResult {
    write_file(&dir.join("lod1.jsonl"), |w| write_lod1(w, &out.records))?;
    write_file(&dir.join("lod1.csv"), |w| write_lod1_table(w, &out.records))?;
    write_raster(&dir.join("height_mean.tif"), &out.mean, SampleType::F32)?;
    write_raster(&dir.join("height_variance.tif"), &out.variance, SampleType::F32)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation

pub fn eval(pred: &[FootprintRecord], gt: &[FootprintRecord], params: &EvalParams) -> EvalReport {
    let frame = EvalFrame::for_records(pred.iter().chain(gt));
    let p: Vec<_> = pred.iter().map(|r| frame.footprint(r)).collect();
    let g: Vec<_> = gt.iter().map(|r| frame.footprint(r)).collect();
    evaluate(&p, &g, params)
}

/// LoD1 records as footprints carrying their assigned heights.
pub fn lod1_as_footprints(recs: &[Lod1Record]) -> Vec<FootprintRecord> {
    recs.iter()
        .map(|r| {
            let mut f = r.footprint.clone();
            f.height_m = r.height_m;
            f
        })
        .collect()
}

pub fn write_eval(path: &Path, city: &str, product: &str, report: &EvalReport) -> CliResult {
    let rows = [(city.to_string(), product.to_string(), report.clone())];
    Ok(write_file(path, |w| write_eval_reports(w, &rows))?)
}
