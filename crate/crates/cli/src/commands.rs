use std::path::{Path, PathBuf};

use gba_core::fusion::AdminUnit;
use gba_core::io::config::PipelineConfig;
use gba_core::io::features::{read_admin_units, read_footprints, ReadReport};
use gba_core::io::geotiff::{read_raster, read_raster_as};
use gba_core::io::tables::{read_scene_table, write_eval_reports};
use gba_core::raster::Semantic;
use gba_core::record::{FootprintRecord, Source};
use gba_core::synthetic::{generate_city, write_city, CityParams};

use crate::cli::{Command, EvalArgs, FuseArgs, Lod1Args, MosaicArgs, PolygonizeArgs};
use crate::stages::{self, PolygonizeOptions};
use crate::{analyze, CliResult, Ctx, Failure};

pub fn dispatch(ctx: &Ctx, cmd: Command) -> CliResult {
    match cmd {
        Command::Mosaic(a) => mosaic(ctx, a),
        Command::Polygonize(a) => polygonize(ctx, a),
        Command::Fuse(a) => fuse(ctx, a),
        Command::Lod1(a) => lod1(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Analyze(a) => analyze::run(ctx, a),
        Command::Pipeline => pipeline(ctx),
        Command::Fixture => fixture(ctx),
    }
}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Failure::invalid(format!("no {what} given (flag or config)")))
}

fn mosaic(ctx: &Ctx, a: MosaicArgs) -> CliResult {
    let scenes = required(a.scenes, &ctx.config.acquisition.scenes, "scene table")?;
    let rows = read_scene_table(&scenes)?;
    let target = match &a.target {
        Some(p) => Some(read_raster(p)?.spec),
        None => None,
    };
    let m = stages::mosaic(&rows, &ctx.config.scene_policy(), target, ctx.global.tile)?;
    stages::write_mosaic(ctx.out_dir()?, &m)?;
    println!("mosaic: {} scenes used ({})", m.used.len(), m.used.join(", "));
    Ok(())
}

fn polygonize_options(cfg: &PipelineConfig) -> PolygonizeOptions {
    PolygonizeOptions {
        threshold: cfg.thresholds.probability,
        regularize: cfg.polygonize.regularize,
        simplify: cfg.simplify_params(),
        dilation_m: cfg.thresholds.dilation_m,
    }
}

fn polygonize(ctx: &Ctx, a: PolygonizeArgs) -> CliResult {
    let mut cfg = ctx.config.clone();
    if let Some(t) = a.threshold {
        cfg.thresholds.probability = t;
    }
    if let Some(d) = a.dilation_m {
        cfg.thresholds.dilation_m = d;
    }
    if let Some(t) = a.tolerance_m {
        cfg.polygonize.tolerance_m = t;
    }
    if let Some(m) = a.min_area_m2 {
        cfg.polygonize.min_area_m2 = m;
    }
    if a.no_regularize {
        cfg.polygonize.regularize = false;
    }
    cfg.validate()?;
    let prob_path = required(a.prob, &cfg.rasters.probability, "probability raster")?;
    let prob = read_raster_as(&prob_path, Some(Semantic::Probability))?;
    let lc = match a.landcover.or(cfg.rasters.landcover.clone()) {
        Some(p) => Some(read_raster_as(&p, Some(Semantic::BinaryMask))?),
        None => None,
    };
    let out = stages::polygonize(&prob, lc.as_ref(), &polygonize_options(&cfg), ctx.global.tile)?;
    stages::write_polygonize(ctx.out_dir()?, &out)?;
    println!("polygonize: {} polygons written for tile {}", out.records.len(), out.tile);
    Ok(())
}

fn parse_source_flag(s: &str) -> CliResult<(Source, PathBuf)> {
    let (label, path) = s
        .split_once('=')
        .ok_or_else(|| Failure::invalid(format!("--source {s:?} is not LABEL=PATH")))?;
    Ok((label.parse()?, PathBuf::from(path)))
}

fn load_units(path: &Path, reports: &mut Vec<ReadReport>) -> CliResult<Vec<AdminUnit>> {
    let (units, report) = read_admin_units(path)?;
    reports.push(report);
    if units.is_empty() {
        return Err(Failure::invalid(format!("{} holds no admin units", path.display())));
    }
    Ok(units)
}

fn fuse(ctx: &Ctx, a: FuseArgs) -> CliResult {
    let mut cfg = ctx.config.clone();
    if let Some(o) = a.overlap {
        cfg.thresholds.overlap = o;
    }
    cfg.validate()?;
    let mut files = cfg.source_files()?;
    for s in &a.sources {
        files.push(parse_source_flag(s)?);
    }
    if files.is_empty() {
        return Err(Failure::invalid("no footprint sources given"));
    }
    let admin = required(a.admin, &cfg.admin, "admin boundary file")?;
    let mut reports = Vec::new();
    let units = load_units(&admin, &mut reports)?;
    let mut sources = Vec::new();
    for (s, p) in files {
        let recs = stages::load_footprints(&p, Some(s.clone()), ctx.global.tile, &mut reports)?;
        sources.push((s, recs));
    }
    let outcomes = stages::fuse(&units, sources, cfg.thresholds.overlap);
    let dir = ctx.out_dir()?;
    let fused = stages::write_fusion(dir, &units, &outcomes)?;
    stages::write_rejections(&dir.join("rejections.csv"), &reports)?;
    println!("fuse: {} records from {} admin units", fused.len(), units.len());
    Ok(())
}

fn lod1(ctx: &Ctx, a: Lod1Args) -> CliResult {
    let heights = if a.heights.is_empty() { ctx.config.rasters.height.clone() } else { a.heights };
    let mut reports = Vec::new();
    let fp = stages::load_footprints(&a.footprints, None, ctx.global.tile, &mut reports)?;
    let out = stages::lod1(&fp, &heights)?;
    let dir = ctx.out_dir()?;
    stages::write_lod1_outputs(dir, &out)?;
    stages::write_rejections(&dir.join("rejections.csv"), &reports)?;
    println!("lod1: {} records, completeness {:.4}", out.records.len(), out.completeness);
    Ok(())
}

fn eval_source() -> Source {
    Source::Other("eval".into())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> CliResult {
    let mut cfg = ctx.config.clone();
    if let Some(r) = a.iou_resolution_m {
        cfg.eval.iou_resolution_m = r;
    }
    if let Some(c) = a.volume_cell_m {
        cfg.eval.volume_cell_m = c;
    }
    cfg.eval.area_ranked_ap |= a.area_ranked_ap;
    cfg.validate()?;
    let gt_path = required(a.gt, &cfg.eval.ground_truth, "ground truth")?;
    let mut pred = read_footprints(&a.pred, Some(eval_source()))?.0;
    let mut gt = read_footprints(&gt_path, Some(eval_source()))?.0;
    if let Some(t) = ctx.global.tile {
        pred.retain(|r| stages::in_tile(r, t));
        gt.retain(|r| stages::in_tile(r, t));
    }
    let report = stages::eval(&pred, &gt, &cfg.eval_params());
    let city = a.city.unwrap_or(cfg.eval.city.clone());
    if ctx.global.out.is_some() {
        stages::write_eval(&ctx.out_dir()?.join("eval.csv"), &city, &a.product, &report)?;
    } else {
        let rows = [(city, a.product, report)];
        write_eval_reports(std::io::stdout().lock(), &rows).map_err(|e| Failure::Io(e.to_string()))?;
    }
    Ok(())
}

fn pipeline(ctx: &Ctx) -> CliResult {
    if !ctx.config_loaded {
        return Err(Failure::invalid("pipeline needs --config"));
    }
    let cfg = &ctx.config;
    let tile = ctx.global.tile;
    let dir = ctx.out_dir()?;
    let mut reports = Vec::new();

    if let Some(scenes) = &cfg.acquisition.scenes {
        let rows = read_scene_table(scenes)?;
        let m = stages::mosaic(&rows, &cfg.scene_policy(), None, tile)?;
        stages::write_mosaic(dir, &m)?;
        println!("mosaic: {} scenes used", m.used.len());
    }

    let mut sources: Vec<(Source, Vec<FootprintRecord>)> = Vec::new();
    for (s, p) in cfg.source_files()? {
        let recs = stages::load_footprints(&p, Some(s.clone()), tile, &mut reports)?;
        sources.push((s, recs));
    }
    if let Some(prob_path) = &cfg.rasters.probability {
        let prob = read_raster_as(prob_path, Some(Semantic::Probability))?;
        let lc = match &cfg.rasters.landcover {
            Some(p) => Some(read_raster_as(p, Some(Semantic::BinaryMask))?),
            None => None,
        };
        let out = stages::polygonize(&prob, lc.as_ref(), &polygonize_options(cfg), tile)?;
        stages::write_polygonize(dir, &out)?;
        println!("polygonize: {} polygons", out.records.len());
        sources.push((Source::PsrDerived, out.records));
    }
    if sources.is_empty() {
        return Err(Failure::invalid("config names no footprint source or probability raster"));
    }

    let admin = cfg.admin.as_ref().ok_or_else(|| Failure::invalid("config names no admin file"))?;
    let units = load_units(admin, &mut reports)?;
    let outcomes = stages::fuse(&units, sources, cfg.thresholds.overlap);
    let fused = stages::write_fusion(dir, &units, &outcomes)?;
    println!("fuse: {} records", fused.len());

    let mut product = (fused.clone(), "fused");
    if !cfg.rasters.height.is_empty() {
        let out = stages::lod1(&fused, &cfg.rasters.height)?;
        stages::write_lod1_outputs(dir, &out)?;
        println!("lod1: completeness {:.4}", out.completeness);
        analyze::write_region_outputs(dir, &out.records, cfg.analytics.volume_cell_m)?;
        product = (stages::lod1_as_footprints(&out.records), "lod1");
    }

    if let Some(gt_path) = &cfg.eval.ground_truth {
        let mut gt = read_footprints(gt_path, Some(eval_source()))?.0;
        if let Some(t) = tile {
            gt.retain(|r| stages::in_tile(r, t));
        }
        let report = stages::eval(&product.0, &gt, &cfg.eval_params());
        stages::write_eval(&dir.join("eval.csv"), &cfg.eval.city, product.1, &report)?;
        println!("eval: iou {:?}, ap50 {:?}, ar50 {:?}", report.iou, report.ap50, report.ar50);
    }
    stages::write_rejections(&dir.join("rejections.csv"), &reports)?;
    Ok(())
}

fn fixture(ctx: &Ctx) -> CliResult {
    let city = generate_city(CityParams { seed: ctx.global.seed, ..CityParams::default() })?;
    write_city(ctx.out_dir()?, &city)?;
    println!("fixture: {} buildings written to {}", city.buildings.len(), ctx.out.display());
    Ok(())
}
