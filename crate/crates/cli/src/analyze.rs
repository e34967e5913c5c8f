use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gba_core::analytics::{
    aggregate_regions, agreement_decomposition, contributions_by_continent, estimate_global_count, grid_volume,
    loglog_regression, per_capita_indicators, ranking_agreement, volume_shares, RegionStats,
};
use gba_core::fusion::Continent;
use gba_core::io::features::read_lod1;
use gba_core::io::geotiff::{write_raster, SampleType};
use gba_core::io::tables::{
    fmt_opt, read_columns, read_continent_counts, read_continent_ratios, read_contributions, read_region_continents,
    read_region_values, write_csv,
};
use gba_core::lod1::Lod1Record;

use crate::cli::AnalyzeCommand;
use crate::{CliResult, Ctx, Failure};

pub fn run(ctx: &Ctx, cmd: AnalyzeCommand) -> CliResult {
    match cmd {
        AnalyzeCommand::GlobalCount { counts, ratios, global_avg } => global_count(ctx, &counts, &ratios, global_avg),
        AnalyzeCommand::Regression { table, x, y, key } => regression(&table, &key, &x, &y),
        AnalyzeCommand::PerCapita { lod1, population, year } => per_capita(ctx, &lod1, &population, year),
        AnalyzeCommand::Ranking { table, indicator, indicator2, reference, key } => {
            ranking(&table, &key, &indicator, indicator2.as_deref(), &reference)
        }
        AnalyzeCommand::GridVolume { lod1, cell_m } => {
            let (recs, _) = read_lod1(&lod1)?;
            let cell = cell_m.unwrap_or(ctx.config.analytics.volume_cell_m);
            write_grid_volume(ctx.out_dir()?, &recs, cell)
        }
        AnalyzeCommand::VolumeByCountry { lod1, population, gdp, year, continents } => {
            let (recs, _) = read_lod1(&lod1)?;
            let mut stats = aggregate_regions(&recs);
            if let Some(p) = population {
                attach(&mut stats, &read_region_values(&p, year)?, |s, v| s.population = Some(v));
            }
            if let Some(g) = gdp {
                attach(&mut stats, &read_region_values(&g, year)?, |s, v| s.gdp_per_capita = Some(v));
            }
            let dir = ctx.out_dir()?;
            write_region_stats(&dir.join("region_stats.csv"), &stats)?;
            if let Some(c) = continents {
                write_continent_totals(&dir.join("volume_by_continent.csv"), &stats, &read_region_continents(&c)?)?;
            }
            println!("volume-by-country: {} regions", stats.len());
            Ok(())
        }
        AnalyzeCommand::Contributions { report, continents } => {
            let rows = read_contributions(&report)?;
            let totals = contributions_by_continent(&rows, &read_region_continents(&continents)?)?;
            let out = ctx.out_dir()?.join("contributions_by_continent.csv");
            let lines = totals
                .iter()
                .map(|(c, s, n, a)| vec![c.to_string(), s.as_str().to_string(), n.to_string(), format!("{a}")]);
            csv_file(&out, &["continent", "source", "count", "area_m2"], lines)?;
            for (c, s, n, a) in &totals {
                println!("{c} {} {n} {a:.1}", s.as_str());
            }
            Ok(())
        }
    }
}

fn csv_file(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
    let f = File::create(path).map_err(io)?;
    write_csv(BufWriter::new(f), header, rows).map_err(io)
}

fn global_count(ctx: &Ctx, counts: &Path, ratios: &Path, global_avg: Option<f64>) -> CliResult {
    let counts = read_continent_counts(counts)?;
    let (ratios, table_avg) = read_continent_ratios(ratios)?;
    let avg = global_avg
        .or(table_avg)
        .ok_or_else(|| Failure::invalid("no global average ratio (GLOBAL row or --global-avg)"))?;
    let est = estimate_global_count(&counts, &ratios, avg)?;
    println!("point {:.4}", est.point);
    println!("low {:.4}", est.low);
    println!("high {:.4}", est.high);
    if ctx.global.out.is_some() {
        let rows = [("point", est.point), ("low", est.low), ("high", est.high)]
            .into_iter()
            .map(|(k, v)| vec![k.to_string(), format!("{v}")]);
        csv_file(&ctx.out_dir()?.join("global_count.csv"), &["estimate", "value"], rows)?;
    }
    Ok(())
}

fn regression(table: &Path, key: &str, x: &str, y: &str) -> CliResult {
    let (_, cols) = read_columns(table, key, &[x, y])?;
    let r = loglog_regression(&cols[0], &cols[1])?;
    println!("slope {}", r.slope);
    println!("intercept {}", r.intercept);
    println!("pearson_r {}", r.pearson_r);
    println!("spearman_rho {}", r.spearman_rho);
    println!("n {}", r.n);
    println!("excluded {}", r.excluded);
    Ok(())
}

fn attach(stats: &mut [RegionStats], values: &BTreeMap<String, f64>, set: impl Fn(&mut RegionStats, f64)) {
    for s in stats {
        if let Some(&v) = values.get(&s.region_id) {
            set(s, v);
        }
    }
}

fn per_capita(ctx: &Ctx, lod1: &Path, population: &Path, year: Option<i32>) -> CliResult {
    let (recs, _) = read_lod1(lod1)?;
    let mut stats = aggregate_regions(&recs);
    attach(&mut stats, &read_region_values(population, year)?, |s, v| s.population = Some(v));
    let (rows, excluded) = per_capita_indicators(&stats);
    let lines = rows
        .iter()
        .map(|r| vec![r.region_id.clone(), format!("{}", r.volume_per_capita), format!("{}", r.area_per_capita)]);
    csv_file(
        &ctx.out_dir()?.join("per_capita.csv"),
        &["region_id", "volume_per_capita_m3", "area_per_capita_m2"],
        lines,
    )?;
    println!("per-capita: {} regions, {} without population", rows.len(), excluded.len());
    for id in excluded {
        eprintln!("no population for region {id:?}");
    }
    Ok(())
}

fn ranking(table: &Path, key: &str, ind: &str, ind2: Option<&str>, reference: &str) -> CliResult {
    let mut names = vec![ind];
    names.extend(ind2);
    names.push(reference);
    let (keys, cols) = read_columns(table, key, &names)?;
    let keep: Vec<usize> = (0..keys.len()).filter(|&i| cols.iter().all(|c| c[i].is_finite())).collect();
    for i in (0..keys.len()).filter(|i| !keep.contains(i)) {
        eprintln!("dropped region {:?}: missing value", keys[i]);
    }
    let col = |k: usize| keep.iter().map(|&i| cols[k][i]).collect::<Vec<f64>>();
    println!("regions {} dropped {}", keep.len(), keys.len() - keep.len());
    if ind2.is_some() {
        let d = agreement_decomposition(&col(0), &col(1), &col(2))?;
        println!("pairs {}", d.pairs);
        println!("both {}", d.both);
        println!("only_{ind} {}", d.only_a);
        println!("only_{} {}", ind2.unwrap_or_default(), d.only_b);
        println!("neither {}", d.neither);
        println!("rate_{ind} {}", d.rate_a);
        println!("rate_{} {}", ind2.unwrap_or_default(), d.rate_b);
    } else {
        let a = ranking_agreement(&col(0), &col(1))?;
        println!("pairs {}", a.pairs);
        println!("agreements {}", a.agreements);
        println!("rate {}", a.rate);
    }
    Ok(())
}

/// Gridded volume as a GeoTIFF plus a CSV of non-empty cells.
pub fn write_grid_volume(dir: &Path, recs: &[Lod1Record], cell_m: f64) -> CliResult {
    let vg = grid_volume(recs, cell_m)?;
    write_raster(&dir.join("grid_volume.tif"), &vg.grid, SampleType::F64)?;
    let spec = vg.grid.spec;
    let mut rows = Vec::new();
    for r in 0..spec.height {
        for c in 0..spec.width {
            let v = vg.grid.values[spec.index(c, r)];
            if v == 0.0 {
                continue;
            }
            let (x, y) = spec.pixel_center(c, r);
            let (lon, lat) = vg.frame.inverse(x, y);
            rows.push(vec![
                c.to_string(),
                r.to_string(),
                format!("{x}"),
                format!("{y}"),
                format!("{lon}"),
                format!("{lat}"),
                format!("{v}"),
            ]);
        }
    }
    let (lon0, lat0) = vg.frame.center();
    println!("grid-volume: {} non-empty cells, frame center {lon0} {lat0}", rows.len());
    csv_file(
        &dir.join("grid_volume.csv"),
        &["col", "row", "x_m", "y_m", "lon", "lat", "volume_m3"],
        rows,
    )
}

pub fn write_region_stats(path: &Path, stats: &[RegionStats]) -> CliResult {
    let shares = volume_shares(stats);
    let rows = stats.iter().zip(shares).map(|(s, (_, share))| {
        let per_capita = s.population.filter(|p| *p > 0.0).map(|p| s.total_volume_m3 / p);
        vec![
            s.region_id.clone(),
            s.building_count.to_string(),
            format!("{}", s.total_area_m2),
            format!("{}", s.total_volume_m3),
            format!("{share}"),
            fmt_opt(s.population),
            fmt_opt(s.gdp_per_capita),
            fmt_opt(per_capita),
        ]
    });
    csv_file(
        path,
        &[
            "region_id",
            "building_count",
            "total_area_m2",
            "total_volume_m3",
            "volume_share",
            "population",
            "gdp_per_capita",
            "volume_per_capita_m3",
        ],
        rows,
    )
}

fn write_continent_totals(path: &Path, stats: &[RegionStats], continent_of: &BTreeMap<String, Continent>) -> CliResult {
    let mut acc: BTreeMap<Continent, (u64, f64, f64)> = BTreeMap::new();
    for s in stats {
        let c = continent_of
            .get(&s.region_id)
            .ok_or_else(|| Failure::invalid(format!("no continent for region {:?}", s.region_id)))?;
        let e = acc.entry(*c).or_default();
        e.0 += s.building_count;
        e.1 += s.total_area_m2;
        e.2 += s.total_volume_m3;
    }
    let rows = acc
        .iter()
        .map(|(c, (n, a, v))| vec![c.to_string(), n.to_string(), format!("{a}"), format!("{v}")]);
    csv_file(path, &["continent", "building_count", "total_area_m2", "total_volume_m3"], rows)
}

/// Region table and volume grid written by the pipeline.
pub fn write_region_outputs(dir: &Path, recs: &[Lod1Record], cell_m: f64) -> CliResult {
    write_region_stats(&dir.join("region_stats.csv"), &aggregate_regions(recs))?;
    write_grid_volume(dir, recs, cell_m)
}
