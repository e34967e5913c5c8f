//! CSV tables read and written by the analysis and pipeline commands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fusion::{Continent, ContributionRow};
use crate::lod1::Lod1Record;
use crate::metrics::EvalReport;

/// Row label carrying the global average ratio in a ratio table.
pub const GLOBAL_ROW: &str = "GLOBAL";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// All rows of a headed CSV file.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Debug, Deserialize)]
struct ContinentValue {
    continent: String,
    value: f64,
}

fn continent_values(path: &Path) -> Result<(BTreeMap<Continent, f64>, Option<f64>)> {
    let mut out = BTreeMap::new();
    let mut global = None;
    for row in read_rows::<ContinentValue>(path)? {
        if row.continent.eq_ignore_ascii_case(GLOBAL_ROW) {
            global = Some(row.value);
            continue;
        }
        let c: Continent = row
            .continent
            .parse()
            .map_err(|e: Error| Error::format(path, e.to_string()))?;
        if out.insert(c, row.value).is_some() {
            return Err(Error::format(path, format!("duplicate continent {c}")));
        }
    }
    Ok((out, global))
}

/// `continent,value` rows of building counts.
pub fn read_continent_counts(path: &Path) -> Result<BTreeMap<Continent, f64>> {
    Ok(continent_values(path)?.0)
}

/// `continent,value` rows of N-ratios, plus the optional `GLOBAL` row.
pub fn read_continent_ratios(path: &Path) -> Result<(BTreeMap<Continent, f64>, Option<f64>)> {
    continent_values(path)
}

/// Scene sidecar row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SceneRow {
    pub scene_id: String,
    pub cloud_fraction: f64,
    pub year: i32,
    pub path: PathBuf,
    pub mask_path: PathBuf,
}

/// Scene sidecar with relative raster paths resolved against its folder.
pub fn read_scene_table(path: &Path) -> Result<Vec<SceneRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<SceneRow> = read_rows(path)?;
    for r in &mut rows {
        r.path = base.join(&r.path);
        r.mask_path = base.join(&r.mask_path);
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct YearValue {
    region_id: String,
    year: i32,
    #[serde(alias = "population")]
    value: f64,
}

/// Per-region value for `year`, or for each region's latest year when
/// `year` is `None`. Reads `region_id,year,population` and
/// `region_id,year,value` layouts.
pub fn read_region_values(path: &Path, year: Option<i32>) -> Result<BTreeMap<String, f64>> {
    let mut best: BTreeMap<String, (i32, f64)> = BTreeMap::new();
    for r in read_rows::<YearValue>(path)? {
        if year.is_some_and(|y| y != r.year) {
            continue;
        }
        let e = best.entry(r.region_id).or_insert((r.year, r.value));
        if r.year > e.0 {
            *e = (r.year, r.value);
        }
    }
    Ok(best.into_iter().map(|(k, (_, v))| (k, v)).collect())
}

#[derive(Debug, Deserialize)]
struct RegionContinent {
    region_id: String,
    continent: String,
}

pub fn read_region_continents(path: &Path) -> Result<BTreeMap<String, Continent>> {
    read_rows::<RegionContinent>(path)?
        .into_iter()
        .map(|r| {
            let c = r
                .continent
                .parse()
                .map_err(|e: Error| Error::format(path, e.to_string()))?;
            Ok((r.region_id, c))
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct ContributionIn {
    admin_id: String,
    source: String,
    count: usize,
    area_m2: f64,
}

/// Rows written by [`write_contributions`].
pub fn read_contributions(path: &Path) -> Result<Vec<ContributionRow>> {
    read_rows::<ContributionIn>(path)?
        .into_iter()
        .map(|r| {
            Ok(ContributionRow {
                admin_id: r.admin_id,
                source: r.source.parse().map_err(|e: Error| Error::format(path, e.to_string()))?,
                count: r.count,
                area_m2: r.area_m2,
            })
        })
        .collect()
}

/// Key column and numeric columns of a headed CSV file. Blank cells read
/// as NaN.
pub fn read_columns(path: &Path, key: &str, columns: &[&str]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("no column {name:?}")))
    };
    let ki = find(key)?;
    let idx = columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut keys = Vec::new();
    let mut cols = vec![Vec::new(); columns.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        keys.push(rec.get(ki).unwrap_or_default().to_string());
        for (k, &i) in idx.iter().enumerate() {
            let cell = rec.get(i).unwrap_or_default();
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse()
                    .map_err(|_| Error::format(path, format!("{cell:?} in column {} is not a number", columns[k])))?
            };
            cols[k].push(v);
        }
    }
    Ok((keys, cols))
}

/// Format a float for CSV output; missing values are empty.
pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

/// Write a header and rows of already formatted fields.
pub fn write_csv<W: Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
    wtr.write_record(header).map_err(to_io)?;
    for r in rows {
        wtr.write_record(&r).map_err(to_io)?;
    }
    wtr.flush()
}

pub fn write_contributions<W: Write>(w: W, rows: &[ContributionRow]) -> std::io::Result<()> {
    write_csv(
        w,
        &["admin_id", "source", "count", "area_m2"],
        rows.iter().map(|r| {
            vec![r.admin_id.clone(), r.source.to_string(), r.count.to_string(), format!("{}", r.area_m2)]
        }),
    )
}

/// Flat LoD1 table sorted by id.
pub fn write_lod1_table<W: Write>(w: W, records: &[Lod1Record]) -> std::io::Result<()> {
    let mut rows: Vec<&Lod1Record> = records.iter().collect();
    rows.sort_by(|a, b| a.footprint.id.cmp(&b.footprint.id));
    write_csv(
        w,
        &["id", "height_m", "variance_m2", "volume_m3"],
        rows.into_iter().map(|r| {
            vec![r.footprint.id.clone(), fmt_opt(r.height_m), fmt_opt(r.uncertainty_m2), fmt_opt(r.volume_m3)]
        }),
    )
}

/// Evaluation rows labelled by city and product.
pub fn write_eval_reports<W: Write>(w: W, rows: &[(String, String, EvalReport)]) -> std::io::Result<()> {
    let mut header = vec!["city", "product"];
    header.extend(EvalReport::COLUMNS);
    write_csv(
        w,
        &header,
        rows.iter().map(|(city, product, rep)| {
            let mut v = vec![city.clone(), product.clone()];
            v.extend(rep.values().into_iter().map(fmt_opt));
            v
        }),
    )
}
