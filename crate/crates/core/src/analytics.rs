//! Aggregates, extrapolations, regressions and ranking experiments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fusion::{Continent, ContributionRow};
use crate::geom::{BBox, LocalFrame};
use crate::lod1::Lod1Record;
use crate::raster::{GridSpec, RasterGrid, Semantic, Units};
use crate::record::Source;

pub const DEFAULT_VOLUME_CELL_M: f64 = 480.0;

// ---------------------------------------------------------------------------
// volume gridding

/// Volume grid in a local metric frame.
#[derive(Debug, Clone)]
pub struct VolumeGrid {
    pub frame: LocalFrame,
    pub grid: RasterGrid,
}

/// Sum record volumes into square cells by footprint centroid. The grid is
/// laid out in a local frame centered on the records, anchored at the
/// upper-left of their projected centroids. Records without a volume are
/// skipped.
pub fn grid_volume(records: &[Lod1Record], cell_m: f64) -> Result<VolumeGrid> {
    if !(cell_m > 0.0) {
        return Err(Error::InvalidParameter(format!("cell size {cell_m} must be positive")));
    }
    let b = records
        .iter()
        .fold(BBox::EMPTY, |acc, r| acc.union(&r.footprint.geometry.bbox()));
    let frame = if b.is_empty() {
        LocalFrame::new(0.0, 0.0)
    } else {
        LocalFrame::centered_on(&b)
    };
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let c = r.footprint.geometry.centroid();
            frame.forward(c.x, c.y)
        })
        .collect();
    let mut pb = BBox::EMPTY;
    for &(x, y) in &pts {
        pb.expand(x, y);
    }
    let spec = if pb.is_empty() {
        GridSpec::new((0.0, cell_m), (cell_m, cell_m), 1, 1, Units::Meters)?
    } else {
        let w = ((pb.width() / cell_m).floor() as usize) + 1;
        let h = ((pb.height() / cell_m).floor() as usize) + 1;
        GridSpec::new((pb.min_x, pb.max_y), (cell_m, cell_m), w, h, Units::Meters)?
    };
    let grid = grid_volume_on(records.iter().zip(pts), &spec);
    Ok(VolumeGrid { frame, grid })
}

/// Sum volumes of records at the given projected points onto `spec`.
/// Points outside the grid are dropped.
pub fn grid_volume_on<'a>(
    records: impl IntoIterator<Item = (&'a Lod1Record, (f64, f64))>,
    spec: &GridSpec,
) -> RasterGrid {
    let mut grid = RasterGrid::filled(*spec, 0.0, None, Semantic::VolumeM3);
    for (r, (x, y)) in records {
        let Some(v) = r.volume_m3 else { continue };
        if let Some((c, row)) = spec.pixel_of(x, y) {
            let i = spec.index(c, row);
            grid.values[i] += v;
        }
    }
    grid
}

// ---------------------------------------------------------------------------
// global count extrapolation

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalCountEstimate {
    pub point: f64,
    pub low: f64,
    pub high: f64,
}

/// Scale continental counts by their N-ratios. Continents with a count but
/// no ratio use the global average for the point estimate, the largest
/// known ratio for the low bound and the smallest for the high bound.
pub fn estimate_global_count(
    counts: &BTreeMap<Continent, f64>,
    ratios: &BTreeMap<Continent, f64>,
    global_avg: f64,
) -> Result<GlobalCountEstimate> {
    if counts.is_empty() {
        return Err(Error::MissingInput("no continental counts".into()));
    }
    if let Some(c) = ratios.keys().find(|c| !counts.contains_key(c)) {
        return Err(Error::MissingInput(format!("count for {c}")));
    }
    for (c, &r) in ratios {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("N-ratio for {c} must be positive")));
        }
    }
    if !(global_avg > 0.0 && global_avg.is_finite()) {
        return Err(Error::InvalidParameter("global average N-ratio must be positive".into()));
    }
    for (c, &n) in counts {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(format!("count for {c} must be >= 0")));
        }
    }

    let known: f64 = ratios.iter().map(|(c, r)| counts[c] / r).sum();
    let unrated: f64 = counts
        .iter()
        .filter(|(c, _)| !ratios.contains_key(c))
        .map(|(_, n)| n)
        .sum();
    let (min_r, max_r) = if ratios.is_empty() {
        (global_avg, global_avg)
    } else {
        ratios.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        })
    };
    Ok(GlobalCountEstimate {
        point: known + unrated / global_avg,
        low: known + unrated / max_r,
        high: known + unrated / min_r,
    })
}

// ---------------------------------------------------------------------------
// correlation and regression

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
    /// Pairs dropped for a non-positive or non-finite value.
    pub excluded: usize,
}

/// Pearson correlation. `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with tied values sharing their mean rank.
pub fn mean_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&mean_ranks(x), &mean_ranks(y))
}

/// Least squares of ln y on ln x over pairs where both are positive.
pub fn loglog_regression(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let (kx, ky): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let n = kx.len();
    let excluded = x.len() - n;
    if n < 2 {
        return Err(Error::Undefined("regression needs two positive pairs"));
    }
    let lx: Vec<f64> = kx.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ky.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("regression on a constant predictor"));
    }
    let slope = sxy / sxx;
    let pearson_r = pearson(&lx, &ly).ok_or(Error::Undefined("zero variance in log space"))?;
    let spearman_rho = spearman(&kx, &ky).ok_or(Error::Undefined("zero rank variance"))?;
    Ok(RegressionResult {
        slope,
        intercept: my - slope * mx,
        pearson_r,
        spearman_rho,
        n,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// regional tables

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub region_id: String,
    pub building_count: u64,
    pub total_area_m2: f64,
    pub total_volume_m3: f64,
    pub population: Option<f64>,
    pub gdp_per_capita: Option<f64>,
}

impl RegionStats {
    pub fn new(region_id: impl Into<String>) -> Self {
        RegionStats {
            region_id: region_id.into(),
            building_count: 0,
            total_area_m2: 0.0,
            total_volume_m3: 0.0,
            population: None,
            gdp_per_capita: None,
        }
    }
}

/// Count, area and volume per admin id. Records without an admin id are
/// grouped under the empty string.
pub fn aggregate_regions(records: &[Lod1Record]) -> Vec<RegionStats> {
    let mut map: BTreeMap<String, RegionStats> = BTreeMap::new();
    for r in records {
        let id = r.footprint.admin_id.clone().unwrap_or_default();
        let s = map.entry(id.clone()).or_insert_with(|| RegionStats::new(id));
        s.building_count += 1;
        s.total_area_m2 += r.footprint.geometry.area_m2();
        s.total_volume_m3 += r.volume_m3.unwrap_or(0.0);
    }
    map.into_values().collect()
}

/// Each region's share of the total volume. All zeros when the total is 0.
pub fn volume_shares(stats: &[RegionStats]) -> Vec<(String, f64)> {
    let total: f64 = stats.iter().map(|s| s.total_volume_m3).sum();
    stats
        .iter()
        .map(|s| {
            let share = if total > 0.0 { s.total_volume_m3 / total } else { 0.0 };
            (s.region_id.clone(), share)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerCapita {
    pub region_id: String,
    pub volume_per_capita: f64,
    pub area_per_capita: f64,
}

/// Volume and area per person. Regions without a positive population are
/// returned separately.
pub fn per_capita_indicators(stats: &[RegionStats]) -> (Vec<PerCapita>, Vec<String>) {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for s in stats {
        match s.population {
            Some(p) if p > 0.0 => rows.push(PerCapita {
                region_id: s.region_id.clone(),
                volume_per_capita: s.total_volume_m3 / p,
                area_per_capita: s.total_area_m2 / p,
            }),
            _ => excluded.push(s.region_id.clone()),
        }
    }
    (rows, excluded)
}

/// Per-continent totals of a contribution table.
pub fn contributions_by_continent(
    rows: &[ContributionRow],
    continent_of: &BTreeMap<String, Continent>,
) -> Result<Vec<(Continent, Source, usize, f64)>> {
    let mut acc: BTreeMap<(Continent, Source), (usize, f64)> = BTreeMap::new();
    for r in rows {
        let c = continent_of
            .get(&r.admin_id)
            .ok_or_else(|| Error::MissingInput(format!("continent for {}", r.admin_id)))?;
        let e = acc.entry((*c, r.source.clone())).or_default();
        e.0 += r.count;
        e.1 += r.area_m2;
    }
    Ok(acc.into_iter().map(|((c, s), (n, a))| (c, s, n, a)).collect())
}

// ---------------------------------------------------------------------------
// ranking agreement

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingAgreement {
    pub pairs: u64,
    pub agreements: u64,
    pub rate: f64,
}

#[inline]
fn pair_agrees(ind: &[f64], reference: &[f64], i: usize, j: usize) -> bool {
    let a = ind[i] - ind[j];
    let b = reference[i] - reference[j];
    // Ties on either side never agree.
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

fn check_series(series: &[&[f64]]) -> Result<usize> {
    let n = series[0].len();
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidParameter("series cover different region sets".into()));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("ranking needs at least two regions".into()));
    }
    Ok(n)
}

/// Share of unordered region pairs ordered the same way by the indicator
/// and the reference.
pub fn ranking_agreement(indicator: &[f64], reference: &[f64]) -> Result<RankingAgreement> {
    let n = check_series(&[indicator, reference])?;
    let mut pairs = 0u64;
    let mut agreements = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            agreements += pair_agrees(indicator, reference, i, j) as u64;
        }
    }
    Ok(RankingAgreement {
        pairs,
        agreements,
        rate: agreements as f64 / pairs as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementDecomposition {
    pub pairs: u64,
    pub both: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub neither: u64,
    pub total_a: u64,
    pub total_b: u64,
    pub rate_a: f64,
    pub rate_b: f64,
}

/// Split region pairs by which of two indicators order them like the
/// reference.
pub fn agreement_decomposition(
    ind_a: &[f64],
    ind_b: &[f64],
    reference: &[f64],
) -> Result<AgreementDecomposition> {
    let n = check_series(&[ind_a, ind_b, reference])?;
    let (mut pairs, mut both, mut only_a, mut only_b, mut neither) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            match (pair_agrees(ind_a, reference, i, j), pair_agrees(ind_b, reference, i, j)) {
                (true, true) => both += 1,
                (true, false) => only_a += 1,
                (false, true) => only_b += 1,
                (false, false) => neither += 1,
            }
        }
    }
    let (total_a, total_b) = (both + only_a, both + only_b);
    Ok(AgreementDecomposition {
        pairs,
        both,
        only_a,
        only_b,
        neither,
        total_a,
        total_b,
        rate_a: total_a as f64 / pairs as f64,
        rate_b: total_b as f64 / pairs as f64,
    })
}
