//! Per-administrative-unit fusion of footprint sources.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use geo::{BooleanOps, MultiPolygon, Polygon};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{multi_planar_area, planar_area, BBox, GeoMultiPolygon, LocalFrame};
use crate::index::SpatialIndex;
use crate::record::{FootprintRecord, Source};

pub const DEFAULT_OVERLAP_THRESH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Continent {
    AS,
    AF,
    EU,
    NA,
    SA,
    OC,
}

impl Continent {
    pub const ALL: [Continent; 6] = [
        Continent::AS,
        Continent::AF,
        Continent::EU,
        Continent::NA,
        Continent::SA,
        Continent::OC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Continent::AS => "AS",
            Continent::AF => "AF",
            Continent::EU => "EU",
            Continent::NA => "NA",
            Continent::SA => "SA",
            Continent::OC => "OC",
        }
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Continent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Continent::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown continent {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdminUnit {
    pub admin_id: String,
    pub geometry: GeoMultiPolygon,
    pub continent: Continent,
}

impl AdminUnit {
    pub fn new(admin_id: impl Into<String>, geometry: GeoMultiPolygon, continent: Continent) -> Result<Self> {
        if geometry.0.is_empty() {
            return Err(Error::InvalidGeometry("admin unit without parts".into()));
        }
        Ok(AdminUnit {
            admin_id: admin_id.into(),
            geometry,
            continent,
        })
    }

    /// Whether the record's centroid falls inside the unit.
    pub fn owns(&self, rec: &FootprintRecord) -> bool {
        let c = rec.geometry.centroid();
        self.geometry.contains_point(c.x, c.y)
    }
}

/// Base layer: OSM except in South America and Africa, where
/// OpenBuildings is preferred; otherwise the first available source in
/// the fixed order. `None` only when nothing is available.
pub fn select_base_source(unit: &AdminUnit, available: &[Source]) -> Option<Source> {
    let preferred = match unit.continent {
        Continent::SA | Continent::AF => Source::OpenBuildings,
        _ => Source::Osm,
    };
    if available.contains(&preferred) {
        return Some(preferred);
    }
    available.iter().min_by(|a, b| a.order_key().cmp(&b.order_key())).cloned()
}

// ---------------------------------------------------------------------------
// planar working sets

/// Records projected into a shared local frame, with areas and an index.
struct PlanarSet {
    polys: Vec<Polygon<f64>>,
    areas: Vec<f64>,
    index: SpatialIndex,
}

impl PlanarSet {
    fn new(records: &[FootprintRecord], frame: &LocalFrame) -> Self {
        let polys: Vec<Polygon<f64>> = records
            .iter()
            .map(|r| frame.project_polygon(r.geometry.polygon()))
            .collect();
        let areas = polys.iter().map(planar_area).collect();
        let index = SpatialIndex::build(polys.iter().map(BBox::of_polygon));
        PlanarSet { polys, areas, index }
    }

    /// Union of the members whose boxes meet `b`.
    fn local_union(&self, b: &BBox) -> Option<MultiPolygon<f64>> {
        let hits = self.index.query(b);
        if hits.is_empty() {
            return None;
        }
        Some(geo::unary_union(hits.iter().map(|&i| &self.polys[i])))
    }

    /// Area of `p` covered by the union of this set.
    fn covered_area(&self, p: &Polygon<f64>) -> f64 {
        match self.local_union(&BBox::of_polygon(p)) {
            None => 0.0,
            Some(u) => multi_planar_area(&MultiPolygon(vec![p.clone()]).intersection(&u)),
        }
    }
}

fn frame_for<'a>(groups: impl IntoIterator<Item = &'a [FootprintRecord]>) -> LocalFrame {
    let b = groups
        .into_iter()
        .flatten()
        .fold(BBox::EMPTY, |acc, r| acc.union(&r.geometry.bbox()));
    if b.is_empty() {
        LocalFrame::new(0.0, 0.0)
    } else {
        LocalFrame::centered_on(&b)
    }
}

fn recall_planar(primary: &PlanarSet, candidate: &PlanarSet) -> Result<f64> {
    let total: f64 = primary.areas.iter().sum();
    if primary.polys.is_empty() || total <= 0.0 {
        return Err(Error::Undefined("recall of an empty primary set"));
    }
    let covered: f64 = primary.polys.iter().map(|p| candidate.covered_area(p)).sum();
    Ok((covered / total).clamp(0.0, 1.0))
}

fn gain_planar(primary: &PlanarSet, candidate: &PlanarSet) -> f64 {
    candidate
        .polys
        .iter()
        .zip(&candidate.areas)
        .map(|(c, &a)| (a - primary.covered_area(c)).max(0.0))
        .sum()
}

/// Fraction of primary building area covered by the candidate source.
pub fn recall_of(primary: &[FootprintRecord], candidate: &[FootprintRecord]) -> Result<f64> {
    let frame = frame_for([primary, candidate]);
    recall_planar(&PlanarSet::new(primary, &frame), &PlanarSet::new(candidate, &frame))
}

/// Candidate building area, in m², not covered by the primary source.
pub fn area_gain_of(primary: &[FootprintRecord], candidate: &[FootprintRecord]) -> f64 {
    let frame = frame_for([primary, candidate]);
    gain_planar(&PlanarSet::new(primary, &frame), &PlanarSet::new(candidate, &frame))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionScore {
    pub source: Source,
    pub recall: f64,
    pub area_gain_m2: f64,
    pub combined: f64,
}

/// `0.5·recall + 0.5·gain/max_gain`, with the gain term 0 when every gain
/// is 0.
pub fn combined_scores(raw: &[(Source, f64, f64)]) -> Vec<FusionScore> {
    let max_gain = raw.iter().map(|r| r.2).fold(0.0, f64::max);
    raw.iter()
        .map(|(source, recall, gain)| {
            let g = if max_gain > 0.0 { gain / max_gain } else { 0.0 };
            FusionScore {
                source: source.clone(),
                recall: *recall,
                area_gain_m2: *gain,
                combined: 0.5 * recall + 0.5 * g,
            }
        })
        .collect()
}

/// Highest combined score; ties go to the source earlier in the fixed order.
pub fn best_score(mut scores: Vec<FusionScore>) -> Option<FusionScore> {
    scores.sort_by(|a, b| a.source.order_key().cmp(&b.source.order_key()));
    let mut best: Option<FusionScore> = None;
    for s in scores {
        if best.as_ref().is_none_or(|b| s.combined > b.combined) {
            best = Some(s);
        }
    }
    best
}

fn select_secondary_planar(
    primary: &PlanarSet,
    candidates: &BTreeMap<Source, PlanarSet>,
) -> Option<FusionScore> {
    let raw: Vec<(Source, f64, f64)> = candidates
        .iter()
        .map(|(s, set)| {
            // An empty primary has nothing to cover: recall counts as 0.
            let recall = recall_planar(primary, set).unwrap_or(0.0);
            (s.clone(), recall, gain_planar(primary, set))
        })
        .collect();
    best_score(combined_scores(&raw))
}

/// Winner among candidate secondary sources. `None` without candidates.
pub fn select_secondary_source(
    primary: &[FootprintRecord],
    candidates: &BTreeMap<Source, Vec<FootprintRecord>>,
) -> Option<FusionScore> {
    let frame = frame_for(std::iter::once(primary).chain(candidates.values().map(Vec::as_slice)));
    let p = PlanarSet::new(primary, &frame);
    let c = candidates
        .iter()
        .map(|(s, recs)| (s.clone(), PlanarSet::new(recs, &frame)))
        .collect();
    select_secondary_planar(&p, &c)
}

fn merge_planar(
    primary: &[FootprintRecord],
    primary_set: &PlanarSet,
    secondary: &[FootprintRecord],
    secondary_set: &PlanarSet,
    overlap_thresh: f64,
) -> Vec<FootprintRecord> {
    let mut out = primary.to_vec();
    for (k, rec) in secondary.iter().enumerate() {
        let area = secondary_set.areas[k];
        let overlap = primary_set.covered_area(&secondary_set.polys[k]);
        if area > 0.0 && overlap / area < overlap_thresh {
            out.push(rec.clone());
        }
    }
    out
}

/// All primary records plus the secondary records whose overlap with the
/// primary coverage is below `overlap_thresh` of their own area.
pub fn merge(
    primary: &[FootprintRecord],
    secondary: &[FootprintRecord],
    overlap_thresh: f64,
) -> Vec<FootprintRecord> {
    let frame = frame_for([primary, secondary]);
    merge_planar(
        primary,
        &PlanarSet::new(primary, &frame),
        secondary,
        &PlanarSet::new(secondary, &frame),
        overlap_thresh,
    )
}

/// One row of the per-unit contribution table.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionRow {
    pub admin_id: String,
    pub source: Source,
    pub count: usize,
    pub area_m2: f64,
}

/// Per-source count and area of a fused record list.
pub fn contribution_report(admin_id: &str, fused: &[FootprintRecord]) -> Vec<ContributionRow> {
    let mut tally: BTreeMap<Source, (usize, f64)> = BTreeMap::new();
    for r in fused {
        let e = tally.entry(r.source.clone()).or_default();
        e.0 += 1;
        e.1 += r.geometry.area_m2();
    }
    tally
        .into_iter()
        .map(|(source, (count, area_m2))| ContributionRow {
            admin_id: admin_id.to_string(),
            source,
            count,
            area_m2,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub records: Vec<FootprintRecord>,
    pub report: Vec<ContributionRow>,
    pub base: Option<Source>,
    pub secondary: Option<FusionScore>,
}

/// Base selection, secondary selection and merge for one unit. Records
/// are assigned to the unit by centroid; output records carry its id.
pub fn fuse_admin(
    unit: &AdminUnit,
    sources: &BTreeMap<Source, Vec<FootprintRecord>>,
) -> FusionOutcome {
    fuse_admin_with(unit, sources, DEFAULT_OVERLAP_THRESH)
}

pub fn fuse_admin_with(
    unit: &AdminUnit,
    sources: &BTreeMap<Source, Vec<FootprintRecord>>,
    overlap_thresh: f64,
) -> FusionOutcome {
    let clipped: BTreeMap<Source, Vec<FootprintRecord>> = sources
        .iter()
        .map(|(s, recs)| {
            let mine: Vec<FootprintRecord> = recs.iter().filter(|r| unit.owns(r)).cloned().collect();
            (s.clone(), mine)
        })
        .filter(|(_, recs)| !recs.is_empty())
        .collect();
    let available: Vec<Source> = clipped.keys().cloned().collect();
    let Some(base) = select_base_source(unit, &available) else {
        return FusionOutcome {
            records: Vec::new(),
            report: Vec::new(),
            base: None,
            secondary: None,
        };
    };

    let frame = LocalFrame::centered_on(&unit.geometry.bbox());
    let mut sets: BTreeMap<Source, PlanarSet> = clipped
        .iter()
        .map(|(s, recs)| (s.clone(), PlanarSet::new(recs, &frame)))
        .collect();
    let base_set = sets.remove(&base).unwrap();
    let secondary = select_secondary_planar(&base_set, &sets);

    let base_recs = &clipped[&base];
    let mut records = match &secondary {
        Some(score) => merge_planar(
            base_recs,
            &base_set,
            &clipped[&score.source],
            &sets[&score.source],
            overlap_thresh,
        ),
        None => base_recs.clone(),
    };
    for r in &mut records {
        r.admin_id = Some(unit.admin_id.clone());
    }
    let report = contribution_report(&unit.admin_id, &records);
    FusionOutcome {
        records,
        report,
        base: Some(base),
        secondary,
    }
}

/// Read-only per-source record store with a bounding-box index.
pub struct SourceStore {
    pub source: Source,
    records: Vec<FootprintRecord>,
    index: SpatialIndex,
}

impl SourceStore {
    pub fn new(source: Source, records: Vec<FootprintRecord>) -> Self {
        let index = SpatialIndex::build(records.iter().map(|r| r.geometry.bbox()));
        SourceStore { source, records, index }
    }

    pub fn records(&self) -> &[FootprintRecord] {
        &self.records
    }

    pub fn near(&self, b: &BBox) -> Vec<FootprintRecord> {
        self.index.query(b).into_iter().map(|i| self.records[i].clone()).collect()
    }
}

/// Fuse every unit in parallel. Output order follows `units`.
pub fn fuse_units(units: &[AdminUnit], stores: &[SourceStore]) -> Vec<FusionOutcome> {
    fuse_units_with(units, stores, DEFAULT_OVERLAP_THRESH)
}

pub fn fuse_units_with(
    units: &[AdminUnit],
    stores: &[SourceStore],
    overlap_thresh: f64,
) -> Vec<FusionOutcome> {
    units
        .par_iter()
        .map(|unit| {
            let b = unit.geometry.bbox();
            let mut sources: BTreeMap<Source, Vec<FootprintRecord>> = BTreeMap::new();
            for store in stores {
                sources.entry(store.source.clone()).or_default().extend(store.near(&b));
            }
            fuse_admin_with(unit, &sources, overlap_thresh)
        })
        .collect()
}
