//! Global 0.2° processing grid, scene filtering and priority mosaicking.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::raster::{GridSpec, RasterGrid, Units};

pub const TILE_SIZE_DEG: f64 = 0.2;
pub const TILES_X: i32 = 900;
pub const TILES_Y: i32 = 450;

/// Cell of the global grid spanning
/// `[ix·0.2°, (ix+1)·0.2°) × [iy·0.2°, (iy+1)·0.2°)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileId {
    pub ix: i32,
    pub iy: i32,
}

impl TileId {
    pub fn new(ix: i32, iy: i32) -> Result<Self> {
        if !(-TILES_X..TILES_X).contains(&ix) || !(-TILES_Y..TILES_Y).contains(&iy) {
            return Err(Error::InvalidParameter(format!("tile ({ix}, {iy}) out of range")));
        }
        Ok(TileId { ix, iy })
    }

    /// Bounds in degrees (min lon, min lat, max lon, max lat).
    pub fn bounds(&self) -> BBox {
        BBox::new(
            edge(self.ix),
            edge(self.iy),
            edge(self.ix + 1),
            edge(self.iy + 1),
        )
    }

    /// Degree grid covering the tile at the requested pixel size.
    pub fn grid(&self, pixel_deg: f64) -> Result<GridSpec> {
        let b = self.bounds();
        let n = (TILE_SIZE_DEG / pixel_deg).round().max(1.0) as usize;
        let px = TILE_SIZE_DEG / n as f64;
        GridSpec::new((b.min_x, b.max_y), (px, px), n, n, Units::Degrees)
    }

    pub fn all() -> impl Iterator<Item = TileId> {
        (-TILES_Y..TILES_Y).flat_map(|iy| (-TILES_X..TILES_X).map(move |ix| TileId { ix, iy }))
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.ix, self.iy)
    }
}

impl FromStr for TileId {
    type Err = Error;

    /// Accepts `ix,iy` or `ix_iy`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("tile {s:?} is not of the form ix,iy"));
        let (a, b) = s.split_once(',').or_else(|| s.rsplit_once('_')).ok_or_else(bad)?;
        let ix = a.trim().parse().map_err(|_| bad())?;
        let iy = b.trim().parse().map_err(|_| bad())?;
        TileId::new(ix, iy)
    }
}

#[inline]
fn edge(i: i32) -> f64 {
    i as f64 * TILE_SIZE_DEG
}

fn cell_index(v: f64) -> i32 {
    let mut i = (v / TILE_SIZE_DEG).floor() as i32;
    // Snap against the same edge formula used by `bounds`.
    if edge(i) > v {
        i -= 1;
    } else if edge(i + 1) <= v {
        i += 1;
    }
    i
}

/// Tile containing (lon, lat).
pub fn tile_of(lon: f64, lat: f64) -> Result<TileId> {
    if !(-180.0..180.0).contains(&lon) || !(-90.0..90.0).contains(&lat) {
        return Err(Error::InvalidCoordinate { lon, lat });
    }
    TileId::new(cell_index(lon), cell_index(lat))
}

/// Tiles from `all` whose bounds contain at least one set pixel center of
/// the built-up mask. Input order is preserved.
pub fn select_tiles(builtup: &RasterGrid, all: &[TileId]) -> Vec<TileId> {
    let mut hit = BTreeSet::new();
    let spec = &builtup.spec;
    for row in 0..spec.height {
        for col in 0..spec.width {
            if builtup.get(col, row) != 1.0 {
                continue;
            }
            let (x, y) = spec.pixel_center(col, row);
            if let Ok(t) = tile_of(x, y) {
                hit.insert(t);
            }
        }
    }
    all.iter().copied().filter(|t| hit.contains(t)).collect()
}

/// One candidate scene for a tile.
#[derive(Debug, Clone)]
pub struct SceneEntry {
    pub id: String,
    pub raster: RasterGrid,
    /// 1 where the scene is usable.
    pub usable_mask: RasterGrid,
    pub cloud_fraction: f64,
    pub acquisition_year: i32,
    /// Lower is preferred.
    pub priority: i64,
}

impl SceneEntry {
    pub fn new(
        id: impl Into<String>,
        raster: RasterGrid,
        usable_mask: RasterGrid,
        cloud_fraction: f64,
        acquisition_year: i32,
    ) -> Result<Self> {
        if !raster.same_geometry(&usable_mask) {
            return Err(Error::GridMismatch);
        }
        if !(0.0..=1.0).contains(&cloud_fraction) {
            return Err(Error::InvalidParameter(format!(
                "cloud fraction {cloud_fraction} outside [0, 1]"
            )));
        }
        Ok(SceneEntry {
            id: id.into(),
            raster,
            usable_mask,
            cloud_fraction,
            acquisition_year,
            priority: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePolicy {
    pub max_cloud: f64,
    pub primary_year: i32,
    pub fallback_year: i32,
}

impl Default for ScenePolicy {
    fn default() -> Self {
        ScenePolicy {
            max_cloud: 0.10,
            primary_year: 2019,
            fallback_year: 2018,
        }
    }
}

/// Cloud and year filter over the candidate scenes of one tile: keep
/// primary-year scenes strictly under the cloud threshold, or the
/// fallback-year scenes under the same threshold when none survive.
pub fn filter_scenes(scenes: Vec<SceneEntry>, policy: &ScenePolicy) -> Vec<SceneEntry> {
    let clear = |s: &SceneEntry| s.cloud_fraction < policy.max_cloud;
    let (primary, rest): (Vec<_>, Vec<_>) = scenes
        .into_iter()
        .partition(|s| s.acquisition_year == policy.primary_year);
    let primary: Vec<SceneEntry> = primary.into_iter().filter(clear).collect();
    if !primary.is_empty() {
        return primary;
    }
    rest.into_iter()
        .filter(|s| s.acquisition_year == policy.fallback_year && clear(s))
        .collect()
}

/// Default scene ordering: clearer first, then more recent, then id.
pub fn default_scene_order(a: &SceneEntry, b: &SceneEntry) -> Ordering {
    a.cloud_fraction
        .total_cmp(&b.cloud_fraction)
        .then(b.acquisition_year.cmp(&a.acquisition_year))
        .then_with(|| a.id.cmp(&b.id))
}

/// Assign priorities 0, 1, 2, … following `order`.
pub fn assign_priorities(
    scenes: &mut [SceneEntry],
    order: impl Fn(&SceneEntry, &SceneEntry) -> Ordering,
) {
    let mut idx: Vec<usize> = (0..scenes.len()).collect();
    idx.sort_by(|&i, &j| order(&scenes[i], &scenes[j]));
    for (rank, i) in idx.into_iter().enumerate() {
        scenes[i].priority = rank as i64;
    }
}

/// Per target pixel, the position of the scene that supplies it, or `None`
/// where no scene is usable. Scenes are sampled by nearest neighbour.
pub fn mosaic_selection(scenes: &[SceneEntry], target: &GridSpec) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    // Equal priorities fall back to id so the result does not depend on
    // input order.
    order.sort_by(|&i, &j| {
        scenes[i]
            .priority
            .cmp(&scenes[j].priority)
            .then_with(|| scenes[i].id.cmp(&scenes[j].id))
    });
    let mut out = vec![None; target.len()];
    for row in 0..target.height {
        for col in 0..target.width {
            let (x, y) = target.pixel_center(col, row);
            out[target.index(col, row)] = order.iter().copied().find(|&k| {
                let m = &scenes[k].usable_mask;
                m.spec
                    .pixel_of(x, y)
                    .is_some_and(|(c, r)| m.get(c, r) == 1.0)
            });
        }
    }
    out
}

/// Priority mosaic of scene rasters onto `target`.
pub fn mosaic(scenes: &[SceneEntry], target: &GridSpec) -> Result<RasterGrid> {
    target.validate()?;
    let semantic = scenes
        .first()
        .map(|s| s.raster.semantic)
        .unwrap_or(crate::raster::Semantic::Reflectance);
    let nodata = scenes.first().and_then(|s| s.raster.nodata);
    let selection = mosaic_selection(scenes, target);
    Ok(apply_selection(
        &selection,
        scenes.iter().map(|s| &s.raster).collect::<Vec<_>>().as_slice(),
        target,
        nodata,
        semantic,
    ))
}

/// Fill a target grid from per-pixel scene choices; used for every band of
/// a multi-band mosaic.
pub fn apply_selection(
    selection: &[Option<usize>],
    rasters: &[&RasterGrid],
    target: &GridSpec,
    nodata: Option<f64>,
    semantic: crate::raster::Semantic,
) -> RasterGrid {
    let fill = nodata.unwrap_or(f64::NAN);
    let mut out = RasterGrid::filled(*target, fill, nodata, semantic);
    for row in 0..target.height {
        for col in 0..target.width {
            if let Some(k) = selection[target.index(col, row)] {
                let (x, y) = target.pixel_center(col, row);
                let src = rasters[k];
                if let Some((c, r)) = src.spec.pixel_of(x, y) {
                    out.set(col, row, src.get(c, r));
                }
            }
        }
    }
    out
}
