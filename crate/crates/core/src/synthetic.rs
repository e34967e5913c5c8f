//! Seeded synthetic city used as the bundled end-to-end fixture.
//!
//! Buildings are pixel-aligned rectangles (some with a courtyard) on a
//! roughly 3 m degree grid. From them the generator derives two partial
//! vector sources, a probability raster with off-city noise, four height
//! predictions with shifted nodata borders, a coarse built-up mask, a few
//! candidate scenes and two administrative units.

use std::fmt::Write as _;
use std::path::Path;

use geo::{Coord, LineString, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map};

use crate::error::{Error, Result};
use crate::fusion::{AdminUnit, Continent};
use crate::geom::{GeoMultiPolygon, GeoPolygon};
use crate::io::features::{feature_line, write_file, write_footprints, write_sorted_lines};
use crate::io::geotiff::{write_raster, SampleType};
use crate::lod1::NODATA;
use crate::raster::{scan_polygon, GridSpec, RasterGrid, Semantic, Units};
use crate::record::{FootprintRecord, Source};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CityParams {
    /// Grid center (lon, lat).
    pub center: (f64, f64),
    /// Pixel size in degrees (lon, lat).
    pub pixel_deg: (f64, f64),
    /// Grid size in pixels (square).
    pub size_px: usize,
    /// Side of the built core in pixels, centered in the grid.
    pub core_px: usize,
    /// Block pitch in pixels; at most one building per block.
    pub block_px: usize,
    /// Coarse built-up and scene pixels per fine pixel side.
    pub coarse_factor: usize,
    pub seed: u64,
}

impl Default for CityParams {
    fn default() -> Self {
        CityParams {
            center: (11.57, 48.14),
            pixel_deg: (0.00004, 0.000027),
            size_px: 400,
            core_px: 196,
            block_px: 14,
            coarse_factor: 10,
            seed: 7,
        }
    }
}

/// One building in pixel units of the fine grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Building {
    pub col: usize,
    pub row: usize,
    pub w: usize,
    pub h: usize,
    pub courtyard: bool,
    pub height_m: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub params: CityParams,
    pub spec: GridSpec,
    pub buildings: Vec<Building>,
    pub ground_truth: Vec<FootprintRecord>,
    pub osm: Vec<FootprintRecord>,
    pub microsoft: Vec<FootprintRecord>,
    pub probability: RasterGrid,
    pub heights: Vec<RasterGrid>,
    pub landcover: RasterGrid,
    /// (id, cloud fraction, year, reflectance, usable mask).
    pub scenes: Vec<(String, f64, i32, RasterGrid, RasterGrid)>,
    pub admin: Vec<AdminUnit>,
}

fn corner(spec: &GridSpec, i: usize, j: usize) -> Coord<f64> {
    Coord {
        x: spec.origin.0 + i as f64 * spec.pixel_size.0,
        y: spec.origin.1 - j as f64 * spec.pixel_size.1,
    }
}

fn rect_ring(spec: &GridSpec, c0: usize, r0: usize, c1: usize, r1: usize) -> LineString<f64> {
    LineString(vec![
        corner(spec, c0, r1),
        corner(spec, c1, r1),
        corner(spec, c1, r0),
        corner(spec, c0, r0),
        corner(spec, c0, r1),
    ])
}

impl Building {
    /// Footprint with vertices on pixel corners of `spec`.
    pub fn polygon(&self, spec: &GridSpec) -> Polygon<f64> {
        let ext = rect_ring(spec, self.col, self.row, self.col + self.w, self.row + self.h);
        let holes = if self.courtyard {
            let (cc, cr) = (self.col + self.w / 2 - 1, self.row + self.h / 2 - 1);
            vec![rect_ring(spec, cc, cr, cc + 3, cr + 3)]
        } else {
            vec![]
        };
        Polygon::new(ext, holes)
    }
}

fn record(id: String, p: Polygon<f64>, source: Source) -> Result<FootprintRecord> {
    Ok(FootprintRecord::new(id, GeoPolygon::from_polygon(p)?, source))
}

pub fn generate_city(params: CityParams) -> Result<SyntheticCity> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.size_px;
    let (px, py) = params.pixel_deg;
    let origin = (
        params.center.0 - n as f64 / 2.0 * px,
        params.center.1 + n as f64 / 2.0 * py,
    );
    let spec = GridSpec::new(origin, (px, py), n, n, Units::Degrees)?;
    let core0 = (n - params.core_px) / 2;
    let blocks = params.core_px / params.block_px;

    let mut buildings = Vec::new();
    for br in 0..blocks {
        for bc in 0..blocks {
            if rng.random::<f64>() >= 0.85 {
                continue;
            }
            let b = params.block_px;
            // At least four background pixels between neighbours survive the
            // closing step of mask regularization.
            let (w, h) = (rng.random_range(3..=b - 4), rng.random_range(3..=b - 4));
            let (oc, or) = (rng.random_range(2..=b - 2 - w), rng.random_range(2..=b - 2 - h));
            buildings.push(Building {
                col: core0 + bc * b + oc,
                row: core0 + br * b + or,
                w,
                h,
                courtyard: w >= 9 && h >= 9,
                height_m: (rng.random_range(3.0..40.0f64) * 10.0).round() / 10.0,
            });
        }
    }

    let gt_source = Source::Other("GT".into());
    let mut ground_truth = Vec::new();
    let mut osm = Vec::new();
    let mut microsoft = Vec::new();
    for (k, b) in buildings.iter().enumerate() {
        let p = b.polygon(&spec);
        ground_truth.push(record(format!("gt_{k:05}"), p.clone(), gt_source.clone())?.with_height(b.height_m)?);
        if rng.random::<f64>() < 0.55 {
            osm.push(record(format!("osm_{k:05}"), p.clone(), Source::Osm)?);
        }
        if rng.random::<f64>() < 0.65 {
            microsoft.push(record(format!("ms_{k:05}"), p, Source::Microsoft)?);
        }
    }

    // Probability: buildings high, background low, noise blobs in corners
    // and isolated speckle inside the core.
    let mut prob_v: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(0.0..0.3)).collect();
    let mut truth_h = vec![0.0f64; spec.len()];
    for b in &buildings {
        scan_polygon(&b.polygon(&spec), &spec, |c, r| {
            let i = spec.index(c, r);
            prob_v[i] = rng.random_range(0.6..0.99);
            truth_h[i] = b.height_m;
        });
    }
    for &(c, r) in &[(6, 6), (n - 12, 6), (6, n - 12), (n - 12, n - 12)] {
        for rr in r..r + 5 {
            for cc in c..c + 5 {
                prob_v[spec.index(cc, rr)] = 0.8;
            }
        }
    }
    for _ in 0..40 {
        let (c, r) = (rng.random_range(core0..core0 + params.core_px), rng.random_range(core0..core0 + params.core_px));
        let i = spec.index(c, r);
        if truth_h[i] == 0.0 {
            prob_v[i] = 0.7;
        }
    }
    // Stored as f32 on disk; keep in-memory values identical to what is read back.
    let prob_v = prob_v.into_iter().map(|v| v as f32 as f64).collect();
    let probability = RasterGrid::new(spec, prob_v, Some(-1.0), Semantic::Probability)?;

    let strip = 8;
    let mut heights = Vec::with_capacity(4);
    for k in 0..4 {
        let mut v = vec![0.0; spec.len()];
        for r in 0..n {
            for c in 0..n {
                let nodata = match k {
                    0 => c < strip,
                    1 => c >= n - strip,
                    2 => r < strip,
                    _ => r >= n - strip,
                };
                let i = spec.index(c, r);
                v[i] = if nodata {
                    NODATA
                } else {
                    let noise = if truth_h[i] > 0.0 { 1.5 } else { 0.5 };
                    ((truth_h[i] + rng.random_range(-noise..noise)) as f32) as f64
                };
            }
        }
        heights.push(RasterGrid::new(spec, v, Some(NODATA), Semantic::HeightMeters)?);
    }

    let f = params.coarse_factor;
    let cspec = GridSpec::new(origin, (px * f as f64, py * f as f64), n / f, n / f, Units::Degrees)?;
    let mut lc = RasterGrid::filled(cspec, 0.0, None, Semantic::BinaryMask);
    for r in 0..n {
        for c in 0..n {
            if truth_h[spec.index(c, r)] > 0.0 {
                lc.set(c / f, r / f, 1.0);
            }
        }
    }

    let mut scenes = Vec::new();
    for (k, (cloud, year)) in [(0.04, 2019), (0.08, 2019), (0.02, 2018)].into_iter().enumerate() {
        let m = n / f;
        let refl: Vec<f64> = (0..m * m).map(|_| rng.random_range(200..4000) as f64).collect();
        let usable: Vec<f64> = (0..m * m)
            .map(|i| {
                let (c, r) = (i % m, i / m);
                let cloudy = match k {
                    0 => c >= m / 2 && r < m / 3,
                    1 => c < m / 4,
                    _ => false,
                };
                if cloudy { 0.0 } else { 1.0 }
            })
            .collect();
        scenes.push((
            format!("scene_{k}"),
            cloud,
            year,
            RasterGrid::new(cspec, refl, Some(0.0), Semantic::Reflectance)?,
            RasterGrid::new(cspec, usable, None, Semantic::BinaryMask)?,
        ));
    }

    let b = spec.bbox();
    let mid = corner(&spec, n / 2, 0).x;
    let half = |x0: f64, x1: f64| -> Result<GeoMultiPolygon> {
        let ring = vec![(x0, b.min_y), (x1, b.min_y), (x1, b.max_y), (x0, b.max_y), (x0, b.min_y)];
        Ok(GeoMultiPolygon(vec![GeoPolygon::new(ring, vec![])?]))
    };
    let admin = vec![
        AdminUnit::new("XX-W", half(b.min_x, mid)?, Continent::EU)?,
        AdminUnit::new("XX-E", half(mid, b.max_x)?, Continent::EU)?,
    ];

    Ok(SyntheticCity {
        params,
        spec,
        buildings,
        ground_truth,
        osm,
        microsoft,
        probability,
        heights,
        landcover: lc,
        scenes,
        admin,
    })
}

/// Configuration written next to the fixture files.
pub const DEMO_CONFIG: &str = r#"admin = "admin.jsonl"

[sources]
OSM = "osm.jsonl"
Microsoft = "microsoft.jsonl"

[rasters]
probability = "probability.tif"
height = ["height_0.tif", "height_1.tif", "height_2.tif", "height_3.tif"]
landcover = "landcover.tif"

[thresholds]
cloud = 0.10
probability = 0.5
overlap = 0.1
min_height_m = 1.0
dilation_m = 250.0

[acquisition]
primary_year = 2019
fallback_year = 2018
scenes = "scenes.csv"

[polygonize]
tolerance_m = 3.0
min_area_m2 = 20.0
min_ring_vertices = 4
regularize = true

[eval]
ground_truth = "ground_truth.jsonl"
city = "synthetic"
iou_resolution_m = 3.0
volume_cell_m = 10.0

[analytics]
volume_cell_m = 480.0
"#;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Write every fixture file plus `demo.toml` into `dir`.
pub fn write_city(dir: &Path, city: &SyntheticCity) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let none = Map::new();
    for (name, recs) in [
        ("ground_truth.jsonl", &city.ground_truth),
        ("osm.jsonl", &city.osm),
        ("microsoft.jsonl", &city.microsoft),
    ] {
        write_file(&dir.join(name), |w| write_footprints(w, recs, &none))?;
    }
    write_file(&dir.join("admin.jsonl"), |w| {
        let lines = city
            .admin
            .iter()
            .map(|u| {
                let mut props = Map::new();
                props.insert("admin_id".into(), json!(u.admin_id));
                props.insert("continent".into(), json!(u.continent.as_str()));
                (u.admin_id.clone(), feature_line(&u.admin_id, u.geometry.0[0].polygon(), props))
            })
            .collect();
        write_sorted_lines(w, lines)
    })?;
    write_raster(&dir.join("probability.tif"), &city.probability, SampleType::F32)?;
    for (k, h) in city.heights.iter().enumerate() {
        write_raster(&dir.join(format!("height_{k}.tif")), h, SampleType::F32)?;
    }
    write_raster(&dir.join("landcover.tif"), &city.landcover, SampleType::U8)?;
    let mut table = String::from("scene_id,cloud_fraction,year,path,mask_path\n");
    for (id, cloud, year, refl, mask) in &city.scenes {
        write_raster(&dir.join(format!("{id}.tif")), refl, SampleType::U16)?;
        write_raster(&dir.join(format!("{id}_mask.tif")), mask, SampleType::U8)?;
        let _ = writeln!(table, "{id},{cloud},{year},{id}.tif,{id}_mask.tif");
    }
    let scenes = dir.join("scenes.csv");
    std::fs::write(&scenes, table).map_err(io_err(&scenes))?;
    let cfg = dir.join("demo.toml");
    std::fs::write(&cfg, DEMO_CONFIG).map_err(io_err(&cfg))?;
    Ok(())
}
