//! Georeferenced single-band rasters, polygon burning and binary morphology.

use std::fmt;
use std::str::FromStr;

use geo::Polygon;

use crate::error::{Error, Result};
use crate::geom::{meters_per_degree, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Units {
    Degrees,
    Meters,
}

/// North-up grid geometry. `origin` is the upper-left corner; rows advance
/// towards decreasing y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub pixel_size: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub units: Units,
}

impl GridSpec {
    pub fn new(
        origin: (f64, f64),
        pixel_size: (f64, f64),
        width: usize,
        height: usize,
        units: Units,
    ) -> Result<Self> {
        let spec = GridSpec {
            origin,
            pixel_size,
            width,
            height,
            units,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid covering `bbox` with pixels anchored at its upper-left corner.
    pub fn covering(bbox: &BBox, pixel: f64, units: Units) -> Result<Self> {
        if bbox.is_empty() {
            return Err(Error::InvalidGrid("empty extent".into()));
        }
        let w = ((bbox.width() / pixel).ceil() as usize).max(1);
        let h = ((bbox.height() / pixel).ceil() as usize).max(1);
        GridSpec::new((bbox.min_x, bbox.max_y), (pixel, pixel), w, h, units)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid("grid has no pixels".into()));
        }
        let (dx, dy) = self.pixel_size;
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "pixel size ({dx}, {dy}) must be positive"
            )));
        }
        if !(self.origin.0.is_finite() && self.origin.1.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.pixel_size.0,
            self.origin.1 - (row as f64 + 0.5) * self.pixel_size.1,
        )
    }

    /// Pixel whose cell contains (x, y); cells are half-open towards the
    /// lower-right.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fc = ((x - self.origin.0) / self.pixel_size.0).floor();
        let fr = ((self.origin.1 - y) / self.pixel_size.1).floor();
        if fc < 0.0 || fr < 0.0 || fc >= self.width as f64 || fr >= self.height as f64 {
            return None;
        }
        Some((fc as usize, fr as usize))
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(
            self.origin.0,
            self.origin.1 - self.height as f64 * self.pixel_size.1,
            self.origin.0 + self.width as f64 * self.pixel_size.0,
            self.origin.1,
        )
    }

    /// Pixel footprint in meters (x, y). Degree grids use the scale at the
    /// grid's central latitude.
    pub fn pixel_size_m(&self) -> (f64, f64) {
        match self.units {
            Units::Meters => self.pixel_size,
            Units::Degrees => {
                let m = meters_per_degree();
                let lat = self.bbox().center().1.to_radians();
                (self.pixel_size.0 * m * lat.cos(), self.pixel_size.1 * m)
            }
        }
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_size.0 * self.pixel_size.1
    }
}

/// What the values of a raster mean; constrains the admissible values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Semantic {
    Probability,
    HeightMeters,
    BinaryMask,
    VarianceM2,
    VolumeM3,
    LandCoverClass,
    Reflectance,
}

impl Semantic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Semantic::Probability => "Probability",
            Semantic::HeightMeters => "HeightMeters",
            Semantic::BinaryMask => "BinaryMask",
            Semantic::VarianceM2 => "VarianceM2",
            Semantic::VolumeM3 => "VolumeM3",
            Semantic::LandCoverClass => "LandCoverClass",
            Semantic::Reflectance => "Reflectance",
        }
    }
}

impl fmt::Display for Semantic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Semantic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "Probability" => Semantic::Probability,
            "HeightMeters" => Semantic::HeightMeters,
            "BinaryMask" => Semantic::BinaryMask,
            "VarianceM2" => Semantic::VarianceM2,
            "VolumeM3" => Semantic::VolumeM3,
            "LandCoverClass" => Semantic::LandCoverClass,
            "Reflectance" => Semantic::Reflectance,
            other => return Err(Error::InvalidParameter(format!("unknown semantic {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub nodata: Option<f64>,
    pub semantic: Semantic,
}

impl RasterGrid {
    pub fn new(
        spec: GridSpec,
        values: Vec<f64>,
        nodata: Option<f64>,
        semantic: Semantic,
    ) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.width,
                spec.height
            )));
        }
        let grid = RasterGrid {
            spec,
            values,
            nodata,
            semantic,
        };
        grid.check_values()?;
        Ok(grid)
    }

    pub fn filled(spec: GridSpec, value: f64, nodata: Option<f64>, semantic: Semantic) -> Self {
        RasterGrid {
            spec,
            values: vec![value; spec.len()],
            nodata,
            semantic,
        }
    }

    fn check_values(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidGrid(format!("{} raster: {what}", self.semantic)));
        for &v in &self.values {
            if self.is_nodata(v) {
                continue;
            }
            match self.semantic {
                Semantic::Probability if !(0.0..=1.0).contains(&v) => {
                    return bad("values must lie in [0, 1]")
                }
                Semantic::BinaryMask if v != 0.0 && v != 1.0 => return bad("values must be 0 or 1"),
                // Height predictions may dip below zero; consumers clamp them.
                Semantic::VarianceM2 | Semantic::VolumeM3 if v < 0.0 => {
                    return bad("values must be non-negative")
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn expect_semantic(&self, expected: Semantic) -> Result<()> {
        if self.semantic != expected {
            return Err(Error::SemanticMismatch {
                expected: expected.to_string(),
                found: self.semantic.to_string(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v.is_nan() || self.nodata.is_some_and(|nd| v == nd)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.spec.index(col, row)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let i = self.spec.index(col, row);
        self.values[i] = v;
    }

    /// Valid value at pixel, `None` for nodata.
    #[inline]
    pub fn valid(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.get(col, row);
        (!self.is_nodata(v)).then_some(v)
    }

    /// Nearest-neighbour sample at world coordinates.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (c, r) = self.spec.pixel_of(x, y)?;
        self.valid(c, r)
    }

    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.spec == other.spec
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn nodata_value(&self) -> f64 {
        self.nodata.unwrap_or(f64::NAN)
    }
}

// ---------------------------------------------------------------------------
// polygon burning

/// Visit every pixel whose center lies inside `poly` (even-odd over all
/// rings). Rows are visited top to bottom, columns left to right.
pub fn scan_polygon(poly: &Polygon<f64>, spec: &GridSpec, mut visit: impl FnMut(usize, usize)) {
    let b = BBox::of_polygon(poly);
    if b.is_empty() {
        return;
    }
    let (ox, oy) = spec.origin;
    let (pw, ph) = spec.pixel_size;
    let r_lo = (((oy - b.max_y) / ph - 0.5).floor().max(0.0)) as usize;
    let r_hi_f = ((oy - b.min_y) / ph - 0.5).ceil();
    if r_hi_f < 0.0 {
        return;
    }
    let r_hi = (r_hi_f as usize).min(spec.height.saturating_sub(1));
    let rings: Vec<&[geo::Coord<f64>]> = std::iter::once(&poly.exterior().0[..])
        .chain(poly.interiors().iter().map(|r| &r.0[..]))
        .collect();
    let mut xs: Vec<f64> = Vec::new();
    let center_x = |c: usize| ox + (c as f64 + 0.5) * pw;
    for row in r_lo..=r_hi {
        if row >= spec.height {
            break;
        }
        let yc = oy - (row as f64 + 0.5) * ph;
        xs.clear();
        for ring in &rings {
            let n = ring.len();
            if n < 3 {
                continue;
            }
            let mut j = n - 1;
            for i in 0..n {
                let (a, bb) = (ring[i], ring[j]);
                if (a.y > yc) != (bb.y > yc) {
                    xs.push(a.x + (yc - a.y) * (bb.x - a.x) / (bb.y - a.y));
                }
                j = i;
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let (xa, xb) = (pair[0], pair[1]);
            // First column with center >= xa, first column with center >= xb.
            let first_at_or_after = |x: f64| -> usize {
                let guess = ((x - ox) / pw - 0.5).ceil();
                let mut c = guess.clamp(0.0, spec.width as f64) as usize;
                while c > 0 && center_x(c - 1) >= x {
                    c -= 1;
                }
                while c < spec.width && center_x(c) < x {
                    c += 1;
                }
                c
            };
            let c0 = first_at_or_after(xa);
            let c1 = first_at_or_after(xb);
            for col in c0..c1 {
                visit(col, row);
            }
        }
    }
}

/// Burn polygons into a fresh grid of zeros. A pixel is set when its center
/// lies inside a polygon; later shapes overwrite earlier ones.
pub fn rasterize<'a, I>(shapes: I, spec: &GridSpec, semantic: Semantic) -> Result<RasterGrid>
where
    I: IntoIterator<Item = (&'a Polygon<f64>, f64)>,
{
    spec.validate()?;
    let mut grid = RasterGrid::filled(*spec, 0.0, None, semantic);
    for (poly, value) in shapes {
        scan_polygon(poly, spec, |c, r| grid.set(c, r, value));
    }
    Ok(grid)
}

/// Burn footprint records (lon/lat) into a degree grid.
pub fn rasterize_records(
    records: &[crate::record::FootprintRecord],
    spec: &GridSpec,
    semantic: Semantic,
    value: impl Fn(&crate::record::FootprintRecord) -> f64,
) -> Result<RasterGrid> {
    rasterize(
        records.iter().map(|r| (r.geometry.polygon(), value(r))),
        spec,
        semantic,
    )
}

// ---------------------------------------------------------------------------
// binary morphology

/// Round half-up conversion from a metric radius to whole pixels.
pub fn radius_in_pixels(radius_m: f64, pixel_m: f64) -> usize {
    if radius_m <= 0.0 {
        return 0;
    }
    (radius_m / pixel_m + 0.5).floor() as usize
}

/// Sliding-window "any set" along one axis.
fn dilate_axis(src: &[u8], width: usize, height: usize, radius: usize, horizontal: bool) -> Vec<u8> {
    if radius == 0 {
        return src.to_vec();
    }
    let mut out = vec![0u8; src.len()];
    let (lines, len) = if horizontal { (height, width) } else { (width, height) };
    let at = |line: usize, k: usize| {
        if horizontal {
            line * width + k
        } else {
            k * width + line
        }
    };
    let mut prefix = vec![0u32; len + 1];
    for line in 0..lines {
        for k in 0..len {
            prefix[k + 1] = prefix[k] + src[at(line, k)] as u32;
        }
        for k in 0..len {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius + 1).min(len);
            if prefix[hi] > prefix[lo] {
                out[at(line, k)] = 1;
            }
        }
    }
    out
}

fn to_bits(m: &RasterGrid) -> Vec<u8> {
    m.values.iter().map(|&v| (v == 1.0) as u8).collect()
}

fn from_bits(template: &RasterGrid, bits: Vec<u8>) -> RasterGrid {
    RasterGrid {
        spec: template.spec,
        values: bits.into_iter().map(f64::from).collect(),
        nodata: None,
        semantic: Semantic::BinaryMask,
    }
}

/// Rectangular dilation with half-widths (`rx`, `ry`) pixels.
pub fn dilate_pixels(m: &RasterGrid, rx: usize, ry: usize) -> RasterGrid {
    let (w, h) = (m.spec.width, m.spec.height);
    let bits = to_bits(m);
    let bits = dilate_axis(&bits, w, h, rx, true);
    let bits = dilate_axis(&bits, w, h, ry, false);
    from_bits(m, bits)
}

/// Rectangular erosion; pixels outside the grid are ignored rather than
/// treated as background.
pub fn erode_pixels(m: &RasterGrid, rx: usize, ry: usize) -> RasterGrid {
    let (w, h) = (m.spec.width, m.spec.height);
    let inv: Vec<u8> = m.values.iter().map(|&v| (v != 1.0) as u8).collect();
    let inv = dilate_axis(&inv, w, h, rx, true);
    let inv = dilate_axis(&inv, w, h, ry, false);
    from_bits(m, inv.into_iter().map(|b| 1 - b).collect())
}

/// Dilate a binary mask with a square window of half-width `radius_m`
/// (converted to pixels per axis, rounding half-up).
pub fn dilate_mask(m: &RasterGrid, radius_m: f64) -> RasterGrid {
    let (px, py) = m.spec.pixel_size_m();
    let rx = radius_in_pixels(radius_m, px);
    let ry = radius_in_pixels(radius_m, py);
    dilate_pixels(m, rx, ry)
}
