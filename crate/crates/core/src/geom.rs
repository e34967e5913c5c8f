//! Polygon primitives shared by every stage of the pipeline.
//!
//! Footprints are stored as WGS84 longitude/latitude polygons. Anything that
//! needs metric quantities (areas, overlaps, tolerances in meters) projects the
//! geometry into a [`LocalFrame`], a spherical Lambert azimuthal equal-area
//! projection centered near the data, and works in planar meters from there.

use geo::{BooleanOps, Coord, LineString, MultiPolygon, Polygon};

use crate::error::{Error, Result};

/// Authalic radius of the WGS84 ellipsoid, meters.
pub const EARTH_RADIUS_M: f64 = 6_371_007.181;

/// Meters spanned by one degree of latitude on the authalic sphere.
pub fn meters_per_degree() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub const EMPTY: BBox = BBox {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };

    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        BBox {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn of_coords<'a>(coords: impl IntoIterator<Item = &'a Coord<f64>>) -> Self {
        let mut b = BBox::EMPTY;
        for c in coords {
            b.expand(c.x, c.y);
        }
        b
    }

    pub fn of_polygon(p: &Polygon<f64>) -> Self {
        BBox::of_coords(p.exterior().0.iter())
    }

    pub fn is_empty(&self) -> bool {
        !(self.min_x <= self.max_x && self.min_y <= self.max_y)
    }

    pub fn expand(&mut self, x: f64, y: f64) {
        self.min_x = self.min_x.min(x);
        self.min_y = self.min_y.min(y);
        self.max_x = self.max_x.max(x);
        self.max_y = self.max_y.max(y);
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min_x: self.min_x.min(other.min_x),
            min_y: self.min_y.min(other.min_y),
            max_x: self.max_x.max(other.max_x),
            max_y: self.max_y.max(other.max_y),
        }
    }

    /// Closed-interval overlap test; boxes that only touch intersect.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

// ---------------------------------------------------------------------------
// planar helpers

#[inline]
pub(crate) fn orient(a: Coord<f64>, b: Coord<f64>, c: Coord<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Shoelace area of a closed ring; positive for counter-clockwise rings.
pub fn ring_signed_area(ring: &[Coord<f64>]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    // Shift to the first vertex to keep the products small.
    let o = ring[0];
    let mut acc = 0.0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        acc += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    let (a, b) = (ring[ring.len() - 1], ring[0]);
    acc += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    0.5 * acc
}

/// Planar area of a polygon (exterior minus holes), in squared input units.
pub fn planar_area(p: &Polygon<f64>) -> f64 {
    let outer = ring_signed_area(&p.exterior().0).abs();
    let holes: f64 = p
        .interiors()
        .iter()
        .map(|h| ring_signed_area(&h.0).abs())
        .sum();
    (outer - holes).max(0.0)
}

pub fn multi_planar_area(mp: &MultiPolygon<f64>) -> f64 {
    mp.0.iter().map(planar_area).sum()
}

pub fn ring_perimeter(ring: &[Coord<f64>]) -> f64 {
    ring.windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .sum()
}

pub fn planar_perimeter(p: &Polygon<f64>) -> f64 {
    ring_perimeter(&p.exterior().0)
        + p.interiors()
            .iter()
            .map(|h| ring_perimeter(&h.0))
            .sum::<f64>()
}

/// Crossing-number test against a closed ring. Points exactly on the
/// boundary follow the half-open convention used by the rasterizer.
pub fn point_in_ring(x: f64, y: f64, ring: &[Coord<f64>]) -> bool {
    let mut inside = false;
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > y) != (b.y > y) {
            let xi = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
            if x < xi {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Even-odd containment over all rings of the polygon.
pub fn point_in_polygon(x: f64, y: f64, p: &Polygon<f64>) -> bool {
    let mut inside = point_in_ring(x, y, &p.exterior().0);
    for h in p.interiors() {
        if point_in_ring(x, y, &h.0) {
            inside = !inside;
        }
    }
    inside
}

/// Area-weighted centroid of the polygon (holes subtracted).
pub fn planar_centroid(p: &Polygon<f64>) -> Coord<f64> {
    let mut a_sum = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    let o = p.exterior().0[0];
    let rings = std::iter::once(p.exterior()).chain(p.interiors());
    for ring in rings {
        let pts = &ring.0;
        for w in pts.windows(2) {
            let (ax, ay) = (w[0].x - o.x, w[0].y - o.y);
            let (bx, by) = (w[1].x - o.x, w[1].y - o.y);
            let cross = ax * by - bx * ay;
            a_sum += cross;
            cx += (ax + bx) * cross;
            cy += (ay + by) * cross;
        }
    }
    if a_sum.abs() < f64::MIN_POSITIVE {
        let b = BBox::of_polygon(p);
        let (x, y) = b.center();
        return Coord { x, y };
    }
    Coord {
        x: o.x + cx / (3.0 * a_sum),
        y: o.y + cy / (3.0 * a_sum),
    }
}

fn segments_conflict(a1: Coord<f64>, a2: Coord<f64>, b1: Coord<f64>, b2: Coord<f64>) -> bool {
    if a1.x.max(a2.x) < b1.x.min(b2.x)
        || b1.x.max(b2.x) < a1.x.min(a2.x)
        || a1.y.max(a2.y) < b1.y.min(b2.y)
        || b1.y.max(b2.y) < a1.y.min(a2.y)
    {
        return false;
    }
    let o1 = orient(a1, a2, b1);
    let o2 = orient(a1, a2, b2);
    let o3 = orient(b1, b2, a1);
    let o4 = orient(b1, b2, a2);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    if o1 == 0.0 && o2 == 0.0 {
        // Collinear: conflict when the overlap has positive length.
        let (ax, bx) = if (a2.x - a1.x).abs() >= (a2.y - a1.y).abs() {
            ((a1.x, a2.x), (b1.x, b2.x))
        } else {
            ((a1.y, a2.y), (b1.y, b2.y))
        };
        let lo = ax.0.min(ax.1).max(bx.0.min(bx.1));
        let hi = ax.0.max(ax.1).min(bx.0.max(bx.1));
        return hi > lo;
    }
    false
}

fn edges(ring: &LineString<f64>) -> impl Iterator<Item = (Coord<f64>, Coord<f64>)> + '_ {
    ring.0.windows(2).map(|w| (w[0], w[1]))
}

/// Whether any two edges of the given rings cross or overlap. Edges that
/// merely touch at a point are allowed.
pub fn rings_self_intersect(rings: &[&LineString<f64>]) -> bool {
    let all: Vec<(usize, usize, Coord<f64>, Coord<f64>)> = rings
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| edges(r).enumerate().map(move |(ei, (a, b))| (ri, ei, a, b)))
        .collect();
    let ring_len: Vec<usize> = rings.iter().map(|r| r.0.len().saturating_sub(1)).collect();
    // Sweep over x to skip far-apart pairs.
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&i, &j| {
        let mi = all[i].2.x.min(all[i].3.x);
        let mj = all[j].2.x.min(all[j].3.x);
        mi.total_cmp(&mj)
    });
    for (k, &i) in order.iter().enumerate() {
        let (ri, ei, a1, a2) = all[i];
        let max_x = a1.x.max(a2.x);
        for &j in &order[k + 1..] {
            let (rj, ej, b1, b2) = all[j];
            if b1.x.min(b2.x) > max_x {
                break;
            }
            if ri == rj {
                let n = ring_len[ri];
                let adjacent = ei.abs_diff(ej) == 1 || ei.abs_diff(ej) == n - 1;
                if adjacent {
                    // Adjacent edges only conflict when they fold back on each other.
                    let shared = if a2 == b1 || a2 == b2 { a2 } else { a1 };
                    let pa = if a1 == shared { a2 } else { a1 };
                    let pb = if b1 == shared { b2 } else { b1 };
                    if orient(shared, pa, pb) == 0.0
                        && (pa.x - shared.x) * (pb.x - shared.x)
                            + (pa.y - shared.y) * (pb.y - shared.y)
                            > 0.0
                    {
                        return true;
                    }
                    continue;
                }
            }
            if segments_conflict(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

fn normalize_ring(coords: &[Coord<f64>]) -> Vec<Coord<f64>> {
    let mut out: Vec<Coord<f64>> = Vec::with_capacity(coords.len() + 1);
    for &c in coords {
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    if let Some(&first) = out.first() {
        out.push(first);
    }
    out
}

fn oriented(mut ring: Vec<Coord<f64>>, ccw: bool) -> LineString<f64> {
    if (ring_signed_area(&ring) > 0.0) != ccw {
        ring.reverse();
    }
    LineString(ring)
}

/// Validate a planar polygon: closed rings of at least four coordinates, no
/// crossing edges, positive area and holes inside the exterior. Returns the
/// polygon with duplicate vertices removed, exterior counter-clockwise and
/// holes clockwise.
pub fn normalize_polygon(p: &Polygon<f64>) -> Result<Polygon<f64>> {
    let ext = normalize_ring(&p.exterior().0);
    if ext.len() < 4 {
        return Err(Error::InvalidGeometry(format!(
            "exterior ring has {} vertices, need at least 4",
            ext.len()
        )));
    }
    if ext.iter().any(|c| !c.x.is_finite() || !c.y.is_finite()) {
        return Err(Error::InvalidGeometry("non-finite coordinate".into()));
    }
    let mut holes = Vec::with_capacity(p.interiors().len());
    for h in p.interiors() {
        let h = normalize_ring(&h.0);
        if h.len() < 4 {
            return Err(Error::InvalidGeometry("degenerate hole".into()));
        }
        holes.push(oriented(h, false));
    }
    let ext = oriented(ext, true);
    if ring_signed_area(&ext.0) <= 0.0 {
        return Err(Error::InvalidGeometry("zero-area exterior".into()));
    }
    let mut rings: Vec<&LineString<f64>> = vec![&ext];
    rings.extend(holes.iter());
    if rings_self_intersect(&rings) {
        return Err(Error::InvalidGeometry("self-intersecting rings".into()));
    }
    for h in &holes {
        if ring_signed_area(&h.0) == 0.0 {
            return Err(Error::InvalidGeometry("zero-area hole".into()));
        }
        // Rings do not cross, so one interior point decides containment.
        let probe = ring_interior_point(&h.0);
        if !point_in_ring(probe.x, probe.y, &ext.0) {
            return Err(Error::InvalidGeometry("hole outside exterior".into()));
        }
    }
    Ok(Polygon::new(ext, holes))
}

/// A point strictly inside a simple ring: the midpoint of a short chord
/// across the first convex corner.
fn ring_interior_point(ring: &[Coord<f64>]) -> Coord<f64> {
    let n = ring.len() - 1;
    let ccw = ring_signed_area(ring) > 0.0;
    for i in 0..n {
        let a = ring[(i + n - 1) % n];
        let b = ring[i];
        let c = ring[(i + 1) % n];
        let o = orient(a, b, c);
        if (o > 0.0) == ccw && o != 0.0 {
            let t = 1e-3;
            let p = Coord {
                x: b.x + t * ((a.x - b.x) + (c.x - b.x)) * 0.5,
                y: b.y + t * ((a.y - b.y) + (c.y - b.y)) * 0.5,
            };
            if point_in_ring(p.x, p.y, ring) {
                return p;
            }
        }
    }
    ring[0]
}

/// Rebuild a polygon with even-odd filling. Keeps the largest resulting part.
pub fn repair_even_odd(p: &Polygon<f64>) -> Option<Polygon<f64>> {
    let empty: MultiPolygon<f64> = MultiPolygon(vec![]);
    let rebuilt = p.union_with_fill_rule(&empty, geo::algorithm::bool_ops::FillRule::EvenOdd);
    rebuilt
        .0
        .into_iter()
        .filter_map(|part| normalize_polygon(&part).ok())
        .max_by(|a, b| planar_area(a).total_cmp(&planar_area(b)))
}

// ---------------------------------------------------------------------------
// WGS84 polygon

/// A valid WGS84 polygon, coordinates in (lon, lat) degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPolygon(Polygon<f64>);

/// Outcome of constructing a polygon from possibly invalid input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Repaired,
}

impl GeoPolygon {
    pub fn new(exterior: Vec<(f64, f64)>, holes: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let ext = LineString::from(exterior);
        let holes = holes.into_iter().map(LineString::from).collect();
        Self::from_polygon(Polygon::new(ext, holes))
    }

    /// Strict construction: invalid input is rejected.
    pub fn from_polygon(p: Polygon<f64>) -> Result<Self> {
        let p = normalize_polygon(&p)?;
        check_lon_lat(&p)?;
        Ok(GeoPolygon(p))
    }

    /// Construction with a single even-odd repair attempt for invalid rings.
    pub fn from_polygon_repair(p: Polygon<f64>) -> Result<(Self, Validity)> {
        match normalize_polygon(&p) {
            Ok(p) => {
                check_lon_lat(&p)?;
                Ok((GeoPolygon(p), Validity::Valid))
            }
            Err(Error::InvalidGeometry(msg)) => {
                let too_short = p.exterior().0.len() < 4
                    || normalize_ring(&p.exterior().0).len() < 4;
                if too_short {
                    return Err(Error::InvalidGeometry(msg));
                }
                let fixed = repair_even_odd(&p).ok_or(Error::InvalidGeometry(msg))?;
                check_lon_lat(&fixed)?;
                Ok((GeoPolygon(fixed), Validity::Repaired))
            }
            Err(e) => Err(e),
        }
    }

    pub fn polygon(&self) -> &Polygon<f64> {
        &self.0
    }

    pub fn into_polygon(self) -> Polygon<f64> {
        self.0
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_polygon(&self.0)
    }

    /// Centroid in (lon, lat).
    pub fn centroid(&self) -> Coord<f64> {
        planar_centroid(&self.0)
    }

    pub fn area_m2(&self) -> f64 {
        let c = self.bbox().center();
        let frame = LocalFrame::new(c.0, c.1);
        planar_area(&frame.project_polygon(&self.0))
    }

    pub fn contains_point(&self, lon: f64, lat: f64) -> bool {
        point_in_polygon(lon, lat, &self.0)
    }
}

fn check_lon_lat(p: &Polygon<f64>) -> Result<()> {
    let b = BBox::of_polygon(p);
    if b.min_x < -180.0 || b.max_x > 180.0 || b.min_y < -90.0 || b.max_y > 90.0 {
        return Err(Error::InvalidGeometry(
            "coordinates outside lon/lat range".into(),
        ));
    }
    Ok(())
}

/// Possibly multi-part WGS84 region, e.g. an administrative boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoMultiPolygon(pub Vec<GeoPolygon>);

impl GeoMultiPolygon {
    pub fn bbox(&self) -> BBox {
        self.0
            .iter()
            .fold(BBox::EMPTY, |acc, p| acc.union(&p.bbox()))
    }

    pub fn contains_point(&self, lon: f64, lat: f64) -> bool {
        self.0.iter().any(|p| p.contains_point(lon, lat))
    }
}

/// Area of a lon/lat polygon in square meters. Raw polygons are validated
/// first; a degenerate ring is an error.
pub fn polygon_area_m2(p: &Polygon<f64>) -> Result<f64> {
    Ok(GeoPolygon::from_polygon(p.clone())?.area_m2())
}

/// Area of the geometric intersection of two lon/lat polygons, in square
/// meters. Zero for disjoint inputs.
pub fn intersection_area_m2(a: &GeoPolygon, b: &GeoPolygon) -> f64 {
    let (ba, bb) = (a.bbox(), b.bbox());
    if !ba.intersects(&bb) {
        return 0.0;
    }
    let c = ba.union(&bb).center();
    let frame = LocalFrame::new(c.0, c.1);
    let pa = frame.project_polygon(a.polygon());
    let pb = frame.project_polygon(b.polygon());
    multi_planar_area(&pa.intersection(&pb))
}

// ---------------------------------------------------------------------------
// local equal-area frame

/// Spherical Lambert azimuthal equal-area projection about a center point.
/// Planar coordinates are meters east/north of the center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    lon0: f64,
    lat0: f64,
    sin_lat0: f64,
    cos_lat0: f64,
}

impl LocalFrame {
    pub fn new(lon0_deg: f64, lat0_deg: f64) -> Self {
        let lat0 = lat0_deg.to_radians();
        LocalFrame {
            lon0: lon0_deg.to_radians(),
            lat0,
            sin_lat0: lat0.sin(),
            cos_lat0: lat0.cos(),
        }
    }

    pub fn centered_on(b: &BBox) -> Self {
        let (x, y) = b.center();
        LocalFrame::new(x, y)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.lon0.to_degrees(), self.lat0.to_degrees())
    }

    pub fn forward(&self, lon_deg: f64, lat_deg: f64) -> (f64, f64) {
        let lat = lat_deg.to_radians();
        let dlon = lon_deg.to_radians() - self.lon0;
        let (sin_lat, cos_lat) = lat.sin_cos();
        let (sin_dl, cos_dl) = dlon.sin_cos();
        let denom = 1.0 + self.sin_lat0 * sin_lat + self.cos_lat0 * cos_lat * cos_dl;
        let k = (2.0 / denom).sqrt();
        let x = EARTH_RADIUS_M * k * cos_lat * sin_dl;
        let y = EARTH_RADIUS_M * k * (self.cos_lat0 * sin_lat - self.sin_lat0 * cos_lat * cos_dl);
        (x, y)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let rho = x.hypot(y);
        if rho == 0.0 {
            return self.center();
        }
        let c = 2.0 * (rho / (2.0 * EARTH_RADIUS_M)).clamp(-1.0, 1.0).asin();
        let (sin_c, cos_c) = c.sin_cos();
        let lat = (cos_c * self.sin_lat0 + y * sin_c * self.cos_lat0 / rho)
            .clamp(-1.0, 1.0)
            .asin();
        let lon = self.lon0
            + (x * sin_c).atan2(rho * self.cos_lat0 * cos_c - y * self.sin_lat0 * sin_c);
        (lon.to_degrees(), lat.to_degrees())
    }

    fn map_polygon(p: &Polygon<f64>, f: impl Fn(f64, f64) -> (f64, f64)) -> Polygon<f64> {
        let map_ring = |r: &LineString<f64>| {
            LineString(
                r.0.iter()
                    .map(|c| {
                        let (x, y) = f(c.x, c.y);
                        Coord { x, y }
                    })
                    .collect(),
            )
        };
        Polygon::new(
            map_ring(p.exterior()),
            p.interiors().iter().map(map_ring).collect(),
        )
    }

    pub fn project_polygon(&self, p: &Polygon<f64>) -> Polygon<f64> {
        Self::map_polygon(p, |x, y| self.forward(x, y))
    }

    pub fn unproject_polygon(&self, p: &Polygon<f64>) -> Polygon<f64> {
        Self::map_polygon(p, |x, y| self.inverse(x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(x0: f64, y0: f64, s: f64) -> Polygon<f64> {
        Polygon::new(
            LineString::from(vec![(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]),
            vec![],
        )
    }

    #[test]
    fn hundred_meter_square_at_equator() {
        let d = 100.0 / meters_per_degree();
        let p = GeoPolygon::from_polygon(square(0.0, 0.0, d)).unwrap();
        let a = p.area_m2();
        assert!((a - 10_000.0).abs() / 10_000.0 < 1e-3, "{a}");
    }

    #[test]
    fn hole_covering_a_quarter() {
        let d = 100.0 / meters_per_degree();
        let outer = GeoPolygon::from_polygon(square(10.0, 45.0, d)).unwrap();
        let with_hole = GeoPolygon::new(
            vec![(10.0, 45.0), (10.0 + d, 45.0), (10.0 + d, 45.0 + d), (10.0, 45.0 + d)],
            vec![vec![
                (10.0 + 0.25 * d, 45.0 + 0.25 * d),
                (10.0 + 0.75 * d, 45.0 + 0.25 * d),
                (10.0 + 0.75 * d, 45.0 + 0.75 * d),
                (10.0 + 0.25 * d, 45.0 + 0.75 * d),
            ]],
        )
        .unwrap();
        let ratio = with_hole.area_m2() / outer.area_m2();
        assert!((ratio - 0.75).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn degenerate_ring_rejected() {
        let p = Polygon::new(LineString::from(vec![(0.0, 0.0), (1e-4, 0.0), (0.0, 0.0)]), vec![]);
        assert!(matches!(polygon_area_m2(&p), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn orientation_is_normalized() {
        let cw = Polygon::new(
            LineString::from(vec![(0.0, 0.0), (0.0, 1e-4), (1e-4, 1e-4), (1e-4, 0.0)]),
            vec![],
        );
        let g = GeoPolygon::from_polygon(cw).unwrap();
        assert!(ring_signed_area(&g.polygon().exterior().0) > 0.0);
    }

    #[test]
    fn bowtie_is_rejected_then_repaired() {
        let bowtie = Polygon::new(
            LineString::from(vec![(0.0, 0.0), (2e-4, 2e-4), (2e-4, 0.0), (0.0, 2e-4)]),
            vec![],
        );
        assert!(GeoPolygon::from_polygon(bowtie.clone()).is_err());
        let (fixed, how) = GeoPolygon::from_polygon_repair(bowtie).unwrap();
        assert_eq!(how, Validity::Repaired);
        assert!(fixed.area_m2() > 0.0);
    }

    #[test]
    fn frame_round_trip() {
        let f = LocalFrame::new(11.57, 48.14);
        for &(lon, lat) in &[(11.57, 48.14), (11.6, 48.2), (11.0, 47.9)] {
            let (x, y) = f.forward(lon, lat);
            let (lon2, lat2) = f.inverse(x, y);
            assert!((lon - lon2).abs() < 1e-10 && (lat - lat2).abs() < 1e-10);
        }
    }

    #[test]
    fn half_offset_unit_squares() {
        let d = 10.0 / meters_per_degree();
        let a = GeoPolygon::from_polygon(square(5.0, 0.0, d)).unwrap();
        let b = GeoPolygon::from_polygon(square(5.0 + 0.5 * d, 0.0, d)).unwrap();
        let inter = intersection_area_m2(&a, &b);
        let ratio = inter / a.area_m2();
        assert!((ratio - 0.5).abs() < 1e-3, "{ratio}");
        assert!((intersection_area_m2(&b, &a) - inter).abs() < 1e-9 * inter);
        assert!((intersection_area_m2(&a, &a) - a.area_m2()).abs() < 1e-6 * inter);
        let far = GeoPolygon::from_polygon(square(6.0, 1.0, d)).unwrap();
        assert_eq!(intersection_area_m2(&a, &far), 0.0);
    }

    /// Random star-shaped 12-gon around (lon0, lat0) spanning ~60 m.
    fn random_12gon(rng: &mut ChaCha8Rng, lon0: f64, lat0: f64) -> Polygon<f64> {
        let deg = 1.0 / meters_per_degree();
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|k| {
                let theta = (k as f64 + rng.random_range(0.1..0.9)) * std::f64::consts::TAU / 12.0;
                let r = rng.random_range(10.0..30.0) * deg;
                (lon0 + r * theta.cos() / lat0.to_radians().cos(), lat0 + r * theta.sin())
            })
            .collect();
        Polygon::new(LineString::from(pts), vec![])
    }

    #[test]
    fn random_12gon_matches_monte_carlo_sphere_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_12gon(&mut rng, 11.57, 48.14);
        let g = GeoPolygon::from_polygon(p.clone()).unwrap();
        let b = g.bbox();
        // Monte-Carlo over the lon/lat box, weighting by the spherical area
        // element R^2 cos(lat) dlon dlat.
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = rng.random_range(b.min_x..b.max_x);
            let y = rng.random_range(b.min_y..b.max_y);
            if point_in_polygon(x, y, &p) {
                acc += y.to_radians().cos();
            }
        }
        let box_area = EARTH_RADIUS_M.powi(2) * b.width().to_radians() * b.height().to_radians();
        let mc = box_area * acc / n as f64;
        let a = g.area_m2();
        assert!((a - mc).abs() / mc < 5e-3, "analytic {a} vs mc {mc}");
    }

    #[test]
    fn touching_rings_are_valid() {
        // Hole touching the exterior at one vertex.
        let p = Polygon::new(
            LineString::from(vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]),
            vec![LineString::from(vec![(0.0, 2.0), (2.0, 1.0), (2.0, 3.0)])],
        );
        assert!(normalize_polygon(&p).is_ok());
    }
}
