//! Probability raster to building polygons: threshold, regularize, trace,
//! simplify and drop detections away from built-up land.

use std::collections::HashMap;

use geo::{Coord, LineString, Polygon};

use crate::error::Result;
use crate::geom::{
    normalize_polygon, orient, planar_area, point_in_polygon, ring_signed_area, BBox, GeoPolygon,
    LocalFrame,
};
use crate::raster::{dilate_mask, dilate_pixels, erode_pixels, GridSpec, RasterGrid, Semantic};
use crate::record::FootprintRecord;

/// Binary mask of pixels with probability `>= t`. Nodata counts as 0.
pub fn threshold_mask(prob: &RasterGrid, t: f64) -> Result<RasterGrid> {
    prob.expect_semantic(Semantic::Probability)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(crate::Error::InvalidParameter(format!(
            "threshold {t} outside (0, 1)"
        )));
    }
    let values = prob
        .values
        .iter()
        .map(|&v| if !prob.is_nodata(v) && v >= t { 1.0 } else { 0.0 })
        .collect();
    Ok(RasterGrid {
        spec: prob.spec,
        values,
        nodata: None,
        semantic: Semantic::BinaryMask,
    })
}

/// Morphological stand-in for a learned regularizer: 3×3 opening followed
/// by 3×3 closing. Pixels beyond the grid count as background.
pub fn regularize_mask(mask: &RasterGrid) -> RasterGrid {
    const PAD: usize = 2;
    let spec = mask.spec;
    let (w, h) = (spec.width + 2 * PAD, spec.height + 2 * PAD);
    let padded_spec = GridSpec {
        origin: (
            spec.origin.0 - PAD as f64 * spec.pixel_size.0,
            spec.origin.1 + PAD as f64 * spec.pixel_size.1,
        ),
        width: w,
        height: h,
        ..spec
    };
    let mut padded = RasterGrid::filled(padded_spec, 0.0, None, Semantic::BinaryMask);
    for r in 0..spec.height {
        for c in 0..spec.width {
            padded.set(c + PAD, r + PAD, (mask.get(c, r) == 1.0) as u8 as f64);
        }
    }
    let opened = dilate_pixels(&erode_pixels(&padded, 1, 1), 1, 1);
    let closed = erode_pixels(&dilate_pixels(&opened, 1, 1), 1, 1);
    let mut out = RasterGrid::filled(spec, 0.0, None, Semantic::BinaryMask);
    for r in 0..spec.height {
        for c in 0..spec.width {
            out.set(c, r, closed.get(c + PAD, r + PAD));
        }
    }
    out
}

/// 4-connected component labels (0 = background) and the component count.
pub fn label_components(mask: &RasterGrid) -> (Vec<u32>, usize) {
    let (w, h) = (mask.spec.width, mask.spec.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if labels[start] != 0 || mask.values[start] != 1.0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            let mut push = |j: usize| {
                if labels[j] == 0 && mask.values[j] == 1.0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if c > 0 {
                push(i - 1);
            }
            if c + 1 < w {
                push(i + 1);
            }
            if r > 0 {
                push(i - w);
            }
            if r + 1 < h {
                push(i + w);
            }
        }
    }
    (labels, next as usize)
}

// Lattice directions, j grows downwards: east, south, west, north.
const DIRS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[inline]
fn left_of(d: u8) -> u8 {
    // (di, dj) -> (dj, -di)
    (d + 3) % 4
}

/// Trace one polygon per 4-connected component of set pixels, following
/// pixel edges. Coordinates are in the grid's CRS; holes are 8-connected
/// background regions enclosed by the component.
pub fn trace_polygons(mask: &RasterGrid) -> Vec<Polygon<f64>> {
    let spec = mask.spec;
    let (w, h) = (spec.width as i32, spec.height as i32);
    let (labels, n) = label_components(mask);
    let label_at = |c: i32, r: i32| -> u32 {
        if c < 0 || r < 0 || c >= w || r >= h {
            0
        } else {
            labels[(r * w + c) as usize]
        }
    };

    // Boundary edges per component: (start vertex, direction), fg on the left.
    let mut edges: Vec<Vec<((i32, i32), u8)>> = vec![Vec::new(); n + 1];
    for r in 0..h {
        for c in 0..w {
            let l = label_at(c, r);
            if l == 0 {
                continue;
            }
            let list = &mut edges[l as usize];
            if label_at(c, r + 1) != l {
                list.push(((c, r + 1), 0));
            }
            if label_at(c + 1, r) != l {
                list.push(((c + 1, r + 1), 3));
            }
            if label_at(c, r - 1) != l {
                list.push(((c + 1, r), 2));
            }
            if label_at(c - 1, r) != l {
                list.push(((c, r), 1));
            }
        }
    }

    let to_world = |(i, j): (i32, i32)| Coord {
        x: spec.origin.0 + i as f64 * spec.pixel_size.0,
        y: spec.origin.1 - j as f64 * spec.pixel_size.1,
    };

    let mut out = Vec::with_capacity(n);
    for comp in edges.iter().skip(1) {
        let mut outgoing: HashMap<(i32, i32), Vec<(u8, bool)>> = HashMap::with_capacity(comp.len());
        for &(v, d) in comp {
            outgoing.entry(v).or_default().push((d, false));
        }
        let mut rings: Vec<Vec<(i32, i32)>> = Vec::new();
        for &(start_v, start_d) in comp {
            let used = outgoing[&start_v].iter().any(|&(d, u)| d == start_d && u);
            if used {
                continue;
            }
            let mut corners: Vec<(i32, i32)> = Vec::new();
            let (mut v, mut d) = (start_v, start_d);
            loop {
                if let Some(e) = outgoing.get_mut(&v).unwrap().iter_mut().find(|e| e.0 == d) {
                    e.1 = true;
                }
                let nv = (v.0 + DIRS[d as usize].0, v.1 + DIRS[d as usize].1);
                let outs = &outgoing[&nv];
                let nd = if outs.len() == 1 {
                    outs[0].0
                } else if outs.iter().any(|e| e.0 == left_of(d)) {
                    left_of(d)
                } else {
                    outs.iter().find(|e| e.0 != d).map_or(outs[0].0, |e| e.0)
                };
                if nd != d {
                    corners.push(nv);
                }
                v = nv;
                d = nd;
                if v == start_v && d == start_d {
                    break;
                }
            }
            rings.push(corners);
        }

        let mut shells: Vec<LineString<f64>> = Vec::new();
        let mut holes: Vec<LineString<f64>> = Vec::new();
        for corners in rings {
            let mut ring: Vec<Coord<f64>> = corners.iter().map(|&v| to_world(v)).collect();
            ring.push(ring[0]);
            if ring_signed_area(&ring) > 0.0 {
                shells.push(LineString(ring));
            } else {
                holes.push(LineString(ring));
            }
        }
        shells.sort_by(|a, b| ring_signed_area(&b.0).total_cmp(&ring_signed_area(&a.0)));
        let mut shells = shells.into_iter();
        if let Some(ext) = shells.next() {
            out.push(Polygon::new(ext, holes));
        }
        out.extend(shells.map(|s| Polygon::new(s, vec![])));
    }
    out
}

// ---------------------------------------------------------------------------
// simplification

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifyParams {
    pub tolerance_m: f64,
    pub min_area_m2: f64,
    pub min_ring_vertices: usize,
}

impl Default for SimplifyParams {
    fn default() -> Self {
        SimplifyParams {
            tolerance_m: 3.0,
            min_area_m2: 20.0,
            min_ring_vertices: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Simplified<P> {
    Kept(P),
    Dropped,
}

fn point_segment_distance(p: Coord<f64>, a: Coord<f64>, b: Coord<f64>) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.x - (a.x + t * dx)).hypot(p.y - (a.y + t * dy))
}

fn douglas_peucker(pts: &[Coord<f64>], lo: usize, hi: usize, tol: f64, keep: &mut [bool]) {
    if hi <= lo + 1 {
        return;
    }
    let mut worst = (lo, -1.0);
    for (k, p) in pts.iter().enumerate().take(hi).skip(lo + 1) {
        let d = point_segment_distance(*p, pts[lo], pts[hi % pts.len()]);
        if d > worst.1 {
            worst = (k, d);
        }
    }
    if worst.1 > tol {
        keep[worst.0] = true;
        douglas_peucker(pts, lo, worst.0, tol, keep);
        douglas_peucker(pts, worst.0, hi, tol, keep);
    }
}

/// Indices (into the open ring, i.e. without the closing vertex) of the
/// vertices kept by Douglas–Peucker followed by collinear-vertex removal.
pub fn simplify_ring_indices(ring: &[Coord<f64>], tol: f64) -> Vec<usize> {
    let n = ring.len() - 1;
    let pts = &ring[..n];
    if n < 3 {
        return (0..n).collect();
    }
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (pts[a].x - pts[0].x).hypot(pts[a].y - pts[0].y);
            let db = (pts[b].x - pts[0].x).hypot(pts[b].y - pts[0].y);
            da.total_cmp(&db)
        })
        .unwrap();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    douglas_peucker(pts, 0, far, tol, &mut keep);
    douglas_peucker(pts, far, n, tol, &mut keep);
    let mut idx: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();

    // Cyclic collinear removal; a vertex goes when it lies on the segment
    // joining its neighbours.
    loop {
        let m = idx.len();
        if m <= 3 {
            break;
        }
        let drop = (0..m).find(|&k| {
            let a = pts[idx[(k + m - 1) % m]];
            let b = pts[idx[k]];
            let c = pts[idx[(k + 1) % m]];
            orient(a, b, c) == 0.0 && (a.x - b.x) * (c.x - b.x) + (a.y - b.y) * (c.y - b.y) <= 0.0
        });
        match drop {
            Some(k) => {
                idx.remove(k);
            }
            None => break,
        }
    }
    idx
}

fn take_ring(ring: &[Coord<f64>], idx: &[usize]) -> LineString<f64> {
    let mut out: Vec<Coord<f64>> = idx.iter().map(|&i| ring[i]).collect();
    out.push(out[0]);
    LineString(out)
}

/// Simplify a polygon whose distances are measured in `measure` space
/// (`measure` maps each ring to planar meters) while keeping the original
/// coordinates of surviving vertices.
fn simplify_with(
    original: &Polygon<f64>,
    measured: &Polygon<f64>,
    params: &SimplifyParams,
) -> Simplified<Polygon<f64>> {
    let tol = params.tolerance_m.max(0.0);
    let rings_o: Vec<&LineString<f64>> =
        std::iter::once(original.exterior()).chain(original.interiors()).collect();
    let rings_m: Vec<&LineString<f64>> =
        std::iter::once(measured.exterior()).chain(measured.interiors()).collect();
    let mut simplified_o = Vec::with_capacity(rings_o.len());
    let mut simplified_m = Vec::with_capacity(rings_o.len());
    let mut ok = true;
    for (ro, rm) in rings_o.iter().zip(&rings_m) {
        let idx = simplify_ring_indices(&rm.0, tol);
        if idx.len() + 1 < params.min_ring_vertices.max(4) {
            ok = false;
            break;
        }
        simplified_o.push(take_ring(&ro.0, &idx));
        simplified_m.push(take_ring(&rm.0, &idx));
    }
    let candidate = ok.then(|| {
        let ext_m = simplified_m.remove(0);
        let ext_o = simplified_o.remove(0);
        (
            Polygon::new(ext_o, simplified_o),
            Polygon::new(ext_m, simplified_m),
        )
    });
    // Invalid output falls back to the input unchanged.
    let (out_o, out_m) = match candidate {
        Some((o, m)) if normalize_polygon(&m).is_ok() => (o, m),
        _ => (original.clone(), measured.clone()),
    };
    if planar_area(&out_m) < params.min_area_m2 {
        Simplified::Dropped
    } else {
        Simplified::Kept(out_o)
    }
}

/// Simplify a polygon already in planar meters.
pub fn simplify_planar(p: &Polygon<f64>, params: &SimplifyParams) -> Simplified<Polygon<f64>> {
    simplify_with(p, p, params)
}

/// Simplify a lon/lat polygon with a tolerance in meters.
pub fn simplify(p: &GeoPolygon, params: &SimplifyParams) -> Simplified<GeoPolygon> {
    let frame = LocalFrame::centered_on(&p.bbox());
    let measured = frame.project_polygon(p.polygon());
    match simplify_with(p.polygon(), &measured, params) {
        Simplified::Dropped => Simplified::Dropped,
        Simplified::Kept(out) => Simplified::Kept(
            GeoPolygon::from_polygon(out).unwrap_or_else(|_| p.clone()),
        ),
    }
}

// ---------------------------------------------------------------------------
// false-positive filtering

/// Outcome counts of [`filter_false_positives`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: usize,
    pub removed: usize,
    /// Removed because the polygon lies outside the mask extent.
    pub outside_extent: usize,
}

fn segments_intersect(a1: Coord<f64>, a2: Coord<f64>, b1: Coord<f64>, b2: Coord<f64>) -> bool {
    let o1 = orient(a1, a2, b1);
    let o2 = orient(a1, a2, b2);
    let o3 = orient(b1, b2, a1);
    let o4 = orient(b1, b2, a2);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    let on = |p: Coord<f64>, q: Coord<f64>, r: Coord<f64>| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (o1 == 0.0 && on(a1, a2, b1))
        || (o2 == 0.0 && on(a1, a2, b2))
        || (o3 == 0.0 && on(b1, b2, a1))
        || (o4 == 0.0 && on(b1, b2, a2))
}

/// Whether a polygon and a closed axis-aligned box share any point.
pub fn polygon_intersects_box(p: &Polygon<f64>, b: &BBox) -> bool {
    let pb = BBox::of_polygon(p);
    if !pb.intersects(b) {
        return false;
    }
    let rings = || std::iter::once(p.exterior()).chain(p.interiors());
    let inside_box = |c: &Coord<f64>| c.x >= b.min_x && c.x <= b.max_x && c.y >= b.min_y && c.y <= b.max_y;
    if rings().any(|r| r.0.iter().any(inside_box)) {
        return true;
    }
    let corners = [
        Coord { x: b.min_x, y: b.min_y },
        Coord { x: b.max_x, y: b.min_y },
        Coord { x: b.max_x, y: b.max_y },
        Coord { x: b.min_x, y: b.max_y },
    ];
    if corners.iter().any(|c| point_in_polygon(c.x, c.y, p)) {
        return true;
    }
    rings().any(|r| {
        r.0.windows(2).any(|e| {
            (0..4).any(|k| segments_intersect(e[0], e[1], corners[k], corners[(k + 1) % 4]))
        })
    })
}

fn cell_box(spec: &GridSpec, col: usize, row: usize) -> BBox {
    let x0 = spec.origin.0 + col as f64 * spec.pixel_size.0;
    let y1 = spec.origin.1 - row as f64 * spec.pixel_size.1;
    BBox::new(x0, y1 - spec.pixel_size.1, x0 + spec.pixel_size.0, y1)
}

/// Keep records that overlap the built-up mask after dilation by
/// `radius_m`. The mask and the record geometries share a CRS.
pub fn filter_false_positives(
    polys: Vec<FootprintRecord>,
    landcover_builtup: &RasterGrid,
    radius_m: f64,
) -> (Vec<FootprintRecord>, FilterReport) {
    let dilated = dilate_mask(landcover_builtup, radius_m);
    filter_with_dilated(polys, &dilated)
}

/// Filter against an already dilated mask.
pub fn filter_with_dilated(
    polys: Vec<FootprintRecord>,
    dilated: &RasterGrid,
) -> (Vec<FootprintRecord>, FilterReport) {
    let spec = dilated.spec;
    let extent = spec.bbox();
    let mut report = FilterReport::default();
    let mut kept = Vec::with_capacity(polys.len());
    for rec in polys {
        let p = rec.geometry.polygon();
        let b = BBox::of_polygon(p);
        if !b.intersects(&extent) {
            report.outside_extent += 1;
            report.removed += 1;
            continue;
        }
        let c0 = (((b.min_x - spec.origin.0) / spec.pixel_size.0).floor().max(0.0)) as usize;
        let c1 = ((((b.max_x - spec.origin.0) / spec.pixel_size.0).floor()) as usize).min(spec.width - 1);
        let r0 = (((spec.origin.1 - b.max_y) / spec.pixel_size.1).floor().max(0.0)) as usize;
        let r1 = ((((spec.origin.1 - b.min_y) / spec.pixel_size.1).floor()) as usize).min(spec.height - 1);
        let hit = (r0..=r1).any(|r| {
            (c0..=c1).any(|c| dilated.get(c, r) == 1.0 && polygon_intersects_box(p, &cell_box(&spec, c, r)))
        });
        if hit {
            report.kept += 1;
            kept.push(rec);
        } else {
            report.removed += 1;
        }
    }
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{rasterize, Units};
    use crate::record::Source;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, px: f64) -> GridSpec {
        GridSpec::new((0.0, h as f64 * px), (px, px), w, h, Units::Meters).unwrap()
    }

    fn mask(bits: &[&str], px: f64) -> RasterGrid {
        let h = bits.len();
        let w = bits[0].len();
        let values = bits
            .iter()
            .flat_map(|row| row.chars().map(|c| if c == '#' { 1.0 } else { 0.0 }))
            .collect();
        RasterGrid::new(grid(w, h, px), values, None, Semantic::BinaryMask).unwrap()
    }

    #[test]
    fn threshold_boundaries() {
        let spec = grid(3, 1, 1.0);
        let p = RasterGrid::new(spec, vec![0.49, 0.50, 0.51], None, Semantic::Probability).unwrap();
        assert_eq!(threshold_mask(&p, 0.5).unwrap().values, vec![0.0, 1.0, 1.0]);
        let hi = RasterGrid::filled(spec, 0.9, None, Semantic::Probability);
        assert_eq!(threshold_mask(&hi, 0.5).unwrap().count_set(), 3);
        let lo = RasterGrid::filled(spec, 0.4, None, Semantic::Probability);
        assert_eq!(threshold_mask(&lo, 0.5).unwrap().count_set(), 0);
        let nd = RasterGrid::new(spec, vec![-1.0, 0.7, -1.0], Some(-1.0), Semantic::Probability).unwrap();
        assert_eq!(threshold_mask(&nd, 0.5).unwrap().values, vec![0.0, 1.0, 0.0]);
        let h = RasterGrid::filled(spec, 0.9, None, Semantic::HeightMeters);
        assert!(matches!(threshold_mask(&h, 0.5), Err(crate::Error::SemanticMismatch { .. })));
    }

    #[test]
    fn threshold_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = grid(30, 30, 1.0);
        let p = RasterGrid::new(
            spec,
            (0..900).map(|_| rng.random_range(0.0..=1.0)).collect(),
            None,
            Semantic::Probability,
        )
        .unwrap();
        let mut prev = threshold_mask(&p, 0.01).unwrap();
        for k in 2..100 {
            let cur = threshold_mask(&p, k as f64 / 100.0).unwrap();
            assert!(cur.values.iter().zip(&prev.values).all(|(c, p)| c <= p));
            prev = cur;
        }
    }

    #[test]
    fn regularize_cases() {
        let clean = mask(
            &[
                "..........",
                ".######...",
                ".######...",
                ".######...",
                ".######...",
                "..........",
            ],
            3.0,
        );
        assert_eq!(regularize_mask(&clean), clean);
        let speck = mask(
            &[
                "..........",
                ".######...",
                ".######...",
                ".######..#",
                ".######...",
                "..........",
            ],
            3.0,
        );
        assert_eq!(regularize_mask(&speck), clean);
        let solid = mask(
            &[
                "............",
                ".########...",
                ".########...",
                ".########...",
                ".########...",
                ".########...",
                ".########...",
                ".########...",
                ".########...",
                "............",
            ],
            3.0,
        );
        let mut holed = solid.clone();
        holed.set(4, 4, 0.0);
        assert_eq!(regularize_mask(&holed), solid);
        let twice = regularize_mask(&regularize_mask(&speck));
        assert_eq!(twice, regularize_mask(&speck));
    }

    #[test]
    fn single_pixel_traces_to_square() {
        let m = mask(&["...", ".#.", "..."], 3.0);
        let polys = trace_polygons(&m);
        assert_eq!(polys.len(), 1);
        let p = &polys[0];
        assert_eq!(p.exterior().0.len(), 5);
        assert_eq!(planar_area(p), 9.0);
        let b = BBox::of_polygon(p);
        assert_eq!((b.min_x, b.min_y, b.max_x, b.max_y), (3.0, 3.0, 6.0, 6.0));
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let m = mask(&["#.", ".#"], 1.0);
        let polys = trace_polygons(&m);
        assert_eq!(polys.len(), 2);
        assert!(polys.iter().all(|p| planar_area(p) == 1.0 && p.exterior().0.len() == 5));
    }

    #[test]
    fn ring_with_hole() {
        let m = mask(&["#####", "#...#", "#.#.#", "#...#", "#####"], 1.0);
        let polys = trace_polygons(&m);
        // Outer frame with one hole, plus the center pixel.
        assert_eq!(polys.len(), 2);
        let frame = polys.iter().find(|p| !p.interiors().is_empty()).unwrap();
        assert_eq!(frame.interiors().len(), 1);
        assert_eq!(planar_area(frame), 16.0);
    }

    #[test]
    fn diagonal_pocket_is_not_a_hole() {
        // Background pocket connected to the outside through a diagonal.
        let m = mask(&["###.", "#.#.", "##.#", "...."], 1.0);
        let polys = trace_polygons(&m);
        let total: f64 = polys.iter().map(planar_area).sum();
        assert_eq!(total, 8.0);
        for p in &polys {
            assert!(normalize_polygon(p).is_ok());
        }
    }

    /// Independent union-find labelling used as the oracle.
    fn uf_components(bits: &[bool], w: usize, h: usize) -> usize {
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let n = p[y];
                p[y] = r;
                y = n;
            }
            r
        }
        let mut parent: Vec<usize> = (0..w * h).collect();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if !bits[i] {
                    continue;
                }
                for j in [(c + 1 < w).then(|| i + 1), (r + 1 < h).then(|| i + w)].into_iter().flatten() {
                    if bits[j] {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a] = b;
                    }
                }
            }
        }
        (0..w * h).filter(|&i| bits[i] && find(&mut parent, i) == i).count()
    }

    #[test]
    fn random_masks_area_and_count_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for density in [0.2, 0.45, 0.6, 0.8] {
            let bits: Vec<bool> = (0..64 * 64).map(|_| rng.random_bool(density)).collect();
            let m = RasterGrid::new(
                grid(64, 64, 3.0),
                bits.iter().map(|&b| b as u8 as f64).collect(),
                None,
                Semantic::BinaryMask,
            )
            .unwrap();
            let polys = trace_polygons(&m);
            assert_eq!(polys.len(), uf_components(&bits, 64, 64));
            let total: f64 = polys.iter().map(planar_area).sum();
            let set = bits.iter().filter(|&&b| b).count() as f64;
            assert_eq!(total, set * 9.0);
            // Re-rasterizing the traced polygons reproduces the mask.
            let back = rasterize(polys.iter().map(|p| (p, 1.0)), &m.spec, Semantic::BinaryMask).unwrap();
            assert_eq!(back.values, m.values);
        }
    }

    #[test]
    fn trace_rasterize_round_trip_rectangle() {
        let p = Polygon::new(
            LineString::from(vec![(6.0, 3.0), (21.0, 3.0), (21.0, 12.0), (6.0, 12.0), (6.0, 3.0)]),
            vec![],
        );
        let spec = grid(10, 6, 3.0);
        let m = rasterize([(&p, 1.0)], &spec, Semantic::BinaryMask).unwrap();
        let traced = trace_polygons(&m);
        assert_eq!(traced.len(), 1);
        let mut got: Vec<(f64, f64)> = traced[0].exterior().0[..4].iter().map(|c| (c.x, c.y)).collect();
        let mut want: Vec<(f64, f64)> = p.exterior().0[..4].iter().map(|c| (c.x, c.y)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    fn staircase() -> Polygon<f64> {
        // 30 x 9 rectangle whose top edge wiggles by half a meter.
        let mut pts = vec![(0.0, 0.0), (30.0, 0.0)];
        let mut x = 30.0;
        let mut up = true;
        while x > 0.0 {
            let y = if up { 9.5 } else { 9.0 };
            pts.push((x, y));
            x -= 3.0;
            pts.push((x, y));
            up = !up;
        }
        Polygon::new(LineString::from(pts), vec![])
    }

    #[test]
    fn staircase_collapses_to_rectangle() {
        let p = normalize_polygon(&staircase()).unwrap();
        let params = SimplifyParams { tolerance_m: 1.0, min_area_m2: 0.0, min_ring_vertices: 4 };
        match simplify_planar(&p, &params) {
            Simplified::Kept(q) => assert_eq!(q.exterior().0.len(), 5, "{:?}", q.exterior()),
            Simplified::Dropped => panic!("dropped"),
        }
    }

    #[test]
    fn zero_tolerance_only_removes_collinear() {
        let p = Polygon::new(
            LineString::from(vec![(0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]),
            vec![],
        );
        let params = SimplifyParams { tolerance_m: 0.0, min_area_m2: 0.0, min_ring_vertices: 4 };
        let Simplified::Kept(q) = simplify_planar(&p, &params) else { panic!() };
        assert_eq!(q.exterior().0.len(), 5);
        let wiggle = normalize_polygon(&staircase()).unwrap();
        let Simplified::Kept(q) = simplify_planar(&wiggle, &params) else { panic!() };
        assert_eq!(q.exterior().0.len(), wiggle.exterior().0.len());
    }

    #[test]
    fn small_polygons_dropped() {
        let m = mask(&["...", ".#.", "..."], 3.0);
        let p = trace_polygons(&m).remove(0);
        assert_eq!(simplify_planar(&p, &SimplifyParams::default()), Simplified::Dropped);
    }

    fn record(poly: Polygon<f64>, id: usize) -> FootprintRecord {
        FootprintRecord::new(
            format!("p{id}"),
            GeoPolygon::from_polygon(poly).unwrap(),
            Source::PsrDerived,
        )
    }

    fn square_at(x: f64, y: f64, s: f64) -> Polygon<f64> {
        Polygon::new(
            LineString::from(vec![(x, y), (x + s, y), (x + s, y + s), (x, y + s)]),
            vec![],
        )
    }

    #[test]
    fn false_positive_cases() {
        // Half-meter metric grid spanning 100 m; coordinates stay within
        // lon/lat range so records validate.
        let spec = grid(200, 200, 0.5);
        let mut lc = RasterGrid::filled(spec, 0.0, None, Semantic::BinaryMask);
        lc.set(20, 180, 1.0);
        let (cx, cy) = spec.pixel_center(20, 180);
        let on = record(square_at(cx - 0.2, cy - 0.2, 0.4), 0);
        let far = record(square_at(cx + 20.0, cy + 20.0, 0.4), 1);
        let outside = record(square_at(-50.0, -50.0, 0.4), 2);
        let (kept, report) = filter_false_positives(vec![on.clone(), far, outside], &lc, 5.0);
        assert_eq!(kept, vec![on.clone()]);
        assert_eq!(report, FilterReport { kept: 1, removed: 2, outside_extent: 1 });

        // A radius covering the whole grid keeps everything inside the extent.
        let anywhere = record(square_at(90.0, 50.0, 0.4), 3);
        let (kept, _) = filter_false_positives(vec![on.clone(), anywhere], &lc, 1e4);
        assert_eq!(kept.len(), 2);
        // Radius zero on an empty mask removes everything.
        let empty = RasterGrid::filled(spec, 0.0, None, Semantic::BinaryMask);
        let (kept, _) = filter_false_positives(vec![on], &empty, 0.0);
        assert!(kept.is_empty());
    }

    #[test]
    fn box_intersection_cases() {
        let tri = Polygon::new(LineString::from(vec![(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]), vec![]);
        assert!(polygon_intersects_box(&tri, &BBox::new(1.0, 1.0, 2.0, 2.0)));
        assert!(!polygon_intersects_box(&tri, &BBox::new(6.0, 6.0, 8.0, 8.0)));
        // Edge passes through the box without a vertex inside.
        assert!(polygon_intersects_box(&tri, &BBox::new(4.0, 4.0, 5.5, 5.5)));
        // Box strictly containing the polygon.
        assert!(polygon_intersects_box(&tri, &BBox::new(-1.0, -1.0, 20.0, 20.0)));
    }
}
