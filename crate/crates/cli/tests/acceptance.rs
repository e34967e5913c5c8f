//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gba_core::analytics::{agreement_decomposition, loglog_regression, ranking_agreement, spearman};
use gba_core::fusion::{merge, DEFAULT_OVERLAP_THRESH};
use gba_core::geom::GeoPolygon;
use gba_core::io::features::read_footprints;
use gba_core::io::geotiff::read_raster;
use gba_core::lod1::{assign_height, build_lod1, tta_aggregate, PredictionStack, NODATA};
use gba_core::metrics::{evaluate, raster_iou, EvalBuilding, EvalParams};
use gba_core::polygonize::{filter_false_positives, trace_polygons};
use gba_core::raster::{rasterize, GridSpec, RasterGrid, Semantic, Units};
use gba_core::record::{FootprintRecord, Source};
use geo::{Intersects, LineString, Polygon, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, Option<Duration>, fn() -> Check);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn gba(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gba"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run gba: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "gba {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// |a - b| within `tol` relative to the larger magnitude.
fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

// ---------------------------------------------------------------------------
// 1. global count

fn global_count() -> Check {
    let dir = fixtures().join("analytics");
    let counts = dir.join("continent_counts.csv");
    let ratios = dir.join("continent_ratios.csv");
    let out = gba(&["analyze", "global-count", "--counts", counts.to_str().unwrap(), "--ratios", ratios.to_str().unwrap()])?;
    let mut got = BTreeMap::new();
    for line in out.lines() {
        if let Some((k, v)) = line.split_once(' ') {
            got.insert(k.to_string(), v.trim().parse::<f64>().map_err(|e| format!("{line}: {e}"))?);
        }
    }
    let want = [("point", 2.71), ("low", 2.64), ("high", 2.97)];
    let mut parts = Vec::new();
    for (k, w) in want {
        let g = *got.get(k).ok_or_else(|| format!("no {k} line in {out:?}"))?;
        ensure((g - w).abs() <= 0.02, || format!("{k} {g} vs {w} +- 0.02"))?;
        parts.push(format!("{k} {g:.4}"));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 2. ranking pairs

/// Reference 0..n with the listed blocks of positions reversed.
fn with_reversed_blocks(n: usize, blocks: &[(usize, usize)]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64).collect();
    for &(start, len) in blocks {
        v[start..start + len].reverse();
    }
    v
}

fn discordant(ind: &[f64], reference: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..ind.len() {
        for j in i + 1..ind.len() {
            if (ind[i] - ind[j]) * (reference[i] - reference[j]) <= 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

fn ranking_pairs() -> Check {
    let n = 202;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1e6)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1e6)).collect();
    let r = ranking_agreement(&a, &b).map_err(|e| e.to_string())?;
    ensure(r.pairs == 20_301, || format!("{} pairs", r.pairs))?;

    // Both indicators share reversed blocks (neither agrees there); each
    // also has blocks of its own.
    let reference: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let common = [(0, 76), (76, 11), (87, 2), (89, 2)];
    let vol_only = [(91, 30), (121, 4)];
    let area_only = [(125, 50), (175, 3), (178, 2)];
    let volume = with_reversed_blocks(n, &[&common[..], &vol_only[..]].concat());
    let area = with_reversed_blocks(n, &[&common[..], &area_only[..]].concat());

    let dv = discordant(&volume, &reference);
    let da = discordant(&area, &reference);
    let total = n * (n - 1) / 2;
    let both = total - dv.iter().chain(&da).collect::<std::collections::BTreeSet<_>>().len();
    let only_v = da.iter().filter(|p| !dv.contains(p)).count();
    let only_a = dv.iter().filter(|p| !da.contains(p)).count();
    ensure((both, only_v, only_a) == (15_724, 1_229, 441), || {
        format!("fixture has both={both} only_volume={only_v} only_area={only_a}")
    })?;

    let d = agreement_decomposition(&volume, &area, &reference).map_err(|e| e.to_string())?;
    ensure(
        (d.pairs, d.both, d.only_a, d.only_b) == (20_301, 15_724, 1_229, 441),
        || format!("{d:?}"),
    )?;
    let pct = |x: f64| (x * 1000.0).round() / 10.0;
    ensure(pct(d.rate_a) == 83.5 && pct(d.rate_b) == 79.6, || {
        format!("rates {:.4} {:.4}", d.rate_a, d.rate_b)
    })?;

    // Same numbers through the command line.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let table = dir.path().join("regions.csv");
    let mut csv = String::from("region_id,volume,area,reference\n");
    for i in 0..n {
        csv.push_str(&format!("R{i:03},{},{},{}\n", volume[i], area[i], reference[i]));
    }
    std::fs::write(&table, csv).map_err(|e| e.to_string())?;
    let out = gba(&[
        "analyze", "ranking", "--table", table.to_str().unwrap(), "--indicator", "volume", "--indicator2", "area",
        "--reference", "reference",
    ])?;
    for want in ["pairs 20301", "both 15724", "only_volume 1229", "only_area 441"] {
        ensure(out.lines().any(|l| l == want), || format!("missing {want:?} in {out:?}"))?;
    }
    Ok(format!("20301 pairs, rates {:.1}% / {:.1}%", d.rate_a * 100.0, d.rate_b * 100.0))
}

// ---------------------------------------------------------------------------
// 3. metric oracles

#[derive(Clone, Copy)]
struct Rct {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rct {
    fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn overlap(&self, o: &Rct) -> f64 {
        let w = self.x1.min(o.x1) - self.x0.max(o.x0);
        let h = self.y1.min(o.y1) - self.y0.max(o.y0);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    fn polygon(&self) -> Polygon<f64> {
        Polygon::new(
            LineString::from(vec![
                (self.x0, self.y0),
                (self.x1, self.y0),
                (self.x1, self.y1),
                (self.x0, self.y1),
                (self.x0, self.y0),
            ]),
            vec![],
        )
    }
}

struct Bldg {
    id: String,
    r: Rct,
    h: Option<f64>,
}

fn random_town(rng: &mut ChaCha8Rng) -> (Vec<Bldg>, Vec<Bldg>) {
    let n = rng.random_range(1..=500usize);
    let extent = (n as f64).sqrt() * 30.0;
    let ox = rng.random_range(-5000.0..5000.0);
    let oy = rng.random_range(-5000.0..5000.0);
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for i in 0..n {
        let (x, y) = (ox + rng.random_range(0.0..extent), oy + rng.random_range(0.0..extent));
        let (w, h) = (rng.random_range(4.0..20.0), rng.random_range(4.0..20.0));
        let r = Rct { x0: x, y0: y, x1: x + w, y1: y + h };
        let height = rng.random_bool(0.95).then(|| rng.random_range(0.0..40.0));
        if rng.random_bool(0.85) {
            let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let s = rng.random_range(0.8..1.2);
            let pr = Rct { x0: x + dx, y0: y + dy, x1: x + dx + w * s, y1: y + dy + h * s };
            let ph = match rng.random_range(0..10) {
                0 => None,
                1 => Some(rng.random_range(0.0..1.5)),
                _ => height.map(|v: f64| (v + rng.random_range(-3.0..3.0)).max(0.0)),
            };
            pred.push(Bldg { id: format!("p{i:04}"), r: pr, h: ph });
        }
        gt.push(Bldg { id: format!("g{i:04}"), r, h: height });
    }
    for k in 0..n / 10 {
        let (x, y) = (ox + rng.random_range(0.0..extent), oy + rng.random_range(0.0..extent));
        let r = Rct { x0: x, y0: y, x1: x + rng.random_range(3.0..12.0), y1: y + rng.random_range(3.0..12.0) };
        pred.push(Bldg { id: format!("f{k:04}"), r, h: Some(rng.random_range(0.0..20.0)) });
    }
    (pred, gt)
}

fn eval_buildings(bs: &[Bldg]) -> Vec<EvalBuilding> {
    bs.iter().map(|b| EvalBuilding::new(b.id.clone(), b.r.polygon(), b.h)).collect()
}

/// Pixels of `spec` whose centers fall inside the rectangle.
fn painted(r: &Rct, spec: &GridSpec) -> Vec<(usize, usize)> {
    let (ox, oy) = spec.origin;
    let (sx, sy) = spec.pixel_size;
    let c0 = ((r.x0 - ox) / sx - 0.5).ceil().max(0.0) as i64;
    let c1 = ((r.x1 - ox) / sx - 0.5).floor().min(spec.width as f64 - 1.0) as i64;
    let r0 = ((oy - r.y1) / sy - 0.5).ceil().max(0.0) as i64;
    let r1 = ((oy - r.y0) / sy - 0.5).floor().min(spec.height as f64 - 1.0) as i64;
    let mut out = Vec::new();
    for row in r0..=r1 {
        for col in c0..=c1 {
            out.push((col as usize, row as usize));
        }
    }
    out
}

fn painted_iou(a: &[Bldg], b: &[Bldg], spec: &GridSpec) -> f64 {
    let mut ma = vec![false; spec.len()];
    let mut mb = vec![false; spec.len()];
    for (set, m) in [(a, &mut ma), (b, &mut mb)] {
        for x in set {
            for (c, r) in painted(&x.r, spec) {
                m[spec.index(c, r)] = true;
            }
        }
    }
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

struct OracleMatch {
    pairs: Vec<(usize, usize, f64)>,
}

fn oracle_match(pred: &[Bldg], gt: &[Bldg]) -> OracleMatch {
    let mut cands = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let ov = p.r.overlap(&g.r);
            if ov > 0.0 {
                cands.push((ov, i, j));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| pred[a.1].id.cmp(&pred[b.1].id))
            .then_with(|| gt[a.2].id.cmp(&gt[b.2].id))
    });
    let mut pu = vec![false; pred.len()];
    let mut gu = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (ov, i, j) in cands {
        if pu[i] || gu[j] {
            continue;
        }
        pu[i] = true;
        gu[j] = true;
        pairs.push((i, j, ov / (pred[i].r.area() + gt[j].r.area() - ov)));
    }
    OracleMatch { pairs }
}

fn rmse_mae(d: &[f64]) -> Option<(f64, f64)> {
    if d.is_empty() {
        return None;
    }
    let n = d.len() as f64;
    Some(((d.iter().map(|x| x * x).sum::<f64>() / n).sqrt(), d.iter().map(|x| x.abs()).sum::<f64>() / n))
}

fn oracle_volume(pred: &[Bldg], gt: &[Bldg], cell: usize) -> Option<(f64, f64)> {
    let all = pred.iter().chain(gt);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for b in all {
        x0 = x0.min(b.r.x0);
        y0 = y0.min(b.r.y0);
        x1 = x1.max(b.r.x1);
        y1 = y1.max(b.r.y1);
    }
    let cf = cell as f64;
    let nx = (((x1 - x0) / cf).ceil() as usize).max(1);
    let ny = (((y1 - y0) / cf).ceil() as usize).max(1);
    let (w, h) = (nx * cell, ny * cell);
    let cells = |set: &[Bldg]| {
        let mut order: Vec<&Bldg> = set.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        let mut px = vec![0.0f64; w * h];
        for b in order {
            let hv = b.h.unwrap_or(0.0).max(0.0);
            let i0 = ((b.r.x0 - x0) - 0.5).ceil().max(0.0) as usize;
            let i1 = ((b.r.x1 - x0) - 0.5).floor().min(w as f64 - 1.0) as i64;
            let j0 = ((b.r.y0 - y0) - 0.5).ceil().max(0.0) as usize;
            let j1 = ((b.r.y1 - y0) - 0.5).floor().min(h as f64 - 1.0) as i64;
            for j in j0 as i64..=j1 {
                for i in i0 as i64..=i1 {
                    px[j as usize * w + i as usize] = hv;
                }
            }
        }
        let mut out = vec![0.0f64; nx * ny];
        for j in 0..h {
            for i in 0..w {
                out[(j / cell) * nx + i / cell] += px[j * w + i];
            }
        }
        out
    };
    let (vp, vg) = (cells(pred), cells(gt));
    let norm = 100.0 / (cf * cf);
    let d: Vec<f64> = vp
        .iter()
        .zip(&vg)
        .filter(|(a, b)| **a != 0.0 || **b != 0.0)
        .map(|(a, b)| (a - b) * norm)
        .collect();
    rmse_mae(&d)
}

fn metric_oracles() -> Check {
    const TOWNS: usize = 120;
    const GEOM_TOL: f64 = 1e-6;
    const ARITH_TOL: f64 = 1e-9;
    let params = EvalParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut buildings = 0;
    for t in 0..TOWNS {
        let (pred, gt) = random_town(&mut rng);
        buildings += gt.len();
        let (ep, eg) = (eval_buildings(&pred), eval_buildings(&gt));
        let rep = evaluate(&ep, &eg, &params);
        let cmp = |name: &str, got: Option<f64>, want: Option<f64>, tol: f64| -> Result<(), String> {
            match (got, want) {
                (Some(g), Some(w)) if close(g, w, tol) => Ok(()),
                (None, None) => Ok(()),
                _ => Err(format!("town {t}: {name} {got:?} vs oracle {want:?}")),
            }
        };

        // raster IoU on the covering grid of both sets
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for b in pred.iter().chain(&gt) {
            x0 = x0.min(b.r.x0);
            y0 = y0.min(b.r.y0);
            x1 = x1.max(b.r.x1);
            y1 = y1.max(b.r.y1);
        }
        let res = params.iou_resolution_m;
        let spec = GridSpec::new(
            (x0, y1),
            (res, res),
            ((x1 - x0) / res).ceil() as usize,
            ((y1 - y0) / res).ceil() as usize,
            Units::Meters,
        )
        .map_err(|e| e.to_string())?;
        let iou_oracle = painted_iou(&pred, &gt, &spec);
        cmp("iou", rep.iou, Some(iou_oracle), GEOM_TOL)?;
        let pred_mask = rasterize(ep.iter().map(|b| (&b.polygon, 1.0)), &spec, Semantic::BinaryMask)
            .map_err(|e| e.to_string())?;
        let gt_polys: Vec<Polygon<f64>> = eg.iter().map(|b| b.polygon.clone()).collect();
        cmp("raster_iou", raster_iou(&pred_mask, &gt_polys).ok(), Some(iou_oracle), GEOM_TOL)?;

        let m = oracle_match(&pred, &gt);
        let tp = m.pairs.iter().filter(|p| p.2 >= 0.5).count() as f64;
        let (np, ng) = (pred.len() as f64, gt.len() as f64);
        cmp("ap50", rep.ap50, (np > 0.0).then(|| tp / np), ARITH_TOL)?;
        cmp("ar50", rep.ar50, Some(tp / ng), ARITH_TOL)?;
        cmp("n_ratio", rep.n_ratio, Some(np / ng), ARITH_TOL)?;
        let complete = m.pairs.iter().filter(|p| pred[p.0].h.is_some_and(|h| h >= 1.0)).count() as f64;
        cmp("completeness", rep.completeness, Some(complete / ng), ARITH_TOL)?;
        let dh: Vec<f64> = m.pairs.iter().filter_map(|p| Some(pred[p.0].h? - gt[p.1].h?)).collect();
        let he = rmse_mae(&dh);
        cmp("rmse_bh", rep.rmse_bh, he.map(|x| x.0), ARITH_TOL)?;
        cmp("mae_bh", rep.mae_bh, he.map(|x| x.1), ARITH_TOL)?;
        let ve = oracle_volume(&pred, &gt, params.volume_cell_m as usize);
        cmp("rmse_bv", rep.rmse_bv, ve.map(|x| x.0), GEOM_TOL)?;
        cmp("mae_bv", rep.mae_bv, ve.map(|x| x.1), GEOM_TOL)?;
    }
    Ok(format!("{TOWNS} towns, {buildings} reference buildings"))
}

// ---------------------------------------------------------------------------
// 4. pipeline identities

fn ring_key(ls: &LineString<f64>) -> RingKey {
    let mut v: RingKey = ls.0[..ls.0.len() - 1].iter().map(|c| (c.x.to_bits(), c.y.to_bits())).collect();
    v.sort();
    v
}

type RingKey = Vec<(u64, u64)>;

fn polygon_key(p: &Polygon<f64>) -> (RingKey, Vec<RingKey>) {
    let mut holes: Vec<_> = p.interiors().iter().map(ring_key).collect();
    holes.sort();
    (ring_key(p.exterior()), holes)
}

fn pipeline_identities() -> Check {
    let city = fixtures().join("city");
    let osm = read_footprints(&city.join("osm.jsonl"), Some(Source::Osm)).map_err(|e| e.to_string())?.0;
    ensure(!osm.is_empty(), || "empty OSM fixture".into())?;
    ensure(merge(&osm, &osm, DEFAULT_OVERLAP_THRESH) == osm, || "merge(P, P) != P".into())?;

    let gt_path = city.join("ground_truth.jsonl");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let g = gt_path.to_str().unwrap();
    gba(&["eval", "--pred", g, "--gt", g, "--out", dir.path().to_str().unwrap()])?;
    let text = std::fs::read_to_string(dir.path().join("eval.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| -> Result<f64, String> {
        let i = header.iter().position(|h| *h == name).ok_or(format!("no column {name}"))?;
        row.get(i).and_then(|v| v.parse().ok()).ok_or(format!("bad {name} cell"))
    };
    for (name, want) in [("iou", 1.0), ("ap50", 1.0), ("ar50", 1.0), ("rmse_bv", 0.0), ("rmse_bh", 0.0)] {
        let got = col(name)?;
        ensure(got == want, || format!("self-eval {name} = {got}"))?;
    }

    let gt = read_footprints(&gt_path, None).map_err(|e| e.to_string())?.0;
    let spec = read_raster(&city.join("probability.tif")).map_err(|e| e.to_string())?.spec;
    let mask = rasterize(gt.iter().map(|r| (r.geometry.polygon(), 1.0)), &spec, Semantic::BinaryMask)
        .map_err(|e| e.to_string())?;
    let mut traced: Vec<_> = trace_polygons(&mask).iter().map(polygon_key).collect();
    let mut want: Vec<_> = gt.iter().map(|r| polygon_key(r.geometry.polygon())).collect();
    traced.sort();
    want.sort();
    ensure(traced == want, || {
        let bad = traced.iter().zip(&want).find(|(a, b)| a != b);
        format!("traced {} polygons, reference has {}; first mismatch {bad:?}", traced.len(), want.len())
    })?;
    Ok(format!("{} OSM, {} reference buildings", osm.len(), gt.len()))
}

// ---------------------------------------------------------------------------
// 5. LoD1

fn lod1_grid() -> GridSpec {
    GridSpec::new((8.0, 47.0), (0.0001, 0.0001), 40, 40, Units::Degrees).unwrap()
}

fn inside(x: f64, y: f64, ring: &[geo::Coord<f64>]) -> bool {
    let mut c = false;
    for e in ring.windows(2) {
        let (a, b) = (e[0], e[1]);
        if (a.y > y) != (b.y > y) && x < a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x) {
            c = !c;
        }
    }
    c
}

fn lod1_oracles() -> Check {
    let spec = lod1_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fallback = 0;
    for case in 0..10_000 {
        let values: Vec<f64> = (0..spec.len())
            .map(|_| if rng.random_bool(0.15) { NODATA } else { rng.random_range(-2.0..60.0) })
            .collect();
        let h = RasterGrid::new(spec, values, Some(NODATA), Semantic::HeightMeters).map_err(|e| e.to_string())?;
        let v = RasterGrid::new(
            spec,
            (0..spec.len()).map(|_| if rng.random_bool(0.05) { NODATA } else { rng.random_range(0.0..9.0) }).collect(),
            Some(NODATA),
            Semantic::VarianceM2,
        )
        .map_err(|e| e.to_string())?;
        let (cx, cy) = (8.0 + rng.random_range(0.0003..0.0037), 47.0 - rng.random_range(0.0003..0.0037));
        let k = rng.random_range(3..9);
        let scale = if rng.random_bool(0.1) { 0.00004 } else { 0.0003 };
        let mut pts: Vec<(f64, f64)> = (0..k)
            .map(|i| {
                let a = i as f64 / k as f64 * std::f64::consts::TAU + rng.random_range(0.0..0.4);
                let r = rng.random_range(0.3..1.0) * scale;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        pts.push(pts[0]);
        let f = FootprintRecord::new("f", GeoPolygon::new(pts, vec![]).map_err(|e| e.to_string())?, Source::Osm);
        let ring = &f.geometry.polygon().exterior().0;

        let mut best: Option<(f64, usize, usize)> = None;
        let mut any = false;
        for r in 0..spec.height {
            for c in 0..spec.width {
                let (x, y) = (spec.origin.0 + (c as f64 + 0.5) * 0.0001, spec.origin.1 - (r as f64 + 0.5) * 0.0001);
                if !inside(x, y, ring) {
                    continue;
                }
                any = true;
                let hv = h.get(c, r);
                if hv != NODATA && best.is_none_or(|b| hv.max(0.0) > b.0) {
                    best = Some((hv.max(0.0), c, r));
                }
            }
        }
        if !any {
            fallback += 1;
            let ctr = f.geometry.centroid();
            let (c, r) = (((ctr.x - 8.0) / 0.0001).floor() as usize, ((47.0 - ctr.y) / 0.0001).floor() as usize);
            let hv = h.get(c, r);
            if hv != NODATA {
                best = Some((hv.max(0.0), c, r));
            }
        }
        let got = assign_height(&f, &h, &v);
        let want_h = best.map(|b| b.0);
        let want_u = best.and_then(|b| Some(v.get(b.1, b.2)).filter(|x| *x != NODATA));
        ensure(got.height_m == want_h && got.uncertainty_m2 == want_u, || {
            format!("case {case}: got ({:?}, {:?}) want ({want_h:?}, {want_u:?})", got.height_m, got.uncertainty_m2)
        })?;
    }

    for k in 1..=4 {
        let layers: Vec<RasterGrid> = (0..k)
            .map(|_| {
                let vals = (0..spec.len())
                    .map(|_| if rng.random_bool(0.2) { NODATA } else { rng.random_range(-1.0..80.0) })
                    .collect();
                RasterGrid::new(spec, vals, Some(NODATA), Semantic::HeightMeters).unwrap()
            })
            .collect();
        let (mean, var) = tta_aggregate(&PredictionStack::new(layers.clone()).map_err(|e| e.to_string())?);
        for i in 0..spec.len() {
            let xs: Vec<f64> = layers.iter().map(|l| l.values[i]).filter(|x| *x != NODATA).collect();
            if xs.is_empty() {
                ensure(mean.values[i] == NODATA && var.values[i] == NODATA, || format!("pixel {i} not nodata"))?;
                continue;
            }
            let n = xs.len() as f64;
            let mu = xs.iter().sum::<f64>() / n;
            let s2 = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            ensure(close(mean.values[i], mu, 1e-12) && (var.values[i] - s2).abs() <= 1e-9 * s2.max(1.0), || {
                format!("pixel {i}: ({}, {}) vs ({mu}, {s2})", mean.values[i], var.values[i])
            })?;
        }
    }

    let square = GeoPolygon::new(vec![(8.001, 46.999), (8.002, 46.999), (8.002, 46.998), (8.001, 46.998)], vec![])
        .map_err(|e| e.to_string())?;
    let fp = [FootprintRecord::new("b", square, Source::Osm)];
    for (value, valid) in [(0.99, false), (1.0, true)] {
        let h = RasterGrid::filled(spec, value, Some(NODATA), Semantic::HeightMeters);
        let v = RasterGrid::filled(spec, 0.0, Some(NODATA), Semantic::VarianceM2);
        let (recs, completeness) = build_lod1(&fp, &h, &v);
        ensure(recs[0].has_valid_height() == valid && completeness == if valid { 1.0 } else { 0.0 }, || {
            format!("height {value}: valid {} completeness {completeness}", recs[0].has_valid_height())
        })?;
    }
    Ok(format!("10000 footprints ({fallback} via centroid), variance on 4 stacks, 1 m boundary"))
}

// ---------------------------------------------------------------------------
// 6. false-positive filter

fn fp_filter() -> Check {
    let (x0, y1, px, n) = (11.5, 48.2, 0.0005, 40usize);
    let spec = GridSpec::new((x0, y1), (px, px), n, n, Units::Degrees).map_err(|e| e.to_string())?;
    let (mx, my) = spec.pixel_size_m();
    let radius = 250.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut lc = RasterGrid::filled(spec, 0.0, None, Semantic::BinaryMask);
    let mut built = Vec::new();
    for _ in 0..8 {
        let (c, r) = (rng.random_range(0..n), rng.random_range(0..n));
        lc.set(c, r, 1.0);
        built.push((c as f64, r as f64));
    }
    // Metric distance from each cell to the nearest built cell, per axis
    // measured to the near edge of the cell.
    let near = |c: usize, r: usize| {
        built.iter().any(|&(bc, br)| {
            let dx = ((c as f64 - bc).abs() - 0.5).max(0.0) * mx;
            let dy = ((r as f64 - br).abs() - 0.5).max(0.0) * my;
            dx.max(dy) <= radius
        })
    };
    let recs: Vec<FootprintRecord> = (0..1000)
        .map(|i| {
            let (cx, cy) = (x0 - 0.002 + rng.random_range(0.0..0.024), y1 + 0.002 - rng.random_range(0.0..0.024));
            let k = rng.random_range(3..8);
            let mut pts: Vec<(f64, f64)> = (0..k)
                .map(|j| {
                    let a = j as f64 / k as f64 * std::f64::consts::TAU + rng.random_range(0.0..0.5);
                    let r = rng.random_range(0.00003..0.0004);
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
            pts.push(pts[0]);
            FootprintRecord::new(format!("{i:04}"), GeoPolygon::new(pts, vec![]).unwrap(), Source::PsrDerived)
        })
        .collect();
    let oracle: Vec<String> = recs
        .iter()
        .filter(|rec| {
            let p = rec.geometry.polygon();
            (0..n).any(|r| {
                (0..n).any(|c| {
                    let cell = Rect::new(
                        (x0 + c as f64 * px, y1 - (r + 1) as f64 * px),
                        (x0 + (c + 1) as f64 * px, y1 - r as f64 * px),
                    );
                    near(c, r) && p.intersects(&cell)
                })
            })
        })
        .map(|r| r.id.clone())
        .collect();
    let (kept, report) = filter_false_positives(recs, &lc, radius);
    let got: Vec<String> = kept.into_iter().map(|r| r.id).collect();
    ensure(got == oracle, || format!("kept {} vs oracle {}", got.len(), oracle.len()))?;
    Ok(format!("1000 polygons, {} kept, {} removed", report.kept, report.removed))
}

// ---------------------------------------------------------------------------
// 7. determinism

fn collect_files(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir)? {
        let e = e?;
        out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path())?);
    }
    Ok(out)
}

fn determinism() -> Check {
    let cfg = fixtures().join("city").join("demo.toml");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for threads in ["1", "8"] {
        let out = tmp.path().join(format!("t{threads}"));
        gba(&["--config", cfg.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap(), "pipeline"])?;
        runs.push(collect_files(&out).map_err(|e| e.to_string())?);
    }
    ensure(runs[0].len() > 5, || format!("only {} output files", runs[0].len()))?;
    ensure(runs[0].keys().eq(runs[1].keys()), || "different file sets".into())?;
    for (name, bytes) in &runs[0] {
        ensure(runs[1][name] == *bytes, || format!("{name} differs"))?;
    }
    let total: usize = runs[0].values().map(Vec::len).sum();
    Ok(format!("{} files, {total} bytes identical", runs[0].len()))
}

// ---------------------------------------------------------------------------
// 8. regression

fn regression() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(3..300);
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-2.0..6.0))).collect();
        let y: Vec<f64> = x.iter().map(|v| c * v * v).collect();
        let r = loglog_regression(&x, &y).map_err(|e| e.to_string())?;
        ensure((r.slope - 2.0).abs() <= 1e-9, || format!("slope {}", r.slope))?;
        ensure((r.pearson_r - 1.0).abs() <= 1e-9, || format!("r {}", r.pearson_r))?;
    }
    for _ in 0..200 {
        let n = rng.random_range(2..200);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let gy: Vec<f64> = y.iter().map(|v| v * v * v + 2.0 * v).collect();
        let (a, b) = (spearman(&x, &y), spearman(&fx, &gy));
        let same = match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        ensure(same, || format!("spearman {a:?} vs {b:?}"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let table = dir.path().join("t.csv");
    let mut csv = String::from("region_id,x,y\n");
    for i in 1..=40 {
        let x = i as f64 * 1.7;
        csv.push_str(&format!("R{i},{x},{}\n", 3.5 * x * x));
    }
    std::fs::write(&table, csv).map_err(|e| e.to_string())?;
    let out = gba(&["analyze", "regression", "--table", table.to_str().unwrap(), "--x", "x", "--y", "y"])?;
    let slope: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("slope "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no slope in {out:?}"))?;
    ensure((slope - 2.0).abs() <= 1e-9, || format!("cli slope {slope}"))?;
    Ok("slope 2 and r 1 on 50 power-law sets, spearman invariant on 200".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 8] = [
        ("1", "global count extrapolation", Some(Duration::from_secs(1)), global_count),
        ("2", "ranking pair counts", Some(Duration::from_secs(1)), ranking_pairs),
        ("3", "metric oracles", Some(Duration::from_secs(120)), metric_oracles),
        ("4", "pipeline identities", Some(Duration::from_secs(30)), pipeline_identities),
        ("5", "LoD1 correctness", Some(Duration::from_secs(60)), lod1_oracles),
        ("6", "false-positive filter", Some(Duration::from_secs(30)), fp_filter),
        ("7", "end-to-end determinism", None, determinism),
        ("8", "regression sanity", None, regression),
    ];
    let mut failed = 0;
    for (num, name, limit, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {num} {name}: {detail} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {num} {name}: {why} ({elapsed:.2?})");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
