//! Raster and vector evaluation metrics for building products.
//!
//! Vector metrics work on planar polygons in meters; use [`EvalFrame`] to
//! bring lon/lat records into a shared local frame first.

use geo::{BooleanOps, Polygon};

use crate::error::{Error, Result};
use crate::geom::{multi_planar_area, planar_area, BBox, LocalFrame};
use crate::index::SpatialIndex;
use crate::lod1::Lod1Record;
use crate::raster::{rasterize, scan_polygon, GridSpec, RasterGrid, Semantic, Units};
use crate::record::FootprintRecord;

pub const IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_IOU_RESOLUTION_M: f64 = 3.0;
pub const DEFAULT_VOLUME_CELL_M: f64 = 10.0;
pub const DEFAULT_MIN_HEIGHT_M: f64 = 1.0;

/// A building in planar meters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBuilding {
    pub id: String,
    pub polygon: Polygon<f64>,
    pub height_m: Option<f64>,
}

impl EvalBuilding {
    pub fn new(id: impl Into<String>, polygon: Polygon<f64>, height_m: Option<f64>) -> Self {
        EvalBuilding {
            id: id.into(),
            polygon,
            height_m,
        }
    }
}

/// Local frame shared by a prediction set and its reference.
pub struct EvalFrame(LocalFrame);

impl EvalFrame {
    pub fn for_records<'a>(records: impl IntoIterator<Item = &'a FootprintRecord>) -> Self {
        let b = records
            .into_iter()
            .fold(BBox::EMPTY, |acc, r| acc.union(&r.geometry.bbox()));
        let frame = if b.is_empty() {
            LocalFrame::new(0.0, 0.0)
        } else {
            LocalFrame::centered_on(&b)
        };
        EvalFrame(frame)
    }

    pub fn footprint(&self, r: &FootprintRecord) -> EvalBuilding {
        EvalBuilding::new(r.id.clone(), self.0.project_polygon(r.geometry.polygon()), r.height_m)
    }

    pub fn lod1(&self, r: &Lod1Record) -> EvalBuilding {
        EvalBuilding::new(
            r.footprint.id.clone(),
            self.0.project_polygon(r.footprint.geometry.polygon()),
            r.height_m,
        )
    }
}

fn union_bbox(sets: &[&[EvalBuilding]]) -> BBox {
    sets.iter()
        .flat_map(|s| s.iter())
        .fold(BBox::EMPTY, |acc, b| acc.union(&BBox::of_polygon(&b.polygon)))
}

// ---------------------------------------------------------------------------
// raster IoU

/// IoU of a predicted mask against reference polygons burned onto the
/// mask's grid. Both empty gives 1.
pub fn raster_iou(pred_mask: &RasterGrid, gt: &[Polygon<f64>]) -> Result<f64> {
    pred_mask.expect_semantic(Semantic::BinaryMask)?;
    let gt_mask = rasterize(gt.iter().map(|p| (p, 1.0)), &pred_mask.spec, Semantic::BinaryMask)?;
    Ok(mask_iou(pred_mask, &gt_mask))
}

/// IoU of two masks on the same grid. Both empty gives 1.
pub fn mask_iou(a: &RasterGrid, b: &RasterGrid) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x == 1.0, y == 1.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Rasterize both sides at `resolution_m` on a grid covering both and
/// return their IoU.
pub fn vector_iou(pred: &[EvalBuilding], gt: &[EvalBuilding], resolution_m: f64) -> Result<f64> {
    let b = union_bbox(&[pred, gt]);
    if b.is_empty() {
        return Ok(1.0);
    }
    let spec = GridSpec::covering(&b, resolution_m, Units::Meters)?;
    let p = rasterize(pred.iter().map(|x| (&x.polygon, 1.0)), &spec, Semantic::BinaryMask)?;
    let g = rasterize(gt.iter().map(|x| (&x.polygon, 1.0)), &spec, Semantic::BinaryMask)?;
    Ok(mask_iou(&p, &g))
}

// ---------------------------------------------------------------------------
// instance matching

#[derive(Debug, Clone, PartialEq)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub pred_id: String,
    pub gt_id: String,
    pub overlap_m2: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_pred: Vec<String>,
    pub unmatched_gt: Vec<String>,
    pub n_pred: usize,
    pub n_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.iou >= IOU_THRESHOLD).count()
    }
}

/// Greedy one-to-one matching by descending overlap area; ties are broken
/// by (pred_id, gt_id). Pairs without overlap are never matched.
pub fn match_max_overlap(pred: &[EvalBuilding], gt: &[EvalBuilding]) -> MatchResult {
    let pred_area: Vec<f64> = pred.iter().map(|b| planar_area(&b.polygon)).collect();
    let gt_area: Vec<f64> = gt.iter().map(|b| planar_area(&b.polygon)).collect();
    let index = SpatialIndex::build(gt.iter().map(|b| BBox::of_polygon(&b.polygon)));

    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for j in index.query(&BBox::of_polygon(&p.polygon)) {
            let ov = multi_planar_area(&p.polygon.intersection(&gt[j].polygon));
            if ov > 0.0 {
                cands.push((ov, i, j));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| pred[a.1].id.cmp(&pred[b.1].id))
            .then_with(|| gt[a.2].id.cmp(&gt[b.2].id))
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });

    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (ov, i, j) in cands {
        if pred_used[i] || gt_used[j] {
            continue;
        }
        pred_used[i] = true;
        gt_used[j] = true;
        let union = pred_area[i] + gt_area[j] - ov;
        let iou = if union > 0.0 { (ov / union).clamp(0.0, 1.0) } else { 0.0 };
        pairs.push(MatchPair {
            pred: i,
            gt: j,
            pred_id: pred[i].id.clone(),
            gt_id: gt[j].id.clone(),
            overlap_m2: ov,
            iou,
        });
    }
    MatchResult {
        pairs,
        unmatched_pred: (0..pred.len()).filter(|&i| !pred_used[i]).map(|i| pred[i].id.clone()).collect(),
        unmatched_gt: (0..gt.len()).filter(|&j| !gt_used[j]).map(|j| gt[j].id.clone()).collect(),
        n_pred: pred.len(),
        n_gt: gt.len(),
    }
}

/// Precision at IoU 0.5 over the whole prediction set.
pub fn ap50(m: &MatchResult) -> Result<f64> {
    if m.n_pred == 0 {
        return Err(Error::Undefined("precision of an empty prediction set"));
    }
    Ok(m.true_positives() as f64 / m.n_pred as f64)
}

/// Recall at IoU 0.5.
pub fn ar50(m: &MatchResult) -> Result<f64> {
    if m.n_gt == 0 {
        return Err(Error::Undefined("recall against an empty reference"));
    }
    Ok(m.true_positives() as f64 / m.n_gt as f64)
}

/// All-point interpolated AP at IoU 0.5, ranking predictions by footprint
/// area as a stand-in confidence (largest first, ties by id).
pub fn ap50_area_ranked(pred: &[EvalBuilding], m: &MatchResult) -> Result<f64> {
    if m.n_gt == 0 {
        return Err(Error::Undefined("AP against an empty reference"));
    }
    let mut tp_flag = vec![false; pred.len()];
    for p in &m.pairs {
        tp_flag[p.pred] = p.iou >= IOU_THRESHOLD;
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    let areas: Vec<f64> = pred.iter().map(|b| planar_area(&b.polygon)).collect();
    order.sort_by(|&a, &b| areas[b].total_cmp(&areas[a]).then_with(|| pred[a].id.cmp(&pred[b].id)));
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        tp += tp_flag[i] as usize;
        curve.push((tp as f64 / m.n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // Precision envelope, then area under the step curve.
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in curve {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Ok(ap)
}

pub fn n_ratio(n_pred: usize, n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::Undefined("N-ratio against an empty reference"));
    }
    Ok(n_pred as f64 / n_gt as f64)
}

// ---------------------------------------------------------------------------
// height and volume errors

/// RMSE and MAE of heights over matched pairs where both heights exist.
pub fn height_error(m: &MatchResult, pred: &[EvalBuilding], gt: &[EvalBuilding]) -> Result<(f64, f64)> {
    let diffs: Vec<f64> = m
        .pairs
        .iter()
        .filter_map(|p| Some(pred[p.pred].height_m? - gt[p.gt].height_m?))
        .collect();
    rmse_mae(&diffs).ok_or(Error::Undefined("no matched pair with heights"))
}

fn rmse_mae(diffs: &[f64]) -> Option<(f64, f64)> {
    if diffs.is_empty() {
        return None;
    }
    let n = diffs.len() as f64;
    let rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    Some((rmse, mae))
}

/// Fraction of reference buildings matched to a prediction of height at
/// least `min_h`.
pub fn completeness(m: &MatchResult, pred: &[EvalBuilding], min_h: f64) -> Result<f64> {
    if m.n_gt == 0 {
        return Err(Error::Undefined("completeness against an empty reference"));
    }
    let ok = m
        .pairs
        .iter()
        .filter(|p| pred[p.pred].height_m.is_some_and(|h| h >= min_h))
        .count();
    Ok(ok as f64 / m.n_gt as f64)
}

/// Grid of 1 m pixels anchored at the lower-left of `b`, padded to whole
/// aggregation cells.
fn volume_grid(b: &BBox, cell_m: f64) -> Result<(GridSpec, usize)> {
    let k = cell_m.round();
    if !(k >= 1.0) || (cell_m - k).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "volume cell size {cell_m} must be a whole number of meters"
        )));
    }
    let k = k as usize;
    let cells_x = ((b.width() / cell_m).ceil() as usize).max(1);
    let cells_y = ((b.height() / cell_m).ceil() as usize).max(1);
    let h = cells_y * k;
    let spec = GridSpec::new((b.min_x, b.min_y + h as f64), (1.0, 1.0), cells_x * k, h, Units::Meters)?;
    Ok((spec, k))
}

/// Per-cell building volume (m³) from 1 m prism rasterization. Buildings
/// are burned in id order; later ids overwrite overlaps.
fn cell_volumes(buildings: &[EvalBuilding], spec: &GridSpec, k: usize) -> Vec<f64> {
    let mut heights = vec![0.0f64; spec.len()];
    let mut order: Vec<&EvalBuilding> = buildings.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    for b in order {
        let h = b.height_m.unwrap_or(0.0).max(0.0);
        scan_polygon(&b.polygon, spec, |c, r| heights[spec.index(c, r)] = h);
    }
    let (cw, ch) = (spec.width / k, spec.height / k);
    let mut cells = vec![0.0f64; cw * ch];
    for r in 0..spec.height {
        for c in 0..spec.width {
            cells[(r / k) * cw + c / k] += heights[spec.index(c, r)];
        }
    }
    cells
}

fn per_100m2(cell_m: f64) -> f64 {
    100.0 / (cell_m * cell_m)
}

/// RMSE and MAE of per-cell volume in m³/100 m², over cells where either
/// side has building volume.
pub fn volume_error(pred: &[EvalBuilding], gt: &[EvalBuilding], cell_m: f64) -> Result<(f64, f64)> {
    let b = union_bbox(&[pred, gt]);
    if b.is_empty() {
        return Err(Error::Undefined("volume error of two empty sets"));
    }
    let (spec, k) = volume_grid(&b, cell_m)?;
    let vp = cell_volumes(pred, &spec, k);
    let vg = cell_volumes(gt, &spec, k);
    let norm = per_100m2(cell_m);
    let diffs: Vec<f64> = vp
        .iter()
        .zip(&vg)
        .filter(|(a, b)| **a != 0.0 || **b != 0.0)
        .map(|(a, b)| (a - b) * norm)
        .collect();
    rmse_mae(&diffs).ok_or(Error::Undefined("no built cell on either side"))
}

/// Volume error of a coarse height raster in planar meters against
/// reference prisms, at the raster's native cells. Predicted cell volume
/// is mean height × built fraction × cell area (fraction 1 when absent);
/// the reference is integrated on a 1 m sub-grid of each cell.
pub fn volume_error_raster(
    pred_height: &RasterGrid,
    built_fraction: Option<&RasterGrid>,
    gt: &[EvalBuilding],
) -> Result<(f64, f64)> {
    let spec = pred_height.spec;
    if spec.units != Units::Meters {
        return Err(Error::InvalidGrid("raster volume error needs a metric grid".into()));
    }
    if let Some(f) = built_fraction {
        if !f.same_geometry(pred_height) {
            return Err(Error::GridMismatch);
        }
    }
    let kx = spec.pixel_size.0.round().max(1.0) as usize;
    let ky = spec.pixel_size.1.round().max(1.0) as usize;
    let fine = GridSpec::new(
        spec.origin,
        (spec.pixel_size.0 / kx as f64, spec.pixel_size.1 / ky as f64),
        spec.width * kx,
        spec.height * ky,
        Units::Meters,
    )?;
    let fine_area = fine.pixel_area();
    let mut heights = vec![0.0f64; fine.len()];
    let mut order: Vec<&EvalBuilding> = gt.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    for b in order {
        let h = b.height_m.unwrap_or(0.0).max(0.0);
        scan_polygon(&b.polygon, &fine, |c, r| heights[fine.index(c, r)] = h);
    }
    let mut gt_cells = vec![0.0f64; spec.len()];
    for r in 0..fine.height {
        for c in 0..fine.width {
            gt_cells[spec.index(c / kx, r / ky)] += heights[fine.index(c, r)] * fine_area;
        }
    }
    let cell_area = spec.pixel_area();
    let norm = 100.0 / cell_area;
    let mut diffs = Vec::new();
    for i in 0..spec.len() {
        let h = pred_height.values[i];
        let pv = if pred_height.is_nodata(h) {
            0.0
        } else {
            let frac = built_fraction
                .and_then(|f| {
                    let v = f.values[i];
                    (!f.is_nodata(v)).then_some(v)
                })
                .unwrap_or(1.0);
            h.max(0.0) * frac * cell_area
        };
        if pv != 0.0 || gt_cells[i] != 0.0 {
            diffs.push((pv - gt_cells[i]) * norm);
        }
    }
    rmse_mae(&diffs).ok_or(Error::Undefined("no built cell on either side"))
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub iou_resolution_m: f64,
    pub volume_cell_m: f64,
    pub min_height_m: f64,
    /// Rank predictions by area for an all-point AP instead of the
    /// single operating point.
    pub area_ranked_ap: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            iou_resolution_m: DEFAULT_IOU_RESOLUTION_M,
            volume_cell_m: DEFAULT_VOLUME_CELL_M,
            min_height_m: DEFAULT_MIN_HEIGHT_M,
            area_ranked_ap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub iou: Option<f64>,
    pub ap50: Option<f64>,
    pub ar50: Option<f64>,
    pub n_ratio: Option<f64>,
    pub rmse_bv: Option<f64>,
    pub mae_bv: Option<f64>,
    pub rmse_bh: Option<f64>,
    pub mae_bh: Option<f64>,
    pub completeness: Option<f64>,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 9] = [
        "iou", "ap50", "ar50", "n_ratio", "rmse_bv", "mae_bv", "rmse_bh", "mae_bh", "completeness",
    ];

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.iou,
            self.ap50,
            self.ar50,
            self.n_ratio,
            self.rmse_bv,
            self.mae_bv,
            self.rmse_bh,
            self.mae_bh,
            self.completeness,
        ]
    }
}

/// Every metric for one prediction set; undefined metrics are `None`.
pub fn evaluate(pred: &[EvalBuilding], gt: &[EvalBuilding], params: &EvalParams) -> EvalReport {
    let m = match_max_overlap(pred, gt);
    let (rmse_bv, mae_bv) = volume_error(pred, gt, params.volume_cell_m).ok().unzip();
    let (rmse_bh, mae_bh) = height_error(&m, pred, gt).ok().unzip();
    let ap = if params.area_ranked_ap {
        ap50_area_ranked(pred, &m).ok()
    } else {
        ap50(&m).ok()
    };
    EvalReport {
        iou: vector_iou(pred, gt, params.iou_resolution_m).ok(),
        ap50: ap,
        ar50: ar50(&m).ok(),
        n_ratio: n_ratio(pred.len(), gt.len()).ok(),
        rmse_bv,
        mae_bv,
        rmse_bh,
        mae_bh,
        completeness: completeness(&m, pred, params.min_height_m).ok(),
    }
}
