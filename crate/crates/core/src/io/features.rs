//! Newline-delimited GeoJSON-style features.
//!
//! Input may also be a single FeatureCollection document. Output is always
//! one feature per line, sorted by id, with sorted property keys.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use geo::{Coord, LineString, Polygon};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::fusion::{AdminUnit, Continent};
use crate::geom::{GeoMultiPolygon, GeoPolygon, Validity};
use crate::lod1::Lod1Record;
use crate::record::{FootprintRecord, Source};

/// A skipped feature or polygon part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line in the file; features of a multi-line collection
    /// report their position in the collection instead.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Per-file accounting of what was read.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadReport {
    pub path: PathBuf,
    /// Features encountered, including malformed lines.
    pub features: usize,
    /// Records yielded.
    pub accepted: usize,
    /// Ids of accepted records whose geometry had to be repaired.
    pub repaired: Vec<String>,
    pub rejected: Vec<Rejection>,
}

/// A parsed feature before interpretation of its properties.
#[derive(Debug, Clone)]
pub struct RawFeature {
    pub line: usize,
    pub id: Option<String>,
    pub geometry: Option<Value>,
    pub properties: Map<String, Value>,
}

enum Mode {
    Lines(Box<dyn BufRead + Send>),
    Buffered(VecDeque<(usize, Value)>),
    Done,
}

/// Lazily parsed features from newline-delimited input or a collection.
pub struct RawReader {
    mode: Mode,
    line: usize,
    pending_first: Option<String>,
    /// Lines that are not valid feature objects.
    pub malformed: Vec<Rejection>,
}

impl RawReader {
    pub fn new(mut r: Box<dyn BufRead + Send>) -> std::io::Result<Self> {
        // Skip leading blank lines and inspect the first one.
        let mut line_no = 0;
        let mut first = String::new();
        loop {
            first.clear();
            let n = r.read_line(&mut first)?;
            line_no += 1;
            if n == 0 {
                return Ok(RawReader { mode: Mode::Done, line: line_no, pending_first: None, malformed: vec![] });
            }
            if !first.trim().is_empty() {
                break;
            }
        }
        let parsed: Option<Value> = serde_json::from_str(first.trim()).ok();
        let is_collection = |v: &Value| v.get("type").and_then(Value::as_str) == Some("FeatureCollection");
        let mut reader = RawReader { mode: Mode::Done, line: line_no - 1, pending_first: None, malformed: vec![] };
        match parsed {
            Some(v) if is_collection(&v) => reader.mode = Mode::Buffered(collection_features(v)),
            Some(_) => {
                reader.pending_first = Some(first);
                reader.mode = Mode::Lines(r);
            }
            None => {
                // Either a pretty-printed collection or a malformed first line.
                let mut rest = String::new();
                r.read_to_string(&mut rest)?;
                let whole = format!("{first}{rest}");
                match serde_json::from_str::<Value>(&whole) {
                    Ok(v) if is_collection(&v) => reader.mode = Mode::Buffered(collection_features(v)),
                    _ => {
                        reader.pending_first = Some(first);
                        reader.mode = Mode::Lines(Box::new(std::io::Cursor::new(rest.into_bytes())));
                    }
                }
            }
        }
        Ok(reader)
    }

    fn next_line(&mut self) -> Option<std::io::Result<(usize, String)>> {
        if let Some(l) = self.pending_first.take() {
            self.line += 1;
            return Some(Ok((self.line, l)));
        }
        let Mode::Lines(r) = &mut self.mode else { return None };
        let mut s = String::new();
        match r.read_line(&mut s) {
            Ok(0) => None,
            Ok(_) => {
                self.line += 1;
                Some(Ok((self.line, s)))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

fn collection_features(v: Value) -> VecDeque<(usize, Value)> {
    match v {
        Value::Object(mut m) => match m.remove("features") {
            Some(Value::Array(a)) => a.into_iter().enumerate().map(|(i, f)| (i + 1, f)).collect(),
            _ => VecDeque::new(),
        },
        _ => VecDeque::new(),
    }
}

fn raw_feature(line: usize, v: Value) -> std::result::Result<RawFeature, String> {
    let Value::Object(mut m) = v else {
        return Err("not a JSON object".into());
    };
    if m.get("type").and_then(Value::as_str) != Some("Feature") {
        return Err("not a Feature".into());
    }
    let properties = match m.remove("properties") {
        Some(Value::Object(p)) => p,
        None | Some(Value::Null) => Map::new(),
        Some(_) => return Err("properties is not an object".into()),
    };
    let id = id_string(m.get("id")).or_else(|| id_string(properties.get("id")));
    Ok(RawFeature { line, id, geometry: m.remove("geometry"), properties })
}

fn id_string(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

impl Iterator for RawReader {
    type Item = std::io::Result<RawFeature>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Mode::Buffered(q) = &mut self.mode {
                let (pos, v) = q.pop_front()?;
                match raw_feature(pos, v) {
                    Ok(f) => return Some(Ok(f)),
                    Err(reason) => {
                        self.malformed.push(Rejection { line: pos, id: None, reason });
                        continue;
                    }
                }
            }
            let (line, text) = match self.next_line()? {
                Ok(x) => x,
                Err(e) => return Some(Err(e)),
            };
            if text.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Value>(text.trim())
                .map_err(|e| format!("malformed JSON: {e}"))
                .and_then(|v| raw_feature(line, v));
            match parsed {
                Ok(f) => return Some(Ok(f)),
                Err(reason) => self.malformed.push(Rejection { line, id: None, reason }),
            }
        }
    }
}

fn parse_ring(v: &Value) -> std::result::Result<LineString<f64>, String> {
    let pts = v.as_array().ok_or("ring is not an array")?;
    let mut coords = Vec::with_capacity(pts.len() + 1);
    for p in pts {
        let xy = p.as_array().ok_or("position is not an array")?;
        let num = |i: usize| xy.get(i).and_then(Value::as_f64).ok_or("position needs two numbers");
        coords.push(Coord { x: num(0)?, y: num(1)? });
    }
    if coords.len() >= 2 && coords.first() != coords.last() {
        coords.push(coords[0]);
    }
    Ok(LineString(coords))
}

fn parse_polygon(v: &Value) -> std::result::Result<Polygon<f64>, String> {
    let rings = v.as_array().ok_or("polygon coordinates are not an array")?;
    let mut it = rings.iter().map(parse_ring);
    let ext = it.next().ok_or("polygon without rings")??;
    let holes = it.collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Polygon::new(ext, holes))
}

/// Polygon parts of a geometry object.
pub fn geometry_parts(g: Option<&Value>) -> std::result::Result<Vec<Polygon<f64>>, String> {
    let g = match g {
        None | Some(Value::Null) => return Err("missing geometry".into()),
        Some(g) => g,
    };
    let coords = g.get("coordinates").ok_or("geometry without coordinates")?;
    match g.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![parse_polygon(coords)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or("multipolygon coordinates are not an array")?
            .iter()
            .map(parse_polygon)
            .collect(),
        Some(other) => Err(format!("unsupported geometry type {other}")),
        None => Err("geometry without type".into()),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Lod1Extras {
    uncertainty_m2: Option<f64>,
    volume_m3: Option<f64>,
}

/// Footprint records from a feature stream. Invalid rings get one repair
/// attempt; anything else that cannot become a record is rejected and
/// reported. Multi-part features become one record per part, `id#k`.
pub struct FootprintReader {
    raw: RawReader,
    source: Option<Source>,
    queue: VecDeque<(FootprintRecord, Lod1Extras)>,
    pub report: ReadReport,
}

impl FootprintReader {
    pub fn new(r: Box<dyn BufRead + Send>, path: &Path, source: Option<Source>) -> Result<Self> {
        let raw = RawReader::new(r).map_err(|e| Error::io(path, e))?;
        Ok(FootprintReader {
            raw,
            source,
            queue: VecDeque::new(),
            report: ReadReport { path: path.to_path_buf(), ..Default::default() },
        })
    }

    pub fn open(path: &Path, source: Option<Source>) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(Box::new(BufReader::new(f)), path, source)
    }

    fn reject(&mut self, line: usize, id: Option<String>, reason: impl Into<String>) {
        self.report.rejected.push(Rejection { line, id, reason: reason.into() });
    }

    fn interpret(&mut self, f: RawFeature) {
        let id = f.id.clone().unwrap_or_else(|| format!("L{}", f.line));
        let source = match (&self.source, f.properties.get("source")) {
            (Some(s), _) => s.clone(),
            (None, Some(Value::String(s))) => match s.parse() {
                Ok(s) => s,
                Err(e) => return self.reject(f.line, Some(id), format!("{e}")),
            },
            (None, _) => return self.reject(f.line, Some(id), "no source"),
        };
        let height = match f.properties.get("height_m") {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_f64() {
                Some(h) if h >= 0.0 => Some(h),
                _ => return self.reject(f.line, Some(id), format!("invalid height_m {v}")),
            },
        };
        let admin = f.properties.get("admin_id").and_then(|v| id_string(Some(v)));
        let parts = match geometry_parts(f.geometry.as_ref()) {
            Ok(p) => p,
            Err(reason) => return self.reject(f.line, Some(id), reason),
        };
        let extras = Lod1Extras {
            uncertainty_m2: f.properties.get("uncertainty_m2").and_then(Value::as_f64),
            volume_m3: f.properties.get("volume_m3").and_then(Value::as_f64),
        };
        let multi = parts.len() > 1;
        for (k, p) in parts.into_iter().enumerate() {
            let pid = if multi { format!("{id}#{k}") } else { id.clone() };
            match GeoPolygon::from_polygon_repair(p) {
                Ok((g, validity)) => {
                    if validity == Validity::Repaired {
                        self.report.repaired.push(pid.clone());
                    }
                    let mut rec = FootprintRecord::new(pid, g, source.clone());
                    rec.height_m = height;
                    rec.admin_id = admin.clone();
                    self.report.accepted += 1;
                    self.queue.push_back((rec, extras));
                }
                Err(e) => self.reject(f.line, Some(pid), e.to_string()),
            }
        }
    }

    /// Drain the reader, returning all records and the final report.
    pub fn collect_all(mut self) -> Result<(Vec<FootprintRecord>, ReadReport)> {
        let mut out = Vec::new();
        for r in self.by_ref() {
            out.push(r?);
        }
        Ok((out, self.finish()))
    }

    fn finish(mut self) -> ReadReport {
        self.sync_malformed();
        self.report.rejected.sort_by(|a, b| a.line.cmp(&b.line).then_with(|| a.id.cmp(&b.id)));
        self.report
    }

    fn sync_malformed(&mut self) {
        for m in self.raw.malformed.drain(..) {
            self.report.features += 1;
            self.report.rejected.push(m);
        }
    }
}

impl FootprintReader {
    fn next_entry(&mut self) -> Option<Result<(FootprintRecord, Lod1Extras)>> {
        loop {
            if let Some(r) = self.queue.pop_front() {
                return Some(Ok(r));
            }
            match self.raw.next()? {
                Ok(f) => {
                    self.report.features += 1;
                    self.interpret(f);
                }
                Err(e) => return Some(Err(Error::io(&self.report.path, e))),
            }
        }
    }
}

impl Iterator for FootprintReader {
    type Item = Result<FootprintRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_entry().map(|r| r.map(|(rec, _)| rec))
    }
}

/// Read a whole footprint file. `source` overrides the per-feature
/// `source` property.
pub fn read_footprints(path: &Path, source: Option<Source>) -> Result<(Vec<FootprintRecord>, ReadReport)> {
    FootprintReader::open(path, source)?.collect_all()
}

/// LoD1 records as written by [`write_lod1`]. A missing volume is
/// recomputed from height and area.
pub fn read_lod1(path: &Path) -> Result<(Vec<Lod1Record>, ReadReport)> {
    let mut rdr = FootprintReader::open(path, None)?;
    let mut out = Vec::new();
    while let Some(e) = rdr.next_entry() {
        let (rec, x) = e?;
        let height_m = rec.height_m;
        let volume_m3 = x.volume_m3.or_else(|| height_m.map(|h| h * rec.geometry.area_m2()));
        out.push(Lod1Record { footprint: rec, height_m, uncertainty_m2: x.uncertainty_m2, volume_m3 });
    }
    Ok((out, rdr.finish()))
}

/// Administrative units: properties `admin_id` and `continent`; polygon
/// or multipolygon geometry.
pub fn read_admin_units(path: &Path) -> Result<(Vec<AdminUnit>, ReadReport)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = RawReader::new(Box::new(BufReader::new(f))).map_err(|e| Error::io(path, e))?;
    let mut report = ReadReport { path: path.to_path_buf(), ..Default::default() };
    let mut units = Vec::new();
    for f in raw.by_ref() {
        let f = f.map_err(|e| Error::io(path, e))?;
        report.features += 1;
        let id = id_string(f.properties.get("admin_id")).or(f.id.clone());
        let result = (|| -> std::result::Result<AdminUnit, String> {
            let id = id.clone().ok_or("no admin_id")?;
            let continent: Continent = f
                .properties
                .get("continent")
                .and_then(Value::as_str)
                .ok_or("no continent")?
                .parse()
                .map_err(|e: Error| e.to_string())?;
            let parts = geometry_parts(f.geometry.as_ref())?
                .into_iter()
                .map(|p| GeoPolygon::from_polygon_repair(p).map(|(g, _)| g).map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            AdminUnit::new(id, GeoMultiPolygon(parts), continent).map_err(|e| e.to_string())
        })();
        match result {
            Ok(u) => {
                report.accepted += 1;
                units.push(u);
            }
            Err(reason) => report.rejected.push(Rejection { line: f.line, id, reason }),
        }
    }
    for m in raw.malformed {
        report.features += 1;
        report.rejected.push(m);
    }
    report.rejected.sort_by_key(|r| r.line);
    units.sort_by(|a, b| a.admin_id.cmp(&b.admin_id));
    Ok((units, report))
}

// ---------------------------------------------------------------------------
// writing

fn ring_json(r: &LineString<f64>) -> Value {
    Value::Array(r.0.iter().map(|c| json!([c.x, c.y])).collect())
}

pub fn polygon_json(p: &Polygon<f64>) -> Value {
    let rings: Vec<Value> = std::iter::once(p.exterior()).chain(p.interiors()).map(ring_json).collect();
    json!({"type": "Polygon", "coordinates": rings})
}

fn num_or_null(v: Option<f64>) -> Value {
    v.filter(|x| x.is_finite()).map_or(Value::Null, |x| json!(x))
}

/// One feature as a single JSON line (without the newline). Property keys
/// come out sorted.
pub fn feature_line(id: &str, p: &Polygon<f64>, properties: Map<String, Value>) -> String {
    format!(
        "{{\"type\":\"Feature\",\"id\":{},\"geometry\":{},\"properties\":{}}}",
        Value::String(id.to_string()),
        polygon_json(p),
        Value::Object(properties)
    )
}

pub fn footprint_properties(r: &FootprintRecord) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("source".into(), json!(r.source.as_str()));
    if let Some(h) = r.height_m {
        m.insert("height_m".into(), num_or_null(Some(h)));
    }
    if let Some(a) = &r.admin_id {
        m.insert("admin_id".into(), json!(a));
    }
    m
}

pub fn lod1_properties(r: &Lod1Record) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("source".into(), json!(r.footprint.source.as_str()));
    m.insert("height_m".into(), num_or_null(r.height_m));
    m.insert("uncertainty_m2".into(), num_or_null(r.uncertainty_m2));
    m.insert("volume_m3".into(), num_or_null(r.volume_m3));
    if let Some(a) = &r.footprint.admin_id {
        m.insert("admin_id".into(), json!(a));
    }
    m
}

/// Write `(id, line)` pairs sorted by id; equal ids keep input order.
pub fn write_sorted_lines<W: Write>(mut w: W, mut lines: Vec<(String, String)>) -> std::io::Result<()> {
    lines.sort_by(|a, b| a.0.cmp(&b.0));
    for (_, l) in lines {
        w.write_all(l.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Footprints sorted by id, with `extra` properties merged into each.
pub fn write_footprints<W: Write>(w: W, records: &[FootprintRecord], extra: &Map<String, Value>) -> std::io::Result<()> {
    let lines = records
        .iter()
        .map(|r| {
            let mut props = footprint_properties(r);
            props.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
            (r.id.clone(), feature_line(&r.id, r.geometry.polygon(), props))
        })
        .collect();
    write_sorted_lines(w, lines)
}

pub fn write_lod1<W: Write>(w: W, records: &[Lod1Record]) -> std::io::Result<()> {
    let lines = records
        .iter()
        .map(|r| {
            let id = &r.footprint.id;
            (id.clone(), feature_line(id, r.footprint.geometry.polygon(), lod1_properties(r)))
        })
        .collect();
    write_sorted_lines(w, lines)
}

/// Create `path` and hand a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
