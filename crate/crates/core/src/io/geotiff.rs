//! Georeferenced TIFF rasters: pixel scale, tie point, a minimal GeoKey
//! directory and the GDAL nodata tag. The raster semantic travels in the
//! image description.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;
use std::str::FromStr;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::colortype::{
    ColorType, Gray16, Gray32Float, Gray64Float, Gray8, GrayI16, GrayI32,
};
use tiff::encoder::TiffEncoder;
use tiff::tags::{ExtraSamples, Tag};
use tiff::TiffError;

use crate::error::{Error, Result};
use crate::raster::{GridSpec, RasterGrid, Semantic, Units};

pub const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
pub const TAG_MODEL_TIEPOINT: u16 = 33922;
pub const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
pub const TAG_GDAL_NODATA: u16 = 42113;

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_TYPE: u16 = 3072;
const MODEL_PROJECTED: u16 = 1;
const MODEL_GEOGRAPHIC: u16 = 2;
const RASTER_PIXEL_IS_AREA: u16 = 1;
const EPSG_WGS84: u16 = 4326;
const USER_DEFINED: u16 = 32767;

/// On-disk sample type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    U8,
    U16,
    I16,
    I32,
    F32,
    F64,
}

impl SampleType {
    /// Sensible default per semantic.
    pub fn for_semantic(s: Semantic) -> SampleType {
        match s {
            Semantic::BinaryMask | Semantic::LandCoverClass => SampleType::U8,
            Semantic::Reflectance => SampleType::U16,
            Semantic::Probability | Semantic::HeightMeters | Semantic::VarianceM2 => {
                SampleType::F32
            }
            Semantic::VolumeM3 => SampleType::F64,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, SampleType::F32 | SampleType::F64)
    }

    fn range(self) -> (f64, f64) {
        match self {
            SampleType::U8 => (0.0, u8::MAX as f64),
            SampleType::U16 => (0.0, u16::MAX as f64),
            SampleType::I16 => (i16::MIN as f64, i16::MAX as f64),
            SampleType::I32 => (i32::MIN as f64, i32::MAX as f64),
            SampleType::F32 => (f32::MIN as f64, f32::MAX as f64),
            SampleType::F64 => (f64::MIN, f64::MAX),
        }
    }
}

fn tiff_err(path: &Path, e: TiffError) -> Error {
    match e {
        TiffError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn geo_keys(units: Units) -> Vec<u16> {
    let (model, crs_key, crs) = match units {
        Units::Degrees => (MODEL_GEOGRAPHIC, KEY_GEOGRAPHIC_TYPE, EPSG_WGS84),
        Units::Meters => (MODEL_PROJECTED, KEY_PROJECTED_TYPE, USER_DEFINED),
    };
    vec![
        1, 1, 0, 3, //
        KEY_MODEL_TYPE, 0, 1, model, //
        KEY_RASTER_TYPE, 0, 1, RASTER_PIXEL_IS_AREA, //
        crs_key, 0, 1, crs,
    ]
}

fn check_samples(bands: &[&RasterGrid], ty: SampleType) -> Result<()> {
    let (lo, hi) = ty.range();
    for b in bands {
        for &v in b.values.iter().chain(b.nodata.iter()) {
            if v.is_nan() {
                if ty.is_integer() {
                    return Err(Error::InvalidParameter(format!(
                        "NaN cannot be stored as {ty:?}"
                    )));
                }
                continue;
            }
            if ty.is_integer() && (v.fract() != 0.0 || v < lo || v > hi) {
                return Err(Error::InvalidParameter(format!(
                    "value {v} does not fit {ty:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Pixel-interleaved samples converted to the on-disk type.
fn interleave<T>(bands: &[&RasterGrid], conv: impl Fn(f64) -> T) -> Vec<T> {
    let n = bands[0].values.len();
    let mut out = Vec::with_capacity(n * bands.len());
    for i in 0..n {
        for b in bands {
            out.push(conv(b.values[i]));
        }
    }
    out
}

fn encode<W, C>(
    enc: &mut TiffEncoder<W>,
    bands: &[&RasterGrid],
    data: &[C::Inner],
) -> std::result::Result<(), TiffError>
where
    W: Write + Seek,
    C: ColorType,
    [C::Inner]: tiff::encoder::TiffValue,
{
    let spec = bands[0].spec;
    let mut img = enc.new_image::<C>(spec.width as u32, spec.height as u32)?;
    if bands.len() > 1 {
        img.extra_samples(&vec![ExtraSamples::Unspecified; bands.len() - 1])?;
    }
    let d = img.encoder();
    d.write_tag(
        Tag::Unknown(TAG_MODEL_PIXEL_SCALE),
        &[spec.pixel_size.0, spec.pixel_size.1, 0.0][..],
    )?;
    d.write_tag(
        Tag::Unknown(TAG_MODEL_TIEPOINT),
        &[0.0, 0.0, 0.0, spec.origin.0, spec.origin.1, 0.0][..],
    )?;
    d.write_tag(Tag::Unknown(TAG_GEO_KEY_DIRECTORY), &geo_keys(spec.units)[..])?;
    d.write_tag(Tag::ImageDescription, bands[0].semantic.as_str())?;
    if let Some(nd) = bands[0].nodata {
        d.write_tag(Tag::Unknown(TAG_GDAL_NODATA), format_nodata(nd).as_str())?;
    }
    img.write_data(data)
}

fn format_nodata(nd: f64) -> String {
    if nd.is_nan() {
        "nan".to_string()
    } else {
        // Shortest representation that parses back to the same f64.
        format!("{nd}")
    }
}

/// Write bands sharing one grid into a single pixel-interleaved image.
pub fn write_raster_bands_to<W: Write + Seek>(
    w: W,
    bands: &[&RasterGrid],
    ty: SampleType,
) -> Result<()> {
    let Some(first) = bands.first() else {
        return Err(Error::InvalidParameter("no bands to write".into()));
    };
    if bands.iter().any(|b| !b.same_geometry(first)) {
        return Err(Error::GridMismatch);
    }
    check_samples(bands, ty)?;
    let path = Path::new("<raster>");
    let mut enc = TiffEncoder::new(w).map_err(|e| tiff_err(path, e))?;
    let res = match ty {
        SampleType::U8 => encode::<_, Gray8>(&mut enc, bands, &interleave(bands, |v| v as u8)),
        SampleType::U16 => encode::<_, Gray16>(&mut enc, bands, &interleave(bands, |v| v as u16)),
        SampleType::I16 => encode::<_, GrayI16>(&mut enc, bands, &interleave(bands, |v| v as i16)),
        SampleType::I32 => encode::<_, GrayI32>(&mut enc, bands, &interleave(bands, |v| v as i32)),
        SampleType::F32 => {
            encode::<_, Gray32Float>(&mut enc, bands, &interleave(bands, |v| v as f32))
        }
        SampleType::F64 => encode::<_, Gray64Float>(&mut enc, bands, &interleave(bands, |v| v)),
    };
    res.map_err(|e| tiff_err(path, e))
}

pub fn write_raster_bands(path: &Path, bands: &[&RasterGrid], ty: SampleType) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_raster_bands_to(&mut w, bands, ty).map_err(|e| relabel(e, path))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_raster(path: &Path, grid: &RasterGrid, ty: SampleType) -> Result<()> {
    write_raster_bands(path, &[grid], ty)
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { message, .. } => Error::format(path, message),
        other => other,
    }
}

fn to_f64(d: DecodingResult) -> std::result::Result<Vec<f64>, String> {
    Ok(match d {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        other => return Err(format!("unsupported sample type {:?}", std::mem::discriminant(&other))),
    })
}

/// Read every band of the first image. The semantic comes from the image
/// description unless `semantic` overrides it; files without one default
/// to reflectance.
pub fn read_raster_bands_from<R: Read + Seek>(
    r: R,
    path: &Path,
    semantic: Option<Semantic>,
) -> Result<Vec<RasterGrid>> {
    let mut dec = Decoder::new(r)
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
    let missing = |what: &str| Error::format(path, format!("missing georeference: {what}"));
    let scale = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_PIXEL_SCALE))
        .map_err(|_| missing("pixel scale"))?;
    let tie = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_TIEPOINT))
        .map_err(|_| missing("tie point"))?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(missing("short georeference tags"));
    }
    let units = match dec.get_tag_u16_vec(Tag::Unknown(TAG_GEO_KEY_DIRECTORY)) {
        Ok(keys) => model_units(&keys),
        Err(_) => Units::Degrees,
    };
    let origin = (tie[3] - tie[0] * scale[0], tie[4] + tie[1] * scale[1]);
    let spec = GridSpec::new(origin, (scale[0], scale[1]), w as usize, h as usize, units)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let nodata = match dec.get_tag_ascii_string(Tag::Unknown(TAG_GDAL_NODATA)) {
        Ok(s) => {
            let s = s.trim_matches(|c: char| c == '\0' || c.is_whitespace());
            Some(
                f64::from_str(s)
                    .map_err(|_| Error::format(path, format!("bad nodata value {s:?}")))?,
            )
        }
        Err(_) => None,
    };
    let semantic = match semantic {
        Some(s) => s,
        None => dec
            .get_tag_ascii_string(Tag::ImageDescription)
            .ok()
            .and_then(|s| Semantic::from_str(s.trim_end_matches('\0')).ok())
            .unwrap_or(Semantic::Reflectance),
    };
    let data = dec.read_image().map_err(|e| tiff_err(path, e))?;
    let values = to_f64(data).map_err(|m| Error::format(path, m))?;
    let n = spec.len();
    if n == 0 || values.len() % n != 0 {
        return Err(Error::format(path, "sample count does not match dimensions"));
    }
    let bands = values.len() / n;
    (0..bands)
        .map(|b| {
            let v: Vec<f64> = (0..n).map(|i| values[i * bands + b]).collect();
            RasterGrid::new(spec, v, nodata, semantic).map_err(|e| Error::format(path, e.to_string()))
        })
        .collect()
}

fn model_units(keys: &[u16]) -> Units {
    let n = keys.get(3).copied().unwrap_or(0) as usize;
    for k in 0..n {
        let e = &keys[4 + 4 * k..];
        if e.len() >= 4 && e[0] == KEY_MODEL_TYPE && e[1] == 0 {
            return if e[3] == MODEL_PROJECTED {
                Units::Meters
            } else {
                Units::Degrees
            };
        }
    }
    Units::Degrees
}

pub fn read_raster_bands(path: &Path, semantic: Option<Semantic>) -> Result<Vec<RasterGrid>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_raster_bands_from(BufReader::new(f), path, semantic)
}

/// First band of a raster file.
pub fn read_raster(path: &Path) -> Result<RasterGrid> {
    read_raster_as(path, None)
}

pub fn read_raster_as(path: &Path, semantic: Option<Semantic>) -> Result<RasterGrid> {
    let mut bands = read_raster_bands(path, semantic)?;
    Ok(bands.swap_remove(0))
}
