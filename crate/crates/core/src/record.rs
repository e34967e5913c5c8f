use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::GeoPolygon;

/// Provenance of a building footprint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Osm,
    OpenBuildings,
    Microsoft,
    Clsm,
    PsrDerived,
    Other(String),
}

impl Source {
    /// Fixed preference order used for fallbacks and tie-breaking.
    pub const FIXED_ORDER: [Source; 5] = [
        Source::Osm,
        Source::OpenBuildings,
        Source::Microsoft,
        Source::Clsm,
        Source::PsrDerived,
    ];

    /// Position in [`Source::FIXED_ORDER`]; labelled sources sort last.
    pub fn rank(&self) -> usize {
        match self {
            Source::Osm => 0,
            Source::OpenBuildings => 1,
            Source::Microsoft => 2,
            Source::Clsm => 3,
            Source::PsrDerived => 4,
            Source::Other(_) => 5,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Source::Osm => "OSM",
            Source::OpenBuildings => "OpenBuildings",
            Source::Microsoft => "Microsoft",
            Source::Clsm => "CLSM",
            Source::PsrDerived => "PSRDerived",
            Source::Other(label) => label,
        }
    }

    /// Comparison key following the fixed order.
    pub fn order_key(&self) -> (usize, &str) {
        (self.rank(), self.as_str())
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "osm" | "openstreetmap" => Source::Osm,
            "openbuildings" | "google" => Source::OpenBuildings,
            "microsoft" | "ms" => Source::Microsoft,
            "clsm" => Source::Clsm,
            "psrderived" | "psr" => Source::PsrDerived,
            "" => return Err(Error::InvalidParameter("empty source label".into())),
            _ => Source::Other(s.to_string()),
        })
    }
}

/// One building polygon with provenance and optional attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintRecord {
    pub id: String,
    pub geometry: GeoPolygon,
    pub source: Source,
    pub height_m: Option<f64>,
    pub admin_id: Option<String>,
}

impl FootprintRecord {
    pub fn new(id: impl Into<String>, geometry: GeoPolygon, source: Source) -> Self {
        FootprintRecord {
            id: id.into(),
            geometry,
            source,
            height_m: None,
            admin_id: None,
        }
    }

    pub fn with_height(mut self, h: f64) -> Result<Self> {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("height {h} must be >= 0")));
        }
        self.height_m = Some(h);
        Ok(self)
    }

    pub fn with_admin(mut self, admin_id: impl Into<String>) -> Self {
        self.admin_id = Some(admin_id.into());
        self
    }
}
