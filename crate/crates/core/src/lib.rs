pub mod analytics;
pub mod error;
pub mod fusion;
pub mod geom;
pub mod index;
pub mod io;
pub mod lod1;
pub mod metrics;
pub mod polygonize;
pub mod raster;
pub mod record;
pub mod synthetic;
pub mod tiling;

pub use error::{Error, Result};
