//! File formats: features, rasters, tables and configuration.

pub mod config;
pub mod features;
pub mod geotiff;
pub mod tables;
