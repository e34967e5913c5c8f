use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gba_core::tiling::TileId;

#[derive(Debug, Parser)]
#[command(name = "gba", version, about = "Building footprint, height and LoD1 toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Restrict work to one 0.2 degree tile, given as `ix,iy`.
    #[arg(long, global = true, value_name = "IX,IY")]
    pub tile: Option<TileId>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "GBA_THREADS", value_name = "N")]
    pub threads: Option<usize>,
    /// Seed for randomized steps.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cloud/year scene filtering and priority mosaicking.
    Mosaic(MosaicArgs),
    /// Probability raster to filtered building polygons.
    Polygonize(PolygonizeArgs),
    /// Quality-guided fusion of footprint sources per admin unit.
    Fuse(FuseArgs),
    /// Height assignment and LoD1 records.
    Lod1(Lod1Args),
    /// Compare predicted buildings against a reference.
    Eval(EvalArgs),
    /// Statistical analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run every stage configured in `--config`.
    Pipeline,
    /// Write the synthetic fixture city.
    Fixture,
}

#[derive(Debug, Args)]
pub struct MosaicArgs {
    /// Scene table with scene_id, cloud_fraction, year, path, mask_path.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Raster whose grid is the mosaic target; defaults to the first scene's.
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolygonizeArgs {
    #[arg(long)]
    pub prob: Option<PathBuf>,
    /// Built-up mask for false-positive filtering.
    #[arg(long)]
    pub landcover: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub dilation_m: Option<f64>,
    #[arg(long)]
    pub tolerance_m: Option<f64>,
    #[arg(long)]
    pub min_area_m2: Option<f64>,
    /// Skip the morphological clean-up of the thresholded mask.
    #[arg(long)]
    pub no_regularize: bool,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Footprint file for a source, as `LABEL=PATH`; repeatable.
    #[arg(long = "source", value_name = "LABEL=PATH")]
    pub sources: Vec<String>,
    /// Admin units with admin_id and continent properties.
    #[arg(long)]
    pub admin: Option<PathBuf>,
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Lod1Args {
    /// Fused footprints.
    #[arg(long)]
    pub footprints: PathBuf,
    /// Height prediction layer; repeat for up to four shifted windows.
    #[arg(long = "height")]
    pub heights: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference buildings; defaults to the configured ground truth.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub city: Option<String>,
    #[arg(long, default_value = "pred")]
    pub product: String,
    #[arg(long)]
    pub iou_resolution_m: Option<f64>,
    #[arg(long)]
    pub volume_cell_m: Option<f64>,
    /// Area-ranked all-point AP instead of the single operating point.
    #[arg(long)]
    pub area_ranked_ap: bool,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Extrapolate a global building count from continental N-ratios.
    GlobalCount {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        ratios: PathBuf,
        /// Global average ratio; overrides the GLOBAL row of the ratio table.
        #[arg(long)]
        global_avg: Option<f64>,
    },
    /// Log-log regression between two columns of a table.
    Regression {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long, default_value = "region_id")]
        key: String,
    },
    /// Volume and area per capita by region.
    PerCapita {
        #[arg(long)]
        lod1: PathBuf,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        year: Option<i32>,
    },
    /// Pairwise ranking agreement of one or two indicators with a reference.
    Ranking {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        indicator: String,
        #[arg(long)]
        indicator2: Option<String>,
        #[arg(long)]
        reference: String,
        #[arg(long, default_value = "region_id")]
        key: String,
    },
    /// Sum LoD1 volumes on a square metric grid.
    GridVolume {
        #[arg(long)]
        lod1: PathBuf,
        #[arg(long)]
        cell_m: Option<f64>,
    },
    /// Count, area and volume per admin unit, with optional attributes.
    VolumeByCountry {
        #[arg(long)]
        lod1: PathBuf,
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long)]
        gdp: Option<PathBuf>,
        #[arg(long)]
        year: Option<i32>,
        /// Table with region_id and continent for continental totals.
        #[arg(long)]
        continents: Option<PathBuf>,
    },
    /// Per-continent totals of a fusion contribution table.
    Contributions {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        continents: PathBuf,
    },
}
