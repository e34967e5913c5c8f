//! Command-line surface of the toolkit. `main.rs` only forwards to [`run`].

pub mod analyze;
pub mod cli;
pub mod commands;
pub mod stages;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::Parser;
use gba_core::io::config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Output directory used when `--out` is absent.
pub const DEFAULT_OUT: &str = "gba_out";

/// Why a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Io(_) => EXIT_IO,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Failure::Validation(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "validation error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<gba_core::Error> for Failure {
    fn from(e: gba_core::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Shared state of one invocation.
pub struct Ctx {
    pub global: cli::GlobalArgs,
    pub config: PipelineConfig,
    pub config_loaded: bool,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(global: cli::GlobalArgs) -> CliResult<Self> {
        let (config, config_loaded) = match &global.config {
            Some(p) => (PipelineConfig::load(p)?, true),
            None => (PipelineConfig::default(), false),
        };
        let out = global.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Ctx { global, config, config_loaded, out })
    }

    /// The output directory, created on first use.
    pub fn out_dir(&self) -> CliResult<&PathBuf> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Io(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = parsed.global.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start {threads} worker threads: {e}");
            return EXIT_VALIDATION;
        }
    };
    let result = pool.install(|| {
        let ctx = Ctx::new(parsed.global)?;
        commands::dispatch(&ctx, parsed.command)
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
