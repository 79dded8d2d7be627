use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctsr_core::metrics::{EdgeAxis, Roi};

#[derive(Debug, Parser)]
#[command(name = "ctsr", version, about = "Zero-shot CT super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a phantom from a JSON spec.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-project an image.
    Project {
        #[arg(long)]
        img: PathBuf,
        /// Geometry JSON: either explicit `angles` or `n_views` with an
        /// optional `full_turn` flag.
        #[arg(long)]
        geom: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered back-projection onto a square grid.
    Fbp {
        #[command(flatten)]
        sino: SinoArgs,
        #[arg(long)]
        grid: GridArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average adjacent detector pairs, halving the detector resolution.
    Bin {
        #[command(flatten)]
        sino: SinoArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize the low-resolution training input from a sinogram.
    SimulateLr {
        #[command(flatten)]
        sino: SinoArgs,
        #[arg(long)]
        grid: GridArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training target image.
        #[arg(long)]
        xref_out: Option<PathBuf>,
    },
    /// Fit the network to a single sinogram.
    Train {
        #[command(flatten)]
        sino: SinoArgs,
        /// Training grid; the reconstruction has twice its pixels per side.
        #[arg(long)]
        grid: GridArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the loss history as CSV.
        #[arg(long)]
        losses: Option<PathBuf>,
        /// Print the loss every N epochs.
        #[arg(long, value_name = "N")]
        progress: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a sinogram at twice the training resolution.
    Reconstruct {
        #[command(flatten)]
        sino: SinoArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an image against a reference and write metrics.json.
    Eval {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        edge: EdgeArgs,
        /// Config supplying the SSIM window and constants.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Value stored as `runtime_seconds`; null when absent.
        #[arg(long)]
        runtime_seconds: Option<f64>,
    },
    /// Edge-method MTF of an image, written as CSV.
    Mtf {
        #[arg(long)]
        img: PathBuf,
        #[command(flatten)]
        edge: EdgeArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// FBP at the acquired resolution followed by 2x interpolation.
    BaselineBicubic {
        #[command(flatten)]
        sino: SinoArgs,
        /// Grid of the low-resolution reconstruction.
        #[arg(long)]
        grid: GridArg,
        #[arg(long, value_enum, default_value_t = Upscale::Bicubic)]
        method: Upscale,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export an image as 16-bit PGM through a display window.
    ExportPgm {
        #[arg(long)]
        img: PathBuf,
        /// `LO,HI` in mm⁻¹.
        #[arg(long)]
        window: WindowArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SinoArgs {
    #[arg(long)]
    pub sino: PathBuf,
    /// Geometry JSON; defaults to the geometry stored with the sinogram.
    #[arg(long)]
    pub geom: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EdgeArgs {
    /// `ROW,COL,ROWS,COLS` around a straight edge.
    #[arg(long)]
    pub roi: Option<RoiArg>,
    #[arg(long, value_enum, default_value_t = Axis::Vertical)]
    pub axis: Axis,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Axis {
    Vertical,
    Horizontal,
}

impl From<Axis> for EdgeAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Vertical => EdgeAxis::Vertical,
            Axis::Horizontal => EdgeAxis::Horizontal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Upscale {
    Bicubic,
    Nearest,
}

fn split_numbers<T: FromStr>(s: &str, count: usize, what: &str) -> Result<Vec<T>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != count {
        return Err(format!("{what}: expected {count} comma-separated values"));
    }
    parts
        .iter()
        .map(|p| p.parse().map_err(|_| format!("{what}: cannot parse {p:?}")))
        .collect()
}

/// `N,PIXEL_SIZE`
#[derive(Debug, Clone, Copy)]
pub struct GridArg {
    pub n: usize,
    pub pixel_size: f64,
}

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (n, ps) = s.split_once(',').ok_or("grid: expected N,PIXEL_SIZE")?;
        Ok(GridArg {
            n: n.trim().parse().map_err(|_| format!("grid: bad side {n:?}"))?,
            pixel_size: ps.trim().parse().map_err(|_| format!("grid: bad pixel size {ps:?}"))?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RoiArg(pub Roi);

impl FromStr for RoiArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = split_numbers(s, 4, "roi")?;
        Ok(RoiArg(Roi { row: v[0], col: v[1], rows: v[2], cols: v[3] }))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WindowArg {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = split_numbers(s, 2, "window")?;
        Ok(WindowArg { lo: v[0], hi: v[1] })
    }
}
