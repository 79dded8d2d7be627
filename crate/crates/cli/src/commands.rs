use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use ctsr_core::io::{self, Checkpoint};
use ctsr_core::metrics::{self, mtf_at, mtf_edge, EdgeAxis, Roi};
use ctsr_core::phantom::{generate, PhantomSpec};
use ctsr_core::resample::bin_det_pairs;
use ctsr_core::tomo::{fbp, forward_project};
use ctsr_core::train::{build_zsl_pair, reconstruct, ssim, train_with_progress, TrainConfig};
use ctsr_core::{Error, Geometry, Grid, Image, Sinogram};

use crate::args::{Cli, Command, EdgeArgs, GridArg, SinoArgs, Upscale};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Failure { code: EXIT_USAGE, kind: "usage", message }
    }

    fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, kind, message: message.into() }
    }

    /// One JSON object on one line.
    pub fn diagnostic(&self) -> String {
        let first = self.message.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
        serde_json::json!({ "error": self.kind, "code": self.code, "message": first }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Shape(_) => "shape",
            Error::InvalidInput(_) => "invalid_input",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::Version { .. } => "version",
            Error::Header { .. } => "header",
            Error::Io { .. } => "io",
            Error::NonFinite(_) => "non_finite",
            Error::Numeric { .. } => "numeric",
            Error::NoCrossing { .. } => "no_crossing",
        };
        let code = match &e {
            Error::NonFinite(_) | Error::Numeric { .. } | Error::NoCrossing { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Failure { code, kind, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input("io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input("json", format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::input("io", format!("{}: {e}", path.display())))
}

/// Geometry file contents: explicit angles, or evenly spaced views over a
/// half or full turn.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GeometryFile {
    Explicit(Geometry),
    Uniform {
        n_views: usize,
        n_det: usize,
        det_spacing: f64,
        #[serde(default)]
        det_center_offset: f64,
        #[serde(default)]
        full_turn: bool,
    },
}

fn load_geometry(path: &Path) -> CliResult<Geometry> {
    let g = match read_json::<GeometryFile>(path)? {
        GeometryFile::Explicit(g) => g,
        GeometryFile::Uniform { n_views, n_det, det_spacing, det_center_offset, full_turn } => {
            let span = if full_turn { 2.0 } else { 1.0 } * std::f64::consts::PI;
            let mut g = Geometry::uniform(n_views, span, n_det, det_spacing)?;
            g.det_center_offset = det_center_offset;
            g
        }
    };
    g.validate()?;
    Ok(g)
}

fn load_sino(args: &SinoArgs) -> CliResult<(Sinogram, Geometry)> {
    let (sino, stored) = io::load_sinogram(&args.sino)?;
    let geom = match &args.geom {
        Some(p) => load_geometry(p)?,
        None => stored.ok_or_else(|| {
            Failure::input("header", format!("{} carries no geometry; pass --geom", args.sino.display()))
        })?,
    };
    geom.check_sinogram(&sino)?;
    Ok((sino, geom))
}

fn grid(g: GridArg) -> CliResult<Grid> {
    Ok(Grid::new(g.n, g.pixel_size)?)
}

fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn roi_and_axis(edge: &EdgeArgs) -> Option<(Roi, EdgeAxis)> {
    edge.roi.map(|r| (r.0, edge.axis.into()))
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    rmse: f64,
    ssim: f64,
    mtf50: Option<f64>,
    mtf10: Option<f64>,
    runtime_seconds: Option<f64>,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Phantom { spec, out } => {
            let spec: PhantomSpec = read_json(&spec)?;
            io::save_image(&out, &generate(&spec)?)?;
        }
        Command::Project { img, geom, out } => {
            let img = io::load_image(&img)?;
            let geom = load_geometry(&geom)?;
            io::save_sinogram(&out, &forward_project(&img, &geom)?, Some(&geom))?;
        }
        Command::Fbp { sino, grid: g, out } => {
            let (y, geom) = load_sino(&sino)?;
            io::save_image(&out, &fbp(&y, &geom, grid(g)?)?)?;
        }
        Command::Bin { sino, out } => {
            let (y, geom) = load_sino(&sino)?;
            let lr = geom.lower_res()?;
            io::save_sinogram(&out, &bin_det_pairs(&y)?, Some(&lr))?;
        }
        Command::SimulateLr { sino, grid: g, config, out, xref_out } => {
            let (y, geom) = load_sino(&sino)?;
            let cfg = load_config(config.as_deref())?;
            let (y_l, x_ref) = build_zsl_pair(&y, &geom, grid(g)?, &cfg)?;
            io::save_sinogram(&out, &y_l, Some(&geom.lower_res()?))?;
            if let Some(p) = xref_out {
                io::save_image(&p, &x_ref)?;
            }
        }
        Command::Train { sino, grid: g, config, seed, epochs, losses, progress, out } => {
            let (y, geom) = load_sino(&sino)?;
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let grid = grid(g)?;
            let start = Instant::now();
            let outcome = train_with_progress(&y, &geom, grid, &cfg, |e, l| {
                if let Some(every) = progress.filter(|&n| n > 0) {
                    if e % every == 0 {
                        eprintln!("epoch={e} loss={l:.10e}");
                    }
                }
            })?;
            let seconds = start.elapsed().as_secs_f64();
            if let Some(p) = losses {
                let mut text = String::from("epoch,loss\n");
                for (e, l) in outcome.losses.iter().enumerate() {
                    text.push_str(&format!("{e},{l:.16e}\n"));
                }
                write_text(&p, &text)?;
            }
            let summary = serde_json::json!({
                "epochs": cfg.epochs,
                "initial_loss": outcome.losses.first(),
                "final_loss": outcome.losses.last(),
                "seconds": seconds,
            });
            println!("{summary}");
            let ck = Checkpoint { config: cfg, grid, params: outcome.params, losses: outcome.losses };
            io::save_checkpoint(&out, &ck)?;
        }
        Command::Reconstruct { sino, ckpt, out } => {
            let (y, geom) = load_sino(&sino)?;
            let ck = io::load_checkpoint(&ckpt)?;
            io::save_image(&out, &reconstruct(&y, &ck.params, &geom, ck.grid.doubled())?)?;
        }
        Command::Eval { test, reference, report, edge, config, runtime_seconds } => {
            let a = io::load_image(&test)?;
            let b = io::load_image(&reference)?;
            let cfg = load_config(config.as_deref())?;
            let (mut mtf50, mut mtf10) = (None, None);
            if let Some((roi, axis)) = roi_and_axis(&edge) {
                let curve = mtf_edge(&a, roi, axis)?;
                mtf50 = mtf_at(&curve, 0.5).ok();
                mtf10 = mtf_at(&curve, 0.1).ok();
            }
            let r = MetricsReport {
                rmse: metrics::rmse(&a, &b)?,
                ssim: ssim(&a, &b, &cfg)?,
                mtf50,
                mtf10,
                runtime_seconds,
            };
            let mut text = serde_json::to_string_pretty(&r).expect("report serializes");
            text.push('\n');
            write_text(&report, &text)?;
        }
        Command::Mtf { img, edge, report } => {
            let img = io::load_image(&img)?;
            let (roi, axis) = roi_and_axis(&edge).ok_or_else(|| Failure::usage("mtf requires --roi".into()))?;
            let curve = mtf_edge(&img, roi, axis)?;
            let mut buf = Vec::new();
            curve.write_csv(&mut buf).expect("write to vec");
            let f = fs::File::create(&report).map_err(|e| Failure::input("io", format!("{}: {e}", report.display())));
            f?.write_all(&buf).map_err(|e| Failure::input("io", format!("{}: {e}", report.display())))?;
        }
        Command::BaselineBicubic { sino, grid: g, method, out } => {
            let (y, geom) = load_sino(&sino)?;
            let lr = fbp(&y, &geom, grid(g)?)?;
            let up: Image = match method {
                Upscale::Bicubic => metrics::bicubic_upscale2(&lr),
                Upscale::Nearest => metrics::nearest_upscale2(&lr),
            };
            io::save_image(&out, &up)?;
        }
        Command::ExportPgm { img, window, out } => {
            let img = io::load_image(&img)?;
            io::export_pgm16(&img, window.lo, window.hi, &out)?;
        }
    }
    Ok(())
}
