//! Synthetic phantoms rendered with 4x4 supersampling per pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Roi;
use crate::types::{Grid, Image};

/// Linear attenuation of water used to anchor phantom grey levels (mm⁻¹).
pub const WATER: f64 = 0.0205;
pub const MAX_VALUE: f64 = 0.1;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n: usize,
    pub pixel_size: f64,
    #[serde(flatten)]
    pub kind: PhantomKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLogan,
    /// Groups of vertical bars inside a water disk, with an optional
    /// high-contrast block whose left side is a vertical edge.
    BarPattern {
        /// Line pairs per mm, one group each.
        frequencies: Vec<f64>,
        #[serde(default = "default_bar_value")]
        bar_value: f64,
        #[serde(default = "default_background")]
        background: f64,
        #[serde(default = "default_edge_value")]
        edge_value: Option<f64>,
    },
    Edge {
        /// Rotation of the edge line away from vertical.
        #[serde(default)]
        angle_deg: f64,
        low: f64,
        high: f64,
    },
    Disk {
        /// `[x, y]` in mm from the image centre.
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
        mu: f64,
        #[serde(default)]
        background: f64,
    },
}

fn default_bar_value() -> f64 {
    0.04
}

fn default_background() -> f64 {
    WATER
}

fn default_edge_value() -> Option<f64> {
    Some(0.05)
}

// (x0, y0, a, b, rotation in degrees, additive value) in units of the half FOV.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [0.0, 0.0, 0.69, 0.92, 0.0, 2.0],
    [0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98],
    [0.22, 0.0, 0.11, 0.31, -18.0, -0.02],
    [-0.22, 0.0, 0.16, 0.41, 18.0, -0.02],
    [0.0, 0.35, 0.21, 0.25, 0.0, 0.01],
    [0.0, 0.1, 0.046, 0.046, 0.0, 0.01],
    [0.0, -0.1, 0.046, 0.046, 0.0, 0.01],
    [-0.08, -0.605, 0.046, 0.023, 0.0, 0.01],
    [0.0, -0.606, 0.023, 0.023, 0.0, 0.01],
    [0.06, -0.605, 0.023, 0.046, 0.0, 0.01],
];
// Soft tissue in the classic table is 2 - 0.98.
const SHEPP_LOGAN_SCALE: f64 = WATER / 1.02;

const BODY_RADIUS: f64 = 0.92;
const CELL: f64 = 0.36;
const CELL_PITCH_X: f64 = 0.42;
const CELL_PITCH_Y: f64 = 0.43;
const FIRST_ROW_Y: f64 = 0.45;
// Edge block in half-FOV units: x from EDGE_X0 to EDGE_X1, y from EDGE_Y0 to EDGE_Y1.
const EDGE_X0: f64 = 0.0;
const EDGE_X1: f64 = 0.5;
const EDGE_Y0: f64 = -0.75;
const EDGE_Y1: f64 = -0.35;

fn in_range(v: f64, what: &str) -> Result<()> {
    if !(0.0..=MAX_VALUE).contains(&v) {
        return Err(Error::invalid(format!("{what} = {v} outside [0, {MAX_VALUE}]")));
    }
    Ok(())
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.pixel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return Err(Error::invalid(format!("phantom side {} < 16", self.n)));
        }
        self.grid()?;
        match &self.kind {
            PhantomKind::SheppLogan => {}
            PhantomKind::BarPattern { frequencies, bar_value, background, edge_value } => {
                if frequencies.len() < 4 || frequencies.len() > 6 {
                    return Err(Error::invalid("bar pattern needs 4 to 6 groups"));
                }
                let nyquist = 0.5 / self.pixel_size;
                let cell = CELL * self.half_fov();
                for &f in frequencies {
                    if !(f > 0.0) || f > nyquist {
                        return Err(Error::invalid(format!("bar frequency {f} lp/mm outside (0, {nyquist}]")));
                    }
                    if 1.0 / f > cell {
                        return Err(Error::invalid(format!("bar frequency {f} lp/mm too low for a {cell} mm group")));
                    }
                }
                in_range(*bar_value, "bar_value")?;
                in_range(*background, "background")?;
                if let Some(e) = edge_value {
                    in_range(*e, "edge_value")?;
                }
            }
            PhantomKind::Edge { low, high, angle_deg } => {
                in_range(*low, "low")?;
                in_range(*high, "high")?;
                if !angle_deg.is_finite() {
                    return Err(Error::invalid("edge angle must be finite"));
                }
            }
            PhantomKind::Disk { center, radius, mu, background } => {
                in_range(*mu, "mu")?;
                in_range(*background, "background")?;
                if !(*radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::invalid("disk needs a positive radius and finite centre"));
                }
            }
        }
        Ok(())
    }

    fn half_fov(&self) -> f64 {
        self.n as f64 * self.pixel_size / 2.0
    }

    /// Pixel ROI straddling the vertical edge of an edge or bar-pattern
    /// phantom, suitable for edge-method MTF.
    pub fn edge_roi(&self) -> Option<Roi> {
        let half = self.half_fov();
        let (x0, x1, y0, y1) = match &self.kind {
            PhantomKind::BarPattern { edge_value: Some(_), .. } => {
                let w = 0.5 * (EDGE_X1 - EDGE_X0);
                (EDGE_X0 - w, EDGE_X0 + w, EDGE_Y0 + 0.05, EDGE_Y1 - 0.05)
            }
            PhantomKind::Edge { angle_deg, .. } if *angle_deg == 0.0 => (-0.5, 0.5, -0.5, 0.5),
            _ => return None,
        };
        let c = (self.n as f64 - 1.0) / 2.0;
        let col = |x: f64| (x * half / self.pixel_size + c).round() as usize;
        let row = |y: f64| (c - y * half / self.pixel_size).round() as usize;
        let (c0, c1) = (col(x0), col(x1));
        let (r0, r1) = (row(y1), row(y0));
        Some(Roi { row: r0, col: c0, rows: r1 - r0 + 1, cols: c1 - c0 + 1 })
    }

    fn value_at(&self, x: f64, y: f64) -> f64 {
        let half = self.half_fov();
        match &self.kind {
            PhantomKind::SheppLogan => {
                let (u, v) = (x / half, y / half);
                let mut acc = 0.0;
                for [x0, y0, a, b, deg, val] in SHEPP_LOGAN {
                    let (s, c) = deg.to_radians().sin_cos();
                    let (dx, dy) = (u - x0, v - y0);
                    let (p, q) = (dx * c + dy * s, -dx * s + dy * c);
                    if (p / a).powi(2) + (q / b).powi(2) <= 1.0 {
                        acc += val;
                    }
                }
                acc * SHEPP_LOGAN_SCALE
            }
            PhantomKind::BarPattern { frequencies, bar_value, background, edge_value } => {
                let (u, v) = (x / half, y / half);
                if u * u + v * v > BODY_RADIUS * BODY_RADIUS {
                    return 0.0;
                }
                if let Some(e) = edge_value {
                    if (EDGE_X0..EDGE_X1).contains(&u) && (EDGE_Y0..EDGE_Y1).contains(&v) {
                        return *e;
                    }
                }
                for (g, &f) in frequencies.iter().enumerate() {
                    let cx = (g % 3) as f64 - 1.0;
                    let cy = FIRST_ROW_Y - (g / 3) as f64 * CELL_PITCH_Y;
                    let left = (cx * CELL_PITCH_X - CELL / 2.0) * half;
                    let bottom = (cy - CELL / 2.0) * half;
                    let (lx, ly) = (x - left, y - bottom);
                    let side = CELL * half;
                    if ly < 0.0 || ly >= side || lx < 0.0 {
                        continue;
                    }
                    let period = 1.0 / f;
                    let n_bars = ((side + period / 2.0) / period).floor();
                    let k = (lx / period).floor();
                    if k < n_bars && lx - k * period < period / 2.0 {
                        return *bar_value;
                    }
                }
                *background
            }
            PhantomKind::Edge { angle_deg, low, high } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                if x * c + y * s >= 0.0 {
                    *high
                } else {
                    *low
                }
            }
            PhantomKind::Disk { center, radius, mu, background } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                if dx * dx + dy * dy <= radius * radius {
                    *mu
                } else {
                    *background
                }
            }
        }
    }
}

/// Renders the phantom; each pixel is the mean of a 4x4 sub-sample lattice.
pub fn generate(spec: &PhantomSpec) -> Result<Image> {
    spec.validate()?;
    let grid = spec.grid()?;
    let (n, ps) = (spec.n, spec.pixel_size);
    let c = (n as f64 - 1.0) / 2.0;
    let offsets: Vec<f64> = (0..SUPERSAMPLE)
        .map(|k| ((k as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5) * ps)
        .collect();
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut img = Image::zeros(grid);
    for i in 0..n {
        for j in 0..n {
            let (xc, yc) = ((j as f64 - c) * ps, (c - i as f64) * ps);
            let first = spec.value_at(xc + offsets[0], yc - offsets[0]);
            let mut acc = 0.0;
            let mut uniform = true;
            for dy in &offsets {
                for dx in &offsets {
                    let v = spec.value_at(xc + dx, yc - dy);
                    uniform &= v == first;
                    acc += v;
                }
            }
            img.set(i, j, if uniform { first } else { acc / norm });
        }
    }
    Ok(img)
}
