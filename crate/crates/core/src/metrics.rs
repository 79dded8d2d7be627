//! Image-quality metrics: RMSE, edge-method MTF, and the interpolation
//! baselines the network is compared against.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Image;

pub use crate::train::ssim;

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.data.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtfCurve {
    /// Cycles per mm, from 0 up to Nyquist.
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
}

impl MtfCurve {
    /// Writes `frequency,value` lines with 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "frequency,mtf")?;
        for (f, v) in self.frequencies.iter().zip(&self.values) {
            writeln!(w, "{f:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        *self.frequencies.last().unwrap_or(&0.0)
    }

    /// Linear interpolation of the curve at `f`.
    pub fn value_at(&self, f: f64) -> f64 {
        let fr = &self.frequencies;
        match fr.iter().position(|&x| x >= f) {
            Some(0) => self.values[0],
            Some(i) => {
                let t = (f - fr[i - 1]) / (fr[i] - fr[i - 1]);
                self.values[i - 1] + t * (self.values[i] - self.values[i - 1])
            }
            None => *self.values.last().unwrap_or(&0.0),
        }
    }
}

/// Rectangular region of interest in pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Orientation of the edge inside the ROI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeAxis {
    /// Edge runs top to bottom; the ESF is taken along rows.
    Vertical,
    Horizontal,
}

/// Edge spread function of the ROI: mean across the edge direction.
pub fn edge_spread(img: &Image, roi: Roi, axis: EdgeAxis) -> Result<Vec<f64>> {
    if roi.rows == 0 || roi.cols == 0 || roi.row + roi.rows > img.n || roi.col + roi.cols > img.n {
        return Err(Error::invalid(format!("ROI {roi:?} outside {}x{} image", img.n, img.n)));
    }
    let (len, depth) = match axis {
        EdgeAxis::Vertical => (roi.cols, roi.rows),
        EdgeAxis::Horizontal => (roi.rows, roi.cols),
    };
    let at = |along: usize, across: usize| match axis {
        EdgeAxis::Vertical => img.get(roi.row + across, roi.col + along),
        EdgeAxis::Horizontal => img.get(roi.row + along, roi.col + across),
    };
    let esf: Vec<f64> = (0..len)
        .map(|a| (0..depth).map(|c| at(a, c)).sum::<f64>() / depth as f64)
        .collect();

    // Noise floor from line-to-line scatter about the mean profile.
    let mut var = 0.0;
    for a in 0..len {
        for c in 0..depth {
            var += (at(a, c) - esf[a]).powi(2);
        }
    }
    let noise = (var / (len * depth) as f64).sqrt();
    let lo = esf.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = esf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let contrast = hi - lo;
    if !(contrast > 10.0 * noise) || contrast <= 1e-12 * hi.abs().max(lo.abs()) {
        return Err(Error::invalid(format!(
            "edge contrast {contrast:e} below 10x noise floor {noise:e}"
        )));
    }
    Ok(esf)
}

/// Edge-method MTF.
///
/// The ESF is differenced between neighbouring samples, giving the LSF on
/// the half-pixel lattice; its transfer `sin(πf)/(πf)` (f in cycles/pixel)
/// is divided out of the spectrum. The LSF is tapered by a Hann window as
/// long as the ESF centred on its peak, zero-padded to a power of two at
/// least four times the ESF length, and transformed directly.
pub fn mtf_edge(img: &Image, roi: Roi, axis: EdgeAxis) -> Result<MtfCurve> {
    img.check_finite()?;
    let esf = edge_spread(img, roi, axis)?;
    if esf.len() < 4 {
        return Err(Error::invalid("ROI too short across the edge"));
    }
    let mut lsf: Vec<f64> = esf.windows(2).map(|w| w[1] - w[0]).collect();
    let peak = lsf
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
        .0;
    let half = esf.len() as f64 / 2.0;
    for (i, v) in lsf.iter_mut().enumerate() {
        let u = (i as f64 - peak as f64) / half;
        *v *= if u.abs() < 1.0 { 0.5 * (1.0 + (PI * u).cos()) } else { 0.0 };
    }

    let n_fft = (4 * esf.len()).next_power_of_two();
    let n_out = n_fft / 2 + 1;
    let mut mags = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let w = -2.0 * PI * k as f64 / n_fft as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in lsf.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            re += v * c;
            im += v * s;
        }
        let f = k as f64 / n_fft as f64;
        let diff_gain = if k == 0 { 1.0 } else { (PI * f).sin() / (PI * f) };
        mags.push((re * re + im * im).sqrt() / diff_gain);
    }
    if !(mags[0] > 0.0) {
        return Err(Error::invalid("edge has no net contrast"));
    }
    let dc = mags[0];
    let values = mags.iter().map(|m| m / dc).collect();
    let frequencies = (0..n_out)
        .map(|k| k as f64 / (n_fft as f64 * img.pixel_size))
        .collect();
    Ok(MtfCurve { frequencies, values })
}

/// First frequency at which the curve falls to `fraction`, linearly
/// interpolated between samples.
pub fn mtf_at(curve: &MtfCurve, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1)")));
    }
    let (f, v) = (&curve.frequencies, &curve.values);
    for i in 0..v.len() {
        if v[i] <= fraction {
            if i == 0 || v[i] == fraction {
                return Ok(f[i]);
            }
            let t = (v[i - 1] - fraction) / (v[i - 1] - v[i]);
            return Ok(f[i - 1] + t * (f[i] - f[i - 1]));
        }
    }
    Err(Error::NoCrossing {
        fraction,
        minimum: v.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// 2x bicubic (Catmull-Rom) upscaling over the same field of view, with
/// edge replication outside the image.
pub fn bicubic_upscale2(img: &Image) -> Image {
    let n = img.n;
    // Output sample 2j+e sits at input coordinate j - 1/4 + e/2.
    let taps = |e: usize| -> [f64; 4] {
        let t = if e == 0 { 0.75 } else { 0.25 };
        [catmull_rom(t + 1.0), catmull_rom(t), catmull_rom(1.0 - t), catmull_rom(2.0 - t)]
    };
    let base = |o: usize| -> isize { (o / 2) as isize - if o % 2 == 0 { 1 } else { 0 } };
    let clamp = |k: isize| k.clamp(0, n as isize - 1) as usize;
    let m = 2 * n;
    let mut rows = vec![0.0; n * m];
    for i in 0..n {
        for o in 0..m {
            let w = taps(o % 2);
            let b = base(o);
            rows[i * m + o] = (0..4).map(|k| w[k] * img.get(i, clamp(b - 1 + k as isize))).sum();
        }
    }
    let mut data = vec![0.0; m * m];
    for o in 0..m {
        let w = taps(o % 2);
        let b = base(o);
        for c in 0..m {
            data[o * m + c] = (0..4).map(|k| w[k] * rows[clamp(b - 1 + k as isize) * m + c]).sum();
        }
    }
    Image {
        n: m,
        pixel_size: img.pixel_size / 2.0,
        data,
    }
}

/// 2x pixel replication.
pub fn nearest_upscale2(img: &Image) -> Image {
    let m = 2 * img.n;
    let data = (0..m * m).map(|k| img.get(k / m / 2, k % m / 2)).collect();
    Image {
        n: m,
        pixel_size: img.pixel_size / 2.0,
        data,
    }
}
