//! Detector-axis down-sampling (stride 2) and up-sampling (linear), with
//! their transposes.
//!
//! Original samples sit at even indices of the up-sampled row, so
//! `downsample_det(upsample_det(y)) == y` bit for bit.

use crate::error::{Error, Result};
use crate::types::Sinogram;

/// Keeps the even detector bins. Doubles `det_spacing`.
pub fn downsample_det(sino: &Sinogram) -> Result<Sinogram> {
    if sino.n_det % 2 != 0 {
        return Err(Error::invalid(format!(
            "down-sampling needs an even detector count, got {}",
            sino.n_det
        )));
    }
    let m = sino.n_det / 2;
    let mut out = Sinogram::zeros(sino.n_views, m, sino.det_spacing * 2.0);
    for v in 0..sino.n_views {
        let src = sino.row(v);
        for (d, o) in out.row_mut(v).iter_mut().enumerate() {
            *o = src[2 * d];
        }
    }
    Ok(out)
}

/// Transpose of [`downsample_det`]: zero-fills the odd bins.
pub fn downsample_adjoint(sino: &Sinogram) -> Sinogram {
    let mut out = Sinogram::zeros(sino.n_views, sino.n_det * 2, sino.det_spacing / 2.0);
    for v in 0..sino.n_views {
        let src = sino.row(v);
        let dst = out.row_mut(v);
        for (d, &x) in src.iter().enumerate() {
            dst[2 * d] = x;
        }
    }
    out
}

/// Linear 2× up-sampling along the detector axis. The last odd bin repeats
/// the final sample. Halves `det_spacing`.
pub fn upsample_det(sino: &Sinogram) -> Result<Sinogram> {
    if sino.n_det < 2 {
        return Err(Error::invalid("up-sampling needs at least 2 detector bins"));
    }
    let m = sino.n_det;
    let mut out = Sinogram::zeros(sino.n_views, 2 * m, sino.det_spacing / 2.0);
    for v in 0..sino.n_views {
        let src = sino.row(v);
        let dst = out.row_mut(v);
        for d in 0..m {
            dst[2 * d] = src[d];
            dst[2 * d + 1] = if d + 1 < m { (src[d] + src[d + 1]) / 2.0 } else { src[d] };
        }
    }
    Ok(out)
}

/// Transpose of [`upsample_det`].
pub fn upsample_adjoint(sino: &Sinogram) -> Result<Sinogram> {
    if sino.n_det % 2 != 0 || sino.n_det < 4 {
        return Err(Error::invalid(format!(
            "up-sampling adjoint needs an even detector count ≥ 4, got {}",
            sino.n_det
        )));
    }
    let m = sino.n_det / 2;
    let mut out = Sinogram::zeros(sino.n_views, m, sino.det_spacing * 2.0);
    for v in 0..sino.n_views {
        let src = sino.row(v);
        let dst = out.row_mut(v);
        for d in 0..m {
            let mut acc = src[2 * d];
            if d + 1 < m {
                acc += src[2 * d + 1] / 2.0;
            } else {
                acc += src[2 * d + 1];
            }
            if d > 0 {
                acc += src[2 * d - 1] / 2.0;
            }
            dst[d] = acc;
        }
    }
    Ok(out)
}

/// Detector binning: each output bin is the mean of an adjacent input pair.
/// The result lies on the grid of the geometry's lower-resolution
/// counterpart.
pub fn bin_det_pairs(sino: &Sinogram) -> Result<Sinogram> {
    if sino.n_det % 2 != 0 {
        return Err(Error::invalid(format!("cannot bin odd detector count {}", sino.n_det)));
    }
    let m = sino.n_det / 2;
    let mut out = Sinogram::zeros(sino.n_views, m, 2.0 * sino.det_spacing);
    for v in 0..sino.n_views {
        let (src, dst) = (sino.row(v), out.row_mut(v));
        for d in 0..m {
            dst[d] = 0.5 * (src[2 * d] + src[2 * d + 1]);
        }
    }
    Ok(out)
}
