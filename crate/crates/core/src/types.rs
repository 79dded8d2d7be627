//! Images, sinograms, reconstruction grids and acquisition geometry.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Square reconstruction grid: `n` pixels per side at `pixel_size` mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub pixel_size: f64,
}

impl Grid {
    pub fn new(n: usize, pixel_size: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("grid side {n} < 2")));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::invalid(format!("pixel size {pixel_size} must be positive")));
        }
        Ok(Grid { n, pixel_size })
    }

    /// Twice the pixels per side over the same field of view.
    pub fn doubled(&self) -> Grid {
        Grid {
            n: self.n * 2,
            pixel_size: self.pixel_size / 2.0,
        }
    }
}

/// Square image of linear attenuation coefficients (mm⁻¹), row-major.
///
/// Pixel `(i, j)` is centred at `x = (j - (n-1)/2)·ps`, `y = ((n-1)/2 - i)·ps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub n: usize,
    pub pixel_size: f64,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: Grid) -> Self {
        Image {
            n: grid.n,
            pixel_size: grid.pixel_size,
            data: vec![0.0; grid.n * grid.n],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n * grid.n {
            return Err(Error::shape(format!(
                "image data length {} != {}²",
                data.len(),
                grid.n
            )));
        }
        Ok(Image {
            n: grid.n,
            pixel_size: grid.pixel_size,
            data,
        })
    }

    pub fn grid(&self) -> Grid {
        Grid {
            n: self.n,
            pixel_size: self.pixel_size,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite(format!(
                "image pixel ({}, {}) = {}",
                k / self.n,
                k % self.n,
                self.data[k]
            ))),
        }
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.n != other.n {
            return Err(Error::shape(format!("image sides {} and {}", self.n, other.n)));
        }
        Ok(())
    }
}

/// Views × detector bins of line integrals, row-major by view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_views: usize,
    pub n_det: usize,
    pub det_spacing: f64,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_views: usize, n_det: usize, det_spacing: f64) -> Self {
        Sinogram {
            n_views,
            n_det,
            det_spacing,
            data: vec![0.0; n_views * n_det],
        }
    }

    pub fn for_geometry(geom: &Geometry) -> Self {
        Self::zeros(geom.n_views(), geom.n_det, geom.det_spacing)
    }

    pub fn from_vec(n_views: usize, n_det: usize, det_spacing: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_views * n_det {
            return Err(Error::shape(format!(
                "sinogram data length {} != {n_views}×{n_det}",
                data.len()
            )));
        }
        Ok(Sinogram {
            n_views,
            n_det,
            det_spacing,
            data,
        })
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_det..(v + 1) * self.n_det]
    }

    pub fn row_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.n_det..(v + 1) * self.n_det]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite(format!(
                "sinogram bin ({}, {}) = {}",
                k / self.n_det,
                k % self.n_det,
                self.data[k]
            ))),
        }
    }

    pub fn same_shape(&self, other: &Sinogram) -> Result<()> {
        if self.n_views != other.n_views || self.n_det != other.n_det {
            return Err(Error::shape(format!(
                "sinograms {}×{} and {}×{}",
                self.n_views, self.n_det, other.n_views, other.n_det
            )));
        }
        Ok(())
    }
}

/// 2-D parallel-beam acquisition.
///
/// Detector bin `d` sits at `(d - (n_det-1)/2 + det_center_offset)·det_spacing`;
/// the offset is in bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub angles: Vec<f64>,
    pub n_det: usize,
    pub det_spacing: f64,
    #[serde(default)]
    pub det_center_offset: f64,
}

impl Geometry {
    pub fn new(angles: Vec<f64>, n_det: usize, det_spacing: f64) -> Result<Self> {
        let g = Geometry {
            angles,
            n_det,
            det_spacing,
            det_center_offset: 0.0,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n_views` angles evenly spaced over `[0, span)`.
    pub fn uniform(n_views: usize, span: f64, n_det: usize, det_spacing: f64) -> Result<Self> {
        let angles = (0..n_views)
            .map(|v| span * v as f64 / n_views as f64)
            .collect();
        Self::new(angles, n_det, det_spacing)
    }

    /// Half-turn acquisition, the usual parallel-beam case.
    pub fn half_turn(n_views: usize, n_det: usize, det_spacing: f64) -> Result<Self> {
        Self::uniform(n_views, PI, n_det, det_spacing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::invalid("geometry needs at least one view"));
        }
        if self.n_det < 2 {
            return Err(Error::invalid(format!("n_det {} < 2", self.n_det)));
        }
        if !(self.det_spacing > 0.0 && self.det_spacing.is_finite()) {
            return Err(Error::invalid(format!(
                "det_spacing {} must be positive",
                self.det_spacing
            )));
        }
        if self.angles.iter().any(|a| !a.is_finite()) || !self.det_center_offset.is_finite() {
            return Err(Error::invalid("non-finite geometry parameter"));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Signed detector coordinate (mm) of bin `d`.
    #[inline]
    pub fn det_coord(&self, d: usize) -> f64 {
        (d as f64 - (self.n_det as f64 - 1.0) / 2.0 + self.det_center_offset) * self.det_spacing
    }

    /// Same field of view with half the bins at twice the spacing.
    pub fn lower_res(&self) -> Result<Geometry> {
        if self.n_det % 2 != 0 {
            return Err(Error::invalid(format!(
                "cannot halve odd detector count {}",
                self.n_det
            )));
        }
        Ok(Geometry {
            angles: self.angles.clone(),
            n_det: self.n_det / 2,
            det_spacing: self.det_spacing * 2.0,
            det_center_offset: self.det_center_offset / 2.0,
        })
    }

    /// Same field of view with twice the bins at half the spacing.
    pub fn higher_res(&self) -> Geometry {
        Geometry {
            angles: self.angles.clone(),
            n_det: self.n_det * 2,
            det_spacing: self.det_spacing / 2.0,
            det_center_offset: self.det_center_offset * 2.0,
        }
    }

    pub fn check_sinogram(&self, sino: &Sinogram) -> Result<()> {
        if sino.n_views != self.n_views() || sino.n_det != self.n_det {
            return Err(Error::shape(format!(
                "sinogram {}×{} does not match geometry {}×{}",
                sino.n_views,
                sino.n_det,
                self.n_views(),
                self.n_det
            )));
        }
        Ok(())
    }
}

/// Euclidean inner product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
