//! Parallel-beam projector, its exact adjoint, ramp filtering and FBP.
//!
//! The projector is ray-driven: every ray is sampled on a lattice of points
//! `t_k = k·step` (symmetric about the detector line through the origin) with
//! `step = min(pixel_size, det_spacing)/2`, and each sample bilinearly
//! interpolates the image. `back_project` visits exactly the same samples
//! with exactly the same weights and scatters instead of gathers, so the two
//! are transposes of one another up to summation order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::types::{Geometry, Grid, Image, Sinogram};

/// Views per partial image in the back-projection scatter is chosen so that at
/// most this many partials exist, independently of the thread count.
const BACKPROJECT_PARTIALS: usize = 16;

/// Spatial-domain ramp kernel used by [`ramp_filter_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKernel {
    /// Band-limited ramp, no apodization.
    #[default]
    RamLak,
    /// Ramp apodized by a sinc window.
    SheppLogan,
}

impl RampKernel {
    /// Tap `k` of the kernel for detector spacing `spacing`.
    pub fn tap(self, k: isize, spacing: f64) -> f64 {
        match self {
            RampKernel::RamLak => {
                if k == 0 {
                    1.0 / (4.0 * spacing * spacing)
                } else if k % 2 == 0 {
                    0.0
                } else {
                    let d = PI * k as f64 * spacing;
                    -1.0 / (d * d)
                }
            }
            RampKernel::SheppLogan => {
                let k = k as f64;
                -2.0 / (PI * PI * spacing * spacing * (4.0 * k * k - 1.0))
            }
        }
    }
}

struct RayTracer {
    n: usize,
    // padded row stride
    stride: usize,
    inv_ps: f64,
    center: f64,
    step: f64,
}

impl RayTracer {
    fn new(grid: Grid, geom: &Geometry) -> Self {
        RayTracer {
            n: grid.n,
            stride: grid.n + 2,
            inv_ps: 1.0 / grid.pixel_size,
            center: (grid.n as f64 - 1.0) / 2.0,
            step: grid.pixel_size.min(geom.det_spacing) / 2.0,
        }
    }

    /// Calls `visit(base, fr, fu)` for every sample of the ray at angle
    /// `(cos, sin)` and detector coordinate `s`. `base` indexes the top-left
    /// neighbour in the zero-padded `(n+2)²` image.
    #[inline(always)]
    fn trace<F: FnMut(usize, f64, f64)>(&self, cos: f64, sin: f64, s: f64, mut visit: F) {
        let nf = self.n as f64;
        // column and row in pixel units, shifted by one into the padded
        // frame, as affine functions of k
        let u0 = s * cos * self.inv_ps + self.center + 1.0;
        let r0 = self.center + 1.0 - s * sin * self.inv_ps;
        let du = -sin * self.step * self.inv_ps;
        let dr = -cos * self.step * self.inv_ps;
        let hi_edge = nf + 1.0;

        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (p0, dp) in [(u0, du), (r0, dr)] {
            if dp.abs() < 1e-12 {
                if p0 <= 0.0 || p0 >= hi_edge {
                    return;
                }
            } else {
                let a = -p0 / dp;
                let b = (hi_edge - p0) / dp;
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        if !(lo <= hi) {
            return;
        }
        let k_lo = lo.floor() as i64;
        let k_hi = hi.ceil() as i64;
        for k in k_lo..=k_hi {
            let kf = k as f64;
            let u = u0 + kf * du;
            let r = r0 + kf * dr;
            if !(u > 0.0 && u < hi_edge && r > 0.0 && r < hi_edge) {
                continue;
            }
            // truncation is floor for positive values
            let (iu, ir) = (u as usize, r as usize);
            visit(ir * self.stride + iu, r - ir as f64, u - iu as f64);
        }
    }
}

fn padded(img: &Image) -> Vec<f64> {
    let n = img.n;
    let stride = n + 2;
    let mut p = vec![0.0; stride * stride];
    for i in 0..n {
        p[(i + 1) * stride + 1..(i + 1) * stride + 1 + n].copy_from_slice(&img.data[i * n..(i + 1) * n]);
    }
    p
}

/// Line integrals of `img` along every ray of `geom`.
pub fn forward_project(img: &Image, geom: &Geometry) -> Result<Sinogram> {
    geom.validate()?;
    if img.n < 2 {
        return Err(Error::invalid("image side must be at least 2"));
    }
    img.check_finite()?;
    let tracer = RayTracer::new(img.grid(), geom);
    let pad = padded(img);
    let stride = tracer.stride;
    let mut sino = Sinogram::for_geometry(geom);
    let n_det = geom.n_det;
    sino.data
        .par_chunks_mut(n_det)
        .zip(geom.angles.par_iter())
        .for_each(|(row, &theta)| {
            let (sin, cos) = theta.sin_cos();
            for (d, out) in row.iter_mut().enumerate() {
                let s = geom.det_coord(d);
                let mut acc = 0.0;
                tracer.trace(cos, sin, s, |b, fr, fu| {
                    let top = pad[b] + fu * (pad[b + 1] - pad[b]);
                    let bot = pad[b + stride] + fu * (pad[b + stride + 1] - pad[b + stride]);
                    acc += top + fr * (bot - top);
                });
                *out = acc * tracer.step;
            }
        });
    Ok(sino)
}

/// Exact transpose of [`forward_project`] onto `grid`.
pub fn back_project(sino: &Sinogram, geom: &Geometry, grid: Grid) -> Result<Image> {
    geom.validate()?;
    geom.check_sinogram(sino)?;
    let grid = Grid::new(grid.n, grid.pixel_size)?;
    let tracer = RayTracer::new(grid, geom);
    let stride = tracer.stride;
    let n_views = geom.n_views();
    let per_chunk = n_views.div_ceil(BACKPROJECT_PARTIALS);
    let view_ids: Vec<usize> = (0..n_views).collect();

    let partials: Vec<Vec<f64>> = view_ids
        .par_chunks(per_chunk)
        .map(|views| {
            let mut acc = vec![0.0; stride * stride];
            for &v in views {
                let (sin, cos) = geom.angles[v].sin_cos();
                for (d, &val) in sino.row(v).iter().enumerate() {
                    if val == 0.0 {
                        continue;
                    }
                    let w = val * tracer.step;
                    tracer.trace(cos, sin, geom.det_coord(d), |b, fr, fu| {
                        let top = w * (1.0 - fr);
                        let bot = w * fr;
                        acc[b] += top * (1.0 - fu);
                        acc[b + 1] += top * fu;
                        acc[b + stride] += bot * (1.0 - fu);
                        acc[b + stride + 1] += bot * fu;
                    });
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; stride * stride];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = grid.n;
    let mut img = Image::zeros(grid);
    for i in 0..n {
        img.data[i * n..(i + 1) * n].copy_from_slice(&total[(i + 1) * stride + 1..(i + 1) * stride + 1 + n]);
    }
    Ok(img)
}

/// Ram-Lak filtering of every view (zero-padded linear convolution).
///
/// Rows are treated as samples of a continuous profile, so the output is
/// `Δ·Σ_m h[n-m]·p[m]`: a unit-area impulse (height `1/Δ`) returns `h`.
pub fn ramp_filter(sino: &Sinogram) -> Result<Sinogram> {
    ramp_filter_with(sino, RampKernel::RamLak)
}

pub fn ramp_filter_with(sino: &Sinogram, kernel: RampKernel) -> Result<Sinogram> {
    if sino.n_det < 2 {
        return Err(Error::invalid("ramp filter needs at least 2 detector bins"));
    }
    let m = sino.n_det;
    let dx = sino.det_spacing;
    // taps[k + m - 1] = Δ·h[k] for k in -(m-1)..=(m-1)
    let taps: Vec<f64> = (-(m as isize - 1)..=(m as isize - 1))
        .map(|k| dx * kernel.tap(k, dx))
        .collect();
    let mut out = Sinogram::zeros(sino.n_views, m, dx);
    out.data
        .par_chunks_mut(m)
        .zip(sino.data.par_chunks(m))
        .for_each(|(o, p)| {
            for (i, oi) in o.iter_mut().enumerate() {
                // h index i - j ranges over i-(m-1) ..= i
                let window = &taps[i..i + m];
                let mut acc = 0.0;
                for (j, pj) in p.iter().enumerate() {
                    acc += window[m - 1 - j] * pj;
                }
                *oi = acc;
            }
        });
    Ok(out)
}

/// Scale that turns `back_project ∘ ramp_filter` into an inverse of the
/// projector: `π/n_views` for the angular integral and `Δ/ps²` for the
/// detector-to-pixel footprint normalization of the adjoint.
pub fn fbp_scale(geom: &Geometry, grid: Grid) -> f64 {
    PI / geom.n_views() as f64 * geom.det_spacing / (grid.pixel_size * grid.pixel_size)
}

/// Filtered back-projection onto `grid`.
pub fn fbp(sino: &Sinogram, geom: &Geometry, grid: Grid) -> Result<Image> {
    fbp_with(sino, geom, grid, RampKernel::RamLak)
}

pub fn fbp_with(sino: &Sinogram, geom: &Geometry, grid: Grid, kernel: RampKernel) -> Result<Image> {
    geom.check_sinogram(sino)?;
    let filtered = ramp_filter_with(sino, kernel)?;
    let mut img = back_project(&filtered, geom, grid)?;
    let scale = fbp_scale(geom, grid);
    img.data.iter_mut().for_each(|v| *v *= scale);
    Ok(img)
}

/// Transpose of [`fbp`]: image → sinogram. The ramp filter matrix is
/// symmetric, so this is `scale · ramp(forward_project(img))`.
pub fn fbp_adjoint(img: &Image, geom: &Geometry) -> Result<Sinogram> {
    let projected = forward_project(img, geom)?;
    let mut out = ramp_filter(&projected)?;
    let scale = fbp_scale(geom, img.grid());
    out.data.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Bytes above which [`Projector::auto`] falls back to on-the-fly tracing.
const MATRIX_BUDGET_BYTES: usize = 2 << 30;

/// The projector's sparse matrix, one row per ray, with the weights of
/// samples that share a pixel merged and columns in ascending order.
#[derive(Debug, Clone)]
struct SystemMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SystemMatrix {
    fn build(geom: &Geometry, grid: Grid) -> Self {
        let tracer = RayTracer::new(grid, geom);
        let (n, stride) = (grid.n, tracer.stride);
        let per_view: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = geom
            .angles
            .par_iter()
            .map(|&theta| {
                let (sin, cos) = theta.sin_cos();
                let mut scratch = vec![0.0; stride * stride];
                let mut touched: Vec<usize> = Vec::new();
                let (mut lens, mut cols, mut vals) = (Vec::with_capacity(geom.n_det), Vec::new(), Vec::new());
                for d in 0..geom.n_det {
                    let mut add = |k: usize, w: f64| {
                        if scratch[k] == 0.0 {
                            touched.push(k);
                        }
                        scratch[k] += w;
                    };
                    tracer.trace(cos, sin, geom.det_coord(d), |b, fr, fu| {
                        let (top, bot) = (1.0 - fr, fr);
                        for (k, w) in [(b, top * (1.0 - fu)), (b + 1, top * fu), (b + stride, bot * (1.0 - fu)), (b + stride + 1, bot * fu)] {
                            if w != 0.0 {
                                add(k, w);
                            }
                        }
                    });
                    touched.sort_unstable();
                    let before = cols.len();
                    for &k in &touched {
                        let (pi, pj) = (k / stride, k % stride);
                        if pi >= 1 && pi <= n && pj >= 1 && pj <= n {
                            cols.push(((pi - 1) * n + pj - 1) as u32);
                            vals.push(scratch[k] * tracer.step);
                        }
                        scratch[k] = 0.0;
                    }
                    touched.clear();
                    lens.push(cols.len() - before);
                }
                (lens, cols, vals)
            })
            .collect();
        let nnz = per_view.iter().map(|v| v.1.len()).sum();
        let mut row_ptr = Vec::with_capacity(geom.n_views() * geom.n_det + 1);
        let (mut cols, mut vals) = (Vec::with_capacity(nnz), Vec::with_capacity(nnz));
        row_ptr.push(0);
        for (lens, c, v) in per_view {
            for l in lens {
                row_ptr.push(row_ptr.last().unwrap() + l);
            }
            cols.extend_from_slice(&c);
            vals.extend_from_slice(&v);
        }
        SystemMatrix { row_ptr, cols, vals }
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().zip(&self.vals[span]).map(|(&c, &w)| w * x[c as usize]).sum()
    }
}

/// Forward and back projection between one grid and one geometry,
/// optionally through a precomputed sparse matrix. The matrix holds the
/// same weights as the on-the-fly tracer, summed per pixel, so the two
/// paths agree to rounding.
#[derive(Debug, Clone)]
pub struct Projector {
    geom: Geometry,
    grid: Grid,
    matrix: Option<SystemMatrix>,
}

impl Projector {
    /// Traces rays on every call.
    pub fn new(geom: &Geometry, grid: Grid) -> Result<Self> {
        geom.validate()?;
        let grid = Grid::new(grid.n, grid.pixel_size)?;
        Ok(Projector { geom: geom.clone(), grid, matrix: None })
    }

    /// Precomputes the sparse system matrix.
    pub fn cached(geom: &Geometry, grid: Grid) -> Result<Self> {
        let mut p = Self::new(geom, grid)?;
        p.matrix = Some(SystemMatrix::build(&p.geom, p.grid));
        Ok(p)
    }

    /// Cached when the estimated matrix fits in the memory budget.
    pub fn auto(geom: &Geometry, grid: Grid) -> Result<Self> {
        let estimate = geom.n_views() * geom.n_det * 3 * grid.n * 12;
        if estimate <= MATRIX_BUDGET_BYTES {
            Self::cached(geom, grid)
        } else {
            Self::new(geom, grid)
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn is_cached(&self) -> bool {
        self.matrix.is_some()
    }

    pub fn project(&self, img: &Image) -> Result<Sinogram> {
        let Some(m) = &self.matrix else {
            img.same_shape(&Image::zeros(self.grid))?;
            return forward_project(img, &self.geom);
        };
        img.same_shape(&Image::zeros(self.grid))?;
        img.check_finite()?;
        let mut sino = Sinogram::for_geometry(&self.geom);
        let n_det = self.geom.n_det;
        sino.data.par_chunks_mut(n_det).enumerate().for_each(|(v, row)| {
            for (d, out) in row.iter_mut().enumerate() {
                *out = m.row_dot(v * n_det + d, &img.data);
            }
        });
        Ok(sino)
    }

    pub fn back_project(&self, sino: &Sinogram) -> Result<Image> {
        let Some(m) = &self.matrix else {
            return back_project(sino, &self.geom, self.grid);
        };
        self.geom.check_sinogram(sino)?;
        let n_views = self.geom.n_views();
        let n_det = self.geom.n_det;
        let per_chunk = n_views.div_ceil(BACKPROJECT_PARTIALS);
        let view_ids: Vec<usize> = (0..n_views).collect();
        let size = self.grid.n * self.grid.n;
        let partials: Vec<Vec<f64>> = view_ids
            .par_chunks(per_chunk)
            .map(|views| {
                let mut acc = vec![0.0; size];
                for &v in views {
                    for (d, &val) in sino.row(v).iter().enumerate() {
                        if val == 0.0 {
                            continue;
                        }
                        let r = v * n_det + d;
                        let span = m.row_ptr[r]..m.row_ptr[r + 1];
                        for (&c, &w) in m.cols[span.clone()].iter().zip(&m.vals[span]) {
                            acc[c as usize] += w * val;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut img = Image::zeros(self.grid);
        for p in &partials {
            for (t, v) in img.data.iter_mut().zip(p) {
                *t += v;
            }
        }
        Ok(img)
    }

    pub fn fbp(&self, sino: &Sinogram) -> Result<Image> {
        self.geom.check_sinogram(sino)?;
        let filtered = ramp_filter(sino)?;
        let mut img = self.back_project(&filtered)?;
        let scale = fbp_scale(&self.geom, self.grid);
        img.data.iter_mut().for_each(|v| *v *= scale);
        Ok(img)
    }

    pub fn fbp_adjoint(&self, img: &Image) -> Result<Sinogram> {
        let mut out = ramp_filter(&self.project(img)?)?;
        let scale = fbp_scale(&self.geom, self.grid);
        out.data.iter_mut().for_each(|v| *v *= scale);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::dot;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let grid = Grid::new(16, 1.0).unwrap();
        let geom = Geometry::half_turn(12, 24, 1.0).unwrap();
        let s = forward_project(&Image::zeros(grid), &geom).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        let b = back_project(&s, &geom, grid).unwrap();
        assert!(b.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_finite_image() {
        let grid = Grid::new(8, 1.0).unwrap();
        let mut img = Image::zeros(grid);
        img.data[5] = f64::NAN;
        let geom = Geometry::half_turn(4, 12, 1.0).unwrap();
        assert!(matches!(forward_project(&img, &geom), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adjoint_identity_random_32() {
        let mut r = lcg(7);
        let grid = Grid::new(32, 0.7).unwrap();
        let geom = Geometry::half_turn(23, 48, 0.6).unwrap();
        let x = Image::from_vec(grid, (0..32 * 32).map(|_| r()).collect()).unwrap();
        let mut y = Sinogram::for_geometry(&geom);
        y.data.iter_mut().for_each(|v| *v = r());
        let ax = forward_project(&x, &geom).unwrap();
        let aty = back_project(&y, &geom, grid).unwrap();
        assert!(rel(dot(&ax.data, &y.data), dot(&x.data, &aty.data)) < 1e-10);
    }

    #[test]
    fn impulse_backprojection_matches_matrix_column() {
        // back_project of a single-bin impulse is row (v,d) of A, which we
        // recover by projecting every unit-pixel image.
        let grid = Grid::new(8, 1.0).unwrap();
        let geom = Geometry::half_turn(5, 14, 0.8).unwrap();
        let (v, d) = (2, 6);
        let mut y = Sinogram::for_geometry(&geom);
        y.data[v * geom.n_det + d] = 1.0;
        let bp = back_project(&y, &geom, grid).unwrap();
        for p in 0..64 {
            let mut e = Image::zeros(grid);
            e.data[p] = 1.0;
            let col = forward_project(&e, &geom).unwrap();
            let a = col.data[v * geom.n_det + d];
            assert!((a - bp.data[p]).abs() < 1e-14, "pixel {p}: {a} vs {}", bp.data[p]);
        }
    }

    #[test]
    fn ramp_impulse_gives_kernel_taps() {
        let dx = 0.5;
        let mut s = Sinogram::zeros(1, 9, dx);
        s.data[4] = 1.0 / dx;
        let out = ramp_filter(&s).unwrap();
        for (i, &v) in out.data.iter().enumerate() {
            let k = i as isize - 4;
            let h = if k == 0 {
                1.0 / (4.0 * dx * dx)
            } else if k % 2 == 0 {
                0.0
            } else {
                -1.0 / (PI * k as f64 * dx).powi(2)
            };
            assert!((v - h).abs() < 1e-14 * h.abs().max(1.0), "tap {k}");
        }
    }

    #[test]
    fn ramp_suppresses_dc_in_interior() {
        // sum of the ramp taps over ±K decays as 1/K
        for &m in &[64usize, 256] {
            let s = Sinogram::from_vec(1, m, 1.0, vec![1.0; m]).unwrap();
            let out = ramp_filter(&s).unwrap();
            let mid = out.data[m / 2];
            assert!(mid.abs() < 2.0 / (PI * PI * (m as f64 / 2.0 - 1.0)), "m={m}: {mid}");
        }
        let s64 = ramp_filter(&Sinogram::from_vec(1, 64, 1.0, vec![1.0; 64]).unwrap()).unwrap();
        let s256 = ramp_filter(&Sinogram::from_vec(1, 256, 1.0, vec![1.0; 256]).unwrap()).unwrap();
        assert!(s256.data[128].abs() < s64.data[32].abs());
    }

    #[test]
    fn ramp_matches_direct_convolution() {
        let mut r = lcg(3);
        let m = 11;
        let dx = 0.3;
        let p: Vec<f64> = (0..m).map(|_| r()).collect();
        let s = Sinogram::from_vec(1, m, dx, p.clone()).unwrap();
        let out = ramp_filter(&s).unwrap();
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                acc += RampKernel::RamLak.tap(i as isize - j as isize, dx) * p[j];
            }
            assert!((out.data[i] - dx * acc).abs() < 1e-12);
        }
    }

    #[test]
    fn fbp_is_linear() {
        let mut r = lcg(11);
        let grid = Grid::new(16, 1.0).unwrap();
        let geom = Geometry::half_turn(10, 24, 1.0).unwrap();
        let mut y1 = Sinogram::for_geometry(&geom);
        let mut y2 = Sinogram::for_geometry(&geom);
        y1.data.iter_mut().for_each(|v| *v = r());
        y2.data.iter_mut().for_each(|v| *v = r());
        let (a, b) = (0.7, -1.3);
        let mut comb = y1.clone();
        for (c, (p, q)) in comb.data.iter_mut().zip(y1.data.iter().zip(&y2.data)) {
            *c = a * p + b * q;
        }
        let f = fbp(&comb, &geom, grid).unwrap();
        let f1 = fbp(&y1, &geom, grid).unwrap();
        let f2 = fbp(&y2, &geom, grid).unwrap();
        let norm = f.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = f
            .data
            .iter()
            .zip(f1.data.iter().zip(&f2.data))
            .map(|(c, (p, q))| (c - a * p - b * q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / norm < 1e-12);
    }

    #[test]
    fn fbp_adjoint_identity() {
        let mut r = lcg(5);
        let grid = Grid::new(12, 1.1).unwrap();
        let geom = Geometry::half_turn(9, 20, 0.9).unwrap();
        let x = Image::from_vec(grid, (0..144).map(|_| r()).collect()).unwrap();
        let mut y = Sinogram::for_geometry(&geom);
        y.data.iter_mut().for_each(|v| *v = r());
        let fy = fbp(&y, &geom, grid).unwrap();
        let ftx = fbp_adjoint(&x, &geom).unwrap();
        assert!(rel(dot(&fy.data, &x.data), dot(&y.data, &ftx.data)) < 1e-10);
    }

    #[test]
    fn quarter_turn_symmetry() {
        // a 4-fold symmetric image gives identical rows at 0, π/2, π, 3π/2
        let grid = Grid::new(20, 1.0).unwrap();
        let mut img = Image::zeros(grid);
        let c = 9.5;
        for i in 0..20 {
            for j in 0..20 {
                let (x, y) = (j as f64 - c, c - i as f64);
                img.set(i, j, (-(x * x + y * y) / 30.0).exp() + 0.1 * (x.abs() * y.abs()).sqrt());
            }
        }
        let geom = Geometry::new(vec![0.0, PI / 2.0, PI, 1.5 * PI], 31, 1.0).unwrap();
        let s = forward_project(&img, &geom).unwrap();
        for v in 1..4 {
            for d in 0..31 {
                assert!((s.row(v)[d] - s.row(0)[d]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cached_projector_matches_tracer() {
        let grid = Grid::new(24, 0.8).unwrap();
        let geom = Geometry::half_turn(17, 40, 0.6).unwrap();
        let mut r = lcg(11);
        let x = Image::from_vec(grid, (0..576).map(|_| r()).collect()).unwrap();
        let y = Sinogram::from_vec(17, 40, 0.6, (0..680).map(|_| r()).collect()).unwrap();
        let (slow, fast) = (Projector::new(&geom, grid).unwrap(), Projector::cached(&geom, grid).unwrap());
        assert!(fast.is_cached() && !slow.is_cached());
        let (a, b) = (slow.project(&x).unwrap(), fast.project(&x).unwrap());
        assert!(a.data.iter().zip(&b.data).all(|(p, q)| (p - q).abs() < 1e-12));
        let (a, b) = (slow.back_project(&y).unwrap(), fast.back_project(&y).unwrap());
        assert!(a.data.iter().zip(&b.data).all(|(p, q)| (p - q).abs() < 1e-12));
        let lhs = dot(&fast.project(&x).unwrap().data, &y.data);
        let rhs = dot(&x.data, &fast.back_project(&y).unwrap().data);
        assert!(rel(lhs, rhs) < 1e-12);
        let (a, b) = (slow.fbp_adjoint(&x).unwrap(), fbp_adjoint(&x, &geom).unwrap());
        assert_eq!(a, b);
        assert!(fast.project(&Image::zeros(Grid::new(12, 0.8).unwrap())).is_err());
    }
}
