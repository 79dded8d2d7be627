//! Small learnable convolutions: 3-tap kernels along the detector axis of a
//! sinogram and 3×3 kernels on images.
//!
//! Convolution is the flipped sum `y[i] = Σ_a k[a]·x[i - (a - 1)]` with zero
//! padding and "same" output size. Its transpose is convolution with the
//! 180°-rotated kernel, i.e. cross-correlation.

use serde::{Deserialize, Serialize};

use crate::types::{Image, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel1D(pub [f64; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel2D(pub [f64; 9]);

impl Kernel1D {
    pub const DELTA: Kernel1D = Kernel1D([0.0, 1.0, 0.0]);

    pub fn rotate180(&self) -> Kernel1D {
        let k = self.0;
        Kernel1D([k[2], k[1], k[0]])
    }
}

impl Kernel2D {
    pub const DELTA: Kernel2D = Kernel2D([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);

    pub fn rotate180(&self) -> Kernel2D {
        let mut r = self.0;
        r.reverse();
        Kernel2D(r)
    }

    #[inline]
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.0[a * 3 + b]
    }
}

// 1-D along rows of a rows×cols buffer
fn conv_rows(x: &[f64], cols: usize, k: &[f64; 3], out: &mut [f64]) {
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        for i in 0..cols {
            let mut acc = k[1] * xr[i];
            if i >= 1 {
                acc += k[2] * xr[i - 1];
            }
            if i + 1 < cols {
                acc += k[0] * xr[i + 1];
            }
            or[i] = acc;
        }
    }
}

fn grad_rows(x: &[f64], g: &[f64], cols: usize) -> [f64; 3] {
    // ∂/∂k[a] Σ_i g[i]·x[i-(a-1)]
    let mut out = [0.0; 3];
    for (xr, gr) in x.chunks_exact(cols).zip(g.chunks_exact(cols)) {
        for i in 0..cols {
            if i + 1 < cols {
                out[0] += gr[i] * xr[i + 1];
            }
            out[1] += gr[i] * xr[i];
            if i >= 1 {
                out[2] += gr[i] * xr[i - 1];
            }
        }
    }
    out
}

fn conv_2d(x: &[f64], n: usize, k: &Kernel2D, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..3 {
                // source row i - (a - 1)
                let si = i as isize + 1 - a as isize;
                if si < 0 || si >= n as isize {
                    continue;
                }
                let row = &x[si as usize * n..(si as usize + 1) * n];
                for b in 0..3 {
                    let sj = j as isize + 1 - b as isize;
                    if sj < 0 || sj >= n as isize {
                        continue;
                    }
                    acc += k.0[a * 3 + b] * row[sj as usize];
                }
            }
            out[i * n + j] = acc;
        }
    }
}

fn grad_2d(x: &[f64], g: &[f64], n: usize) -> [f64; 9] {
    let mut out = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            let (di, dj) = (1 - a as isize, 1 - b as isize);
            let i_lo = (-di).max(0) as usize;
            let i_hi = (n as isize - di).min(n as isize) as usize;
            let j_lo = (-dj).max(0) as usize;
            let j_hi = (n as isize - dj).min(n as isize) as usize;
            let mut acc = 0.0;
            for i in i_lo..i_hi {
                let si = (i as isize + di) as usize;
                for j in j_lo..j_hi {
                    acc += g[i * n + j] * x[si * n + (j as isize + dj) as usize];
                }
            }
            out[a * 3 + b] = acc;
        }
    }
    out
}

/// Per-view convolution along the detector axis.
pub fn conv_sino(s: &Sinogram, k: &Kernel1D) -> Sinogram {
    let mut out = Sinogram::zeros(s.n_views, s.n_det, s.det_spacing);
    conv_rows(&s.data, s.n_det, &k.0, &mut out.data);
    out
}

pub fn conv_adjoint_sino(s: &Sinogram, k: &Kernel1D) -> Sinogram {
    conv_sino(s, &k.rotate180())
}

/// `∂⟨g_out, k∗x⟩/∂k`.
pub fn conv_kernel_grad_sino(x: &Sinogram, g_out: &Sinogram) -> Kernel1D {
    debug_assert_eq!(x.data.len(), g_out.data.len());
    Kernel1D(grad_rows(&x.data, &g_out.data, x.n_det))
}

pub fn conv_img(x: &Image, k: &Kernel2D) -> Image {
    let mut out = Image::zeros(x.grid());
    conv_2d(&x.data, x.n, k, &mut out.data);
    out
}

pub fn conv_adjoint_img(x: &Image, k: &Kernel2D) -> Image {
    conv_img(x, &k.rotate180())
}

/// `∂⟨g_out, k∗x⟩/∂k`, row-major 3×3.
pub fn conv_kernel_grad_img(x: &Image, g_out: &Image) -> Kernel2D {
    debug_assert_eq!(x.n, g_out.n);
    Kernel2D(grad_2d(&x.data, &g_out.data, x.n))
}
