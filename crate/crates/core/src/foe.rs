//! Fields-of-Experts regularization direction with a Gaussian-mixture
//! penalty derivative.
//!
//! Each channel filters the image through three 3×3 kernels, applies
//! `φ(z) = Σ_n γ_n·exp(-(z-μ_n)²/(2δ_n))` pixelwise and filters the result
//! back through the rotated kernels in reverse order. Channel outputs are
//! summed in channel order.

use serde::{Deserialize, Serialize};

use crate::conv::{conv_adjoint_img, conv_img, conv_kernel_grad_img, Kernel2D};
use crate::types::Image;

pub const N_GAUSSIANS: usize = 4;
pub const N_CHANNELS: usize = 4;

/// Mixture parameters; `δ_n = exp(log_delta_n)` stays positive under
/// unconstrained updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub gamma: [f64; N_GAUSSIANS],
    pub mu: [f64; N_GAUSSIANS],
    pub log_delta: [f64; N_GAUSSIANS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoeChannel {
    pub g1: Kernel2D,
    pub g2: Kernel2D,
    pub g3: Kernel2D,
    pub gmm: GmmParams,
}

/// Partial derivatives of φ summed against an upstream gradient, plus the
/// pointwise slope `dφ/dz`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmGrads {
    pub d_x: Vec<f64>,
    pub d_gamma: [f64; N_GAUSSIANS],
    pub d_mu: [f64; N_GAUSSIANS],
    pub d_log_delta: [f64; N_GAUSSIANS],
}

impl GmmParams {
    pub fn zeros() -> Self {
        GmmParams {
            gamma: [0.0; N_GAUSSIANS],
            mu: [0.0; N_GAUSSIANS],
            log_delta: [0.0; N_GAUSSIANS],
        }
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for n in 0..N_GAUSSIANS {
            let d = x - self.mu[n];
            acc += self.gamma[n] * (-d * d / (2.0 * self.log_delta[n].exp())).exp();
        }
        acc
    }
}

/// Elementwise φ.
pub fn gmm_phi(x: &[f64], p: &GmmParams) -> Vec<f64> {
    let delta: [f64; N_GAUSSIANS] = p.log_delta.map(f64::exp);
    x.iter()
        .map(|&v| {
            let mut acc = 0.0;
            for n in 0..N_GAUSSIANS {
                let d = v - p.mu[n];
                acc += p.gamma[n] * (-d * d / (2.0 * delta[n])).exp();
            }
            acc
        })
        .collect()
}

/// Derivatives of `Σ_i upstream[i]·φ(x[i])`: `d_x` is elementwise
/// `upstream[i]·φ'(x[i])`, the parameter terms are summed over `i`.
/// With `upstream = 1` at a single point these are the plain partials.
pub fn gmm_phi_grads(x: &[f64], upstream: &[f64], p: &GmmParams) -> GmmGrads {
    debug_assert_eq!(x.len(), upstream.len());
    let delta: [f64; N_GAUSSIANS] = p.log_delta.map(f64::exp);
    let mut out = GmmGrads {
        d_x: vec![0.0; x.len()],
        d_gamma: [0.0; N_GAUSSIANS],
        d_mu: [0.0; N_GAUSSIANS],
        d_log_delta: [0.0; N_GAUSSIANS],
    };
    for ((&v, &g), dx) in x.iter().zip(upstream).zip(out.d_x.iter_mut()) {
        let mut slope = 0.0;
        for n in 0..N_GAUSSIANS {
            let d = v - p.mu[n];
            let e = (-d * d / (2.0 * delta[n])).exp();
            let ge = p.gamma[n] * e;
            slope -= ge * d / delta[n];
            out.d_gamma[n] += g * e;
            out.d_mu[n] += g * ge * d / delta[n];
            out.d_log_delta[n] += g * ge * d * d / (2.0 * delta[n]);
        }
        *dx = g * slope;
    }
    out
}

/// Intermediates of one channel's forward pass.
#[derive(Debug, Clone)]
pub struct ChannelTape {
    z1: Image,
    z2: Image,
    z3: Image,
    phi: Image,
    w1: Image,
    w2: Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelGrads {
    pub g1: Kernel2D,
    pub g2: Kernel2D,
    pub g3: Kernel2D,
    pub gamma: [f64; N_GAUSSIANS],
    pub mu: [f64; N_GAUSSIANS],
    pub log_delta: [f64; N_GAUSSIANS],
}

impl ChannelGrads {
    pub fn zeros() -> Self {
        ChannelGrads {
            g1: Kernel2D([0.0; 9]),
            g2: Kernel2D([0.0; 9]),
            g3: Kernel2D([0.0; 9]),
            gamma: [0.0; N_GAUSSIANS],
            mu: [0.0; N_GAUSSIANS],
            log_delta: [0.0; N_GAUSSIANS],
        }
    }
}

fn add_k(acc: &mut Kernel2D, k: &Kernel2D) {
    for (a, b) in acc.0.iter_mut().zip(k.0) {
        *a += b;
    }
}

impl FoeChannel {
    pub fn forward(&self, x: &Image) -> (Image, ChannelTape) {
        let z1 = conv_img(x, &self.g1);
        let z2 = conv_img(&z1, &self.g2);
        let z3 = conv_img(&z2, &self.g3);
        let phi = Image {
            n: x.n,
            pixel_size: x.pixel_size,
            data: gmm_phi(&z3.data, &self.gmm),
        };
        let w1 = conv_adjoint_img(&phi, &self.g3);
        let w2 = conv_adjoint_img(&w1, &self.g2);
        let out = conv_adjoint_img(&w2, &self.g1);
        (out, ChannelTape { z1, z2, z3, phi, w1, w2 })
    }

    /// Given `upstream = ∂L/∂out`, accumulates parameter gradients into
    /// `grads` and returns `∂L/∂x` (excluding `x`'s other uses).
    pub fn backward(&self, x: &Image, tape: &ChannelTape, upstream: &Image, grads: &mut ChannelGrads) -> Image {
        // out = rot(g1) * w2
        add_k(&mut grads.g1, &conv_kernel_grad_img(&tape.w2, upstream).rotate180());
        let d_w2 = conv_img(upstream, &self.g1);
        add_k(&mut grads.g2, &conv_kernel_grad_img(&tape.w1, &d_w2).rotate180());
        let d_w1 = conv_img(&d_w2, &self.g2);
        add_k(&mut grads.g3, &conv_kernel_grad_img(&tape.phi, &d_w1).rotate180());
        let d_phi = conv_img(&d_w1, &self.g3);

        let gg = gmm_phi_grads(&tape.z3.data, &d_phi.data, &self.gmm);
        for n in 0..N_GAUSSIANS {
            grads.gamma[n] += gg.d_gamma[n];
            grads.mu[n] += gg.d_mu[n];
            grads.log_delta[n] += gg.d_log_delta[n];
        }
        let d_z3 = Image {
            n: x.n,
            pixel_size: x.pixel_size,
            data: gg.d_x,
        };
        add_k(&mut grads.g3, &conv_kernel_grad_img(&tape.z2, &d_z3));
        let d_z2 = conv_adjoint_img(&d_z3, &self.g3);
        add_k(&mut grads.g2, &conv_kernel_grad_img(&tape.z1, &d_z2));
        let d_z1 = conv_adjoint_img(&d_z2, &self.g2);
        add_k(&mut grads.g1, &conv_kernel_grad_img(x, &d_z1));
        conv_adjoint_img(&d_z1, &self.g1)
    }
}

/// Sum of all channel outputs.
pub fn foe_apply(x: &Image, channels: &[FoeChannel]) -> Image {
    foe_forward(x, channels).0
}

pub fn foe_forward(x: &Image, channels: &[FoeChannel]) -> (Image, Vec<ChannelTape>) {
    let mut total = Image::zeros(x.grid());
    let mut tapes = Vec::with_capacity(channels.len());
    for ch in channels {
        let (out, tape) = ch.forward(x);
        for (t, v) in total.data.iter_mut().zip(&out.data) {
            *t += v;
        }
        tapes.push(tape);
    }
    (total, tapes)
}

/// Back-propagates `upstream = ∂L/∂foe_apply(x)`; returns `∂L/∂x` and
/// per-channel parameter gradients.
pub fn foe_backward(
    x: &Image,
    channels: &[FoeChannel],
    tapes: &[ChannelTape],
    upstream: &Image,
) -> (Image, Vec<ChannelGrads>) {
    let mut dx = Image::zeros(x.grid());
    let mut grads = Vec::with_capacity(channels.len());
    for (ch, tape) in channels.iter().zip(tapes) {
        let mut g = ChannelGrads::zeros();
        let d = ch.backward(x, tape, upstream, &mut g);
        for (a, b) in dx.data.iter_mut().zip(&d.data) {
            *a += b;
        }
        grads.push(g);
    }
    (dx, grads)
}
