//! The unrolled reconstruction network.
//!
//! Each block performs one projected gradient-descent step
//!
//! ```text
//! x⁺ = max(0, x − λ₁·F(C̄₁C̄₂C̄₃ D↑(D↓ C₃C₂C₁ A x − y_l))
//!             − λ₂·B̄₁B̄₂B̄₃(B₃B₂B₁ x − x_l)
//!             − λ₃·Σ_k Ḡ_k1 Ḡ_k2 Ḡ_k3 φ_k(G_k3 G_k2 G_k1 x))
//! ```
//!
//! where `A` projects onto the high-resolution detector, `F` is FBP on that
//! detector, `x_l` is the FBP of the low-resolution sinogram on the output
//! grid and bars denote 180° rotation. The network starts from the FBP of
//! the linearly up-sampled input sinogram.
//!
//! Parameters carry no geometry, so the same weights run at any detector
//! width: training uses `m → 2m` bins and inference `2m → 4m`.

use crate::conv::{
    conv_adjoint_img, conv_adjoint_sino, conv_img, conv_kernel_grad_img, conv_kernel_grad_sino, conv_sino,
    Kernel1D, Kernel2D,
};
use crate::error::{Error, Result};
use crate::foe::{foe_backward, foe_forward, ChannelTape, FoeChannel, GmmParams, N_CHANNELS, N_GAUSSIANS};
use crate::resample::{downsample_adjoint, downsample_det, upsample_adjoint, upsample_det};
use crate::rng::SplitMix64;
use std::sync::Arc;

use crate::tomo::{fbp, Projector};
use crate::types::{dot, Geometry, Grid, Image, Sinogram};

/// Unrolled iterations.
pub const N_BLOCKS: usize = 3;

/// Scalars per block in the flat layout.
pub const BLOCK_LEN: usize = 3 + 3 * 3 + 3 * 9 + N_CHANNELS * (3 * 9 + 3 * N_GAUSSIANS);

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub lambda: [f64; 3],
    pub c: [Kernel1D; 3],
    pub b: [Kernel2D; 3],
    pub channels: [FoeChannel; N_CHANNELS],
}

/// How parameters are drawn at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub kernel_std: f64,
    pub lambda: f64,
    pub mu_range: f64,
    pub delta: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            kernel_std: 0.05,
            lambda: 0.1,
            mu_range: 0.01,
            delta: 1e-4,
        }
    }
}

impl BlockParams {
    pub fn zeros() -> Self {
        let ch = FoeChannel {
            g1: Kernel2D([0.0; 9]),
            g2: Kernel2D([0.0; 9]),
            g3: Kernel2D([0.0; 9]),
            gmm: GmmParams::zeros(),
        };
        BlockParams {
            lambda: [0.0; 3],
            c: [Kernel1D([0.0; 3]); 3],
            b: [Kernel2D([0.0; 9]); 3],
            channels: [ch; N_CHANNELS],
        }
    }

    /// Draws kernels and mixture weights from N(0, std²) in flat-layout
    /// order; means are evenly spaced over `±mu_range`.
    pub fn random(rng: &mut SplitMix64, init: &InitSpec) -> Self {
        let mut p = BlockParams::zeros();
        p.lambda = [init.lambda; 3];
        let mut draw = || rng.normal(0.0, init.kernel_std);
        for k in p.c.iter_mut() {
            k.0.iter_mut().for_each(|v| *v = draw());
        }
        for k in p.b.iter_mut() {
            k.0.iter_mut().for_each(|v| *v = draw());
        }
        for ch in p.channels.iter_mut() {
            for k in [&mut ch.g1, &mut ch.g2, &mut ch.g3] {
                k.0.iter_mut().for_each(|v| *v = draw());
            }
            ch.gmm.gamma.iter_mut().for_each(|v| *v = draw());
            for n in 0..N_GAUSSIANS {
                ch.gmm.mu[n] = -init.mu_range + 2.0 * init.mu_range * n as f64 / (N_GAUSSIANS - 1) as f64;
            }
            ch.gmm.log_delta = [init.delta.ln(); N_GAUSSIANS];
        }
        p
    }

    /// Mutable references to every scalar in canonical order: λ₁λ₂λ₃,
    /// c1..c3, b1..b3 (row-major), then per channel g1, g2, g3, γ, μ,
    /// log δ.
    pub fn scalars_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::with_capacity(BLOCK_LEN);
        out.extend(self.lambda.iter_mut());
        for k in self.c.iter_mut() {
            out.extend(k.0.iter_mut());
        }
        for k in self.b.iter_mut() {
            out.extend(k.0.iter_mut());
        }
        for ch in self.channels.iter_mut() {
            out.extend(ch.g1.0.iter_mut());
            out.extend(ch.g2.0.iter_mut());
            out.extend(ch.g3.0.iter_mut());
            out.extend(ch.gmm.gamma.iter_mut());
            out.extend(ch.gmm.mu.iter_mut());
            out.extend(ch.gmm.log_delta.iter_mut());
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut c = self.clone();
        c.scalars_mut().into_iter().map(|v| *v).collect()
    }
}

/// Human-readable path of scalar `i` within a block.
fn block_scalar_name(i: usize) -> String {
    let mut i = i;
    if i < 3 {
        return format!("lambda{}", i + 1);
    }
    i -= 3;
    if i < 9 {
        return format!("c{}[{}]", i / 3 + 1, i % 3);
    }
    i -= 9;
    if i < 27 {
        return format!("b{}[{}]", i / 9 + 1, i % 9);
    }
    i -= 27;
    let per = 27 + 3 * N_GAUSSIANS;
    let (k, j) = (i / per, i % per);
    let field = if j < 27 {
        format!("g{}[{}]", j / 9 + 1, j % 9)
    } else {
        let j = j - 27;
        let name = ["gamma", "mu", "log_delta"][j / N_GAUSSIANS];
        format!("{name}[{}]", j % N_GAUSSIANS)
    };
    format!("channel{k}.{field}")
}

/// All learnable quantities. `blocks` holds one entry per iteration, or a
/// single entry shared by all iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub blocks: Vec<BlockParams>,
    pub iterations: usize,
}

impl NetParams {
    pub fn random(seed: u64, init: &InitSpec) -> Self {
        Self::random_with(seed, init, N_BLOCKS, false)
    }

    pub fn random_with(seed: u64, init: &InitSpec, iterations: usize, shared: bool) -> Self {
        let mut rng = SplitMix64::new(seed);
        let n = if shared { 1 } else { iterations };
        NetParams {
            blocks: (0..n).map(|_| BlockParams::random(&mut rng, init)).collect(),
            iterations,
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            blocks: vec![BlockParams::zeros(); self.blocks.len()],
            iterations: self.iterations,
        }
    }

    pub fn shared(&self) -> bool {
        self.blocks.len() == 1 && self.iterations > 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.blocks.len() == self.iterations || self.blocks.len() == 1) {
            return Err(Error::invalid(format!(
                "{} parameter blocks for {} iterations",
                self.blocks.len(),
                self.iterations
            )));
        }
        if let Some(i) = self.to_flat().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {}", self.scalar_name(i))));
        }
        Ok(())
    }

    pub fn block_for(&self, t: usize) -> usize {
        if self.blocks.len() == 1 {
            0
        } else {
            t
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len() * BLOCK_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.to_flat()).collect()
    }

    pub fn scalars_mut(&mut self) -> Vec<&mut f64> {
        self.blocks.iter_mut().flat_map(|b| b.scalars_mut()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape(format!("flat parameters {} != {}", flat.len(), self.len())));
        }
        for (dst, &v) in self.scalars_mut().into_iter().zip(flat) {
            *dst = v;
        }
        Ok(())
    }

    pub fn from_flat(flat: &[f64], n_blocks: usize, iterations: usize) -> Result<Self> {
        let mut p = NetParams {
            blocks: vec![BlockParams::zeros(); n_blocks],
            iterations,
        };
        p.set_flat(flat)?;
        Ok(p)
    }

    /// e.g. `block[1].channel2.mu[0]`.
    pub fn scalar_name(&self, i: usize) -> String {
        format!("block[{}].{}", i / BLOCK_LEN, block_scalar_name(i % BLOCK_LEN))
    }
}

/// Everything the blocks need that depends only on the input sinogram.
#[derive(Debug, Clone)]
pub struct NetInput {
    pub y_l: Sinogram,
    pub hr_geom: Geometry,
    pub grid: Grid,
    /// FBP of the up-sampled input on the high-resolution detector.
    pub x0: Image,
    /// FBP of the input itself, reconstructed on the output grid.
    pub x_l: Image,
    /// High-resolution projector used inside the blocks.
    pub projector: Arc<Projector>,
}

/// `fbp(upsample_det(y_l))` on the high-resolution geometry.
pub fn init_input(y_l: &Sinogram, hr_geom: &Geometry, grid: Grid) -> Result<Image> {
    let lr_geom = hr_geom.lower_res()?;
    lr_geom.check_sinogram(y_l)?;
    let up = upsample_det(y_l)?;
    fbp(&up, hr_geom, grid)
}

impl NetInput {
    pub fn prepare(y_l: &Sinogram, hr_geom: &Geometry, grid: Grid) -> Result<Self> {
        Self::prepare_with(y_l, Projector::new(hr_geom, grid)?)
    }

    /// Like [`NetInput::prepare`], with the projector's system matrix
    /// precomputed when it fits in memory. Worth it when the same input is
    /// run many times.
    pub fn prepare_cached(y_l: &Sinogram, hr_geom: &Geometry, grid: Grid) -> Result<Self> {
        Self::prepare_with(y_l, Projector::auto(hr_geom, grid)?)
    }

    fn prepare_with(y_l: &Sinogram, projector: Projector) -> Result<Self> {
        let (hr_geom, grid) = (projector.geometry(), projector.grid());
        let lr_geom = hr_geom.lower_res()?;
        lr_geom.check_sinogram(y_l)?;
        y_l.check_finite()?;
        let x0 = init_input(y_l, hr_geom, grid)?;
        let x_l = fbp(y_l, &lr_geom, grid)?;
        Ok(NetInput {
            y_l: y_l.clone(),
            hr_geom: hr_geom.clone(),
            grid,
            x0,
            x_l,
            projector: Arc::new(projector),
        })
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Sinogram-fidelity descent direction, with the intermediates needed for
/// back-propagation.
#[derive(Debug, Clone)]
struct SrTape {
    s1: Sinogram,
    s2: Sinogram,
    s3: Sinogram,
    u: Sinogram,
    u1: Sinogram,
    u2: Sinogram,
}

fn sr_forward(x: &Image, y_l: &Sinogram, p: &BlockParams, hr: &Projector) -> Result<(Image, SrTape)> {
    let s1 = hr.project(x)?;
    let s2 = conv_sino(&s1, &p.c[0]);
    let s3 = conv_sino(&s2, &p.c[1]);
    let s4 = conv_sino(&s3, &p.c[2]);
    let mut r = downsample_det(&s4)?;
    r.same_shape(y_l)?;
    axpy(&mut r.data, -1.0, &y_l.data);
    let u = upsample_det(&r)?;
    let u1 = conv_adjoint_sino(&u, &p.c[2]);
    let u2 = conv_adjoint_sino(&u1, &p.c[1]);
    let u3 = conv_adjoint_sino(&u2, &p.c[0]);
    let g = hr.fbp(&u3)?;
    Ok((g, SrTape { s1, s2, s3, u, u1, u2 }))
}

/// `F(C̄₁∗C̄₂∗C̄₃∗D↑(D↓(C₃∗C₂∗C₁∗A x) − y_l))`.
pub fn sr_fidelity_grad(x: &Image, y_l: &Sinogram, p: &BlockParams, hr_geom: &Geometry) -> Result<Image> {
    Ok(sr_forward(x, y_l, p, &Projector::new(hr_geom, x.grid())?)?.0)
}

#[derive(Debug, Clone)]
struct DeblurTape {
    b1: Image,
    b2: Image,
    e: Image,
    e1: Image,
    e2: Image,
}

fn deblur_forward(x: &Image, x_l: &Image, p: &BlockParams) -> Result<(Image, DeblurTape)> {
    x.same_shape(x_l)?;
    let b1 = conv_img(x, &p.b[0]);
    let b2 = conv_img(&b1, &p.b[1]);
    let mut e = conv_img(&b2, &p.b[2]);
    axpy(&mut e.data, -1.0, &x_l.data);
    let e1 = conv_adjoint_img(&e, &p.b[2]);
    let e2 = conv_adjoint_img(&e1, &p.b[1]);
    let g = conv_adjoint_img(&e2, &p.b[0]);
    Ok((g, DeblurTape { b1, b2, e, e1, e2 }))
}

/// `B̄₁∗B̄₂∗B̄₃∗(B₃∗B₂∗B₁∗x − x_l)`.
pub fn deblur_fidelity_grad(x: &Image, x_l: &Image, p: &BlockParams) -> Result<Image> {
    Ok(deblur_forward(x, x_l, p)?.0)
}

#[derive(Debug, Clone)]
struct BlockTape {
    x_in: Image,
    pre: Vec<f64>,
    g_sr: Image,
    g_db: Image,
    g_foe: Image,
    sr: SrTape,
    db: DeblurTape,
    foe: Vec<ChannelTape>,
}

fn block_forward(x: &Image, input: &NetInput, p: &BlockParams) -> Result<(Image, BlockTape)> {
    let (g_sr, sr) = sr_forward(x, &input.y_l, p, &input.projector)?;
    let (g_db, db) = deblur_forward(x, &input.x_l, p)?;
    let (g_foe, foe) = foe_forward(x, &p.channels);
    let mut pre = x.data.clone();
    axpy(&mut pre, -p.lambda[0], &g_sr.data);
    axpy(&mut pre, -p.lambda[1], &g_db.data);
    axpy(&mut pre, -p.lambda[2], &g_foe.data);
    let out = Image {
        n: x.n,
        pixel_size: x.pixel_size,
        data: pre.iter().map(|&v| v.max(0.0)).collect(),
    };
    Ok((
        out,
        BlockTape {
            x_in: x.clone(),
            pre,
            g_sr,
            g_db,
            g_foe,
            sr,
            db,
            foe,
        },
    ))
}

/// One unrolled iteration with its positivity clamp.
pub fn sadir_block(x: &Image, y_l: &Sinogram, x_l: &Image, p: &BlockParams, hr_geom: &Geometry) -> Result<Image> {
    let input = NetInput {
        y_l: y_l.clone(),
        hr_geom: hr_geom.clone(),
        grid: x.grid(),
        x0: Image::zeros(x.grid()),
        x_l: x_l.clone(),
        projector: Arc::new(Projector::new(hr_geom, x.grid())?),
    };
    Ok(block_forward(x, &input, p)?.0)
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    params: NetParams,
    projector: Arc<Projector>,
    grid: Grid,
    blocks: Vec<BlockTape>,
}

pub fn net_forward(y_l: &Sinogram, params: &NetParams, hr_geom: &Geometry, grid: Grid) -> Result<(Image, Tape)> {
    let input = NetInput::prepare(y_l, hr_geom, grid)?;
    forward_prepared(&input, params)
}

pub fn forward_prepared(input: &NetInput, params: &NetParams) -> Result<(Image, Tape)> {
    params.validate()?;
    let mut x = input.x0.clone();
    let mut blocks = Vec::with_capacity(params.iterations);
    for t in 0..params.iterations {
        let (next, tape) = block_forward(&x, input, &params.blocks[params.block_for(t)])?;
        blocks.push(tape);
        x = next;
    }
    Ok((
        x,
        Tape {
            params: params.clone(),
            projector: Arc::clone(&input.projector),
            grid: input.grid,
            blocks,
        },
    ))
}

fn add_k1(acc: &mut Kernel1D, k: Kernel1D) {
    acc.0.iter_mut().zip(k.0).for_each(|(a, b)| *a += b);
}

fn add_k2(acc: &mut Kernel2D, k: Kernel2D) {
    acc.0.iter_mut().zip(k.0).for_each(|(a, b)| *a += b);
}

fn scaled(img: &Image, a: f64) -> Image {
    Image {
        n: img.n,
        pixel_size: img.pixel_size,
        data: img.data.iter().map(|v| a * v).collect(),
    }
}

fn block_backward(
    tape: &BlockTape,
    p: &BlockParams,
    hr: &Projector,
    d_out: &Image,
    grads: &mut BlockParams,
) -> Result<Image> {
    let x = &tape.x_in;
    let d_pre = Image {
        n: x.n,
        pixel_size: x.pixel_size,
        data: d_out
            .data
            .iter()
            .zip(&tape.pre)
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    };
    grads.lambda[0] -= dot(&d_pre.data, &tape.g_sr.data);
    grads.lambda[1] -= dot(&d_pre.data, &tape.g_db.data);
    grads.lambda[2] -= dot(&d_pre.data, &tape.g_foe.data);
    let mut d_x = d_pre.clone();

    // sinogram fidelity
    let sr = &tape.sr;
    let d_u3 = hr.fbp_adjoint(&scaled(&d_pre, -p.lambda[0]))?;
    add_k1(&mut grads.c[0], conv_kernel_grad_sino(&sr.u2, &d_u3).rotate180());
    let d_u2 = conv_sino(&d_u3, &p.c[0]);
    add_k1(&mut grads.c[1], conv_kernel_grad_sino(&sr.u1, &d_u2).rotate180());
    let d_u1 = conv_sino(&d_u2, &p.c[1]);
    add_k1(&mut grads.c[2], conv_kernel_grad_sino(&sr.u, &d_u1).rotate180());
    let d_u = conv_sino(&d_u1, &p.c[2]);
    let d_r = upsample_adjoint(&d_u)?;
    let d_s4 = downsample_adjoint(&d_r);
    add_k1(&mut grads.c[2], conv_kernel_grad_sino(&sr.s3, &d_s4));
    let d_s3 = conv_adjoint_sino(&d_s4, &p.c[2]);
    add_k1(&mut grads.c[1], conv_kernel_grad_sino(&sr.s2, &d_s3));
    let d_s2 = conv_adjoint_sino(&d_s3, &p.c[1]);
    add_k1(&mut grads.c[0], conv_kernel_grad_sino(&sr.s1, &d_s2));
    let d_s1 = conv_adjoint_sino(&d_s2, &p.c[0]);
    let from_sr = hr.back_project(&d_s1)?;
    axpy(&mut d_x.data, 1.0, &from_sr.data);

    // image deblur fidelity
    let db = &tape.db;
    let d_g = scaled(&d_pre, -p.lambda[1]);
    add_k2(&mut grads.b[0], conv_kernel_grad_img(&db.e2, &d_g).rotate180());
    let d_e2 = conv_img(&d_g, &p.b[0]);
    add_k2(&mut grads.b[1], conv_kernel_grad_img(&db.e1, &d_e2).rotate180());
    let d_e1 = conv_img(&d_e2, &p.b[1]);
    add_k2(&mut grads.b[2], conv_kernel_grad_img(&db.e, &d_e1).rotate180());
    let d_e = conv_img(&d_e1, &p.b[2]);
    add_k2(&mut grads.b[2], conv_kernel_grad_img(&db.b2, &d_e));
    let d_b2 = conv_adjoint_img(&d_e, &p.b[2]);
    add_k2(&mut grads.b[1], conv_kernel_grad_img(&db.b1, &d_b2));
    let d_b1 = conv_adjoint_img(&d_b2, &p.b[1]);
    add_k2(&mut grads.b[0], conv_kernel_grad_img(x, &d_b1));
    let from_db = conv_adjoint_img(&d_b1, &p.b[0]);
    axpy(&mut d_x.data, 1.0, &from_db.data);

    // prior
    let (from_foe, ch_grads) = foe_backward(x, &p.channels, &tape.foe, &scaled(&d_pre, -p.lambda[2]));
    axpy(&mut d_x.data, 1.0, &from_foe.data);
    for (acc, g) in grads.channels.iter_mut().zip(ch_grads) {
        add_k2(&mut acc.g1, g.g1);
        add_k2(&mut acc.g2, g.g2);
        add_k2(&mut acc.g3, g.g3);
        for n in 0..N_GAUSSIANS {
            acc.gmm.gamma[n] += g.gamma[n];
            acc.gmm.mu[n] += g.mu[n];
            acc.gmm.log_delta[n] += g.log_delta[n];
        }
    }
    Ok(d_x)
}

/// Reverse-mode gradients of a scalar loss with respect to every parameter,
/// given `d_out = ∂L/∂(network output)`.
pub fn net_backward(tape: &Tape, d_out: &Image) -> Result<NetParams> {
    if d_out.n != tape.grid.n {
        return Err(Error::shape(format!(
            "output gradient side {} != tape grid {}",
            d_out.n, tape.grid.n
        )));
    }
    if tape.blocks.len() != tape.params.iterations {
        return Err(Error::invalid("tape does not match its parameters"));
    }
    let mut grads = tape.params.zeros_like();
    let mut d = d_out.clone();
    for t in (0..tape.blocks.len()).rev() {
        let b = tape.params.block_for(t);
        d = block_backward(&tape.blocks[t], &tape.params.blocks[b], &tape.projector, &d, &mut grads.blocks[b])?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomo::forward_project;

    fn toy() -> (Sinogram, Geometry, Grid) {
        let grid = Grid::new(12, 1.0).unwrap();
        let hr = Geometry::half_turn(8, 24, 0.75).unwrap();
        let lr = hr.lower_res().unwrap();
        let mut img = Image::zeros(grid);
        for i in 0..12 {
            for j in 0..12 {
                img.set(i, j, 0.02 + 0.01 * (((i * 3 + j * 5) % 7) as f64 / 7.0));
            }
        }
        let y_l = forward_project(&img, &lr).unwrap();
        (y_l, hr, grid)
    }

    #[test]
    fn flat_layout_round_trips() {
        let p = NetParams::random(3, &InitSpec::default());
        assert_eq!(p.len(), 3 * BLOCK_LEN);
        assert_eq!(BLOCK_LEN, 195);
        let q = NetParams::from_flat(&p.to_flat(), 3, 3).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.scalar_name(0), "block[0].lambda1");
        assert_eq!(p.scalar_name(BLOCK_LEN + 3), "block[1].c1[0]");
        assert_eq!(p.scalar_name(38), "block[0].b3[8]");
        assert_eq!(p.scalar_name(39), "block[0].channel0.g1[0]");
        assert_eq!(p.scalar_name(39 + 27), "block[0].channel0.gamma[0]");
        assert_eq!(p.scalar_name(BLOCK_LEN - 1), "block[0].channel3.log_delta[3]");
    }

    #[test]
    fn init_places_means_and_deltas() {
        let p = NetParams::random(1, &InitSpec::default());
        let g = p.blocks[0].channels[2].gmm;
        assert_eq!(g.mu[0], -0.01);
        assert_eq!(g.mu[3], 0.01);
        assert!(g.log_delta.iter().all(|&v| v == (1e-4f64).ln()));
        assert_eq!(p.blocks[1].lambda, [0.1; 3]);
        assert_ne!(p.blocks[0].c, p.blocks[1].c);
    }

    #[test]
    fn zero_lambdas_return_clamped_init() {
        let (y_l, hr, grid) = toy();
        let mut p = NetParams::random(5, &InitSpec::default());
        for b in p.blocks.iter_mut() {
            b.lambda = [0.0; 3];
        }
        let (out, _) = net_forward(&y_l, &p, &hr, grid).unwrap();
        let x0 = init_input(&y_l, &hr, grid).unwrap();
        let expected: Vec<f64> = x0.data.iter().map(|v| v.max(0.0)).collect();
        assert_eq!(out.data, expected);
    }

    #[test]
    fn forward_is_deterministic_and_nonnegative() {
        let (y_l, hr, grid) = toy();
        let p = NetParams::random(5, &InitSpec::default());
        let (a, _) = net_forward(&y_l, &p, &hr, grid).unwrap();
        let (b, _) = net_forward(&y_l, &p, &hr, grid).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (y_l, hr, grid) = toy();
        let p = NetParams::random(5, &InitSpec::default());
        let (_, tape) = net_forward(&y_l, &p, &hr, grid).unwrap();
        let g = net_backward(&tape, &Image::zeros(grid)).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deblur_only_block_closed_form() {
        let grid = Grid::new(8, 1.0).unwrap();
        let hr = Geometry::half_turn(4, 16, 1.0).unwrap();
        let y_l = Sinogram::for_geometry(&hr.lower_res().unwrap());
        let x = Image::from_vec(grid, (0..64).map(|v| (v % 5) as f64 * 0.01).collect()).unwrap();
        let x_l = Image::from_vec(grid, (0..64).map(|v| ((v * 7) % 3) as f64 * 0.02 - 0.01).collect()).unwrap();
        let mut p = BlockParams::zeros();
        p.b = [Kernel2D::DELTA; 3];
        let lam = 0.3;
        p.lambda = [0.0, lam, 0.0];
        let out = sadir_block(&x, &y_l, &x_l, &p, &hr).unwrap();
        for k in 0..64 {
            let expected = ((1.0 - lam) * x.data[k] + lam * x_l.data[k]).max(0.0);
            assert!((out.data[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_residual_gives_zero_sr_direction() {
        // with delta kernels and y_l = D↓(A x) the residual vanishes
        let (_, hr, grid) = toy();
        let x = Image::from_vec(grid, (0..144).map(|v| (v % 11) as f64 * 0.003).collect()).unwrap();
        let y_l = downsample_det(&forward_project(&x, &hr).unwrap()).unwrap();
        let mut p = BlockParams::zeros();
        p.c = [Kernel1D::DELTA; 3];
        let g = sr_fidelity_grad(&x, &y_l, &p, &hr).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deblur_direction_is_positive_semidefinite() {
        let grid = Grid::new(8, 1.0).unwrap();
        let sym = Kernel2D([0.1, 0.2, 0.1, 0.2, 0.5, 0.2, 0.1, 0.2, 0.1]);
        let mut p = BlockParams::zeros();
        p.b = [sym; 3];
        let zero = Image::zeros(grid);
        for s in 0..10u64 {
            let x = Image::from_vec(grid, (0..64).map(|v| (((v as u64 * 31 + s * 17) % 13) as f64 - 6.0) / 6.0).collect()).unwrap();
            let g = deblur_fidelity_grad(&x, &zero, &p).unwrap();
            assert!(dot(&x.data, &g.data) >= 0.0);
        }
    }
}
