//! Zero-shot training: synthesize a lower-resolution copy of the acquired
//! sinogram, fit the network to map it back to the acquired resolution under
//! the joint l2/SSIM loss, then apply the fitted network to the acquired
//! sinogram itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{forward_prepared, net_backward, net_forward, InitSpec, NetInput, NetParams, N_BLOCKS};
use crate::rng::SplitMix64;
use crate::tomo::{fbp, forward_project};
use crate::types::{Geometry, Grid, Image, Sinogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ssim_window: usize,
    pub eps1: f64,
    pub eps2: f64,
    /// Dynamic range of attenuation values used for the SSIM constants (mm⁻¹).
    pub l_range: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init_std: f64,
    pub lambda_init: f64,
    /// Std of additive Gaussian noise on the synthesized low-resolution
    /// sinogram.
    pub noise_std: f64,
    /// Use the mean instead of the sum of squared differences in the loss.
    pub l2_mean: bool,
    pub shared_blocks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 500,
            seed: 0,
            ssim_window: 11,
            eps1: 0.01,
            eps2: 0.03,
            l_range: 0.082,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_std: 0.05,
            lambda_init: 0.1,
            noise_std: 0.0,
            l2_mean: false,
            shared_blocks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(Error::invalid("ssim_window must be odd"));
        }
        if !(self.l_range > 0.0) {
            return Err(Error::invalid("l_range must be positive"));
        }
        if !(self.noise_std >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        Ok(())
    }

    pub fn init_spec(&self) -> InitSpec {
        InitSpec {
            kernel_std: self.init_std,
            lambda: self.lambda_init,
            ..InitSpec::default()
        }
    }

    pub fn initial_params(&self) -> NetParams {
        NetParams::random_with(self.seed, &self.init_spec(), N_BLOCKS, self.shared_blocks)
    }

    fn c1(&self) -> f64 {
        (self.eps1 * self.l_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.eps2 * self.l_range).powi(2)
    }
}

/// `(y_l, x_ref)`: `x_ref` is the FBP of the acquired sinogram and `y_l`
/// its projection onto the half-resolution detector.
pub fn build_zsl_pair(y: &Sinogram, geom: &Geometry, grid: Grid, cfg: &TrainConfig) -> Result<(Sinogram, Image)> {
    geom.check_sinogram(y)?;
    let lr = geom.lower_res()?;
    let x_ref = fbp(y, geom, grid)?;
    let mut y_l = forward_project(&x_ref, &lr)?;
    if cfg.noise_std > 0.0 {
        let mut rng = SplitMix64::new(cfg.seed ^ 0x6E6F_6973_6500);
        y_l.data.iter_mut().for_each(|v| *v += rng.normal(0.0, cfg.noise_std));
    }
    Ok((y_l, x_ref))
}

// Sums over every w-long run along rows, then columns: output is
// (n-w+1)² window sums.
fn box_sums(x: &[f64], n: usize, w: usize) -> Vec<f64> {
    let m = n - w + 1;
    let mut rows = vec![0.0; n * m];
    for i in 0..n {
        let r = &x[i * n..(i + 1) * n];
        for j in 0..m {
            rows[i * m + j] = r[j..j + w].iter().sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..w {
                acc += rows[(i + k) * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

// Transpose of box_sums: each pixel receives the sum over windows covering it.
fn box_sums_adjoint(c: &[f64], n: usize, w: usize) -> Vec<f64> {
    let m = n - w + 1;
    let mut cols = vec![0.0; n * m];
    for i in 0..n {
        let k_lo = (i + 1).saturating_sub(w);
        let k_hi = i.min(m - 1);
        for j in 0..m {
            let mut acc = 0.0;
            for k in k_lo..=k_hi {
                acc += c[k * m + j];
            }
            cols[i * m + j] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k_lo = (j + 1).saturating_sub(w);
            let k_hi = j.min(m - 1);
            let mut acc = 0.0;
            for k in k_lo..=k_hi {
                acc += cols[i * m + k];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

struct SsimWindows {
    mp: Vec<f64>,
    mq: Vec<f64>,
    vp: Vec<f64>,
    vq: Vec<f64>,
    cov: Vec<f64>,
}

// Window means from box sums; second moments are accumulated about each
// window's own mean, which avoids the cancellation of E[p²] − μ² at
// attenuation-scale values.
fn ssim_windows(p: &Image, q: &Image, w: usize) -> SsimWindows {
    let n = p.n;
    let m = n - w + 1;
    let nw = (w * w) as f64;
    let mp: Vec<f64> = box_sums(&p.data, n, w).iter().map(|s| s / nw).collect();
    let mq: Vec<f64> = box_sums(&q.data, n, w).iter().map(|s| s / nw).collect();
    let (mut vp, mut vq, mut cov) = (vec![0.0; m * m], vec![0.0; m * m], vec![0.0; m * m]);
    for i in 0..m {
        for j in 0..m {
            let k = i * m + j;
            let (a, b) = (mp[k], mq[k]);
            let (mut spp, mut sqq, mut spq) = (0.0, 0.0, 0.0);
            for r in i..i + w {
                let row = r * n;
                for c in j..j + w {
                    let (dp, dq) = (p.data[row + c] - a, q.data[row + c] - b);
                    spp += dp * dp;
                    sqq += dq * dq;
                    spq += dp * dq;
                }
            }
            vp[k] = spp / nw;
            vq[k] = sqq / nw;
            cov[k] = spq / nw;
        }
    }
    SsimWindows { mp, mq, vp, vq, cov }
}

fn check_pair(p: &Image, q: &Image, w: usize) -> Result<()> {
    p.same_shape(q)?;
    if w > p.n {
        return Err(Error::invalid(format!("SSIM window {w} exceeds image side {}", p.n)));
    }
    Ok(())
}

/// Mean SSIM over all `w×w` windows with uniform weights and constants
/// `c₁ = (ε₁L)²`, `c₂ = (ε₂L)²`.
pub fn ssim(p: &Image, q: &Image, cfg: &TrainConfig) -> Result<f64> {
    Ok(ssim_with_grad(p, q, cfg, false)?.0)
}

/// SSIM and, optionally, its gradient with respect to `p`.
pub fn ssim_with_grad(p: &Image, q: &Image, cfg: &TrainConfig, want_grad: bool) -> Result<(f64, Option<Image>)> {
    let w = cfg.ssim_window;
    check_pair(p, q, w)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let s = ssim_windows(p, q, w);
    let n_windows = s.mp.len();
    let mut total = 0.0;
    let nw = (w * w) as f64;
    let (mut alpha, mut beta, mut gamma) = if want_grad {
        (vec![0.0; n_windows], vec![0.0; n_windows], vec![0.0; n_windows])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for k in 0..n_windows {
        let (mp, mq) = (s.mp[k], s.mq[k]);
        let a = 2.0 * mp * mq + c1;
        let b = 2.0 * s.cov[k] + c2;
        let c = mp * mp + mq * mq + c1;
        let d = s.vp[k] + s.vq[k] + c2;
        let val = (a * b) / (c * d);
        total += val;
        if want_grad {
            let d_mean = val * (2.0 * mq / a - 2.0 * mp / c);
            let d_var = -val / d;
            let d_cov = 2.0 * val / b;
            alpha[k] = (d_mean - 2.0 * mp * d_var - mq * d_cov) / nw;
            beta[k] = 2.0 * d_var / nw;
            gamma[k] = d_cov / nw;
        }
    }
    let value = total / n_windows as f64;
    if !want_grad {
        return Ok((value, None));
    }
    let n = p.n;
    let sa = box_sums_adjoint(&alpha, n, w);
    let sb = box_sums_adjoint(&beta, n, w);
    let sg = box_sums_adjoint(&gamma, n, w);
    let inv = 1.0 / n_windows as f64;
    let data = (0..n * n)
        .map(|i| inv * (sa[i] + p.data[i] * sb[i] + q.data[i] * sg[i]))
        .collect();
    Ok((value, Some(Image { n, pixel_size: p.pixel_size, data })))
}

/// `√(1 + Σ(x_h − x_ref)²)·(1 − SSIM(x_h, x_ref))`.
pub fn joint_loss(x_h: &Image, x_ref: &Image, cfg: &TrainConfig) -> Result<f64> {
    Ok(joint_loss_with_grad(x_h, x_ref, cfg, false)?.0)
}

/// Loss and its gradient with respect to `x_h`.
pub fn joint_loss_with_grad(
    x_h: &Image,
    x_ref: &Image,
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(f64, Option<Image>)> {
    let (s, ds) = ssim_with_grad(x_h, x_ref, cfg, want_grad)?;
    let count = if cfg.l2_mean { x_h.data.len() as f64 } else { 1.0 };
    let l2: f64 = x_h.data.iter().zip(&x_ref.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / count;
    let root = (1.0 + l2).sqrt();
    let loss = root * (1.0 - s);
    let grad = ds.map(|ds| {
        let data = x_h
            .data
            .iter()
            .zip(&x_ref.data)
            .zip(&ds.data)
            .map(|((a, b), g)| (a - b) / (count * root) * (1.0 - s) - root * g)
            .collect();
        Image {
            n: x_h.n,
            pixel_size: x_h.pixel_size,
            data,
        }
    });
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. On a non-finite gradient nothing is
/// modified and the offending index is returned.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<(), usize> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(i);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
        state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub initial: NetParams,
    /// Loss evaluated at the start of each epoch.
    pub losses: Vec<f64>,
}

/// Trains from the configured random initialization.
pub fn train(y: &Sinogram, geom: &Geometry, grid: Grid, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(y, geom, grid, cfg, |_, _| {})
}

pub fn train_with_progress(
    y: &Sinogram,
    geom: &Geometry,
    grid: Grid,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    y.check_finite()?;
    let (y_l, x_ref) = build_zsl_pair(y, geom, grid, cfg)?;
    let input = NetInput::prepare_cached(&y_l, geom, grid)?;
    let initial = cfg.initial_params();
    let mut params = initial.clone();
    let mut flat = params.to_flat();
    let mut state = AdamState::new(flat.len());
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (out, tape) = forward_prepared(&input, &params)?;
        let (loss, d_out) = joint_loss_with_grad(&out, &x_ref, cfg, true)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                epoch,
                detail: format!("loss = {loss}"),
            });
        }
        losses.push(loss);
        progress(epoch, loss);
        let grads = net_backward(&tape, &d_out.expect("gradient requested"))?;
        adam_step(&mut flat, &grads.to_flat(), &mut state, cfg).map_err(|i| Error::Numeric {
            epoch,
            detail: format!("non-finite gradient for {}", params.scalar_name(i)),
        })?;
        params.set_flat(&flat)?;
    }
    Ok(TrainOutcome {
        params,
        initial,
        losses,
    })
}

/// Applies trained parameters to the acquired sinogram, producing an image
/// with twice the pixels per side of the training grid.
pub fn reconstruct(y: &Sinogram, params: &NetParams, geom: &Geometry, grid2x: Grid) -> Result<Image> {
    geom.check_sinogram(y)?;
    let hr = geom.higher_res();
    Ok(net_forward(y, params, &hr, grid2x)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn rand_img(n: usize, seed: u64, scale: f64, offset: f64) -> Image {
        let mut r = lcg(seed);
        Image::from_vec(Grid::new(n, 1.0).unwrap(), (0..n * n).map(|_| offset + scale * r()).collect()).unwrap()
    }

    #[test]
    fn box_sums_match_direct() {
        let x = rand_img(9, 1, 1.0, 0.0);
        let s = box_sums(&x.data, 9, 3);
        for i in 0..7 {
            for j in 0..7 {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += x.get(i + a, j + b);
                    }
                }
                assert!((acc - s[i * 7 + j]).abs() < 1e-13);
            }
        }
        // adjoint identity
        let c: Vec<f64> = (0..49).map(|k| (k as f64).cos()).collect();
        let lhs: f64 = s.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = box_sums_adjoint(&c, 9, 3).iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn ssim_identities() {
        let cfg = TrainConfig::default();
        let x = rand_img(24, 2, 0.01, 0.02);
        assert_eq!(ssim(&x, &x, &cfg).unwrap(), 1.0);
        assert_eq!(joint_loss(&x, &x, &cfg).unwrap(), 0.0);
        let y = rand_img(24, 3, 0.01, 0.02);
        let (a, b) = (ssim(&x, &y, &cfg).unwrap(), ssim(&y, &x, &cfg).unwrap());
        assert!((a - b).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&a));
        assert!(joint_loss(&x, &y, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn ssim_of_reflected_texture_is_negative() {
        let cfg = TrainConfig::default();
        let x = rand_img(16, 4, 0.05, 0.02);
        let neg = Image { data: x.data.iter().map(|v| 0.04 - v).collect(), ..x.clone() };
        assert!(ssim(&x, &neg, &cfg).unwrap() < 0.0);
    }

    #[test]
    fn ssim_of_negated_checkerboard_is_negative() {
        let cfg = TrainConfig::default();
        let grid = Grid::new(24, 1.0).unwrap();
        let data = (0..576).map(|k| if (k / 24 + k % 24) % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let x = Image::from_vec(grid, data).unwrap();
        let neg = Image { data: x.data.iter().map(|v| -v).collect(), ..x.clone() };
        assert!(ssim(&x, &neg, &cfg).unwrap() < 0.0);
    }

    #[test]
    fn constant_images_closed_form() {
        let cfg = TrainConfig::default();
        let grid = Grid::new(15, 1.0).unwrap();
        let (m1, m2) = (0.02, 0.031);
        let a = Image::from_vec(grid, vec![m1; 225]).unwrap();
        let b = Image::from_vec(grid, vec![m2; 225]).unwrap();
        let c1 = (0.01f64 * 0.082).powi(2);
        let expected = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        assert!((ssim(&a, &b, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatch_and_oversized_window() {
        let cfg = TrainConfig::default();
        assert!(ssim(&rand_img(12, 1, 1.0, 0.0), &rand_img(13, 1, 1.0, 0.0), &cfg).is_err());
        assert!(ssim(&rand_img(8, 1, 1.0, 0.0), &rand_img(8, 1, 1.0, 0.0), &cfg).is_err());
    }

    #[test]
    fn loss_gradient_finite_differences() {
        let cfg = TrainConfig::default();
        let x = rand_img(16, 5, 0.01, 0.02);
        let r = rand_img(16, 6, 0.01, 0.02);
        let (_, g) = joint_loss_with_grad(&x, &r, &cfg, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for p in [0usize, 37, 120, 255] {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[p] += h;
            xm.data[p] -= h;
            let fd = (joint_loss(&xp, &r, &cfg).unwrap() - joint_loss(&xm, &r, &cfg).unwrap()) / (2.0 * h);
            let a = g.data[p];
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()), "pixel {p}: {a} vs {fd}");
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        let cfg = TrainConfig::default();
        let mut p = [0.5];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
        let expected = 0.5 - cfg.learning_rate * 1.0 / (1.0 + cfg.adam_eps);
        assert_eq!(p[0], expected);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let cfg = TrainConfig::default();
        let mut p = [0.5, -0.2];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.3, -0.1], &mut st, &cfg).unwrap();
        let (before, m_before) = (p, st.m.clone());
        let mut zero_state = AdamState { m: vec![0.0; 2], v: vec![0.0; 2], step: 3 };
        let mut q = before;
        adam_step(&mut q, &[0.0, 0.0], &mut zero_state, &cfg).unwrap();
        assert_eq!(q, before);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(st.m[0], 0.9 * m_before[0]);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut st, &cfg) == Err(0));
    }

    fn toy_sino() -> (Sinogram, Geometry, Grid) {
        let grid = Grid::new(16, 1.0).unwrap();
        let geom = Geometry::half_turn(12, 32, 0.75).unwrap();
        let mut img = Image::zeros(grid);
        for i in 0..16 {
            for j in 0..16 {
                let (x, y) = (j as f64 - 7.5, 7.5 - i as f64);
                if x * x + y * y < 36.0 {
                    img.set(i, j, 0.02 + if x > 0.0 { 0.01 } else { 0.0 });
                }
            }
        }
        (forward_project(&img, &geom).unwrap(), geom, grid)
    }

    #[test]
    fn zsl_pair_shapes_and_zero_input() {
        let (y, geom, grid) = toy_sino();
        let cfg = TrainConfig::default();
        let (y_l, x_ref) = build_zsl_pair(&y, &geom, grid, &cfg).unwrap();
        assert_eq!(y_l.n_det, 16);
        assert_eq!(y_l.det_spacing, 2.0 * y.det_spacing);
        assert_eq!(x_ref.n, 16);
        let zero = Sinogram::for_geometry(&geom);
        let (zl, zr) = build_zsl_pair(&zero, &geom, grid, &cfg).unwrap();
        assert!(zl.data.iter().chain(&zr.data).all(|&v| v == 0.0));
        let odd = Geometry::half_turn(12, 31, 0.75).unwrap();
        assert!(build_zsl_pair(&Sinogram::for_geometry(&odd), &odd, grid, &cfg).is_err());
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let (y, geom, grid) = toy_sino();
        let cfg = TrainConfig { epochs: 0, seed: 7, ssim_window: 5, ..TrainConfig::default() };
        let out = train(&y, &geom, grid, &cfg).unwrap();
        assert_eq!(out.params, cfg.initial_params());
        assert!(out.losses.is_empty());

        let cfg = TrainConfig { epochs: 3, ..cfg };
        let a = train(&y, &geom, grid, &cfg).unwrap();
        let b = train(&y, &geom, grid, &cfg).unwrap();
        assert_eq!(a.losses.len(), 3);
        assert!(a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, a.initial);
    }

    #[test]
    fn reconstruct_doubles_grid() {
        let (y, geom, grid) = toy_sino();
        let cfg = TrainConfig { epochs: 1, ssim_window: 5, ..TrainConfig::default() };
        let out = train(&y, &geom, grid, &cfg).unwrap();
        let img = reconstruct(&y, &out.params, &geom, grid.doubled()).unwrap();
        assert_eq!(img.n, 32);
        assert!(img.data.iter().all(|&v| v >= 0.0));
    }
}
