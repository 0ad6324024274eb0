//! Forward and backward kernels for the layer types the network uses.
//!
//! Convolutions are cross-correlations with zero padding that preserves the
//! spatial size (`pad = k / 2`), lowered to GEMM through im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Convolution weights: `kernel` is `(out, in, k, k)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
}

impl ConvWeights {
    pub fn zeros(in_channels: usize, out_channels: usize, size: usize) -> Self {
        Self {
            kernel: vec![0.0; out_channels * in_channels * size * size],
            bias: vec![0.0; out_channels],
            in_channels,
            out_channels,
            size,
        }
    }

    fn cols(&self) -> usize {
        self.in_channels * self.size * self.size
    }

    pub fn at(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.kernel[((o * self.in_channels + c) * self.size + ky) * self.size + kx]
    }

    pub fn at_mut(&mut self, o: usize, c: usize, ky: usize, kx: usize) -> &mut f64 {
        let k = self.size;
        &mut self.kernel[((o * self.in_channels + c) * k + ky) * k + kx]
    }
}

fn im2col(item: &[f64], channels: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let src = &item[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (x, v) in line.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *v = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], channels: usize, h: usize, w: usize, k: usize, item: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let dst = &mut item[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn view<'a>(rows: usize, cols: usize, data: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer sized by caller")
}

fn view_mut<'a>(rows: usize, cols: usize, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer sized by caller")
}

pub fn conv_forward(x: &Tensor4, w: &ConvWeights) -> Result<Tensor4> {
    if x.channels() != w.in_channels {
        return Err(Error::shape(
            format!("{} input channels", w.in_channels),
            format!("{} channels", x.channels()),
        ));
    }
    let [b, c, h, wd] = x.dims();
    let hw = h * wd;
    let mut out = Tensor4::zeros([b, w.out_channels, h, wd]);
    let kmat = view(w.out_channels, w.cols(), &w.kernel);
    let mut cols = if w.size == 1 { Vec::new() } else { vec![0.0; w.cols() * hw] };
    for bi in 0..b {
        let dst = out.item_mut(bi);
        for (o, &bias) in w.bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(bias);
        }
        let input = if w.size == 1 {
            x.item(bi)
        } else {
            im2col(x.item(bi), c, h, wd, w.size, &mut cols);
            &cols
        };
        let mut out_mat = view_mut(w.out_channels, hw, dst);
        general_mat_mul(1.0, &kmat, &view(w.cols(), hw, input), 1.0, &mut out_mat);
    }
    Ok(out)
}

/// Returns `dL/dx` and accumulates `dL/dkernel`, `dL/dbias` into `grad`.
pub fn conv_backward(x: &Tensor4, w: &ConvWeights, grad_out: &Tensor4, grad: &mut ConvWeights) -> Tensor4 {
    let [b, c, h, wd] = x.dims();
    let hw = h * wd;
    let mut grad_x = Tensor4::zeros(x.dims());
    let kmat = view(w.out_channels, w.cols(), &w.kernel);
    let mut cols = if w.size == 1 { Vec::new() } else { vec![0.0; w.cols() * hw] };
    let mut grad_cols = vec![0.0; w.cols() * hw];
    for bi in 0..b {
        let g = view(w.out_channels, hw, grad_out.item(bi));
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += grad_out.item(bi)[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        let input = if w.size == 1 {
            x.item(bi)
        } else {
            im2col(x.item(bi), c, h, wd, w.size, &mut cols);
            &cols
        };
        let mut gk = view_mut(w.out_channels, w.cols(), &mut grad.kernel);
        general_mat_mul(1.0, &g, &view(w.cols(), hw, input).t(), 1.0, &mut gk);

        if w.size == 1 {
            let mut gx = view_mut(c, hw, grad_x.item_mut(bi));
            general_mat_mul(1.0, &kmat.t(), &g, 0.0, &mut gx);
        } else {
            let mut gc = view_mut(w.cols(), hw, &mut grad_cols);
            general_mat_mul(1.0, &kmat.t(), &g, 0.0, &mut gc);
            col2im_add(&grad_cols, c, h, wd, w.size, grad_x.item_mut(bi));
        }
    }
    grad_x
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// False until a training-mode pass has produced running statistics.
    pub initialized: bool,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Values kept from a batch-norm forward pass for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    normalized: Tensor4,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running statistics with momentum [`BN_MOMENTUM`]; infer mode
/// uses the running statistics.
pub fn batch_norm_forward(
    x: &Tensor4,
    p: &mut BatchNormParams,
    mode: Mode,
    eps: f64,
    layer: usize,
) -> Result<(Tensor4, BnCache)> {
    if x.channels() != p.channels() {
        return Err(Error::shape(
            format!("{} channels", p.channels()),
            format!("{} channels", x.channels()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter("batch norm eps must be > 0".into()));
    }
    let [b, c, _, _] = x.dims();
    let n = (b * x.plane_len()) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    s += x.map(bi, ch).iter().sum::<f64>();
                }
                mean[ch] = s / n;
                let mut sq = 0.0;
                for bi in 0..b {
                    sq += x.map(bi, ch).iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
                var[ch] = sq / n;
                p.running_mean[ch] = BN_MOMENTUM * p.running_mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                p.running_var[ch] = BN_MOMENTUM * p.running_var[ch] + (1.0 - BN_MOMENTUM) * var[ch];
            }
            p.initialized = true;
        }
        Mode::Infer => {
            if !p.initialized {
                return Err(Error::UninitializedStats(layer));
            }
            mean.copy_from_slice(&p.running_mean);
            var.copy_from_slice(&p.running_var);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = x.clone();
    let mut out = x.clone();
    for bi in 0..b {
        for ch in 0..c {
            let (m, s, g, sh) = (mean[ch], inv_std[ch], p.gain[ch], p.shift[ch]);
            for (nv, ov) in normalized.map_mut(bi, ch).iter_mut().zip(out.map_mut(bi, ch).iter_mut()) {
                let xh = (*nv - m) * s;
                *nv = xh;
                *ov = g * xh + sh;
            }
        }
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

/// Returns `dL/dx`; accumulates `dL/dgain`, `dL/dshift`.
pub fn batch_norm_backward(
    cache: &BnCache,
    p: &BatchNormParams,
    grad_out: &Tensor4,
    grad_gain: &mut [f64],
    grad_shift: &mut [f64],
) -> Tensor4 {
    let [b, c, _, _] = grad_out.dims();
    let n = (b * grad_out.plane_len()) as f64;
    let mut grad_x = Tensor4::zeros(grad_out.dims());
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for bi in 0..b {
            for (g, xh) in grad_out.map(bi, ch).iter().zip(cache.normalized.map(bi, ch)) {
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        grad_gain[ch] += sum_gx;
        grad_shift[ch] += sum_g;
        let scale = p.gain[ch] * cache.inv_std[ch];
        for bi in 0..b {
            let gx = grad_x.map_mut(bi, ch);
            let go = grad_out.map(bi, ch);
            let xh = cache.normalized.map(bi, ch);
            match cache.mode {
                Mode::Train => {
                    for i in 0..gx.len() {
                        gx[i] = scale * (go[i] - sum_g / n - xh[i] * sum_gx / n);
                    }
                }
                Mode::Infer => {
                    for i in 0..gx.len() {
                        gx[i] = scale * go[i];
                    }
                }
            }
        }
    }
    grad_x
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given its output (positive where the input was).
pub fn relu_backward(out: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let mut g = grad_out.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(out.data()) {
        if ov <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Channel-axis concatenation, `source` channels first.
pub fn concat_forward(source: &Tensor4, current: &Tensor4) -> Result<Tensor4> {
    let [b, cs, h, w] = source.dims();
    let [b2, cc, h2, w2] = current.dims();
    if b != b2 || h != h2 || w != w2 {
        return Err(Error::shape(
            format!("batch/spatial ({b}, {h}, {w})"),
            format!("({b2}, {h2}, {w2})"),
        ));
    }
    let mut out = Tensor4::zeros([b, cs + cc, h, w]);
    let (ns, nc) = (source.item(0).len(), current.item(0).len());
    for bi in 0..b {
        let dst = out.item_mut(bi);
        dst[..ns].copy_from_slice(source.item(bi));
        dst[ns..ns + nc].copy_from_slice(current.item(bi));
    }
    Ok(out)
}

/// Splits a concat gradient back into `(source, current)` parts.
pub fn concat_backward(grad_out: &Tensor4, source_channels: usize) -> (Tensor4, Tensor4) {
    let [b, c, h, w] = grad_out.dims();
    let mut gs = Tensor4::zeros([b, source_channels, h, w]);
    let mut gc = Tensor4::zeros([b, c - source_channels, h, w]);
    let ns = source_channels * h * w;
    for bi in 0..b {
        let src = grad_out.item(bi);
        gs.item_mut(bi).copy_from_slice(&src[..ns]);
        gc.item_mut(bi).copy_from_slice(&src[ns..]);
    }
    (gs, gc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use rand::Rng;

    fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = seeding::stream(seed, 0);
        Tensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    fn random_conv(cin: usize, cout: usize, k: usize, seed: u64) -> ConvWeights {
        let mut rng = seeding::stream(seed, 1);
        let mut w = ConvWeights::zeros(cin, cout, k);
        w.kernel.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        w.bias.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        w
    }

    /// Direct six-loop cross-correlation with zero padding.
    fn conv_oracle(x: &Tensor4, w: &ConvWeights) -> Tensor4 {
        let [b, c, h, wd] = x.dims();
        let pad = (w.size / 2) as isize;
        Tensor4::from_fn([b, w.out_channels, h, wd], |[bi, o, y, xx]| {
            let mut acc = w.bias[o];
            for ci in 0..c {
                for ky in 0..w.size {
                    for kx in 0..w.size {
                        let sy = y as isize + ky as isize - pad;
                        let sx = xx as isize + kx as isize - pad;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < wd as isize {
                            acc += w.at(o, ci, ky, kx) * x.get([bi, ci, sy as usize, sx as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| {
            m.max((x - y).abs() / (x.abs().max(y.abs()).max(1e-6)))
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        for k in [1, 3] {
            let x = random_tensor([1, 2, 5, 5], 1);
            let w = random_conv(2, 3, k, 2);
            let got = conv_forward(&x, &w).unwrap();
            let want = conv_oracle(&x, &w);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identity_one_by_one() {
        let x = random_tensor([2, 3, 4, 6], 3);
        let mut w = ConvWeights::zeros(3, 3, 1);
        for c in 0..3 {
            *w.at_mut(c, c, 0, 0) = 1.0;
        }
        assert_eq!(conv_forward(&x, &w).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = random_tensor([1, 2, 3, 3], 4);
        let mut w = ConvWeights::zeros(2, 2, 3);
        w.bias = vec![0.5, -2.0];
        let out = conv_forward(&x, &w).unwrap();
        assert!(out.map(0, 0).iter().all(|&v| v == 0.5));
        assert!(out.map(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = random_tensor([1, 2, 3, 3], 4);
        let w = ConvWeights::zeros(3, 2, 3);
        assert!(matches!(conv_forward(&x, &w), Err(Error::Shape { .. })));
    }

    /// Loss = sum(weights * layer(x)); compares analytic gradients with
    /// central differences (h = 1e-5).
    fn check_conv_grads(k: usize, seed: u64) {
        let x = random_tensor([2, 2, 4, 5], seed);
        let w = random_conv(2, 3, k, seed + 1);
        let probe = random_tensor([2, 3, 4, 5], seed + 2);
        let loss = |x: &Tensor4, w: &ConvWeights| -> f64 {
            conv_forward(x, w).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut grad = ConvWeights::zeros(2, 3, k);
        let gx = conv_backward(&x, &w, &probe, &mut grad);
        let h = 1e-5;
        let mut fd_x = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            fd_x[i] = (loss(&p, &w) - loss(&m, &w)) / (2.0 * h);
        }
        assert!(max_rel(gx.data(), &fd_x) <= 1e-4);
        let mut fd_k = vec![0.0; w.kernel.len()];
        for i in 0..w.kernel.len() {
            let mut p = w.clone();
            p.kernel[i] += h;
            let mut m = w.clone();
            m.kernel[i] -= h;
            fd_k[i] = (loss(&x, &p) - loss(&x, &m)) / (2.0 * h);
        }
        assert!(max_rel(&grad.kernel, &fd_k) <= 1e-4);
        let mut fd_b = vec![0.0; 3];
        for i in 0..3 {
            let mut p = w.clone();
            p.bias[i] += h;
            let mut m = w.clone();
            m.bias[i] -= h;
            fd_b[i] = (loss(&x, &p) - loss(&x, &m)) / (2.0 * h);
        }
        assert!(max_rel(&grad.bias, &fd_b) <= 1e-4);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..5 {
            check_conv_grads(3, seed * 10);
            check_conv_grads(1, seed * 10 + 5);
        }
    }

    #[test]
    fn batch_norm_infer_identity() {
        let x = random_tensor([2, 3, 4, 4], 5);
        let mut p = BatchNormParams::new(3);
        p.initialized = true;
        let (out, _) = batch_norm_forward(&x, &mut p, Mode::Infer, 1e-12, 0).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn batch_norm_infer_needs_stats() {
        let x = random_tensor([1, 2, 2, 2], 5);
        let mut p = BatchNormParams::new(2);
        assert!(matches!(
            batch_norm_forward(&x, &mut p, Mode::Infer, BN_EPS, 7),
            Err(Error::UninitializedStats(7))
        ));
    }

    #[test]
    fn batch_norm_train_statistics() {
        let x = random_tensor([3, 2, 5, 4], 6);
        let mut p = BatchNormParams::new(2);
        let (out, _) = batch_norm_forward(&x, &mut p, Mode::Train, BN_EPS, 0).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| out.map(b, c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
        assert!(p.initialized);
        // running statistics moved 10% toward the batch statistics
        let batch_mean: f64 = (0..3).flat_map(|b| x.map(b, 0).to_vec()).sum::<f64>() / 60.0;
        assert!((p.running_mean[0] - 0.1 * batch_mean).abs() < 1e-12);
    }

    fn check_bn_grads(mode: Mode, seed: u64) {
        let x = random_tensor([2, 3, 3, 4], seed);
        let mut p = BatchNormParams::new(3);
        let mut rng = seeding::stream(seed, 7);
        p.gain.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        p.shift.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        p.running_mean.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        p.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        p.initialized = true;
        let probe = random_tensor([2, 3, 3, 4], seed + 1);
        let loss = |x: &Tensor4, p: &BatchNormParams| -> f64 {
            let mut q = p.clone();
            let (out, _) = batch_norm_forward(x, &mut q, mode, BN_EPS, 0).unwrap();
            out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut q = p.clone();
        let (_, cache) = batch_norm_forward(&x, &mut q, mode, BN_EPS, 0).unwrap();
        let mut gg = vec![0.0; 3];
        let mut gs = vec![0.0; 3];
        let gx = batch_norm_backward(&cache, &p, &probe, &mut gg, &mut gs);
        let h = 1e-5;
        let fd: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut a = x.clone();
                a.data_mut()[i] += h;
                let mut b = x.clone();
                b.data_mut()[i] -= h;
                (loss(&a, &p) - loss(&b, &p)) / (2.0 * h)
            })
            .collect();
        assert!(max_rel(gx.data(), &fd) <= 1e-4, "{mode:?}");
        let fd_gain: Vec<f64> = (0..3)
            .map(|c| {
                let mut a = p.clone();
                a.gain[c] += h;
                let mut b = p.clone();
                b.gain[c] -= h;
                (loss(&x, &a) - loss(&x, &b)) / (2.0 * h)
            })
            .collect();
        assert!(max_rel(&gg, &fd_gain) <= 1e-4);
        let fd_shift: Vec<f64> = (0..3)
            .map(|c| {
                let mut a = p.clone();
                a.shift[c] += h;
                let mut b = p.clone();
                b.shift[c] -= h;
                (loss(&x, &a) - loss(&x, &b)) / (2.0 * h)
            })
            .collect();
        assert!(max_rel(&gs, &fd_shift) <= 1e-4);
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        for seed in 0..5 {
            check_bn_grads(Mode::Train, seed * 3);
            check_bn_grads(Mode::Infer, seed * 3 + 1);
        }
    }

    #[test]
    fn relu_cases() {
        let x = Tensor4::from_fn([1, 1, 2, 3], |[_, _, y, xx]| (y * 3 + xx) as f64);
        let neg = Tensor4::from_fn([1, 1, 2, 3], |i| -x.get(i));
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        assert_eq!(relu_forward(&x), x);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        for seed in 0..5 {
            // keep entries away from the kink so central differences are exact
            let mut x = random_tensor([1, 2, 3, 3], seed);
            x.data_mut().iter_mut().for_each(|v| {
                if v.abs() < 0.05 {
                    *v += 0.1
                }
            });
            let probe = random_tensor([1, 2, 3, 3], seed + 9);
            let out = relu_forward(&x);
            let g = relu_backward(&out, &probe);
            let h = 1e-5;
            for i in 0..x.len() {
                let mut a = x.clone();
                a.data_mut()[i] += h;
                let mut b = x.clone();
                b.data_mut()[i] -= h;
                let la: f64 = relu_forward(&a).data().iter().zip(probe.data()).map(|(p, q)| p * q).sum();
                let lb: f64 = relu_forward(&b).data().iter().zip(probe.data()).map(|(p, q)| p * q).sum();
                let fd = (la - lb) / (2.0 * h);
                assert!((g.data()[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-6) + 1e-9);
            }
        }
    }

    #[test]
    fn concat_shapes_and_split() {
        let a = random_tensor([2, 4, 3, 5], 1);
        let b = random_tensor([2, 8, 3, 5], 2);
        let c = concat_forward(&a, &b).unwrap();
        assert_eq!(c.dims(), [2, 12, 3, 5]);
        assert_eq!(c.map(1, 0), a.map(1, 0));
        assert_eq!(c.map(1, 4), b.map(1, 0));
        let (ga, gb) = concat_backward(&c, 4);
        assert_eq!((ga, gb), (a.clone(), b));
        let bad = random_tensor([2, 8, 3, 4], 3);
        assert!(concat_forward(&a, &bad).is_err());
    }
}
