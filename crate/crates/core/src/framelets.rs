//! Convolutional framelets: frame/dual-frame pairs, local filter banks and the
//! encoder/decoder pair built on the Hankel lift.
//!
//! With `Phi~ Phi^T = I` and `Psi Psi~^T = I`,
//! `H(f) = Phi~ Phi^T H(f) Psi Psi~^T`, so the coefficients
//! `C = Phi^T H(f) Psi` determine `f` through `H(f) = Phi~ C Psi~^T` followed
//! by the (1/d-scaled) Hankel adjoint. Every product `H(f) psi` is a circular
//! convolution, which is what makes the pair a convolutional encoder/decoder.
//! The coefficient matrix is `m x q` for an `n x m` frame.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hankel::{circular_convolve, hankel_adjoint};
use crate::seeding;

/// Global (non-local) basis pair `(Phi, Phi~)`, both `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub phi: DMatrix<f64>,
    pub phi_dual: DMatrix<f64>,
}

impl FramePair {
    pub fn new(phi: DMatrix<f64>, phi_dual: DMatrix<f64>) -> Result<Self> {
        if phi.shape() != phi_dual.shape() {
            return Err(Error::shape(
                format!("{:?} (phi)", phi.shape()),
                format!("{:?} (phi_dual)", phi_dual.shape()),
            ));
        }
        Ok(Self { phi, phi_dual })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            phi: DMatrix::identity(n, n),
            phi_dual: DMatrix::identity(n, n),
        }
    }

    /// Random orthogonal basis, its own dual.
    pub fn orthogonal(n: usize, seed: u64) -> Self {
        let q = random_orthogonal(n, seed);
        Self {
            phi: q.clone(),
            phi_dual: q,
        }
    }

    /// Redundant tight frame `[Q1 Q2] / sqrt(2)` with `m = 2n`, self-dual.
    pub fn redundant(n: usize, seed: u64) -> Self {
        let q1 = random_orthogonal(n, seed);
        let q2 = random_orthogonal(n, seed.wrapping_add(0x9e37_79b9));
        let mut phi = DMatrix::zeros(n, 2 * n);
        phi.columns_mut(0, n).copy_from(&q1);
        phi.columns_mut(n, n).copy_from(&q2);
        phi /= std::f64::consts::SQRT_2;
        Self {
            phi: phi.clone(),
            phi_dual: phi,
        }
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn m(&self) -> usize {
        self.phi.ncols()
    }

    /// `max |Phi~ Phi^T - I|`.
    pub fn frame_residual(&self) -> f64 {
        let prod = &self.phi_dual * self.phi.transpose();
        max_abs_diff_identity(&prod)
    }
}

/// Local filters. `psi` and `psi_dual` are `(d*p) x q`: block row `c` holds the
/// taps of every filter for input channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    psi: DMatrix<f64>,
    psi_dual: DMatrix<f64>,
    taps: usize,
    channels: usize,
}

impl FilterBank {
    pub fn new(psi: DMatrix<f64>, psi_dual: DMatrix<f64>, taps: usize, channels: usize) -> Result<Self> {
        if taps == 0 || channels == 0 {
            return Err(Error::Parameter("filter bank needs taps, channels >= 1".into()));
        }
        if psi.nrows() != taps * channels {
            return Err(Error::shape(
                format!("{} rows (d*p)", taps * channels),
                format!("{} rows", psi.nrows()),
            ));
        }
        if psi.shape() != psi_dual.shape() {
            return Err(Error::shape(
                format!("{:?} (psi)", psi.shape()),
                format!("{:?} (psi_dual)", psi_dual.shape()),
            ));
        }
        Ok(Self {
            psi,
            psi_dual,
            taps,
            channels,
        })
    }

    /// `q = d` unit impulses; the encoder then reproduces `H(f)` itself.
    pub fn impulses(taps: usize) -> Self {
        Self {
            psi: DMatrix::identity(taps, taps),
            psi_dual: DMatrix::identity(taps, taps),
            taps,
            channels: 1,
        }
    }

    /// Two-tap Haar pair (low-pass, high-pass), orthonormal.
    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = DMatrix::from_row_slice(2, 2, &[h, h, h, -h]);
        Self {
            psi: psi.clone(),
            psi_dual: psi,
            taps: 2,
            channels: 1,
        }
    }

    /// Haar pair applied to each of `channels` input channels separately
    /// (`I_p ⊗ Haar`), square and orthonormal, so `q = 2 * channels`.
    pub fn haar_multi(channels: usize) -> Self {
        let haar = Self::haar().psi;
        let h2 = DMatrix::<f64>::identity(channels, channels).kronecker(&haar);
        Self {
            psi: h2.clone(),
            psi_dual: h2,
            taps: 2,
            channels,
        }
    }

    /// Square random orthonormal bank, `q = d * p`, its own dual.
    pub fn orthonormal(taps: usize, channels: usize, seed: u64) -> Self {
        let q = random_orthogonal(taps * channels, seed);
        Self {
            psi: q.clone(),
            psi_dual: q,
            taps,
            channels,
        }
    }

    /// Redundant tight bank `[Q1 Q2] / sqrt(2)`, `q = 2 d p`.
    pub fn redundant(taps: usize, channels: usize, seed: u64) -> Self {
        let n = taps * channels;
        let frame = FramePair::redundant(n, seed);
        Self {
            psi: frame.phi.clone(),
            psi_dual: frame.phi,
            taps,
            channels,
        }
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn filters(&self) -> usize {
        self.psi.ncols()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn psi_dual(&self) -> &DMatrix<f64> {
        &self.psi_dual
    }

    /// Taps of filter `j` on input channel `c`.
    pub fn filter(&self, j: usize, c: usize) -> Vec<f64> {
        self.psi
            .view((c * self.taps, j), (self.taps, 1))
            .iter()
            .copied()
            .collect()
    }

    pub fn dual_filter(&self, j: usize, c: usize) -> Vec<f64> {
        self.psi_dual
            .view((c * self.taps, j), (self.taps, 1))
            .iter()
            .copied()
            .collect()
    }

    /// Encoder layout with every filter tap-reversed, `(d*p) x q`.
    pub fn flipped(&self) -> DMatrix<f64> {
        let d = self.taps;
        DMatrix::from_fn(self.psi.nrows(), self.psi.ncols(), |row, j| {
            let (c, t) = (row / d, row % d);
            self.psi[(c * d + (d - 1 - t), j)]
        })
    }

    /// Decoder layout `tau(Psi~)`, `(d*q) x p`: block row `j`, column `c` holds
    /// `psi~_j^c / d`.
    pub fn tau(&self) -> DMatrix<f64> {
        let d = self.taps;
        DMatrix::from_fn(d * self.filters(), self.channels, |row, c| {
            let (j, t) = (row / d, row % d);
            self.psi_dual[(c * d + t, j)] / d as f64
        })
    }

    /// `max |Psi Psi~^T - I|`.
    pub fn dual_residual(&self) -> f64 {
        max_abs_diff_identity(&(&self.psi * self.psi_dual.transpose()))
    }

    /// Same bank with every filter set to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            psi: DMatrix::zeros(self.psi.nrows(), self.psi.ncols()),
            psi_dual: DMatrix::zeros(self.psi.nrows(), self.psi.ncols()),
            ..*self
        }
    }
}

/// Multi-channel signal `Z`, `n x p`.
pub type MultiChannelSignal = DMatrix<f64>;

/// Framelet coefficients `C`, `m x q`.
pub type FrameletCoefficients = DMatrix<f64>;

fn check_signal(z: &DMatrix<f64>, frame: &FramePair, bank: &FilterBank) -> Result<()> {
    if z.ncols() != bank.channels() {
        return Err(Error::shape(
            format!("{} channels (filter bank p)", bank.channels()),
            format!("{} channels", z.ncols()),
        ));
    }
    if z.nrows() != frame.n() {
        return Err(Error::shape(
            format!("signal length n = {} (frame rows)", frame.n()),
            format!("length {}", z.nrows()),
        ));
    }
    if bank.taps() > z.nrows() {
        return Err(Error::shape(
            format!("filter taps d <= n = {}", z.nrows()),
            format!("d = {}", bank.taps()),
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("framelet input".into()));
    }
    Ok(())
}

/// `C[:, j] = Phi^T sum_c H(z_c) psi_j^c`.
pub fn encode_multi(z: &MultiChannelSignal, frame: &FramePair, bank: &FilterBank) -> Result<FrameletCoefficients> {
    check_signal(z, frame, bank)?;
    let n = z.nrows();
    let q = bank.filters();
    let mut responses = DMatrix::zeros(n, q);
    for c in 0..bank.channels() {
        let zc: Vec<f64> = z.column(c).iter().copied().collect();
        for j in 0..q {
            let y = circular_convolve(&zc, &bank.filter(j, c))?;
            for (i, v) in y.into_iter().enumerate() {
                responses[(i, j)] += v;
            }
        }
    }
    Ok(frame.phi.transpose() * responses)
}

/// `z_c = (1/d) H^*( Phi~ C Psi~_c^T )`, the inverse of [`encode_multi`]
/// under the frame and dual conditions.
pub fn decode_multi(coeffs: &FrameletCoefficients, frame: &FramePair, bank: &FilterBank) -> Result<MultiChannelSignal> {
    if coeffs.nrows() != frame.m() || coeffs.ncols() != bank.filters() {
        return Err(Error::shape(
            format!("{}x{} coefficients (m x q)", frame.m(), bank.filters()),
            format!("{}x{}", coeffs.nrows(), coeffs.ncols()),
        ));
    }
    let d = bank.taps();
    let synth = &frame.phi_dual * coeffs;
    let n = synth.nrows();
    if d > n {
        return Err(Error::shape(format!("filter taps d <= n = {n}"), format!("d = {d}")));
    }
    let mut out = DMatrix::zeros(n, bank.channels());
    for c in 0..bank.channels() {
        let block = bank.psi_dual.rows(c * d, d);
        let lifted = &synth * block.transpose();
        let zc = hankel_adjoint(&lifted);
        for (i, v) in zc.into_iter().enumerate() {
            out[(i, c)] = v / d as f64;
        }
    }
    Ok(out)
}

/// Single-channel encoder; the `p = 1` case of [`encode_multi`].
pub fn encode(f: &[f64], frame: &FramePair, bank: &FilterBank) -> Result<FrameletCoefficients> {
    encode_multi(&DMatrix::from_column_slice(f.len(), 1, f), frame, bank)
}

pub fn decode(coeffs: &FrameletCoefficients, frame: &FramePair, bank: &FilterBank) -> Result<Vec<f64>> {
    let z = decode_multi(coeffs, frame, bank)?;
    if z.ncols() != 1 {
        return Err(Error::shape("single-channel bank", format!("{} channels", z.ncols())));
    }
    Ok(z.column(0).iter().copied().collect())
}

/// Two nested encoder/decoder pairs with no nonlinearity: the outer pair
/// lifts `f` to `C1`, the inner pair treats `C1` as a `q1`-channel signal.
pub fn compose_two_layer(
    f: &[f64],
    outer_frame: &FramePair,
    outer_bank: &FilterBank,
    inner_frame: &FramePair,
    inner_bank: &FilterBank,
) -> Result<Vec<f64>> {
    if inner_bank.channels() != outer_bank.filters() {
        return Err(Error::shape(
            format!("inner bank with {} channels (outer q)", outer_bank.filters()),
            format!("{} channels", inner_bank.channels()),
        ));
    }
    let c1 = encode(f, outer_frame, outer_bank)?;
    let c2 = encode_multi(&c1, inner_frame, inner_bank)?;
    let c1_hat = decode_multi(&c2, inner_frame, inner_bank)?;
    decode(&c1_hat, outer_frame, outer_bank)
}

pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeding::stream(seed, 0);
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    // sign-fix against R's diagonal for a Haar-distributed, deterministic Q
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn max_abs_diff_identity(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    (m - DMatrix::identity(m.nrows(), m.ncols())).amax()
}
