//! Wrap-around Hankel lifting, the matching circular convolution, annihilating
//! filters and numerical rank.
//!
//! All operations use periodic boundaries: a length-`n` signal lifts to an
//! `n x d` matrix with `H[i][j] = f[(i + j) mod n]`, and
//! `circular_convolve(f, h) == H(f) * h` exactly.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};

/// Scalar types the Hankel routines accept: `f64` and `Complex<f64>`.
pub trait Sample: ComplexField<RealField = f64> + Copy {}

impl<T: ComplexField<RealField = f64> + Copy> Sample for T {}

#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix<T: Sample> {
    entries: DMatrix<T>,
}

impl<T: Sample> HankelMatrix<T> {
    /// Source signal length (row count).
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Window length (column count).
    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    /// The first column is the lifted signal.
    pub fn signal(&self) -> Vec<T> {
        self.entries.column(0).iter().copied().collect()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.entries)
    }
}

pub fn hankel_lift<T: Sample>(f: &[T], d: usize) -> Result<HankelMatrix<T>> {
    let n = f.len();
    if d < 1 || d > n {
        return Err(Error::Parameter(format!(
            "Hankel window must satisfy 1 <= d <= n = {n}, got {d}"
        )));
    }
    Ok(HankelMatrix {
        entries: DMatrix::from_fn(n, d, |i, j| f[(i + j) % n]),
    })
}

/// `out[i] = sum_j f[(i + j) mod n] * h[j]`, the product `H(f) h`.
pub fn circular_convolve<T: Sample>(f: &[T], h: &[T]) -> Result<Vec<T>> {
    let n = f.len();
    if h.is_empty() || h.len() > n {
        return Err(Error::shape(
            format!("filter length in 1..={n}"),
            h.len(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let mut acc = T::zero();
            for (j, &hj) in h.iter().enumerate() {
                acc += f[(i + j) % n] * hj;
            }
            acc
        })
        .collect())
}

/// Adjoint of the lift: `out[m] = sum over (i, j) with i + j = m (mod n) of B[i][j]`.
///
/// `hankel_adjoint(H(f)) = d * f`, which is what makes the framelet decoder
/// invert the encoder.
pub fn hankel_adjoint<T: Sample>(b: &DMatrix<T>) -> Vec<T> {
    let n = b.nrows();
    let mut out = vec![T::zero(); n];
    for j in 0..b.ncols() {
        for i in 0..n {
            out[(i + j) % n] += b[(i, j)];
        }
    }
    out
}

/// Unit-norm filter spanning the (numerical) null space of `H(f)`: the right
/// singular vector of the smallest singular value. Returns the filter and the
/// relative residual `||H(f) h|| / ||f||`.
pub fn annihilating_filter<T: Sample>(f: &[T], d: usize) -> Result<(Vec<T>, f64)> {
    if d < 2 {
        return Err(Error::Parameter(format!(
            "annihilating filter needs d >= 2, got {d}"
        )));
    }
    let norm_f = f.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt();
    if norm_f == 0.0 {
        return Err(Error::Degenerate("zero signal has no annihilating filter".into()));
    }
    let lifted = hankel_lift(f, d)?;
    let svd = lifted.entries.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    // v_t has min(n, d) = d rows since d <= n.
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty spectrum");
    let mut h: Vec<T> = v_t.row(idx).iter().map(|v| v.conjugate()).collect();
    normalize_phase(&mut h);
    let residual = (&lifted.entries * DVector::from_column_slice(&h)).norm() / norm_f;
    Ok((h, residual))
}

/// Rotates the vector so its largest-magnitude entry is real and positive;
/// singular vectors are only defined up to a unit scalar.
fn normalize_phase<T: Sample>(h: &mut [T]) {
    let Some(&pivot) = h
        .iter()
        .max_by(|a, b| a.modulus().total_cmp(&b.modulus()))
    else {
        return;
    };
    let m = pivot.modulus();
    if m == 0.0 {
        return;
    }
    let unit = pivot.unscale(m).conjugate();
    for v in h.iter_mut() {
        *v *= unit;
    }
}

pub fn singular_values<T: Sample>(m: &DMatrix<T>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank<T: Sample>(h: &HankelMatrix<T>, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::Parameter(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    let s = h.singular_values();
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > rel_tol * max).count())
}

/// Rows of an Rx-SC plane are receivers, columns scan lines. `ScanLine`
/// treats each receiver row as a signal along the scan-line axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiftDirection {
    #[default]
    ScanLine,
    Receiver,
}

impl std::str::FromStr for LiftDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan-line" | "row" => Ok(LiftDirection::ScanLine),
            "receiver" | "column" => Ok(LiftDirection::Receiver),
            other => Err(Error::Parameter(format!(
                "unknown lift direction `{other}` (expected scan-line|receiver)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;
    use rand::Rng;

    type C64 = Complex<f64>;

    fn tone(n: usize, k: usize) -> Vec<C64> {
        (0..n)
            .map(|t| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64))
            .collect()
    }

    #[test]
    fn lift_wraps_around() {
        let f: Vec<f64> = (1..=8).map(f64::from).collect();
        let h = hankel_lift(&f, 3).unwrap();
        let row = |i: usize| h.entries().row(i).iter().copied().collect::<Vec<_>>();
        assert_eq!(row(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(row(6), vec![7.0, 8.0, 1.0]);
        assert_eq!(row(7), vec![8.0, 1.0, 2.0]);
        assert_eq!(h.signal(), f);
    }

    #[test]
    fn lift_window_one_is_the_signal() {
        let f = [3.0, -1.0, 2.0];
        let h = hankel_lift(&f, 1).unwrap();
        assert_eq!(h.entries().shape(), (3, 1));
        assert_eq!(h.signal(), f.to_vec());
        assert!(hankel_lift(&f, 0).is_err());
        assert!(hankel_lift(&f, 4).is_err());
    }

    #[test]
    fn constant_signal_is_rank_one() {
        let h = hankel_lift(&[2.5; 16], 5).unwrap();
        let s = h.singular_values();
        assert!(s[1..].iter().all(|&v| v <= 1e-12 * s[0]));
    }

    #[test]
    fn convolve_identity_filter() {
        let f = [1.0, 4.0, -2.0, 0.5];
        assert_eq!(circular_convolve(&f, &[1.0]).unwrap(), f.to_vec());
    }

    #[test]
    fn single_exponential_is_annihilated() {
        let n = 32;
        let f = tone(n, 1);
        let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / n as f64);
        let out = circular_convolve(&f, &[w, -C64::new(1.0, 0.0)]).unwrap();
        // f[t+1] = w f[t], so w f[t] - f[t+1] = 0
        assert!(out.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn convolve_matches_lift_product() {
        let mut rng = crate::seeding::stream(9, 0);
        let f: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let via_lift = hankel_lift(&f, 6).unwrap().entries() * DVector::from_vec(h.clone());
        let direct = circular_convolve(&f, &h).unwrap();
        for (a, b) in direct.iter().zip(via_lift.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn adjoint_recovers_scaled_signal() {
        let f: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let back = hankel_adjoint(hankel_lift(&f, 4).unwrap().entries());
        for (a, b) in back.iter().zip(&f) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn annihilates_two_tones() {
        let n = 64;
        let f: Vec<C64> = tone(n, 3)
            .iter()
            .zip(tone(n, 11))
            .map(|(a, b)| a * 0.7 + b * C64::new(0.2, -0.4))
            .collect();
        let (h, residual) = annihilating_filter(&f, 4).unwrap();
        assert!(residual <= 1e-8, "{residual}");
        let norm: f64 = h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_tone_filter_matches_closed_form() {
        let n = 40;
        let k0 = 5;
        let f = tone(n, k0);
        let (h, residual) = annihilating_filter(&f, 2).unwrap();
        assert!(residual < 1e-10);
        let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k0 as f64 / n as f64);
        let reference = [w, -C64::new(1.0, 0.0)];
        let inner: C64 = h.iter().zip(&reference).map(|(a, b)| a.conj() * b).sum();
        let ref_norm = 2f64.sqrt();
        assert!((inner.norm() / ref_norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noise_has_no_exact_annihilator() {
        let mut rng = crate::seeding::stream(2, 0);
        let f: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, residual) = annihilating_filter(&f, 2).unwrap();
        assert!(residual > 1e-3);
    }

    #[test]
    fn zero_signal_is_degenerate() {
        assert!(matches!(
            annihilating_filter(&[0.0; 8], 3),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rank_examples() {
        let n = 64;
        let f: Vec<C64> = (0..n)
            .map(|t| tone(n, 2)[t] + tone(n, 9)[t] * 0.5 + tone(n, 30)[t] * 2.0)
            .collect();
        assert_eq!(numerical_rank(&hankel_lift(&f, 16).unwrap(), 1e-6).unwrap(), 3);
        let zero = hankel_lift(&[0.0; 12], 4).unwrap();
        assert_eq!(numerical_rank(&zero, 1e-6).unwrap(), 0);
        let mut rng = crate::seeding::stream(5, 0);
        let noise: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(numerical_rank(&hankel_lift(&noise, 16).unwrap(), 1e-6).unwrap(), 16);
    }
}
