//! Low-rank Hankel matrix completion of missing RF samples.
//!
//! Solves `min ||H(x)||_*  s.t.  x[i] = y[i] for observed i` by ADMM on the
//! split `L = H(x)`:
//!
//! ```text
//! L   <- SVT(H(x) - Lambda/mu, 1/mu)            (optionally capped at rank r)
//! x   <- (1/d) H^*(L + Lambda/mu), then x[observed] <- y[observed]
//! Lambda <- Lambda + mu (L - H(x))
//! ```
//!
//! `H^* H = d I` for the wrap-around lift, so the x-update is closed form.
//! Signals are scaled by their largest observed magnitude before iterating so
//! that `mu` has the same meaning for every amplitude.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{check_mask_dims, RxScPlane, SamplingMask};
use crate::error::{Error, Result};
use crate::hankel::{hankel_adjoint, hankel_lift, LiftDirection, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionConfig {
    /// Hankel window length.
    pub window: usize,
    /// Cap on the number of singular values kept per iteration; 0 disables the
    /// cap (pure nuclear-norm thresholding).
    pub rank: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub mu: f64,
    /// Recorded for provenance; the solver itself has no random state.
    pub seed: u64,
    pub direction: LiftDirection,
    /// Record `||H(x_k)||_*` each iteration (one extra SVD per step).
    pub track_objective: bool,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            window: 16,
            rank: 0,
            max_iters: 500,
            tol: 1e-6,
            mu: 1.0,
            seed: 0,
            direction: LiftDirection::ScanLine,
            track_objective: false,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Parameter("window must be >= 1".into()));
        }
        if self.rank > 0 && self.window < self.rank + 1 {
            return Err(Error::Parameter(format!(
                "window {} must be >= rank + 1 = {}",
                self.window,
                self.rank + 1
            )));
        }
        if !(self.tol > 0.0) || !(self.mu > 0.0) {
            return Err(Error::Parameter("tol and mu must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion<T> {
    pub signal: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Nuclear norm of the lifted iterate per iteration (empty unless tracked),
    /// in the caller's amplitude units.
    pub objective: Vec<f64>,
}

/// Singular value soft-thresholding: same singular vectors, values
/// `max(sigma - tau, 0)`.
pub fn svt<T: Sample>(m: &DMatrix<T>, tau: f64) -> Result<DMatrix<T>> {
    if !(tau >= 0.0) {
        return Err(Error::Parameter(format!("tau must be >= 0, got {tau}")));
    }
    Ok(shrink(m, tau, 0))
}

fn shrink<T: Sample>(m: &DMatrix<T>, tau: f64, rank_cap: usize) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut kept: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, (s - tau).max(0.0)))
        .filter(|&(_, s)| s > 0.0)
        .collect();
    if rank_cap > 0 && kept.len() > rank_cap {
        kept.sort_by(|a, b| b.1.total_cmp(&a.1));
        kept.truncate(rank_cap);
    }
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, s) in kept {
        let col = u.column(i) * T::from_real(s);
        out += col * v_t.row(i);
    }
    out
}

pub fn nuclear_norm<T: Sample>(m: &DMatrix<T>) -> f64 {
    m.clone().singular_values().iter().sum()
}

/// Completes one signal from the entries where `observed` is true.
pub fn complete_signal<T: Sample>(values: &[T], observed: &[bool], cfg: &CompletionConfig) -> Result<Completion<T>> {
    cfg.validate()?;
    let n = values.len();
    if observed.len() != n {
        return Err(Error::shape(format!("mask of length {n}"), observed.len()));
    }
    let d = cfg.window;
    if d > n {
        return Err(Error::Parameter(format!("window {d} exceeds signal length {n}")));
    }
    let count = observed.iter().filter(|&&o| o).count();
    if count < d || count == 0 {
        return Err(Error::Infeasible(format!(
            "{count} observed samples, need at least window = {d}"
        )));
    }
    if values.iter().any(|v| !v.modulus().is_finite()) {
        return Err(Error::NonFinite("completion input".into()));
    }
    let mut x: Vec<T> = values
        .iter()
        .zip(observed)
        .map(|(&v, &o)| if o { v } else { T::zero() })
        .collect();
    if count == n {
        return Ok(Completion {
            signal: x,
            iterations: 0,
            converged: true,
            objective: Vec::new(),
        });
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.modulus()));
    if scale == 0.0 {
        return Ok(Completion {
            signal: x,
            iterations: 0,
            converged: true,
            objective: Vec::new(),
        });
    }
    for v in x.iter_mut() {
        *v = v.unscale(scale);
    }
    let y = x.clone();

    let inv_mu = 1.0 / cfg.mu;
    let mut lambda = DMatrix::<T>::zeros(n, d);
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let inv_d = T::from_real(1.0 / d as f64);
    let mu = T::from_real(cfg.mu);
    let inv_mu_t = T::from_real(inv_mu);

    while iterations < cfg.max_iters {
        iterations += 1;
        let lifted = hankel_lift(&x, d)?.entries().clone();
        let low_rank = shrink(&(&lifted - &lambda * inv_mu_t), inv_mu, cfg.rank);
        let target = &low_rank + &lambda * inv_mu_t;
        let mut next: Vec<T> = hankel_adjoint(&target).into_iter().map(|v| v * inv_d).collect();
        for ((v, &o), &obs) in next.iter_mut().zip(observed).zip(&y) {
            if o {
                *v = obs;
            }
        }
        let next_lifted = hankel_lift(&next, d)?.entries().clone();
        lambda += (&low_rank - &next_lifted) * mu;

        let diff = DVector::from_iterator(n, next.iter().zip(&x).map(|(a, b)| *a - *b)).norm();
        let norm = DVector::from_column_slice(&x).norm().max(f64::MIN_POSITIVE);
        x = next;
        if cfg.track_objective {
            objective.push(nuclear_norm(&next_lifted) * scale);
        }
        if diff / norm < cfg.tol {
            converged = true;
            break;
        }
    }

    let signal = x
        .into_iter()
        .zip(values.iter().zip(observed))
        .map(|(v, (&orig, &o))| if o { orig } else { v.scale(scale) })
        .collect();
    Ok(Completion {
        signal,
        iterations,
        converged,
        objective,
    })
}

/// Per-plane completion summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneCompletion {
    pub plane: RxScPlane,
    pub iterations: usize,
    pub all_converged: bool,
}

/// Completes every receiver row (or scan-line column) of a masked plane.
/// Observed entries are copied through unchanged.
pub fn complete_plane(plane: &RxScPlane, mask: &SamplingMask, cfg: &CompletionConfig) -> Result<PlaneCompletion> {
    check_mask_dims(plane.values.dim(), mask)?;
    cfg.validate()?;
    let (rows, cols) = plane.values.dim();
    let lines = match cfg.direction {
        LiftDirection::ScanLine => rows,
        LiftDirection::Receiver => cols,
    };
    let extract = |i: usize| -> (Vec<f64>, Vec<bool>) {
        match cfg.direction {
            LiftDirection::ScanLine => (
                plane.values.row(i).to_vec(),
                mask.active().row(i).to_vec(),
            ),
            LiftDirection::Receiver => (
                plane.values.column(i).to_vec(),
                mask.active().column(i).to_vec(),
            ),
        }
    };
    let what = match cfg.direction {
        LiftDirection::ScanLine => "receiver row",
        LiftDirection::Receiver => "scan-line column",
    };
    let solve = |i: usize| -> Result<Completion<f64>> {
        let (v, o) = extract(i);
        complete_signal(&v, &o, cfg).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!("{what} {i}: {msg}")),
            other => other,
        })
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<Completion<f64>>> = {
        use rayon::prelude::*;
        (0..lines).into_par_iter().map(solve).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Completion<f64>>> = (0..lines).map(solve).collect();

    let mut values = plane.values.clone();
    let mut iterations = 0;
    let mut all_converged = true;
    for (i, res) in results.into_iter().enumerate() {
        let done = res?;
        iterations += done.iterations;
        all_converged &= done.converged;
        let line = ndarray::Array1::from(done.signal);
        match cfg.direction {
            LiftDirection::ScanLine => values.row_mut(i).assign(&line),
            LiftDirection::Receiver => values.column_mut(i).assign(&line),
        }
    }
    debug_assert_eq!(values.dim(), (rows, cols));
    Ok(PlaneCompletion {
        plane: RxScPlane::new(values, plane.depth_index),
        iterations,
        all_converged,
    })
}
