//! Zero-forcing downlink precoding for the active terminal set, per-user SNR,
//! Shannon rates, and the hover time needed to deliver every file.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hover durations are capped here so pathological SNRs cannot stall an episode.
pub const HOVER_CAP_S: f64 = 1e3;

/// Gram matrices with a 1-norm condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum PrecodingError {
    #[error("{users} users exceed {antennas} antennas")]
    TooManyUsers { users: usize, antennas: usize },
    #[error("channel matrix is empty")]
    Empty,
    #[error("degenerate channel geometry (condition number {condition:e})")]
    Degenerate { condition: f64 },
}

/// Downlink parameters that are not part of the radio channel itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub bandwidth_hz: f64,
    /// File size delivered to every terminal (bits).
    pub file_size_bits: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 5e6,
            file_size_bits: 20e6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZfPrecoder {
    /// `N_t × K_n`.
    pub w: Array2<Complex64>,
    pub xi: f64,
}

/// Everything computed for one transmission stage.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    pub h: Array2<Complex64>,
    pub w: Array2<Complex64>,
    pub xi: f64,
    pub snr: Vec<f64>,
    pub rates: Vec<f64>,
    pub hover_time: f64,
}

/// Lower-triangular `L` with `G = L·Lᴴ`, or `None` if `G` is not positive definite.
fn cholesky(g: &Array2<Complex64>) -> Option<Array2<Complex64>> {
    let n = g.nrows();
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = g[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[[j, j]] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = g[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// `G⁻¹` from its Cholesky factor by forward/back substitution on the identity.
fn cholesky_inverse(l: &Array2<Complex64>) -> Array2<Complex64> {
    let n = l.nrows();
    let mut inv = Array2::<Complex64>::zeros((n, n));
    for col in 0..n {
        // L y = e_col
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut s = if i == col { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        // Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[[k, i]].conj() * inv[[k, col]];
            }
            inv[[i, col]] = s / l[[i, i]].re;
        }
    }
    inv
}

fn norm_1(m: &Array2<Complex64>) -> f64 {
    m.axis_iter(Axis(1))
        .map(|col| col.iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn conj_transpose(m: &Array2<Complex64>) -> Array2<Complex64> {
    m.t().mapv(|c| c.conj())
}

/// ZF precoder `W = ξ·Hᴴ(HHᴴ)⁻¹` with `ξ` chosen so that `tr(WWᴴ) = K_n`.
pub fn zf_precoder(h: &Array2<Complex64>) -> Result<ZfPrecoder, PrecodingError> {
    let (users, antennas) = h.dim();
    if users == 0 {
        return Err(PrecodingError::Empty);
    }
    if users > antennas {
        return Err(PrecodingError::TooManyUsers { users, antennas });
    }
    let h_herm = conj_transpose(h);
    let gram = h.dot(&h_herm);
    let l = cholesky(&gram).ok_or(PrecodingError::Degenerate {
        condition: f64::INFINITY,
    })?;
    let gram_inv = cholesky_inverse(&l);
    let condition = norm_1(&gram) * norm_1(&gram_inv);
    if !(condition <= MAX_CONDITION) {
        return Err(PrecodingError::Degenerate { condition });
    }
    let pinv = h_herm.dot(&gram_inv);
    let frob: f64 = pinv.iter().map(|c| c.norm_sqr()).sum();
    let xi = (users as f64 / frob).sqrt();
    Ok(ZfPrecoder {
        w: pinv.mapv(|c| c * xi),
        xi,
    })
}

/// `ρ_k = P·|h_k·w_k|²/σ²` for each active user.
pub fn per_user_snr(
    h: &Array2<Complex64>,
    w: &Array2<Complex64>,
    power: f64,
    noise: f64,
) -> Vec<f64> {
    (0..h.nrows())
        .map(|k| {
            let gain: Complex64 = h.row(k).dot(&w.column(k));
            power * gain.norm_sqr() / noise
        })
        .collect()
}

/// Shannon rates and the hover time `max_k D_k / R_k` (capped at [`HOVER_CAP_S`]).
pub fn rates_and_hover(snr: &[f64], bandwidth_hz: f64, file_sizes: &[f64]) -> (Vec<f64>, f64) {
    let rates: Vec<f64> = snr.iter().map(|s| bandwidth_hz * (1.0 + s).log2()).collect();
    let hover = rates
        .iter()
        .zip(file_sizes)
        .map(|(r, d)| if *r > 0.0 { d / r } else { f64::INFINITY })
        .fold(0.0, f64::max)
        .min(HOVER_CAP_S);
    (rates, hover)
}

/// Stacks channel rows into `H` (`K_n × N_t`).
pub fn stack_rows(rows: &[Vec<Complex64>]) -> Array2<Complex64> {
    let n = rows.first().map_or(0, Vec::len);
    let mut h = Array2::zeros((rows.len(), n));
    for (k, row) in rows.iter().enumerate() {
        h.row_mut(k).assign(&Array1::from(row.clone()));
    }
    h
}

impl LinkBudget {
    pub fn compute(
        h: Array2<Complex64>,
        power: f64,
        noise: f64,
        link: &LinkConfig,
    ) -> Result<Self, PrecodingError> {
        let ZfPrecoder { w, xi } = zf_precoder(&h)?;
        let snr = per_user_snr(&h, &w, power, noise);
        let sizes = vec![link.file_size_bits; snr.len()];
        let (rates, hover_time) = rates_and_hover(&snr, link.bandwidth_hz, &sizes);
        Ok(Self {
            h,
            w,
            xi,
            snr,
            rates,
            hover_time,
        })
    }
}
