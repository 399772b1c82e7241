//! Smooth generalized linear mixing model.
//!
//! Each pixel's endmember matrix is the reference `M0` scaled bandwise by
//! `1 + D·Ψ`, where `D` holds the first `K` orthonormal DCT-II vectors and
//! `Ψ` (`K×P`) is stored column-major as the vector `psi` (entries grouped
//! per endmember). Pixels are Gaussian around `M·softmax(c)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{softmax, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SglmmConfig {
    pub bands: usize,
    pub endmembers: usize,
    pub basis: usize,
    pub sigma_psi: f64,
    pub sigma_r: f64,
}

impl SglmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.basis < 1 || self.basis > self.bands {
            return Err(Error::Config(format!(
                "basis count K={} must satisfy 1 <= K <= L={}",
                self.basis, self.bands
            )));
        }
        if self.endmembers < 2 {
            return Err(Error::Config(format!(
                "endmember count P={} must be at least 2",
                self.endmembers
            )));
        }
        if !(self.sigma_psi > 0.0) || !(self.sigma_r > 0.0) {
            return Err(Error::Config(format!(
                "sigma_psi={} and sigma_r={} must be positive",
                self.sigma_psi, self.sigma_r
            )));
        }
        Ok(())
    }
}

/// Orthonormal DCT-II basis, `L×K`; column `j` is
/// `s_j cos(π (2l+1) j / 2L)` with `s_0 = √(1/L)`, `s_j = √(2/L)`.
pub fn build_dct_basis(bands: usize, k: usize) -> Result<Tensor> {
    if k < 1 || k > bands {
        return Err(Error::Config(format!(
            "DCT basis count K={k} out of range for L={bands}"
        )));
    }
    let l = bands as f64;
    let mut d = Tensor::zeros(&[bands, k]);
    for row in 0..bands {
        for j in 0..k {
            let s = if j == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() };
            d.set(row, j, s * (PI * (2 * row + 1) as f64 * j as f64 / (2.0 * l)).cos());
        }
    }
    Ok(d)
}

/// Reference signatures and the smooth variability basis.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberBasis {
    pub m0: Tensor,
    pub d: Tensor,
}

impl EndmemberBasis {
    pub fn new(m0: Tensor, d: Tensor) -> Result<Self> {
        if m0.rows() != d.rows() {
            return Err(Error::Shape {
                op: "EndmemberBasis::new",
                detail: format!("M0 has {} bands, D has {}", m0.rows(), d.rows()),
            });
        }
        Ok(Self { m0, d })
    }

    pub fn bands(&self) -> usize {
        self.m0.rows()
    }

    pub fn endmembers(&self) -> usize {
        self.m0.cols()
    }

    pub fn basis(&self) -> usize {
        self.d.cols()
    }

    /// True when any reference entry is negative (reported, never clamped
    /// during training).
    pub fn has_negative_reference(&self) -> bool {
        self.m0.data().iter().any(|v| *v < 0.0)
    }
}

/// Bandwise scaling factors `1 + D·unvec(psi)`, `L×P`.
pub fn scaling_factors(d: &Tensor, psi: &[f64], p: usize) -> Tensor {
    let (l, k) = (d.rows(), d.cols());
    assert_eq!(psi.len(), k * p, "psi must have length K*P = {}", k * p);
    let mut s = Tensor::filled(&[l, p], 1.0);
    for row in 0..l {
        let drow = &d.data()[row * k..(row + 1) * k];
        for e in 0..p {
            let coef = &psi[e * k..(e + 1) * k];
            let v: f64 = drow.iter().zip(coef).map(|(a, b)| a * b).sum();
            s.data_mut()[row * p + e] += v;
        }
    }
    s
}

/// `M = M0 ⊙ (1 + D·unvec(psi))`.
pub fn assemble_endmembers(basis: &EndmemberBasis, psi: &[f64]) -> Tensor {
    let mut m = scaling_factors(&basis.d, psi, basis.endmembers());
    for (a, b) in m.data_mut().iter_mut().zip(basis.m0.data()) {
        *a *= b;
    }
    m
}

/// Mean pixel `M(psi)·softmax(c)`.
pub fn pixel_mean(basis: &EndmemberBasis, c: &[f64], psi: &[f64]) -> Vec<f64> {
    assemble_endmembers(basis, psi).matvec(&softmax(c))
}

/// `log N(y; mean, σ_r² I)`.
pub fn gaussian_loglik(y: &[f64], mean: &[f64], sigma_r: f64) -> f64 {
    let l = y.len() as f64;
    let rss: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * l * (2.0 * PI * sigma_r * sigma_r).ln() - rss / (2.0 * sigma_r * sigma_r)
}

pub fn log_likelihood(y: &[f64], basis: &EndmemberBasis, c: &[f64], psi: &[f64], sigma_r: f64) -> f64 {
    gaussian_loglik(y, &pixel_mean(basis, c, psi), sigma_r)
}

/// Parameters of `p(ψ_t | ψ_{t-1}) = N(ψ_{t-1}, σ_ψ² I)`: mean and per-entry std.
pub fn psi_transition_params(psi_prev: &[f64], sigma_psi: f64) -> (Vec<f64>, Vec<f64>) {
    (psi_prev.to_vec(), vec![sigma_psi; psi_prev.len()])
}

pub fn psi_transition_logpdf(psi: &[f64], psi_prev: &[f64], sigma_psi: f64) -> f64 {
    let (mean, std) = psi_transition_params(psi_prev, sigma_psi);
    diag_gaussian_logpdf(psi, &mean, &std)
}

pub fn diag_gaussian_logpdf(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| -0.5 * (2.0 * PI * s * s).ln() - (x - m).powi(2) / (2.0 * s * s))
        .sum()
}

/// Differentiable `M0 ⊙ (1 + D·unvec(psi))` on a tape.
pub fn endmembers_on_tape(tape: &mut Tape, m0: Var, d: Var, psi: Var, k: usize, p: usize) -> Var {
    // Row e of psi reshaped to P×K is the coefficient vector of endmember e.
    let psi_pk = tape.reshape(psi, &[p, k]);
    let psi_kp = tape.transpose(psi_pk);
    let dpsi = tape.matmul(d, psi_kp);
    let scale = tape.add_const(dpsi, 1.0);
    tape.mul(m0, scale)
}

/// Differentiable Gaussian log-likelihood of `y` around `mean` with scalar
/// std node `sigma_r`.
pub fn gaussian_loglik_on_tape(tape: &mut Tape, y: Var, mean: Var, sigma_r: Var) -> Var {
    let l = tape.size(y) as f64;
    let resid = tape.sub(y, mean);
    let sq = tape.square(resid);
    let rss = tape.sum(sq);
    let var = tape.square(sigma_r);
    let var = tape.reshape(var, &[]);
    let quad = tape.div(rss, var);
    let quad = tape.scale_const(quad, -0.5);
    let logvar = tape.log(var);
    let norm = tape.scale_const(logvar, -0.5 * l);
    let norm = tape.add_const(norm, -0.5 * l * (2.0 * PI).ln());
    tape.add(quad, norm)
}
