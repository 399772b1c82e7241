//! Softmax-basis abundance machinery.
//!
//! Abundances `a` on the simplex are represented by unconstrained `c` with
//! `a = softmax(c)`. Transitions are Gaussian in `c` with an isotropic
//! scale produced by a small learned network. The Laplace approximation of
//! a Dirichlet in this basis is provided as a reference for how well that
//! Gaussian transition can stand in for a Dirichlet one.

use std::f64::consts::PI;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{glorot_init, softmax, ParamId, ParamStore, Tape, Tensor, Var};

/// Abundances below this are clamped before taking logs.
pub const ABUNDANCE_FLOOR: f64 = 1e-9;

pub fn softmax_pi(c: &[f64]) -> Vec<f64> {
    softmax(c)
}

/// Centered inverse softmax: `c_i = log a_i − mean_j log a_j`.
///
/// Entries below [`ABUNDANCE_FLOOR`] are clamped and the vector renormalized.
pub fn pi_inverse(a: &[f64]) -> Vec<f64> {
    let mut a = a.to_vec();
    if a.iter().any(|v| *v < ABUNDANCE_FLOOR) {
        log::debug!("clamping abundance entries below {ABUNDANCE_FLOOR} before inverse softmax");
        a.iter_mut().for_each(|v| *v = v.max(ABUNDANCE_FLOOR));
        let s: f64 = a.iter().sum();
        a.iter_mut().for_each(|v| *v /= s);
    }
    let logs: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let m = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.into_iter().map(|v| v - m).collect()
}

/// Gaussian (Laplace) approximation of `Dir(alpha)` in the softmax basis.
///
/// The density in `c` is
/// `Γ(α₀)/∏Γ(α_i) · ∏ π_i(c)^{α_i} · g(1ᵀc)` with `g(x) ∝ exp(−ε x²/2)`.
/// Its mode is the centered `log α` and the covariance is the inverse of
/// `diag(α) − ααᵀ/α₀ + ε 11ᵀ`, the negative Hessian of the log density there.
pub fn dirichlet_laplace_softmax(alpha: &[f64], eps_g: f64) -> Result<(Vec<f64>, Tensor)> {
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Input(format!(
            "Dirichlet concentrations must be positive, got {alpha:?}"
        )));
    }
    if !(eps_g > 0.0) {
        return Err(Error::Input(format!("eps_g must be positive, got {eps_g}")));
    }
    let p = alpha.len();
    let mean_log = alpha.iter().map(|a| a.ln()).sum::<f64>() / p as f64;
    let mu: Vec<f64> = alpha.iter().map(|a| a.ln() - mean_log).collect();
    let neg_hess = dirichlet_softmax_neg_hessian(&mu, alpha, eps_g);
    let cov = crate::linalg::to_dmatrix(&neg_hess)
        .try_inverse()
        .ok_or_else(|| Error::Input("singular Laplace precision".into()))?;
    Ok((mu, crate::linalg::from_dmatrix(&cov)))
}

/// Analytic negative Hessian `α₀(diag(π) − ππᵀ) + ε 11ᵀ` of the log density at `c`.
pub fn dirichlet_softmax_neg_hessian(c: &[f64], alpha: &[f64], eps_g: f64) -> Tensor {
    let p = c.len();
    let pi = softmax(c);
    let a0: f64 = alpha.iter().sum();
    let mut h = Tensor::zeros(&[p, p]);
    for i in 0..p {
        for j in 0..p {
            let diag = if i == j { pi[i] } else { 0.0 };
            h.set(i, j, a0 * (diag - pi[i] * pi[j]) + eps_g);
        }
    }
    h
}

/// Normalized log density of `c` under the softmax-basis Dirichlet with the
/// Gaussian gauge `g = N(1ᵀc; 0, 1/ε)`.
///
/// The factor `P` comes from the Jacobian of `c ↦ (a_1..a_{P−1}, 1ᵀc)`,
/// whose determinant is `P ∏ a_i`.
pub fn dirichlet_softmax_log_density(c: &[f64], alpha: &[f64], eps_g: f64) -> f64 {
    let p = c.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let lnorm = ln_gamma(a0) - alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
    let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + c.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let body: f64 = c.iter().zip(alpha).map(|(ci, ai)| ai * (ci - lse)).sum();
    let t: f64 = c.iter().sum();
    let gauge = 0.5 * (eps_g / (2.0 * PI)).ln() - 0.5 * eps_g * t * t;
    p.ln() + lnorm + body + gauge
}

/// Transition scale network `σ_a: R^P → R_+`.
///
/// `layers` affine `P→P` maps with ReLU between them; the final layer's
/// outputs are averaged to a scalar and exponentiated. This gives exactly
/// `P(P+1)` scalars per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaANet {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl SigmaANet {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, p: usize, layers: usize, rng: &mut R) -> Self {
        assert!(layers >= 1, "sigma_a network needs at least one layer");
        let layers = (0..layers)
            .map(|i| {
                let w = store.insert(&format!("sigma_a.w{i}"), glorot_init(&[p, p], rng));
                let b = store.insert(&format!("sigma_a.b{i}"), Tensor::zeros(&[p]));
                (w, b)
            })
            .collect();
        Self { layers }
    }

    pub fn eval(&self, store: &ParamStore, c: &[f64]) -> f64 {
        let mut x = c.to_vec();
        let n = self.layers.len();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = store.get(*w).matvec(&x);
            for (zi, bi) in z.iter_mut().zip(store.get(*b).data()) {
                *zi += bi;
            }
            if i + 1 < n {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = z;
        }
        (x.iter().sum::<f64>() / x.len() as f64).exp()
    }

    /// Scalar node `σ_a(c)`.
    pub fn on_tape(&self, tape: &mut Tape, c: Var) -> Var {
        let m = self.log_on_tape(tape, c);
        tape.exp(m)
    }

    /// Scalar node `log σ_a(c)`.
    pub fn log_on_tape(&self, tape: &mut Tape, c: Var) -> Var {
        let mut x = c;
        let n = self.layers.len();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(*w);
            let bv = tape.param(*b);
            let z = tape.matmul(wv, x);
            let z = tape.add(z, bv);
            x = if i + 1 < n { tape.relu(z) } else { z };
        }
        tape.mean(x)
    }
}

/// Parameters of `p(c_t | c_{t-1}) = N(c_{t-1}, σ_a(c_{t-1})² I)`.
pub fn c_transition_params(c_prev: &[f64], net: &SigmaANet, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
    let s = net.eval(store, c_prev);
    (c_prev.to_vec(), vec![s; c_prev.len()])
}
