//! Variational posterior: a bidirectional LSTM encoder feeding hybrid mean
//! functions (with an abrupt-change detector) and log-linear scale functions.

use rand::Rng;

use crate::abundance::{softmax_pi, ABUNDANCE_FLOOR};
use crate::linalg::{ridge_lstsq, RIDGE_LAMBDA};
use crate::mixing::{assemble_endmembers, EndmemberBasis};
use crate::numerics::{glorot_init, simplex_project, softmax, ParamId, ParamStore, Tape, Tensor, Var};

/// LSTM with stacked gate weights in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// Input-to-hidden weights, `4H × L`.
    pub w: ParamId,
    /// Hidden-to-hidden weights, `4H × H`.
    pub u: ParamId,
    /// Biases, `4H`.
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Gate blocks are Glorot-initialized independently; biases start at zero.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let stack = |rows: usize, cols: usize, rng: &mut R| {
            let mut data = Vec::with_capacity(4 * rows * cols);
            for _ in 0..4 {
                data.extend_from_slice(glorot_init(&[rows, cols], rng).data());
            }
            Tensor::matrix(4 * rows, cols, data)
        };
        let w = store.insert(&format!("{prefix}.w"), stack(hidden, input, rng));
        let u = store.insert(&format!("{prefix}.u"), stack(hidden, hidden, rng));
        let b = store.insert(&format!("{prefix}.b"), Tensor::zeros(&[4 * hidden]));
        Self { w, u, b, input, hidden }
    }

    /// Runs the cell over rows of `inputs` (`T × L`), in reverse when
    /// `reverse` is set. Returns hidden states indexed by original time.
    pub fn run(&self, tape: &mut Tape, inputs: Var, times: usize, reverse: bool) -> Vec<Var> {
        let h = self.hidden;
        let w = tape.param(self.w);
        let u = tape.param(self.u);
        let b = tape.param(self.b);
        let wt = tape.transpose(w);
        // T × 4H input projections in one product.
        let proj = tape.matmul(inputs, wt);
        let mut hidden = tape.constant_vec(vec![0.0; h]);
        let mut cell = tape.constant_vec(vec![0.0; h]);
        let mut out = vec![hidden; times];
        let order: Vec<usize> = if reverse {
            (0..times).rev().collect()
        } else {
            (0..times).collect()
        };
        for (step, t) in order.into_iter().enumerate() {
            let xp = tape.slice(proj, t * 4 * h, 4 * h);
            let pre = if step == 0 {
                // Zero initial state: the recurrent product vanishes.
                tape.add(xp, b)
            } else {
                let rec = tape.matmul(u, hidden);
                let s = tape.add(xp, rec);
                tape.add(s, b)
            };
            let i_pre = tape.slice(pre, 0, h);
            let f_pre = tape.slice(pre, h, h);
            let g_pre = tape.slice(pre, 2 * h, h);
            let o_pre = tape.slice(pre, 3 * h, h);
            let i = tape.sigmoid(i_pre);
            let o = tape.sigmoid(o_pre);
            let g = tape.tanh(g_pre);
            let ig = tape.mul(i, g);
            cell = if step == 0 {
                ig
            } else {
                let f = tape.sigmoid(f_pre);
                let fc = tape.mul(f, cell);
                tape.add(fc, ig)
            };
            let tc = tape.tanh(cell);
            hidden = tape.mul(o, tc);
            out[t] = hidden;
        }
        out
    }
}

/// Trainable parameters of the variational posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub alpha1: ParamId,
    pub alpha2: ParamId,
    pub beta: ParamId,
    pub w_c: ParamId,
    pub v_c: ParamId,
    pub w_psi: ParamId,
    pub v_psi: ParamId,
    pub zeta: ParamId,
    pub xi: ParamId,
}

impl PosteriorParams {
    /// LSTMs and `V_c`, `V_ψ` are Glorot-initialized, `W_c`, `W_ψ` start at
    /// zero, `α₁ = α₂ = β = 1`, and the initial posterior is standard normal.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        bands: usize,
        endmembers: usize,
        basis: usize,
        rng: &mut R,
    ) -> Self {
        let p = endmembers;
        let kp = basis * p;
        let h = (basis + 1) * p;
        let forward = LstmCell::register(store, "lstm_forward", bands, h, rng);
        let backward = LstmCell::register(store, "lstm_backward", bands, h, rng);
        let alpha1 = store.insert("alpha1", Tensor::scalar(1.0));
        let alpha2 = store.insert("alpha2", Tensor::scalar(1.0));
        let beta = store.insert("beta", Tensor::scalar(1.0));
        let w_c = store.insert("w_c", Tensor::zeros(&[p, h]));
        let v_c = store.insert("v_c", glorot_init(&[p, h], rng));
        let w_psi = store.insert("w_psi", Tensor::zeros(&[kp, h]));
        let v_psi = store.insert("v_psi", glorot_init(&[kp, h], rng));
        let zeta = store.insert("zeta", Tensor::zeros(&[h]));
        let xi = store.insert("xi", Tensor::filled(&[h], 1.0));
        Self {
            forward,
            backward,
            alpha1,
            alpha2,
            beta,
            w_c,
            v_c,
            w_psi,
            v_psi,
            zeta,
            xi,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.forward.w,
            self.forward.u,
            self.forward.b,
            self.backward.w,
            self.backward.u,
            self.backward.b,
            self.alpha1,
            self.alpha2,
            self.beta,
            self.w_c,
            self.v_c,
            self.w_psi,
            self.v_psi,
            self.zeta,
            self.xi,
        ]
    }
}

/// `h_t = ½(h_t^forw + h_t^back)` for a pixel series given as a `T × L` node.
pub fn encode_on_tape(tape: &mut Tape, phi: &PosteriorParams, series: Var, times: usize) -> Vec<Var> {
    assert!(times >= 1, "encoding needs at least one time step");
    let fwd = phi.forward.run(tape, series, times, false);
    let bwd = phi.backward.run(tape, series, times, true);
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| {
            let s = tape.add(f, b);
            tape.scale_const(s, 0.5)
        })
        .collect()
}

/// Plain-value encoder for a `T × L` series.
pub fn encode_sequence(store: &ParamStore, phi: &PosteriorParams, series: &[f64], times: usize) -> Vec<Vec<f64>> {
    let bands = series.len() / times;
    let mut tape = Tape::with_params(store);
    let y = tape.input(Tensor::matrix(times, bands, series.to_vec()));
    encode_on_tape(&mut tape, phi, y, times)
        .into_iter()
        .map(|h| tape.value(h).to_vec())
        .collect()
}

/// Output of the change detector and the least-squares estimate behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// `u ∈ [0, 1/P]`.
    pub u: f64,
    /// Ridge least-squares abundances `M_prev† y_t` (unconstrained).
    pub least_squares: Vec<f64>,
}

/// `u = ‖s(M_prev† y_t) − softmax(c_prev)‖₁ / 2P` with `s` the simplex projection.
pub fn change_detector(y: &[f64], c_prev: &[f64], psi_prev: &[f64], basis: &EndmemberBasis) -> Detection {
    let m_prev = assemble_endmembers(basis, psi_prev);
    detect_with_endmembers(y, &softmax(c_prev), &m_prev)
}

pub fn detect_with_endmembers(y: &[f64], a_prev: &[f64], m_prev: &Tensor) -> Detection {
    let p = a_prev.len();
    let (ls, _) = ridge_lstsq(m_prev, y, RIDGE_LAMBDA);
    let proj = simplex_project(&ls);
    let l1: f64 = proj.iter().zip(a_prev).map(|(a, b)| (a - b).abs()).sum();
    Detection {
        u: l1 / (2.0 * p as f64),
        least_squares: ls,
    }
}

/// Tape nodes of one posterior step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub mu_c: Var,
    pub mu_psi: Var,
    /// `V_c h_t`, the log of `σ_c`.
    pub log_sigma_c: Var,
    /// `V_ψ h_t`, the log of `σ_ψ`.
    pub log_sigma_psi: Var,
}

impl StepNodes {
    pub fn sigma_c(&self, tape: &mut Tape) -> Var {
        tape.exp(self.log_sigma_c)
    }

    pub fn sigma_psi(&self, tape: &mut Tape) -> Var {
        tape.exp(self.log_sigma_psi)
    }
}

/// Posterior mean and scale at one time step.
///
/// `mu_c = π⁻¹(α₁(1−u)π(c_prev) + α₂u(M†y + W_c h))` where the argument of
/// `π⁻¹` is projected onto the simplex and floored at [`ABUNDANCE_FLOOR`];
/// `mu_ψ = βψ_prev + W_ψ h`; scales are `exp(V h)`. The detection (`u` and
/// `M†y`) enters as a constant: no gradient flows through it.
pub fn posterior_step_on_tape(
    tape: &mut Tape,
    phi: &PosteriorParams,
    c_prev: Var,
    psi_prev: Var,
    h: Var,
    detection: &Detection,
) -> StepNodes {
    let u = detection.u;
    let alpha1 = tape.param(phi.alpha1);
    let alpha2 = tape.param(phi.alpha2);
    let beta = tape.param(phi.beta);
    let w_c = tape.param(phi.w_c);
    let v_c = tape.param(phi.v_c);
    let w_psi = tape.param(phi.w_psi);
    let v_psi = tape.param(phi.v_psi);

    let a_prev = tape.softmax(c_prev);
    let keep = tape.mul_scalar(a_prev, alpha1);
    let keep = tape.scale_const(keep, 1.0 - u);
    let ls = tape.constant_vec(detection.least_squares.clone());
    let wh = tape.matmul(w_c, h);
    let innov = tape.add(ls, wh);
    let innov = tape.mul_scalar(innov, alpha2);
    let innov = tape.scale_const(innov, u);
    let z = tape.add(keep, innov);
    let proj = tape.simplex_project(z);
    let interior = tape.floor_renorm(proj, ABUNDANCE_FLOOR);
    let logs = tape.log(interior);
    let mu_c = tape.center(logs);

    let carry = tape.mul_scalar(psi_prev, beta);
    let wph = tape.matmul(w_psi, h);
    let mu_psi = tape.add(carry, wph);

    let log_sigma_c = tape.matmul(v_c, h);
    let log_sigma_psi = tape.matmul(v_psi, h);
    StepNodes {
        mu_c,
        mu_psi,
        log_sigma_c,
        log_sigma_psi,
    }
}

/// Plain-value posterior step outputs `(mu_c, mu_psi, sigma_c, sigma_psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub mu_c: Vec<f64>,
    pub mu_psi: Vec<f64>,
    pub sigma_c: Vec<f64>,
    pub sigma_psi: Vec<f64>,
    pub detection: Detection,
}

pub fn posterior_step(
    store: &ParamStore,
    phi: &PosteriorParams,
    basis: &EndmemberBasis,
    c_prev: &[f64],
    psi_prev: &[f64],
    y: &[f64],
    h: &[f64],
) -> StepOutput {
    let detection = change_detector(y, c_prev, psi_prev, basis);
    let mut tape = Tape::with_params(store);
    let c = tape.constant_vec(c_prev.to_vec());
    let psi = tape.constant_vec(psi_prev.to_vec());
    let hv = tape.constant_vec(h.to_vec());
    let nodes = posterior_step_on_tape(&mut tape, phi, c, psi, hv, &detection);
    let sc = nodes.sigma_c(&mut tape);
    let sp = nodes.sigma_psi(&mut tape);
    StepOutput {
        mu_c: tape.value(nodes.mu_c).to_vec(),
        mu_psi: tape.value(nodes.mu_psi).to_vec(),
        sigma_c: tape.value(sc).to_vec(),
        sigma_psi: tape.value(sp).to_vec(),
        detection,
    }
}

/// Mean and per-entry std of the shared initial posterior over `(c_0, ψ_0)`.
pub fn initial_posterior(store: &ParamStore, phi: &PosteriorParams) -> (Vec<f64>, Vec<f64>) {
    (
        store.get(phi.zeta).data().to_vec(),
        store.get(phi.xi).data().to_vec(),
    )
}

/// Abundances implied by a softmax-basis vector (convenience re-export).
pub fn abundances(c: &[f64]) -> Vec<f64> {
    softmax_pi(c)
}
