//! The pixel- and time-factorized ELBO, the minibatch Adam trainer and the
//! deterministic estimation pass.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abundance::softmax_pi;
use crate::error::{Error, Result};
use crate::mixing::{assemble_endmembers, endmembers_on_tape, gaussian_loglik_on_tape, EndmemberBasis};
use crate::model::Model;
use crate::numerics::{softmax, AdamConfig, AdamState, ParamGrads, Tape, Tensor, Var};
use crate::posterior::{detect_with_endmembers, encode_on_tape, posterior_step_on_tape, Detection};
use crate::sequence::HsiSequence;

/// Pixels per gradient reduction chunk. Fixed so that the floating-point
/// summation order does not depend on the thread count.
const REDUCE_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon_loglik: f64,
    pub kl_initial: f64,
    pub kl_transition: f64,
    pub total: f64,
}

impl ElboBreakdown {
    fn add(&mut self, o: &ElboBreakdown) {
        self.recon_loglik += o.recon_loglik;
        self.kl_initial += o.kl_initial;
        self.kl_transition += o.kl_transition;
        self.total += o.total;
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            recon_loglik: self.recon_loglik * s,
            kl_initial: self.kl_initial * s,
            kl_transition: self.kl_transition * s,
            total: self.total * s,
        }
    }
}

/// `KL(N(mu1, diag s1²) ‖ N(mu2, diag s2²))`.
pub fn kl_diag_gaussians(mu1: &[f64], s1: &[f64], mu2: &[f64], s2: &[f64]) -> f64 {
    assert!(
        mu1.len() == s1.len() && mu1.len() == mu2.len() && mu1.len() == s2.len(),
        "kl_diag_gaussians: length mismatch"
    );
    mu1.iter()
        .zip(s1)
        .zip(mu2.iter().zip(s2))
        .map(|((m1, a), (m2, b))| {
            let r = a / b;
            (b / a).ln() + 0.5 * (r * r + ((m1 - m2) / b).powi(2)) - 0.5
        })
        .sum()
}

/// KL between diagonal Gaussians given log-stds, as a scalar node.
///
/// Written as `Σ ½e^{2r} − r − ½ + ½(μ₁−μ₂)² e^{−2ℓ₂}` with `r = ℓ₁ − ℓ₂`,
/// which is non-negative term by term up to rounding.
pub fn kl_on_tape(tape: &mut Tape, mu1: Var, log_s1: Var, mu2: Var, log_s2: Var) -> Var {
    let r = tape.sub(log_s1, log_s2);
    let r2 = tape.scale_const(r, 2.0);
    let e = tape.exp(r2);
    let e = tape.scale_const(e, 0.5);
    let core = tape.sub(e, r);
    let core = tape.add_const(core, -0.5);
    let d = tape.sub(mu1, mu2);
    let d2 = tape.square(d);
    let l2 = tape.scale_const(log_s2, -2.0);
    let inv = tape.exp(l2);
    let quad = tape.mul(d2, inv);
    let quad = tape.scale_const(quad, 0.5);
    let all = tape.add(core, quad);
    tape.sum(all)
}

/// Standard-normal draws for one pixel's reparametrized chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelNoise {
    /// `(K+1)P` draws for `(c_0, ψ_0)`.
    pub initial: Vec<f64>,
    /// `T` blocks of `(K+1)P` draws for `(c_t, ψ_t)`.
    pub steps: Vec<Vec<f64>>,
}

impl PixelNoise {
    pub fn draw<R: Rng + ?Sized>(state_len: usize, times: usize, rng: &mut R) -> Self {
        let mut block = || (0..state_len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        let initial = block();
        let steps = (0..times).map(|_| block()).collect();
        Self { initial, steps }
    }
}

/// Result of one pixel's ELBO evaluation with gradient.
#[derive(Debug, Clone)]
pub struct PixelPass {
    pub breakdown: ElboBreakdown,
    pub detections: Vec<Detection>,
}

struct PixelGraph {
    recon: Var,
    kl0: Var,
    klt: Var,
    total: Var,
    detections: Vec<Detection>,
}

fn reparam(tape: &mut Tape, mu: Var, log_s: Var, eps: &[f64]) -> Var {
    let s = tape.exp(log_s);
    let e = tape.constant_vec(eps.to_vec());
    let se = tape.mul(s, e);
    tape.add(mu, se)
}

fn build_pixel(
    tape: &mut Tape,
    model: &Model,
    basis: &EndmemberBasis,
    series: &[f64],
    noise: &PixelNoise,
    frozen: Option<&[Detection]>,
) -> PixelGraph {
    let dims = model.dims;
    let (l, p, k) = (dims.bands, dims.endmembers, dims.basis);
    let times = series.len() / l;
    let th = &model.theta;
    let phi = &model.phi;

    let y_all = tape.constant(Tensor::matrix(times, l, series.to_vec()));
    let h = encode_on_tape(tape, phi, y_all, times);

    // t = 0: shared initial posterior against the initial prior.
    let zeta = tape.param(phi.zeta);
    let xi = tape.param(phi.xi);
    let log_xi = tape.log(xi);
    let nu_c = tape.param(th.nu0_c);
    let nu_psi = tape.param(th.nu0_psi);
    let nu = tape.concat(&[nu_c, nu_psi]);
    let g_c = tape.param(th.gamma0_c);
    let g_psi = tape.param(th.gamma0_psi);
    let gamma = tape.concat(&[g_c, g_psi]);
    let log_gamma = tape.log(gamma);
    let kl0 = kl_on_tape(tape, zeta, log_xi, nu, log_gamma);
    let state0 = reparam(tape, zeta, log_xi, &noise.initial);
    let mut c_prev = tape.slice(state0, 0, p);
    let mut psi_prev = tape.slice(state0, p, k * p);

    let m0 = tape.param(th.m0);
    let d = tape.constant(model.dct.clone());
    let sigma_r = tape.param(th.sigma_r);
    let log_sigma_psi = tape.constant_vec(vec![model.sigma_psi.ln(); k * p]);

    let mut detections = Vec::with_capacity(times);
    let mut recon_terms = Vec::with_capacity(times);
    let mut kl_terms = Vec::with_capacity(2 * times);
    for t in 0..times {
        let y = &series[t * l..(t + 1) * l];
        let det = match frozen {
            Some(f) => f[t].clone(),
            None => {
                let m_prev = assemble_endmembers(basis, tape.value(psi_prev));
                detect_with_endmembers(y, &softmax(tape.value(c_prev)), &m_prev)
            }
        };
        let step = posterior_step_on_tape(tape, phi, c_prev, psi_prev, h[t], &det);
        detections.push(det);

        let eps = &noise.steps[t];
        let c_t = reparam(tape, step.mu_c, step.log_sigma_c, &eps[..p]);
        let psi_t = reparam(tape, step.mu_psi, step.log_sigma_psi, &eps[p..]);

        // Transition KLs at the sampled conditioning state.
        let log_sa = th.sigma_a.log_on_tape(tape, c_prev);
        let log_sa = tape.broadcast(log_sa, p);
        kl_terms.push(kl_on_tape(tape, step.mu_c, step.log_sigma_c, c_prev, log_sa));
        kl_terms.push(kl_on_tape(tape, step.mu_psi, step.log_sigma_psi, psi_prev, log_sigma_psi));

        let m_t = endmembers_on_tape(tape, m0, d, psi_t, k, p);
        let a_t = tape.softmax(c_t);
        let mean = tape.matmul(m_t, a_t);
        let y_t = tape.constant_vec(y.to_vec());
        recon_terms.push(gaussian_loglik_on_tape(tape, y_t, mean, sigma_r));

        c_prev = c_t;
        psi_prev = psi_t;
    }
    let recon = tape.concat(&recon_terms);
    let recon = tape.sum(recon);
    let klt = tape.concat(&kl_terms);
    let klt = tape.sum(klt);
    let neg = tape.add(kl0, klt);
    let total = tape.sub(recon, neg);
    PixelGraph {
        recon,
        kl0,
        klt,
        total,
        detections,
    }
}

fn breakdown(tape: &Tape, g: &PixelGraph) -> ElboBreakdown {
    ElboBreakdown {
        recon_loglik: tape.scalar_value(g.recon),
        kl_initial: tape.scalar_value(g.kl0),
        kl_transition: tape.scalar_value(g.klt),
        total: tape.scalar_value(g.total),
    }
}

fn check_finite(b: &ElboBreakdown, pixel: usize) -> Result<()> {
    for (name, v) in [
        ("reconstruction", b.recon_loglik),
        ("initial KL", b.kl_initial),
        ("transition KL", b.kl_transition),
    ] {
        if !v.is_finite() {
            return Err(Error::Divergence(format!("non-finite {name} term ({v}) at pixel {pixel}")));
        }
    }
    Ok(())
}

/// Evaluates the one-sample ELBO of a `T × L` pixel series with the given
/// noise. With `frozen`, the change detections are taken from a previous
/// pass instead of being recomputed.
pub fn elbo_with_noise(
    model: &Model,
    series: &[f64],
    noise: &PixelNoise,
    frozen: Option<&[Detection]>,
) -> PixelPass {
    let basis = model.basis();
    let mut tape = Tape::with_params(&model.store);
    let g = build_pixel(&mut tape, model, &basis, series, noise, frozen);
    PixelPass {
        breakdown: breakdown(&tape, &g),
        detections: g.detections,
    }
}

/// Like [`elbo_with_noise`] and also adds `scale · ∇ELBO` into `grads`.
pub fn elbo_grad_with_noise(
    model: &Model,
    basis: &EndmemberBasis,
    series: &[f64],
    noise: &PixelNoise,
    frozen: Option<&[Detection]>,
    scale: f64,
    grads: &mut ParamGrads,
) -> PixelPass {
    let mut tape = Tape::with_params(&model.store);
    let g = build_pixel(&mut tape, model, basis, series, noise, frozen);
    let root = tape.scale_const(g.total, scale);
    let adj = tape.backward(root);
    tape.accumulate_param_grads(&adj, grads);
    PixelPass {
        breakdown: breakdown(&tape, &g),
        detections: g.detections,
    }
}

/// One-sample ELBO of a pixel series drawing its noise from `rng`.
pub fn elbo_pixel<R: Rng + ?Sized>(model: &Model, series: &[f64], rng: &mut R) -> Result<ElboBreakdown> {
    let times = series.len() / model.dims.bands;
    if times == 0 {
        return Err(Error::Input("pixel series must have at least one time step".into()));
    }
    let noise = PixelNoise::draw(model.dims.hidden(), times, rng);
    let b = elbo_with_noise(model, series, &noise, None).breakdown;
    check_finite(&b, 0)?;
    Ok(b)
}

fn pixel_rng(seed: u64, epoch: usize, pixel: usize, pixels: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (epoch * pixels + pixel) as u64);
    rng
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_elbo: f64,
    pub mean_recon: f64,
    pub mean_kl_initial: f64,
    pub mean_kl_transition: f64,
    /// Smallest per-pixel KL value seen this epoch (initial or transition).
    pub min_kl: f64,
    pub wall_time_s: f64,
}

/// Maximizes the mean pixel ELBO with Adam over shuffled pixel minibatches.
///
/// `on_epoch` is called after every epoch. On divergence the model is reset
/// to its state at the start of the failing epoch and an error is returned.
pub fn train(
    model: &mut Model,
    data: &HsiSequence,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.bands != model.dims.bands {
        return Err(Error::Shape {
            op: "train",
            detail: format!("data has {} bands, model expects {}", data.bands, model.dims.bands),
        });
    }
    if !data.is_finite() {
        return Err(Error::Input("training data contains non-finite values".into()));
    }
    let n = data.pixels();
    let state_len = model.dims.hidden();
    let series: Vec<Vec<f64>> = (0..n).map(|i| data.series(i)).collect();
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Stream 0 belongs to the shuffle; pixel streams start at 1.
    shuffle_rng.set_stream(0);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let checkpoint = model.store.clone();
        order.shuffle(&mut shuffle_rng);
        let mut sum = ElboBreakdown::default();
        let mut min_kl = f64::INFINITY;
        let mut failure = None;
        for batch in order.chunks(cfg.batch_size) {
            let basis = model.basis();
            let scale = -1.0 / batch.len() as f64;
            let m: &Model = model;
            let partials: Vec<Result<(ParamGrads, ElboBreakdown, f64)>> = batch
                .par_chunks(REDUCE_CHUNK)
                .map(|chunk| {
                    let mut grads = m.store.zeros_like();
                    let mut acc = ElboBreakdown::default();
                    let mut lo = f64::INFINITY;
                    for &i in chunk {
                        let mut rng = pixel_rng(cfg.seed, epoch, i, n);
                        let noise = PixelNoise::draw(state_len, data.times, &mut rng);
                        let pass = elbo_grad_with_noise(m, &basis, &series[i], &noise, None, scale, &mut grads);
                        check_finite(&pass.breakdown, i)?;
                        acc.add(&pass.breakdown);
                        lo = lo.min(pass.breakdown.kl_initial).min(pass.breakdown.kl_transition);
                    }
                    Ok((grads, acc, lo))
                })
                .collect();
            let mut grads = model.store.zeros_like();
            for part in partials {
                match part {
                    Ok((g, b, lo)) => {
                        grads.add_assign(&g);
                        sum.add(&b);
                        min_kl = min_kl.min(lo);
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            if failure.is_none() {
                if let Err(e) = adam.step(&mut model.store, &grads) {
                    failure = Some(e);
                }
            }
            if let Some(e) = failure.take() {
                model.store = checkpoint;
                return Err(Error::Divergence(format!("epoch {epoch}: {e}")));
            }
            model.project_constraints();
        }
        let mean = sum.scaled(1.0 / n as f64);
        let rec = EpochRecord {
            epoch,
            mean_elbo: mean.total,
            mean_recon: mean.recon_loglik,
            mean_kl_initial: mean.kl_initial,
            mean_kl_transition: mean.kl_transition,
            min_kl,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: elbo {:.6e} recon {:.6e} kl0 {:.3e} klt {:.3e}",
            rec.mean_elbo,
            rec.mean_recon,
            rec.mean_kl_initial,
            rec.mean_kl_transition
        );
        log::debug!(
            "epoch {epoch}: sigma_r {:.3e} alpha1 {:.4} alpha2 {:.4} beta {:.4}",
            model.sigma_r(),
            model.store.get(model.phi.alpha1).data()[0],
            model.store.get(model.phi.alpha2).data()[0],
            model.store.get(model.phi.beta).data()[0]
        );
        on_epoch(&rec);
        trace.push(rec);
    }
    Ok(trace)
}

/// Posterior-mean estimates for every pixel and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub times: usize,
    pub pixels: usize,
    pub endmembers: usize,
    pub psi_len: usize,
    /// `T × N × P`, rows on the simplex.
    pub abundances: Vec<f64>,
    /// `T × N × KP` variability coefficients.
    pub psi: Vec<f64>,
    /// `T × N` change-detector outputs.
    pub u: Vec<f64>,
}

impl Estimate {
    pub fn abundance(&self, t: usize, n: usize) -> &[f64] {
        let o = (t * self.pixels + n) * self.endmembers;
        &self.abundances[o..o + self.endmembers]
    }

    pub fn psi_at(&self, t: usize, n: usize) -> &[f64] {
        let o = (t * self.pixels + n) * self.psi_len;
        &self.psi[o..o + self.psi_len]
    }

    pub fn u_at(&self, t: usize, n: usize) -> f64 {
        self.u[t * self.pixels + n]
    }

    /// `L × P` endmember matrix of pixel `n` at time `t`.
    pub fn endmembers(&self, basis: &EndmemberBasis, t: usize, n: usize) -> Tensor {
        assemble_endmembers(basis, self.psi_at(t, n))
    }
}

/// Deterministic pass: initial means, then posterior means conditioned on
/// the previous means.
pub fn estimate(model: &Model, data: &HsiSequence) -> Result<Estimate> {
    if data.bands != model.dims.bands {
        return Err(Error::Shape {
            op: "estimate",
            detail: format!("data has {} bands, model expects {}", data.bands, model.dims.bands),
        });
    }
    let (p, kp) = (model.dims.endmembers, model.dims.psi_len());
    let (times, n) = (data.times, data.pixels());
    let basis = model.basis();
    let per_pixel: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| estimate_pixel(model, &basis, &data.series(i)))
        .collect();
    let mut abundances = vec![0.0; times * n * p];
    let mut psi = vec![0.0; times * n * kp];
    let mut u = vec![0.0; times * n];
    for (i, (a, s, us)) in per_pixel.into_iter().enumerate() {
        for t in 0..times {
            abundances[(t * n + i) * p..(t * n + i + 1) * p].copy_from_slice(&a[t * p..(t + 1) * p]);
            psi[(t * n + i) * kp..(t * n + i + 1) * kp].copy_from_slice(&s[t * kp..(t + 1) * kp]);
            u[t * n + i] = us[t];
        }
    }
    Ok(Estimate {
        times,
        pixels: n,
        endmembers: p,
        psi_len: kp,
        abundances,
        psi,
        u,
    })
}

fn estimate_pixel(model: &Model, basis: &EndmemberBasis, series: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (l, p) = (model.dims.bands, model.dims.endmembers);
    let times = series.len() / l;
    let mut tape = Tape::with_params(&model.store);
    let y_all = tape.constant(Tensor::matrix(times, l, series.to_vec()));
    let h = encode_on_tape(&mut tape, &model.phi, y_all, times);
    let zeta = model.store.get(model.phi.zeta).data();
    let mut c_prev = tape.constant_vec(zeta[..p].to_vec());
    let mut psi_prev = tape.constant_vec(zeta[p..].to_vec());
    let mut a_out = Vec::with_capacity(times * p);
    let mut psi_out = Vec::new();
    let mut u_out = Vec::with_capacity(times);
    for (t, h_t) in h.iter().enumerate() {
        let y = &series[t * l..(t + 1) * l];
        let m_prev = assemble_endmembers(basis, tape.value(psi_prev));
        let det = detect_with_endmembers(y, &softmax(tape.value(c_prev)), &m_prev);
        let step = posterior_step_on_tape(&mut tape, &model.phi, c_prev, psi_prev, *h_t, &det);
        u_out.push(det.u);
        a_out.extend(softmax_pi(tape.value(step.mu_c)));
        psi_out.extend_from_slice(tape.value(step.mu_psi));
        c_prev = step.mu_c;
        psi_prev = step.mu_psi;
    }
    (a_out, psi_out, u_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abundance::c_transition_params;
    use crate::mixing::log_likelihood;
    use crate::model::ModelDims;
    use crate::posterior::{encode_sequence, posterior_step};

    fn small_model(seed: u64) -> Model {
        let dims = ModelDims {
            bands: 4,
            endmembers: 2,
            basis: 2,
            sigma_a_layers: 2,
        };
        let m0 = Tensor::matrix(4, 2, vec![0.9, 0.1, 0.7, 0.3, 0.4, 0.6, 0.2, 0.8]);
        let mut m = Model::new(dims, 0.05, m0, seed).unwrap();
        // Move off the symmetric defaults so every term is exercised.
        m.store.get_mut(m.phi.zeta).data_mut().copy_from_slice(&[0.3, -0.2, 0.05, -0.04, 0.02, 0.01]);
        m.store.get_mut(m.phi.xi).data_mut().copy_from_slice(&[0.8, 1.1, 0.9, 1.2, 0.7, 1.0]);
        m.store.get_mut(m.theta.sigma_r).data_mut()[0] = 0.05;
        for v in m.store.get_mut(m.phi.w_c).data_mut() {
            *v = 0.1;
        }
        m
    }

    fn small_data(times: usize, rows: usize, cols: usize) -> HsiSequence {
        let n = rows * cols;
        let mut data = Vec::with_capacity(times * n * 4);
        for t in 0..times {
            for i in 0..n {
                let a = (i as f64 + 0.5) / n as f64 * (0.8 + 0.04 * t as f64);
                let a = a.min(0.95);
                for (e1, e2) in [(0.9, 0.1), (0.7, 0.3), (0.4, 0.6), (0.2, 0.8)] {
                    data.push(a * e1 + (1.0 - a) * e2);
                }
            }
        }
        HsiSequence::new(times, rows, cols, 4, data).unwrap()
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let mu = [0.3, -1.0, 2.0];
        let s = [0.5, 1.0, 2.0];
        assert!(kl_diag_gaussians(&mu, &s, &mu, &s).abs() < 1e-15);
    }

    #[test]
    fn kl_unit_mean_shift_is_half() {
        assert!((kl_diag_gaussians(&[1.0], &[1.0], &[0.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_on_tape_matches_plain_formula() {
        let (mu1, s1, mu2, s2) = ([0.2, -0.7], [0.3, 2.0], [1.0, 0.1], [1.5, 0.4]);
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(mu1.to_vec()));
        let b = tape.input(Tensor::vector(s1.iter().map(|v: &f64| v.ln()).collect()));
        let c = tape.input(Tensor::vector(mu2.to_vec()));
        let d = tape.input(Tensor::vector(s2.iter().map(|v: &f64| v.ln()).collect()));
        let kl = kl_on_tape(&mut tape, a, b, c, d);
        let expected = kl_diag_gaussians(&mu1, &s1, &mu2, &s2);
        assert!((tape.scalar_value(kl) - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn zero_noise_elbo_matches_plain_recursion() {
        let model = small_model(3);
        let data = small_data(2, 1, 1);
        let series = data.series(0);
        let p = 2;
        let noise = PixelNoise {
            initial: vec![0.0; 6],
            steps: vec![vec![0.0; 6]; 2],
        };
        let got = elbo_with_noise(&model, &series, &noise, None).breakdown;

        let st = &model.store;
        let basis = model.basis();
        let zeta = st.get(model.phi.zeta).data();
        let xi = st.get(model.phi.xi).data();
        let nu: Vec<f64> = [st.get(model.theta.nu0_c).data(), st.get(model.theta.nu0_psi).data()].concat();
        let gamma: Vec<f64> = [st.get(model.theta.gamma0_c).data(), st.get(model.theta.gamma0_psi).data()].concat();
        let kl0 = kl_diag_gaussians(zeta, xi, &nu, &gamma);
        let h = encode_sequence(st, &model.phi, &series, 2);
        let (mut c, mut psi) = (zeta[..p].to_vec(), zeta[p..].to_vec());
        let (mut recon, mut klt) = (0.0, 0.0);
        for (t, h_t) in h.iter().enumerate() {
            let y = data.pixel(t, 0);
            let o = posterior_step(st, &model.phi, &basis, &c, &psi, y, h_t);
            let (prior_mean, prior_std) = c_transition_params(&c, &model.theta.sigma_a, st);
            klt += kl_diag_gaussians(&o.mu_c, &o.sigma_c, &prior_mean, &prior_std);
            klt += kl_diag_gaussians(&o.mu_psi, &o.sigma_psi, &psi, &vec![model.sigma_psi; psi.len()]);
            recon += log_likelihood(y, &basis, &o.mu_c, &o.mu_psi, model.sigma_r());
            c = o.mu_c;
            psi = o.mu_psi;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        assert!(close(got.kl_initial, kl0), "{} vs {kl0}", got.kl_initial);
        assert!(close(got.kl_transition, klt), "{} vs {klt}", got.kl_transition);
        assert!(close(got.recon_loglik, recon), "{} vs {recon}", got.recon_loglik);
        assert!(close(got.total, recon - kl0 - klt));
    }

    #[test]
    fn same_noise_gives_identical_elbo() {
        let model = small_model(4);
        let series = small_data(3, 1, 1).series(0);
        let noise = PixelNoise::draw(6, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let a = elbo_with_noise(&model, &series, &noise, None).breakdown;
        let b = elbo_with_noise(&model, &series, &noise, None).breakdown;
        assert_eq!(a, b);
    }

    #[test]
    fn kl_terms_are_non_negative() {
        let model = small_model(5);
        let series = small_data(3, 1, 1).series(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = elbo_pixel(&model, &series, &mut rng).unwrap();
            assert!(b.kl_initial >= -1e-10 && b.kl_transition >= -1e-10);
        }
    }

    #[test]
    fn smaller_sigma_r_raises_loglik_of_a_perfect_fit() {
        let model = small_model(6);
        let basis = model.basis();
        let c = [0.4, -0.4];
        let psi = [0.0; 4];
        let y = crate::mixing::pixel_mean(&basis, &c, &psi);
        assert!(log_likelihood(&y, &basis, &c, &psi, 0.01) > log_likelihood(&y, &basis, &c, &psi, 0.1));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut model = small_model(7);
        let before = model.store.clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            learning_rate: 0.0,
            seed: 1,
        };
        train(&mut model, &small_data(3, 2, 3), &cfg, |_| {}).unwrap();
        assert_eq!(model.store, before);
    }

    #[test]
    fn training_is_reproducible() {
        let data = small_data(3, 3, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 11,
        };
        let run = || {
            let mut m = small_model(8);
            let trace = train(&mut m, &data, &cfg, |_| {}).unwrap();
            (m.store, trace.iter().map(|r| r.mean_elbo).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_improves_the_elbo_on_a_toy_problem() {
        let data = small_data(3, 4, 4);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 2,
        };
        let mut model = small_model(9);
        let trace = train(&mut model, &data, &cfg, |_| {}).unwrap();
        let head: f64 = trace[..5].iter().map(|r| r.mean_elbo).sum::<f64>() / 5.0;
        let tail: f64 = trace[trace.len() - 5..].iter().map(|r| r.mean_elbo).sum::<f64>() / 5.0;
        assert!(tail > head, "ELBO went from {head} to {tail}");
    }

    #[test]
    fn estimates_are_on_the_simplex_with_bounded_detector() {
        let model = small_model(10);
        let data = small_data(4, 2, 2);
        let est = estimate(&model, &data).unwrap();
        for t in 0..4 {
            for n in 0..4 {
                let a = est.abundance(t, n);
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(a.iter().all(|v| *v >= 0.0));
                let u = est.u_at(t, n);
                assert!((0.0..=0.5 + 1e-12).contains(&u));
            }
        }
    }

    #[test]
    fn band_mismatch_is_rejected() {
        let mut model = small_model(11);
        let data = HsiSequence::new(2, 1, 1, 3, vec![0.5; 6]).unwrap();
        assert!(train(&mut model, &data, &TrainConfig::default(), |_| {}).is_err());
        assert!(estimate(&model, &data).is_err());
    }

    #[test]
    fn divergence_restores_the_epoch_checkpoint() {
        let mut model = small_model(12);
        let mut raw = small_data(2, 2, 2).data().to_vec();
        raw[0] = 1e300;
        let data = HsiSequence::new(2, 2, 2, 4, raw).unwrap();
        let before = model.store.clone();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            learning_rate: 1e-2,
            seed: 0,
        };
        match train(&mut model, &data, &cfg, |_| {}) {
            Err(Error::Divergence(_)) => assert_eq!(model.store, before),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
