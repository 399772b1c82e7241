#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use redsunn::elbo::{elbo_grad_with_noise, elbo_with_noise, PixelNoise};
use redsunn::model::{Model, ModelDims};
use redsunn::numerics::Tensor;

/// A 2-band, two-endmember, one-coefficient model with randomized
/// parameters so no gradient sits at a symmetric point.
pub fn tiny_model(seed: u64) -> Model {
    let dims = ModelDims {
        bands: 2,
        endmembers: 2,
        basis: 1,
        sigma_a_layers: 2,
    };
    let m0 = Tensor::matrix(2, 2, vec![0.8, 0.2, 0.3, 0.7]);
    let mut model = Model::new(dims, 0.1, m0, seed).expect("valid tiny model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.name(id).to_string();
        let t = model.store.get_mut(id);
        for v in t.data_mut() {
            match name.as_str() {
                "sigma_r" => *v = 0.05,
                "gamma0_c" | "gamma0_psi" | "xi" => *v = rng.random_range(0.6..1.4),
                "alpha1" | "alpha2" | "beta" => *v = rng.random_range(0.7..1.3),
                "m0" => {}
                _ => *v += rng.random_range(-0.3..0.3),
            }
        }
    }
    model
}

pub fn tiny_series() -> Vec<f64> {
    vec![0.55, 0.45, 0.35, 0.62]
}

pub struct GradCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Compares reverse-mode gradients of the one-sample ELBO with central
/// differences, holding the noise and the change detections fixed.
pub fn gradcheck(model: &Model, series: &[f64], noise: &PixelNoise) -> Vec<GradCheck> {
    let basis = model.basis();
    let mut grads = model.store.zeros_like();
    let pass = elbo_grad_with_noise(model, &basis, series, noise, None, 1.0, &mut grads);
    let frozen = pass.detections;
    let mut out = Vec::new();
    for id in model.store.ids() {
        let analytic = grads.get(id).data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let x = model.store.get(id).data()[j];
            let h = 1e-5 * x.abs().max(1.0);
            let mut m = model.clone();
            m.store.get_mut(id).data_mut()[j] = x + h;
            let fp = elbo_with_noise(&m, series, noise, Some(&frozen)).breakdown.total;
            m.store.get_mut(id).data_mut()[j] = x - h;
            let fm = elbo_with_noise(&m, series, noise, Some(&frozen)).breakdown.total;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let diff = norm(&analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect::<Vec<_>>());
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
        out.push(GradCheck {
            name: model.store.name(id).to_string(),
            rel_error: diff / scale,
            analytic_norm: norm(&analytic),
        });
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Noise for the tiny model with `times` steps.
pub fn tiny_noise(seed: u64, times: usize) -> PixelNoise {
    PixelNoise::draw(4, times, &mut ChaCha8Rng::seed_from_u64(seed))
}
