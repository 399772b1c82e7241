//! The full parameter set: generative parameters θ and posterior parameters φ
//! in one [`ParamStore`], plus the fixed DCT basis.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abundance::SigmaANet;
use crate::error::{Error, Result};
use crate::mixing::{build_dct_basis, EndmemberBasis};
use crate::numerics::{ParamId, ParamStore, Tensor};
use crate::posterior::PosteriorParams;

/// Lower bound on `σ_r` applied after every optimizer step.
pub const SIGMA_R_FLOOR: f64 = 1e-5;
/// Lower bound on the initial-distribution scales `γ₀`, `ξ`.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Initial measurement noise std.
pub const SIGMA_R_INIT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub bands: usize,
    pub endmembers: usize,
    pub basis: usize,
    pub sigma_a_layers: usize,
}

impl ModelDims {
    /// Encoder width `H = (K+1)P`.
    pub fn hidden(&self) -> usize {
        (self.basis + 1) * self.endmembers
    }

    pub fn psi_len(&self) -> usize {
        self.basis * self.endmembers
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.endmembers < 2 || self.basis == 0 || self.sigma_a_layers == 0 {
            return Err(Error::Config(format!(
                "invalid model dimensions L={} P={} K={} R={} (need L,K,R >= 1 and P >= 2)",
                self.bands, self.endmembers, self.basis, self.sigma_a_layers
            )));
        }
        if self.basis > self.bands {
            return Err(Error::Config(format!(
                "basis size K={} exceeds band count L={}",
                self.basis, self.bands
            )));
        }
        Ok(())
    }
}

/// Handles of the generative parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeParams {
    pub m0: ParamId,
    pub sigma_r: ParamId,
    pub sigma_a: SigmaANet,
    pub nu0_c: ParamId,
    pub nu0_psi: ParamId,
    pub gamma0_c: ParamId,
    pub gamma0_psi: ParamId,
}

impl GenerativeParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.m0, self.sigma_r];
        for (w, b) in &self.sigma_a.layers {
            ids.push(*w);
            ids.push(*b);
        }
        ids.extend([self.nu0_c, self.nu0_psi, self.gamma0_c, self.gamma0_psi]);
        ids
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub sigma_psi: f64,
    pub store: ParamStore,
    pub theta: GenerativeParams,
    pub phi: PosteriorParams,
    /// Orthonormal DCT basis `L × K` (fixed).
    pub dct: Tensor,
}

#[derive(Serialize, Deserialize)]
struct Archive {
    dims: ModelDims,
    sigma_psi: f64,
    store: ParamStore,
}

impl Model {
    /// Builds and initializes all parameters. `m0` is `L × P`; random
    /// weights are drawn from `seed`.
    pub fn new(dims: ModelDims, sigma_psi: f64, m0: Tensor, seed: u64) -> Result<Self> {
        dims.validate()?;
        if !(sigma_psi > 0.0 && sigma_psi.is_finite()) {
            return Err(Error::Config(format!("sigma_psi must be positive, got {sigma_psi}")));
        }
        if m0.shape() != [dims.bands, dims.endmembers] {
            return Err(Error::Shape {
                op: "Model::new",
                detail: format!("M0 has shape {:?}, expected [{}, {}]", m0.shape(), dims.bands, dims.endmembers),
            });
        }
        let dct = build_dct_basis(dims.bands, dims.basis)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (p, kp) = (dims.endmembers, dims.psi_len());
        let m0 = store.insert("m0", m0);
        let sigma_r = store.insert("sigma_r", Tensor::scalar(SIGMA_R_INIT));
        let sigma_a = SigmaANet::register(&mut store, p, dims.sigma_a_layers, &mut rng);
        let nu0_c = store.insert("nu0_c", Tensor::zeros(&[p]));
        let nu0_psi = store.insert("nu0_psi", Tensor::zeros(&[kp]));
        let gamma0_c = store.insert("gamma0_c", Tensor::filled(&[p], 1.0));
        let gamma0_psi = store.insert("gamma0_psi", Tensor::filled(&[kp], 1.0));
        let theta = GenerativeParams {
            m0,
            sigma_r,
            sigma_a,
            nu0_c,
            nu0_psi,
            gamma0_c,
            gamma0_psi,
        };
        let phi = PosteriorParams::register(&mut store, dims.bands, p, dims.basis, &mut rng);
        Ok(Self {
            dims,
            sigma_psi,
            store,
            theta,
            phi,
            dct,
        })
    }

    /// Current endmember basis `(M0, D)`.
    pub fn basis(&self) -> EndmemberBasis {
        EndmemberBasis::new(self.store.get(self.theta.m0).clone(), self.dct.clone())
            .expect("model shapes validated at construction")
    }

    pub fn sigma_r(&self) -> f64 {
        self.store.get(self.theta.sigma_r).data()[0]
    }

    /// Applies the scale floors after an optimizer step.
    pub fn project_constraints(&mut self) {
        let floor = |t: &mut Tensor, f: f64| t.data_mut().iter_mut().for_each(|v| *v = v.max(f));
        floor(self.store.get_mut(self.theta.sigma_r), SIGMA_R_FLOOR);
        for id in [self.theta.gamma0_c, self.theta.gamma0_psi, self.phi.xi] {
            floor(self.store.get_mut(id), SCALE_FLOOR);
        }
    }

    pub fn theta_count(&self) -> usize {
        self.theta.ids().iter().map(|id| self.store.get(*id).len()).sum()
    }

    pub fn phi_count(&self) -> usize {
        self.phi.ids().iter().map(|id| self.store.get(*id).len()).sum()
    }

    /// True when any `M0` entry is negative (reported, never enforced).
    pub fn has_negative_m0(&self) -> bool {
        self.store.get(self.theta.m0).data().iter().any(|v| *v < 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Archive {
            dims: self.dims,
            sigma_psi: self.sigma_psi,
            store: self.store.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let archive: Archive = serde_json::from_str(text)?;
        let m0 = archive
            .store
            .by_name("m0")
            .cloned()
            .ok_or_else(|| Error::Input("archive has no m0 parameter".into()))?;
        let mut model = Self::new(archive.dims, archive.sigma_psi, m0, 0)?;
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            let t = archive
                .store
                .by_name(&name)
                .ok_or_else(|| Error::Input(format!("archive is missing parameter {name}")))?;
            if t.shape() != model.store.get(id).shape() {
                return Err(Error::Input(format!(
                    "archive parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.store.get(id).shape()
                )));
            }
            *model.store.get_mut(id) = t.clone();
        }
        if archive.store.len() != model.store.len() {
            return Err(Error::Input("archive has unexpected extra parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
