//! VCA endmember extraction, the per-image FCLS baseline, permutation
//! alignment, error metrics and parameter accounting.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, sorted_eigh};
use crate::numerics::{simplex_project, Tensor};
use crate::sequence::HsiSequence;

/// Vertex component analysis on `pixels` (`N × L`, row-major). Returns the
/// `L × P` matrix of selected pixels (in the denoised subspace).
pub fn vca<R: Rng + ?Sized>(pixels: &[f64], bands: usize, p: usize, rng: &mut R) -> Result<Tensor> {
    let n = pixels.len() / bands.max(1);
    if bands == 0 || n * bands != pixels.len() {
        return Err(Error::Shape {
            op: "vca",
            detail: format!("{} values are not a multiple of L={bands}", pixels.len()),
        });
    }
    if n < p || p < 2 {
        return Err(Error::Input(format!("vca needs N >= P >= 2, got N={n}, P={p}")));
    }
    if p > bands {
        return Err(Error::Input(format!("vca needs P <= L, got P={p}, L={bands}")));
    }
    // Y is L × N.
    let y = DMatrix::from_column_slice(bands, n, pixels);
    let mean: DVector<f64> = y.column_mean();
    let mut y0 = y.clone();
    for mut c in y0.column_iter_mut() {
        c -= &mean;
    }
    let cov0 = (&y0 * y0.transpose()) / n as f64;
    let (vals0, vecs0) = sorted_eigh(cov0);
    if vals0[0] <= 1e-20 * mean.norm_squared().max(f64::MIN_POSITIVE) {
        return Err(Error::Input("vca: all pixels are identical".into()));
    }
    let rank = vals0.iter().filter(|v| **v > 1e-12 * vals0[0]).count();
    if rank < p - 1 {
        log::warn!("vca: data spans only {rank} dimensions around its mean, fewer than P-1={}", p - 1);
    }
    let ud0 = vecs0.columns(0, p).into_owned();
    let xp = ud0.transpose() * &y0;

    let p_y = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let p_x = xp.iter().map(|v| v * v).sum::<f64>() / n as f64 + mean.dot(&mean);
    let snr = 10.0 * ((p_x - p as f64 / bands as f64 * p_y) / (p_y - p_x)).log10();
    let snr_th = 15.0 + 10.0 * (p as f64).log10();

    let (rp, proj): (DMatrix<f64>, DMatrix<f64>) = if !(snr >= snr_th) {
        // Projective projection onto the (P-1)-dim affine subspace.
        let d = p - 1;
        let ud = ud0.columns(0, d).into_owned();
        let x = xp.rows(0, d).into_owned();
        let mut rp = &ud * &x;
        for mut c in rp.column_iter_mut() {
            c += &mean;
        }
        let cmax = x.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max).sqrt();
        let mut yy = DMatrix::zeros(p, n);
        yy.rows_mut(0, d).copy_from(&x);
        yy.row_mut(d).fill(cmax);
        (rp, yy)
    } else {
        let cov = (&y * y.transpose()) / n as f64;
        let (_, vecs) = sorted_eigh(cov);
        let ud = vecs.columns(0, p).into_owned();
        let x = ud.transpose() * &y;
        let rp = &ud * &x;
        let u = x.column_mean();
        let mut yy = x.clone();
        for (j, mut c) in yy.column_iter_mut().enumerate() {
            let s = x.column(j).dot(&u);
            c /= if s.abs() > 1e-300 { s } else { 1e-300 };
        }
        (rp, yy)
    };

    let mut a = DMatrix::zeros(p, p);
    a[(p - 1, 0)] = 1.0;
    let mut indices = Vec::with_capacity(p);
    for i in 0..p {
        let w = DVector::from_iterator(p, (0..p).map(|_| rng.random::<f64>()));
        let f = &w - &a * (pinv(&a) * &w);
        let f = &f / f.norm().max(1e-300);
        let v = f.transpose() * &proj;
        let (idx, _) = v
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (j, x)| if x.abs() > bv { (j, x.abs()) } else { (bi, bv) });
        indices.push(idx);
        a.set_column(i, &proj.column(idx));
    }
    let mut out = Tensor::zeros(&[bands, p]);
    for (j, idx) in indices.iter().enumerate() {
        for b in 0..bands {
            out.set(b, j, rp[(b, *idx)]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FclsResult {
    pub abundances: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub const FCLS_MAX_ITER: usize = 2000;
pub const FCLS_TOL: f64 = 1e-9;

/// `argmin ‖y − Ma‖²` over the unit simplex.
///
/// Accelerated projected gradient with adaptive restart, followed by an
/// exact equality-constrained solve on the detected support that is kept
/// when it satisfies the KKT conditions.
pub fn fcls(y: &[f64], m: &Tensor) -> FclsResult {
    let (l, p) = (m.rows(), m.cols());
    assert_eq!(y.len(), l, "fcls: y has {} bands, M has {l}", y.len());
    let md = DMatrix::from_row_slice(l, p, m.data());
    let g = md.transpose() * &md;
    let b = md.transpose() * DVector::from_column_slice(y);
    let lip = g.clone().symmetric_eigenvalues().max().max(1e-300);
    let grad = |a: &DVector<f64>| &g * a - &b;
    let obj = |a: &DVector<f64>| 0.5 * a.dot(&(&g * a)) - b.dot(a);
    let proj = |v: &DVector<f64>| DVector::from_vec(simplex_project(v.as_slice()));
    let kkt = |a: &DVector<f64>| {
        let step = proj(&(a - grad(a) / lip));
        (a - step).amax() * lip
    };
    let scale = b.amax().max(g.amax()).max(1.0);

    let mut x = DVector::from_element(p, 1.0 / p as f64);
    let mut z = x.clone();
    let mut tk = 1.0f64;
    let mut best = x.clone();
    let mut best_obj = obj(&x);
    let mut iterations = 0;
    for it in 0..FCLS_MAX_ITER {
        iterations = it + 1;
        let x_new = proj(&(&z - grad(&z) / lip));
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        // Restart momentum when it points uphill.
        if (&z - &x_new).dot(&(&x_new - &x)) > 0.0 {
            z = x_new.clone();
            tk = 1.0;
        } else {
            z = &x_new + (&x_new - &x) * ((tk - 1.0) / t_new);
            tk = t_new;
        }
        x = x_new;
        let o = obj(&x);
        if o < best_obj {
            best_obj = o;
            best = x.clone();
        }
        if kkt(&x) <= FCLS_TOL * scale {
            break;
        }
    }
    if let Some(polished) = polish(&g, &b, &best) {
        if obj(&polished) <= best_obj + 1e-15 * best_obj.abs().max(1.0) {
            best = polished;
        }
    }
    let converged = kkt(&best) <= FCLS_TOL * scale;
    FclsResult {
        abundances: best.iter().copied().collect(),
        converged,
        iterations,
    }
}

/// Solves the KKT system on the support of `a`; returns it when feasible
/// and optimal.
fn polish(g: &DMatrix<f64>, b: &DVector<f64>, a: &DVector<f64>) -> Option<DVector<f64>> {
    let p = a.len();
    let support: Vec<usize> = (0..p).filter(|i| a[*i] > 1e-10).collect();
    let s = support.len();
    if s == 0 {
        return None;
    }
    let mut k = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (i, &si) in support.iter().enumerate() {
        for (j, &sj) in support.iter().enumerate() {
            k[(i, j)] = g[(si, sj)];
        }
        k[(i, s)] = 1.0;
        k[(s, i)] = 1.0;
        rhs[i] = b[si];
    }
    rhs[s] = 1.0;
    let sol = k.lu().solve(&rhs)?;
    let lambda = sol[s];
    let mut out = DVector::zeros(p);
    for (i, &si) in support.iter().enumerate() {
        if sol[i] < 0.0 {
            return None;
        }
        out[si] = sol[i];
    }
    let gr = g * &out - b;
    let tol = 1e-10 * b.amax().max(1.0);
    for i in 0..p {
        if !support.contains(&i) && gr[i] + lambda < -tol {
            return None;
        }
    }
    Some(out)
}

/// Permutation `perm` minimizing `Σ_j SAM(truth_j, est_{perm[j]})`, i.e.
/// column `j` of the aligned estimate is column `perm[j]` of `est`.
pub fn permutation_align(est: &Tensor, truth: &Tensor) -> Vec<usize> {
    let p = truth.cols();
    assert_eq!(est.shape(), truth.shape(), "permutation_align: shape mismatch");
    assert!(p <= 8, "exhaustive alignment is limited to P <= 8");
    let mut cost = vec![0.0; p * p];
    for j in 0..p {
        for k in 0..p {
            cost[j * p + k] = spectral_angle(&truth.column(j), &est.column(k));
        }
    }
    let mut perm: Vec<usize> = (0..p).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, &mut |q| {
        let c: f64 = q.iter().enumerate().map(|(j, k)| cost[j * p + k]).sum();
        if c < best_cost - 1e-15 {
            best_cost = c;
            best = q.to_vec();
        }
    });
    best
}

fn permute(v: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Angle between two spectra in radians; a zero vector gives `NaN`.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (d / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Anything that can produce the `L × P` endmember matrix of pixel `n` at
/// time `t`.
pub trait EndmemberSource: Sync {
    fn endmembers_at(&self, t: usize, n: usize) -> Tensor;
}

impl EndmemberSource for crate::synth::GroundTruth {
    fn endmembers_at(&self, t: usize, n: usize) -> Tensor {
        crate::synth::GroundTruth::endmembers_at(self, t, n)
    }
}

/// One endmember matrix per time step, shared by all pixels.
pub struct PerTimeEndmembers(pub Vec<Tensor>);

impl EndmemberSource for PerTimeEndmembers {
    fn endmembers_at(&self, t: usize, _n: usize) -> Tensor {
        self.0[t].clone()
    }
}

/// Dense `T × N × L × P` single-precision storage (row-major `L × P` per
/// pixel), as read from cube files.
pub struct DenseEndmembers {
    pub pixels: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub data: Vec<f32>,
}

impl EndmemberSource for DenseEndmembers {
    fn endmembers_at(&self, t: usize, n: usize) -> Tensor {
        let sz = self.bands * self.endmembers;
        let o = (t * self.pixels + n) * sz;
        Tensor::matrix(
            self.bands,
            self.endmembers,
            self.data[o..o + sz].iter().map(|v| f64::from(*v)).collect(),
        )
    }
}

/// Abundances (`T × N × P`) together with their endmembers.
pub struct Unmixing<'a> {
    pub abundances: &'a [f64],
    pub endmembers: &'a dyn EndmemberSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMetrics {
    pub nrmse_a: f64,
    pub nrmse_m: f64,
    pub sam_m: f64,
    pub nrmse_y: f64,
    /// Estimated endmember index matched to each true endmember.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nrmse_a: f64,
    pub nrmse_m: f64,
    pub sam_m: f64,
    pub nrmse_y: f64,
    pub per_time: Vec<TimeMetrics>,
    /// Terms skipped because of a zero-norm denominator.
    pub excluded_terms: usize,
    pub permutation_aligned: bool,
}

/// Mean over all pixels of the endmember matrices at time `t`.
fn mean_endmembers(src: &dyn EndmemberSource, t: usize, pixels: usize) -> Tensor {
    let mut acc = src.endmembers_at(t, 0);
    for n in 1..pixels {
        for (a, b) in acc.data_mut().iter_mut().zip(src.endmembers_at(t, n).data()) {
            *a += b;
        }
    }
    acc.data_mut().iter_mut().for_each(|v| *v /= pixels as f64);
    acc
}

fn permute_columns(m: &Tensor, perm: &[usize]) -> Tensor {
    let (l, p) = (m.rows(), m.cols());
    let mut out = Tensor::zeros(&[l, p]);
    for (j, &k) in perm.iter().enumerate() {
        for b in 0..l {
            out.set(b, j, m.at(b, k));
        }
    }
    out
}

/// NRMSE of abundances, endmembers and reconstruction, and mean SAM.
///
/// Estimated endmember order is aligned to the truth separately at each
/// time step by minimum total SAM between pixel-averaged endmembers.
pub fn metrics(truth: &Unmixing, est: &Unmixing, data: &HsiSequence) -> Result<MetricsReport> {
    let (times, n, l) = (data.times, data.pixels(), data.bands);
    let p = truth.abundances.len() / (times * n).max(1);
    if truth.abundances.len() != times * n * p || est.abundances.len() != truth.abundances.len() {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!(
                "abundance lengths {} (truth) and {} (estimate) do not match T*N*P with T={times}, N={n}",
                truth.abundances.len(),
                est.abundances.len()
            ),
        });
    }
    let probe_t = truth.endmembers.endmembers_at(0, 0);
    let probe_e = est.endmembers.endmembers_at(0, 0);
    if probe_t.shape() != [l, p] || probe_e.shape() != [l, p] {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!(
                "endmember shapes {:?} (truth) and {:?} (estimate), expected [{l}, {p}]",
                probe_t.shape(),
                probe_e.shape()
            ),
        });
    }
    let mut excluded = 0usize;
    let (mut sum_a, mut sum_m, mut sum_sam, mut sum_y) = (0.0, 0.0, 0.0, 0.0);
    let (mut count_a, mut count_m, mut count_sam, mut count_y) = (0usize, 0usize, 0usize, 0usize);
    let mut per_time = Vec::with_capacity(times);
    for t in 0..times {
        let perm = permutation_align(&mean_endmembers(est.endmembers, t, n), &mean_endmembers(truth.endmembers, t, n));
        let (mut ea, mut na, mut ey, mut ny) = (0.0, 0.0, 0.0, 0.0);
        let (mut tm, mut tm_count, mut tsam, mut tsam_count) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            let o = (t * n + i) * p;
            let at = &truth.abundances[o..o + p];
            let ae: Vec<f64> = perm.iter().map(|k| est.abundances[o + k]).collect();
            ea += at.iter().zip(&ae).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            na += at.iter().map(|x| x * x).sum::<f64>();

            let mt = truth.endmembers.endmembers_at(t, i);
            let me_raw = est.endmembers.endmembers_at(t, i);
            let me = permute_columns(&me_raw, &perm);
            let nm = mt.data().iter().map(|x| x * x).sum::<f64>();
            if nm > 0.0 {
                let em = mt.data().iter().zip(me.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                tm += em / nm;
                tm_count += 1;
            } else {
                excluded += 1;
            }
            for j in 0..p {
                let angle = spectral_angle(&mt.column(j), &me.column(j));
                if angle.is_finite() {
                    tsam += angle;
                    tsam_count += 1;
                } else {
                    excluded += 1;
                }
            }
            let y = data.pixel(t, i);
            let yhat = me_raw.matvec(&est.abundances[o..o + p]);
            ey += y.iter().zip(&yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            ny += y.iter().map(|a| a * a).sum::<f64>();
        }
        let ra = if na > 0.0 {
            sum_a += ea / na;
            count_a += 1;
            (ea / na).sqrt()
        } else {
            excluded += 1;
            f64::NAN
        };
        let ry = if ny > 0.0 {
            sum_y += ey / ny;
            count_y += 1;
            (ey / ny).sqrt()
        } else {
            excluded += 1;
            f64::NAN
        };
        sum_m += tm;
        count_m += tm_count;
        sum_sam += tsam;
        count_sam += tsam_count;
        per_time.push(TimeMetrics {
            nrmse_a: ra,
            nrmse_m: (tm / tm_count.max(1) as f64).sqrt(),
            sam_m: tsam / tsam_count.max(1) as f64,
            nrmse_y: ry,
            permutation: perm,
        });
    }
    if excluded > 0 {
        log::warn!("metrics: {excluded} terms with zero-norm denominators were excluded");
    }
    let avg = |s: f64, c: usize| if c == 0 { f64::NAN } else { s / c as f64 };
    Ok(MetricsReport {
        nrmse_a: avg(sum_a, count_a).sqrt(),
        nrmse_m: avg(sum_m, count_m).sqrt(),
        sam_m: avg(sum_sam, count_sam),
        nrmse_y: avg(sum_y, count_y).sqrt(),
        per_time,
        excluded_terms: excluded,
        permutation_aligned: true,
    })
}

/// Output of the per-image VCA + FCLS baseline.
pub struct FclsBaseline {
    /// `T × N × P`.
    pub abundances: Vec<f64>,
    /// One VCA endmember matrix per time step.
    pub endmembers: PerTimeEndmembers,
    /// Pixels whose solver hit the iteration cap.
    pub unconverged: usize,
}

/// Extracts endmembers with VCA independently at each time step and
/// unmixes every pixel with FCLS.
pub fn fcls_baseline<R: Rng + ?Sized>(data: &HsiSequence, p: usize, rng: &mut R) -> Result<FclsBaseline> {
    use rayon::prelude::*;
    let n = data.pixels();
    let mut abundances = Vec::with_capacity(data.times * n * p);
    let mut mats = Vec::with_capacity(data.times);
    let mut unconverged = 0;
    for t in 0..data.times {
        let m = vca(data.image(t), data.bands, p, rng)?;
        let res: Vec<FclsResult> = (0..n).into_par_iter().map(|i| fcls(data.pixel(t, i), &m)).collect();
        for r in res {
            unconverged += usize::from(!r.converged);
            abundances.extend(r.abundances);
        }
        mats.push(m);
    }
    if unconverged > 0 {
        log::warn!("fcls: {unconverged} pixels reached the iteration cap");
    }
    Ok(FclsBaseline {
        abundances,
        endmembers: PerTimeEndmembers(mats),
        unconverged,
    })
}

/// Per-row parameter counts of the generative model and the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub m0: usize,
    pub sigma_r: usize,
    pub sigma_a: usize,
    pub initial_prior: usize,
    pub lstms: usize,
    pub alphas_beta: usize,
    pub w_v_c: usize,
    pub w_v_psi: usize,
    pub initial_posterior: usize,
}

impl ParameterCounts {
    pub fn theta(&self) -> usize {
        self.m0 + self.sigma_r + self.sigma_a + self.initial_prior
    }

    pub fn phi(&self) -> usize {
        self.lstms + self.alphas_beta + self.w_v_c + self.w_v_psi + self.initial_posterior
    }
}

/// Closed-form parameter counts for `L` bands, `P` endmembers, `K` basis
/// vectors and an `R`-layer transition scale network.
pub fn count_parameters(bands: usize, p: usize, k: usize, r: usize) -> ParameterCounts {
    let h = (k + 1) * p;
    ParameterCounts {
        m0: bands * p,
        sigma_r: 1,
        sigma_a: p * (p + 1) * r,
        initial_prior: 2 * h,
        lstms: 8 * h * (h + bands + 1),
        alphas_beta: 3,
        w_v_c: 2 * p * p * (k + 1),
        w_v_psi: 2 * k * p * p * (k + 1),
        initial_posterior: 2 * h,
    }
}
