//! Seeded synthetic multitemporal sequences with known abundances and
//! per-pixel endmembers.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax, Tensor};
use crate::sequence::HsiSequence;

const REFERENCE_CSV: &str = include_str!("../data/reference_spectra.csv");
const LIBRARY_CSV: &str = include_str!("../data/pure_pixel_library.csv");

/// The bundled smooth reference reflectances, `L × 4` (vegetation, soil,
/// mineral, water) at 224 bands.
pub fn bundled_reference_spectra() -> Tensor {
    parse_reference_csv(REFERENCE_CSV).expect("bundled reference spectra are well formed")
}

/// Parses a CSV whose first column is the wavelength and whose remaining
/// columns are spectra. Returns `L × columns`.
pub fn parse_reference_csv(text: &str) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("reference spectra line {}: {e}", i + 1)))?;
        if *width.get_or_insert(vals.len()) != vals.len() || vals.is_empty() {
            return Err(Error::Input(format!("reference spectra line {} has a bad column count", i + 1)));
        }
        rows.push(vals);
    }
    let w = width.ok_or_else(|| Error::Input("reference spectra file is empty".into()))?;
    Ok(Tensor::matrix(rows.len(), w, rows.concat()))
}

/// Signatures grouped by endmember class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    pub classes: Vec<String>,
    /// `signatures[class][index]` is an `L`-vector.
    pub signatures: Vec<Vec<Vec<f64>>>,
    pub bands: usize,
}

impl Library {
    pub fn new(classes: Vec<String>, signatures: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let bands = signatures
            .first()
            .and_then(|c| c.first())
            .map(|s| s.len())
            .ok_or_else(|| Error::Input("library has no signatures".into()))?;
        if classes.len() != signatures.len() || signatures.iter().any(|c| c.is_empty()) {
            return Err(Error::Input("every library class needs at least one signature".into()));
        }
        if signatures.iter().flatten().any(|s| s.len() != bands) {
            return Err(Error::Input("library signatures have inconsistent band counts".into()));
        }
        Ok(Self { classes, signatures, bands })
    }
}

/// The bundled four-class library (vegetation, water, soil, road), six
/// signatures per class at 198 bands.
pub fn bundled_library() -> Library {
    let mut classes: Vec<String> = Vec::new();
    let mut sigs: Vec<Vec<Vec<f64>>> = Vec::new();
    for line in LIBRARY_CSV.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split(',');
        let class = parts.next().expect("class column").to_string();
        let _index = parts.next();
        let values: Vec<f64> = parts.map(|v| v.parse().expect("numeric library value")).collect();
        match classes.iter().position(|c| *c == class) {
            Some(i) => sigs[i].push(values),
            None => {
                classes.push(class);
                sigs.push(vec![values]);
            }
        }
    }
    Library::new(classes, sigs).expect("bundled library is well formed")
}

/// Knot values drawn uniformly in `[lo, hi]` at equally spaced band
/// positions, linearly interpolated to `bands` values.
pub fn gen_piecewise_linear_scaling<R: Rng + ?Sized>(
    bands: usize,
    lo: f64,
    hi: f64,
    knots: usize,
    rng: &mut R,
) -> Vec<f64> {
    assert!(knots >= 2, "need at least two knots");
    assert!(0.0 < lo && lo <= hi && hi < 2.0, "scaling range must lie in (0, 2)");
    let values: Vec<f64> = (0..knots).map(|_| uniform(rng, lo, hi)).collect();
    interpolate_knots(bands, &values)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Linear interpolation of knot values placed at equally spaced positions
/// spanning band 0 to band `bands-1`.
pub fn interpolate_knots(bands: usize, values: &[f64]) -> Vec<f64> {
    let k = values.len();
    if bands == 1 {
        return vec![values[0]];
    }
    (0..bands)
        .map(|b| {
            let x = b as f64 * (k - 1) as f64 / (bands - 1) as f64;
            let i = (x.floor() as usize).min(k - 2);
            let f = x - i as f64;
            values[i] * (1.0 - f) + values[i + 1] * f
        })
        .collect()
}

/// How the true per-pixel endmembers are represented.
#[derive(Debug, Clone, PartialEq)]
pub enum EndmemberTruth {
    /// `M_{n,t} = M_ref ⊙ S_{n,t}` with piecewise-linear scalings given by
    /// knot values stored `T × N × P × knots`.
    Scaled { reference: Tensor, knots: usize, values: Vec<f64> },
    /// Column `j` of `M_{n,t}` is library signature `picks[(t,n,j)]` of class `j`.
    Library { library: Library, picks: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub times: usize,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// `T × N × P`.
    pub abundances: Vec<f64>,
    pub endmember_truth: EndmemberTruth,
    /// `T × N`; 1 where abundances changed abruptly between `t-1` and `t`.
    pub change_mask: Vec<u8>,
}

impl GroundTruth {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn abundance(&self, t: usize, n: usize) -> &[f64] {
        let o = (t * self.pixels() + n) * self.endmembers;
        &self.abundances[o..o + self.endmembers]
    }

    /// Bandwise scaling factors `L × P`, when the truth is scaling-based.
    pub fn scaling(&self, t: usize, n: usize) -> Option<Tensor> {
        match &self.endmember_truth {
            EndmemberTruth::Scaled { knots, values, .. } => {
                let (l, p) = (self.bands, self.endmembers);
                let mut s = Tensor::zeros(&[l, p]);
                for j in 0..p {
                    let o = ((t * self.pixels() + n) * p + j) * knots;
                    let col = interpolate_knots(l, &values[o..o + knots]);
                    for (b, v) in col.into_iter().enumerate() {
                        s.set(b, j, v);
                    }
                }
                Some(s)
            }
            EndmemberTruth::Library { .. } => None,
        }
    }

    /// True `L × P` endmember matrix of pixel `n` at time `t`.
    pub fn endmembers_at(&self, t: usize, n: usize) -> Tensor {
        let (l, p) = (self.bands, self.endmembers);
        match &self.endmember_truth {
            EndmemberTruth::Scaled { reference, .. } => {
                let mut s = self.scaling(t, n).expect("scaled truth");
                for (v, r) in s.data_mut().iter_mut().zip(reference.data()) {
                    *v *= r;
                }
                s
            }
            EndmemberTruth::Library { library, picks } => {
                let mut m = Tensor::zeros(&[l, p]);
                for j in 0..p {
                    let pick = picks[(t * self.pixels() + n) * p + j] as usize;
                    for (b, v) in library.signatures[j][pick].iter().enumerate() {
                        m.set(b, j, *v);
                    }
                }
                m
            }
        }
    }

    /// Noise-free pixel `M_{n,t} a_{n,t}`.
    pub fn clean_pixel(&self, t: usize, n: usize) -> Vec<f64> {
        self.endmembers_at(t, n).matvec(self.abundance(t, n))
    }

    pub fn changed(&self, t: usize, n: usize) -> bool {
        self.change_mask[t * self.pixels() + n] != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ds1Config {
    pub rows: usize,
    pub cols: usize,
    pub times: usize,
    pub endmembers: usize,
    pub scaling_lo: f64,
    pub scaling_hi: f64,
    pub increment: f64,
    pub knots: usize,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
}

impl Default for Ds1Config {
    fn default() -> Self {
        Self {
            rows: 50,
            cols: 50,
            times: 6,
            endmembers: 3,
            scaling_lo: 0.85,
            scaling_hi: 1.15,
            increment: 0.1,
            knots: 10,
            snr_db: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ds2Config {
    pub rows: usize,
    pub cols: usize,
    pub times: usize,
    pub endmembers: usize,
    /// Std of the Gaussian smoothing kernel in pixels.
    pub field_sigma: f64,
    /// Std of the normalized logit fields before the softmax.
    pub field_scale: f64,
    /// Number of abrupt-change patches.
    pub patches: usize,
    pub snr_db: f64,
}

impl Default for Ds2Config {
    fn default() -> Self {
        Self {
            rows: 50,
            cols: 50,
            times: 15,
            endmembers: 4,
            field_sigma: 5.0,
            field_scale: 2.0,
            patches: 4,
            snr_db: 30.0,
        }
    }
}

fn check_dims(rows: usize, cols: usize, times: usize, p: usize, snr: f64) -> Result<()> {
    if rows == 0 || cols == 0 || times == 0 || p < 2 {
        return Err(Error::Config(format!(
            "generator dimensions must be positive with P >= 2 (rows={rows} cols={cols} T={times} P={p})"
        )));
    }
    if !(snr > 0.0) {
        return Err(Error::Config(format!("SNR must be positive, got {snr}")));
    }
    Ok(())
}

/// A generated sequence with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: HsiSequence,
    pub truth: GroundTruth,
}

/// Gaussian-kernel-smoothed white noise on a `rows × cols` grid, normalized
/// to zero mean and unit variance. Boundaries are reflected.
pub fn smooth_field<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let white: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * white[r * cols + reflect(c as isize + k as isize - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[reflect(r as isize + k as isize - radius, rows) * cols + c])
                .sum();
        }
    }
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    out.iter_mut().for_each(|v| *v = (*v - mean) / sd.max(1e-300));
    out
}

/// Softmax of `p` independent smooth fields, `N × P`.
fn smooth_abundances<R: Rng + ?Sized>(rows: usize, cols: usize, p: usize, sigma: f64, scale: f64, rng: &mut R) -> Vec<f64> {
    let fields: Vec<Vec<f64>> = (0..p).map(|_| smooth_field(rows, cols, sigma, rng)).collect();
    let n = rows * cols;
    let mut a = Vec::with_capacity(n * p);
    for i in 0..n {
        let logits: Vec<f64> = fields.iter().map(|f| scale * f[i]).collect();
        a.extend(softmax(&logits));
    }
    a
}

/// Adds white Gaussian noise at the given SNR (measured over the whole
/// cube) to `clean` in place.
fn add_noise<R: Rng + ?Sized>(clean: &mut [f64], snr_db: f64, rng: &mut R) {
    if snr_db.is_infinite() {
        return;
    }
    let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    for v in clean.iter_mut() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
}

fn change_mask(abundances: &[f64], times: usize, n: usize, p: usize) -> Vec<u8> {
    let mut mask = vec![0u8; times * n];
    for t in 1..times {
        for i in 0..n {
            let a = &abundances[(t * n + i) * p..(t * n + i + 1) * p];
            let b = &abundances[((t - 1) * n + i) * p..((t - 1) * n + i + 1) * p];
            if a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-12) {
                mask[t * n + i] = 1;
            }
        }
    }
    mask
}

fn render(truth: &GroundTruth) -> Vec<f64> {
    let (times, n, l) = (truth.times, truth.pixels(), truth.bands);
    let mut clean = Vec::with_capacity(times * n * l);
    for t in 0..times {
        for i in 0..n {
            clean.extend(truth.clean_pixel(t, i));
        }
    }
    clean
}

/// Sequence with smooth random scaling variability and rectangular abrupt
/// abundance changes at time steps `2..=5` (one-based).
///
/// `reference` is `L × P'` with `P' ≥ P`; its first `P` columns are used.
pub fn gen_ds1<R: Rng + ?Sized>(cfg: &Ds1Config, reference: &Tensor, rng: &mut R) -> Result<Dataset> {
    let (rows, cols, times, p) = (cfg.rows, cfg.cols, cfg.times, cfg.endmembers);
    check_dims(rows, cols, times, p, cfg.snr_db)?;
    if reference.cols() < p {
        return Err(Error::Input(format!(
            "reference spectra have {} columns, need at least P={p}",
            reference.cols()
        )));
    }
    if cfg.knots < 2 {
        return Err(Error::Config("knot count must be at least 2".into()));
    }
    let l = reference.rows();
    let n = rows * cols;
    let mut m_ref = Tensor::zeros(&[l, p]);
    for b in 0..l {
        for j in 0..p {
            m_ref.set(b, j, reference.at(b, j));
        }
    }

    // Scaling knots: uniform at t=1, random-walk increments afterwards.
    let k = cfg.knots;
    let mut values = vec![0.0; times * n * p * k];
    for t in 0..times {
        for i in 0..n {
            for j in 0..p {
                let o = ((t * n + i) * p + j) * k;
                for q in 0..k {
                    values[o + q] = if t == 0 {
                        uniform(rng, cfg.scaling_lo, cfg.scaling_hi)
                    } else {
                        values[o - n * p * k + q] + uniform(rng, -cfg.increment, cfg.increment)
                    };
                }
            }
        }
    }

    // Smooth base map held fixed in time; rectangles override it at single
    // time steps with a pure endmember.
    let base = smooth_abundances(rows, cols, p, 6.0, 2.5, rng);
    let mut abundances = Vec::with_capacity(times * n * p);
    for _ in 0..times {
        abundances.extend_from_slice(&base);
    }
    for t in 1..times.min(5) {
        let rects = rng.random_range(1..=2);
        for _ in 0..rects {
            let h = rng.random_range(5..=12).min(rows);
            let w = rng.random_range(5..=12).min(cols);
            let r0 = rng.random_range(0..=rows - h);
            let c0 = rng.random_range(0..=cols - w);
            let j = rng.random_range(0..p);
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    let o = (t * n + r * cols + c) * p;
                    for q in 0..p {
                        abundances[o + q] = if q == j { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    }
    let truth = GroundTruth {
        times,
        rows,
        cols,
        bands: l,
        endmembers: p,
        change_mask: change_mask(&abundances, times, n, p),
        abundances,
        endmember_truth: EndmemberTruth::Scaled {
            reference: m_ref,
            knots: k,
            values,
        },
    };
    let mut pixels = render(&truth);
    add_noise(&mut pixels, cfg.snr_db, rng);
    Ok(Dataset {
        data: HsiSequence::new(times, rows, cols, l, pixels)?,
        truth,
    })
}

/// Sequence with Gaussian-random-field abundances, compact abrupt-change
/// patches, and per-pixel endmembers drawn from a class library.
pub fn gen_ds2<R: Rng + ?Sized>(cfg: &Ds2Config, library: &Library, rng: &mut R) -> Result<Dataset> {
    let (rows, cols, times, p) = (cfg.rows, cfg.cols, cfg.times, cfg.endmembers);
    check_dims(rows, cols, times, p, cfg.snr_db)?;
    if library.classes.len() < p {
        return Err(Error::Input(format!(
            "library has {} classes, need at least P={p}",
            library.classes.len()
        )));
    }
    let n = rows * cols;
    let base = smooth_abundances(rows, cols, p, cfg.field_sigma, cfg.field_scale, rng);
    let mut abundances = Vec::with_capacity(times * n * p);
    for _ in 0..times {
        abundances.extend_from_slice(&base);
    }
    for _ in 0..cfg.patches {
        if times < 2 {
            break;
        }
        let start = rng.random_range(1..times);
        let len = rng.random_range(1..=3).min(times - start);
        let radius = rng.random_range(2.0..=4.5f64);
        let cr = rng.random_range(0..rows) as f64;
        let cc = rng.random_range(0..cols) as f64;
        let j = rng.random_range(0..p);
        for t in start..start + len {
            for r in 0..rows {
                for c in 0..cols {
                    if (r as f64 - cr).hypot(c as f64 - cc) <= radius {
                        let o = (t * n + r * cols + c) * p;
                        for q in 0..p {
                            abundances[o + q] = if q == j { 1.0 } else { 0.0 };
                        }
                    }
                }
            }
        }
    }
    let sizes: Vec<usize> = (0..p).map(|j| library.signatures[j].len()).collect();
    let picks: Vec<u16> = (0..times * n * p)
        .map(|i| {
            let choices: Vec<u16> = (0..sizes[i % p] as u16).collect();
            *choices.choose(rng).expect("non-empty class")
        })
        .collect();
    let lib = Library {
        classes: library.classes[..p].to_vec(),
        signatures: library.signatures[..p].to_vec(),
        bands: library.bands,
    };
    let truth = GroundTruth {
        times,
        rows,
        cols,
        bands: library.bands,
        endmembers: p,
        change_mask: change_mask(&abundances, times, n, p),
        abundances,
        endmember_truth: EndmemberTruth::Library { library: lib, picks },
    };
    let mut pixels = render(&truth);
    add_noise(&mut pixels, cfg.snr_db, rng);
    Ok(Dataset {
        data: HsiSequence::new(times, rows, cols, library.bands, pixels)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_ds1(snr: f64, seed: u64) -> Dataset {
        let cfg = Ds1Config {
            rows: 16,
            cols: 16,
            snr_db: snr,
            ..Ds1Config::default()
        };
        gen_ds1(&cfg, &bundled_reference_spectra(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn small_ds2(seed: u64) -> Dataset {
        let cfg = Ds2Config {
            rows: 20,
            cols: 20,
            times: 5,
            ..Ds2Config::default()
        };
        gen_ds2(&cfg, &bundled_library(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn bundled_data_shapes() {
        let r = bundled_reference_spectra();
        assert_eq!(r.shape(), &[224, 4]);
        assert!(r.data().iter().all(|v| *v > 0.0));
        let lib = bundled_library();
        assert_eq!(lib.classes.len(), 4);
        assert_eq!(lib.bands, 198);
        assert!(lib.signatures.iter().all(|c| c.len() == 6));
    }

    #[test]
    fn degenerate_range_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gen_piecewise_linear_scaling(50, 1.0, 1.0, 10, &mut rng)
            .iter()
            .all(|v| *v == 1.0));
    }

    #[test]
    fn scaling_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let s = gen_piecewise_linear_scaling(20, 0.85, 1.15, 10, &mut rng);
            assert!(s.iter().all(|v| (0.85..=1.15).contains(v)));
        }
    }

    #[test]
    fn two_knots_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = gen_piecewise_linear_scaling(11, 0.5, 1.5, 2, &mut rng);
        let step = s[1] - s[0];
        for w in s.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_snr_is_clean() {
        let d = small_ds1(f64::INFINITY, 4);
        for t in 0..d.data.times {
            for n in 0..d.data.pixels() {
                let c = d.truth.clean_pixel(t, n);
                assert_eq!(d.data.pixel(t, n), c.as_slice());
            }
        }
    }

    #[test]
    fn snr_is_accurate() {
        let d = small_ds1(30.0, 5);
        let (mut s, mut e) = (0.0, 0.0);
        for t in 0..d.data.times {
            for n in 0..d.data.pixels() {
                let c = d.truth.clean_pixel(t, n);
                for (y, x) in d.data.pixel(t, n).iter().zip(&c) {
                    s += x * x;
                    e += (y - x).powi(2);
                }
            }
        }
        let snr = 10.0 * (s / e).log10();
        assert!((snr - 30.0).abs() < 0.1, "snr {snr}");
    }

    #[test]
    fn first_scalings_in_interval() {
        let d = small_ds1(30.0, 6);
        for n in 0..d.data.pixels() {
            let s = d.truth.scaling(0, n).unwrap();
            assert!(s.data().iter().all(|v| (0.85..=1.15).contains(v)));
        }
    }

    #[test]
    fn ds1_changes_only_at_rectangle_steps() {
        let d = small_ds1(30.0, 7);
        let n = d.data.pixels();
        for t in 0..d.data.times {
            let count = (0..n).filter(|i| d.truth.changed(t, *i)).count();
            if t == 0 {
                assert_eq!(count, 0);
            } else if t <= 5 {
                assert!(count > 0, "no change at t={t}");
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(small_ds1(30.0, 8), small_ds1(30.0, 8));
        assert_eq!(small_ds2(8), small_ds2(8));
    }

    #[test]
    fn ds2_on_simplex() {
        let d = small_ds2(9);
        for a in d.truth.abundances.chunks(4) {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn single_signature_library_has_no_variability() {
        let lib = bundled_library();
        let single = Library::new(
            lib.classes.clone(),
            lib.signatures.iter().map(|c| vec![c[0].clone()]).collect(),
        )
        .unwrap();
        let cfg = Ds2Config {
            rows: 8,
            cols: 8,
            times: 3,
            ..Ds2Config::default()
        };
        let d = gen_ds2(&cfg, &single, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let m = d.truth.endmembers_at(0, 0);
        for t in 0..3 {
            for n in 0..64 {
                assert_eq!(d.truth.endmembers_at(t, n), m);
            }
        }
    }

    #[test]
    fn field_autocorrelation_decays() {
        let d = small_ds2(11);
        let (rows, cols) = (d.truth.rows, d.truth.cols);
        let corr = |lag: usize| {
            let a: Vec<f64> = (0..rows * cols).map(|i| d.truth.abundance(0, i)[0]).collect();
            let m = a.iter().sum::<f64>() / a.len() as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for r in 0..rows {
                for c in 0..cols {
                    den += (a[r * cols + c] - m).powi(2);
                    if c + lag < cols {
                        num += (a[r * cols + c] - m) * (a[r * cols + c + lag] - m);
                    }
                }
            }
            num / den
        };
        assert!(corr(1) > corr(10));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = Ds1Config {
            snr_db: 0.0,
            ..Ds1Config::default()
        };
        assert!(gen_ds1(&cfg, &bundled_reference_spectra(), &mut rng).is_err());
        let narrow = Tensor::zeros(&[10, 2]);
        assert!(gen_ds1(&Ds1Config::default(), &narrow, &mut rng).is_err());
    }
}
