//! End-to-end acceptance suite. Each criterion prints one `PASS` or `FAIL`
//! line; the process exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use redsunn::abundance::{dirichlet_laplace_softmax, dirichlet_softmax_log_density, dirichlet_softmax_neg_hessian};
use redsunn::baselines::{count_parameters, fcls, fcls_baseline, metrics, MetricsReport, Unmixing};
use redsunn::elbo::{kl_diag_gaussians, EpochRecord, Estimate};
use redsunn::io::{Cube, RunConfig};
use redsunn::model::Model;
use redsunn::numerics::{simplex_project, Tensor};
use redsunn::pipeline::{unmix, ModelEndmembers};
use redsunn::synth::{bundled_library, bundled_reference_spectra, gen_ds1, gen_ds2, Dataset, Ds1Config, Ds2Config};

const DS1_SEED: u64 = 0;
const DS2_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Results of one full ReDSUNN run and its FCLS reference on a dataset.
struct EndToEnd {
    fcls: MetricsReport,
    redsunn: MetricsReport,
    trace: Vec<EpochRecord>,
    estimate: Estimate,
    elapsed: Duration,
    error: Option<String>,
}

fn end_to_end(ds: &Dataset, cfg: &RunConfig) -> EndToEnd {
    let truth = Unmixing {
        abundances: &ds.truth.abundances,
        endmembers: &ds.truth,
    };
    let base = fcls_baseline(&ds.data, cfg.endmembers, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).expect("FCLS baseline");
    let fcls_report = metrics(
        &truth,
        &Unmixing {
            abundances: &base.abundances,
            endmembers: &base.endmembers,
        },
        &ds.data,
    )
    .expect("FCLS metrics");
    let start = Instant::now();
    match unmix(&ds.data, cfg, |_| {}) {
        Ok(run) => {
            let elapsed = start.elapsed();
            let src = ModelEndmembers {
                basis: run.model.basis(),
                estimate: &run.estimate,
            };
            let report = metrics(
                &truth,
                &Unmixing {
                    abundances: &run.estimate.abundances,
                    endmembers: &src,
                },
                &ds.data,
            )
            .expect("ReDSUNN metrics");
            EndToEnd {
                fcls: fcls_report,
                redsunn: report,
                trace: run.trace,
                estimate: run.estimate,
                elapsed,
                error: None,
            }
        }
        Err((e, _)) => EndToEnd {
            fcls: fcls_report.clone(),
            redsunn: fcls_report,
            trace: Vec::new(),
            estimate: Estimate {
                times: 0,
                pixels: 0,
                endmembers: 0,
                psi_len: 0,
                abundances: Vec::new(),
                psi: Vec::new(),
                u: Vec::new(),
            },
            elapsed: start.elapsed(),
            error: Some(e.to_string()),
        },
    }
}

fn reference_config(endmembers: usize, basis: usize) -> RunConfig {
    RunConfig {
        endmembers,
        basis,
        sigma_psi: 1e-5,
        epochs: 30,
        batch_size: 128,
        learning_rate: 1e-3,
        ..RunConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    for seed in [1, 2, 3] {
        let model = common::tiny_model(seed);
        for c in common::gradcheck(&model, &common::tiny_series(), &common::tiny_noise(seed, 2)) {
            if c.rel_error > worst.1 {
                worst = (c.name, c.rel_error);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst.1 < 1e-3 && secs < 60.0,
        format!("gradient check: worst relative error {:.2e} ({}) in {secs:.2}s", worst.1, worst.0),
    )
}

fn grid_simplex(step: f64) -> Vec<[f64; 3]> {
    let n = (1.0 / step).round() as usize;
    let mut pts = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in 0..=n - i {
            let (a, b) = (i as f64 * step, j as f64 * step);
            pts.push([a, b, (1.0 - a - b).max(0.0)]);
        }
    }
    pts
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = grid_simplex(0.005);
    let mut notes = Vec::new();
    let mut pass = true;

    // FCLS against brute force over the grid.
    let mut worst_fcls = 0.0f64;
    for _ in 0..20 {
        let l = 12;
        let mut m = Tensor::zeros(&[l, 3]);
        for b in 0..l {
            for j in 0..3 {
                let bump = if b % 3 == j { 0.6 } else { 0.0 };
                m.set(b, j, 0.1 + bump + 0.2 * rng.random::<f64>());
            }
        }
        let truth: Vec<f64> = {
            let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        let y: Vec<f64> = m
            .matvec(&truth)
            .iter()
            .map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let obj = |a: &[f64]| m.matvec(a).iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        let best = grid
            .iter()
            .min_by(|a, b| obj(&a[..]).partial_cmp(&obj(&b[..])).unwrap())
            .unwrap();
        let r = fcls(&y, &m);
        let gap = r.abundances.iter().zip(best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_fcls = worst_fcls.max(gap);
        if obj(&r.abundances) > obj(&best[..]) + 1e-12 || gap > 0.005 {
            pass = false;
        }
    }
    notes.push(format!("FCLS vs grid max gap {worst_fcls:.4}"));

    // Diagonal-Gaussian KL against a Monte-Carlo estimate.
    let (mu1, s1) = ([0.3, -1.2, 0.8], [0.7, 1.4, 0.5]);
    let (mu2, s2) = ([0.0, -0.4, 1.5], [1.0, 0.9, 0.8]);
    let log_pdf = |x: &[f64], mu: &[f64], s: &[f64]| {
        x.iter()
            .zip(mu.iter().zip(s))
            .map(|(x, (m, s))| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum::<f64>()
    };
    let samples = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..3).map(|i| mu1[i] + s1[i] * rng.sample::<f64, _>(StandardNormal)).collect();
        acc += log_pdf(&x, &mu1, &s1) - log_pdf(&x, &mu2, &s2);
    }
    let mc = acc / samples as f64;
    let exact = kl_diag_gaussians(&mu1, &s1, &mu2, &s2);
    let kl_rel = (mc - exact).abs() / exact;
    pass &= kl_rel < 0.01;
    notes.push(format!("KL {exact:.5} vs MC {mc:.5} ({:.3}%)", 100.0 * kl_rel));

    // Laplace Hessian against central second differences of the log density.
    let mut worst_h = 0.0f64;
    for alpha in [[2.0, 3.0, 4.0], [5.0, 5.0, 5.0], [1.5, 7.0, 2.5]] {
        let eps_g = 0.1;
        let (mode, _) = dirichlet_laplace_softmax(&alpha, eps_g).expect("laplace");
        let points = [
            mode.clone(),
            mode.iter().map(|v| v + 0.2).collect::<Vec<_>>(),
            vec![0.4, -0.3, 0.1],
        ];
        for c in points {
            let analytic = dirichlet_softmax_neg_hessian(&c, &alpha, eps_g);
            let h = 1e-4;
            let f = |x: &[f64]| dirichlet_softmax_log_density(x, &alpha, eps_g);
            for i in 0..3 {
                for j in 0..3 {
                    let shifted = |di: f64, dj: f64| {
                        let mut x = c.clone();
                        x[i] += di;
                        x[j] += dj;
                        f(&x)
                    };
                    let num = -(shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h);
                    worst_h = worst_h.max((num - analytic.at(i, j)).abs());
                }
            }
        }
    }
    pass &= worst_h < 1e-6;
    notes.push(format!("Hessian max abs error {worst_h:.2e}"));

    // Simplex projection against the grid argmin.
    let mut worst_p = 0.0f64;
    for _ in 0..200 {
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let a = simplex_project(&v);
        let d = |x: &[f64]| x.iter().zip(&v).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        let best = grid.iter().min_by(|x, y| d(&x[..]).partial_cmp(&d(&y[..])).unwrap()).unwrap();
        let gap = a.iter().zip(best).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst_p = worst_p.max(gap);
        if d(&a) > d(&best[..]) + 1e-12 || gap > 0.005 {
            pass = false;
        }
    }
    notes.push(format!("projection vs grid max gap {worst_p:.4}"));

    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    Outcome::new(pass, format!("oracles: {} in {secs:.1}s", notes.join("; ")))
}

fn criterion_3(ds1: &EndToEnd) -> Outcome {
    if let Some(e) = &ds1.error {
        return Outcome::new(false, format!("DS1 run failed: {e}"));
    }
    let (a, f, m) = (ds1.redsunn.nrmse_a, ds1.fcls.nrmse_a, ds1.redsunn.nrmse_m);
    let secs = ds1.elapsed.as_secs_f64();
    Outcome::new(
        a < f && a <= 0.45 && m <= 0.20 && secs < 1800.0,
        format!("DS1: NRMSE_A ReDSUNN {a:.3} vs FCLS {f:.3} (need < FCLS and <= 0.45), NRMSE_M {m:.3} (need <= 0.20), {secs:.0}s"),
    )
}

fn criterion_4(ds2: &EndToEnd) -> Outcome {
    if let Some(e) = &ds2.error {
        return Outcome::new(false, format!("DS2 run failed: {e}"));
    }
    let (a, f) = (ds2.redsunn.nrmse_a, ds2.fcls.nrmse_a);
    let secs = ds2.elapsed.as_secs_f64();
    Outcome::new(
        a < f && a <= 0.40 && secs < 3600.0,
        format!("DS2: NRMSE_A ReDSUNN {a:.3} vs FCLS {f:.3} (need < FCLS and <= 0.40), {secs:.0}s"),
    )
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (p, k, l) in [(3, 10, 224), (4, 2, 198)] {
        let cfg = RunConfig {
            endmembers: p,
            basis: k,
            ..RunConfig::default()
        };
        let dims = cfg.model_dims(l);
        let model = Model::new(dims, cfg.sigma_psi, Tensor::filled(&[l, p], 0.5), 0).expect("model");
        let counts = count_parameters(l, p, k, cfg.sigma_a_layers);
        let ok = counts.theta() == model.theta_count() && counts.phi() == model.phi_count();
        pass &= ok;
        notes.push(format!(
            "(P={p},K={k},L={l}) theta {}/{} phi {}/{}",
            counts.theta(),
            model.theta_count(),
            counts.phi(),
            model.phi_count()
        ));
    }
    Outcome::new(pass, format!("parameter counts (formula/live): {}", notes.join("; ")))
}

fn criterion_6(ds1: &EndToEnd) -> Outcome {
    if ds1.trace.is_empty() {
        return Outcome::new(false, "no DS1 training trace");
    }
    let elbo: Vec<f64> = ds1.trace.iter().map(|r| r.mean_elbo).collect();
    let ma: Vec<f64> = elbo.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let mut violations = Vec::new();
    for w in ma.windows(2) {
        if w[1] < w[0] {
            violations.push((w[0] - w[1]) / w[0].abs());
        }
    }
    let min_kl = ds1.trace.iter().map(|r| r.min_kl).fold(f64::INFINITY, f64::min);
    let ma_ok = violations.is_empty() || (violations.len() == 1 && violations[0] <= 0.01);
    Outcome::new(
        ma_ok && min_kl >= -1e-10,
        format!(
            "DS1 training health: {} moving-average decreases {:?}, min KL {min_kl:.3e}",
            violations.len(),
            violations.iter().map(|v| format!("{:.3}%", 100.0 * v)).collect::<Vec<_>>()
        ),
    )
}

fn write_dataset(ds: &Dataset, dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    Cube::from_sequence(&ds.data).write(&dir.join("data.hsc")).unwrap();
}

fn criterion_7(ds1: &Dataset) -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_dataset(ds1, tmp.path());
    let cfg = tmp.path().join("config.json");
    std::fs::write(
        &cfg,
        r#"{"endmembers": 3, "basis": 10, "sigma_psi": 1e-5, "epochs": 30, "seed": 17}"#,
    )
    .unwrap();
    let mut outs = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_redsunn"))
            .args(["unmix", "--config"])
            .arg(&cfg)
            .arg("--data")
            .arg(tmp.path().join("data.hsc"))
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .status()
            .expect("run cli");
        if !status.success() {
            return Outcome::new(false, format!("cli unmix exited with {status}"));
        }
        outs.push(out);
    }
    let files = ["summary.json", "abundances.hsc", "endmembers.hsc", "scaling.hsc", "change_detector.hsc"];
    let differing: Vec<_> = files
        .iter()
        .filter(|f| std::fs::read(outs[0].join(f)).ok() != std::fs::read(outs[1].join(f)).ok())
        .collect();
    Outcome::new(
        differing.is_empty(),
        format!("cli unmix twice on DS1 (30 epochs, seed 17): differing files {differing:?}"),
    )
}

fn criterion_8(ds1: &Dataset, run: &EndToEnd) -> Outcome {
    if run.estimate.u.is_empty() {
        return Outcome::new(false, "no DS1 estimate");
    }
    let truth = &ds1.truth;
    let n = truth.pixels();
    let mut pass = true;
    let mut notes = Vec::new();
    let mut checked = 0;
    for t in 1..truth.times {
        let (mut sc, mut cc, mut su, mut cu) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            let u = run.estimate.u_at(t, i);
            if truth.change_mask[t * n + i] == 1 {
                sc += u;
                cc += 1;
            } else {
                su += u;
                cu += 1;
            }
        }
        if cc == 0 {
            continue;
        }
        checked += 1;
        let (mc, mu) = (sc / cc as f64, su / cu.max(1) as f64);
        pass &= mc > mu;
        notes.push(format!("t={t}: {mc:.4} vs {mu:.4}"));
    }
    pass &= checked > 0;
    Outcome::new(pass, format!("mean u changed vs unchanged: {}", notes.join(", ")))
}

fn report(id: usize, o: &Outcome, failures: &mut usize) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    if !o.pass {
        *failures += 1;
    }
    println!("{tag} criterion {id}: {}", o.detail);
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut failures = 0;
    report(1, &criterion_1(), &mut failures);
    report(2, &criterion_2(), &mut failures);
    report(5, &criterion_5(), &mut failures);

    let ds1 = gen_ds1(
        &Ds1Config::default(),
        &bundled_reference_spectra(),
        &mut ChaCha8Rng::seed_from_u64(DS1_SEED),
    )
    .expect("DS1");
    let run1 = end_to_end(&ds1, &reference_config(3, 10));
    report(3, &criterion_3(&run1), &mut failures);
    report(6, &criterion_6(&run1), &mut failures);
    report(8, &criterion_8(&ds1, &run1), &mut failures);
    report(7, &criterion_7(&ds1), &mut failures);

    let ds2 = gen_ds2(&Ds2Config::default(), &bundled_library(), &mut ChaCha8Rng::seed_from_u64(DS2_SEED)).expect("DS2");
    let run2 = end_to_end(&ds2, &reference_config(4, 2));
    report(4, &criterion_4(&run2), &mut failures);

    println!("acceptance: {} of 8 criteria passed", 8 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
