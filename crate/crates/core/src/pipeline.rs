//! End-to-end runs shared by the CLI and the acceptance suite.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{fcls_baseline, vca, EndmemberSource, FclsBaseline};
use crate::elbo::{estimate, train, EpochRecord, Estimate};
use crate::error::{Error, Result};
use crate::io::{append_jsonl, write_json, Cube, RunConfig, Summary, Timing};
use crate::mixing::{assemble_endmembers, scaling_factors, EndmemberBasis};
use crate::model::Model;
use crate::sequence::HsiSequence;

/// Endmembers implied by a trained model's posterior means.
pub struct ModelEndmembers<'a> {
    pub basis: EndmemberBasis,
    pub estimate: &'a Estimate,
}

impl EndmemberSource for ModelEndmembers<'_> {
    fn endmembers_at(&self, t: usize, n: usize) -> crate::numerics::Tensor {
        assemble_endmembers(&self.basis, self.estimate.psi_at(t, n))
    }
}

/// Builds a model whose `M0` is VCA applied to every pixel of every image.
pub fn init_model(data: &HsiSequence, cfg: &RunConfig) -> Result<Model> {
    cfg.validate()?;
    let dims = cfg.model_dims(data.bands);
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m0 = vca(data.data(), data.bands, cfg.endmembers, &mut rng)?;
    Model::new(dims, cfg.sigma_psi, m0, cfg.seed.wrapping_add(1))
}

pub struct UnmixRun {
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    pub estimate: Estimate,
}

/// Initializes, trains and runs the estimation pass. On divergence the
/// error is returned together with the model restored to its last good
/// state and the trace so far.
pub fn unmix(
    data: &HsiSequence,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> std::result::Result<UnmixRun, (Error, Option<(Model, Vec<EpochRecord>)>)> {
    let mut model = init_model(data, cfg).map_err(|e| (e, None))?;
    let mut trace = Vec::new();
    let result = train(&mut model, data, &cfg.train_config(), |r| {
        trace.push(r.clone());
        on_epoch(r)
    });
    if let Err(e) = result {
        return Err((e, Some((model, trace))));
    }
    let est = estimate(&model, data).map_err(|e| (e, None))?;
    Ok(UnmixRun {
        model,
        trace,
        estimate: est,
    })
}

/// `NRMSE_Y` of a reconstruction.
pub fn reconstruction_nrmse(data: &HsiSequence, abundances: &[f64], endmembers: &dyn EndmemberSource) -> f64 {
    let (times, n) = (data.times, data.pixels());
    let p = abundances.len() / (times * n);
    let mut acc = 0.0;
    for t in 0..times {
        let (mut e, mut d) = (0.0, 0.0);
        for i in 0..n {
            let o = (t * n + i) * p;
            let yhat = endmembers.endmembers_at(t, i).matvec(&abundances[o..o + p]);
            for (y, h) in data.pixel(t, i).iter().zip(&yhat) {
                e += (y - h).powi(2);
                d += y * y;
            }
        }
        acc += e / d;
    }
    (acc / times as f64).sqrt()
}

fn endmember_cube(data: &HsiSequence, p: usize, src: &dyn EndmemberSource) -> Result<Cube> {
    let (times, n, l) = (data.times, data.pixels(), data.bands);
    let mut out = Vec::with_capacity(times * n * l * p);
    for t in 0..times {
        for i in 0..n {
            out.extend(src.endmembers_at(t, i).data().iter().map(|v| *v as f32));
        }
    }
    Cube::new(times, data.rows, data.cols, l * p, out)
}

/// Writes the artifacts of a ReDSUNN run to `out`.
pub fn write_unmix_outputs(data: &HsiSequence, cfg: &RunConfig, run: &UnmixRun, out: &Path) -> Result<Summary> {
    let (times, rows, cols, l) = (data.times, data.rows, data.cols, data.bands);
    let p = cfg.endmembers;
    let est = &run.estimate;
    let basis = run.model.basis();
    Cube::from_f64(times, rows, cols, p, &est.abundances)?.write(&out.join("abundances.hsc"))?;
    let src = ModelEndmembers {
        basis: basis.clone(),
        estimate: est,
    };
    endmember_cube(data, p, &src)?.write(&out.join("endmembers.hsc"))?;
    let mut scaling = Vec::with_capacity(times * rows * cols * l * p);
    for t in 0..times {
        for i in 0..data.pixels() {
            scaling.extend(scaling_factors(&basis.d, est.psi_at(t, i), p).data().iter().map(|v| *v as f32));
        }
    }
    Cube::new(times, rows, cols, l * p, scaling)?.write(&out.join("scaling.hsc"))?;
    Cube::from_f64(times, rows, cols, 1, &est.u)?.write(&out.join("change_detector.hsc"))?;
    run.model.save(&out.join("model.json"))?;
    let summary = Summary {
        method: "redsunn".into(),
        times,
        rows,
        cols,
        bands: l,
        endmembers: p,
        epochs_completed: run.trace.len(),
        final_elbo: run.trace.last().map(|r| r.mean_elbo),
        nrmse_y: reconstruction_nrmse(data, &est.abundances, &src),
        negative_m0_entries: run.model.has_negative_m0(),
        config: Some(*cfg),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs `unmix` and writes every artifact, including the epoch log, into
/// `out`. On divergence the log and the last good parameters are kept.
pub fn unmix_to_dir(data: &HsiSequence, cfg: &RunConfig, out: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let log_path = out.join("epochs.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut log_err = None;
    let result = unmix(data, cfg, |r| {
        if let Err(e) = append_jsonl(&mut log, r) {
            log_err.get_or_insert(Error::io(&log_path, e));
        }
    });
    if let Some(e) = log_err {
        return Err(e);
    }
    match result {
        Ok(run) => {
            let summary = write_unmix_outputs(data, cfg, &run, out)?;
            write_json(
                &out.join("timing.json"),
                &Timing {
                    wall_time_s: start.elapsed().as_secs_f64(),
                },
            )?;
            Ok(summary)
        }
        Err((e, partial)) => {
            if let Some((model, _)) = partial {
                model.save(&out.join("model.json"))?;
            }
            Err(e)
        }
    }
}

/// Runs per-image VCA + FCLS and writes the same layout as `unmix`.
pub fn fcls_to_dir(data: &HsiSequence, p: usize, seed: u64, out: &Path) -> Result<(FclsBaseline, Summary)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = fcls_baseline(data, p, &mut rng)?;
    let (times, rows, cols, l) = (data.times, data.rows, data.cols, data.bands);
    Cube::from_f64(times, rows, cols, p, &base.abundances)?.write(&out.join("abundances.hsc"))?;
    endmember_cube(data, p, &base.endmembers)?.write(&out.join("endmembers.hsc"))?;
    let summary = Summary {
        method: "fcls".into(),
        times,
        rows,
        cols,
        bands: l,
        endmembers: p,
        epochs_completed: 0,
        final_elbo: None,
        nrmse_y: reconstruction_nrmse(data, &base.abundances, &base.endmembers),
        negative_m0_entries: false,
        config: None,
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_json(
        &out.join("timing.json"),
        &Timing {
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    )?;
    Ok((base, summary))
}

/// Synthetic dataset families available to `generate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Ds1,
    Ds2,
}

/// Generates a dataset with the default configuration and writes the cube,
/// ground-truth sidecars and a manifest.
pub fn generate_to_dir(kind: DatasetKind, seed: u64, out: &Path) -> Result<crate::synth::Dataset> {
    use crate::synth::{bundled_library, bundled_reference_spectra, gen_ds1, gen_ds2, Ds1Config, Ds2Config};
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (name, ds, generator, snr) = match kind {
        DatasetKind::Ds1 => {
            let cfg = Ds1Config::default();
            let ds = gen_ds1(&cfg, &bundled_reference_spectra(), &mut rng)?;
            ("ds1", ds, serde_json::to_value(cfg)?, cfg.snr_db)
        }
        DatasetKind::Ds2 => {
            let cfg = Ds2Config::default();
            let ds = gen_ds2(&cfg, &bundled_library(), &mut rng)?;
            ("ds2", ds, serde_json::to_value(cfg)?, cfg.snr_db)
        }
    };
    let truth = &ds.truth;
    let (times, rows, cols, l, p) = (truth.times, truth.rows, truth.cols, truth.bands, truth.endmembers);
    let mut files = vec!["data.hsc".to_string(), "abundances.hsc".into(), "endmembers.hsc".into()];
    Cube::from_sequence(&ds.data).write(&out.join("data.hsc"))?;
    Cube::from_f64(times, rows, cols, p, &truth.abundances)?.write(&out.join("abundances.hsc"))?;
    endmember_cube(&ds.data, p, truth)?.write(&out.join("endmembers.hsc"))?;
    if truth.scaling(0, 0).is_some() {
        let mut s = Vec::with_capacity(times * rows * cols * l * p);
        for t in 0..times {
            for i in 0..rows * cols {
                s.extend(truth.scaling(t, i).expect("scaled truth").data().iter().map(|v| *v as f32));
            }
        }
        Cube::new(times, rows, cols, l * p, s)?.write(&out.join("scaling.hsc"))?;
        files.push("scaling.hsc".into());
    }
    let mask: Vec<f32> = truth.change_mask.iter().map(|v| f32::from(*v)).collect();
    Cube::new(times, rows, cols, 1, mask)?.write(&out.join("change_mask.hsc"))?;
    files.push("change_mask.hsc".into());
    files.push("manifest.json".into());
    let manifest = crate::io::Manifest {
        dataset: name.into(),
        seed,
        times,
        rows,
        cols,
        bands: l,
        endmembers: p,
        snr_db: snr.is_finite().then_some(snr),
        generator,
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(ds)
}
