use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use redsunn::baselines::{metrics, DenseEndmembers, Unmixing};
use redsunn::io::{write_abundance_pngs, write_endmember_csv, write_json, Cube, RunConfig};
use redsunn::pipeline::{fcls_to_dir, generate_to_dir, unmix_to_dir, DatasetKind};
use redsunn::{Error, Result};

#[derive(Parser)]
#[command(name = "redsunn", version, about = "Multitemporal hyperspectral unmixing with endmember variability")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "REDSUNN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Ds1,
    Ds2,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with ground truth.
    Generate {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model on a cube and write the estimates.
    Unmix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the epoch count in the config.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare an estimate directory with a ground-truth directory.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-image VCA followed by FCLS.
    BaselineFcls {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        endmembers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render abundance maps and sampled endmember spectra.
    Plot {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { dataset, seed, out } => {
            let kind = match dataset {
                Dataset::Ds1 => DatasetKind::Ds1,
                Dataset::Ds2 => DatasetKind::Ds2,
            };
            let ds = generate_to_dir(kind, seed, &out)?;
            log::info!(
                "wrote {} with header ({}, {}, {}, {})",
                out.join("data.hsc").display(),
                ds.data.times,
                ds.data.rows,
                ds.data.cols,
                ds.data.bands
            );
            Ok(())
        }
        Command::Unmix {
            config,
            data,
            out,
            epochs,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let seq = Cube::read(&data)?.to_sequence()?;
            let summary = unmix_to_dir(&seq, &cfg, &out)?;
            log::info!("done: NRMSE_Y {:.4}", summary.nrmse_y);
            Ok(())
        }
        Command::Eval { truth, est, out } => {
            let report = evaluate(&truth, &est)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
        Command::BaselineFcls {
            data,
            out,
            endmembers,
            seed,
        } => {
            let seq = Cube::read(&data)?.to_sequence()?;
            let (_, summary) = fcls_to_dir(&seq, endmembers, seed, &out)?;
            log::info!("done: NRMSE_Y {:.4}", summary.nrmse_y);
            Ok(())
        }
        Command::Plot { est, out, samples } => {
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let abundances = Cube::read(&est.join("abundances.hsc"))?;
            let names = write_abundance_pngs(&abundances, &out)?;
            let endmembers = Cube::read(&est.join("endmembers.hsc"))?;
            let bands = endmembers.bands / abundances.bands;
            write_endmember_csv(&endmembers, bands, samples, &out.join("endmember_samples.csv"))?;
            log::info!("wrote {} images and endmember_samples.csv", names.len());
            Ok(())
        }
    }
}

fn load_unmixing(dir: &Path) -> Result<(Cube, DenseEndmembers)> {
    let a = Cube::read(&dir.join("abundances.hsc"))?;
    let m = Cube::read(&dir.join("endmembers.hsc"))?;
    if (m.times, m.rows, m.cols) != (a.times, a.rows, a.cols) || m.bands % a.bands != 0 {
        return Err(Error::Input(format!(
            "{}: endmember cube {:?} does not match abundance cube {:?}",
            dir.display(),
            m.header(),
            a.header()
        )));
    }
    let dense = DenseEndmembers {
        pixels: a.rows * a.cols,
        bands: m.bands / a.bands,
        endmembers: a.bands,
        data: m.data,
    };
    Ok((a, dense))
}

fn evaluate(truth: &Path, est: &Path) -> Result<redsunn::baselines::MetricsReport> {
    let data = Cube::read(&truth.join("data.hsc"))?.to_sequence()?;
    let (ta, tm) = load_unmixing(truth)?;
    let (ea, em) = load_unmixing(est)?;
    if ta.header() != ea.header() || tm.bands != em.bands {
        return Err(Error::Input(format!(
            "shape mismatch: truth abundances (T, rows, cols, P) = {:?} with L={}, estimate = {:?} with L={}",
            ta.header(),
            tm.bands,
            ea.header(),
            em.bands
        )));
    }
    if tm.bands != data.bands || (ta.times, ta.rows, ta.cols) != (data.times, data.rows, data.cols) {
        return Err(Error::Input("truth directory is inconsistent with its data cube".into()));
    }
    let (ta, ea) = (ta.to_f64(), ea.to_f64());
    metrics(
        &Unmixing {
            abundances: &ta,
            endmembers: &tm,
        },
        &Unmixing {
            abundances: &ea,
            endmembers: &em,
        },
        &data,
    )
}
