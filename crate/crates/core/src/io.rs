//! Cube files, run configuration, JSON reports and plot export.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elbo::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::sequence::HsiSequence;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";

/// A `T × rows × cols × L` single-precision cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub times: usize,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

impl Cube {
    pub fn new(times: usize, rows: usize, cols: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if times == 0 || rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Input(format!(
                "cube dimensions must be positive, got ({times}, {rows}, {cols}, {bands})"
            )));
        }
        if data.len() != times * rows * cols * bands {
            return Err(Error::Shape {
                op: "Cube::new",
                detail: format!(
                    "payload has {} values, header implies {}",
                    data.len(),
                    times * rows * cols * bands
                ),
            });
        }
        for (name, v) in [("T", times), ("rows", rows), ("cols", cols), ("L", bands)] {
            if u32::try_from(v).is_err() {
                return Err(Error::Input(format!("cube dimension {name}={v} does not fit in 32 bits")));
            }
        }
        Ok(Self {
            times,
            rows,
            cols,
            bands,
            data,
        })
    }

    pub fn from_f64(times: usize, rows: usize, cols: usize, bands: usize, data: &[f64]) -> Result<Self> {
        Self::new(times, rows, cols, bands, data.iter().map(|v| *v as f32).collect())
    }

    pub fn from_sequence(seq: &HsiSequence) -> Self {
        Self::from_f64(seq.times, seq.rows, seq.cols, seq.bands, seq.data()).expect("sequence dimensions are valid")
    }

    pub fn to_sequence(&self) -> Result<HsiSequence> {
        HsiSequence::new(
            self.times,
            self.rows,
            self.cols,
            self.bands,
            self.data.iter().map(|v| f64::from(*v)).collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v)).collect()
    }

    pub fn header(&self) -> (usize, usize, usize, usize) {
        (self.times, self.rows, self.cols, self.bands)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CUBE_MAGIC)?;
        for v in [self.times, self.rows, self.cols, self.bands] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Input(format!("cannot read cube: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != CUBE_MAGIC {
            return Err(Error::Input("not a cube file (missing HSC1 header)".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (t, r, c, l) = (dim(0), dim(1), dim(2), dim(3));
        let expected = t
            .checked_mul(r)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_mul(l))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Input("cube header overflows".into()))?;
        if bytes.len() - 20 != expected {
            return Err(Error::Input(format!(
                "cube payload has {} bytes, header ({t}, {r}, {c}, {l}) implies {expected}",
                bytes.len() - 20
            )));
        }
        let data = bytes[20..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Self::new(t, r, c, l, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f)).map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Flat run configuration for `unmix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub endmembers: usize,
    pub basis: usize,
    pub sigma_psi: f64,
    pub sigma_a_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            endmembers: 3,
            basis: 10,
            sigma_psi: 1e-5,
            sigma_a_layers: 2,
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn model_dims(&self, bands: usize) -> ModelDims {
        ModelDims {
            bands,
            endmembers: self.endmembers,
            basis: self.basis,
            sigma_a_layers: self.sigma_a_layers,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.endmembers < 2 || self.basis == 0 || self.sigma_a_layers == 0 {
            return Err(Error::Config(format!(
                "need endmembers >= 2, basis >= 1, sigma_a_layers >= 1 (got {}, {}, {})",
                self.endmembers, self.basis, self.sigma_a_layers
            )));
        }
        if !(self.sigma_psi > 0.0 && self.sigma_psi.is_finite()) {
            return Err(Error::Config(format!("sigma_psi must be positive, got {}", self.sigma_psi)));
        }
        self.train_config().validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `summary.json` written by `unmix` and `baseline-fcls`. Contains nothing
/// run-time dependent so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub times: usize,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub epochs_completed: usize,
    pub final_elbo: Option<f64>,
    pub nrmse_y: f64,
    pub negative_m0_entries: bool,
    pub config: Option<RunConfig>,
}

/// `timing.json`, kept apart from the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
}

/// `manifest.json` written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub seed: u64,
    pub times: usize,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub snr_db: Option<f64>,
    pub generator: serde_json::Value,
    pub files: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Appends one JSON line.
pub fn append_jsonl<T: Serialize>(file: &mut impl Write, value: &T) -> std::io::Result<()> {
    let line = serde_json::to_string(value).map_err(std::io::Error::other)?;
    writeln!(file, "{line}")?;
    file.flush()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders abundance maps at each time step. With `P ≥ 3` the first three
/// endmembers become the red, green and blue channels of
/// `abundances_t{t}.png`; otherwise one grayscale map per endmember is
/// written as `abundances_t{t}_em{j}.png`. Returns the written file names.
pub fn write_abundance_pngs(abundances: &Cube, out: &Path) -> Result<Vec<String>> {
    let (times, rows, cols, p) = abundances.header();
    let n = rows * cols;
    let (w, h) = (cols as u32, rows as u32);
    let mut names = Vec::new();
    for t in 0..times {
        let at = |i: usize, j: usize| f64::from(abundances.data[(t * n + i) * p + j]);
        if p >= 3 {
            let img = image::RgbImage::from_fn(w, h, |x, y| {
                let i = y as usize * cols + x as usize;
                image::Rgb([to_u8(at(i, 0)), to_u8(at(i, 1)), to_u8(at(i, 2))])
            });
            let name = format!("abundances_t{t}.png");
            img.save(out.join(&name))
                .map_err(|e| Error::Image(format!("{}: {e}", out.join(&name).display())))?;
            names.push(name);
        } else {
            for j in 0..p {
                let img = image::GrayImage::from_fn(w, h, |x, y| {
                    image::Luma([to_u8(at(y as usize * cols + x as usize, j))])
                });
                let name = format!("abundances_t{t}_em{j}.png");
                img.save(out.join(&name))
                    .map_err(|e| Error::Image(format!("{}: {e}", out.join(&name).display())))?;
                names.push(name);
            }
        }
    }
    Ok(names)
}

/// Writes `samples` endmember spectra, spread evenly over time and space,
/// as CSV with one row per (sample, band).
pub fn write_endmember_csv(endmembers: &Cube, bands: usize, samples: usize, path: &Path) -> Result<()> {
    let (times, rows, cols, lp) = endmembers.header();
    if bands == 0 || lp % bands != 0 {
        return Err(Error::Input(format!(
            "endmember cube has {lp} values per pixel, not a multiple of L={bands}"
        )));
    }
    let p = lp / bands;
    let n = rows * cols;
    let total = times * n;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..p).map(|j| format!("em{j}")).collect();
    writeln!(w, "sample,t,pixel,band,{}", header.join(",")).map_err(io)?;
    for s in 0..samples {
        let idx = if samples <= 1 { 0 } else { s * (total - 1) / (samples - 1) };
        let (t, i) = (idx / n, idx % n);
        let o = (t * n + i) * lp;
        for b in 0..bands {
            let vals: Vec<String> = (0..p).map(|j| endmembers.data[o + b * p + j].to_string()).collect();
            writeln!(w, "{s},{t},{i},{b},{}", vals.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
