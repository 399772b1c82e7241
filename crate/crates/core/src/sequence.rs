use crate::error::{Error, Result};

/// A `T × rows × cols × L` stack of observed pixel spectra, stored t-major,
/// then row-major pixels, then bands.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiSequence {
    pub times: usize,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    data: Vec<f64>,
}

impl HsiSequence {
    pub fn new(times: usize, rows: usize, cols: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if times == 0 || rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Input(format!(
                "sequence dimensions must be positive, got T={times} rows={rows} cols={cols} L={bands}"
            )));
        }
        if data.len() != times * rows * cols * bands {
            return Err(Error::Shape {
                op: "HsiSequence::new",
                detail: format!(
                    "data length {} != T*rows*cols*L = {}",
                    data.len(),
                    times * rows * cols * bands
                ),
            });
        }
        Ok(Self { times, rows, cols, bands, data })
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, t: usize, n: usize) -> &[f64] {
        let off = (t * self.pixels() + n) * self.bands;
        &self.data[off..off + self.bands]
    }

    /// Pixel `n` over time as a `T × L` row-major block.
    pub fn series(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times * self.bands);
        for t in 0..self.times {
            out.extend_from_slice(self.pixel(t, n));
        }
        out
    }

    /// All pixels of image `t` as an `N × L` row-major block.
    pub fn image(&self, t: usize) -> &[f64] {
        let sz = self.pixels() * self.bands;
        &self.data[t * sz..(t + 1) * sz]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
