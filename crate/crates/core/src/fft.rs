//! Orthonormal 2D discrete Fourier transform with a call counter.
//!
//! Every reconstruction method owns one [`Fft2`] and reports the number of
//! 2D transforms it performed, which is how per-iteration cost is compared
//! across methods.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};

use crate::{ComplexImage, Error, Result, C64};

pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
    calls: AtomicU64,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("calls", &self.calls())
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "FFT dimensions must be positive");
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft(cols, FftDirection::Forward),
            row_inv: planner.plan_fft(cols, FftDirection::Inverse),
            col_fwd: planner.plan_fft(rows, FftDirection::Forward),
            col_inv: planner.plan_fft(rows, FftDirection::Inverse),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of 2D transforms (forward or inverse) performed so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// In-place unitary forward transform.
    pub fn forward(&self, a: &mut ComplexImage) -> Result<()> {
        self.transform(a, &self.row_fwd, &self.col_fwd)
    }

    /// In-place unitary inverse transform.
    pub fn inverse(&self, a: &mut ComplexImage) -> Result<()> {
        self.transform(a, &self.row_inv, &self.col_inv)
    }

    fn transform(
        &self,
        a: &mut ComplexImage,
        row_plan: &Arc<dyn Fft<f64>>,
        col_plan: &Arc<dyn Fft<f64>>,
    ) -> Result<()> {
        if a.dim() != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, self.cols),
                found: a.dim(),
            });
        }
        self.calls.fetch_add(1, Ordering::Relaxed);

        if !a.is_standard_layout() {
            *a = a.as_standard_layout().to_owned();
        }
        let data = a.as_slice_mut().expect("standard layout");
        row_plan.process(data);

        let mut column = vec![C64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[r * self.cols + c];
            }
            col_plan.process(&mut column);
            for r in 0..self.rows {
                data[r * self.cols + c] = column[r] * self.scale;
            }
        }
        Ok(())
    }
}
