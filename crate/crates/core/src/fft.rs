//! Thin 2D FFT layer over rustfft (row-column decomposition).

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cached forward/inverse plans for an n x n transform.
#[derive(Clone)]
pub struct Fft2 {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.n, self.n)
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn rows(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        for row in data.chunks_exact_mut(self.n) {
            plan.process(row);
        }
    }

    fn transpose(&self, data: &mut [Complex64]) {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                data.swap(i * self.n + j, j * self.n + i);
            }
        }
    }

    /// Unnormalized forward 2D DFT in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n * self.n);
        self.rows(data, &self.fwd.clone());
        self.transpose(data);
        self.rows(data, &self.fwd.clone());
        self.transpose(data);
    }

    /// Unnormalized inverse 2D DFT in place (forward then inverse scales by n^2).
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n * self.n);
        self.rows(data, &self.inv.clone());
        self.transpose(data);
        self.rows(data, &self.inv.clone());
        self.transpose(data);
    }
}

/// Forward 2D DFT of a real array; returns the complex spectrum.
pub fn dft2_real(values: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Fft2::new(n).forward(&mut buf);
    buf
}
