//! FFT power-spectrum backend.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use wsi_core::dsp::PowerSpectrum;

/// `|X_k|²` for `k = 0..=n/2` via a planned real-input FFT.
#[derive(Clone)]
pub struct RustFftPower {
    fft: Arc<dyn Fft<f64>>,
}

impl RustFftPower {
    pub fn new(n_fft: usize) -> Self {
        RustFftPower {
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }
}

impl std::fmt::Debug for RustFftPower {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RustFftPower").field("n_fft", &self.fft.len()).finish()
    }
}

impl PowerSpectrum for RustFftPower {
    fn power(&self, frame: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.norm_sqr();
        }
    }
}
