//! Log-mel frontend following the Whisper feature-extractor convention:
//! 25 ms Hann window, 10 ms hop, Slaney-style mel filterbank, `log10` power
//! with a floor, max-referenced `(x + 4) / 4` scaling and a fixed frame count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Output frame count; shorter inputs are zero-padded, longer ones truncated.
    pub fixed_frames: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            n_fft: 400,
            hop: 160,
            n_mels: 80,
            fixed_frames: 3000,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    /// Default frontend with a shorter fixed window (3 s at 300 frames).
    pub fn micro() -> Self {
        FeatureConfig {
            fixed_frames: 300,
            ..Self::default()
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 {
            return Err(Error::config("n_fft must be >= 2"));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::config(format!("hop must be in 1..=n_fft, got {}", self.hop)));
        }
        if self.n_mels < 2 {
            return Err(Error::config("n_mels must be >= 2"));
        }
        if self.fixed_frames == 0 {
            return Err(Error::config("fixed_frames must be >= 1"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::config(format!(
                "need 0 <= fmin < fmax <= sample_rate/2, got fmin={} fmax={}",
                self.fmin, self.fmax
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }
}

/// An `n_mels × n_frames` feature matrix, row-major by mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub data: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    /// Columns at or beyond this index are zero padding.
    pub valid_frames: usize,
    pub config: FeatureConfig,
}

impl LogMelSpectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.data[mel * self.n_frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.get(m, frame)).collect()
    }
}

/// Power spectrum of a single windowed frame.
///
/// The core crate ships a direct DFT; the `wsi` crate plugs in an FFT.
pub trait PowerSpectrum: Sync {
    /// Writes `|X_k|²` for `k = 0..=n_fft/2` into `out`.
    fn power(&self, frame: &[f64], out: &mut [f64]);
}

/// Direct real DFT with precomputed twiddles; `O(n_fft²)` per frame.
#[derive(Debug, Clone)]
pub struct DftPower {
    n_fft: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl DftPower {
    pub fn new(n_fft: usize) -> Self {
        let n_bins = n_fft / 2 + 1;
        let mut cos = Vec::with_capacity(n_bins * n_fft);
        let mut sin = Vec::with_capacity(n_bins * n_fft);
        for k in 0..n_bins {
            for n in 0..n_fft {
                // reduce k·n mod N first so large products keep full precision
                let phase = 2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                cos.push(phase.cos());
                sin.push(phase.sin());
            }
        }
        DftPower { n_fft, cos, sin }
    }
}

impl PowerSpectrum for DftPower {
    fn power(&self, frame: &[f64], out: &mut [f64]) {
        let n = self.n_fft;
        for (k, o) in out.iter_mut().enumerate() {
            let c = &self.cos[k * n..(k + 1) * n];
            let s = &self.sin[k * n..(k + 1) * n];
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..n {
                re += frame[i] * c[i];
                im += frame[i] * s[i];
            }
            *o = re * re + im * im;
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Edge/centre frequencies of the filterbank: `n_mels + 2` points, filter `m`
/// spans `[edges[m], edges[m + 2]]` and peaks at `edges[m + 1]`.
pub fn mel_band_edges(cfg: &FeatureConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Triangular, area-normalized mel filters as an `n_mels × (n_fft/2 + 1)` matrix.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let edges = mel_band_edges(cfg);
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut w = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        let row = &mut w[m * n_bins..(m + 1) * n_bins];
        for (k, x) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            *x = up.min(down).max(0.0) * norm;
        }
        if row.iter().all(|&x| x == 0.0) {
            return Err(Error::config(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; reduce n_mels or raise n_fft"
            )));
        }
    }
    Ok(w)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel extractor bound to one configuration and power-spectrum backend.
#[derive(Debug, Clone)]
pub struct Featurizer<P> {
    cfg: FeatureConfig,
    filters: Vec<f64>,
    window: Vec<f64>,
    backend: P,
}

impl Featurizer<DftPower> {
    pub fn with_dft(cfg: FeatureConfig) -> Result<Self> {
        Self::new(cfg, DftPower::new(cfg.n_fft))
    }
}

impl<P: PowerSpectrum> Featurizer<P> {
    pub fn new(cfg: FeatureConfig, backend: P) -> Result<Self> {
        let filters = mel_filterbank(&cfg)?;
        Ok(Featurizer {
            cfg,
            filters,
            window: hann_window(cfg.n_fft),
            backend,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Frames are centred at multiples of `hop` with zero padding outside the
    /// signal; one frame per hop whose centre lies inside the waveform.
    pub fn log_mel(&self, waveform: &[f32], sample_rate: u32) -> Result<LogMelSpectrogram> {
        let cfg = &self.cfg;
        if waveform.is_empty() {
            return Err(Error::arg("empty waveform"));
        }
        if sample_rate != cfg.sample_rate {
            return Err(Error::arg(format!(
                "sample rate {sample_rate} Hz does not match feature config {} Hz",
                cfg.sample_rate
            )));
        }
        let n = waveform.len();
        let n_bins = cfg.n_bins();
        let computed = n.div_ceil(cfg.hop);
        let valid = computed.min(cfg.fixed_frames);
        let half = (cfg.n_fft / 2) as isize;

        let mut frame = vec![0.0; cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        let mut logs = vec![0.0; cfg.n_mels * valid];
        let mut peak = f64::NEG_INFINITY;
        for t in 0..valid {
            let start = (t * cfg.hop) as isize - half;
            for (i, f) in frame.iter_mut().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < n { waveform[idx as usize] as f64 } else { 0.0 };
                *f = s * self.window[i];
            }
            self.backend.power(&frame, &mut power);
            for m in 0..cfg.n_mels {
                let row = &self.filters[m * n_bins..(m + 1) * n_bins];
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                let v = e.max(cfg.log_floor).log10();
                peak = peak.max(v);
                logs[m * valid + t] = v;
            }
        }

        let mut data = vec![0.0; cfg.n_mels * cfg.fixed_frames];
        for m in 0..cfg.n_mels {
            for t in 0..valid {
                data[m * cfg.fixed_frames + t] = (logs[m * valid + t] - peak + 4.0) / 4.0;
            }
        }
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("log-mel entry {bad}")));
        }
        Ok(LogMelSpectrogram {
            data,
            n_mels: cfg.n_mels,
            n_frames: cfg.fixed_frames,
            valid_frames: valid,
            config: *cfg,
        })
    }
}

/// One-shot log-mel using the built-in DFT backend.
pub fn log_mel(waveform: &[f32], sample_rate: u32, cfg: &FeatureConfig) -> Result<LogMelSpectrogram> {
    Featurizer::with_dft(*cfg)?.log_mel(waveform, sample_rate)
}
