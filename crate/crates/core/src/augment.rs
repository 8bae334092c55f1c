//! The two waveform views used for multi-view consistency training:
//! additive white Gaussian noise at a drawn SNR, and a resampling time-stretch.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Noise RMS used when the input carries no energy, so no SNR can be defined.
pub const SILENCE_NOISE_RMS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub snr_db_range: [f64; 2],
    pub stretch_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            snr_db_range: [10.0, 30.0],
            stretch_range: [0.8, 1.25],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [slo, shi] = self.snr_db_range;
        if !(slo.is_finite() && shi.is_finite() && slo <= shi) {
            return Err(Error::config(format!("bad snr_db_range {:?}", self.snr_db_range)));
        }
        let [rlo, rhi] = self.stretch_range;
        if !(rlo.is_finite() && rhi.is_finite() && rlo <= rhi && rlo > 0.0) {
            return Err(Error::config(format!(
                "stretch_range must satisfy 0 < low <= high, got {:?}",
                self.stretch_range
            )));
        }
        Ok(())
    }
}

fn draw(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng::uniform(rng, lo, hi)
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Adds noise at exactly `snr_db` (measured against the realized noise
/// vector, before clamping). Returns the clamped output.
pub fn add_noise_at_snr(waveform: &[f32], snr_db: f64, rng: &mut Rng) -> Result<Vec<f32>> {
    if waveform.is_empty() {
        return Err(Error::arg("empty waveform"));
    }
    let mut noise: Vec<f64> = (0..waveform.len()).map(|_| rng::normal(rng)).collect();
    let signal: Vec<f64> = waveform.iter().map(|&x| x as f64).collect();
    let s_rms = rms(&signal);
    let target = if s_rms > 0.0 {
        s_rms * 10f64.powf(-snr_db / 20.0)
    } else {
        SILENCE_NOISE_RMS
    };
    let n_rms = rms(&noise);
    let scale = if n_rms > 0.0 { target / n_rms } else { 0.0 };
    noise.iter_mut().for_each(|g| *g *= scale);
    Ok(signal
        .iter()
        .zip(&noise)
        .map(|(s, g)| (s + g).clamp(-1.0, 1.0) as f32)
        .collect())
}

/// Noise view: SNR drawn uniformly from `cfg.snr_db_range`.
pub fn noise_augment(waveform: &[f32], cfg: &AugmentConfig, rng: &mut Rng) -> Result<Vec<f32>> {
    let snr = draw(rng, cfg.snr_db_range);
    add_noise_at_snr(waveform, snr, rng)
}

/// Resamples by `rate` with linear interpolation; output length is
/// `round(len / rate)`. Rates above 1 shorten (and raise pitch).
pub fn stretch_by(waveform: &[f32], rate: f64) -> Result<Vec<f32>> {
    if waveform.is_empty() {
        return Err(Error::arg("empty waveform"));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::arg(format!("stretch rate must be positive, got {rate}")));
    }
    let n = waveform.len();
    let out_len = ((n as f64 / rate).round() as usize).max(1);
    let last = (n - 1) as f64;
    Ok((0..out_len)
        .map(|j| {
            let pos = (j as f64 * rate).min(last);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            let a = waveform[i] as f64;
            if frac == 0.0 || i + 1 >= n {
                a as f32
            } else {
                let b = waveform[i + 1] as f64;
                (a + (b - a) * frac) as f32
            }
        })
        .collect())
}

/// Time-stretch view: rate drawn uniformly from `cfg.stretch_range`.
pub fn time_stretch(waveform: &[f32], cfg: &AugmentConfig, rng: &mut Rng) -> Result<Vec<f32>> {
    let rate = draw(rng, cfg.stretch_range);
    stretch_by(waveform, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn tone(freq: f64, n: usize) -> Vec<f32> {
        (0..n).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32).collect()
    }

    #[test]
    fn noise_level_follows_snr() {
        // unit-RMS square wave
        let x: Vec<f32> = (0..20_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut r = rng::substream(1, &[]);
        let y = add_noise_at_snr(&x, 20.0, &mut r).unwrap();
        // recover noise where the clamp was inactive
        let mut r2 = rng::substream(1, &[]);
        let g: Vec<f64> = (0..x.len()).map(|_| rng::normal(&mut r2)).collect();
        let scale = 0.1 / rms(&g);
        for i in 0..x.len() {
            let expected = (x[i] as f64 + g[i] * scale).clamp(-1.0, 1.0) as f32;
            assert_eq!(y[i], expected);
        }
        assert!((rms(&g) * scale - 0.1).abs() < 1e-12);
    }

    #[test]
    fn noise_view_is_deterministic_and_dense() {
        let x = tone(440.0, 8000);
        let cfg = AugmentConfig::default();
        let a = noise_augment(&x, &cfg, &mut rng::substream(3, &[1])).unwrap();
        let b = noise_augment(&x, &cfg, &mut rng::substream(3, &[1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), x.len());
        assert!(a.iter().zip(&x).all(|(p, q)| p != q));
    }

    #[test]
    fn silent_input_gets_reference_noise() {
        let y = add_noise_at_snr(&[0.0; 4000], 20.0, &mut rng::substream(0, &[])).unwrap();
        let r = rms(&y.iter().map(|&v| v as f64).collect::<Vec<_>>());
        assert!((r - SILENCE_NOISE_RMS).abs() < 1e-9);
    }

    #[test]
    fn unit_rate_is_identity() {
        let x = tone(300.0, 1234);
        assert_eq!(stretch_by(&x, 1.0).unwrap(), x);
    }

    #[test]
    fn length_law() {
        let x = tone(300.0, 1001);
        assert_eq!(stretch_by(&x, 2.0).unwrap().len(), 501);
        assert_eq!(stretch_by(&x, 0.8).unwrap().len(), 1251);
        assert_eq!(stretch_by(&x, 1.25).unwrap().len(), 801);
    }

    #[test]
    fn stretch_preserves_amplitude_bounds() {
        let x = tone(1234.5, 5000);
        let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let y = stretch_by(&x, 0.83).unwrap();
        assert!(y.iter().all(|v| v.abs() <= peak));
    }

    #[test]
    fn bad_inputs() {
        assert!(stretch_by(&[], 1.0).is_err());
        assert!(stretch_by(&[0.1], 0.0).is_err());
        assert!(noise_augment(&[], &AugmentConfig::default(), &mut rng::substream(0, &[])).is_err());
        let bad = AugmentConfig {
            stretch_range: [0.0, 1.0],
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            snr_db_range: [30.0, 10.0],
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
