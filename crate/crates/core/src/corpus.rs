//! Deterministic synthetic multi-speaker corpus.
//!
//! Each speaker is a harmonic voice source (vibrato-modulated F0, geometric
//! harmonic roll-off) filtered by three formant resonances. Utterances add
//! per-recording nuisance on top: 2-4 "phonetic" segments that move the
//! formants around the speaker's centres, intonation, a random spectral tilt
//! standing in for the channel, a broadband noise floor and a random level.
//! Samples are quantized to the 16-bit grid so a WAV round trip is exact.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::par::{BatchMap, Sequential};
use crate::rng::{self, Rng};

pub const SAMPLE_RATE: u32 = 16_000;

/// Largest speaker count for which the F0 grid keeps neighbours ≥ 2 Hz apart.
pub const MAX_SPEAKERS: usize = 64;

const F0_RANGE: (f64, f64) = (80.0, 300.0);
const F0_JITTER_HZ: f64 = 0.25;
const FORMANT_RANGES: [(f64, f64); 3] = [(320.0, 880.0), (950.0, 2350.0), (2450.0, 3450.0)];
const FORMANT_BANDWIDTHS: [f64; 3] = [90.0, 130.0, 200.0];
const FORMANT_GAINS: [f64; 3] = [10.0, 6.0, 3.5];
/// Harmonics are only synthesized below this frequency.
const MAX_HARMONIC_HZ: f64 = 7_600.0;
const BLOCK: usize = 80;

// substream tags
const TAG_GRID: u64 = 1;
const TAG_PROFILE: u64 = 2;
const TAG_UTTERANCE: u64 = 3;
const TAG_TRIALS: u64 = 4;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: u32,
    /// Hz, in [80, 300].
    pub f0_base: f64,
    /// Formant centre frequencies in Hz, strictly increasing.
    pub formants: [f64; 3],
    /// Amplitude ratio between consecutive harmonics, in (0.5, 0.95].
    pub harmonic_decay: f64,
    pub vibrato_rate: f64,
    pub vibrato_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UtteranceKey {
    pub speaker_id: u32,
    pub utterance_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: u32,
    pub utterance_id: u32,
    /// Mono samples in [-1, 1], on the 16-bit PCM grid.
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Utterance {
    pub fn key(&self) -> UtteranceKey {
        UtteranceKey {
            speaker_id: self.speaker_id,
            utterance_id: self.utterance_id,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub profiles: Vec<SpeakerProfile>,
    /// Speaker-major order.
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn n_speakers(&self) -> usize {
        self.profiles.len()
    }

    pub fn get(&self, key: UtteranceKey) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.key() == key)
    }

    /// Utterance indices grouped by speaker, in speaker order.
    pub fn by_speaker(&self) -> Vec<(u32, Vec<usize>)> {
        let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
        for (i, u) in self.utterances.iter().enumerate() {
            match groups.iter_mut().find(|(s, _)| *s == u.speaker_id) {
                Some((_, v)) => v.push(i),
                None => groups.push((u.speaker_id, vec![i])),
            }
        }
        groups
    }
}

/// Base-`b` radical inverse of `i` (van der Corput sequence).
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Position of `speaker_id` on a seeded, rotated low-discrepancy grid in [0, 1).
fn grid_position(seed: u64, speaker_id: u32, base: u64, dim: u64) -> f64 {
    let mut g = rng::substream(seed, &[TAG_GRID, dim]);
    let offset: f64 = g.random();
    let x = radical_inverse(speaker_id as u64, base) + offset;
    x - x.floor()
}

/// Speaker parameters as a pure function of `(seed, speaker_id)`.
///
/// F0 sits on a rotated base-2 van der Corput grid: the first `n ≤ 64` ids are
/// at least `220 / 64` Hz apart before the ±0.25 Hz jitter. Formants use
/// bases 3, 5 and 7 so they are decorrelated from F0 and from each other.
pub fn speaker_profile(seed: u64, speaker_id: u32) -> SpeakerProfile {
    let mut r = rng::substream(seed, &[TAG_PROFILE, speaker_id as u64]);
    let (lo, hi) = F0_RANGE;
    let span = hi - lo - 2.0 * F0_JITTER_HZ;
    let f0_base = lo + F0_JITTER_HZ + span * grid_position(seed, speaker_id, 2, 0)
        + rng::uniform(&mut r, -F0_JITTER_HZ, F0_JITTER_HZ);
    let mut formants = [0.0; 3];
    for (j, ((lo, hi), base)) in FORMANT_RANGES.iter().zip([3u64, 5, 7]).enumerate() {
        let jitter = 0.02 * (hi - lo);
        let pos = grid_position(seed, speaker_id, base, 1 + j as u64);
        formants[j] = (lo + jitter) + (hi - lo - 2.0 * jitter) * pos + rng::uniform(&mut r, -jitter, jitter);
    }
    SpeakerProfile {
        speaker_id,
        f0_base,
        formants,
        harmonic_decay: rng::uniform(&mut r, 0.6, 0.92),
        vibrato_rate: rng::uniform(&mut r, 4.0, 7.0),
        vibrato_depth: rng::uniform(&mut r, 0.0, 0.03),
    }
}

/// Per-utterance variability around a speaker's profile.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Relative half-width of the per-utterance F0 offset.
    pub f0_spread: f64,
    /// Half-width of the channel tilt exponent (gain ∝ (f / 1 kHz)^tilt).
    pub tilt: f64,
    /// Broadband noise RMS relative to the voiced RMS.
    pub noise_rel: [f64; 2],
    pub peak: [f64; 2],
    /// Relative half-width of per-segment formant moves.
    pub formant_spread: f64,
    /// Relative half-width of per-segment pitch moves.
    pub segment_pitch_spread: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            f0_spread: 0.03,
            tilt: 1.0,
            noise_rel: [0.003, 0.02],
            peak: [0.3, 0.9],
            formant_spread: 0.18,
            segment_pitch_spread: 0.05,
        }
    }
}

struct Segment {
    start: f64,
    formants: [f64; 3],
    pitch: f64,
}

/// Piecewise-constant segment targets with 40 ms cosine cross-fades.
fn segment_value(segments: &[Segment], t: f64, pick: impl Fn(&Segment) -> f64) -> f64 {
    const FADE: f64 = 0.04;
    let idx = segments.iter().rposition(|s| s.start <= t).unwrap_or(0);
    let cur = pick(&segments[idx]);
    if idx > 0 {
        let dt = t - segments[idx].start;
        if dt < FADE {
            let w = 0.5 - 0.5 * (PI * dt / FADE).cos();
            return pick(&segments[idx - 1]) * (1.0 - w) + cur * w;
        }
    }
    cur
}

/// Synthesizes one utterance. Pure in `(seed, profile, utterance_id, n_samples)`.
pub fn synthesize_utterance(seed: u64, profile: &SpeakerProfile, utterance_id: u32, duration_s: f64) -> Utterance {
    synthesize_utterance_with(seed, profile, utterance_id, duration_s, &SynthesisConfig::default())
}

pub fn synthesize_utterance_with(
    seed: u64,
    profile: &SpeakerProfile,
    utterance_id: u32,
    duration_s: f64,
    v: &SynthesisConfig,
) -> Utterance {
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr).round().max(1.0) as usize;
    let mut r = rng::substream(seed, &[TAG_UTTERANCE, profile.speaker_id as u64, utterance_id as u64]);

    let style_f0 = profile.f0_base * (1.0 + v.f0_spread * rng::uniform(&mut r, -1.0, 1.0));
    let tilt = v.tilt * rng::uniform(&mut r, -1.0, 1.0);
    let noise_rel = rng::uniform(&mut r, v.noise_rel[0], v.noise_rel[1]);
    let peak = rng::uniform(&mut r, v.peak[0], v.peak[1]);
    let vib_phase = rng::uniform(&mut r, 0.0, 2.0 * PI);

    let n_seg = r.random_range(2..=4usize);
    let total = n as f64 / sr;
    // Boundaries: each segment gets at least 60% of an equal share.
    let mut weights: Vec<f64> = (0..n_seg).map(|_| rng::uniform(&mut r, 0.6, 1.4)).collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= total / wsum);
    let mut segments = Vec::with_capacity(n_seg);
    let mut start = 0.0;
    for w in &weights {
        let mut formants = [0.0; 3];
        for (j, f) in formants.iter_mut().enumerate() {
            *f = profile.formants[j] * (1.0 + v.formant_spread * rng::uniform(&mut r, -1.0, 1.0));
        }
        // keep the ordering invariant after perturbation
        formants[1] = formants[1].max(formants[0] + 150.0);
        formants[2] = formants[2].max(formants[1] + 300.0);
        segments.push(Segment {
            start,
            formants,
            pitch: 1.0 + v.segment_pitch_spread * rng::uniform(&mut r, -1.0, 1.0),
        });
        start += w;
    }

    let mut out = vec![0.0f64; n];
    let mut phase = 0.0f64;
    let mut amps: Vec<f64> = Vec::new();
    for block_start in (0..n).step_by(BLOCK) {
        let t0 = block_start as f64 / sr;
        let pitch = segment_value(&segments, t0, |s| s.pitch);
        let f0_block = style_f0 * pitch;
        let fm = [
            segment_value(&segments, t0, |s| s.formants[0]),
            segment_value(&segments, t0, |s| s.formants[1]),
            segment_value(&segments, t0, |s| s.formants[2]),
        ];
        let top = f0_block * (1.0 + profile.vibrato_depth);
        let n_harm = ((MAX_HARMONIC_HZ / top).floor() as usize).max(1);
        amps.clear();
        let mut decay = 1.0;
        for k in 1..=n_harm {
            let f = k as f64 * f0_block;
            let mut env = 1.0;
            for j in 0..3 {
                let x = (f - fm[j]) / FORMANT_BANDWIDTHS[j];
                env += FORMANT_GAINS[j] / (1.0 + x * x);
            }
            let channel = (tilt * (f / 1000.0).ln()).exp();
            amps.push(decay * env * channel);
            decay *= profile.harmonic_decay;
        }
        let end = (block_start + BLOCK).min(n);
        for (i, o) in out.iter_mut().enumerate().take(end).skip(block_start) {
            let t = i as f64 / sr;
            let f0 = f0_block * (1.0 + profile.vibrato_depth * (2.0 * PI * profile.vibrato_rate * t + vib_phase).sin());
            phase += 2.0 * PI * f0 / sr;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            // sin(kφ) by the Chebyshev recurrence
            let (s1, c1) = (phase.sin(), phase.cos());
            let two_c = 2.0 * c1;
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = 0.0;
            for a in &amps {
                acc += a * cur;
                let next = two_c * cur - prev;
                prev = cur;
                cur = next;
            }
            *o = acc;
        }
    }

    // 20 ms onset/offset ramps
    let ramp = (0.02 * sr) as usize;
    for i in 0..ramp.min(n / 2) {
        let w = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
        out[i] *= w;
        out[n - 1 - i] *= w;
    }

    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let noise_rms = noise_rel * rms.max(1e-9);
    for x in out.iter_mut() {
        *x += noise_rms * rng::normal(&mut r);
    }
    let max_abs = out.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    let gain = peak / max_abs;
    let samples = out
        .iter()
        .map(|x| quantize_i16(x * gain) as f32 / 32768.0)
        .collect();

    Utterance {
        speaker_id: profile.speaker_id,
        utterance_id,
        samples,
        sample_rate: SAMPLE_RATE,
    }
}

/// Nearest 16-bit PCM code for a sample in [-1, 1].
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Generates `n_speakers × utts_per_speaker` utterances (ids `0..utts_per_speaker`).
pub fn generate_corpus(seed: u64, n_speakers: usize, utts_per_speaker: usize, duration_s: f64) -> Result<Corpus> {
    if utts_per_speaker < 2 {
        return Err(Error::arg(format!("utts_per_speaker must be >= 2, got {utts_per_speaker}")));
    }
    generate_corpus_with(seed, n_speakers, 0..utts_per_speaker as u32, duration_s, &Sequential)
}

/// Generates the utterance ids in `utterance_ids` for speakers `0..n_speakers`.
///
/// Disjoint id ranges of the same `(seed, n_speakers)` give held-out
/// recordings of the same voices.
pub fn generate_corpus_with<M: BatchMap>(
    seed: u64,
    n_speakers: usize,
    utterance_ids: Range<u32>,
    duration_s: f64,
    map: &M,
) -> Result<Corpus> {
    generate_corpus_custom(seed, n_speakers, utterance_ids, duration_s, &SynthesisConfig::default(), map)
}

/// [`generate_corpus_with`] under non-default utterance variability.
pub fn generate_corpus_custom<M: BatchMap>(
    seed: u64,
    n_speakers: usize,
    utterance_ids: Range<u32>,
    duration_s: f64,
    variability: &SynthesisConfig,
    map: &M,
) -> Result<Corpus> {
    if !(2..=MAX_SPEAKERS).contains(&n_speakers) {
        return Err(Error::arg(format!("n_speakers must be in 2..={MAX_SPEAKERS}, got {n_speakers}")));
    }
    if utterance_ids.is_empty() {
        return Err(Error::arg("empty utterance id range"));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::arg(format!("duration_s must be positive, got {duration_s}")));
    }
    let profiles: Vec<SpeakerProfile> = (0..n_speakers as u32).map(|s| speaker_profile(seed, s)).collect();
    let jobs: Vec<(usize, u32)> = (0..n_speakers)
        .flat_map(|s| utterance_ids.clone().map(move |u| (s, u)))
        .collect();
    let utterances = map.map(jobs, |(s, u)| synthesize_utterance_with(seed, &profiles[s], u, duration_s, variability));
    Ok(Corpus {
        seed,
        profiles,
        utterances,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial<K> {
    /// Same speaker on both sides.
    pub target: bool,
    pub a: K,
    pub b: K,
}

impl<K> Trial<K> {
    pub fn label(&self) -> u8 {
        self.target as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialList<K = UtteranceKey> {
    pub trials: Vec<Trial<K>>,
}

impl<K> TrialList<K> {
    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.trials.len() - self.n_target()
    }
}

/// Samples `k` distinct elements out of `0..n` (order is random).
fn sample_indices(r: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    if k * 4 >= n {
        let mut all: Vec<usize> = (0..n).collect();
        let (picked, _) = all.partial_shuffle(r, k);
        picked.to_vec()
    } else {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let i = r.random_range(0..n);
            if seen.insert(i) {
                out.push(i);
            }
        }
        out
    }
}

/// Maps a linear index onto the `idx`-th unordered pair `(i, j)`, `i < j < n`.
fn unrank_pair(n: usize, mut idx: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
        i += 1;
    }
}

/// Draws `n_target` same-speaker and `n_nontarget` different-speaker trials,
/// each class without replacement and never pairing an utterance with itself.
pub fn make_trials(corpus: &Corpus, seed: u64, n_target: usize, n_nontarget: usize) -> Result<TrialList> {
    let groups = corpus.by_speaker();
    if groups.len() < 2 {
        return Err(Error::arg("trial generation needs at least two speakers"));
    }
    let sizes: Vec<usize> = groups.iter().map(|(_, v)| v.len()).collect();
    let same_pairs: Vec<usize> = sizes.iter().map(|&m| m * m.saturating_sub(1) / 2).collect();
    let n_same: usize = same_pairs.iter().sum();
    let n_utts: usize = sizes.iter().sum();
    let n_diff = n_utts * (n_utts - 1) / 2 - n_same;
    if n_target > n_same {
        return Err(Error::arg(format!("{n_target} target trials requested but only {n_same} same-speaker pairs exist")));
    }
    if n_nontarget > n_diff {
        return Err(Error::arg(format!(
            "{n_nontarget} non-target trials requested but only {n_diff} cross-speaker pairs exist"
        )));
    }

    let mut r = rng::substream(seed, &[TAG_TRIALS]);
    let key = |i: usize| corpus.utterances[i].key();
    let mut trials = Vec::with_capacity(n_target + n_nontarget);

    for idx in sample_indices(&mut r, n_same, n_target) {
        let mut rem = idx;
        let g = same_pairs
            .iter()
            .position(|&c| {
                if rem < c {
                    true
                } else {
                    rem -= c;
                    false
                }
            })
            .expect("index within same-speaker pair count");
        let (i, j) = unrank_pair(sizes[g], rem);
        let members = &groups[g].1;
        trials.push(Trial {
            target: true,
            a: key(members[i]),
            b: key(members[j]),
        });
    }

    // Cross-speaker pairs ranked as (utterance i, later utterance j of another speaker).
    let owner: Vec<u32> = corpus.utterances.iter().map(|u| u.speaker_id).collect();
    let mut later_other = vec![0usize; n_utts];
    for i in 0..n_utts {
        later_other[i] = (i + 1..n_utts).filter(|&j| owner[j] != owner[i]).count();
    }
    let mut picks = sample_indices(&mut r, n_diff, n_nontarget);
    for idx in picks.iter_mut() {
        let mut rem = *idx;
        let i = later_other
            .iter()
            .position(|&c| {
                if rem < c {
                    true
                } else {
                    rem -= c;
                    false
                }
            })
            .expect("index within cross-speaker pair count");
        let j = (i + 1..n_utts)
            .filter(|&j| owner[j] != owner[i])
            .nth(rem)
            .expect("rank within row");
        trials.push(Trial {
            target: false,
            a: key(i),
            b: key(j),
        });
    }

    trials.shuffle(&mut r);
    Ok(TrialList { trials })
}
