//! On-disk formats: WAV audio, corpus manifests, trial lists and checkpoints.
//!
//! Manifest rows are `<speaker_id>\t<utterance_id>\t<relative_path>`; trial
//! rows are `<label> <path_a> <path_b>`. Both are newline-terminated and
//! paths are relative to the corpus directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use wsi_core::corpus::{quantize_i16, Trial, TrialList, Utterance};
use wsi_core::model::{decode_checkpoint, encode_checkpoint, CheckpointDtype, ModelParams};
use wsi_core::par::BatchMap;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TRIALS_FILE: &str = "trials.txt";

/// Reads a mono 16-bit PCM WAV file as samples in `[-1, 1)` plus its rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!(
                "expected mono 16-bit PCM, got {} channel(s) at {} bits ({:?})",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok((samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM; samples are rounded to the 16-bit grid.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        w.write_sample(quantize_i16(s as f64)).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub speaker_id: u32,
    pub utterance_id: u32,
    pub path: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text: String = entries
        .iter()
        .map(|e| format!("{}\t{}\t{}\n", e.speaker_id, e.utterance_id, e.path))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_relative(path: &Path, line: usize, p: &str) -> Result<()> {
    if p.is_empty() || Path::new(p).is_absolute() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected a non-empty relative path, got {p:?}"),
        });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [spk, utt, rel] = fields[..] else {
            return Err(parse_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let speaker_id = spk.parse().map_err(|_| parse_err(format!("bad speaker id {spk:?}")))?;
        let utterance_id = utt.parse().map_err(|_| parse_err(format!("bad utterance id {utt:?}")))?;
        check_relative(path, i + 1, rel)?;
        out.push(ManifestEntry {
            speaker_id,
            utterance_id,
            path: rel.to_string(),
        });
    }
    Ok(out)
}

pub fn write_trials(path: &Path, trials: &TrialList<String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in &trials.trials {
        writeln!(w, "{} {} {}", t.label(), t.a, t.b).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<TrialList<String>> {
    let text = read_text(path)?;
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(' ').collect();
        let [label, a, b] = fields[..] else {
            return Err(parse_err(format!("expected 3 space-separated fields, got {}", fields.len())));
        };
        let target = match label {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
        };
        check_relative(path, i + 1, a)?;
        check_relative(path, i + 1, b)?;
        if a == b {
            return Err(parse_err(format!("trial pairs {a} with itself")));
        }
        trials.push(Trial {
            target,
            a: a.to_string(),
            b: b.to_string(),
        });
    }
    Ok(TrialList { trials })
}

/// Loads every utterance listed in `<dir>/manifest.tsv`, in manifest order.
pub fn load_corpus<M: BatchMap>(dir: &Path, map: &M) -> Result<Vec<Utterance>> {
    let entries = read_manifest(&dir.join(MANIFEST_FILE))?;
    map.map(entries, |e| {
        let (samples, sample_rate) = read_wav(&dir.join(&e.path))?;
        Ok(Utterance {
            speaker_id: e.speaker_id,
            utterance_id: e.utterance_id,
            samples,
            sample_rate,
        })
    })
    .into_iter()
    .collect()
}

/// Relative path of a synthesized utterance inside a corpus directory.
pub fn utterance_path(speaker_id: u32, utterance_id: u32) -> String {
    format!("wav/spk{speaker_id:03}_utt{utterance_id:03}.wav")
}

/// Writes utterances (at the corpus sample rate) plus the manifest.
pub fn write_corpus<M: BatchMap>(dir: &Path, utterances: &[Utterance], map: &M) -> Result<Vec<ManifestEntry>> {
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let entries: Vec<ManifestEntry> = utterances
        .iter()
        .map(|u| ManifestEntry {
            speaker_id: u.speaker_id,
            utterance_id: u.utterance_id,
            path: utterance_path(u.speaker_id, u.utterance_id),
        })
        .collect();
    let jobs: Vec<(&Utterance, &ManifestEntry)> = utterances.iter().zip(&entries).collect();
    map.map(jobs, |(u, e)| write_wav(&dir.join(&e.path), &u.samples, u.sample_rate))
        .into_iter()
        .collect::<Result<()>>()?;
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let bytes = encode_checkpoint(params, CheckpointDtype::F64);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// `<path><suffix>`, e.g. `model.wsic` + `.json`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
