//! Pipeline stages shared by the command-line tool and the test suites.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsi_core::corpus::{generate_corpus_custom, make_trials, Corpus, SynthesisConfig, Trial, TrialList, Utterance};
use wsi_core::dsp::Featurizer;
use wsi_core::eval::{cosine_similarity, evaluate, score_trials, EvalReport, ScoredTrials};
use wsi_core::model::{embed, EmbeddingVector, ModelConfig, ModelParams};
use wsi_core::par::BatchMap;
use wsi_core::train::{GradCheckConfig, GradCheckReport, LossRecord, TrainConfig, TrainState, Trainer};

use crate::config::{sidecar_path, Preset, RunConfig};
use crate::error::{Error, Result};
use crate::fft::RustFftPower;
use crate::io::{self, utterance_path, with_suffix, MANIFEST_FILE, TRIALS_FILE};

pub const SYNTH_FILE: &str = "synth.json";

pub fn featurizer(cfg: &RunConfig) -> Result<Featurizer<RustFftPower>> {
    Ok(Featurizer::new(cfg.features, RustFftPower::new(cfg.features.n_fft))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub speakers: usize,
    pub utts: u32,
    /// Id of the first utterance; disjoint id ranges give held-out recordings.
    pub first_utt: u32,
    pub duration_s: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub trial_seed: u64,
    pub synthesis: SynthesisConfig,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            speakers: 20,
            utts: 10,
            first_utt: 0,
            duration_s: 4.0,
            n_target: 500,
            n_nontarget: 500,
            trial_seed: 0,
            synthesis: SynthesisConfig::default(),
        }
    }
}

impl SynthSpec {
    pub fn corpus<M: BatchMap>(&self, map: &M) -> Result<Corpus> {
        if self.utts < 2 {
            return Err(Error::usage(format!("need at least 2 utterances per speaker, got {}", self.utts)));
        }
        let ids = self.first_utt..self.first_utt.checked_add(self.utts).ok_or_else(|| Error::usage("utterance ids overflow"))?;
        Ok(generate_corpus_custom(
            self.seed,
            self.speakers,
            ids,
            self.duration_s,
            &self.synthesis,
            map,
        )?)
    }
}

/// Trial list over corpus-relative paths.
pub fn path_trials(trials: &TrialList) -> TrialList<String> {
    TrialList {
        trials: trials
            .trials
            .iter()
            .map(|t| Trial {
                target: t.target,
                a: utterance_path(t.a.speaker_id, t.a.utterance_id),
                b: utterance_path(t.b.speaker_id, t.b.utterance_id),
            })
            .collect(),
    }
}

/// Writes audio, manifest, trial list and the generating spec into `dir`.
pub fn synth<M: BatchMap>(dir: &Path, spec: &SynthSpec, force: bool, map: &M) -> Result<Corpus> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() && !force {
        return Err(Error::usage(format!(
            "{} already exists; pass --force to overwrite",
            manifest.display()
        )));
    }
    let corpus = spec.corpus(map)?;
    let trials = if spec.n_target + spec.n_nontarget > 0 {
        Some(make_trials(&corpus, spec.trial_seed, spec.n_target, spec.n_nontarget)?)
    } else {
        None
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_corpus(dir, &corpus.utterances, map)?;
    if let Some(t) = trials {
        io::write_trials(&dir.join(TRIALS_FILE), &path_trials(&t))?;
    }
    io::write_json(&dir.join(SYNTH_FILE), spec)?;
    Ok(corpus)
}

pub struct FitOutcome {
    pub params: ModelParams,
    pub state: TrainState,
}

/// Per-epoch checkpoint written next to the final one.
pub fn epoch_checkpoint(checkpoint: &Path, epoch: u32) -> PathBuf {
    with_suffix(checkpoint, &format!(".epoch{epoch}"))
}

/// Trains from a seeded initialization for `cfg.train.epochs` epochs.
///
/// The resolved config goes to `<checkpoint>.json` before any work, the log
/// is appended and flushed after every step, and a checkpoint is written at
/// the end of each epoch. With zero epochs the initialization is saved and
/// the log is left empty.
pub fn fit<M: BatchMap>(
    cfg: &RunConfig,
    utterances: &[Utterance],
    checkpoint: &Path,
    log: &Path,
    map: &M,
    on_step: &mut dyn FnMut(&LossRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let f = featurizer(cfg)?;
    let trainer = Trainer::new(&f, cfg.augment, cfg.loss, cfg.train, map)?;
    let mut params = ModelParams::init(cfg.model, cfg.train.seed)?;
    let mut state = TrainState::new(&params);
    io::write_json(&sidecar_path(checkpoint), cfg)?;
    let mut log_file = fs::File::create(log).map_err(|e| Error::io(log, e))?;
    for _ in 0..cfg.train.epochs {
        let mut write_err = None;
        let res = trainer.run_epoch(&mut params, &mut state, utterances, &mut |r| {
            if write_err.is_none() {
                write_err = writeln!(log_file, "{}", r.log_line()).and_then(|_| log_file.flush()).err();
            }
            on_step(r);
        });
        if let Some(e) = write_err {
            return Err(Error::io(log, e));
        }
        res?;
        io::save_checkpoint(&epoch_checkpoint(checkpoint, state.epoch), &params)?;
    }
    io::save_checkpoint(checkpoint, &params)?;
    Ok(FitOutcome { params, state })
}

/// Config for inference with a stored checkpoint.
///
/// An explicit config file or preset wins; otherwise the config recorded by
/// the training run is used, falling back to the paper preset. The model
/// section is always taken from the checkpoint itself.
pub fn inference_config(config: Option<&Path>, preset: Option<Preset>, checkpoint: &Path, model: ModelConfig) -> Result<RunConfig> {
    let sidecar = sidecar_path(checkpoint);
    let mut cfg = match (config, preset) {
        (Some(path), p) => RunConfig::load(path, p.unwrap_or_default())?,
        (None, Some(p)) => RunConfig::preset(p),
        (None, None) if sidecar.exists() => io::read_json(&sidecar)?,
        (None, None) => RunConfig::default(),
    };
    cfg.model = model;
    cfg.validate()?;
    Ok(cfg)
}

pub fn embed_file(params: &ModelParams, f: &Featurizer<RustFftPower>, path: &Path) -> Result<EmbeddingVector> {
    let (samples, rate) = io::read_wav(path)?;
    Ok(embed(&f.log_mel(&samples, rate)?, params)?)
}

/// Scores a trial list whose paths are relative to `root`.
pub fn score_trial_list<M: BatchMap>(
    params: &ModelParams,
    f: &Featurizer<RustFftPower>,
    trials: &TrialList<String>,
    root: &Path,
    map: &M,
) -> Result<ScoredTrials> {
    for t in &trials.trials {
        for p in [&t.a, &t.b] {
            let full = root.join(p);
            if !full.is_file() {
                return Err(Error::usage(format!("trial audio {} not found", full.display())));
            }
        }
    }
    Ok(score_trials(
        trials,
        |p: &String| {
            let (samples, rate) = io::read_wav(&root.join(p)).map_err(|e| wsi_core::Error::InvalidArgument(e.to_string()))?;
            embed(&f.log_mel(&samples, rate)?, params)
        },
        map,
    )?)
}

/// Evaluation report plus the inputs it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    pub checkpoint: PathBuf,
    pub trials: PathBuf,
    pub config: RunConfig,
}

impl EvalOutput {
    /// `EER=<percent>% AUC=<value>`.
    pub fn summary(&self) -> String {
        format!("EER={:.2}% AUC={:.4}", 100.0 * self.report.eer, self.report.auc)
    }
}

pub fn evaluate_checkpoint<M: BatchMap>(
    cfg: &RunConfig,
    params: &ModelParams,
    checkpoint: &Path,
    trials_path: &Path,
    root: &Path,
    map: &M,
) -> Result<EvalOutput> {
    let trials = io::read_trials(trials_path)?;
    let f = featurizer(cfg)?;
    let scored = score_trial_list(params, &f, &trials, root, map)?;
    Ok(EvalOutput {
        report: evaluate(&scored)?,
        checkpoint: checkpoint.to_path_buf(),
        trials: trials_path.to_path_buf(),
        config: cfg.clone(),
    })
}

/// Tab-separated `threshold fpr fnr tpr` rows with a header line.
pub fn roc_tsv(report: &EvalReport) -> String {
    let mut s = String::from("threshold\tfpr\tfnr\ttpr\n");
    for [t, fpr, fnr, tpr] in &report.roc {
        s.push_str(&format!("{t:.17e}\t{fpr:.17e}\t{fnr:.17e}\t{tpr:.17e}\n"));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub threshold: f64,
    pub accept: bool,
}

/// Cosine score of two recordings; accepted iff `score >= threshold`.
pub fn verify(params: &ModelParams, f: &Featurizer<RustFftPower>, a: &Path, b: &Path, threshold: f64) -> Result<Verdict> {
    let za = embed_file(params, f, a)?;
    let zb = embed_file(params, f, b)?;
    let score = cosine_similarity(za.as_slice(), zb.as_slice())?;
    Ok(Verdict {
        score,
        threshold,
        accept: score >= threshold,
    })
}

/// Gradient check on the micro model at a briefly trained parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSpec {
    pub check: GradCheckConfig,
    pub corpus_seed: u64,
    pub speakers: usize,
    pub utts: u32,
    pub duration_s: f64,
    /// Training epochs (at the micro learning rate) before checking.
    pub warmup_epochs: u32,
    pub train: TrainConfig,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            check: GradCheckConfig::default(),
            corpus_seed: 1,
            speakers: 8,
            utts: 4,
            duration_s: 4.0,
            warmup_epochs: 2,
            train: TrainConfig {
                batch_size: 8,
                speakers_per_batch: 4,
                utts_per_speaker: 2,
                learning_rate: 1e-3,
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

pub fn grad_check_micro<M: BatchMap>(spec: &GradCheckSpec, map: &M) -> Result<GradCheckReport> {
    let cfg = RunConfig {
        train: spec.train,
        ..RunConfig::preset(Preset::Micro)
    };
    cfg.validate()?;
    let corpus = SynthSpec {
        seed: spec.corpus_seed,
        speakers: spec.speakers,
        utts: spec.utts,
        ..SynthSpec::default()
    }
    .corpus(map)?;
    let f = featurizer(&cfg)?;
    let trainer = Trainer::new(&f, cfg.augment, cfg.loss, cfg.train, map)?;
    let mut params = ModelParams::init(cfg.model, cfg.train.seed)?;
    let mut state = TrainState::new(&params);
    for _ in 0..spec.warmup_epochs {
        trainer.run_epoch(&mut params, &mut state, &corpus.utterances, &mut |_| {})?;
    }
    Ok(trainer.grad_check(&params, &corpus.utterances, &spec.check)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub ssl_weight: f64,
    pub eer: f64,
    pub auc: f64,
}

/// EERs of otherwise identical runs that differ only in the NT-Xent weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
}

impl AblationReport {
    pub fn text(&self) -> String {
        let mut s = String::from("ssl_weight\teer\tauc\n");
        for a in &self.arms {
            s.push_str(&format!("{}\t{:.4}\t{:.4}\n", a.ssl_weight, a.eer, a.auc));
        }
        s
    }
}
