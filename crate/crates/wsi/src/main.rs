use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsi::config::{Preset, RunConfig};
use wsi::io::{self, with_suffix};
use wsi::par::Parallel;
use wsi::run::{self, GradCheckSpec, SynthSpec};
use wsi::{Error, Result};
use wsi_core::corpus::SynthesisConfig;
use wsi_core::train::{CheckStatus, GradCheckConfig};

/// Speaker embeddings from a Whisper-style encoder trained with batch-hard
/// triplet and NT-Xent losses.
///
/// Exit status: 0 success (or accept), 1 reject (verify), 2 usage or
/// configuration error, 3 numeric failure. WSI_THREADS caps worker threads
/// (0 or unset: one per core).
#[derive(Parser)]
#[command(name = "wsi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus with a trial list
    Synth(SynthArgs),
    /// Train from a seeded initialization; writes per-epoch checkpoints and a step log
    Train(TrainArgs),
    /// Print the embedding of each WAV file as a JSON array
    Embed(EmbedArgs),
    /// Score a trial list and report EER and AUC
    Eval(EvalArgs),
    /// Decide whether two recordings share a speaker
    Verify(VerifyArgs),
    /// Compare analytic gradients of the joint loss with finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (manifest.tsv, trials.txt, synth.json, wav/)
    #[arg(long)]
    out: PathBuf,
    /// Corpus seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of speakers (2..=64)
    #[arg(long, default_value_t = 20)]
    speakers: usize,
    /// Utterances per speaker
    #[arg(long, default_value_t = 10)]
    utts: u32,
    /// First utterance id; disjoint ranges give held-out recordings of the same voices
    #[arg(long, default_value_t = 0)]
    first_utt: u32,
    /// Utterance length in seconds
    #[arg(long, default_value_t = 4.0)]
    duration: f64,
    /// Same-speaker trials (0 together with --n-nontarget 0 skips trials.txt)
    #[arg(long, default_value_t = 500)]
    n_target: usize,
    /// Different-speaker trials
    #[arg(long, default_value_t = 500)]
    n_nontarget: usize,
    /// Trial sampling seed
    #[arg(long, default_value_t = 0)]
    trial_seed: u64,
    /// JSON file overriding per-utterance variability
    #[arg(long)]
    synthesis: Option<PathBuf>,
    /// Overwrite an existing corpus
    #[arg(long)]
    force: bool,
}

/// Config sources shared by every command that builds a model.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run config (sections: features, model, augment, loss, train, synthesis, paths); omitted fields keep the preset's values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset [default: paper; commands reading a checkpoint fall back to the config recorded at training time]
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let preset = self.preset.unwrap_or_default();
        match &self.config {
            Some(p) => RunConfig::load(p, preset),
            None => Ok(RunConfig::preset(preset)),
        }
    }

    fn for_checkpoint(&self, checkpoint: &Path) -> Result<(RunConfig, wsi_core::model::ModelParams)> {
        let params = io::load_checkpoint(checkpoint)?;
        let cfg = run::inference_config(self.config.as_deref(), self.preset, checkpoint, params.config)?;
        Ok((cfg, params))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Corpus directory [default: paths.corpus]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Final checkpoint; epoch e is also saved as <checkpoint>.epoch<e> and the resolved config as <checkpoint>.json [default: paths.checkpoint]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Step log [default: <checkpoint>.log]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Run seed: initialization, batching and augmentation [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs E [default: 3]
    #[arg(long)]
    epochs: Option<u32>,
    /// Adam learning rate η [default: 1e-5; micro preset: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size B = P·K [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Speakers per batch P [default: 4]
    #[arg(long)]
    speakers_per_batch: Option<usize>,
    /// Utterances per speaker per batch K [default: 4]
    #[arg(long)]
    utts_per_speaker: Option<usize>,
    /// Adam β1 [default: 0.9]
    #[arg(long)]
    adam_beta1: Option<f64>,
    /// Adam β2 [default: 0.999]
    #[arg(long)]
    adam_beta2: Option<f64>,
    /// Adam ε [default: 1e-8]
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Global gradient-norm cap [default: off]
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Triplet margin m [default: 1.0]
    #[arg(long)]
    margin: Option<f64>,
    /// NT-Xent weight λ; 0 trains with the triplet loss alone [default: 1.0]
    #[arg(long)]
    lambda: Option<f64>,
    /// NT-Xent temperature τ [default: 0.5]
    #[arg(long)]
    temperature: Option<f64>,
    /// Input frames after padding or truncation [default: 3000; micro preset: 300]
    #[arg(long)]
    fixed_frames: Option<usize>,
    /// Embedding dimension [default: 256]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Noise augmentation SNR range in dB, as LOW,HIGH [default: 10,30]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    snr_db: Option<Vec<f64>>,
    /// Time-stretch rate range, as LOW,HIGH [default: 0.8,1.25]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    stretch: Option<Vec<f64>>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = self.config.resolve()?;
        let t = &mut c.train;
        set(&mut t.seed, self.seed);
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.speakers_per_batch, self.speakers_per_batch);
        set(&mut t.utts_per_speaker, self.utts_per_speaker);
        set(&mut t.adam_beta1, self.adam_beta1);
        set(&mut t.adam_beta2, self.adam_beta2);
        set(&mut t.adam_eps, self.adam_eps);
        if self.grad_clip.is_some() {
            t.grad_clip = self.grad_clip;
        }
        set(&mut c.loss.margin, self.margin);
        set(&mut c.loss.ssl_weight, self.lambda);
        set(&mut c.loss.temperature, self.temperature);
        if let Some(n) = self.fixed_frames {
            c.features.fixed_frames = n;
            c.model.max_frames = c.model.max_frames.max(n.div_ceil(2));
        }
        set(&mut c.model.embed_dim, self.embed_dim);
        if let Some(v) = &self.snr_db {
            c.augment.snr_db_range = [v[0], v[1]];
        }
        if let Some(v) = &self.stretch {
            c.augment.stretch_range = [v[0], v[1]];
        }
        if self.corpus.is_some() {
            c.paths.corpus = self.corpus.clone();
        }
        if self.checkpoint.is_some() {
            c.paths.checkpoint = self.checkpoint.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mono 16 kHz 16-bit WAV files
    #[arg(required = true)]
    wavs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trial list (`<label> <path_a> <path_b>` per line)
    #[arg(long)]
    trials: PathBuf,
    /// Directory the trial paths are relative to [default: the trial list's directory]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON report [default: <checkpoint>.report.json]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the ROC as tab-separated values
    #[arg(long)]
    roc: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Accept iff cosine score >= threshold
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    wav_a: PathBuf,
    wav_b: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Coordinates checked per trainable tensor
    #[arg(long, default_value_t = 20)]
    n_coords: usize,
    /// Maximum relative error |a−n| / max(|a|, |n|, 1e-6)
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Required distance of the batch from any hinge or mining tie
    #[arg(long, default_value_t = 1e-3)]
    boundary: f64,
    /// Coordinate sampling seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batches tried before giving up on the boundary requirement
    #[arg(long, default_value_t = 50)]
    max_batch_tries: usize,
    /// Training epochs (micro model, η = 1e-3, B = 8 as 4×2) before checking
    #[arg(long, default_value_t = 2)]
    warmup_epochs: u32,
    /// Seed of the 8-speaker × 4-utterance check corpus
    #[arg(long, default_value_t = 1)]
    corpus_seed: u64,
    /// Fault injection: negate this tensor's analytic gradient
    #[arg(long)]
    negate: Option<String>,
    /// Write the full report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

fn synth(a: &SynthArgs, map: &Parallel) -> Result<ExitCode> {
    let synthesis: SynthesisConfig = match &a.synthesis {
        Some(p) => io::read_json(p)?,
        None => SynthesisConfig::default(),
    };
    let spec = SynthSpec {
        seed: a.seed,
        speakers: a.speakers,
        utts: a.utts,
        first_utt: a.first_utt,
        duration_s: a.duration,
        n_target: a.n_target,
        n_nontarget: a.n_nontarget,
        trial_seed: a.trial_seed,
        synthesis,
    };
    let corpus = run::synth(&a.out, &spec, a.force, map)?;
    println!(
        "wrote {} utterances of {} speakers to {}",
        corpus.utterances.len(),
        corpus.n_speakers(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(a: &TrainArgs, map: &Parallel) -> Result<ExitCode> {
    let cfg = a.resolve()?;
    let corpus = cfg.paths.corpus.clone().ok_or_else(|| Error::usage("--corpus is required"))?;
    let checkpoint = cfg
        .paths
        .checkpoint
        .clone()
        .ok_or_else(|| Error::usage("--checkpoint is required"))?;
    let log = a.log.clone().unwrap_or_else(|| with_suffix(&checkpoint, ".log"));
    let utterances = io::load_corpus(&corpus, map)?;
    let out = run::fit(&cfg, &utterances, &checkpoint, &log, map, &mut |r| {
        eprintln!("{}", r.log_line());
    })?;
    match out.state.history.last() {
        Some(r) => println!(
            "trained {} steps over {} epochs: total={:.6} triplet={:.6} ntxent={:.6}",
            out.state.step, out.state.epoch, r.total, r.triplet, r.ntxent
        ),
        None => println!("no training steps; wrote the initialization"),
    }
    println!("checkpoint {}", checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn embed(a: &EmbedArgs) -> Result<ExitCode> {
    let (cfg, params) = a.config.for_checkpoint(&a.checkpoint)?;
    let f = run::featurizer(&cfg)?;
    let mut out = std::io::stdout().lock();
    for w in &a.wavs {
        let z = run::embed_file(&params, &f, w)?;
        let line = serde_json::to_string(&z.0).expect("floats serialize");
        match writeln!(out, "{line}") {
            Ok(()) => {}
            // a closed reader (`| head`) is not an error
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
            Err(e) => return Err(Error::io(Path::new("<stdout>"), e)),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(a: &EvalArgs, map: &Parallel) -> Result<ExitCode> {
    let (cfg, params) = a.config.for_checkpoint(&a.checkpoint)?;
    let root = match &a.corpus {
        Some(d) => d.clone(),
        None => a.trials.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let out = run::evaluate_checkpoint(&cfg, &params, &a.checkpoint, &a.trials, &root, map)?;
    let report = a
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&a.checkpoint, ".report.json"));
    io::write_json(&report, &out)?;
    if let Some(p) = &a.roc {
        std::fs::write(p, run::roc_tsv(&out.report)).map_err(|e| Error::io(p, e))?;
    }
    println!("{}", out.summary());
    Ok(ExitCode::SUCCESS)
}

fn verify(a: &VerifyArgs) -> Result<ExitCode> {
    let (cfg, params) = a.config.for_checkpoint(&a.checkpoint)?;
    let f = run::featurizer(&cfg)?;
    let v = run::verify(&params, &f, &a.wav_a, &a.wav_b, a.threshold)?;
    let decision = if v.accept { "accept" } else { "reject" };
    println!("score={:.17e} threshold={} decision={decision}", v.score, v.threshold);
    Ok(if v.accept { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn gradcheck(a: &GradcheckArgs, map: &Parallel) -> Result<ExitCode> {
    let spec = GradCheckSpec {
        check: GradCheckConfig {
            n_coords: a.n_coords,
            tolerance: a.tolerance,
            epsilon: a.epsilon,
            boundary: a.boundary,
            seed: a.seed,
            max_batch_tries: a.max_batch_tries,
            negate_tensor: a.negate.clone(),
        },
        corpus_seed: a.corpus_seed,
        warmup_epochs: a.warmup_epochs,
        ..GradCheckSpec::default()
    };
    let rep = run::grad_check_micro(&spec, map)?;
    for t in &rep.tensors {
        match t.status {
            CheckStatus::Skipped => println!("{:<48} skipped", t.name),
            CheckStatus::Checked => println!(
                "{:<48} {} coords={} resampled={} max_rel_error={:.3e}",
                t.name,
                if t.passed(rep.tolerance) { "ok  " } else { "FAIL" },
                t.n_coords,
                t.n_resampled,
                t.max_rel_error
            ),
        }
    }
    if let Some(p) = &a.report {
        io::write_json(p, &rep)?;
    }
    let verdict = if rep.passed { "PASS" } else { "FAIL" };
    println!(
        "{verdict} max_rel_error={:.3e} tolerance={:e} boundary_clearance={:.3e} batches_tried={}",
        rep.max_rel_error, rep.tolerance, rep.boundary_clearance, rep.batch_attempts
    );
    Ok(if rep.passed { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let map = Parallel::from_env();
    let res = match &cli.command {
        Command::Synth(a) => synth(a, &map),
        Command::Train(a) => train(a, &map),
        Command::Embed(a) => embed(a),
        Command::Eval(a) => eval(a, &map),
        Command::Verify(a) => verify(a),
        Command::Gradcheck(a) => gradcheck(a, &map),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
