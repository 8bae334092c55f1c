//! Training loop: P×K batch sampling, three-view featurization, joint loss,
//! reverse-mode gradients, Adam, and a finite-difference gradient check.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::corpus::{Utterance, UtteranceKey};
use crate::dsp::{Featurizer, LogMelSpectrogram, PowerSpectrum};
use crate::error::{Error, Result};
use crate::losses::{joint_loss, joint_with_grad, mine_batch_hard, triplet_boundary_distance, JointLoss, LossConfig};
use crate::model::{self, backward, forward, is_trainable, resume, ModelParams, Stage};
use crate::par::BatchMap;
use crate::rng;

const TAG_BATCHES: u64 = 11;
const TAG_AUGMENT: u64 = 12;
const TAG_GRADCHECK: u64 = 13;

/// Views per backward work unit; fixed so gradient summation order does
/// not depend on the number of threads.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Speakers per batch (P).
    pub speakers_per_batch: usize,
    /// Utterances per speaker per batch (K).
    pub utts_per_speaker: usize,
    /// Global L2 gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 3,
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            speakers_per_batch: 4,
            utts_per_speaker: 4,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 {
            return Err(Error::config("batch_size must be >= 4"));
        }
        if self.speakers_per_batch < 2 || self.utts_per_speaker < 2 {
            return Err(Error::config(
                "speakers_per_batch and utts_per_speaker must both be >= 2",
            ));
        }
        if self.speakers_per_batch * self.utts_per_speaker != self.batch_size {
            return Err(Error::config(format!(
                "speakers_per_batch × utts_per_speaker = {} × {} does not equal batch_size {}",
                self.speakers_per_batch, self.utts_per_speaker, self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be > 0"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    /// Index into the utterance slice the batch was drawn from.
    pub index: usize,
    pub key: UtteranceKey,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn labels(&self) -> Vec<u32> {
        self.items.iter().map(|i| i.label).collect()
    }
}

/// One epoch of P×K batches.
///
/// Each speaker's utterances are shuffled and cut into chunks of K; batches
/// repeatedly take P speakers with the most chunks left (random priority
/// among equals) until fewer than P speakers remain. No utterance repeats
/// within an epoch.
pub fn make_batches(utterances: &[Utterance], cfg: &TrainConfig, epoch: u32) -> Result<Vec<Batch>> {
    cfg.validate()?;
    let (p, k) = (cfg.speakers_per_batch, cfg.utts_per_speaker);
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, u) in utterances.iter().enumerate() {
        groups.entry(u.speaker_id).or_default().push(i);
    }
    let eligible = groups.values().filter(|v| v.len() >= k).count();
    if eligible < p {
        return Err(Error::config(format!(
            "{p} speakers per batch requested but only {eligible} speakers have >= {k} utterances"
        )));
    }
    struct Pool {
        speaker: u32,
        priority: u64,
        chunks: Vec<Vec<usize>>,
    }
    let mut pools: Vec<Pool> = groups
        .into_iter()
        .map(|(speaker, mut idx)| {
            let mut r = rng::substream(cfg.seed, &[TAG_BATCHES, epoch as u64, speaker as u64]);
            idx.shuffle(&mut r);
            let chunks = idx.chunks_exact(k).map(<[usize]>::to_vec).collect();
            Pool {
                speaker,
                priority: rand::Rng::random(&mut r),
                chunks,
            }
        })
        .collect();

    let mut batches = Vec::new();
    loop {
        let mut order: Vec<usize> = (0..pools.len()).filter(|&i| !pools[i].chunks.is_empty()).collect();
        if order.len() < p {
            break;
        }
        order.sort_by_key(|&i| (core::cmp::Reverse(pools[i].chunks.len()), pools[i].priority));
        let mut items = Vec::with_capacity(p * k);
        for &i in &order[..p] {
            let chunk = pools[i].chunks.pop().expect("non-empty");
            for idx in chunk {
                items.push(BatchItem {
                    index: idx,
                    key: utterances[idx].key(),
                    label: pools[i].speaker,
                });
            }
            // rotate priorities so the same speakers do not always pair up
            pools[i].priority = rng::derive_seed(pools[i].priority, &[batches.len() as u64]);
        }
        batches.push(Batch { items });
    }
    let mut r = rng::substream(cfg.seed, &[TAG_BATCHES, epoch as u64, u64::MAX]);
    batches.shuffle(&mut r);
    Ok(batches)
}

/// Features of the clean, noise and stretch views of one batch.
#[derive(Debug, Clone)]
pub struct Views {
    pub clean: Vec<LogMelSpectrogram>,
    pub noise: Vec<LogMelSpectrogram>,
    pub stretch: Vec<LogMelSpectrogram>,
    pub labels: Vec<u32>,
}

impl Views {
    fn all(&self) -> impl Iterator<Item = &LogMelSpectrogram> {
        self.clean.iter().chain(&self.noise).chain(&self.stretch)
    }

    fn batch_size(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u32,
    pub total: f64,
    pub triplet: f64,
    pub ntxent: f64,
}

impl LossRecord {
    /// `step=<n> epoch=<e> total=<f> triplet=<f> ntxent=<f>`, 17 significant digits.
    pub fn log_line(&self) -> String {
        format!(
            "step={} epoch={} total={:.16e} triplet={:.16e} ntxent={:.16e}",
            self.step, self.epoch, self.total, self.triplet, self.ntxent
        )
    }
}

/// Optimizer state. Steps and epochs count from 1 once work has been done.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u32,
    pub m: ModelParams,
    pub v: ModelParams,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(params: &ModelParams) -> Self {
        TrainState {
            step: 0,
            epoch: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            history: Vec::new(),
        }
    }
}

fn add_into(dst: &mut ModelParams, src: &ModelParams) {
    for ((_, d), (_, s)) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        for (a, b) in d.data.iter_mut().zip(&s.data) {
            *a += b;
        }
    }
}

/// Everything a step needs besides parameters and state.
pub struct Trainer<'a, P: PowerSpectrum, M: BatchMap> {
    pub featurizer: &'a Featurizer<P>,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub map: &'a M,
}

impl<'a, P: PowerSpectrum, M: BatchMap> Trainer<'a, P, M> {
    pub fn new(
        featurizer: &'a Featurizer<P>,
        augment: AugmentConfig,
        loss: LossConfig,
        train: TrainConfig,
        map: &'a M,
    ) -> Result<Self> {
        augment.validate()?;
        loss.validate()?;
        train.validate()?;
        Ok(Trainer {
            featurizer,
            augment,
            loss,
            train,
            map,
        })
    }

    /// Augments and featurizes every batch member. Augmentation streams are
    /// keyed by `(seed, epoch, step, member, view)`.
    pub fn prepare(&self, utterances: &[Utterance], batch: &Batch, epoch: u32, step: u64) -> Result<Views> {
        let jobs: Vec<(usize, &Utterance)> = batch
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| {
                utterances
                    .get(it.index)
                    .map(|u| (i, u))
                    .ok_or_else(|| Error::arg(format!("batch refers to missing utterance {}", it.index)))
            })
            .collect::<Result<_>>()?;
        let seed = rng::derive_seed(self.train.seed, &[self.augment.seed]);
        let feats = self.map.map(jobs, |(i, u)| -> Result<[LogMelSpectrogram; 3]> {
            let path = |view: u64| [TAG_AUGMENT, epoch as u64, step, i as u64, view];
            let noisy = augment::noise_augment(&u.samples, &self.augment, &mut rng::substream(seed, &path(0)))?;
            let stretched = augment::time_stretch(&u.samples, &self.augment, &mut rng::substream(seed, &path(1)))?;
            Ok([
                self.featurizer.log_mel(&u.samples, u.sample_rate)?,
                self.featurizer.log_mel(&noisy, u.sample_rate)?,
                self.featurizer.log_mel(&stretched, u.sample_rate)?,
            ])
        });
        let mut views = Views {
            clean: Vec::new(),
            noise: Vec::new(),
            stretch: Vec::new(),
            labels: batch.labels(),
        };
        for f in feats {
            let [c, n, s] = f?;
            views.clean.push(c);
            views.noise.push(n);
            views.stretch.push(s);
        }
        Ok(views)
    }

    fn embed_all(&self, params: &ModelParams, views: &Views) -> Result<Vec<Vec<f64>>> {
        self.map
            .map(views.all().collect(), |x| model::embed(x, params).map(|e| e.0))
            .into_iter()
            .collect()
    }

    /// Joint loss of the current parameters on prepared views.
    pub fn loss(&self, params: &ModelParams, views: &Views) -> Result<JointLoss> {
        let z = self.embed_all(params, views)?;
        let b = views.batch_size();
        joint_loss(&z[..b], &z[b..2 * b], &z[2 * b..], &views.labels, &self.loss)
    }

    /// Joint loss and its gradient with respect to every parameter.
    ///
    /// Embeddings are computed first; the backward pass then recomputes each
    /// forward trace so that only a few traces are alive at once.
    pub fn gradients(&self, params: &ModelParams, views: &Views) -> Result<(JointLoss, ModelParams)> {
        let z = self.embed_all(params, views)?;
        let b = views.batch_size();
        let (loss, g) = joint_with_grad(&z[..b], &z[b..2 * b], &z[2 * b..], &views.labels, &self.loss)?;
        for (name, v) in [("total", loss.total), ("triplet", loss.triplet), ("ntxent", loss.ntxent)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} loss")));
            }
        }
        let inputs: Vec<&LogMelSpectrogram> = views.all().collect();
        let dz: Vec<&Vec<f64>> = g.clean.iter().chain(&g.noise).chain(&g.stretch).collect();
        let jobs: Vec<Vec<(&LogMelSpectrogram, &Vec<f64>)>> = inputs
            .into_iter()
            .zip(dz)
            .collect::<Vec<_>>()
            .chunks(GRAD_CHUNK)
            .map(<[_]>::to_vec)
            .collect();
        let partial = self.map.map(jobs, |chunk| -> Result<ModelParams> {
            let mut acc = params.zeros_like();
            for (x, dz) in chunk {
                let trace = forward(x, params)?;
                backward(&trace, params, dz, &mut acc);
            }
            Ok(acc)
        });
        let mut grads = params.zeros_like();
        for p in partial {
            add_into(&mut grads, &p?);
        }
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        Ok((loss, grads))
    }

    /// Adam with bias correction on trainable tensors.
    pub fn apply(&self, params: &mut ModelParams, state: &mut TrainState, grads: &ModelParams) -> Result<()> {
        let c = &self.train;
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - c.adam_beta1.powi(t);
        let bc2 = 1.0 - c.adam_beta2.powi(t);
        let scale = match c.grad_clip {
            Some(max) => {
                let norm = grads
                    .tensors()
                    .into_iter()
                    .filter(|(n, _)| is_trainable(n))
                    .flat_map(|(_, g)| g.data.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
        for (((name, p), (_, g)), ((_, m), (_, v))) in tensors {
            if !is_trainable(&name) {
                continue;
            }
            for i in 0..p.data.len() {
                let gi = g.data[i] * scale;
                m.data[i] = c.adam_beta1 * m.data[i] + (1.0 - c.adam_beta1) * gi;
                v.data[i] = c.adam_beta2 * v.data[i] + (1.0 - c.adam_beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.adam_eps);
            }
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter {name} after update")));
        }
        Ok(())
    }

    /// One optimization step on a batch; appends to and returns the loss record.
    pub fn step(
        &self,
        params: &mut ModelParams,
        state: &mut TrainState,
        utterances: &[Utterance],
        batch: &Batch,
        epoch: u32,
    ) -> Result<LossRecord> {
        let views = self.prepare(utterances, batch, epoch, state.step + 1)?;
        let (loss, grads) = self.gradients(params, &views)?;
        self.apply(params, state, &grads)?;
        let rec = LossRecord {
            step: state.step,
            epoch,
            total: loss.total,
            triplet: loss.triplet,
            ntxent: loss.ntxent,
        };
        state.history.push(rec);
        Ok(rec)
    }

    /// Runs the next epoch (`state.epoch + 1`), reporting each step.
    pub fn run_epoch(
        &self,
        params: &mut ModelParams,
        state: &mut TrainState,
        utterances: &[Utterance],
        on_step: &mut dyn FnMut(&LossRecord),
    ) -> Result<()> {
        let epoch = state.epoch + 1;
        for batch in make_batches(utterances, &self.train, epoch)? {
            let rec = self.step(params, state, utterances, &batch, epoch)?;
            on_step(&rec);
        }
        state.epoch = epoch;
        Ok(())
    }

    /// Finite-difference check of [`Trainer::gradients`].
    ///
    /// Batches are drawn from successive epochs until one lies at least
    /// `cfg.boundary` away from every hinge and mining tie; a coordinate is
    /// redrawn when its ±ε evaluations fall in different piecewise regimes.
    pub fn grad_check(
        &self,
        params: &ModelParams,
        utterances: &[Utterance],
        cfg: &GradCheckConfig,
    ) -> Result<GradCheckReport> {
        let mut attempts = 0;
        let mut chosen = None;
        'search: for epoch in 1..=cfg.max_batch_tries as u32 {
            for (s, batch) in make_batches(utterances, &self.train, epoch)?.into_iter().enumerate() {
                attempts += 1;
                let views = self.prepare(utterances, &batch, epoch, s as u64 + 1)?;
                let z = self.embed_all(params, &views)?;
                let clearance = triplet_boundary_distance(&z[..views.batch_size()], &views.labels, &self.loss)?;
                if clearance >= cfg.boundary {
                    chosen = Some((views, clearance));
                    break 'search;
                }
                if attempts >= cfg.max_batch_tries {
                    break 'search;
                }
            }
        }
        let Some((views, clearance)) = chosen else {
            return Err(Error::arg(format!(
                "no batch within {attempts} attempts is {} away from a loss boundary",
                cfg.boundary
            )));
        };
        let (_, mut analytic) = self.gradients(params, &views)?;
        if let Some(name) = &cfg.negate_tensor {
            let t = analytic
                .tensor_mut(name)
                .ok_or_else(|| Error::arg(format!("unknown tensor {name}")))?;
            t.data.iter_mut().for_each(|g| *g = -*g);
        }
        let mut report = self.finite_difference(params, &views, &analytic, cfg)?;
        report.batch_attempts = attempts;
        report.boundary_clearance = clearance;
        Ok(report)
    }

    fn finite_difference(
        &self,
        params: &ModelParams,
        views: &Views,
        analytic: &ModelParams,
        cfg: &GradCheckConfig,
    ) -> Result<GradCheckReport> {
        let inputs: Vec<&LogMelSpectrogram> = views.all().collect();
        let traces = self
            .map
            .map(inputs.clone(), |x| forward(x, params))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let b = views.batch_size();
        let loss_cfg = self.loss;

        // loss and piecewise regime after perturbing a tensor of `stage`
        let evaluate = |p: &ModelParams, stage: Option<Stage>| -> Result<(f64, Regime)> {
            let heads = self.map.map((0..inputs.len()).collect(), |i| match stage {
                None => forward(inputs[i], p).map(|t| t.head),
                Some(s) => Ok(resume(p, s, traces[i].stage_input(s), traces[i].t_out)),
            });
            let heads = heads.into_iter().collect::<Result<Vec<_>>>()?;
            let z: Vec<Vec<f64>> = heads.iter().map(|h| h.z.clone()).collect();
            let loss = joint_loss(&z[..b], &z[b..2 * b], &z[2 * b..], &views.labels, &loss_cfg)?;
            let mined = mine_batch_hard(&z[..b], &views.labels)?;
            let hinges = crate::losses::triplet_hinges(&z[..b], &views.labels, &loss_cfg)?
                .into_iter()
                .map(|h| h.map(|h| h > 0.0))
                .collect();
            let relu = heads.iter().map(|h| h.hidden.iter().map(|&v| v > 0.0).collect()).collect();
            Ok((
                loss.total,
                Regime {
                    mined: mined.choices,
                    hinges,
                    relu,
                },
            ))
        };

        let (_, base_regime) = evaluate(params, Some(Stage::Head))?;
        let mut work = params.clone();
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let mut tensors = Vec::with_capacity(names.len());
        for (ti, name) in names.iter().enumerate() {
            if !is_trainable(name) {
                tensors.push(TensorCheck::skipped(name));
                continue;
            }
            let stage = stage_of(name);
            let len = params.tensor(name).expect("listed").len();
            let mut order: Vec<usize> = (0..len).collect();
            let budget = len.min(cfg.n_coords * 4);
            order.partial_shuffle(&mut rng::substream(cfg.seed, &[TAG_GRADCHECK, ti as u64]), budget);
            let mut check = TensorCheck {
                name: name.clone(),
                status: CheckStatus::Checked,
                n_coords: 0,
                n_resampled: 0,
                max_rel_error: 0.0,
                worst_index: None,
                worst_analytic: 0.0,
                worst_numeric: 0.0,
            };
            for &idx in order.iter().take(budget) {
                if check.n_coords == cfg.n_coords {
                    break;
                }
                let orig = params.tensor(name).expect("listed").data[idx];
                work.tensor_mut(name).expect("listed").data[idx] = orig + cfg.epsilon;
                let (up, r_up) = evaluate(&work, stage)?;
                work.tensor_mut(name).expect("listed").data[idx] = orig - cfg.epsilon;
                let (down, r_down) = evaluate(&work, stage)?;
                work.tensor_mut(name).expect("listed").data[idx] = orig;
                if r_up != base_regime || r_down != base_regime {
                    check.n_resampled += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * cfg.epsilon);
                let a = analytic.tensor(name).expect("listed").data[idx];
                let err = relative_error(a, numeric);
                check.n_coords += 1;
                if check.worst_index.is_none() || err > check.max_rel_error {
                    check.max_rel_error = err;
                    check.worst_index = Some(idx);
                    check.worst_analytic = a;
                    check.worst_numeric = numeric;
                }
            }
            tensors.push(check);
        }
        let max_rel_error = tensors
            .iter()
            .filter(|t| t.status == CheckStatus::Checked)
            .fold(0.0f64, |m, t| m.max(t.max_rel_error));
        let passed = tensors
            .iter()
            .filter(|t| t.status == CheckStatus::Checked)
            .all(|t| t.n_coords > 0 && t.max_rel_error <= cfg.tolerance);
        Ok(GradCheckReport {
            passed,
            tolerance: cfg.tolerance,
            epsilon: cfg.epsilon,
            max_rel_error,
            batch_attempts: 0,
            boundary_clearance: 0.0,
            tensors,
        })
    }
}

/// Which piece of the piecewise-smooth loss a parameter point lies on.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Regime {
    mined: Vec<Option<(usize, usize)>>,
    hinges: Vec<Option<bool>>,
    relu: Vec<Vec<bool>>,
}

/// First forward stage touched by a tensor; `None` means the conv stem.
fn stage_of(name: &str) -> Option<Stage> {
    if let Some(rest) = name.strip_prefix("encoder.layers.") {
        let i = rest.split('.').next().and_then(|s| s.parse().ok()).expect("layer index");
        Some(Stage::Block(i))
    } else if name.starts_with("encoder.layer_norm") {
        Some(Stage::FinalNorm)
    } else if name.starts_with("projection.") {
        Some(Stage::Head)
    } else {
        None
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients
/// from turning round-off into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub n_coords: usize,
    pub tolerance: f64,
    pub epsilon: f64,
    /// Minimum distance from hinge and mining boundaries.
    pub boundary: f64,
    pub seed: u64,
    pub max_batch_tries: usize,
    /// Fault injection: negate this tensor's analytic gradient.
    pub negate_tensor: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            n_coords: 20,
            tolerance: 1e-4,
            epsilon: 1e-5,
            boundary: 1e-3,
            seed: 0,
            max_batch_tries: 50,
            negate_tensor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Checked,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub status: CheckStatus,
    pub n_coords: usize,
    pub n_resampled: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl TensorCheck {
    fn skipped(name: &str) -> Self {
        TensorCheck {
            name: name.into(),
            status: CheckStatus::Skipped,
            n_coords: 0,
            n_resampled: 0,
            max_rel_error: 0.0,
            worst_index: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        }
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.status == CheckStatus::Skipped || (self.n_coords > 0 && self.max_rel_error <= tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub batch_attempts: usize,
    pub boundary_clearance: f64,
    pub tensors: Vec<TensorCheck>,
}
