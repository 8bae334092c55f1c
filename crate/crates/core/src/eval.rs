//! Cosine scoring of verification trials and the threshold metrics.
//!
//! Decision rule: a trial is accepted iff `score >= t`. Thresholds are swept
//! over the distinct observed scores.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::corpus::TrialList;
use crate::error::{Error, Result};
use crate::model::EmbeddingVector;
use crate::par::BatchMap;

/// Norms below this make the cosine undefined; such pairs score 0.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = a.iter().map(|v| v * v).sum();
    let sb: f64 = b.iter().map(|v| v * v).sum();
    if sa.sqrt() < COSINE_NORM_FLOOR || sb.sqrt() < COSINE_NORM_FLOOR {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // sqrt(sa·sb) rather than |a|·|b| so that cos(z, z) is exactly 1
    (dot / (sa * sb).sqrt()).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(cosine(a, b))
}

/// Parallel label/score vectors; label 1 marks a same-speaker trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrials {
    labels: Vec<u8>,
    scores: Vec<f64>,
}

impl ScoredTrials {
    pub fn new(labels: Vec<u8>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::arg("labels and scores differ in length"));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::arg(format!("label {l} is not 0 or 1")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::arg("non-finite score"));
        }
        Ok(ScoredTrials { labels, scores })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.len() - self.n_target()
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (nt, nn) = (self.n_target(), self.n_nontarget());
        if nt == 0 || nn == 0 {
            return Err(Error::arg(format!(
                "need at least one target and one nontarget trial, got {nt} and {nn}"
            )));
        }
        Ok((nt, nn))
    }

    /// `(score, label)` pairs sorted ascending by score.
    fn sorted(&self) -> Vec<(f64, u8)> {
        let mut v: Vec<(f64, u8)> = self.scores.iter().copied().zip(self.labels.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

/// Embeds every distinct utterance once, then scores each trial by cosine.
///
/// Embedding failures are reported with the offending key.
pub fn score_trials<K, F, M>(trials: &TrialList<K>, embedder: F, map: &M) -> Result<ScoredTrials>
where
    K: Ord + Clone + Debug + Send + Sync,
    F: Fn(&K) -> Result<EmbeddingVector> + Sync + Send,
    M: BatchMap,
{
    let mut keys: Vec<K> = trials.trials.iter().flat_map(|t| [t.a.clone(), t.b.clone()]).collect();
    keys.sort();
    keys.dedup();
    let embedded = map.map(keys.clone(), |k| {
        embedder(&k).map_err(|e| Error::arg(format!("cannot embed utterance {k:?}: {e}")))
    });
    let mut cache = BTreeMap::new();
    for (k, e) in keys.into_iter().zip(embedded) {
        cache.insert(k, e?);
    }
    let mut labels = Vec::with_capacity(trials.trials.len());
    let mut scores = Vec::with_capacity(trials.trials.len());
    for t in &trials.trials {
        scores.push(cosine_similarity(cache[&t.a].as_slice(), cache[&t.b].as_slice())?);
        labels.push(t.label());
    }
    ScoredTrials::new(labels, scores)
}

/// Confusion counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn fpr(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn) as f64
    }

    pub fn fnr(&self) -> f64 {
        self.fn_ as f64 / (self.fn_ + self.tp) as f64
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / (self.fn_ + self.tp) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tpr: f64,
}

fn operating_points(scored: &ScoredTrials) -> Result<Vec<(f64, Confusion)>> {
    let (nt, nn) = scored.require_both_classes()?;
    let sorted = scored.sorted();
    let mut out = Vec::new();
    // trials strictly below the current threshold are rejected
    let (mut t_below, mut n_below) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        out.push((
            t,
            Confusion {
                tp: nt - t_below,
                fp: nn - n_below,
                tn: n_below,
                fn_: t_below,
            },
        ));
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 == 1 {
                t_below += 1;
            } else {
                n_below += 1;
            }
            i += 1;
        }
    }
    Ok(out)
}

/// ROC operating points, one per distinct score, ascending threshold.
pub fn roc(scored: &ScoredTrials) -> Result<Vec<RocPoint>> {
    Ok(operating_points(scored)?
        .into_iter()
        .map(|(threshold, c)| RocPoint {
            threshold,
            fpr: c.fpr(),
            fnr: c.fnr(),
            tpr: c.tpr(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
    pub counts: Confusion,
}

/// EER as the mean of FPR and FNR at the threshold minimizing their gap
/// (lowest such threshold).
pub fn compute_eer(scored: &ScoredTrials) -> Result<EerPoint> {
    // |FPR − FNR| scaled by n_target · n_nontarget, so equal gaps compare equal
    let mut best: Option<(u128, f64, Confusion)> = None;
    for (t, c) in operating_points(scored)? {
        let pos = (c.fp as u128) * (c.tp + c.fn_) as u128;
        let neg = (c.fn_ as u128) * (c.fp + c.tn) as u128;
        let gap = pos.abs_diff(neg);
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, t, c));
        }
    }
    let (_, threshold, counts) = best.expect("at least one operating point");
    Ok(EerPoint {
        eer: (counts.fpr() + counts.fnr()) / 2.0,
        threshold,
        counts,
    })
}

/// Mann–Whitney AUC with ties counted one half.
pub fn compute_auc(scored: &ScoredTrials) -> Result<f64> {
    let (nt, nn) = scored.require_both_classes()?;
    let sorted = scored.sorted();
    // twice the statistic, kept integral
    let mut twice: u128 = 0;
    let mut n_below: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (mut gt, mut gn) = (0u128, 0u128);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 == 1 {
                gt += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        twice += 2 * gt * n_below + gt * gn;
        n_below += gn;
    }
    Ok(twice as f64 / (2 * nt as u128 * nn as u128) as f64)
}

/// Everything the evaluation command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub auc: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub counts: Confusion,
    /// `[threshold, fpr, fnr, tpr]` rows.
    pub roc: Vec<[f64; 4]>,
}

pub fn evaluate(scored: &ScoredTrials) -> Result<EvalReport> {
    let eer = compute_eer(scored)?;
    Ok(EvalReport {
        eer: eer.eer,
        eer_threshold: eer.threshold,
        auc: compute_auc(scored)?,
        n_target: scored.n_target(),
        n_nontarget: scored.n_nontarget(),
        counts: eer.counts,
        roc: roc(scored)?
            .into_iter()
            .map(|p| [p.threshold, p.fpr, p.fnr, p.tpr])
            .collect(),
    })
}
