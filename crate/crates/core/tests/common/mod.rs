//! Brute-force reference implementations used as test oracles.
//!
//! Each one is written from the definitions, without sharing code or
//! summation order with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box–Muller.
pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| scale * gauss(r)).collect()).collect()
}

/// `n_labels` classes, each appearing `n / n_labels` times, shuffled.
pub fn balanced_labels(r: &mut ChaCha8Rng, n: usize, n_labels: u32) -> Vec<u32> {
    let mut l: Vec<u32> = (0..n as u32).map(|i| i % n_labels).collect();
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        l.swap(i, j);
    }
    l
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Exhaustive batch-hard choice per anchor: the farthest same-label row and
/// the nearest other-label row, lowest index on ties.
pub fn mine_oracle(z: &[Vec<f64>], labels: &[u32]) -> Vec<Option<(usize, usize)>> {
    let n = z.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = z[i].iter().zip(&z[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
    }
    (0..n)
        .map(|a| {
            let pos: Vec<usize> = (0..n).filter(|&j| j != a && labels[j] == labels[a]).collect();
            let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            let max_d = pos.iter().map(|&j| d[a][j]).fold(f64::NEG_INFINITY, f64::max);
            let min_d = neg.iter().map(|&j| d[a][j]).fold(f64::INFINITY, f64::min);
            let p = *pos.iter().find(|&&j| d[a][j] == max_d).unwrap();
            let q = *neg.iter().find(|&&j| d[a][j] == min_d).unwrap();
            Some((p, q))
        })
        .collect()
}

pub fn triplet_oracle(z: &[Vec<f64>], labels: &[u32], margin: f64) -> f64 {
    let mined = mine_oracle(z, labels);
    let hinges: Vec<f64> = mined
        .iter()
        .enumerate()
        .filter_map(|(a, c)| c.map(|(p, q)| (margin + euclid(&z[a], &z[p]) - euclid(&z[a], &z[q])).max(0.0)))
        .collect();
    if hinges.is_empty() {
        0.0
    } else {
        hinges.iter().sum::<f64>() / hinges.len() as f64
    }
}

pub fn cos_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// SimCLR NT-Xent from its dense similarity matrix.
pub fn ntxent_oracle(za: &[Vec<f64>], zb: &[Vec<f64>], tau: f64) -> f64 {
    let b = za.len();
    let rows: Vec<&Vec<f64>> = za.iter().chain(zb.iter()).collect();
    let n = rows.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            sim[i][k] = cos_oracle(rows[i], rows[k]) / tau;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let p = (i + b) % n;
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| sim[i][k].exp()).sum();
        total += -(sim[i][p].exp() / denom).ln();
    }
    total / n as f64
}

/// EER by scanning every distinct score as a threshold and counting from
/// scratch at each one.
pub fn eer_oracle(labels: &[u8], scores: &[f64]) -> (f64, f64) {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let nt = labels.iter().filter(|&&l| l == 1).count() as i128;
    let nn = labels.len() as i128 - nt;
    let mut best: Option<(i128, f64, f64)> = None;
    for &t in &ts {
        let mut fp = 0i128;
        let mut fneg = 0i128;
        for (l, s) in labels.iter().zip(scores) {
            if *l == 0 && *s >= t {
                fp += 1;
            }
            if *l == 1 && *s < t {
                fneg += 1;
            }
        }
        let (fpr, fnr) = (fp as f64 / nn as f64, fneg as f64 / nt as f64);
        // compared as fractions over the common denominator nn · nt
        let gap = (fp * nt - fneg * nn).abs();
        if best.is_none() || gap < best.unwrap().0 {
            best = Some((gap, t, (fpr + fnr) / 2.0));
        }
    }
    let (_, t, eer) = best.unwrap();
    (eer, t)
}

/// Pairwise AUC with ties counted one half.
pub fn auc_oracle(labels: &[u8], scores: &[f64]) -> f64 {
    let tgt: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l == 1).map(|(_, s)| *s).collect();
    let non: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l == 0).map(|(_, s)| *s).collect();
    let mut wins = 0.0;
    for a in &tgt {
        for b in &non {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (tgt.len() as f64 * non.len() as f64)
}

/// Neumaier-compensated sum.
pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}
