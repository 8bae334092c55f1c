//! Batch-hard triplet loss, NT-Xent, and their weighted sum, each with an
//! analytic gradient with respect to the embeddings.
//!
//! Embedding batches are slices of equal-length rows. Mined indices are held
//! fixed when differentiating.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{cosine, COSINE_NORM_FLOOR};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub ssl_weight: f64,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            ssl_weight: 1.0,
            temperature: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.ssl_weight >= 0.0 && self.ssl_weight.is_finite()) {
            return Err(Error::config(format!("ssl_weight must be >= 0, got {}", self.ssl_weight)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

fn check_rows(z: &[Vec<f64>]) -> Result<usize> {
    let d = z.first().map_or(0, Vec::len);
    if z.iter().any(|r| r.len() != d) {
        return Err(Error::arg("embedding rows differ in dimension"));
    }
    Ok(d)
}

/// Squared Euclidean distances via `|a|² + |b|² − 2a·b`, clamped at zero,
/// with an exact zero diagonal.
pub fn pairwise_sq_euclidean(z: &[Vec<f64>]) -> Result<Tensor> {
    check_rows(z)?;
    let b = z.len();
    let sq: Vec<f64> = z.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut out = Tensor::zeros(&[b, b]);
    for i in 0..b {
        for j in i + 1..b {
            let dot: f64 = z[i].iter().zip(&z[j]).map(|(x, y)| x * y).sum();
            let d = (sq[i] + sq[j] - 2.0 * dot).max(0.0);
            out.data[i * b + j] = d;
            out.data[j * b + i] = d;
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Per-anchor hardest positive and hardest negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedTriplets {
    /// `Some((positive, negative))` for valid anchors, indexed by anchor.
    pub choices: Vec<Option<(usize, usize)>>,
}

impl MinedTriplets {
    /// `(anchor, positive, negative)` for every valid anchor.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.choices
            .iter()
            .enumerate()
            .filter_map(|(a, c)| c.map(|(p, n)| (a, p, n)))
    }

    pub fn n_valid(&self) -> usize {
        self.choices.iter().filter(|c| c.is_some()).count()
    }
}

/// Batch-hard mining on distances computed by direct subtraction.
/// Ties go to the lowest index.
pub fn mine_batch_hard(z: &[Vec<f64>], labels: &[u32]) -> Result<MinedTriplets> {
    check_rows(z)?;
    if labels.len() != z.len() {
        return Err(Error::arg(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.len()
        )));
    }
    let b = z.len();
    let choices = (0..b)
        .map(|a| {
            let mut pos: Option<(usize, f64)> = None;
            let mut neg: Option<(usize, f64)> = None;
            for j in 0..b {
                if j == a {
                    continue;
                }
                let d = sq_dist(&z[a], &z[j]);
                if labels[j] == labels[a] {
                    if pos.is_none_or(|(_, best)| d > best) {
                        pos = Some((j, d));
                    }
                } else if neg.is_none_or(|(_, best)| d < best) {
                    neg = Some((j, d));
                }
            }
            Some((pos?.0, neg?.0))
        })
        .collect();
    Ok(MinedTriplets { choices })
}

/// Mean hinge `max(0, m + d(a,p) − d(a,n))` over valid anchors; 0 if none.
pub fn triplet_loss(z: &[Vec<f64>], labels: &[u32], cfg: &LossConfig) -> Result<f64> {
    Ok(triplet_with_grad(z, labels, cfg)?.0)
}

/// Per-anchor hinge values; `None` for anchors without a positive or negative.
pub fn triplet_hinges(z: &[Vec<f64>], labels: &[u32], cfg: &LossConfig) -> Result<Vec<Option<f64>>> {
    let mined = mine_batch_hard(z, labels)?;
    Ok(mined
        .choices
        .iter()
        .enumerate()
        .map(|(a, c)| c.map(|(p, n)| (cfg.margin + dist(&z[a], &z[p]) - dist(&z[a], &z[n])).max(0.0)))
        .collect())
}

/// Loss, gradient per row, and the mined triplets.
pub fn triplet_with_grad(
    z: &[Vec<f64>],
    labels: &[u32],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>, MinedTriplets)> {
    let mined = mine_batch_hard(z, labels)?;
    let d = check_rows(z)?;
    let mut grad = vec![vec![0.0; d]; z.len()];
    let n = mined.n_valid();
    if n == 0 {
        return Ok((0.0, grad, mined));
    }
    let w = 1.0 / n as f64;
    let mut total = 0.0;
    for (a, p, q) in mined.triplets() {
        let (dap, dan) = (dist(&z[a], &z[p]), dist(&z[a], &z[q]));
        let h = cfg.margin + dap - dan;
        if h <= 0.0 {
            continue;
        }
        total += h;
        // ∂d(a,x)/∂z_a = (z_a − z_x)/d, zero at coincidence
        for (other, dd, sign) in [(p, dap, 1.0), (q, dan, -1.0)] {
            if dd == 0.0 {
                continue;
            }
            for k in 0..d {
                let g = sign * w * (z[a][k] - z[other][k]) / dd;
                grad[a][k] += g;
                grad[other][k] -= g;
            }
        }
    }
    Ok((total * w, grad, mined))
}

/// Smallest distance of the batch from a point where the triplet loss is not
/// differentiable: hinge slack, or the gap between the chosen and the
/// runner-up candidate in mining. `f64::INFINITY` when nothing applies.
pub fn triplet_boundary_distance(z: &[Vec<f64>], labels: &[u32], cfg: &LossConfig) -> Result<f64> {
    let mined = mine_batch_hard(z, labels)?;
    let mut slack = f64::INFINITY;
    for (a, p, q) in mined.triplets() {
        let (dap, dan) = (dist(&z[a], &z[p]), dist(&z[a], &z[q]));
        slack = slack.min((cfg.margin + dap - dan).abs());
        for j in 0..z.len() {
            if j == a || j == p || j == q {
                continue;
            }
            let dj = dist(&z[a], &z[j]);
            let gap = if labels[j] == labels[a] { dap - dj } else { dj - dan };
            slack = slack.min(gap);
        }
    }
    Ok(slack)
}

fn normalize(z: &[f64]) -> (Vec<f64>, f64) {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < COSINE_NORM_FLOOR {
        (vec![0.0; z.len()], n)
    } else {
        (z.iter().map(|v| v / n).collect(), n)
    }
}

fn partner(i: usize, b: usize) -> usize {
    if i < b {
        i + b
    } else {
        i - b
    }
}

/// SimCLR NT-Xent over the `2B` rows of `[za; zb]`, averaged over rows.
pub fn nt_xent(za: &[Vec<f64>], zb: &[Vec<f64>], temperature: f64) -> Result<f64> {
    Ok(nt_xent_with_grad(za, zb, temperature)?.0)
}

/// Loss with gradients with respect to `za` and `zb`.
#[allow(clippy::type_complexity)]
pub fn nt_xent_with_grad(
    za: &[Vec<f64>],
    zb: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = za.len();
    if b < 2 {
        return Err(Error::arg(format!("NT-Xent needs a batch of at least 2, got {b}")));
    }
    if zb.len() != b {
        return Err(Error::arg("views differ in batch size"));
    }
    let d = check_rows(za)?;
    if check_rows(zb)? != d {
        return Err(Error::arg("views differ in embedding dimension"));
    }
    if !(temperature > 0.0) {
        return Err(Error::arg("temperature must be positive"));
    }
    let n = 2 * b;
    let rows: Vec<&Vec<f64>> = za.iter().chain(zb).collect();
    let normed: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| normalize(r)).collect();
    let inv_t = 1.0 / temperature;

    // g[i][k] = ∂L/∂s_ik with s_ik = cos(i,k)/τ
    let mut g = vec![vec![0.0; n]; n];
    let mut loss = 0.0;
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|k| if k == i { f64::NEG_INFINITY } else { cosine(rows[i], rows[k]) * inv_t })
            .collect();
        let max = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = s.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let p = partner(i, b);
        loss += lse - s[p];
        for k in 0..n {
            if k != i {
                g[i][k] = (s[k] - lse).exp() / n as f64;
            }
        }
        g[i][p] -= 1.0 / n as f64;
    }
    loss /= n as f64;

    let mut grads = vec![vec![0.0; d]; n];
    for i in 0..n {
        let (ui, norm_i) = (&normed[i].0, normed[i].1);
        if norm_i < COSINE_NORM_FLOOR {
            continue;
        }
        // ∂L/∂u_i = Σ_k (g_ik + g_ki) u_k / τ
        let mut du = vec![0.0; d];
        for k in 0..n {
            if k == i {
                continue;
            }
            let c = (g[i][k] + g[k][i]) * inv_t;
            for (o, u) in du.iter_mut().zip(&normed[k].0) {
                *o += c * u;
            }
        }
        let proj: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
        for ((o, dv), u) in grads[i].iter_mut().zip(&du).zip(ui) {
            *o = (dv - u * proj) / norm_i;
        }
    }
    let gb = grads.split_off(b);
    Ok((loss, grads, gb))
}

/// Loss values reported per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub total: f64,
    pub triplet: f64,
    pub ntxent: f64,
}

/// Gradients of the joint loss for the clean, noise and stretch views.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGrad {
    pub clean: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub stretch: Vec<Vec<f64>>,
}

/// `triplet(Z) + λ · ½[NT(Z, Zn) + NT(Z, Zt)]`.
pub fn joint_loss(z: &[Vec<f64>], zn: &[Vec<f64>], zt: &[Vec<f64>], labels: &[u32], cfg: &LossConfig) -> Result<JointLoss> {
    Ok(joint_with_grad(z, zn, zt, labels, cfg)?.0)
}

pub fn joint_with_grad(
    z: &[Vec<f64>],
    zn: &[Vec<f64>],
    zt: &[Vec<f64>],
    labels: &[u32],
    cfg: &LossConfig,
) -> Result<(JointLoss, JointGrad)> {
    cfg.validate()?;
    let (triplet, mut clean, _) = triplet_with_grad(z, labels, cfg)?;
    let (nt_n, gz_n, mut noise) = nt_xent_with_grad(z, zn, cfg.temperature)?;
    let (nt_t, gz_t, mut stretch) = nt_xent_with_grad(z, zt, cfg.temperature)?;
    let ntxent = 0.5 * (nt_n + nt_t);
    let w = 0.5 * cfg.ssl_weight;
    for (row, (a, b)) in clean.iter_mut().zip(gz_n.iter().zip(&gz_t)) {
        for ((o, x), y) in row.iter_mut().zip(a).zip(b) {
            *o += w * (x + y);
        }
    }
    noise.iter_mut().chain(stretch.iter_mut()).flatten().for_each(|v| *v *= w);
    Ok((
        JointLoss {
            total: triplet + cfg.ssl_weight * ntxent,
            triplet,
            ntxent,
        },
        JointGrad { clean, noise, stretch },
    ))
}
