use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTION: usize = 200;
const MIN_GAIN: f64 = 0.01;
/// Largest N accepted by the exact O(N²) method.
pub const MAX_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub output_dim: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            output_dim: 2,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.output_dim != 2 {
            return Err(Error::Config(format!("t-SNE output dimension must be 2, got {}", self.output_dim)));
        }
        if n < 2 || n > MAX_POINTS {
            return Err(Error::Config(format!("t-SNE needs 2..={MAX_POINTS} points, got {n}")));
        }
        if !(self.perplexity >= 1.0 && self.perplexity < n as f64 / 3.0) {
            return Err(Error::Config(format!(
                "perplexity {} is infeasible for {n} points (need 1 <= perplexity < N/3)",
                self.perplexity
            )));
        }
        if !(self.learning_rate > 0.0 && self.exaggeration >= 1.0) {
            return Err(Error::Config("learning rate must be positive and exaggeration >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional probabilities for one row of squared distances (self
/// excluded), found by bisection on the precision β = 1/(2σ²) until
/// 2^H is within 1e-5 of `target`. Returns (σ, probabilities).
pub fn perplexity_calibrate(sq_distances: &[f64], target: f64, row: usize) -> Result<(f64, Vec<f64>)> {
    let n = sq_distances.len();
    if n == 0 || !(target >= 1.0 && target <= n as f64) {
        return Err(Error::Calibration {
            row,
            message: format!("perplexity {target} is unreachable with {n} neighbours"),
        });
    }
    let dmin = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = sq_distances.iter().map(|d| d - dmin).collect();
    let log_target = target.ln();
    let mut probs = vec![0.0; n];
    let eval = |beta: f64, probs: &mut [f64]| -> f64 {
        let mut z = 0.0;
        for (p, d) in probs.iter_mut().zip(&shifted) {
            *p = (-beta * d).exp();
            z += *p;
        }
        let mut weighted = 0.0;
        for (p, d) in probs.iter_mut().zip(&shifted) {
            *p /= z;
            weighted += *p * d;
        }
        // entropy in nats
        z.ln() + beta * weighted
    };

    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut beta = 1.0;
    for _ in 0..MAX_BISECTION {
        let h = eval(beta, &mut probs);
        let perp = h.exp();
        if (perp - target).abs() <= PERPLEXITY_TOL {
            return Ok(((0.5 / beta).sqrt(), probs));
        }
        if h > log_target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    Err(Error::Calibration {
        row,
        message: format!("perplexity bisection did not reach {target} within {MAX_BISECTION} iterations"),
    })
}

fn squared_distances(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
    let gram = x * x.transpose();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0);
            }
        }
    }
    d
}

/// Symmetrized joint probabilities `p_ij = (p_j|i + p_i|j) / 2N`, row-major N×N.
pub fn joint_probabilities(x: &DMatrix<f64>, perplexity: f64) -> Result<Vec<f64>> {
    let n = x.nrows();
    let d = squared_distances(x);
    let mut cond = vec![0.0; n * n];
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| d[i * n + j]));
        let (_, p) = perplexity_calibrate(&row, perplexity, i)?;
        let mut it = p.into_iter();
        for j in (0..n).filter(|&j| j != i) {
            cond[i * n + j] = it.next().expect("one probability per neighbour");
        }
    }
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// One `[x, y]` per input row.
    pub embedding: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))` with the unexaggerated P.
    pub kl_log: Vec<(usize, f64)>,
    exaggeration_iters: usize,
}

impl TsneResult {
    /// First logged KL after early exaggeration has ended.
    pub fn first_post_exaggeration_kl(&self) -> Option<f64> {
        self.kl_log
            .iter()
            .find(|(it, _)| *it > self.exaggeration_iters)
            .map(|&(_, kl)| kl)
    }

    pub fn final_kl(&self) -> Option<f64> {
        self.kl_log.last().map(|&(_, kl)| kl)
    }
}

fn kl_divergence(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Exact t-SNE with early exaggeration, momentum and per-coordinate gains.
pub fn tsne_embed(f: &FeatureSet, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = f.len();
    cfg.validate(n)?;
    let p = joint_probabilities(f.matrix(), cfg.perplexity)?;

    let mut rng = stream(cfg.seed, Stream::Tsne);
    let init = Normal::new(0.0, 1e-4).expect("positive std");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [init.sample(&mut rng), init.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_log = Vec::new();

    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };

        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    num[i * n + j] = 0.0;
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                z += v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let nij = num[i * n + j];
                let m = (exag * p[i * n + j] - nij / z) * nij;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(MIN_GAIN);
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let (mx, my) = y.iter().fold((0.0, 0.0), |(a, b), v| (a + v[0], b + v[1]));
        for v in &mut y {
            v[0] -= mx / n as f64;
            v[1] -= my / n as f64;
        }

        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations {
            // KL of the positions just produced
            let mut z = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let dx = y[i][0] - y[j][0];
                        let dy = y[i][1] - y[j][1];
                        num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                        z += num[i * n + j];
                    }
                }
            }
            let kl = kl_divergence(&p, &num, z);
            log::debug!("t-SNE iteration {}: KL {kl:.6}", it + 1);
            kl_log.push((it + 1, kl));
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: cfg.iterations as u64,
            what: "t-SNE embedding".into(),
        });
    }
    Ok(TsneResult {
        embedding: y,
        kl_log,
        exaggeration_iters: cfg.exaggeration_iters,
    })
}

/// Embedding CSV with columns `id,label,x,y`.
pub fn write_embedding_csv(path: &Path, ids: &[String], labels: &[String], embedding: &[[f64; 2]]) -> Result<()> {
    if ids.len() != embedding.len() || labels.len() != embedding.len() {
        return Err(Error::Data(format!(
            "{} ids and {} labels for {} embedded points",
            ids.len(),
            labels.len(),
            embedding.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "label", "x", "y"])?;
    for ((id, label), p) in ids.iter().zip(labels).zip(embedding) {
        w.write_record([id.clone(), label.clone(), format!("{:?}", p[0]), format!("{:?}", p[1])])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
