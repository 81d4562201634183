use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Midranks (1-based) of the pooled values plus the sizes of all tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

struct Ranked {
    mean_ranks: Vec<f64>,
    sizes: Vec<usize>,
    n: usize,
    /// Σ (t³ − t) over tie groups.
    tie_sum: f64,
    rank_sums: Vec<f64>,
}

fn rank_groups(groups: &[Vec<f64>]) -> Result<Ranked> {
    if groups.len() < 2 {
        return Err(Error::Data(format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("group {i} is empty")));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite observation".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let mut rank_sums = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for g in groups {
        rank_sums.push(ranks[offset..offset + g.len()].iter().sum::<f64>());
        offset += g.len();
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    Ok(Ranked {
        mean_ranks: rank_sums.iter().zip(&sizes).map(|(r, &n)| r / n as f64).collect(),
        n: pooled.len(),
        tie_sum: ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum(),
        rank_sums,
        sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

/// Tie-corrected Kruskal–Wallis H with a chi-square p-value on k−1 degrees
/// of freedom. When every observation is tied, H = 0 and p = 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    let r = rank_groups(groups)?;
    Ok(kw_from_ranks(&r))
}

fn kw_from_ranks(r: &Ranked) -> KruskalWallis {
    let n = r.n as f64;
    let df = r.sizes.len() - 1;
    let correction = 1.0 - r.tie_sum / (n.powi(3) - n);
    if correction <= 0.0 {
        return KruskalWallis { h: 0.0, p: 1.0, df };
    }
    let raw = 12.0 / (n * (n + 1.0))
        * r.rank_sums
            .iter()
            .zip(&r.sizes)
            .map(|(s, &ni)| s * s / ni as f64)
            .sum::<f64>()
        - 3.0 * (n + 1.0);
    let h = (raw / correction).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    KruskalWallis { h, p: chi.sf(h).clamp(0.0, 1.0), df }
}

/// Multiplicity adjustment for the pairwise p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
    Holm,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::None => "none",
            Correction::Bonferroni => "bonferroni",
            Correction::Holm => "holm",
        })
    }
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Correction::None),
            "bonferroni" => Ok(Correction::Bonferroni),
            "holm" => Ok(Correction::Holm),
            other => Err(Error::Config(format!("unknown correction '{other}' (none, bonferroni, holm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DunnResult {
    /// k×k two-sided p-values, symmetric, diagonal exactly 1.
    pub p: Vec<Vec<f64>>,
    /// k×k z statistics, `z[i][j] = (R̄i − R̄j) / se`.
    pub z: Vec<Vec<f64>>,
    pub kruskal: KruskalWallis,
    pub correction: Correction,
}

/// Dunn's pairwise comparisons of mean ranks with the tie-corrected
/// variance `(N(N+1)/12 − Σ(t³−t)/(12(N−1))) · (1/ni + 1/nj)`.
pub fn dunn_test(groups: &[Vec<f64>], correction: Correction) -> Result<DunnResult> {
    let r = rank_groups(groups)?;
    let k = groups.len();
    let n = r.n as f64;
    let base = n * (n + 1.0) / 12.0 - if r.n > 1 { r.tie_sum / (12.0 * (n - 1.0)) } else { 0.0 };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = vec![vec![0.0; k]; k];
    let mut p = vec![vec![1.0; k]; k];
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let var = base * (1.0 / r.sizes[i] as f64 + 1.0 / r.sizes[j] as f64);
            let diff = r.mean_ranks[i] - r.mean_ranks[j];
            let (zij, pij) = if var > 0.0 {
                let zij = diff / var.sqrt();
                (zij, (2.0 * normal.sf(zij.abs())).min(1.0))
            } else {
                (0.0, 1.0)
            };
            z[i][j] = zij;
            z[j][i] = -zij;
            pairs.push((i, j, pij));
        }
    }
    let adjusted = adjust(&pairs.iter().map(|t| t.2).collect::<Vec<_>>(), correction);
    for (&(i, j, _), q) in pairs.iter().zip(adjusted) {
        p[i][j] = q;
        p[j][i] = q;
    }
    Ok(DunnResult {
        p,
        z,
        kruskal: kw_from_ranks(&r),
        correction,
    })
}

/// Applies a multiplicity correction to a family of p-values.
pub fn adjust(p: &[f64], correction: Correction) -> Vec<f64> {
    let m = p.len() as f64;
    match correction {
        Correction::None => p.to_vec(),
        Correction::Bonferroni => p.iter().map(|v| (v * m).min(1.0)).collect(),
        Correction::Holm => {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            let mut out = vec![0.0; p.len()];
            let mut running: f64 = 0.0;
            for (rank, &idx) in order.iter().enumerate() {
                running = running.max(((m - rank as f64) * p[idx]).min(1.0));
                out[idx] = running;
            }
            out
        }
    }
}

impl DunnResult {
    /// Matrix CSV with eight-decimal p-values; a leading comment records the
    /// omnibus test and the correction.
    pub fn write_csv<W: Write>(&self, mut writer: W, labels: &[String]) -> Result<()> {
        if labels.len() != self.p.len() {
            return Err(Error::Data(format!("{} labels for {} groups", labels.len(), self.p.len())));
        }
        writeln!(
            writer,
            "# kruskal_wallis H={:.6} df={} p={:.8}; correction={}",
            self.kruskal.h, self.kruskal.df, self.kruskal.p, self.correction
        )
        .map_err(|e| Error::Data(format!("writing Dunn matrix: {e}")))?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in labels.iter().zip(&self.p) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.8}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing Dunn matrix: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[10.0, 20.0, 10.0, 30.0, 10.0]);
        assert_eq!(r, vec![2.0, 4.0, 2.0, 5.0, 2.0]);
        assert_eq!(t, vec![3]);
    }

    #[test]
    fn two_separated_groups_by_hand() {
        // ranks 1,2,3 and 4,5,6: H = 12/42 * (36/3 + 225/3) - 21 = 27/7
        let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((kw.h - 27.0 / 7.0).abs() < 1e-12);
        assert_eq!(kw.df, 1);
    }

    #[test]
    fn all_tied_is_null() {
        let kw = kruskal_wallis(&[vec![3.0; 4], vec![3.0; 5]]).unwrap();
        assert_eq!((kw.h, kw.p), (0.0, 1.0));
        let d = dunn_test(&[vec![3.0; 4], vec![3.0; 5]], Correction::Holm).unwrap();
        assert_eq!(d.p, vec![vec![1.0; 2]; 2]);
    }

    #[test]
    fn empty_group_rejected() {
        assert!(matches!(kruskal_wallis(&[vec![1.0], vec![]]), Err(Error::Data(_))));
        assert!(matches!(kruskal_wallis(&[vec![1.0]]), Err(Error::Data(_))));
    }

    #[test]
    fn holm_is_step_down_monotone() {
        let q = adjust(&[0.01, 0.04, 0.03, 0.5], Correction::Holm);
        for (a, b) in q.iter().zip([0.04, 0.09, 0.09, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
