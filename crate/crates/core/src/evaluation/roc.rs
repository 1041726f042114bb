use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{comparison_pairs, enroll_population, Population};
use crate::error::{Error, Result};
use crate::matching::verify;
use crate::protection::ProtectionParams;
use crate::stats;
use crate::template::{groupwise_similarity, GroupWeights};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    /// Accept when `score >= threshold`.
    pub threshold: f64,
}

/// Count of `sorted` entries `>= t`.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|x| *x < t)
}

impl ScoreSet {
    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::InsufficientPairs {
                required: 1,
                mated: self.genuine.len(),
                non_mated: self.impostor.len(),
            });
        }
        Ok(())
    }

    pub fn genuine_mean(&self) -> f64 {
        stats::mean(&self.genuine).unwrap_or(f64::NAN)
    }

    pub fn impostor_mean(&self) -> f64 {
        stats::mean(&self.impostor).unwrap_or(f64::NAN)
    }

    pub fn gap(&self) -> f64 {
        self.genuine_mean() - self.impostor_mean()
    }

    /// One point per threshold, in the given order.
    pub fn roc(&self, thresholds: &[f64]) -> Result<Vec<RocPoint>> {
        self.check()?;
        let g = stats::sorted(&self.genuine);
        let i = stats::sorted(&self.impostor);
        let total = (g.len() + i.len()) as f64;
        Ok(thresholds
            .iter()
            .map(|&t| {
                let tp = count_at_least(&g, t);
                let fp = count_at_least(&i, t);
                RocPoint {
                    threshold: t,
                    fpr: fp as f64 / i.len() as f64,
                    tpr: tp as f64 / g.len() as f64,
                    accuracy: (tp + i.len() - fp) as f64 / total,
                }
            })
            .collect())
    }

    /// Equal error rate over all thresholds at observed scores.
    ///
    /// Picks the threshold minimizing `|FAR − FRR|` (the lowest on ties)
    /// and reports the mean of the two rates there.
    pub fn eer(&self) -> Result<Eer> {
        self.check()?;
        let g = stats::sorted(&self.genuine);
        let i = stats::sorted(&self.impostor);
        let mut candidates: Vec<f64> = g.iter().chain(&i).copied().collect();
        candidates.push(f64::INFINITY);
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        let mut best: Option<(f64, Eer)> = None;
        for t in candidates {
            let far = count_at_least(&i, t) as f64 / i.len() as f64;
            let frr = 1.0 - count_at_least(&g, t) as f64 / g.len() as f64;
            let diff = (far - frr).abs();
            if best.as_ref().map_or(true, |(d, _)| diff < *d) {
                best = Some((
                    diff,
                    Eer {
                        eer: 0.5 * (far + frr),
                        threshold: t,
                    },
                ));
            }
        }
        Ok(best.expect("candidates are never empty").1)
    }
}

/// `n ≥ 2` evenly spaced thresholds over `[-1, 1]`.
pub fn default_thresholds(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub scores: ScoreSet,
    pub roc: Vec<RocPoint>,
    pub eer: Eer,
}

fn require_pairs(pop: &Population) -> Result<()> {
    if pop.config.samples_per_identity < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 samples per identity are required".into(),
        ));
    }
    Ok(())
}

/// Enrolls every sample and scores all genuine pairs plus
/// `impostor_pairs` sampled impostor pairs through [`verify`].
pub fn accuracy_sweep(
    pop: &Population,
    params: &ProtectionParams,
    thresholds: &[f64],
    impostor_pairs: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    require_pairs(pop)?;
    let records = enroll_population(pop, params, seed)?;
    let (genuine, impostor) = comparison_pairs(pop, impostor_pairs, seed);
    let score = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .map(|&(e, q)| Ok(verify(&pop.samples[q].template, &records[e], 0.0, params)?.score))
            .collect()
    };
    let scores = ScoreSet {
        genuine: score(&genuine)?,
        impostor: score(&impostor)?,
    };
    Ok(AccuracyReport {
        roc: scores.roc(thresholds)?,
        eer: scores.eer()?,
        scores,
    })
}

/// Baseline on raw templates over the same pairs as [`accuracy_sweep`].
pub fn unprotected_scores(pop: &Population, impostor_pairs: usize, seed: u64) -> Result<ScoreSet> {
    require_pairs(pop)?;
    let weights = GroupWeights::uniform(pop.layout().m());
    let (genuine, impostor) = comparison_pairs(pop, impostor_pairs, seed);
    let score = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .map(|&(e, q)| groupwise_similarity(&pop.samples[e].template, &pop.samples[q].template, &weights))
            .collect()
    };
    Ok(ScoreSet {
        genuine: score(&genuine)?,
        impostor: score(&impostor)?,
    })
}
