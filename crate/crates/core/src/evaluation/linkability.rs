use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Population;
use crate::error::{Error, Result};
use crate::protection::{protect, ProtectionParams};
use crate::seed::{derive_seed, rng_from};
use crate::template::{groupwise_similarity, GroupWeights, Template};

pub const DEFAULT_BINS: usize = 100;
/// Minimum number of mated and of non-mated pairs.
pub const MIN_PAIRS: usize = 500;

/// Score counts over equal-width bins covering `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_scores(scores: &[f64], bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        for s in scores {
            let pos = ((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64).floor() as usize;
            counts[pos.min(bins - 1)] += 1;
        }
        Self { counts }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(low, high)` edges of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = 2.0 / self.bins() as f64;
        (-1.0 + i as f64 * w, -1.0 + (i + 1) as f64 * w)
    }

    fn density(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|c| *c as f64 / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkabilityReport {
    pub d_sys: f64,
    pub mated: Histogram,
    pub nonmated: Histogram,
    /// `D(s)` per bin.
    pub local: Vec<f64>,
}

/// Linkability from score samples: with `LR = p(s|mated) / p(s|non-mated)`
/// and unit prior odds, `D(s) = max(0, 2·LR/(1+LR) − 1)` and
/// `d_sys = Σ D(s)·p(s|mated)`.
///
/// A bin seen only among mated scores has `D = 1`.
pub fn sswl_from_scores(mated: &[f64], nonmated: &[f64], bins: usize) -> Result<LinkabilityReport> {
    if mated.is_empty() || nonmated.is_empty() {
        return Err(Error::InsufficientPairs {
            required: 1,
            mated: mated.len(),
            non_mated: nonmated.len(),
        });
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let hm = Histogram::from_scores(mated, bins);
    let hn = Histogram::from_scores(nonmated, bins);
    let (pm, pn) = (hm.density(), hn.density());
    let local: Vec<f64> = pm
        .iter()
        .zip(&pn)
        .map(|(&x, &y)| {
            if x == 0.0 {
                0.0
            } else if y == 0.0 {
                1.0
            } else {
                let lr = x / y;
                (2.0 * lr / (1.0 + lr) - 1.0).max(0.0)
            }
        })
        .collect();
    let d_sys = local.iter().zip(&pm).map(|(d, p)| d * p).sum::<f64>().clamp(0.0, 1.0);
    Ok(LinkabilityReport {
        d_sys,
        mated: hm,
        nonmated: hn,
        local,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkProtocol {
    /// Raw templates compared directly.
    Unprotected,
    /// Each template of a pair protected under its own fresh key and mask.
    Protected,
}

impl std::str::FromStr for LinkProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unprotected" => Ok(Self::Unprotected),
            "protected" => Ok(Self::Protected),
            _ => Err(Error::InvalidArgument(format!("unknown protocol `{s}`"))),
        }
    }
}

/// Draws `pairs` mated pairs (same identity, different samples) and as
/// many non-mated pairs, scores them under `protocol` and histograms with
/// `bins` bins.
pub fn sswl(
    pop: &Population,
    params: &ProtectionParams,
    protocol: LinkProtocol,
    pairs: usize,
    bins: usize,
    seed: u64,
) -> Result<LinkabilityReport> {
    let mated_available = pop.config.samples_per_identity >= 2;
    if pairs < MIN_PAIRS || !mated_available {
        return Err(Error::InsufficientPairs {
            required: MIN_PAIRS,
            mated: if mated_available { pairs } else { 0 },
            non_mated: pairs,
        });
    }
    let per_id = pop.config.samples_per_identity;
    let ids = pop.config.identities;
    let mut rng = rng_from(derive_seed(seed, 0x6c69_6e6b));
    let mut mated_idx = Vec::with_capacity(pairs);
    let mut nonmated_idx = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let id = rng.random_range(0..ids);
        let a = rng.random_range(0..per_id);
        let b = (a + 1 + rng.random_range(0..per_id - 1)) % per_id;
        mated_idx.push((id * per_id + a, id * per_id + b));
        let other = (id + 1 + rng.random_range(0..ids - 1)) % ids;
        nonmated_idx.push((id * per_id + a, other * per_id + rng.random_range(0..per_id)));
    }
    let weights = GroupWeights::uniform(params.layout.m());
    let score = |pairs: &[(usize, usize)], stream: u64| -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .enumerate()
            .map(|(n, &(i, j))| {
                let (a, b) = (&pop.samples[i].template, &pop.samples[j].template);
                match protocol {
                    LinkProtocol::Unprotected => groupwise_similarity(a, b, &weights),
                    LinkProtocol::Protected => {
                        let base = derive_seed(derive_seed(seed, stream), n as u64);
                        let pa = protect_with(a, params, &weights, derive_seed(base, 0))?;
                        let pb = protect_with(b, params, &weights, derive_seed(base, 1))?;
                        groupwise_similarity(&pa, &pb, &weights)
                    }
                }
            })
            .collect()
    };
    let mated = score(&mated_idx, 1)?;
    let nonmated = score(&nonmated_idx, 2)?;
    sswl_from_scores(&mated, &nonmated, bins)
}

fn protect_with(t: &Template, params: &ProtectionParams, weights: &GroupWeights, seed: u64) -> Result<Template> {
    Ok(protect(t, params, weights, seed)?.0.template().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{generate_population, SyntheticPopulation};

    #[test]
    fn identical_distributions_link_nothing() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 / 500.0) - 1.0).collect();
        let r = sswl_from_scores(&s, &s, 100).unwrap();
        assert_eq!(r.d_sys, 0.0);
    }

    #[test]
    fn disjoint_distributions_link_fully() {
        let m = vec![0.9; 10];
        let n = vec![-0.2; 10];
        assert_eq!(sswl_from_scores(&m, &n, 100).unwrap().d_sys, 1.0);
    }

    #[test]
    fn hand_computed_local_linkability() {
        // one bin: p_m = 3/4, p_n = 1/4 → LR 3, D = 0.5; other bin: LR 1/3, D = 0
        let m = [0.5, 0.5, 0.5, -0.5];
        let n = [0.5, -0.5, -0.5, -0.5];
        let r = sswl_from_scores(&m, &n, 2).unwrap();
        assert_eq!(r.local, vec![0.0, 0.5]);
        assert!((r.d_sys - 0.375).abs() < 1e-12);
    }

    #[test]
    fn histogram_edges_and_clamping() {
        let h = Histogram::from_scores(&[-1.0, 1.0, 1.5, -3.0, 0.0], 4);
        assert_eq!(h.counts, vec![2, 0, 1, 2]);
        assert_eq!(h.edges(1), (-0.5, 0.0));
    }

    fn pop() -> Population {
        generate_population(&SyntheticPopulation {
            identities: 20,
            samples_per_identity: 4,
            ..SyntheticPopulation::default()
        })
        .unwrap()
    }

    #[test]
    fn protection_breaks_linkability() {
        let pop = pop();
        let params = ProtectionParams::default();
        let raw = sswl(&pop, &params, LinkProtocol::Unprotected, 1000, DEFAULT_BINS, 5).unwrap();
        let prot = sswl(&pop, &params, LinkProtocol::Protected, 1000, DEFAULT_BINS, 5).unwrap();
        assert!(raw.d_sys > 0.8, "{}", raw.d_sys);
        assert!(prot.d_sys < 0.1, "{}", prot.d_sys);
        assert!(raw.local.iter().chain(&prot.local).all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn bin_count_stability() {
        let pop = pop();
        let params = ProtectionParams::default();
        for protocol in [LinkProtocol::Unprotected, LinkProtocol::Protected] {
            let a = sswl(&pop, &params, protocol, 1000, 100, 8).unwrap().d_sys;
            let b = sswl(&pop, &params, protocol, 1000, 200, 8).unwrap().d_sys;
            assert!((a - b).abs() <= 0.02, "{protocol:?}: {a} vs {b}");
        }
    }

    #[test]
    fn requires_enough_pairs() {
        let pop = pop();
        assert!(matches!(
            sswl(&pop, &ProtectionParams::default(), LinkProtocol::Protected, 499, 100, 0),
            Err(Error::InsufficientPairs { .. })
        ));
    }

    #[test]
    fn symmetric_in_pair_order() {
        let pop = pop();
        let w = GroupWeights::uniform(49);
        let a = &pop.samples[0].template;
        let b = &pop.samples[1].template;
        let params = ProtectionParams::default();
        let pa = protect_with(a, &params, &w, 1).unwrap();
        let pb = protect_with(b, &params, &w, 2).unwrap();
        assert_eq!(
            groupwise_similarity(&pa, &pb, &w).unwrap(),
            groupwise_similarity(&pb, &pa, &w).unwrap()
        );
    }
}
