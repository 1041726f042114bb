//! Synthetic-population harness: accuracy, α ablation, linkability and
//! revocability.

mod ablation;
mod linkability;
mod population;
mod revocability;
mod roc;

pub use ablation::{alpha_ablation, AblationRow, ABLATION_ALPHAS};
pub use linkability::{sswl, sswl_from_scores, Histogram, LinkProtocol, LinkabilityReport, DEFAULT_BINS, MIN_PAIRS};
pub use population::{generate_population, template_angle, LabeledTemplate, Population, SyntheticPopulation};
pub use revocability::{
    revocability_check, revocability_study, RevocabilityCheck, RevocabilityStudy, RevocabilityTrial,
};
pub use roc::{accuracy_sweep, default_thresholds, unprotected_scores, AccuracyReport, Eer, RocPoint, ScoreSet};

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::matching::EnrollmentRecord;
use crate::protection::{protect, ProtectionParams};
use crate::seed::{derive_seed, rng_from};
use crate::template::GroupWeights;

/// Enrolls every sample of the population under its own key.
///
/// Keys and masks depend only on `seed` and the sample index, so the same
/// seed gives the same keys for every `α`.
pub fn enroll_population(pop: &Population, params: &ProtectionParams, seed: u64) -> Result<Vec<EnrollmentRecord>> {
    let weights = GroupWeights::uniform(params.layout.m());
    pop.samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (protected, key) = protect(&s.template, params, &weights, derive_seed(seed, i as u64))?;
            Ok(EnrollmentRecord {
                identity_label: s.label.clone(),
                protected,
                key,
            })
        })
        .collect()
}

/// Index pairs into `Population::samples`.
pub(crate) type Pairs = Vec<(usize, usize)>;

/// Ordered pairs `(enrolled, query)`: every genuine pair, and
/// `impostor_pairs` impostor pairs drawn with replacement.
pub(crate) fn comparison_pairs(pop: &Population, impostor_pairs: usize, seed: u64) -> (Pairs, Pairs) {
    let n = pop.samples.len();
    let mut genuine = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && pop.samples[i].identity == pop.samples[j].identity {
                genuine.push((i, j));
            }
        }
    }
    let mut rng = rng_from(seed);
    let mut impostor = Vec::with_capacity(impostor_pairs);
    while impostor.len() < impostor_pairs {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if pop.samples[i].identity != pop.samples[j].identity {
            impostor.push((i, j));
        }
    }
    (genuine, impostor)
}
