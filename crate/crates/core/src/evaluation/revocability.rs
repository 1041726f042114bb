use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accuracy_sweep, Population};
use crate::error::{Error, Result};
use crate::matching::{verify, EnrollmentRecord};
use crate::protection::{protect, ProtectionParams};
use crate::seed::{derive_seed, rng_from};
use crate::stats::{self, KsResult};
use crate::template::{groupwise_similarity, GroupWeights, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocabilityCheck {
    pub old_record: EnrollmentRecord,
    pub new_record: EnrollmentRecord,
    /// Both enrollments produced the same record.
    pub identical: bool,
    /// Similarity between the old and the renewed protected values.
    pub cross_score: f64,
    pub genuine_score: f64,
    pub genuine_accepted: bool,
    pub cross_below_impostor_mean: bool,
}

fn enroll(t: &Template, params: &ProtectionParams, seed: u64) -> Result<EnrollmentRecord> {
    let (protected, key) = protect(t, params, &GroupWeights::uniform(params.layout.m()), seed)?;
    Ok(EnrollmentRecord {
        identity_label: String::new(),
        protected,
        key,
    })
}

/// Enrolls `t` under `seeds.0`, re-enrolls it under `seeds.1`, then checks
/// that `query` still verifies against the renewed record and that the
/// old protected values look like an impostor to it.
pub fn revocability_check(
    t: &Template,
    query: &Template,
    params: &ProtectionParams,
    seeds: (u64, u64),
    threshold: f64,
    impostor_mean: f64,
) -> Result<RevocabilityCheck> {
    let old_record = enroll(t, params, seeds.0)?;
    let new_record = enroll(t, params, seeds.1)?;
    let weights = old_record.protected.weights();
    let cross_score = groupwise_similarity(
        old_record.protected.template(),
        new_record.protected.template(),
        weights,
    )?;
    let genuine = verify(query, &new_record, threshold, params)?;
    Ok(RevocabilityCheck {
        identical: old_record == new_record,
        cross_score,
        genuine_score: genuine.score,
        genuine_accepted: genuine.accepted,
        cross_below_impostor_mean: cross_score < impostor_mean,
        old_record,
        new_record,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevocabilityTrial {
    pub trial: usize,
    pub cross_score: f64,
    pub impostor_score: f64,
    pub genuine_score: f64,
    pub genuine_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocabilityStudy {
    pub trials: Vec<RevocabilityTrial>,
    /// Cross-key scores against protected impostor scores.
    pub ks: KsResult,
    pub eer_threshold: f64,
    pub genuine_acceptance: f64,
    pub cross_mean: f64,
    pub impostor_mean: f64,
}

/// Runs `templates` revocation trials on random samples of the population.
///
/// Each trial re-enrolls a sample under a second key and records the
/// old-versus-new similarity, a protected impostor similarity (the same
/// sample against a different identity, each under its own key) and a
/// genuine query against the renewed record. Acceptance uses the EER
/// threshold of the protected system on this population.
pub fn revocability_study(
    pop: &Population,
    params: &ProtectionParams,
    templates: usize,
    impostor_pairs: usize,
    seed: u64,
) -> Result<RevocabilityStudy> {
    if templates == 0 {
        return Err(Error::InvalidArgument("at least one template is required".into()));
    }
    if pop.config.samples_per_identity < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 samples per identity are required".into(),
        ));
    }
    let eer_threshold = accuracy_sweep(pop, params, &[], impostor_pairs, derive_seed(seed, 0))?
        .eer
        .threshold;
    let per_id = pop.config.samples_per_identity;
    let ids = pop.config.identities;
    let mut rng = rng_from(derive_seed(seed, 1));
    let picks: Vec<(usize, usize, usize)> = (0..templates)
        .map(|_| {
            let id = rng.random_range(0..ids);
            let a = rng.random_range(0..per_id);
            let b = (a + 1 + rng.random_range(0..per_id - 1)) % per_id;
            let other = (id + 1 + rng.random_range(0..ids - 1)) % ids;
            (
                id * per_id + a,
                id * per_id + b,
                other * per_id + rng.random_range(0..per_id),
            )
        })
        .collect();
    let trials = picks
        .par_iter()
        .enumerate()
        .map(|(n, &(s, q, imp))| {
            let base = derive_seed(derive_seed(seed, 2), n as u64);
            let t = &pop.samples[s].template;
            let check = revocability_check(
                t,
                &pop.samples[q].template,
                params,
                (derive_seed(base, 0), derive_seed(base, 1)),
                eer_threshold,
                f64::NAN,
            )?;
            let other = enroll(&pop.samples[imp].template, params, derive_seed(base, 2))?;
            let impostor_score = groupwise_similarity(
                check.old_record.protected.template(),
                other.protected.template(),
                other.protected.weights(),
            )?;
            Ok(RevocabilityTrial {
                trial: n,
                cross_score: check.cross_score,
                impostor_score,
                genuine_score: check.genuine_score,
                genuine_accepted: check.genuine_accepted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cross: Vec<f64> = trials.iter().map(|t| t.cross_score).collect();
    let impostor: Vec<f64> = trials.iter().map(|t| t.impostor_score).collect();
    let ks = stats::ks_two_sample(&cross, &impostor).expect("non-empty samples");
    let accepted = trials.iter().filter(|t| t.genuine_accepted).count();
    Ok(RevocabilityStudy {
        ks,
        eer_threshold,
        genuine_acceptance: accepted as f64 / templates as f64,
        cross_mean: stats::mean(&cross).unwrap_or(f64::NAN),
        impostor_mean: stats::mean(&impostor).unwrap_or(f64::NAN),
        trials,
    })
}
