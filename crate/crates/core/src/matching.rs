//! Client-side matching against shared `{protected template, key}` records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protection::{protect_query, KeyTemplate, ProtectedTemplate, ProtectionParams};
use crate::template::{groupwise_similarity, Template};

/// Score reported when verification fails on an error path.
pub const FAILURE_SCORE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub identity_label: String,
    pub protected: ProtectedTemplate,
    pub key: KeyTemplate,
}

/// Why a comparison was rejected without a meaningful score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFailure {
    DegenerateAngle { group: usize },
}

impl std::fmt::Display for MatchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatchFailure::DegenerateAngle { group } => {
                write!(f, "degenerate angle between query and key in group {group}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub identity_label: String,
    pub score: f64,
    pub accepted: bool,
    pub threshold: f64,
    /// Set when the comparison failed closed.
    pub failure: Option<MatchFailure>,
}

/// Compares a query against one record by transforming it with the
/// record's key and mask.
///
/// A degenerate query/key angle fails closed: the result carries
/// [`FAILURE_SCORE`], `accepted = false` and the failure reason.
pub fn verify(
    t_q: &Template,
    rec: &EnrollmentRecord,
    threshold: f64,
    params: &ProtectionParams,
) -> Result<MatchResult> {
    if rec.protected.params_fingerprint() != params.fingerprint() {
        return Err(Error::ParamsMismatch);
    }
    t_q.layout().check_same(&rec.protected.layout())?;
    let weights = rec.protected.weights();
    match protect_query(t_q, &rec.key, rec.protected.mask(), weights, params) {
        Ok(q) => {
            let score = groupwise_similarity(q.template(), rec.protected.template(), weights)?;
            Ok(MatchResult {
                identity_label: rec.identity_label.clone(),
                score,
                accepted: score >= threshold,
                threshold,
                failure: None,
            })
        }
        Err(Error::DegenerateAngle { group }) => Ok(MatchResult {
            identity_label: rec.identity_label.clone(),
            score: FAILURE_SCORE,
            accepted: false,
            threshold,
            failure: Some(MatchFailure::DegenerateAngle { group }),
        }),
        Err(e) => Err(e),
    }
}

/// Verifies the query against every record and ranks by descending score.
/// Equal scores keep enrollment order.
pub fn identify(
    t_q: &Template,
    store: &[EnrollmentRecord],
    threshold: f64,
    params: &ProtectionParams,
) -> Result<Vec<MatchResult>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut results = store
        .par_iter()
        .map(|rec| verify(t_q, rec, threshold, params))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(results)
}
